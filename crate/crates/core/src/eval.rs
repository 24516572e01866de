//! Ground-truth matching, confusion counts and parameter sweeps.
//!
//! A predicted cluster is matched to the ground-truth group holding its
//! majority; a group is matched to the cluster holding its plurality. An
//! observation is a false positive when its cluster's majority group is not
//! its own (wrong inclusion) and a false negative when it sits outside its
//! group's plurality cluster (wrong exclusion). A misplaced observation is
//! usually both. True negatives are whatever remains, which under these
//! definitions is always zero, so accuracy equals `tp / n_total`.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Observation;
use crate::scalar::Scalar;
use crate::synth;
use crate::tigm::{run_stream, TigmConfig};

/// `obs_id -> group`
pub type GroundTruth = BTreeMap<u64, u64>;
/// `obs_id -> label`
pub type Prediction = BTreeMap<u64, u64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub n_total: usize,
}

impl ConfusionCounts {
    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.n_total)
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Matching {
    /// cluster label -> majority gt group
    pub cluster_to_group: BTreeMap<u64, u64>,
    /// gt group -> plurality cluster label
    pub group_to_cluster: BTreeMap<u64, u64>,
}

fn check_coverage(pred: &Prediction, gt: &GroundTruth) -> Result<()> {
    if gt.is_empty() {
        return Err(Error::contract("ground truth is empty"));
    }
    if pred.len() != gt.len() || pred.keys().zip(gt.keys()).any(|(a, b)| a != b) {
        return Err(Error::contract(format!(
            "prediction covers {} observations, ground truth {}; id sets differ",
            pred.len(),
            gt.len()
        )));
    }
    Ok(())
}

/// Key with the largest count; ties go to the smaller key.
fn arg_max(counts: &BTreeMap<u64, usize>) -> u64 {
    let mut best = (0u64, 0usize);
    for (&k, &c) in counts {
        if c > best.1 {
            best = (k, c);
        }
    }
    best.0
}

pub fn match_clusters(pred: &Prediction, gt: &GroundTruth) -> Result<Matching> {
    check_coverage(pred, gt)?;
    let mut by_cluster: BTreeMap<u64, BTreeMap<u64, usize>> = BTreeMap::new();
    let mut by_group: BTreeMap<u64, BTreeMap<u64, usize>> = BTreeMap::new();
    for (id, &label) in pred {
        let group = gt[id];
        *by_cluster.entry(label).or_default().entry(group).or_default() += 1;
        *by_group.entry(group).or_default().entry(label).or_default() += 1;
    }
    Ok(Matching {
        cluster_to_group: by_cluster.iter().map(|(l, c)| (*l, arg_max(c))).collect(),
        group_to_cluster: by_group.iter().map(|(g, c)| (*g, arg_max(c))).collect(),
    })
}

pub fn confusion(pred: &Prediction, gt: &GroundTruth) -> Result<ConfusionCounts> {
    let m = match_clusters(pred, gt)?;
    let mut counts = ConfusionCounts {
        n_total: gt.len(),
        ..Default::default()
    };
    let mut flagged = 0usize;
    for (id, &label) in pred {
        let group = gt[id];
        let wrong_inclusion = m.cluster_to_group[&label] != group;
        let wrong_exclusion = m.group_to_cluster[&group] != label;
        if wrong_inclusion {
            counts.fp += 1;
        }
        if wrong_exclusion {
            counts.fn_ += 1;
        }
        if !wrong_inclusion && !wrong_exclusion {
            counts.tp += 1;
        }
        flagged += 1;
    }
    counts.tn = counts.n_total - flagged;
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub beta: f64,
    pub cluster_count: usize,
    pub work: u64,
    pub elapsed: Duration,
    pub accuracy: Option<f64>,
}

/// Independent single-pass runs, one per radius, executed in parallel.
/// `template` supplies the assignment mode and seed.
pub fn beta_sweep<T: Scalar>(
    observations: &[Observation<T>],
    betas: &[T],
    template: TigmConfig<T>,
    gt: Option<&GroundTruth>,
) -> Result<Vec<SweepRow>> {
    if betas.is_empty() {
        return Err(Error::param("beta list is empty"));
    }
    betas
        .par_iter()
        .map(|&beta| {
            let cfg = TigmConfig { beta, ..template };
            cfg.validate()?;
            let start = Instant::now();
            let (state, assignments) = run_stream(observations, cfg)?;
            let elapsed = start.elapsed();
            let accuracy = match gt {
                Some(gt) => Some(confusion(&assignments, gt)?.accuracy()),
                None => None,
            };
            Ok(SweepRow {
                beta: beta.as_f64(),
                cluster_count: state.cluster_count(),
                work: state.work_counter,
                elapsed,
                accuracy,
            })
        })
        .collect()
}

/// Inclusive `start:stop:step` grid.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let num = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::param(format!("bad number {s:?} in grid {spec:?}")))
    };
    match parts.as_slice() {
        [single] => Ok(vec![num(single)?]),
        [a, b, step] => {
            let (a, b, step) = (num(a)?, num(b)?, num(step)?);
            if step.is_nan() || step <= 0.0 || b < a {
                return Err(Error::param(format!("grid {spec:?} needs start <= stop and step > 0")));
            }
            let n = ((b - a) / step + 1e-9).floor() as usize;
            Ok((0..=n).map(|i| a + step * i as f64).collect())
        }
        _ => Err(Error::param(format!("grid {spec:?} is not start:stop:step"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub k: usize,
    pub beta: f64,
    pub seed: u64,
    /// Timing is the fastest of this many identical runs.
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: usize,
    pub clusters: usize,
    pub work: u64,
    pub elapsed: Duration,
}

/// Work and time of single-pass clustering on streams of growing length
/// drawn from a fixed `k`-path scene.
pub fn scaling_report(n_values: &[usize], config: &ScalingConfig) -> Result<Vec<ScalingRow>> {
    if config.k == 0 {
        return Err(Error::param("k must be at least 1"));
    }
    let tigm = TigmConfig::map(config.beta)?;
    let templates = synth::separated_templates(config.k, synth::DEFAULT_SEPARATION, synth::DEFAULT_RADIUS);
    let mut rows = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let (trajs, _) = synth::generate_stream(&templates, n, config.seed)?;
        let cfg = crate::model::FeatureConfig::new(crate::model::FeatureSelector::StartEnd);
        let obs: Vec<Observation<f64>> = crate::model::extract_stream(&trajs, &cfg, 0)?;
        let mut best = Duration::MAX;
        let mut last = None;
        for _ in 0..config.repeats.max(1) {
            let start = Instant::now();
            let out = run_stream(&obs, tigm)?;
            best = best.min(start.elapsed());
            last = Some(out.0);
        }
        let state = last.expect("at least one repeat");
        rows.push(ScalingRow {
            n,
            clusters: state.cluster_count(),
            work: state.work_counter,
            elapsed: best,
        });
    }
    Ok(rows)
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).expect("finite"));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

/// Number of distinct labels in a prediction.
pub fn label_count(pred: &Prediction) -> usize {
    pred.values().collect::<BTreeSet<_>>().len()
}
