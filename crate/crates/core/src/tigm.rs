//! Single-sweep, arrival-ordered clustering.
//!
//! Each observation is scored against every live cluster with
//! `ln(score_k) = ln(n_k) - distance(x, mu_k)` and against a fresh cluster
//! with `ln(score_new) = -beta`. The shared normalizer cancels, so the
//! comparison is done on unnormalized log scores. Under MAP assignment this
//! reduces to the join rule `min_k (x_k - ln n_k) <= beta`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Cluster, Euclidean, Metric, Observation};
use crate::scalar::Scalar;

/// Lower bound returned by [`refine_beta`] when the refined radius would be
/// nonpositive.
pub const MIN_BETA: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssignmentMode {
    /// Arg-max of the scores; ties prefer the lowest-labelled existing cluster.
    #[default]
    Map,
    /// Draw proportionally to the scores from a seeded generator.
    SampledGibbs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TigmConfig<T: Scalar> {
    /// Concentration radius; the classic concentration is `alpha = e^{-beta}`.
    pub beta: T,
    pub mode: AssignmentMode,
    pub rng_seed: u64,
}

impl<T: Scalar> TigmConfig<T> {
    pub fn new(beta: T, mode: AssignmentMode, rng_seed: u64) -> Result<Self> {
        let cfg = Self {
            beta,
            mode,
            rng_seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn map(beta: T) -> Result<Self> {
        Self::new(beta, AssignmentMode::Map, 0)
    }

    pub fn gibbs(beta: T, seed: u64) -> Result<Self> {
        Self::new(beta, AssignmentMode::SampledGibbs, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta > T::zero()) {
            return Err(Error::param(format!(
                "beta must be positive and finite, got {}",
                self.beta
            )));
        }
        Ok(())
    }

    /// `e^{-beta}`; underflows to zero for very large radii, which is why
    /// scoring never uses it directly.
    pub fn alpha(&self) -> T {
        (-self.beta).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Candidate {
    New,
    Existing(u64),
}

/// Mutable clustering state shared by the single-sweep engine and the
/// segmented model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ModelState<T: Scalar> {
    pub clusters: BTreeMap<u64, Cluster<T>>,
    /// `obs_id -> label`
    pub assignments: BTreeMap<u64, u64>,
    pub next_label: u64,
    pub total_assigned: usize,
    /// Number of cluster scores evaluated by `assign`.
    pub work_counter: u64,
    /// Stamped into `created_segment` of new clusters.
    pub segment: u64,
}

impl<T: Scalar> Default for ModelState<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ModelState<T> {
    pub fn new() -> Self {
        Self {
            clusters: BTreeMap::new(),
            assignments: BTreeMap::new(),
            next_label: 1,
            total_assigned: 0,
            work_counter: 0,
            segment: 0,
        }
    }

    pub fn cluster_count(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn label_of(&self, obs_id: u64) -> Option<u64> {
        self.assignments.get(&obs_id).copied()
    }

    /// Feature dimension of the live clusters, `None` when empty.
    pub fn dim(&self) -> Option<usize> {
        self.clusters.values().next().map(|c| c.dim())
    }

    fn check_dim(&self, obs: &Observation<T>) -> Result<()> {
        if let Some(d) = self.dim() {
            if d != obs.dim() {
                return Err(Error::contract(format!(
                    "observation {} has dimension {} but clusters have {}",
                    obs.obs_id,
                    obs.dim(),
                    d
                )));
            }
        }
        if obs.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract(format!(
                "observation {} has non-finite features",
                obs.obs_id
            )));
        }
        Ok(())
    }

    /// Removes an observation from its cluster with an exact downdate.
    /// The cluster is deleted when it empties; its label is not reissued.
    pub fn unassign(&mut self, obs: &Observation<T>) -> Result<u64> {
        let label = self.assignments.remove(&obs.obs_id).ok_or_else(|| {
            Error::contract(format!("observation {} is not assigned", obs.obs_id))
        })?;
        let cluster = self
            .clusters
            .get_mut(&label)
            .ok_or_else(|| Error::contract(format!("assignment points at missing cluster {label}")))?;
        if cluster.dim() != obs.dim() {
            // restore before failing
            self.assignments.insert(obs.obs_id, label);
            return Err(Error::contract(format!(
                "observation {} has dimension {} but cluster {label} has {}",
                obs.obs_id,
                obs.dim(),
                cluster.dim()
            )));
        }
        if cluster.remove(&obs.features) {
            self.clusters.remove(&label);
        }
        self.total_assigned -= 1;
        Ok(label)
    }

    fn place(&mut self, obs: &Observation<T>, choice: Candidate) -> u64 {
        let label = match choice {
            Candidate::New => {
                let label = self.next_label;
                self.next_label += 1;
                self.clusters
                    .insert(label, Cluster::singleton(label, &obs.features, self.segment));
                label
            }
            Candidate::Existing(label) => {
                self.clusters
                    .get_mut(&label)
                    .expect("scored cluster is live")
                    .add(&obs.features);
                label
            }
        };
        self.assignments.insert(obs.obs_id, label);
        self.total_assigned += 1;
        label
    }

    /// Checks count conservation, label monotonicity and the absence of
    /// empty clusters.
    pub fn check_invariants(&self) -> Result<()> {
        let sum: usize = self.clusters.values().map(|c| c.n).sum();
        if sum != self.total_assigned || sum != self.assignments.len() {
            return Err(Error::contract(format!(
                "count mismatch: sum n_k = {sum}, total_assigned = {}, assignments = {}",
                self.total_assigned,
                self.assignments.len()
            )));
        }
        for (label, c) in &self.clusters {
            if c.n == 0 {
                return Err(Error::contract(format!("cluster {label} is empty")));
            }
            if *label != c.label || *label == 0 || *label >= self.next_label {
                return Err(Error::contract(format!("cluster label {label} out of range")));
            }
        }
        let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
        for l in self.assignments.values() {
            *counts.entry(*l).or_default() += 1;
        }
        for (label, n) in counts {
            match self.clusters.get(&label) {
                Some(c) if c.n == n => {}
                _ => return Err(Error::contract(format!("cluster {label} count does not match its members"))),
            }
        }
        Ok(())
    }
}

/// Scoring and assignment engine. Holds the configuration, the distance
/// and the generator used in [`AssignmentMode::SampledGibbs`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = "M: Default"))]
pub struct Tigm<T: Scalar, M: Metric<T> = Euclidean> {
    pub config: TigmConfig<T>,
    #[serde(skip)]
    metric: M,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Tigm<T, Euclidean> {
    pub fn new(config: TigmConfig<T>) -> Result<Self> {
        Self::with_metric(config, Euclidean)
    }
}

impl<T: Scalar, M: Metric<T>> Tigm<T, M> {
    pub fn with_metric(config: TigmConfig<T>, metric: M) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            metric,
            rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
        })
    }

    pub fn metric(&self) -> &M {
        &self.metric
    }

    /// Unnormalized log scores: `NEW` first, then live clusters by label.
    pub fn score(&self, state: &ModelState<T>, obs: &Observation<T>) -> Result<Vec<(Candidate, T)>> {
        state.check_dim(obs)?;
        let mut out = Vec::with_capacity(state.clusters.len() + 1);
        out.push((Candidate::New, -self.config.beta));
        for (label, c) in &state.clusters {
            out.push((Candidate::Existing(*label), self.log_score(c, obs)));
        }
        Ok(out)
    }

    #[inline]
    fn log_score(&self, cluster: &Cluster<T>, obs: &Observation<T>) -> T {
        T::from_count(cluster.n).ln() - self.metric.dist(&obs.features, &cluster.mean)
    }

    /// Assigns an unassigned observation and returns its label.
    pub fn assign(&mut self, state: &mut ModelState<T>, obs: &Observation<T>) -> Result<u64> {
        let choice = self.choose(state, obs)?;
        Ok(state.place(obs, choice))
    }

    fn choose(&mut self, state: &mut ModelState<T>, obs: &Observation<T>) -> Result<Candidate> {
        if state.assignments.contains_key(&obs.obs_id) {
            return Err(Error::contract(format!(
                "observation {} is already assigned",
                obs.obs_id
            )));
        }
        state.check_dim(obs)?;
        let choice = match self.config.mode {
            AssignmentMode::Map => self.choose_map(state, obs),
            AssignmentMode::SampledGibbs => self.choose_sampled(state, obs),
        };
        state.work_counter += state.clusters.len() as u64;
        Ok(choice)
    }

    fn choose_map(&self, state: &ModelState<T>, obs: &Observation<T>) -> Candidate {
        let mut best: Option<(u64, T)> = None;
        for (label, c) in &state.clusters {
            let s = self.log_score(c, obs);
            match best {
                Some((_, b)) if s <= b => {}
                _ => best = Some((*label, s)),
            }
        }
        match best {
            Some((label, s)) if s >= -self.config.beta => Candidate::Existing(label),
            _ => Candidate::New,
        }
    }

    fn choose_sampled(&mut self, state: &ModelState<T>, obs: &Observation<T>) -> Candidate {
        let mut cands = Vec::with_capacity(state.clusters.len() + 1);
        let mut logs = Vec::with_capacity(state.clusters.len() + 1);
        for (label, c) in &state.clusters {
            cands.push(Candidate::Existing(*label));
            logs.push(self.log_score(c, obs));
        }
        cands.push(Candidate::New);
        logs.push(-self.config.beta);

        let max = logs.iter().copied().fold(T::neg_infinity(), T::max);
        let weights: Vec<T> = logs.iter().map(|l| (*l - max).exp()).collect();
        let total: T = weights.iter().copied().sum();
        let u = T::lit(self.rng.random::<f64>()) * total;
        let mut acc = T::zero();
        for (cand, w) in cands.iter().zip(&weights) {
            acc += *w;
            if u < acc {
                return *cand;
            }
        }
        *cands.last().expect("NEW is always a candidate")
    }

    /// Removes `obs` from its cluster and assigns it again against the
    /// remaining clusters. A singleton that wins `NEW` keeps its own label
    /// and creation segment. Returns `(old_label, new_label)`.
    pub fn reassign(&mut self, state: &mut ModelState<T>, obs: &Observation<T>) -> Result<(u64, u64)> {
        let old = state
            .label_of(obs.obs_id)
            .ok_or_else(|| Error::contract(format!("observation {} is not assigned", obs.obs_id)))?;
        let singleton_origin = state
            .clusters
            .get(&old)
            .filter(|c| c.n == 1)
            .map(|c| c.created_segment);
        state.unassign(obs)?;
        let choice = self.choose(state, obs)?;
        let new = match (choice, singleton_origin) {
            (Candidate::New, Some(created)) => {
                state
                    .clusters
                    .insert(old, Cluster::singleton(old, &obs.features, created));
                state.assignments.insert(obs.obs_id, old);
                state.total_assigned += 1;
                old
            }
            _ => state.place(obs, choice),
        };
        Ok((old, new))
    }
}

/// `beta = max_radius - ln(n_k)`, the radius at which a cluster of `n_k`
/// members stops attracting.
pub fn estimate_beta<T: Scalar>(max_radius: T, n_k: usize) -> Result<T> {
    if n_k == 0 {
        return Err(Error::param("cluster size must be at least 1"));
    }
    let ln_n = T::from_count(n_k).ln();
    if !(max_radius.is_finite() && max_radius > ln_n) {
        return Err(Error::param(format!(
            "max radius {max_radius} must exceed ln({n_k}) = {ln_n}"
        )));
    }
    Ok(max_radius - ln_n)
}

/// Advisory re-estimate `r_obs - ln(mean cluster size)`, where `r_obs` is the
/// largest member-to-own-mean distance. `observations` must contain every
/// assigned member. Clamped below at [`MIN_BETA`].
pub fn refine_beta<T: Scalar, M: Metric<T>>(
    state: &ModelState<T>,
    observations: &[Observation<T>],
    metric: &M,
) -> Result<T> {
    if state.is_empty() {
        return Err(Error::contract("refine_beta needs at least one cluster"));
    }
    let mut r_obs = T::zero();
    let mut seen = 0usize;
    for obs in observations {
        if let Some(label) = state.label_of(obs.obs_id) {
            let c = &state.clusters[&label];
            if c.dim() != obs.dim() {
                return Err(Error::contract("observation dimension differs from its cluster"));
            }
            r_obs = r_obs.max(metric.dist(&obs.features, &c.mean));
            seen += 1;
        }
    }
    if seen != state.total_assigned {
        return Err(Error::contract(format!(
            "{} assigned observations but only {seen} supplied",
            state.total_assigned
        )));
    }
    let mean_size = T::from_count(state.total_assigned) / T::from_count(state.cluster_count());
    Ok((r_obs - mean_size.ln()).max(T::lit(MIN_BETA)))
}

fn check_sorted<T: Scalar>(observations: &[Observation<T>]) -> Result<()> {
    for w in observations.windows(2) {
        if w[1].arrival_index <= w[0].arrival_index {
            return Err(Error::Ordering(format!(
                "arrival_index {} follows {}",
                w[1].arrival_index, w[0].arrival_index
            )));
        }
    }
    Ok(())
}

/// Processes each observation once, in arrival order.
pub fn run_stream<T: Scalar>(
    observations: &[Observation<T>],
    config: TigmConfig<T>,
) -> Result<(ModelState<T>, BTreeMap<u64, u64>)> {
    let mut engine = Tigm::new(config)?;
    run_stream_with(&mut engine, observations)
}

pub fn run_stream_with<T: Scalar, M: Metric<T>>(
    engine: &mut Tigm<T, M>,
    observations: &[Observation<T>],
) -> Result<(ModelState<T>, BTreeMap<u64, u64>)> {
    check_sorted(observations)?;
    let mut state = ModelState::new();
    for obs in observations {
        engine.assign(&mut state, obs)?;
    }
    let assignments = state.assignments.clone();
    Ok((state, assignments))
}

#[derive(Debug, Clone)]
pub struct Converged<T: Scalar> {
    pub state: ModelState<T>,
    pub assignments: BTreeMap<u64, u64>,
    pub sweeps_used: usize,
    /// Membership changes observed in each sweep.
    pub changes: Vec<usize>,
}

/// One pass in the given order followed by up to `max_sweeps` full
/// unassign/reassign sweeps, stopping after the first sweep that moves no
/// observation.
pub fn run_converged<T: Scalar>(
    observations: &[Observation<T>],
    config: TigmConfig<T>,
    max_sweeps: usize,
) -> Result<Converged<T>> {
    if max_sweeps == 0 {
        return Err(Error::param("max_sweeps must be at least 1"));
    }
    let mut engine = Tigm::new(config)?;
    let mut state = ModelState::new();
    for obs in observations {
        engine.assign(&mut state, obs)?;
    }
    let mut changes = Vec::new();
    for _ in 0..max_sweeps {
        let mut moved = 0;
        for obs in observations {
            let (old, new) = engine.reassign(&mut state, obs)?;
            if new != old {
                moved += 1;
            }
        }
        changes.push(moved);
        if moved == 0 {
            break;
        }
    }
    let assignments = state.assignments.clone();
    Ok(Converged {
        state,
        assignments,
        sweeps_used: changes.len(),
        changes,
    })
}
