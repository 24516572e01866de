//! Synthetic traffic scenes with known path membership, and a sampler that
//! draws observations back out of a fitted model.

use std::collections::BTreeSet;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::GroundTruth;
use crate::model::{Observation, TrackPoint, Trajectory};
use crate::scalar::Scalar;
use crate::tigm::ModelState;

/// Center spacing used by [`separated_templates`] defaults.
pub const DEFAULT_SEPARATION: f64 = 200.0;
pub const DEFAULT_RADIUS: f64 = 10.0;

/// Interior points per synthetic track, endpoints included.
const MAX_TRACK_POINTS: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Region {
    pub fn new(x: f64, y: f64, radius: f64) -> Self {
        Self {
            center: [x, y],
            radius,
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> (f64, f64) {
        let r = self.radius * rng.random::<f64>().sqrt();
        let theta = std::f64::consts::TAU * rng.random::<f64>();
        (self.center[0] + r * theta.cos(), self.center[1] + r * theta.sin())
    }
}

/// One frequently used path: where tracks start and end, how long they take
/// and how many appear per segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathTemplate {
    pub start_region: Region,
    pub end_region: Region,
    /// `(mean, std)` in frames.
    pub duration: (f64, f64),
    /// Expected trajectories per segment.
    pub rate: f64,
    /// Segments in which the path produces tracks; `None` means all.
    #[serde(default)]
    pub active_segments: Option<BTreeSet<u64>>,
}

impl PathTemplate {
    pub fn new(start: Region, end: Region, duration: (f64, f64), rate: f64) -> Self {
        Self {
            start_region: start,
            end_region: end,
            duration,
            rate,
            active_segments: None,
        }
    }

    pub fn active_in(mut self, segments: impl IntoIterator<Item = u64>) -> Self {
        self.active_segments = Some(segments.into_iter().collect());
        self
    }

    pub fn is_active(&self, segment: u64) -> bool {
        self.active_segments
            .as_ref()
            .is_none_or(|s| s.contains(&segment))
    }

    fn validate(&self, index: usize) -> Result<()> {
        let bad = |what: &str| Err(Error::param(format!("template {index}: {what}")));
        if !(self.start_region.radius > 0.0 && self.end_region.radius > 0.0) {
            return bad("region radii must be positive");
        }
        if !(self.duration.0 > 0.0 && self.duration.1 >= 0.0) {
            return bad("duration mean must be positive and std nonnegative");
        }
        if !(self.rate >= 0.0 && self.rate.is_finite()) {
            return bad("rate must be nonnegative");
        }
        Ok(())
    }

    fn draw_duration(&self, rng: &mut impl Rng) -> u64 {
        let (mean, std) = self.duration;
        let d = if std > 0.0 {
            Normal::new(mean, std).expect("valid normal").sample(rng)
        } else {
            mean
        };
        d.round().max(2.0) as u64
    }

    fn track(&self, id: String, completion: u64, duration: u64, rng: &mut impl Rng) -> Trajectory {
        let (sx, sy) = self.start_region.sample(rng);
        let (ex, ey) = self.end_region.sample(rng);
        let duration = duration.min(completion).max(1);
        let start = completion - duration;
        let m = (duration + 1).min(MAX_TRACK_POINTS);
        let points = (0..m)
            .map(|i| {
                let frame = start + i * duration / (m - 1);
                let f = i as f64 / (m - 1) as f64;
                TrackPoint::new(frame, sx + f * (ex - sx), sy + f * (ey - sy))
            })
            .collect();
        Trajectory { id, points }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub templates: Vec<PathTemplate>,
    pub noise_seed: u64,
    pub frames_per_segment: u64,
    pub n_segments: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.templates.is_empty() {
            return Err(Error::param("scene needs at least one path template"));
        }
        if self.frames_per_segment < 3 {
            return Err(Error::param("frames_per_segment must be at least 3"));
        }
        for (i, t) in self.templates.iter().enumerate() {
            t.validate(i)?;
        }
        Ok(())
    }
}

/// Sorts by `(completion_frame, id)` and keys the ground truth by position
/// in that order, matching [`crate::model::extract_stream`] numbering.
fn finish(mut tagged: Vec<(Trajectory, u64)>) -> (Vec<Trajectory>, GroundTruth) {
    tagged.sort_by(|a, b| {
        a.0.completion_frame()
            .cmp(&b.0.completion_frame())
            .then_with(|| a.0.id.cmp(&b.0.id))
    });
    let gt = tagged
        .iter()
        .enumerate()
        .map(|(i, (_, g))| (i as u64, *g))
        .collect();
    (tagged.into_iter().map(|(t, _)| t).collect(), gt)
}

/// Poisson arrivals per active template and segment, completion frames
/// uniform within the segment, linear tracks. Ground-truth group is the
/// template index.
pub fn generate_scene(spec: &SceneSpec) -> Result<(Vec<Trajectory>, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.noise_seed);
    let mut tagged = Vec::new();
    for seg in 0..spec.n_segments {
        let seg_start = seg * spec.frames_per_segment;
        let seg_end = seg_start + spec.frames_per_segment;
        for (ti, tpl) in spec.templates.iter().enumerate() {
            if !tpl.is_active(seg) || tpl.rate == 0.0 {
                continue;
            }
            let count = Poisson::new(tpl.rate).expect("positive rate").sample(&mut rng) as u64;
            for j in 0..count {
                let duration = tpl.draw_duration(&mut rng);
                // keep the first frame at or after 0
                let low = seg_start.max(duration).min(seg_end - 1);
                let completion = rng.random_range(low..seg_end);
                let id = format!("s{seg:04}-p{ti:03}-{j:05}");
                tagged.push((tpl.track(id, completion, duration, &mut rng), ti as u64));
            }
        }
    }
    Ok(finish(tagged))
}

/// Exactly `n` tracks, each from a uniformly chosen template, completing
/// every 10 frames.
pub fn generate_stream(templates: &[PathTemplate], n: usize, seed: u64) -> Result<(Vec<Trajectory>, GroundTruth)> {
    if templates.is_empty() {
        return Err(Error::param("stream needs at least one path template"));
    }
    for (i, t) in templates.iter().enumerate() {
        t.validate(i)?;
    }
    let offset = templates
        .iter()
        .map(|t| (t.duration.0 + 6.0 * t.duration.1).ceil() as u64)
        .max()
        .unwrap_or(0)
        + 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tagged = (0..n)
        .map(|i| {
            let ti = rng.random_range(0..templates.len());
            let tpl = &templates[ti];
            let duration = tpl.draw_duration(&mut rng);
            let completion = offset + 10 * i as u64;
            let id = format!("n{i:07}-p{ti:03}");
            (tpl.track(id, completion, duration, &mut rng), ti as u64)
        })
        .collect();
    Ok(finish(tagged))
}

/// `k` paths on a grid: path `i` starts near `(i * separation, 0)` and ends
/// near `(i * separation, separation)`, with both regions of the given
/// radius. Start+end feature centers are `sqrt(2) * separation` apart.
pub fn separated_templates(k: usize, separation: f64, radius: f64) -> Vec<PathTemplate> {
    (0..k)
        .map(|i| {
            let x = i as f64 * separation;
            PathTemplate::new(
                Region::new(x, 0.0, radius),
                Region::new(x, separation, radius),
                (100.0, 10.0),
                10.0,
            )
        })
        .collect()
}

/// Draws observations from a fitted model: a label with probability
/// proportional to its count, then features from an axis-aligned Gaussian at
/// the cluster mean with the cluster's per-dimension variance (unit
/// variance for singletons).
pub fn sample_from_model<T: Scalar>(state: &ModelState<T>, n: usize, seed: u64) -> Result<Vec<Observation<T>>> {
    if state.is_empty() {
        return Err(Error::contract("cannot sample from an empty model"));
    }
    if n == 0 {
        return Err(Error::param("sample size must be at least 1"));
    }
    let clusters: Vec<_> = state.clusters.values().collect();
    let weights = WeightedIndex::new(clusters.iter().map(|c| c.n as f64))
        .map_err(|e| Error::contract(format!("bad cluster weights: {e}")))?;
    let spreads: Vec<Vec<f64>> = clusters
        .iter()
        .map(|c| {
            if c.n < 2 {
                vec![1.0; c.dim()]
            } else {
                c.variances().iter().map(|v| v.as_f64().sqrt()).collect()
            }
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let k = weights.sample(&mut rng);
        let c = clusters[k];
        let features = c
            .mean
            .iter()
            .zip(&spreads[k])
            .map(|(m, sd)| {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                T::lit(m.as_f64() + sd * z)
            })
            .collect();
        let mut o = Observation::new(i as u64, features, i as u64);
        o.source_id = format!("sample-{}", c.label);
        out.push(o);
    }
    Ok(out)
}
