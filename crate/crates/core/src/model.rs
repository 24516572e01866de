//! Trajectories, feature extraction, the distance contract and running
//! per-cluster statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub frame: u64,
    pub x: f64,
    pub y: f64,
}

impl TrackPoint {
    pub fn new(frame: u64, x: f64, y: f64) -> Self {
        Self { frame, x, y }
    }
}

/// Ordered track of one moving object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub points: Vec<TrackPoint>,
}

impl Trajectory {
    /// Builds a trajectory, rejecting fewer than two points, non-finite
    /// coordinates and frames that do not strictly increase.
    pub fn new(id: impl Into<String>, points: Vec<TrackPoint>) -> Result<Self> {
        let t = Self {
            id: id.into(),
            points,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "trajectory {:?} has {} point(s), need at least 2",
                self.id,
                self.points.len()
            )));
        }
        for p in &self.points {
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "trajectory {:?} has a non-finite coordinate at frame {}",
                    self.id, p.frame
                )));
            }
        }
        for w in self.points.windows(2) {
            if w[1].frame <= w[0].frame {
                return Err(Error::InvalidInput(format!(
                    "trajectory {:?}: frames not strictly increasing ({} then {})",
                    self.id, w[0].frame, w[1].frame
                )));
            }
        }
        Ok(())
    }

    pub fn first(&self) -> &TrackPoint {
        &self.points[0]
    }

    pub fn last(&self) -> &TrackPoint {
        &self.points[self.points.len() - 1]
    }

    pub fn completion_frame(&self) -> u64 {
        self.last().frame
    }

    pub fn duration(&self) -> u64 {
        self.last().frame - self.first().frame
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSelector {
    /// `<x_start, y_start>`
    Start,
    /// `<x_end, y_end>`
    End,
    /// `<x_start, y_start, x_end, y_end>`
    StartEnd,
    /// `<x_start, y_start, x_end, y_end, t_dur>`
    Full,
}

impl FeatureSelector {
    pub fn dim(self) -> usize {
        match self {
            FeatureSelector::Start | FeatureSelector::End => 2,
            FeatureSelector::StartEnd => 4,
            FeatureSelector::Full => 5,
        }
    }

    /// Index of the duration component, if the selector carries one.
    pub fn duration_axis(self) -> Option<usize> {
        match self {
            FeatureSelector::Full => Some(4),
            _ => None,
        }
    }
}

impl std::str::FromStr for FeatureSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "start" => Ok(FeatureSelector::Start),
            "end" => Ok(FeatureSelector::End),
            "start-end" => Ok(FeatureSelector::StartEnd),
            "full" => Ok(FeatureSelector::Full),
            other => Err(Error::param(format!(
                "unknown feature selector {other:?} (expected start|end|start-end|full)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub selector: FeatureSelector,
    /// Per-dimension multipliers applied after extraction.
    pub scale: Option<Vec<f64>>,
}

impl FeatureConfig {
    pub fn new(selector: FeatureSelector) -> Self {
        Self {
            selector,
            scale: None,
        }
    }

    pub fn with_scale(selector: FeatureSelector, scale: Vec<f64>) -> Result<Self> {
        let cfg = Self {
            selector,
            scale: Some(scale),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn dim(&self) -> usize {
        self.selector.dim()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(scale) = &self.scale {
            if scale.len() != self.dim() {
                return Err(Error::param(format!(
                    "scale has {} entries but selector {:?} has dimension {}",
                    scale.len(),
                    self.selector,
                    self.dim()
                )));
            }
            if let Some(bad) = scale.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
                return Err(Error::param(format!(
                    "scale entries must be positive and finite, got {bad}"
                )));
            }
        }
        Ok(())
    }
}

/// The unit that gets clustered: one feature vector per completed trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Observation<T: Scalar> {
    pub obs_id: u64,
    pub features: Vec<T>,
    pub arrival_index: u64,
    pub arrival_frame: u64,
    pub source_id: String,
}

impl<T: Scalar> Observation<T> {
    /// Bare observation with `obs_id == arrival_index == index`.
    pub fn new(index: u64, features: Vec<T>, arrival_frame: u64) -> Self {
        Self {
            obs_id: index,
            features,
            arrival_index: index,
            arrival_frame,
            source_id: index.to_string(),
        }
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }
}

/// Feature vector of a trajectory in the fixed order
/// `x_start, y_start, x_end, y_end, t_dur`, restricted by the selector.
pub fn feature_vector<T: Scalar>(trajectory: &Trajectory, config: &FeatureConfig) -> Result<Vec<T>> {
    trajectory.validate()?;
    config.validate()?;
    let s = trajectory.first();
    let e = trajectory.last();
    let dur = trajectory.duration() as f64;
    let raw: Vec<f64> = match config.selector {
        FeatureSelector::Start => vec![s.x, s.y],
        FeatureSelector::End => vec![e.x, e.y],
        FeatureSelector::StartEnd => vec![s.x, s.y, e.x, e.y],
        FeatureSelector::Full => vec![s.x, s.y, e.x, e.y, dur],
    };
    let out = match &config.scale {
        Some(scale) => raw.iter().zip(scale).map(|(v, k)| T::lit(v * k)).collect(),
        None => raw.into_iter().map(T::lit).collect(),
    };
    Ok(out)
}

/// Extracts the observation for a trajectory at stream position `index`.
pub fn extract_features<T: Scalar>(
    trajectory: &Trajectory,
    config: &FeatureConfig,
    index: u64,
) -> Result<Observation<T>> {
    Ok(Observation {
        obs_id: index,
        features: feature_vector(trajectory, config)?,
        arrival_index: index,
        arrival_frame: trajectory.completion_frame(),
        source_id: trajectory.id.clone(),
    })
}

/// Orders trajectories by `(completion_frame, id)` and numbers the resulting
/// observations `first_index, first_index + 1, ...`.
pub fn extract_stream<T: Scalar>(
    trajectories: &[Trajectory],
    config: &FeatureConfig,
    first_index: u64,
) -> Result<Vec<Observation<T>>> {
    let mut order: Vec<&Trajectory> = trajectories.iter().collect();
    order.sort_by(|a, b| {
        a.completion_frame()
            .cmp(&b.completion_frame())
            .then_with(|| a.id.cmp(&b.id))
    });
    order
        .into_iter()
        .enumerate()
        .map(|(i, t)| extract_features(t, config, first_index + i as u64))
        .collect()
}

/// Distance between feature vectors of equal dimension.
///
/// Implementations are called on the hot path after the caller has checked
/// dimensions, so they must not allocate or fail.
pub trait Metric<T: Scalar>: Send + Sync {
    fn dist(&self, a: &[T], b: &[T]) -> T;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Euclidean;

impl<T: Scalar> Metric<T> for Euclidean {
    #[inline]
    fn dist(&self, a: &[T], b: &[T]) -> T {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<T>()
            .sqrt()
    }
}

/// Euclidean distance with a dimension check.
pub fn distance<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::contract(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(Euclidean.dist(a, b))
}

/// Running statistics of one cluster: count, mean and accumulated
/// outer-product deviations (`m2`, row-major `d x d`). Supports exact
/// removal of a previously added member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Cluster<T: Scalar> {
    pub label: u64,
    pub n: usize,
    pub mean: Vec<T>,
    pub m2: Vec<T>,
    pub created_segment: u64,
}

impl<T: Scalar> Cluster<T> {
    pub fn singleton(label: u64, x: &[T], created_segment: u64) -> Self {
        let d = x.len();
        Self {
            label,
            n: 1,
            mean: x.to_vec(),
            m2: vec![T::zero(); d * d],
            created_segment,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn add(&mut self, x: &[T]) {
        let d = self.dim();
        let n_new = T::from_count(self.n + 1);
        let delta: Vec<T> = x.iter().zip(&self.mean).map(|(&a, &m)| a - m).collect();
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += *dl / n_new;
        }
        for (row, (&xi, &mi)) in self.m2.chunks_mut(d).zip(x.iter().zip(&self.mean)) {
            let after_i = xi - mi;
            for (c, &dj) in row.iter_mut().zip(&delta) {
                *c += after_i * dj;
            }
        }
        self.n += 1;
    }

    /// Downdates the statistics by a member. Returns `true` when the cluster
    /// is left empty.
    pub fn remove(&mut self, x: &[T]) -> bool {
        debug_assert!(self.n > 0);
        if self.n <= 1 {
            self.n = 0;
            self.mean.iter_mut().for_each(|m| *m = T::zero());
            self.m2.iter_mut().for_each(|m| *m = T::zero());
            return true;
        }
        let d = self.dim();
        let n = T::from_count(self.n);
        let n_after = T::from_count(self.n - 1);
        let after: Vec<T> = x.iter().zip(&self.mean).map(|(&a, &m)| a - m).collect();
        for (m, &xi) in self.mean.iter_mut().zip(x) {
            *m = (n * *m - xi) / n_after;
        }
        let before: Vec<T> = x.iter().zip(&self.mean).map(|(&a, &m)| a - m).collect();
        for (row, &ai) in self.m2.chunks_mut(d).zip(&after) {
            for (c, &bj) in row.iter_mut().zip(&before) {
                *c -= ai * bj;
            }
        }
        self.n -= 1;
        false
    }

    /// Population covariance `m2 / n`, defined for `n >= 2`.
    pub fn covariance(&self) -> Option<Vec<T>> {
        if self.n < 2 {
            return None;
        }
        let n = T::from_count(self.n);
        Some(self.m2.iter().map(|&v| v / n).collect())
    }

    /// Diagonal of the population covariance, zeros below two members.
    pub fn variances(&self) -> Vec<T> {
        let d = self.dim();
        if self.n < 2 {
            return vec![T::zero(); d];
        }
        let n = T::from_count(self.n);
        (0..d).map(|i| (self.m2[i * d + i] / n).max(T::zero())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Trajectory {
        Trajectory::new(
            "a",
            vec![TrackPoint::new(10, 5.0, 7.0), TrackPoint::new(50, 20.0, 30.0)],
        )
        .unwrap()
    }

    #[test]
    fn full_features_read_endpoints_and_duration() {
        let f: Vec<f64> = feature_vector(&sample(), &FeatureConfig::new(FeatureSelector::Full)).unwrap();
        assert_eq!(f, vec![5.0, 7.0, 20.0, 30.0, 40.0]);
    }

    #[test]
    fn start_and_end_selectors() {
        let s: Vec<f64> = feature_vector(&sample(), &FeatureConfig::new(FeatureSelector::Start)).unwrap();
        assert_eq!(s, vec![5.0, 7.0]);
        let e: Vec<f32> = feature_vector(&sample(), &FeatureConfig::new(FeatureSelector::End)).unwrap();
        assert_eq!(e, vec![20.0, 30.0]);
    }

    #[test]
    fn scale_applies_per_dimension() {
        let cfg = FeatureConfig::with_scale(FeatureSelector::StartEnd, vec![1.0, 1.0, 1.0, 0.5]).unwrap();
        let f: Vec<f64> = feature_vector(&sample(), &cfg).unwrap();
        assert_eq!(f, vec![5.0, 7.0, 20.0, 15.0]);
    }

    #[test]
    fn bad_scale_rejected() {
        assert!(FeatureConfig::with_scale(FeatureSelector::Start, vec![1.0]).is_err());
        assert!(FeatureConfig::with_scale(FeatureSelector::Start, vec![1.0, 0.0]).is_err());
        assert!(FeatureConfig::with_scale(FeatureSelector::Start, vec![1.0, -2.0]).is_err());
    }

    #[test]
    fn short_or_unordered_trajectories_rejected() {
        assert!(Trajectory::new("x", vec![TrackPoint::new(1, 0.0, 0.0)]).is_err());
        assert!(Trajectory::new(
            "x",
            vec![TrackPoint::new(3, 0.0, 0.0), TrackPoint::new(3, 1.0, 1.0)]
        )
        .is_err());
        assert!(Trajectory::new(
            "x",
            vec![TrackPoint::new(3, f64::NAN, 0.0), TrackPoint::new(4, 1.0, 1.0)]
        )
        .is_err());
        let bare = Trajectory {
            id: "raw".into(),
            points: vec![TrackPoint::new(0, 0.0, 0.0)],
        };
        let cfg = FeatureConfig::new(FeatureSelector::Full);
        assert!(matches!(
            extract_features::<f64>(&bare, &cfg, 0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn observation_carries_completion_frame() {
        let o: Observation<f64> =
            extract_features(&sample(), &FeatureConfig::new(FeatureSelector::Start), 7).unwrap();
        assert_eq!(o.arrival_frame, 50);
        assert_eq!(o.obs_id, 7);
        assert_eq!(o.source_id, "a");
    }

    #[test]
    fn stream_sorted_by_completion_then_id() {
        let mk = |id: &str, end: u64| {
            Trajectory::new(id, vec![TrackPoint::new(0, 0.0, 0.0), TrackPoint::new(end, 1.0, 1.0)]).unwrap()
        };
        let trajs = vec![mk("c", 9), mk("b", 5), mk("a", 9)];
        let obs: Vec<Observation<f64>> =
            extract_stream(&trajs, &FeatureConfig::new(FeatureSelector::Start), 0).unwrap();
        let ids: Vec<_> = obs.iter().map(|o| o.source_id.as_str()).collect();
        assert_eq!(ids, ["b", "a", "c"]);
        assert_eq!(obs.iter().map(|o| o.arrival_index).collect::<Vec<_>>(), [0, 1, 2]);
    }

    #[test]
    fn distance_examples() {
        assert_eq!(distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        let x = [1.5f64, -2.0, 9.0];
        assert_eq!(distance(&x, &x).unwrap(), 0.0);
        let h = 0.25;
        let d = distance(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0, 2.0, 3.0, 4.0, 5.0 + h]).unwrap();
        assert_eq!(d, h);
        assert!(matches!(distance(&[0.0], &[0.0, 1.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn cluster_two_point_downdate() {
        let mut c = Cluster::singleton(1, &[0.0f64, 0.0], 0);
        c.add(&[2.0, 0.0]);
        assert_eq!(c.mean, vec![1.0, 0.0]);
        assert_eq!(c.covariance().unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
        assert!(!c.remove(&[2.0, 0.0]));
        assert_eq!(c.mean, vec![0.0, 0.0]);
        assert_eq!(c.n, 1);
        assert!(c.remove(&[0.0, 0.0]));
    }

    fn vec_strategy(d: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1e3f64..1e3, d)
    }

    proptest! {
        #[test]
        fn metric_axioms(a in vec_strategy(5), b in vec_strategy(5), c in vec_strategy(5)) {
            let ab = distance(&a, &b).unwrap();
            let ba = distance(&b, &a).unwrap();
            let ac = distance(&a, &c).unwrap();
            let cb = distance(&c, &b).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(distance(&a, &a).unwrap(), 0.0);
            prop_assert!(ab <= ac + cb + 1e-9 * (1.0 + ab));
        }

        #[test]
        fn running_stats_match_batch(points in prop::collection::vec(vec_strategy(3), 2..40)) {
            let mut c = Cluster::singleton(1, &points[0], 0);
            for p in &points[1..] {
                c.add(p);
            }
            let n = points.len() as f64;
            let mean: Vec<f64> = (0..3).map(|i| points.iter().map(|p| p[i]).sum::<f64>() / n).collect();
            for i in 0..3 {
                prop_assert!((c.mean[i] - mean[i]).abs() <= 1e-9 * (1.0 + mean[i].abs()));
                for j in 0..3 {
                    let cov: f64 = points.iter().map(|p| (p[i] - mean[i]) * (p[j] - mean[j])).sum::<f64>() / n;
                    let got = c.covariance().unwrap()[i * 3 + j];
                    prop_assert!((got - cov).abs() <= 1e-6 * (1.0 + cov.abs()), "{} vs {}", got, cov);
                }
            }
        }
    }
}
