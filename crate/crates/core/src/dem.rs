//! Segmented clustering with a one-segment sliding window.
//!
//! Time is cut into segments of `delta_t` frames, segment `t` covering
//! `[t * delta_t, (t + 1) * delta_t)`. Observations are assigned on arrival
//! against the clusters carried over from earlier segments, so labels stay
//! stable without remapping. When the clock crosses a boundary the model
//! retires everything that arrived before the start of the segment being
//! closed, resamples the survivors once and records per-cluster statistics.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Euclidean, Metric, Observation};
use crate::scalar::Scalar;
use crate::tigm::{ModelState, Tigm, TigmConfig};

/// Default `z_threshold` for [`detect_shift`].
pub const DEFAULT_SHIFT_Z: f64 = 2.0;

/// Prior segments needed before [`detect_shift`] tests a segment.
pub const SHIFT_MIN_HISTORY: usize = 2;

/// Floor on the running standard deviation, as a fraction of the running
/// mean's magnitude.
pub const SHIFT_RELATIVE_SD_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DemConfig<T: Scalar> {
    pub delta_t: u64,
    pub tigm: TigmConfig<T>,
}

impl<T: Scalar> DemConfig<T> {
    pub fn new(delta_t: u64, tigm: TigmConfig<T>) -> Result<Self> {
        if delta_t == 0 {
            return Err(Error::param("delta_t must be at least 1 frame"));
        }
        tigm.validate()?;
        Ok(Self { delta_t, tigm })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ClusterSnapshot<T: Scalar> {
    pub mean: Vec<T>,
    /// Row-major population covariance; `None` below two members.
    pub covariance: Option<Vec<T>>,
    pub count: usize,
}

/// Per-cluster statistics of one closed segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SegmentStats<T: Scalar> {
    pub segment_index: u64,
    pub per_cluster: BTreeMap<u64, ClusterSnapshot<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsPoint<T> {
    pub segment_index: u64,
    pub count: usize,
    pub mean: Vec<T>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = "M: Default"))]
pub struct DemState<T: Scalar, M: Metric<T> = Euclidean> {
    pub delta_t: u64,
    engine: Tigm<T, M>,
    pub model: ModelState<T>,
    /// Assigned observations still inside the window, in arrival order.
    pub window: VecDeque<Observation<T>>,
    pub current_segment: u64,
    /// First frame of `current_segment`.
    pub prev_boundary_frame: u64,
    pub last_frame: Option<u64>,
    pub ingested: u64,
    pub history: Vec<SegmentStats<T>>,
    /// `(obs_id, final label)` for observations retired since the last drain.
    #[serde(default)]
    retired: Vec<(u64, u64)>,
}

impl<T: Scalar> DemState<T, Euclidean> {
    pub fn new(config: DemConfig<T>) -> Result<Self> {
        Self::with_metric(config, Euclidean)
    }
}

impl<T: Scalar, M: Metric<T>> DemState<T, M> {
    pub fn with_metric(config: DemConfig<T>, metric: M) -> Result<Self> {
        let config = DemConfig::new(config.delta_t, config.tigm)?;
        Ok(Self {
            delta_t: config.delta_t,
            engine: Tigm::with_metric(config.tigm, metric)?,
            model: ModelState::new(),
            window: VecDeque::new(),
            current_segment: 0,
            prev_boundary_frame: 0,
            last_frame: None,
            ingested: 0,
            history: Vec::new(),
            retired: Vec::new(),
        })
    }

    pub fn config(&self) -> DemConfig<T> {
        DemConfig {
            delta_t: self.delta_t,
            tigm: self.engine.config,
        }
    }

    /// First frame after the current segment.
    pub fn next_boundary_frame(&self) -> u64 {
        self.prev_boundary_frame + self.delta_t
    }

    /// Assigns an observation against the carried-over clusters and buffers it.
    pub fn ingest(&mut self, obs: Observation<T>) -> Result<u64> {
        if let Some(last) = self.last_frame {
            if obs.arrival_frame < last {
                return Err(Error::Ordering(format!(
                    "observation {} arrives at frame {} after frame {last}",
                    obs.obs_id, obs.arrival_frame
                )));
            }
        }
        if obs.arrival_frame < self.prev_boundary_frame {
            return Err(Error::Ordering(format!(
                "observation {} arrives at frame {} inside closed segment (current starts at {})",
                obs.obs_id, obs.arrival_frame, self.prev_boundary_frame
            )));
        }
        let label = self.engine.assign(&mut self.model, &obs)?;
        self.last_frame = Some(obs.arrival_frame);
        self.ingested += 1;
        self.window.push_back(obs);
        Ok(label)
    }

    /// Closes the current segment: retires observations from before its
    /// start, resamples the rest once, and records their statistics.
    pub fn advance_segment(&mut self) -> Result<SegmentStats<T>> {
        if self.ingested == 0 {
            return Err(Error::contract("advance_segment called before any observation was ingested"));
        }
        let cutoff = self.prev_boundary_frame;
        while self
            .window
            .front()
            .is_some_and(|o| o.arrival_frame < cutoff)
        {
            let obs = self.window.pop_front().expect("front checked");
            let label = self.model.unassign(&obs)?;
            self.retired.push((obs.obs_id, label));
        }

        self.model.segment = self.current_segment;
        for obs in &self.window {
            self.engine.reassign(&mut self.model, obs)?;
        }

        let stats = self.snapshot(self.current_segment);
        self.history.push(stats.clone());
        self.current_segment += 1;
        self.prev_boundary_frame += self.delta_t;
        self.model.segment = self.current_segment;
        Ok(stats)
    }

    /// Advances segments until `frame` lies in the current one. Emits every
    /// closed segment, including empty ones skipped over.
    pub fn advance_to(&mut self, frame: u64) -> Result<Vec<SegmentStats<T>>> {
        let mut out = Vec::new();
        while frame >= self.next_boundary_frame() {
            if self.ingested == 0 {
                // nothing to close yet: move the clock only
                self.current_segment += 1;
                self.prev_boundary_frame += self.delta_t;
                self.model.segment = self.current_segment;
                continue;
            }
            out.push(self.advance_segment()?);
        }
        Ok(out)
    }

    /// Advances the clock as needed, then ingests. Returns the label and any
    /// segments closed on the way.
    pub fn push(&mut self, obs: Observation<T>) -> Result<(u64, Vec<SegmentStats<T>>)> {
        let closed = self.advance_to(obs.arrival_frame)?;
        let label = self.ingest(obs)?;
        Ok((label, closed))
    }

    fn snapshot(&self, segment_index: u64) -> SegmentStats<T> {
        let per_cluster = self
            .model
            .clusters
            .iter()
            .map(|(label, c)| {
                (
                    *label,
                    ClusterSnapshot {
                        mean: c.mean.clone(),
                        covariance: c.covariance(),
                        count: c.n,
                    },
                )
            })
            .collect();
        SegmentStats {
            segment_index,
            per_cluster,
        }
    }

    /// Takes the `(obs_id, label)` pairs retired since the last call.
    pub fn drain_retired(&mut self) -> Vec<(u64, u64)> {
        std::mem::take(&mut self.retired)
    }

    /// Count and mean of one cluster in every recorded segment where it was
    /// alive.
    pub fn dynamics_series(&self, label: u64) -> Result<Vec<DynamicsPoint<T>>> {
        if label == 0 || label >= self.model.next_label {
            return Err(Error::NotFound(label));
        }
        Ok(self
            .history
            .iter()
            .filter_map(|s| {
                s.per_cluster.get(&label).map(|c| DynamicsPoint {
                    segment_index: s.segment_index,
                    count: c.count,
                    mean: c.mean.clone(),
                })
            })
            .collect())
    }

    /// Window invariant: every buffered observation is assigned and arrived
    /// no earlier than one segment before the current boundary.
    pub fn check_window(&self) -> Result<()> {
        let floor = self.prev_boundary_frame.saturating_sub(self.delta_t);
        for o in &self.window {
            if self.model.label_of(o.obs_id).is_none() {
                return Err(Error::contract(format!("buffered observation {} is unassigned", o.obs_id)));
            }
            if self.current_segment > 0 && o.arrival_frame < floor {
                return Err(Error::contract(format!(
                    "observation {} at frame {} is outside the window starting at {floor}",
                    o.obs_id, o.arrival_frame
                )));
            }
        }
        if self.window.len() != self.model.total_assigned {
            return Err(Error::contract("window and model disagree on assigned count"));
        }
        self.model.check_invariants()
    }
}

/// Flags segments whose duration component departs from the running mean
/// of all earlier segments by more than `z_threshold` running standard
/// deviations.
///
/// The running deviation is the sample standard deviation of the earlier
/// values, floored at [`SHIFT_RELATIVE_SD_FLOOR`] of the running mean, and
/// at least [`SHIFT_MIN_HISTORY`] earlier segments are required.
pub fn detect_shift<T: Scalar>(
    series: &[DynamicsPoint<T>],
    duration_axis: usize,
    z_threshold: f64,
) -> Result<Vec<u64>> {
    if !(z_threshold.is_finite() && z_threshold > 0.0) {
        return Err(Error::param(format!("z_threshold must be positive, got {z_threshold}")));
    }
    if let Some(p) = series.iter().find(|p| p.mean.len() <= duration_axis) {
        return Err(Error::param(format!(
            "duration axis {duration_axis} is outside the {}-dimensional features",
            p.mean.len()
        )));
    }
    let values: Vec<f64> = series.iter().map(|p| p.mean[duration_axis].as_f64()).collect();
    let mut flagged = Vec::new();
    for t in SHIFT_MIN_HISTORY..values.len() {
        let prior = &values[..t];
        let n = prior.len() as f64;
        let mean = prior.iter().sum::<f64>() / n;
        let var = prior.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let sd = var.sqrt().max(SHIFT_RELATIVE_SD_FLOOR * mean.abs());
        let dev = (values[t] - mean).abs();
        if dev > z_threshold * sd {
            flagged.push(series[t].segment_index);
        }
    }
    Ok(flagged)
}
