//! Order-independent reference clusterers: DBSCAN and flat-kernel mean shift.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Euclidean, Metric};
use crate::scalar::Scalar;

pub const NOISE: i64 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DbscanConfig<T: Scalar> {
    pub eps: T,
    pub min_samples: usize,
}

impl<T: Scalar> DbscanConfig<T> {
    pub fn new(eps: T, min_samples: usize) -> Result<Self> {
        if !(eps.is_finite() && eps > T::zero()) {
            return Err(Error::param(format!("eps must be positive, got {eps}")));
        }
        if min_samples == 0 {
            return Err(Error::param("min_samples must be at least 1"));
        }
        Ok(Self { eps, min_samples })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub enum MeanShiftConfig<T: Scalar> {
    Bandwidth(T),
    /// Bandwidth taken as this quantile of all pairwise distances.
    Quantile(f64),
}

pub const MEAN_SHIFT_MAX_ITER: usize = 300;
pub const MEAN_SHIFT_TOL: f64 = 1e-4;

fn check_points<T: Scalar>(points: &[Vec<T>]) -> Result<usize> {
    let first = points
        .first()
        .ok_or_else(|| Error::contract("point set is empty"))?;
    let d = first.len();
    if let Some(p) = points.iter().find(|p| p.len() != d) {
        return Err(Error::contract(format!(
            "points have mixed dimensions ({d} and {})",
            p.len()
        )));
    }
    Ok(d)
}

/// Density-based clustering. Neighbourhoods are inclusive (`dist <= eps`)
/// and count the point itself. Labels are `0..` in discovery order, noise
/// is [`NOISE`].
pub fn dbscan<T: Scalar>(points: &[Vec<T>], config: &DbscanConfig<T>) -> Result<Vec<i64>> {
    check_points(points)?;
    let n = points.len();
    let neighbours: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| Euclidean.dist(&points[i], &points[j]) <= config.eps)
                .collect()
        })
        .collect();
    let is_core: Vec<bool> = neighbours
        .iter()
        .map(|nb| nb.len() >= config.min_samples)
        .collect();

    let mut labels = vec![NOISE; n];
    let mut next = 0i64;
    let mut queue = VecDeque::new();
    for seed in 0..n {
        if labels[seed] != NOISE || !is_core[seed] {
            continue;
        }
        labels[seed] = next;
        queue.push_back(seed);
        while let Some(p) = queue.pop_front() {
            for &q in &neighbours[p] {
                if labels[q] == NOISE {
                    labels[q] = next;
                    if is_core[q] {
                        queue.push_back(q);
                    }
                }
            }
        }
        next += 1;
    }
    Ok(labels)
}

/// Nearest-rank quantile of all pairwise Euclidean distances:
/// the `ceil(q * m)`-th smallest of the `m` distances.
pub fn bandwidth_from_quantile<T: Scalar>(points: &[Vec<T>], quantile: f64) -> Result<T> {
    if points.len() < 2 {
        return Err(Error::contract("bandwidth estimation needs at least 2 points"));
    }
    check_points(points)?;
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(Error::param(format!("quantile must lie in (0, 1), got {quantile}")));
    }
    let mut dists = Vec::with_capacity(points.len() * (points.len() - 1) / 2);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            dists.push(Euclidean.dist(&points[i], &points[j]));
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let rank = ((quantile * dists.len() as f64).ceil() as usize).clamp(1, dists.len());
    Ok(dists[rank - 1])
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanShiftResult<T> {
    pub labels: Vec<i64>,
    pub modes: Vec<Vec<T>>,
    pub bandwidth: T,
}

/// Flat-kernel mean shift seeded at every point. Modes closer than half a
/// bandwidth to an already kept mode are merged into it; points take the
/// label of their nearest mode.
pub fn mean_shift<T: Scalar>(points: &[Vec<T>], config: &MeanShiftConfig<T>) -> Result<MeanShiftResult<T>> {
    check_points(points)?;
    let bandwidth = match *config {
        MeanShiftConfig::Bandwidth(b) => {
            if !(b.is_finite() && b > T::zero()) {
                return Err(Error::param(format!("bandwidth must be positive, got {b}")));
            }
            b
        }
        MeanShiftConfig::Quantile(q) => {
            if points.len() < 2 {
                // a single point is its own mode whatever the bandwidth
                T::one()
            } else {
                bandwidth_from_quantile(points, q)?
            }
        }
    };
    if bandwidth <= T::zero() {
        return Err(Error::param("derived bandwidth is zero (duplicate points?)"));
    }
    let tol = bandwidth * T::lit(MEAN_SHIFT_TOL);
    let d = points[0].len();

    let mut converged: Vec<Vec<T>> = Vec::with_capacity(points.len());
    for seed in points {
        let mut x = seed.clone();
        for _ in 0..MEAN_SHIFT_MAX_ITER {
            let mut sum = vec![T::zero(); d];
            let mut count = 0usize;
            for p in points {
                if Euclidean.dist(&x, p) <= bandwidth {
                    for (s, v) in sum.iter_mut().zip(p) {
                        *s += *v;
                    }
                    count += 1;
                }
            }
            if count == 0 {
                break;
            }
            let c = T::from_count(count);
            let next: Vec<T> = sum.into_iter().map(|s| s / c).collect();
            let shift = Euclidean.dist(&next, &x);
            x = next;
            if shift < tol {
                break;
            }
        }
        converged.push(x);
    }

    let half = bandwidth / T::lit(2.0);
    let mut modes: Vec<Vec<T>> = Vec::new();
    for m in converged {
        if !modes.iter().any(|k| Euclidean.dist(k, &m) < half) {
            modes.push(m);
        }
    }

    let labels = points
        .iter()
        .map(|p| {
            let mut best = 0usize;
            let mut best_d = T::infinity();
            for (k, m) in modes.iter().enumerate() {
                let dd = Euclidean.dist(p, m);
                if dd < best_d {
                    best_d = dd;
                    best = k;
                }
            }
            best as i64
        })
        .collect();
    Ok(MeanShiftResult {
        labels,
        modes,
        bandwidth,
    })
}

/// Rescales each dimension to `[0, 1]`; constant dimensions map to 0.
pub fn min_max_normalize<T: Scalar>(points: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
    let d = check_points(points)?;
    let mut lo = vec![T::infinity(); d];
    let mut hi = vec![T::neg_infinity(); d];
    for p in points {
        for i in 0..d {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    Ok(points
        .iter()
        .map(|p| {
            (0..d)
                .map(|i| {
                    let span = hi[i] - lo[i];
                    if span > T::zero() {
                        (p[i] - lo[i]) / span
                    } else {
                        T::zero()
                    }
                })
                .collect()
        })
        .collect())
}
