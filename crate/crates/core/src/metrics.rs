//! ROC curves and AUC.
//!
//! Thresholding is always strict (`score > τ` counts as positive), matching
//! [`crate::decision::apply_cutoff`].

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{GtError, Result};

/// Points on the default uniform threshold grid.
pub const DEFAULT_GRID_POINTS: usize = 1001;

/// Tolerance used by [`effectiveness`] to call a point on the curve.
pub const BOUNDARY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fp: f64,
    pub tp: f64,
}

/// ROC points sorted by `fp`, then `tp`, with the threshold that produced each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub cutoffs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Effectiveness {
    Superior,
    Inferior,
    Boundary,
}

fn check_scores(scores: &[f64]) -> Result<()> {
    match scores.iter().find(|s| s.is_nan()) {
        Some(&value) => Err(GtError::InvalidParameter {
            name: "score",
            value,
            reason: "scores must not be NaN",
        }),
        None => Ok(()),
    }
}

fn class_sizes(truth: &[bool]) -> Result<(usize, usize)> {
    let pos = truth.iter().filter(|&&x| x).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        Err(GtError::DegenerateTruth)
    } else {
        Ok((pos, neg))
    }
}

/// Mann-Whitney AUC with half credit for ties, computed from midranks.
///
/// Ranks are kept doubled so the statistic is an exact integer count of
/// half-pairs.
pub fn empirical_auc(truth: &[bool], scores: &[f64]) -> Result<f64> {
    if truth.len() != scores.len() {
        return Err(GtError::LengthMismatch {
            expected: truth.len(),
            actual: scores.len(),
        });
    }
    check_scores(scores)?;
    let (pos, neg) = class_sizes(truth)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // sum over positives of doubled midrank (1-based)
    let mut doubled_rank_sum: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end, doubled midrank = start + 1 + end
        let doubled_mid = (start + 1 + end) as u128;
        let tied_pos = order[start..end].iter().filter(|&&i| truth[i]).count() as u128;
        doubled_rank_sum += tied_pos * doubled_mid;
        start = end;
    }
    let pos = pos as u128;
    let doubled_u = doubled_rank_sum - pos * (pos + 1);
    Ok(doubled_u as f64 / (2 * pos * neg as u128) as f64)
}

/// Posterior AUC of `scores`, weighting each ordered pair `(i, j)`, `i ≠ j`,
/// by `ρ_i (1 - ρ_j)` and normalising by `N² θ (1 - θ)`.
pub fn posterior_auc(marginals: &[f64], scores: &[f64], theta: f64) -> Result<f64> {
    if marginals.len() != scores.len() {
        return Err(GtError::LengthMismatch {
            expected: marginals.len(),
            actual: scores.len(),
        });
    }
    if !(theta > 0.0 && theta < 1.0) {
        return Err(GtError::DegeneratePrevalence(theta));
    }
    check_scores(scores)?;
    let n = marginals.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // negatives strictly below the current tie group
    let mut below = 0.0;
    let mut total = 0.0;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let group = &order[start..end];
        let group_neg: f64 = group.iter().map(|&i| 1.0 - marginals[i]).sum();
        for &i in group {
            let rho = marginals[i];
            let tied_neg = group_neg - (1.0 - rho);
            total += rho * (below + 0.5 * tied_neg);
        }
        below += group_neg;
        start = end;
    }
    let nf = n as f64;
    Ok(total / (nf * nf * theta * (1.0 - theta)))
}

/// Default threshold grid: uniform points on `[0, 1]` plus every distinct
/// observed score, sorted and deduplicated.
pub fn default_grid(scores: &[f64]) -> Vec<f64> {
    let mut grid = uniform_grid(DEFAULT_GRID_POINTS);
    grid.extend(scores.iter().copied().filter(|s| !s.is_nan()));
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

pub fn uniform_grid(points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..points).map(|k| k as f64 / (points - 1) as f64).collect(),
    }
}

fn sort_curve(mut pairs: Vec<(RocPoint, f64)>) -> RocCurve {
    pairs.sort_by(|a, b| {
        a.0.fp
            .total_cmp(&b.0.fp)
            .then(a.0.tp.total_cmp(&b.0.tp))
            .then(b.1.total_cmp(&a.1))
    });
    let (points, cutoffs) = pairs.into_iter().unzip();
    RocCurve { points, cutoffs }
}

/// Fraction of a sorted sample strictly above `tau`.
fn count_above(sorted: &[f64], tau: f64) -> usize {
    sorted.len() - sorted.partition_point(|&s| s <= tau)
}

pub fn roc_from_samples(truth: &[bool], scores: &[f64], grid: &[f64]) -> Result<RocCurve> {
    if truth.len() != scores.len() {
        return Err(GtError::LengthMismatch {
            expected: truth.len(),
            actual: scores.len(),
        });
    }
    check_scores(scores)?;
    let (pos, neg) = class_sizes(truth)?;
    let mut plus: Vec<f64> = scores.iter().zip(truth).filter(|(_, &x)| x).map(|(&s, _)| s).collect();
    let mut minus: Vec<f64> = scores.iter().zip(truth).filter(|(_, &x)| !x).map(|(&s, _)| s).collect();
    plus.sort_by(f64::total_cmp);
    minus.sort_by(f64::total_cmp);
    let pairs = grid
        .iter()
        .map(|&tau| {
            let point = RocPoint {
                fp: count_above(&minus, tau) as f64 / neg as f64,
                tp: count_above(&plus, tau) as f64 / pos as f64,
            };
            (point, tau)
        })
        .collect();
    Ok(sort_curve(pairs))
}

/// A weighted sample set on `[0, 1]`, e.g. population-dynamics output or a
/// histogram with masses at bin centres.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSamples {
    values: Vec<f64>,
    /// Mass strictly above position `k`: `tail[k] = Σ_{j ≥ k} w_j`.
    tail: Vec<f64>,
}

impl WeightedSamples {
    pub fn new(values: &[f64], weights: &[f64]) -> Result<Self> {
        if values.len() != weights.len() {
            return Err(GtError::LengthMismatch {
                expected: values.len(),
                actual: weights.len(),
            });
        }
        check_scores(values)?;
        let mut pairs: Vec<(f64, f64)> = values.iter().copied().zip(weights.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut tail = vec![0.0; pairs.len() + 1];
        for k in (0..pairs.len()).rev() {
            tail[k] = tail[k + 1] + pairs[k].1;
        }
        let total = tail[0];
        if !(total > 0.0) {
            return Err(GtError::EmptyDistribution);
        }
        for t in &mut tail {
            *t /= total;
        }
        Ok(Self {
            values: pairs.into_iter().map(|p| p.0).collect(),
            tail,
        })
    }

    pub fn from_samples(values: &[f64]) -> Result<Self> {
        Self::new(values, &vec![1.0; values.len()])
    }

    /// Probability mass strictly above `tau`.
    pub fn mass_above(&self, tau: f64) -> f64 {
        self.tail[self.values.partition_point(|&v| v <= tau)]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// ROC from two distributions: `TP(τ)` is the mass of `plus` above `τ`,
/// `FP(τ)` the mass of `minus` above `τ`.
pub fn roc_from_distributions(plus: &WeightedSamples, minus: &WeightedSamples, grid: &[f64]) -> RocCurve {
    let pairs = grid
        .iter()
        .map(|&tau| {
            let point = RocPoint {
                fp: minus.mass_above(tau),
                tp: plus.mass_above(tau),
            };
            (point, tau)
        })
        .collect();
    sort_curve(pairs)
}

/// Grid for distribution ROCs: uniform points plus all support points.
pub fn distribution_grid(plus: &WeightedSamples, minus: &WeightedSamples) -> Vec<f64> {
    let mut grid = uniform_grid(DEFAULT_GRID_POINTS);
    grid.extend_from_slice(plus.values());
    grid.extend_from_slice(minus.values());
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

fn closed_points(curve: &RocCurve) -> Vec<RocPoint> {
    let mut pts = Vec::with_capacity(curve.points.len() + 2);
    pts.push(RocPoint { fp: 0.0, tp: 0.0 });
    pts.extend_from_slice(&curve.points);
    pts.push(RocPoint { fp: 1.0, tp: 1.0 });
    pts
}

/// Trapezoidal area under the curve closed by `(0, 0)` and `(1, 1)`.
pub fn auc_from_roc(curve: &RocCurve) -> f64 {
    closed_points(curve)
        .windows(2)
        .map(|w| (w[1].fp - w[0].fp) * (w[1].tp + w[0].tp) / 2.0)
        .sum()
}

/// Upper envelope of the closed curve at false-positive rate `fp`, linearly
/// interpolated between neighbouring points.
pub fn tp_at_fp(curve: &RocCurve, fp: f64) -> f64 {
    let pts = closed_points(curve);
    let idx = pts.partition_point(|p| p.fp.total_cmp(&fp) != Ordering::Greater);
    if idx == 0 {
        return pts[0].tp;
    }
    let left = pts[idx - 1];
    if left.fp == fp || idx == pts.len() {
        return left.tp;
    }
    let right = pts[idx];
    left.tp + (right.tp - left.tp) * (fp - left.fp) / (right.fp - left.fp)
}

/// Compares a single test operating at `(p_fp, p_tp)` with the curve.
pub fn effectiveness(curve: &RocCurve, p_fp: f64, p_tp: f64) -> Effectiveness {
    let tp = tp_at_fp(curve, p_fp);
    if (tp - p_tp).abs() <= BOUNDARY_TOL {
        Effectiveness::Boundary
    } else if tp > p_tp {
        Effectiveness::Superior
    } else {
        Effectiveness::Inferior
    }
}
