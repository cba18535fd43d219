//! Exact posterior by exhaustive enumeration of all `2^N` item configurations.
//!
//! Only usable for small `N`, but exact: it is the reference that belief
//! propagation and the decision/AUC results are checked against.
//!
//! The configuration space is cut into fixed-size blocks that are reduced in
//! block order, so results are bit-identical whatever the rayon pool size.

use rayon::prelude::*;

use crate::channel::{ModelParams, TestResults};
use crate::design::PoolingDesign;
use crate::error::{GtError, Result};

pub const DEFAULT_CAP: usize = 20;
/// Masks are `u32`; larger caps are refused.
pub const HARD_CAP: usize = 30;

const BLOCK_BITS: u32 = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct ExactPosterior {
    pub marginals: Vec<f64>,
    /// `ln P(y | c)`.
    pub log_evidence: f64,
    /// `ln BF_i`, `+inf` when the item is certainly defective.
    pub log_bayes_factors: Vec<f64>,
}

/// Running `ln Σ exp(v)` with rescaling.
#[derive(Debug, Clone, Copy)]
struct LogSumExp {
    max: f64,
    sum: f64,
}

impl LogSumExp {
    const EMPTY: Self = Self {
        max: f64::NEG_INFINITY,
        sum: 0.0,
    };

    fn add(&mut self, v: f64) {
        if v == f64::NEG_INFINITY {
            return;
        }
        if v > self.max {
            self.sum = self.sum * (self.max - v).exp() + 1.0;
            self.max = v;
        } else {
            self.sum += (v - self.max).exp();
        }
    }

    fn merge(&mut self, other: &Self) {
        if other.max == f64::NEG_INFINITY {
            return;
        }
        if other.max > self.max {
            self.sum = self.sum * (self.max - other.max).exp() + other.sum;
            self.max = other.max;
        } else {
            self.sum += other.sum * (other.max - self.max).exp();
        }
    }

    fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

/// `count * log_p`, with `0 * (-inf) = 0`.
fn nlog(count: usize, log_p: f64) -> f64 {
    if count == 0 {
        0.0
    } else {
        count as f64 * log_p
    }
}

#[derive(Clone)]
struct Accumulators {
    evidence: LogSumExp,
    /// `ln Σ_{x: x_i=1} f(y|x) Π_{j≠i} φ(x_j)`
    on: Vec<LogSumExp>,
    /// `ln Σ_{x: x_i=0} f(y|x) Π_{j≠i} φ(x_j)`
    off: Vec<LogSumExp>,
}

impl Accumulators {
    fn new(n: usize) -> Self {
        Self {
            evidence: LogSumExp::EMPTY,
            on: vec![LogSumExp::EMPTY; n],
            off: vec![LogSumExp::EMPTY; n],
        }
    }

    fn merge(&mut self, other: &Self) {
        self.evidence.merge(&other.evidence);
        for (a, b) in self.on.iter_mut().zip(&other.on) {
            a.merge(b);
        }
        for (a, b) in self.off.iter_mut().zip(&other.off) {
            a.merge(b);
        }
    }
}

struct Problem {
    n: usize,
    pool_masks: Vec<u32>,
    /// `ln f(y_ν | state)` indexed `[ν][state]`.
    log_lik: Vec<[f64; 2]>,
    log_theta: f64,
    log_one_minus_theta: f64,
}

impl Problem {
    fn new(design: &PoolingDesign, results: &TestResults, params: &ModelParams, cap: usize) -> Result<Self> {
        let n = design.n_items();
        let cap = cap.min(HARD_CAP);
        if n > cap {
            return Err(GtError::CapExceeded { n_items: n, cap });
        }
        if results.outcomes.len() != design.n_pools() {
            return Err(GtError::LengthMismatch {
                expected: design.n_pools(),
                actual: results.outcomes.len(),
            });
        }
        let pool_masks = design
            .pools()
            .iter()
            .map(|pool| pool.iter().fold(0u32, |m, &i| m | (1 << i)))
            .collect();
        let log_lik = results
            .outcomes
            .iter()
            .map(|&y| {
                [
                    params.negative_pool_likelihood(y).ln(),
                    params.positive_pool_likelihood(y).ln(),
                ]
            })
            .collect();
        Ok(Self {
            n,
            pool_masks,
            log_lik,
            log_theta: params.theta.ln(),
            log_one_minus_theta: (1.0 - params.theta).ln(),
        })
    }

    fn accumulate_block(&self, block: u64) -> Accumulators {
        let n = self.n;
        let total = 1u64 << n;
        let start = block << BLOCK_BITS;
        let end = (start + (1 << BLOCK_BITS)).min(total);
        let mut acc = Accumulators::new(n);
        for x in start..end {
            let x = x as u32;
            let lf: f64 = self
                .pool_masks
                .iter()
                .zip(&self.log_lik)
                .map(|(&mask, ll)| ll[usize::from(x & mask != 0)])
                .sum();
            if lf == f64::NEG_INFINITY {
                continue;
            }
            let k = x.count_ones() as usize;
            acc.evidence
                .add(lf + nlog(k, self.log_theta) + nlog(n - k, self.log_one_minus_theta));
            let on = if k > 0 {
                lf + nlog(k - 1, self.log_theta) + nlog(n - k, self.log_one_minus_theta)
            } else {
                f64::NEG_INFINITY
            };
            let off = if k < n {
                lf + nlog(k, self.log_theta) + nlog(n - k - 1, self.log_one_minus_theta)
            } else {
                f64::NEG_INFINITY
            };
            for i in 0..n {
                if x & (1 << i) != 0 {
                    acc.on[i].add(on);
                } else {
                    acc.off[i].add(off);
                }
            }
        }
        acc
    }

    fn enumerate(&self) -> Accumulators {
        let total = 1u64 << self.n;
        let n_blocks = total.div_ceil(1 << BLOCK_BITS);
        let blocks: Vec<Accumulators> = (0..n_blocks)
            .into_par_iter()
            .map(|b| self.accumulate_block(b))
            .collect();
        let mut acc = Accumulators::new(self.n);
        for b in &blocks {
            acc.merge(b);
        }
        acc
    }
}

/// Exact marginals, evidence and Bayes factors, with the default cap.
pub fn exact_posterior(design: &PoolingDesign, results: &TestResults, params: &ModelParams) -> Result<ExactPosterior> {
    exact_posterior_with_cap(design, results, params, DEFAULT_CAP)
}

pub fn exact_posterior_with_cap(
    design: &PoolingDesign,
    results: &TestResults,
    params: &ModelParams,
    cap: usize,
) -> Result<ExactPosterior> {
    let problem = Problem::new(design, results, params, cap)?;
    let acc = problem.enumerate();
    let log_evidence = acc.evidence.value();
    if log_evidence == f64::NEG_INFINITY {
        return Err(GtError::DegenerateEvidence);
    }
    let mut marginals = Vec::with_capacity(problem.n);
    let mut log_bayes_factors = Vec::with_capacity(problem.n);
    for i in 0..problem.n {
        let log_on = acc.on[i].value();
        let log_off = acc.off[i].value();
        let a = if log_on == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            problem.log_theta + log_on
        };
        let b = if log_off == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            problem.log_one_minus_theta + log_off
        };
        let rho = if b == f64::NEG_INFINITY {
            1.0
        } else if a == f64::NEG_INFINITY {
            0.0
        } else {
            1.0 / (1.0 + (b - a).exp())
        };
        marginals.push(rho);
        log_bayes_factors.push(log_on - log_off);
    }
    Ok(ExactPosterior {
        marginals,
        log_evidence,
        log_bayes_factors,
    })
}

/// `ln BF_i^{10}`, the log ratio of the marginal likelihoods of `x_i = 1`
/// and `x_i = 0`. `+inf` when `x_i = 0` is impossible given the results.
pub fn exact_log_bayes_factor(
    design: &PoolingDesign,
    results: &TestResults,
    params: &ModelParams,
    item: usize,
) -> Result<f64> {
    if item >= design.n_items() {
        return Err(GtError::Index {
            index: item,
            len: design.n_items(),
        });
    }
    Ok(exact_posterior(design, results, params)?.log_bayes_factors[item])
}
