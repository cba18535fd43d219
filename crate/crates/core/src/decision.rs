//! Risk-minimising decisions from posterior marginals.
//!
//! The risk weighs the false-negative rate by `lambda_fn` and the
//! false-positive rate by `lambda_fp`. Its minimiser thresholds each marginal
//! at a single cutoff, which equals the prevalence when the two weights are
//! equal and 1/2 (the MPM estimator) when `lambda_fn = θ, lambda_fp = 1 - θ`.

use serde::{Deserialize, Serialize};

use crate::error::{GtError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskParams {
    pub lambda_fn: f64,
    pub lambda_fp: f64,
}

impl RiskParams {
    pub fn new(lambda_fn: f64, lambda_fp: f64) -> Result<Self> {
        for (name, value) in [("lambda_fn", lambda_fn), ("lambda_fp", lambda_fp)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(GtError::InvalidParameter {
                    name,
                    value,
                    reason: "must be finite and strictly positive",
                });
            }
        }
        Ok(Self {
            lambda_fn,
            lambda_fp,
        })
    }

    /// Equal weights; the Youden-index risk.
    pub fn balanced() -> Self {
        Self {
            lambda_fn: 0.5,
            lambda_fp: 0.5,
        }
    }

    /// Weights under which the optimal cutoff is 1/2.
    pub fn mpm(theta: f64) -> Result<Self> {
        check_prevalence(theta)?;
        Self::new(theta, 1.0 - theta)
    }
}

/// The rule that produced a [`Decision`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    /// `x̂_i = 1` iff `ρ_i > cutoff`.
    Marginal(f64),
    /// `x̂_i = 1` iff `ln BF_i > log_threshold`.
    LogBayesFactor(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub estimates: Vec<bool>,
    pub threshold: Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub tp_rate: f64,
    pub fp_rate: f64,
    pub fn_rate: f64,
    pub tn_rate: f64,
}

fn check_prevalence(theta: f64) -> Result<()> {
    if theta > 0.0 && theta < 1.0 {
        Ok(())
    } else {
        Err(GtError::DegeneratePrevalence(theta))
    }
}

/// `θ λ_FP / (λ_FN (1 - θ) + θ λ_FP)`.
pub fn optimal_cutoff(theta: f64, risk: &RiskParams) -> Result<f64> {
    check_prevalence(theta)?;
    let num = theta * risk.lambda_fp;
    Ok(num / (risk.lambda_fn * (1.0 - theta) + num))
}

/// Strict thresholding; a marginal equal to the cutoff maps to 0.
pub fn apply_cutoff(marginals: &[f64], cutoff: f64) -> Decision {
    Decision {
        estimates: marginals.iter().map(|&m| m > cutoff).collect(),
        threshold: Threshold::Marginal(cutoff),
    }
}

/// Declares item `i` defective iff `BF_i > λ_FP / λ_FN`.
pub fn bf_decision(log_bayes_factors: &[f64], risk: &RiskParams) -> Decision {
    let log_threshold = (risk.lambda_fp / risk.lambda_fn).ln();
    Decision {
        estimates: log_bayes_factors.iter().map(|&b| b > log_threshold).collect(),
        threshold: Threshold::LogBayesFactor(log_threshold),
    }
}

/// Posterior expected risk `λ_FN FN̂ + λ_FP FP̂` of a decision.
pub fn posterior_risk(marginals: &[f64], decision: &Decision, theta: f64, risk: &RiskParams) -> Result<f64> {
    check_prevalence(theta)?;
    posterior_risk_of(marginals, &decision.estimates, theta, risk)
}

pub(crate) fn posterior_risk_of(marginals: &[f64], estimates: &[bool], theta: f64, risk: &RiskParams) -> Result<f64> {
    if marginals.len() != estimates.len() {
        return Err(GtError::LengthMismatch {
            expected: marginals.len(),
            actual: estimates.len(),
        });
    }
    let n = marginals.len() as f64;
    let (missed, false_alarm) = marginals
        .iter()
        .zip(estimates)
        .fold((0.0, 0.0), |(fneg, fpos), (&rho, &x)| {
            if x {
                (fneg, fpos + (1.0 - rho))
            } else {
                (fneg + rho, fpos)
            }
        });
    Ok(risk.lambda_fn * missed / (n * theta) + risk.lambda_fp * false_alarm / (n * (1.0 - theta)))
}

pub fn empirical_rates(truth: &[bool], decision: &Decision) -> Result<Rates> {
    if truth.len() != decision.estimates.len() {
        return Err(GtError::LengthMismatch {
            expected: truth.len(),
            actual: decision.estimates.len(),
        });
    }
    let positives = truth.iter().filter(|&&x| x).count();
    let negatives = truth.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(GtError::DegenerateTruth);
    }
    let mut missed = 0usize;
    let mut false_alarm = 0usize;
    for (&x, &est) in truth.iter().zip(&decision.estimates) {
        match (x, est) {
            (true, false) => missed += 1,
            (false, true) => false_alarm += 1,
            _ => {}
        }
    }
    let fn_rate = missed as f64 / positives as f64;
    let fp_rate = false_alarm as f64 / negatives as f64;
    Ok(Rates {
        tp_rate: 1.0 - fn_rate,
        fp_rate,
        fn_rate,
        tn_rate: 1.0 - fp_rate,
    })
}

/// `J = TP - FP`.
pub fn youden_index(truth: &[bool], decision: &Decision) -> Result<f64> {
    let r = empirical_rates(truth, decision)?;
    Ok(r.tp_rate - r.fp_rate)
}
