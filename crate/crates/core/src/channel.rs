//! Ground truth and the noisy-OR test channel.
//!
//! A pool is truly positive when it contains at least one defective item.
//! Each test then reports positive with probability `p_tp` on a positive
//! pool and `p_fp` on a negative one, independently across pools.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::design::PoolingDesign;
use crate::error::{check_probability, GtError, Result};
use crate::rng::rng_from_seed;

/// Prevalence and test characteristics, all known to the inference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub theta: f64,
    pub p_tp: f64,
    pub p_fp: f64,
}

impl ModelParams {
    pub fn new(theta: f64, p_tp: f64, p_fp: f64) -> Result<Self> {
        check_probability("theta", theta)?;
        check_probability("p_tp", p_tp)?;
        check_probability("p_fp", p_fp)?;
        if p_tp <= p_fp {
            log::warn!("p_tp = {p_tp} <= p_fp = {p_fp}: the test is no better than random");
        }
        Ok(Self { theta, p_tp, p_fp })
    }

    /// `U` of a pool: probability of the observed outcome given a positive pool.
    pub fn positive_pool_likelihood(&self, y: bool) -> f64 {
        if y {
            self.p_tp
        } else {
            1.0 - self.p_tp
        }
    }

    /// `W` of a pool: probability of the observed outcome given a negative pool.
    pub fn negative_pool_likelihood(&self, y: bool) -> f64 {
        if y {
            self.p_fp
        } else {
            1.0 - self.p_fp
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// Independent Bernoulli(theta) states.
    Bernoulli,
    /// Exactly `round(N * theta)` defectives at uniformly random positions.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    pub states: Vec<bool>,
}

impl GroundTruth {
    pub fn n_defective(&self) -> usize {
        self.states.iter().filter(|&&x| x).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestResults {
    pub outcomes: Vec<bool>,
}

pub fn sample_ground_truth(n_items: usize, theta: f64, mode: SamplingMode, seed: u64) -> Result<GroundTruth> {
    check_probability("theta", theta)?;
    let mut rng = rng_from_seed(seed);
    let states = match mode {
        SamplingMode::Bernoulli => (0..n_items).map(|_| rng.gen_bool(theta)).collect(),
        SamplingMode::Exact => {
            let k = ((n_items as f64) * theta).round() as usize;
            let mut states = vec![false; n_items];
            for i in sample(&mut rng, n_items, k.min(n_items)) {
                states[i] = true;
            }
            states
        }
    };
    Ok(GroundTruth { states })
}

/// Logical OR of the members of `pool_index`.
pub fn pool_state(design: &PoolingDesign, truth: &GroundTruth, pool_index: usize) -> Result<bool> {
    if pool_index >= design.n_pools() {
        return Err(GtError::Index {
            index: pool_index,
            len: design.n_pools(),
        });
    }
    Ok(design.pool(pool_index).iter().any(|&i| truth.states[i]))
}

pub fn sample_results(
    design: &PoolingDesign,
    truth: &GroundTruth,
    params: &ModelParams,
    seed: u64,
) -> Result<TestResults> {
    if truth.states.len() != design.n_items() {
        return Err(GtError::LengthMismatch {
            expected: design.n_items(),
            actual: truth.states.len(),
        });
    }
    let mut rng = rng_from_seed(seed);
    let outcomes = (0..design.n_pools())
        .map(|nu| {
            let positive = design.pool(nu).iter().any(|&i| truth.states[i]);
            let p = if positive { params.p_tp } else { params.p_fp };
            rng.gen_bool(p)
        })
        .collect();
    Ok(TestResults { outcomes })
}

/// `f(y | pool state)` for a single test.
pub fn outcome_likelihood(y: bool, pool_state: bool, params: &ModelParams) -> f64 {
    if pool_state {
        params.positive_pool_likelihood(y)
    } else {
        params.negative_pool_likelihood(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::generate_design;

    #[test]
    fn zero_and_one_prevalence() {
        for mode in [SamplingMode::Bernoulli, SamplingMode::Exact] {
            let t = sample_ground_truth(10, 0.0, mode, 1).unwrap();
            assert!(t.states.iter().all(|&x| !x));
            let t = sample_ground_truth(10, 1.0, mode, 1).unwrap();
            assert!(t.states.iter().all(|&x| x));
        }
    }

    #[test]
    fn exact_mode_hits_count() {
        let t = sample_ground_truth(1000, 0.05, SamplingMode::Exact, 8).unwrap();
        assert_eq!(t.n_defective(), 50);
        let t = sample_ground_truth(7, 0.5, SamplingMode::Exact, 8).unwrap();
        assert_eq!(t.n_defective(), 4);
    }

    #[test]
    fn invalid_theta_rejected() {
        assert!(sample_ground_truth(5, 1.5, SamplingMode::Exact, 0).is_err());
        assert!(ModelParams::new(0.1, -0.1, 0.0).is_err());
    }

    #[test]
    fn pool_state_is_or() {
        let d = PoolingDesign::from_pools(3, vec![vec![0, 1, 2]]).unwrap();
        let t = |s: [bool; 3]| GroundTruth { states: s.to_vec() };
        assert!(!pool_state(&d, &t([false, false, false]), 0).unwrap());
        assert!(pool_state(&d, &t([true, false, false]), 0).unwrap());
        assert!(pool_state(&d, &t([true, true, true]), 0).unwrap());
        assert_eq!(
            pool_state(&d, &t([true, true, true]), 1).unwrap_err(),
            GtError::Index { index: 1, len: 1 }
        );
    }

    #[test]
    fn pair_pool_examples() {
        let d = PoolingDesign::from_pools(2, vec![vec![0, 1]]).unwrap();
        let zero = GroundTruth { states: vec![false, false] };
        let one = GroundTruth { states: vec![true, false] };
        assert!(!pool_state(&d, &zero, 0).unwrap());
        assert!(pool_state(&d, &one, 0).unwrap());
    }

    #[test]
    fn likelihood_values() {
        let p = ModelParams::new(0.05, 0.98, 0.01).unwrap();
        assert_eq!(outcome_likelihood(true, true, &p), 0.98);
        assert!((outcome_likelihood(false, false, &p) - 0.99).abs() < 1e-15);
        let p = ModelParams::new(0.05, 0.9, 0.0).unwrap();
        assert_eq!(outcome_likelihood(true, false, &p), 0.0);
    }

    #[test]
    fn likelihood_normalizes() {
        let p = ModelParams::new(0.2, 0.83, 0.07).unwrap();
        for state in [false, true] {
            let s = outcome_likelihood(false, state, &p) + outcome_likelihood(true, state, &p);
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn noiseless_channel_reproduces_pool_states() {
        let d = generate_design(200, 100, 6, 1).unwrap();
        let t = sample_ground_truth(200, 0.1, SamplingMode::Exact, 2).unwrap();
        let p = ModelParams::new(0.1, 1.0, 0.0).unwrap();
        let r = sample_results(&d, &t, &p, 3).unwrap();
        for nu in 0..d.n_pools() {
            assert_eq!(r.outcomes[nu], pool_state(&d, &t, nu).unwrap());
        }
    }

    #[test]
    fn positive_pool_frequency_matches_p_tp() {
        // one item always defective, single pool; repeat draws with new seeds
        let d = PoolingDesign::from_pools(1, vec![vec![0]]).unwrap();
        let t = GroundTruth { states: vec![true] };
        let p = ModelParams::new(0.5, 0.9, 0.05).unwrap();
        let draws = 100_000;
        let hits = (0..draws)
            .filter(|&s| sample_results(&d, &t, &p, s).unwrap().outcomes[0])
            .count();
        let freq = hits as f64 / draws as f64;
        let sigma = (0.9f64 * 0.1 / draws as f64).sqrt();
        assert!((freq - 0.9).abs() < 3.0 * sigma, "freq {freq}");
    }

    #[test]
    fn uninformative_test_ignores_truth() {
        let d = generate_design(400, 200, 4, 4).unwrap();
        let p = ModelParams::new(0.3, 0.5, 0.5).unwrap();
        let mut freq = [0.0; 2];
        for (slot, theta) in [0.0, 1.0].into_iter().enumerate() {
            let t = sample_ground_truth(400, theta, SamplingMode::Exact, 0).unwrap();
            let mut hits = 0usize;
            for s in 0..50 {
                hits += sample_results(&d, &t, &p, s).unwrap().outcomes.iter().filter(|&&y| y).count();
            }
            freq[slot] = hits as f64 / (50.0 * 200.0);
        }
        let r = 50.0 * 200.0f64;
        assert!((freq[0] - 0.5).abs() < 4.0 / r.sqrt());
        assert!((freq[1] - 0.5).abs() < 4.0 / r.sqrt());
    }

    #[test]
    fn positive_frequency_converges_to_mixture() {
        let d = generate_design(500, 250, 6, 6).unwrap();
        let t = sample_ground_truth(500, 0.08, SamplingMode::Exact, 6).unwrap();
        let p = ModelParams::new(0.08, 0.85, 0.12).unwrap();
        let frac_pos = (0..d.n_pools())
            .filter(|&nu| pool_state(&d, &t, nu).unwrap())
            .count() as f64
            / d.n_pools() as f64;
        let expected = p.p_tp * frac_pos + p.p_fp * (1.0 - frac_pos);
        let reps = 40;
        let mut hits = 0usize;
        for s in 0..reps {
            hits += sample_results(&d, &t, &p, 100 + s).unwrap().outcomes.iter().filter(|&&y| y).count();
        }
        let r = (reps as usize * d.n_pools()) as f64;
        assert!((hits as f64 / r - expected).abs() < 4.0 / r.sqrt());
    }
}
