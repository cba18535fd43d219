//! Experiment drivers shared by the commands and the acceptance tests.
//!
//! Every random stream is derived from a master seed and the sample index,
//! so results do not depend on how work is spread over threads.

use std::ops::ControlFlow;

use gt_core::bp::{run_bp, run_bp_observed, BpOptions, ConvergenceReport, InitScheme, Messages, Posterior};
use gt_core::channel::{sample_ground_truth, sample_results, GroundTruth, ModelParams, SamplingMode, TestResults};
use gt_core::decision::{apply_cutoff, empirical_rates, optimal_cutoff, Decision, Rates, RiskParams, Threshold};
use gt_core::design::{generate_design, PoolingDesign};
use gt_core::metrics::{empirical_auc, posterior_auc};
use gt_core::oracle::exact_posterior_with_cap;
use gt_core::popdyn::{pd_generation, Degrees, Histogram, PdInit, Populations};
use gt_core::rng::{derive_seed, rng_from_seed};
use gt_core::{GtError, Result};
use rayon::prelude::*;
use serde::Serialize;

const DESIGN_STREAM: u64 = 10;
const TRUTH_STREAM: u64 = 11;
const RESULTS_STREAM: u64 = 12;
const BP_STREAM: u64 = 13;
const COMPARE_STREAM: u64 = 20;

#[derive(Debug, Clone, Copy)]
pub struct InstanceSetup {
    pub n_items: usize,
    pub n_pools: usize,
    pub pool_size: usize,
    pub params: ModelParams,
    pub sampling: SamplingMode,
}

impl InstanceSetup {
    /// Draws the design, truth and results of sample `index`.
    pub fn draw(&self, master: u64, index: u64) -> Result<(PoolingDesign, GroundTruth, TestResults)> {
        let design = generate_design(
            self.n_items,
            self.n_pools,
            self.pool_size,
            derive_seed(master, DESIGN_STREAM, index),
        )?;
        let truth = sample_ground_truth(
            self.n_items,
            self.params.theta,
            self.sampling,
            derive_seed(master, TRUTH_STREAM, index),
        )?;
        let results = sample_results(&design, &truth, &self.params, derive_seed(master, RESULTS_STREAM, index))?;
        Ok((design, truth, results))
    }
}

/// Risk-optimal cutoff decision. At `θ ∈ {0, 1}` the prior is certain and
/// every item gets the prior state.
pub fn decide(marginals: &[f64], theta: f64, risk: &RiskParams) -> Result<Decision> {
    if theta <= 0.0 || theta >= 1.0 {
        return Ok(Decision {
            estimates: vec![theta >= 1.0; marginals.len()],
            threshold: Threshold::Marginal(theta),
        });
    }
    Ok(apply_cutoff(marginals, optimal_cutoff(theta, risk)?))
}

pub struct Simulation {
    pub design: PoolingDesign,
    pub truth: GroundTruth,
    pub results: TestResults,
    pub posterior: Posterior,
    pub report: ConvergenceReport,
    pub decision: Decision,
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleSummary {
    pub sample: usize,
    pub n_defective: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Undefined when the truth has a single class.
    pub auc: Option<f64>,
    pub posterior_auc: Option<f64>,
    pub rates: Option<Rates>,
    pub n_positive_estimates: usize,
}

pub fn simulate_one(
    setup: &InstanceSetup,
    bp: &BpOptions,
    risk: &RiskParams,
    master: u64,
    index: u64,
) -> Result<Simulation> {
    let (design, truth, results) = setup.draw(master, index)?;
    let options = BpOptions {
        seed: derive_seed(master, BP_STREAM, index),
        ..*bp
    };
    let (posterior, report) = run_bp(&design, &results, &setup.params, &options)?;
    let decision = decide(&posterior.marginals, setup.params.theta, risk)?;
    Ok(Simulation {
        design,
        truth,
        results,
        posterior,
        report,
        decision,
    })
}

pub fn summarize(sample: usize, sim: &Simulation, theta: f64) -> SampleSummary {
    let marginals = &sim.posterior.marginals;
    SampleSummary {
        sample,
        n_defective: sim.truth.n_defective(),
        iterations: sim.report.iterations,
        converged: sim.report.converged,
        auc: empirical_auc(&sim.truth.states, marginals).ok(),
        posterior_auc: posterior_auc(marginals, marginals, theta).ok(),
        rates: empirical_rates(&sim.truth.states, &sim.decision).ok(),
        n_positive_estimates: sim.decision.estimates.iter().filter(|&&x| x).count(),
    }
}

/// Runs `samples` independent instances in parallel, returned in order.
pub fn simulate_many(
    setup: &InstanceSetup,
    bp: &BpOptions,
    risk: &RiskParams,
    master: u64,
    samples: usize,
) -> Result<Vec<SampleSummary>> {
    (0..samples)
        .into_par_iter()
        .map(|s| {
            let sim = simulate_one(setup, bp, risk, master, s as u64)?;
            if !sim.report.converged {
                log::info!("sample {s}: BP did not converge in {} iterations", sim.report.iterations);
            }
            Ok(summarize(s, &sim, setup.params.theta))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationRow {
    pub instance: usize,
    pub n_items: usize,
    pub max_gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Largest absolute difference between BP and exact marginals.
pub fn oracle_gap(
    design: &PoolingDesign,
    results: &TestResults,
    params: &ModelParams,
    bp: &BpOptions,
    cap: usize,
) -> Result<(f64, ConvergenceReport)> {
    let exact = exact_posterior_with_cap(design, results, params, cap)?;
    let (posterior, report) = run_bp(design, results, params, bp)?;
    let gap = exact
        .marginals
        .iter()
        .zip(&posterior.marginals)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok((gap, report))
}

pub fn validate_many(
    setup: &InstanceSetup,
    bp: &BpOptions,
    cap: usize,
    master: u64,
    instances: usize,
) -> Result<Vec<ValidationRow>> {
    if setup.n_items > cap {
        return Err(GtError::CapExceeded {
            n_items: setup.n_items,
            cap,
        });
    }
    (0..instances)
        .into_par_iter()
        .map(|i| {
            let (design, _, results) = setup.draw(master, i as u64)?;
            let options = BpOptions {
                seed: derive_seed(master, BP_STREAM, i as u64),
                ..*bp
            };
            let (max_gap, report) = oracle_gap(&design, &results, &setup.params, &options, cap)?;
            Ok(ValidationRow {
                instance: i,
                n_items: setup.n_items,
                max_gap,
                iterations: report.iterations,
                converged: report.converged,
            })
        })
        .collect()
}

/// Population names in the order used by [`IterationComparison`].
pub const POPULATIONS: [&str; 4] = ["pi_plus", "pi_minus", "pihat_plus", "pihat_minus"];

#[derive(Debug, Clone, Copy)]
pub struct CompareSetup {
    pub n_items: usize,
    pub degrees: Degrees,
    pub params: ModelParams,
    pub iterations: usize,
    pub n_pop: usize,
    pub bins: usize,
    pub sampling: SamplingMode,
}

#[derive(Debug, Clone)]
pub struct IterationComparison {
    pub iteration: usize,
    pub bp: [Histogram; 4],
    pub pd: [Histogram; 4],
    pub l1: [f64; 4],
}

impl IterationComparison {
    pub fn max_l1(&self) -> f64 {
        self.l1.iter().copied().fold(0.0, f64::max)
    }
}

/// Histograms of the item-to-pool and pool-to-item messages, split by the
/// true state of the item on the edge.
fn cavity_histograms(design: &PoolingDesign, truth: &GroundTruth, messages: &Messages, bins: usize) -> [Histogram; 4] {
    let k = design.pool_size();
    let mut split: [Vec<f64>; 4] = Default::default();
    for nu in 0..design.n_pools() {
        for (slot, &item) in design.pool(nu).iter().enumerate() {
            let e = nu * k + slot;
            let offset = if truth.states[item] { 0 } else { 1 };
            split[offset].push(messages.v_to_f[e]);
            split[2 + offset].push(messages.f_to_v[e]);
        }
    }
    split.map(|samples| Histogram::from_samples(&samples, bins))
}

fn population_histograms(pops: &Populations, bins: usize) -> [Histogram; 4] {
    [&pops.pi_plus, &pops.pi_minus, &pops.pihat_plus, &pops.pihat_minus].map(|p| Histogram::from_samples(p, bins))
}

/// Runs BP on one large instance and population dynamics in synchronous
/// generations from the same deterministic start, and compares their
/// histograms after every iteration. Entry 0 is the initial state.
pub fn compare_bp_pd(setup: &CompareSetup, master: u64) -> Result<Vec<IterationComparison>> {
    let k = setup.degrees.k;
    let n_pools = setup.n_items * setup.degrees.c / k;
    if n_pools * k != setup.n_items * setup.degrees.c {
        return Err(GtError::Divisibility {
            product: setup.n_items * setup.degrees.c,
            n_items: k,
        });
    }
    let instance = InstanceSetup {
        n_items: setup.n_items,
        n_pools,
        pool_size: k,
        params: setup.params,
        sampling: setup.sampling,
    };
    let (design, truth, results) = instance.draw(derive_seed(master, COMPARE_STREAM, 0), 0)?;
    let options = BpOptions {
        max_iter: setup.iterations,
        init: InitScheme::Prior,
        damping: 0.0,
        ..BpOptions::default()
    };
    let mut bp_hists = Vec::with_capacity(setup.iterations + 1);
    run_bp_observed(&design, &results, &setup.params, &options, |_, messages| {
        bp_hists.push(cavity_histograms(&design, &truth, messages, setup.bins));
        ControlFlow::Continue(())
    })?;
    // BP stops early at a fixed point; later iterations repeat it
    while bp_hists.len() <= setup.iterations {
        let last = bp_hists[bp_hists.len() - 1].clone();
        bp_hists.push(last);
    }

    let mut rng = rng_from_seed(derive_seed(master, COMPARE_STREAM, 1));
    let mut pops = Populations::new(setup.n_pop, setup.params.theta, PdInit::Deterministic, &mut rng);
    let mut out = Vec::with_capacity(setup.iterations + 1);
    for (iteration, bp) in bp_hists.into_iter().enumerate() {
        if iteration > 0 {
            pd_generation(&mut pops, &setup.params, setup.degrees, &mut rng);
        }
        let pd = population_histograms(&pops, setup.bins);
        let mut l1 = [0.0; 4];
        for j in 0..4 {
            l1[j] = bp[j].l1_distance(&pd[j])?;
        }
        out.push(IterationComparison { iteration, bp, pd, l1 });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_prevalence_takes_prior_state() {
        let risk = RiskParams::balanced();
        assert!(decide(&[0.0, 0.0], 0.0, &risk).unwrap().estimates.iter().all(|&x| !x));
        assert!(decide(&[1.0, 1.0], 1.0, &risk).unwrap().estimates.iter().all(|&x| x));
    }

    #[test]
    fn iteration_zero_matches_exactly() {
        let setup = CompareSetup {
            n_items: 2000,
            degrees: Degrees::new(10, 5).unwrap(),
            params: ModelParams::new(0.1, 0.9, 0.05).unwrap(),
            iterations: 2,
            n_pop: 5000,
            bins: 200,
            sampling: SamplingMode::Bernoulli,
        };
        let cmp = compare_bp_pd(&setup, 3).unwrap();
        assert_eq!(cmp.len(), 3);
        assert_eq!(cmp[0].l1, [0.0; 4]);
    }

    #[test]
    fn uninformative_test_keeps_histograms_identical() {
        let setup = CompareSetup {
            n_items: 1000,
            degrees: Degrees::new(4, 2).unwrap(),
            params: ModelParams::new(0.1, 0.5, 0.5).unwrap(),
            iterations: 4,
            n_pop: 1000,
            bins: 200,
            sampling: SamplingMode::Bernoulli,
        };
        for row in compare_bp_pd(&setup, 1).unwrap() {
            assert!(row.max_l1() < 1e-12, "iteration {}: {:?}", row.iteration, row.l1);
        }
    }

    #[test]
    fn forest_validation_is_exact() {
        let setup = InstanceSetup {
            n_items: 12,
            n_pools: 4,
            pool_size: 3,
            params: ModelParams::new(0.2, 0.85, 0.1).unwrap(),
            sampling: SamplingMode::Bernoulli,
        };
        let rows = validate_many(&setup, &BpOptions::default(), 20, 5, 5).unwrap();
        assert!(rows.iter().all(|r| r.max_gap < 1e-8));
        let big = InstanceSetup { n_items: 24, n_pools: 8, ..setup };
        assert!(matches!(
            validate_many(&big, &BpOptions::default(), 20, 5, 1),
            Err(GtError::CapExceeded { .. })
        ));
    }

    #[test]
    fn noiseless_simulation_recovers_truth() {
        let setup = InstanceSetup {
            n_items: 200,
            n_pools: 100,
            pool_size: 4,
            params: ModelParams::new(0.02, 1.0, 0.0).unwrap(),
            sampling: SamplingMode::Exact,
        };
        let sim = simulate_one(&setup, &BpOptions::default(), &RiskParams::balanced(), 4, 0).unwrap();
        let rates = empirical_rates(&sim.truth.states, &sim.decision).unwrap();
        assert_eq!(rates.fp_rate, 0.0);
        assert_eq!(rates.tp_rate, 1.0);
    }
}
