//! Population dynamics for the replica-symmetric fixed point.
//!
//! Four populations approximate the cavity-field distributions conditioned
//! on the true state: `π(μ|1)`, `π(μ|0)` (item to pool) and `π̂(μ̂|1)`,
//! `π̂(μ̂|0)` (pool to item). Iterating the distributional equations gives
//! the asymptotic distributions of the posterior marginals for defective and
//! non-defective items, from which replica ROC curves and effectiveness
//! phase diagrams follow without looking at any particular instance.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ModelParams;
use crate::error::{GtError, Result};
use crate::metrics::{
    auc_from_roc, distribution_grid, effectiveness, roc_from_distributions, uniform_grid, Effectiveness, RocCurve,
    WeightedSamples,
};
use crate::rng::{derive_seed, rng_from_seed, GtRng};

/// Seed stream used for the evaluation draws of a run.
const EVAL_STREAM: u64 = 1;
/// Seed stream used for per-cell seeds of a phase diagram.
const PHASE_STREAM: u64 = 2;

/// Youden plateaus at or below this height are reported as ill-defined.
pub const YOUDEN_FLAT_TOL: f64 = 1e-12;

/// A combined message together with a flag raised when the formula was
/// indeterminate and a fallback value was returned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Combined {
    pub value: f64,
    pub degenerate: bool,
}

/// Item-side combination `θ∏μ̂ / ((1-θ)∏(1-μ̂) + θ∏μ̂)`, evaluated in log space.
///
/// Returns `θ` flagged as degenerate when both products vanish.
pub fn mu_combine(muhat: &[f64], theta: f64) -> Combined {
    let mut on = theta.ln();
    let mut off = (1.0 - theta).ln();
    for &m in muhat {
        on += m.ln();
        off += (1.0 - m).ln();
    }
    if on == f64::NEG_INFINITY && off == f64::NEG_INFINITY {
        return Combined {
            value: theta,
            degenerate: true,
        };
    }
    let value = if on >= off {
        1.0 / (1.0 + (off - on).exp())
    } else {
        let r = (on - off).exp();
        r / (1.0 + r)
    };
    Combined {
        value,
        degenerate: false,
    }
}

/// Pool-side combination `a / (a + a(1-q) + b q)` with `q = ∏(1-μ)`.
///
/// `(a, b)` is `(p_tp, p_fp)` for a positive outcome and
/// `(1-p_tp, 1-p_fp)` for a negative one. A zero denominator returns 0,
/// flagged.
pub fn muhat_combine(a: f64, b: f64, mu: &[f64]) -> Combined {
    let q: f64 = mu.iter().map(|m| 1.0 - m).product();
    let denom = a + a * (1.0 - q) + b * q;
    if denom == 0.0 {
        return Combined {
            value: 0.0,
            degenerate: true,
        };
    }
    Combined {
        value: a / denom,
        degenerate: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PdInit {
    /// `π ≡ θ`, `π̂ ≡ 1/2`, matching the BP prior initialisation.
    Deterministic,
    /// Independent uniform values on `[0, 1]`.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdConfig {
    pub n_pop: usize,
    /// One sweep is `n_pop` single replacements in every population.
    pub sweeps: usize,
    pub n_eval: usize,
    pub seed: u64,
    pub histogram_bins: usize,
    pub init: PdInit,
}

impl PdConfig {
    /// `N_π = 10⁴`, `T = 10⁷` replacements, `R = 10⁵`.
    pub fn full(seed: u64) -> Self {
        Self {
            n_pop: 10_000,
            sweeps: 1000,
            n_eval: 100_000,
            seed,
            histogram_bins: 200,
            init: PdInit::Deterministic,
        }
    }

    /// Reduced preset for quick runs and CI.
    pub fn desk(seed: u64) -> Self {
        Self {
            n_pop: 2000,
            sweeps: 200,
            n_eval: 20_000,
            ..Self::full(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("n_pop", self.n_pop),
            ("sweeps", self.sweeps),
            ("n_eval", self.n_eval),
            ("histogram_bins", self.histogram_bins),
        ];
        for (name, value) in fields {
            if value == 0 {
                return Err(GtError::InvalidParameter {
                    name,
                    value: 0.0,
                    reason: "must be positive",
                });
            }
        }
        Ok(())
    }
}

impl Default for PdConfig {
    fn default() -> Self {
        Self::full(0)
    }
}

/// Pool size and item degree of the ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Degrees {
    pub k: usize,
    pub c: usize,
}

impl Degrees {
    pub fn new(k: usize, c: usize) -> Result<Self> {
        if k == 0 || c == 0 {
            return Err(GtError::InvalidDesignParams(format!("K = {k} and C = {c} must be positive")));
        }
        Ok(Self { k, c })
    }

    /// `C = αK`, which must be an integer.
    pub fn from_alpha(alpha: f64, k: usize) -> Result<Self> {
        let c = alpha * k as f64;
        let rounded = c.round();
        if !(alpha > 0.0) || (c - rounded).abs() > 1e-9 {
            return Err(GtError::InvalidDesignParams(format!("alpha * K = {c} is not a positive integer")));
        }
        Self::new(k, rounded as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Populations {
    pub pi_plus: Vec<f64>,
    pub pi_minus: Vec<f64>,
    pub pihat_plus: Vec<f64>,
    pub pihat_minus: Vec<f64>,
    /// Number of indeterminate combinations replaced by their fallback.
    pub degenerate_events: u64,
}

impl Populations {
    pub fn new(n_pop: usize, theta: f64, init: PdInit, rng: &mut GtRng) -> Self {
        match init {
            PdInit::Deterministic => Self {
                pi_plus: vec![theta; n_pop],
                pi_minus: vec![theta; n_pop],
                pihat_plus: vec![0.5; n_pop],
                pihat_minus: vec![0.5; n_pop],
                degenerate_events: 0,
            },
            PdInit::Random => {
                let mut draw = || (0..n_pop).map(|_| rng.gen::<f64>()).collect::<Vec<_>>();
                Self {
                    pi_plus: draw(),
                    pi_minus: draw(),
                    pihat_plus: draw(),
                    pihat_minus: draw(),
                    degenerate_events: 0,
                }
            }
        }
    }

    pub fn n_pop(&self) -> usize {
        self.pi_plus.len()
    }
}

fn pick(pop: &[f64], rng: &mut GtRng) -> f64 {
    pop[rng.gen_range(0..pop.len())]
}

/// Fills `buf` with draws from `π̂` and returns `μ(·, θ)`.
fn sample_mu(pihat: &[f64], count: usize, theta: f64, buf: &mut Vec<f64>, rng: &mut GtRng) -> Combined {
    buf.clear();
    buf.extend((0..count).map(|_| pick(pihat, rng)));
    mu_combine(buf, theta)
}

/// One pool-side draw. Neighbour states are Bernoulli(θ) with cavity values
/// from the matching `π`; the outcome is positive with probability
/// `p_tp` when the focal item is defective, and with `p_tp` or `p_fp`
/// depending on the neighbours otherwise.
fn sample_muhat(
    pi_plus: &[f64],
    pi_minus: &[f64],
    focal_defective: bool,
    params: &ModelParams,
    k: usize,
    buf: &mut Vec<f64>,
    rng: &mut GtRng,
) -> Combined {
    buf.clear();
    let mut any_defective = false;
    for _ in 0..k - 1 {
        let u = rng.gen::<f64>() < params.theta;
        any_defective |= u;
        buf.push(pick(if u { pi_plus } else { pi_minus }, rng));
    }
    let p_positive = if focal_defective || any_defective {
        params.p_tp
    } else {
        params.p_fp
    };
    if rng.gen::<f64>() < p_positive {
        muhat_combine(params.p_tp, params.p_fp, buf)
    } else {
        muhat_combine(1.0 - params.p_tp, 1.0 - params.p_fp, buf)
    }
}

/// One replacement in each of the four populations: `π±` first, then `π̂±`.
pub fn pd_step(pops: &mut Populations, params: &ModelParams, degrees: Degrees, rng: &mut GtRng) {
    let mut buf = Vec::with_capacity(degrees.k.max(degrees.c));
    let n = pops.n_pop();
    let theta = params.theta;

    let plus = sample_mu(&pops.pihat_plus, degrees.c - 1, theta, &mut buf, rng);
    pops.pi_plus[rng.gen_range(0..n)] = plus.value;
    let minus = sample_mu(&pops.pihat_minus, degrees.c - 1, theta, &mut buf, rng);
    pops.pi_minus[rng.gen_range(0..n)] = minus.value;

    let hat_plus = sample_muhat(&pops.pi_plus, &pops.pi_minus, true, params, degrees.k, &mut buf, rng);
    pops.pihat_plus[rng.gen_range(0..n)] = hat_plus.value;
    let hat_minus = sample_muhat(&pops.pi_plus, &pops.pi_minus, false, params, degrees.k, &mut buf, rng);
    pops.pihat_minus[rng.gen_range(0..n)] = hat_minus.value;

    pops.degenerate_events += [plus, minus, hat_plus, hat_minus]
        .iter()
        .filter(|c| c.degenerate)
        .count() as u64;
}

/// Initialises populations and runs `sweeps * n_pop` replacement steps.
pub fn run_pd(params: &ModelParams, degrees: Degrees, config: &PdConfig) -> Result<Populations> {
    config.validate()?;
    let mut rng = rng_from_seed(config.seed);
    let mut pops = Populations::new(config.n_pop, params.theta, config.init, &mut rng);
    for _ in 0..config.sweeps * config.n_pop {
        pd_step(&mut pops, params, degrees, &mut rng);
    }
    if pops.degenerate_events > 0 {
        log::warn!("{} indeterminate combinations replaced by fallbacks", pops.degenerate_events);
    }
    Ok(pops)
}

/// One synchronous generation: every `π̂` entry is redrawn from the current
/// `π`, then every `π` entry from the new `π̂`. This is the distributional
/// counterpart of one BP iteration under the same schedule.
pub fn pd_generation(pops: &mut Populations, params: &ModelParams, degrees: Degrees, rng: &mut GtRng) {
    let n = pops.n_pop();
    let mut buf = Vec::with_capacity(degrees.k.max(degrees.c));
    let mut degenerate = 0u64;
    let mut fresh = |pops: &Populations, defective: bool, rng: &mut GtRng, buf: &mut Vec<f64>| {
        let c = sample_muhat(&pops.pi_plus, &pops.pi_minus, defective, params, degrees.k, buf, rng);
        degenerate += u64::from(c.degenerate);
        c.value
    };
    let hat_plus: Vec<f64> = (0..n).map(|_| fresh(pops, true, rng, &mut buf)).collect();
    let hat_minus: Vec<f64> = (0..n).map(|_| fresh(pops, false, rng, &mut buf)).collect();
    pops.pihat_plus = hat_plus;
    pops.pihat_minus = hat_minus;
    for (pi, pihat) in [(&mut pops.pi_plus, &pops.pihat_plus), (&mut pops.pi_minus, &pops.pihat_minus)] {
        for slot in pi.iter_mut() {
            let c = sample_mu(pihat, degrees.c - 1, params.theta, &mut buf, rng);
            degenerate += u64::from(c.degenerate);
            *slot = c.value;
        }
    }
    pops.degenerate_events += degenerate;
}

/// Normalised histogram on uniform bins over `[0, 1]`; the value 1 falls in
/// the last bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub masses: Vec<f64>,
}

impl Histogram {
    pub fn from_samples(samples: &[f64], bins: usize) -> Self {
        let mut counts = vec![0u64; bins];
        for &s in samples {
            let b = ((s * bins as f64) as usize).min(bins - 1);
            counts[b] += 1;
        }
        let total = samples.len().max(1) as f64;
        Self {
            edges: uniform_grid(bins + 1),
            masses: counts.iter().map(|&c| c as f64 / total).collect(),
        }
    }

    pub fn bins(&self) -> usize {
        self.masses.len()
    }

    /// `Σ |p_b - q_b|` over matching bins.
    pub fn l1_distance(&self, other: &Histogram) -> Result<f64> {
        if self.bins() != other.bins() {
            return Err(GtError::LengthMismatch {
                expected: self.bins(),
                actual: other.bins(),
            });
        }
        Ok(self.masses.iter().zip(&other.masses).map(|(p, q)| (p - q).abs()).sum())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RhoDistribution {
    pub samples: Vec<f64>,
    pub histogram: Histogram,
}

impl RhoDistribution {
    pub fn weighted(&self) -> Result<WeightedSamples> {
        WeightedSamples::from_samples(&self.samples)
    }
}

/// Draws `n_eval` posterior marginals for defective (`plus`) and
/// non-defective (`minus`) items by combining `C` pool-side fields.
pub fn sample_rho_distributions(
    pops: &Populations,
    degrees: Degrees,
    theta: f64,
    n_eval: usize,
    bins: usize,
    seed: u64,
) -> (RhoDistribution, RhoDistribution) {
    let mut rng = rng_from_seed(seed);
    let mut buf = Vec::with_capacity(degrees.c);
    let mut draw = |pihat: &[f64], rng: &mut GtRng| {
        let samples: Vec<f64> = (0..n_eval)
            .map(|_| sample_mu(pihat, degrees.c, theta, &mut buf, rng).value)
            .collect();
        let histogram = Histogram::from_samples(&samples, bins);
        RhoDistribution { samples, histogram }
    };
    let plus = draw(&pops.pihat_plus, &mut rng);
    let minus = draw(&pops.pihat_minus, &mut rng);
    (plus, minus)
}

/// Final populations of a run and the marginal distributions drawn from them.
#[derive(Debug, Clone)]
pub struct ReplicaRun {
    pub populations: Populations,
    pub plus: RhoDistribution,
    pub minus: RhoDistribution,
}

/// Runs population dynamics and the evaluation stage with seeds derived from
/// `config.seed`.
pub fn run_replica(params: &ModelParams, degrees: Degrees, config: &PdConfig) -> Result<ReplicaRun> {
    let populations = run_pd(params, degrees, config)?;
    let (plus, minus) = sample_rho_distributions(
        &populations,
        degrees,
        params.theta,
        config.n_eval,
        config.histogram_bins,
        derive_seed(config.seed, EVAL_STREAM, 0),
    );
    Ok(ReplicaRun {
        populations,
        plus,
        minus,
    })
}

/// [`run_replica`] without the populations.
pub fn replica_distributions(
    params: &ModelParams,
    degrees: Degrees,
    config: &PdConfig,
) -> Result<(RhoDistribution, RhoDistribution)> {
    let run = run_replica(params, degrees, config)?;
    Ok((run.plus, run.minus))
}

#[derive(Debug, Clone)]
pub struct ReplicaPerformance {
    pub auc: f64,
    pub roc: RocCurve,
    pub youden_cutoff: f64,
    pub youden_index: f64,
    /// Set when `TP - FP` never rises above [`YOUDEN_FLAT_TOL`], so no
    /// cutoff separates the two distributions.
    pub youden_ill_defined: bool,
    plus: WeightedSamples,
    minus: WeightedSamples,
}

impl ReplicaPerformance {
    pub fn tp_at(&self, cutoff: f64) -> f64 {
        self.plus.mass_above(cutoff)
    }

    pub fn fp_at(&self, cutoff: f64) -> f64 {
        self.minus.mass_above(cutoff)
    }
}

/// Replica ROC, AUC and Youden-optimal cutoff.
///
/// The cutoff maximises `TP(τ) - FP(τ)` over a `10⁻³` grid; on a plateau of
/// maximisers the midpoint of the first plateau is reported.
pub fn replica_performance(plus: &RhoDistribution, minus: &RhoDistribution) -> Result<ReplicaPerformance> {
    let plus = plus.weighted()?;
    let minus = minus.weighted()?;
    let roc = roc_from_distributions(&plus, &minus, &distribution_grid(&plus, &minus));
    let auc = auc_from_roc(&roc);

    let grid = uniform_grid(1001);
    let youden: Vec<f64> = grid.iter().map(|&t| plus.mass_above(t) - minus.mass_above(t)).collect();
    let best = youden.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let first = youden.iter().position(|&j| j == best).unwrap_or(0);
    let last = first + youden[first..].iter().take_while(|&&j| j == best).count() - 1;
    let youden_ill_defined = best <= YOUDEN_FLAT_TOL;
    let youden_cutoff = if youden_ill_defined {
        0.5
    } else {
        (grid[first] + grid[last]) / 2.0
    };

    Ok(ReplicaPerformance {
        auc,
        roc,
        youden_cutoff,
        youden_index: best.max(0.0),
        youden_ill_defined,
        plus,
        minus,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Superior,
    Inferior,
    Boundary,
    Failed,
}

impl From<Effectiveness> for Verdict {
    fn from(e: Effectiveness) -> Self {
        match e {
            Effectiveness::Superior => Verdict::Superior,
            Effectiveness::Inferior => Verdict::Inferior,
            Effectiveness::Boundary => Verdict::Boundary,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseCell {
    pub p_tp: f64,
    pub p_fp: f64,
    pub verdict: Verdict,
}

fn phase_cell(theta: f64, p_tp: f64, p_fp: f64, degrees: Degrees, config: &PdConfig) -> Result<Verdict> {
    let params = ModelParams::new(theta, p_tp, p_fp)?;
    let (plus, minus) = replica_distributions(&params, degrees, config)?;
    let perf = replica_performance(&plus, &minus)?;
    Ok(effectiveness(&perf.roc, p_fp, p_tp).into())
}

/// Effectiveness of group testing against the single test over a grid of
/// `(p_tp, p_fp)`. Cells are independent and run in parallel on the current
/// rayon pool, each with its own seed derived from `(config.seed, cell)`.
///
/// Cells come back in row-major order over `p_tp_grid` then `p_fp_grid`.
pub fn phase_diagram(
    theta: f64,
    degrees: Degrees,
    p_tp_grid: &[f64],
    p_fp_grid: &[f64],
    config: &PdConfig,
) -> Result<Vec<PhaseCell>> {
    config.validate()?;
    let coords: Vec<(f64, f64)> = p_tp_grid
        .iter()
        .flat_map(|&tp| p_fp_grid.iter().map(move |&fp| (tp, fp)))
        .collect();
    let cells = coords
        .par_iter()
        .enumerate()
        .map(|(idx, &(p_tp, p_fp))| {
            let cell_config = PdConfig {
                seed: derive_seed(config.seed, PHASE_STREAM, idx as u64),
                ..*config
            };
            let verdict = phase_cell(theta, p_tp, p_fp, degrees, &cell_config).unwrap_or_else(|e| {
                log::warn!("phase cell p_tp={p_tp} p_fp={p_fp} failed: {e}");
                Verdict::Failed
            });
            PhaseCell { p_tp, p_fp, verdict }
        })
        .collect();
    Ok(cells)
}
