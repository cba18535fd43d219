//! Loopy belief propagation on the pooling factor graph.
//!
//! Messages are Bernoulli parameters living on the edges of the design. Edges
//! are stored pool-major: the edge joining pool `ν` and the item in slot `s`
//! of that pool has index `ν * K + s`.
//!
//! * `v_to_f[e]` is `m_{i→ν}`, the probability that item `i` is defective
//!   given every test except `ν` (the F-cavity field).
//! * `f_to_v[e]` is `m̃_{ν→i}`, the belief about item `i` sent by test `ν`
//!   alone (the V-cavity field).
//!
//! One iteration first recomputes every `f_to_v` from the previous `v_to_f`
//! and then every `v_to_f` from the fresh `f_to_v`.

use std::ops::ControlFlow;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{ModelParams, TestResults};
use crate::design::PoolingDesign;
use crate::error::{GtError, Result};
use crate::rng::rng_from_seed;

/// Messages are kept inside `[EPS_CLAMP, 1 - EPS_CLAMP]`.
pub const EPS_CLAMP: f64 = 1e-12;

const PAR_MIN_LEN: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitScheme {
    /// `v_to_f ≡ θ`, `f_to_v ≡ 1/2`.
    Prior,
    /// i.i.d. uniform on `[0, 1]` (clamped).
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Messages {
    pub v_to_f: Vec<f64>,
    pub f_to_v: Vec<f64>,
}

impl Messages {
    /// Index of the edge between `pool` and `item`, if they are joined.
    pub fn edge(design: &PoolingDesign, pool: usize, item: usize) -> Option<usize> {
        design
            .pool(pool)
            .iter()
            .position(|&i| i == item)
            .map(|s| pool * design.pool_size() + s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deltas {
    /// L2 norm of the change in `v_to_f`.
    pub d_v_to_f: f64,
    /// L2 norm of the change in `f_to_v`.
    pub d_f_to_v: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub marginals: Vec<f64>,
    pub log_bayes_factors: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub iterations: usize,
    pub final_deltas: Deltas,
    pub converged: bool,
    pub damping_used: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BpOptions {
    /// Stop once both deltas fall below `N * M * eps`.
    pub eps: f64,
    pub max_iter: usize,
    pub damping: f64,
    pub init: InitScheme,
    /// Only used by [`InitScheme::Random`].
    pub seed: u64,
}

impl Default for BpOptions {
    fn default() -> Self {
        Self {
            eps: 1e-12,
            max_iter: 1000,
            damping: 0.0,
            init: InitScheme::Prior,
            seed: 0,
        }
    }
}

fn clamp(p: f64) -> f64 {
    p.clamp(EPS_CLAMP, 1.0 - EPS_CLAMP)
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn init_messages(design: &PoolingDesign, params: &ModelParams, scheme: InitScheme, seed: u64) -> Messages {
    let n_edges = design.n_edges();
    match scheme {
        InitScheme::Prior => Messages {
            v_to_f: vec![clamp(params.theta); n_edges],
            f_to_v: vec![0.5; n_edges],
        },
        InitScheme::Random => {
            let mut rng = rng_from_seed(seed);
            let v_to_f = (0..n_edges).map(|_| clamp(rng.gen::<f64>())).collect();
            let f_to_v = (0..n_edges).map(|_| clamp(rng.gen::<f64>())).collect();
            Messages { v_to_f, f_to_v }
        }
    }
}

/// Per-item lists of edge indices, in membership order.
struct ItemEdges {
    offsets: Vec<usize>,
    edges: Vec<usize>,
    edge_item: Vec<usize>,
}

impl ItemEdges {
    fn new(design: &PoolingDesign) -> Self {
        let k = design.pool_size();
        let mut per_item: Vec<Vec<usize>> = vec![Vec::new(); design.n_items()];
        let mut edge_item = Vec::with_capacity(design.n_edges());
        for (nu, pool) in design.pools().iter().enumerate() {
            for (s, &i) in pool.iter().enumerate() {
                per_item[i].push(nu * k + s);
                edge_item.push(i);
            }
        }
        let mut offsets = Vec::with_capacity(design.n_items() + 1);
        let mut edges = Vec::with_capacity(design.n_edges());
        offsets.push(0);
        for list in per_item {
            edges.extend(list);
            offsets.push(edges.len());
        }
        Self {
            offsets,
            edges,
            edge_item,
        }
    }

    fn of(&self, item: usize) -> &[usize] {
        &self.edges[self.offsets[item]..self.offsets[item + 1]]
    }
}

/// Leave-one-out products of `factors` into `out`. Divides the full product
/// by each factor unless some factor is tiny, then uses prefix/suffix products.
fn leave_one_out_products(factors: &[f64], out: &mut [f64]) {
    if factors.iter().all(|&f| f >= EPS_CLAMP) {
        let total: f64 = factors.iter().product();
        for (o, &f) in out.iter_mut().zip(factors) {
            *o = total / f;
        }
    } else {
        let mut prefix = 1.0;
        for (o, &f) in out.iter_mut().zip(factors) {
            *o = prefix;
            prefix *= f;
        }
        let mut suffix = 1.0;
        for (o, &f) in out.iter_mut().zip(factors).rev() {
            *o *= suffix;
            suffix *= f;
        }
    }
}

/// `m̃ = U / (U(2 - q) + W q)` with `q = Π_{j≠i}(1 - m_{j→ν})`.
fn pool_to_item(u: f64, w: f64, q: f64) -> f64 {
    let den = u * (2.0 - q) + w * q;
    if den > 0.0 {
        u / den
    } else {
        0.5
    }
}

fn l2_change(new: &[f64], old: &[f64]) -> f64 {
    new.iter()
        .zip(old)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

struct Engine<'a> {
    design: &'a PoolingDesign,
    params: ModelParams,
    /// `(U_ν, W_ν)` per pool.
    uw: Vec<(f64, f64)>,
    item_edges: ItemEdges,
}

impl<'a> Engine<'a> {
    fn new(design: &'a PoolingDesign, results: &TestResults, params: &ModelParams) -> Result<Self> {
        if results.outcomes.len() != design.n_pools() {
            return Err(GtError::LengthMismatch {
                expected: design.n_pools(),
                actual: results.outcomes.len(),
            });
        }
        let uw = results
            .outcomes
            .iter()
            .map(|&y| (params.positive_pool_likelihood(y), params.negative_pool_likelihood(y)))
            .collect();
        Ok(Self {
            design,
            params: *params,
            uw,
            item_edges: ItemEdges::new(design),
        })
    }

    fn check_shape(&self, messages: &Messages) -> Result<()> {
        let n_edges = self.design.n_edges();
        for len in [messages.v_to_f.len(), messages.f_to_v.len()] {
            if len != n_edges {
                return Err(GtError::LengthMismatch {
                    expected: n_edges,
                    actual: len,
                });
            }
        }
        Ok(())
    }

    fn update_f_to_v(&self, v_to_f: &[f64], old: &[f64], damping: f64) -> Vec<f64> {
        let k = self.design.pool_size();
        let mut out = vec![0.0; v_to_f.len()];
        out.par_chunks_mut(k)
            .with_min_len(PAR_MIN_LEN / k.max(1))
            .enumerate()
            .for_each(|(nu, chunk)| {
                let (u, w) = self.uw[nu];
                let base = nu * k;
                let factors: Vec<f64> = v_to_f[base..base + k].iter().map(|m| 1.0 - m).collect();
                leave_one_out_products(&factors, chunk);
                for (s, slot) in chunk.iter_mut().enumerate() {
                    let fresh = pool_to_item(u, w, *slot);
                    *slot = clamp((1.0 - damping) * fresh + damping * old[base + s]);
                }
            });
        out
    }

    /// `logit θ + Σ_{η∈G(i)} logit m̃_{η→i}` per item.
    fn item_fields(&self, f_to_v: &[f64]) -> Vec<f64> {
        let prior = logit(self.params.theta);
        (0..self.design.n_items())
            .into_par_iter()
            .with_min_len(PAR_MIN_LEN)
            .map(|i| prior + self.item_edges.of(i).iter().map(|&e| logit(f_to_v[e])).sum::<f64>())
            .collect()
    }

    fn update_v_to_f(&self, f_to_v: &[f64], old: &[f64], damping: f64) -> Vec<f64> {
        let fields = self.item_fields(f_to_v);
        (0..f_to_v.len())
            .into_par_iter()
            .with_min_len(PAR_MIN_LEN)
            .map(|e| {
                let i = self.item_edges.edge_item[e];
                let fresh = sigmoid(fields[i] - logit(f_to_v[e]));
                clamp((1.0 - damping) * fresh + damping * old[e])
            })
            .collect()
    }

    fn step(&self, messages: &Messages, damping: f64, iteration: usize) -> Result<(Messages, Deltas)> {
        let f_to_v = self.update_f_to_v(&messages.v_to_f, &messages.f_to_v, damping);
        let v_to_f = self.update_v_to_f(&f_to_v, &messages.v_to_f, damping);
        if f_to_v.iter().chain(&v_to_f).any(|m| !m.is_finite()) {
            return Err(GtError::NumericalBreakdown { iteration });
        }
        let deltas = Deltas {
            d_v_to_f: l2_change(&v_to_f, &messages.v_to_f),
            d_f_to_v: l2_change(&f_to_v, &messages.f_to_v),
        };
        Ok((Messages { v_to_f, f_to_v }, deltas))
    }

    fn posterior(&self, messages: &Messages) -> Posterior {
        let log_bayes_factors: Vec<f64> = (0..self.design.n_items())
            .map(|i| self.item_edges.of(i).iter().map(|&e| logit(messages.f_to_v[e])).sum())
            .collect();
        let prior = logit(self.params.theta);
        let marginals = log_bayes_factors.iter().map(|&b| sigmoid(prior + b)).collect();
        Posterior {
            marginals,
            log_bayes_factors,
        }
    }
}

fn check_damping(damping: f64) -> Result<()> {
    if (0.0..1.0).contains(&damping) {
        Ok(())
    } else {
        Err(GtError::InvalidParameter {
            name: "damping",
            value: damping,
            reason: "must lie in [0, 1)",
        })
    }
}

/// One synchronous BP iteration with damping
/// `new = (1 - damping) * update + damping * old`.
pub fn bp_step(
    messages: &Messages,
    design: &PoolingDesign,
    results: &TestResults,
    params: &ModelParams,
    damping: f64,
) -> Result<(Messages, Deltas)> {
    check_damping(damping)?;
    let engine = Engine::new(design, results, params)?;
    engine.check_shape(messages)?;
    engine.step(messages, damping, 1)
}

/// Marginals and Bayes factors implied by a set of messages.
pub fn posterior_from_messages(
    messages: &Messages,
    design: &PoolingDesign,
    results: &TestResults,
    params: &ModelParams,
) -> Result<Posterior> {
    let engine = Engine::new(design, results, params)?;
    engine.check_shape(messages)?;
    Ok(engine.posterior(messages))
}

pub fn run_bp(
    design: &PoolingDesign,
    results: &TestResults,
    params: &ModelParams,
    options: &BpOptions,
) -> Result<(Posterior, ConvergenceReport)> {
    run_bp_observed(design, results, params, options, |_, _| ControlFlow::Continue(()))
}

/// Like [`run_bp`], calling `observer(t, messages)` on the initial messages
/// (`t = 0`) and after every iteration. Returning `Break` stops the loop.
pub fn run_bp_observed<F>(
    design: &PoolingDesign,
    results: &TestResults,
    params: &ModelParams,
    options: &BpOptions,
    mut observer: F,
) -> Result<(Posterior, ConvergenceReport)>
where
    F: FnMut(usize, &Messages) -> ControlFlow<()>,
{
    check_damping(options.damping)?;
    if options.eps.is_nan() || options.eps <= 0.0 {
        return Err(GtError::InvalidParameter {
            name: "eps",
            value: options.eps,
            reason: "must be positive",
        });
    }
    let engine = Engine::new(design, results, params)?;
    let threshold = (design.n_items() * design.n_pools()) as f64 * options.eps;
    let mut messages = init_messages(design, params, options.init, options.seed);
    let mut report = ConvergenceReport {
        iterations: 0,
        final_deltas: Deltas {
            d_v_to_f: f64::INFINITY,
            d_f_to_v: f64::INFINITY,
        },
        converged: false,
        damping_used: options.damping,
    };
    if observer(0, &messages).is_continue() {
        for t in 1..=options.max_iter {
            let (next, deltas) = engine.step(&messages, options.damping, t)?;
            messages = next;
            report.iterations = t;
            report.final_deltas = deltas;
            report.converged = deltas.d_v_to_f < threshold && deltas.d_f_to_v < threshold;
            if observer(t, &messages).is_break() || report.converged {
                break;
            }
        }
    }
    if !report.converged {
        log::debug!("BP stopped after {} iterations without converging", report.iterations);
    }
    Ok((engine.posterior(&messages), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{sample_ground_truth, sample_results, SamplingMode};
    use crate::design::generate_design;
    use crate::oracle::exact_posterior;

    fn instance(n: usize, m: usize, k: usize, params: &ModelParams, seed: u64) -> (PoolingDesign, TestResults) {
        let d = generate_design(n, m, k, seed).unwrap();
        let t = sample_ground_truth(n, params.theta, SamplingMode::Bernoulli, seed + 1).unwrap();
        let r = sample_results(&d, &t, params, seed + 2).unwrap();
        (d, r)
    }

    #[test]
    fn prior_init_values() {
        let d = generate_design(20, 10, 4, 0).unwrap();
        let p = ModelParams::new(0.05, 0.9, 0.1).unwrap();
        let m = init_messages(&d, &p, InitScheme::Prior, 0);
        assert!(m.v_to_f.iter().all(|&v| v == 0.05));
        assert!(m.f_to_v.iter().all(|&v| v == 0.5));
        assert_eq!(m.v_to_f.len(), d.n_edges());
    }

    #[test]
    fn random_init_is_reproducible() {
        let d = generate_design(20, 10, 4, 0).unwrap();
        let p = ModelParams::new(0.05, 0.9, 0.1).unwrap();
        let a = init_messages(&d, &p, InitScheme::Random, 5);
        assert_eq!(a, init_messages(&d, &p, InitScheme::Random, 5));
        assert_ne!(a, init_messages(&d, &p, InitScheme::Random, 6));
        assert!(a.v_to_f.iter().chain(&a.f_to_v).all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn single_item_pool_message() {
        let d = PoolingDesign::from_pools(1, vec![vec![0]]).unwrap();
        let r = TestResults { outcomes: vec![true] };
        let p = ModelParams::new(0.1, 0.9, 0.05).unwrap();
        let m = init_messages(&d, &p, InitScheme::Prior, 0);
        let (next, _) = bp_step(&m, &d, &r, &p, 0.0).unwrap();
        assert!((next.f_to_v[0] - 0.9 / 0.95).abs() < 1e-15);
        let (post, _) = run_bp(&d, &r, &p, &BpOptions::default()).unwrap();
        let exact = exact_posterior(&d, &r, &p).unwrap();
        assert!((post.marginals[0] - exact.marginals[0]).abs() < 1e-12);
        assert!((post.marginals[0] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn saturated_neighbours_send_half() {
        let d = PoolingDesign::from_pools(3, vec![vec![0, 1, 2]]).unwrap();
        let r = TestResults { outcomes: vec![true] };
        let p = ModelParams::new(0.1, 0.9, 0.05).unwrap();
        let mut m = init_messages(&d, &p, InitScheme::Prior, 0);
        m.v_to_f = vec![0.3, 1.0, 1.0];
        let (next, _) = bp_step(&m, &d, &r, &p, 0.0).unwrap();
        // edge 0 sees q = 0 from the two certain neighbours
        assert!((next.f_to_v[0] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn uninformative_test_gives_half_messages() {
        let p = ModelParams::new(0.2, 0.7, 0.7).unwrap();
        let (d, r) = instance(40, 20, 6, &p, 3);
        let m = init_messages(&d, &p, InitScheme::Random, 1);
        let (next, _) = bp_step(&m, &d, &r, &p, 0.0).unwrap();
        assert!(next.f_to_v.iter().all(|&v| (v - 0.5).abs() < 1e-15));
        let (post, report) = run_bp(&d, &r, &p, &BpOptions::default()).unwrap();
        assert!(report.converged);
        assert!(post.marginals.iter().all(|&m| (m - 0.2).abs() < 1e-8));
    }

    #[test]
    fn noiseless_negative_pool_clears_members() {
        let p = ModelParams::new(0.1, 1.0, 0.0).unwrap();
        let (d, r) = instance(60, 30, 6, &p, 8);
        let (post, _) = run_bp(&d, &r, &p, &BpOptions::default()).unwrap();
        for nu in (0..d.n_pools()).filter(|&nu| !r.outcomes[nu]) {
            for &i in d.pool(nu) {
                assert!(post.marginals[i] < 1e-10, "item {i}: {}", post.marginals[i]);
            }
        }
    }

    #[test]
    fn forest_matches_oracle() {
        for seed in 0..20 {
            let p = ModelParams::new(0.15, 0.85, 0.12).unwrap();
            let (d, r) = instance(12, 4, 3, &p, seed * 10);
            let (post, report) = run_bp(&d, &r, &p, &BpOptions::default()).unwrap();
            assert!(report.converged);
            let exact = exact_posterior(&d, &r, &p).unwrap();
            for (a, b) in post.marginals.iter().zip(&exact.marginals) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn odds_identity() {
        let p = ModelParams::new(0.08, 0.9, 0.05).unwrap();
        let (d, r) = instance(200, 100, 8, &p, 1);
        let (post, _) = run_bp(&d, &r, &p, &BpOptions::default()).unwrap();
        let prior = logit(p.theta);
        for (m, bf) in post.marginals.iter().zip(&post.log_bayes_factors) {
            if *m > 1e-6 && *m < 1.0 - 1e-6 {
                assert!((bf - (logit(*m) - prior)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn fixed_point_is_damping_invariant() {
        let p = ModelParams::new(0.05, 0.95, 0.1).unwrap();
        let (d, r) = instance(100, 50, 10, &p, 4);
        let engine = Engine::new(&d, &r, &p).unwrap();
        let mut m = init_messages(&d, &p, InitScheme::Prior, 0);
        for t in 1..=2000 {
            let (next, deltas) = engine.step(&m, 0.0, t).unwrap();
            m = next;
            if deltas.d_f_to_v == 0.0 && deltas.d_v_to_f == 0.0 {
                break;
            }
        }
        for damping in [0.0, 0.3, 0.9] {
            let (_, deltas) = bp_step(&m, &d, &r, &p, damping).unwrap();
            assert!(deltas.d_v_to_f < 1e-12 && deltas.d_f_to_v < 1e-12, "{deltas:?}");
        }
    }

    #[test]
    fn relabelling_permutes_marginals() {
        let p = ModelParams::new(0.1, 0.9, 0.05).unwrap();
        let (d, r) = instance(30, 15, 6, &p, 6);
        let item_perm: Vec<usize> = (0..30).map(|i| (i * 7) % 30).collect();
        let pool_perm: Vec<usize> = (0..15).map(|nu| (nu * 4) % 15).collect();
        let d2 = d.relabel(&item_perm, &pool_perm).unwrap();
        let mut outcomes = vec![false; 15];
        for (old, &y) in r.outcomes.iter().enumerate() {
            outcomes[pool_perm[old]] = y;
        }
        let r2 = TestResults { outcomes };
        let opts = BpOptions::default();
        let (a, _) = run_bp(&d, &r, &p, &opts).unwrap();
        let (b, _) = run_bp(&d2, &r2, &p, &opts).unwrap();
        for i in 0..30 {
            // summation order follows the labels, so allow rounding
            assert!((a.marginals[i] - b.marginals[item_perm[i]]).abs() < 1e-12);
        }
    }

    #[test]
    fn damping_must_be_below_one() {
        let p = ModelParams::new(0.1, 0.9, 0.05).unwrap();
        let (d, r) = instance(20, 10, 4, &p, 6);
        let m = init_messages(&d, &p, InitScheme::Prior, 0);
        assert!(bp_step(&m, &d, &r, &p, 1.0).is_err());
        let opts = BpOptions {
            eps: 0.0,
            ..BpOptions::default()
        };
        assert!(run_bp(&d, &r, &p, &opts).is_err());
    }

    #[test]
    fn non_convergence_is_reported_not_raised() {
        let p = ModelParams::new(0.2, 0.9, 0.1).unwrap();
        let (d, r) = instance(100, 50, 10, &p, 2);
        let opts = BpOptions {
            max_iter: 1,
            ..BpOptions::default()
        };
        let (post, report) = run_bp(&d, &r, &p, &opts).unwrap();
        assert_eq!(report.iterations, 1);
        assert!(!report.converged);
        assert_eq!(post.marginals.len(), 100);
    }

    #[test]
    fn division_and_prefix_products_agree() {
        let factors = [0.3, 0.9, 0.5, 0.7];
        let mut a = [0.0; 4];
        leave_one_out_products(&factors, &mut a);
        let mut b = [0.0; 4];
        leave_one_out_products(&[0.3, 0.9, 0.0, 0.7], &mut b);
        assert!((a[2] - 0.3 * 0.9 * 0.7).abs() < 1e-15);
        assert!((b[2] - 0.3 * 0.9 * 0.7).abs() < 1e-15);
        assert_eq!(b[0], 0.0);
    }
}
