//! Acceptance gate. Every criterion runs at its stated tolerance and prints
//! one PASS/FAIL line; the binary exits non-zero if any criterion fails.
//!
//! Run a subset with `cargo test -p gt-validation --test acceptance -- 4 6`.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Duration;

use clap::Parser;
use gt_cli::config::linspace;
use gt_cli::experiments::{compare_bp_pd, simulate_many, CompareSetup, InstanceSetup};
use gt_core::bp::{run_bp, BpOptions};
use gt_core::channel::{sample_ground_truth, sample_results, ModelParams, SamplingMode};
use gt_core::decision::{apply_cutoff, optimal_cutoff, posterior_risk, RiskParams};
use gt_core::design::{generate_design, PoolingDesign};
use gt_core::metrics::posterior_auc;
use gt_core::oracle::exact_posterior;
use gt_core::popdyn::{phase_diagram, replica_distributions, replica_performance, Degrees, PdConfig, ReplicaPerformance, Verdict};
use gt_core::rng::rng_from_seed;
use gt_validation::{Check, Gate};
use rand::Rng;

const MINUTE: u64 = 60;
const PREVALENCES: [f64; 5] = [0.02, 0.04, 0.06, 0.08, 0.10];

fn minutes(m: u64) -> Duration {
    Duration::from_secs(m * MINUTE)
}

// ---------------------------------------------------------------------------
// test-side oracles

/// Posterior marginals by summing the joint over all `2^N` states.
fn brute_force_marginals(design: &PoolingDesign, outcomes: &[bool], params: &ModelParams) -> Vec<f64> {
    let n = design.n_items();
    let mut total = 0.0;
    let mut on = vec![0.0; n];
    for state in 0u32..(1 << n) {
        let defective = |i: usize| state >> i & 1 == 1;
        let mut w = 1.0;
        for i in 0..n {
            w *= if defective(i) { params.theta } else { 1.0 - params.theta };
        }
        for (pool, &y) in design.pools().iter().zip(outcomes) {
            let p_pos = if pool.iter().any(|&i| defective(i)) { params.p_tp } else { params.p_fp };
            w *= if y { p_pos } else { 1.0 - p_pos };
        }
        total += w;
        for (i, acc) in on.iter_mut().enumerate() {
            if defective(i) {
                *acc += w;
            }
        }
    }
    on.into_iter().map(|w| w / total).collect()
}

fn risk_of(marginals: &[f64], estimates: impl Iterator<Item = bool>, theta: f64, risk: &RiskParams) -> f64 {
    let n = marginals.len() as f64;
    let (mut missed, mut false_alarm) = (0.0, 0.0);
    for (&rho, x) in marginals.iter().zip(estimates) {
        if x {
            false_alarm += 1.0 - rho;
        } else {
            missed += rho;
        }
    }
    risk.lambda_fn * missed / (n * theta) + risk.lambda_fp * false_alarm / (n * (1.0 - theta))
}

/// Posterior AUC by the explicit double sum over ordered pairs `i ≠ j`.
fn pairwise_posterior_auc(rho: &[f64], scores: &[f64], theta: f64) -> f64 {
    let n = rho.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let order = if scores[i] > scores[j] {
                1.0
            } else if scores[i] == scores[j] {
                0.5
            } else {
                0.0
            };
            total += rho[i] * (1.0 - rho[j]) * order;
        }
    }
    total / ((n * n) as f64 * theta * (1.0 - theta))
}

// ---------------------------------------------------------------------------
// shared replica results at the Fig. 2 operating point

const FIG2_P_TP: f64 = 0.95;
const FIG2_P_FP: f64 = 0.1;
const REPLICA_SEED: u64 = 1;

fn fig2_degrees() -> Degrees {
    Degrees::from_alpha(0.5, 10).unwrap()
}

/// Full-preset population dynamics at each prevalence, computed once.
fn replicas() -> &'static [(f64, ReplicaPerformance)] {
    static CELL: OnceLock<Vec<(f64, ReplicaPerformance)>> = OnceLock::new();
    CELL.get_or_init(|| {
        PREVALENCES
            .iter()
            .map(|&theta| {
                let params = ModelParams::new(theta, FIG2_P_TP, FIG2_P_FP).unwrap();
                let (plus, minus) = replica_distributions(&params, fig2_degrees(), &PdConfig::full(REPLICA_SEED)).unwrap();
                (theta, replica_performance(&plus, &minus).unwrap())
            })
            .collect()
    })
}

fn replica_at(theta: f64) -> &'static ReplicaPerformance {
    &replicas().iter().find(|(t, _)| *t == theta).unwrap().1
}

// ---------------------------------------------------------------------------
// criteria

fn bp_exact_on_forests() -> Check {
    let mut rng = rng_from_seed(101);
    let (mut worst_library, mut worst_brute) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let k = rng.gen_range(2..=4);
        let m = rng.gen_range(4usize.div_ceil(k).max(2)..=16 / k);
        let n = m * k;
        let mut draw = || rng.gen_range(0.02..=0.98);
        let params = ModelParams::new(draw(), draw(), draw()).unwrap();
        let design = generate_design(n, m, k, rng.gen()).unwrap();
        let truth = sample_ground_truth(n, params.theta, SamplingMode::Bernoulli, rng.gen()).unwrap();
        let results = sample_results(&design, &truth, &params, rng.gen()).unwrap();

        let (bp, _) = run_bp(&design, &results, &params, &BpOptions::default()).unwrap();
        let exact = exact_posterior(&design, &results, &params).unwrap();
        let brute = brute_force_marginals(&design, &results.outcomes, &params);
        for i in 0..n {
            worst_library = worst_library.max((bp.marginals[i] - exact.marginals[i]).abs());
            worst_brute = worst_brute.max((bp.marginals[i] - brute[i]).abs());
        }
    }
    let worst = worst_library.max(worst_brute);
    Check::new(
        worst < 1e-8,
        format!("100 forests, max |BP - exact| = {worst_library:.1e}, vs direct sum {worst_brute:.1e} (tol 1e-8)"),
    )
}

fn cutoff_minimises_posterior_risk() -> Check {
    let mut rng = rng_from_seed(102);
    let mut violations = 0;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut worst_mismatch = 0.0f64;
    for instance in 0..500 {
        let n = rng.gen_range(1..=12);
        let theta = rng.gen_range(0.01..0.99);
        let risk = RiskParams::new(rng.gen_range(0.05..2.0), rng.gen_range(0.05..2.0)).unwrap();
        // every fourth instance pushes marginals towards 0 and 1
        let rho: Vec<f64> = (0..n)
            .map(|_| {
                let u: f64 = rng.gen();
                if instance % 4 == 0 {
                    u.powi(6)
                } else {
                    u
                }
            })
            .collect();
        let decision = apply_cutoff(&rho, optimal_cutoff(theta, &risk).unwrap());
        let ours = posterior_risk(&rho, &decision, theta, &risk).unwrap();
        worst_mismatch = worst_mismatch.max((ours - risk_of(&rho, decision.estimates.iter().copied(), theta, &risk)).abs());
        let best = (0u32..1 << n)
            .map(|mask| risk_of(&rho, (0..n).map(|i| mask >> i & 1 == 1), theta, &risk))
            .fold(f64::INFINITY, f64::min);
        let excess = ours - best;
        worst_excess = worst_excess.max(excess);
        if excess > 1e-12 * best.abs().max(1.0) {
            violations += 1;
        }
    }
    Check::new(
        violations == 0 && worst_mismatch < 1e-12,
        format!(
            "500 instances, {violations} beaten by some of the 2^N vectors; max excess {worst_excess:.1e}, risk formula mismatch {worst_mismatch:.1e}"
        ),
    )
}

fn marginals_maximise_posterior_auc() -> Check {
    let mut rng = rng_from_seed(103);
    let mut violations = 0;
    let mut comparisons = 0;
    let mut worst_oracle_gap = 0.0f64;
    for _ in 0..500 {
        let n = rng.gen_range(2..=50);
        let theta = rng.gen_range(0.02..0.98);
        let rho: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let best = posterior_auc(&rho, &rho, theta).unwrap();
        worst_oracle_gap = worst_oracle_gap.max((best - pairwise_posterior_auc(&rho, &rho, theta)).abs());
        for j in 0..100 {
            let scores: Vec<f64> = match j % 4 {
                0 => (0..n).map(|_| rng.gen()).collect(),
                // heavy ties
                1 => (0..n).map(|_| f64::from(rng.gen_range(0..4u8))).collect(),
                // a noisy version of the marginals
                2 => rho.iter().map(|r| r + rng.gen_range(-0.1..0.1)).collect(),
                // the marginals, coarsened
                _ => rho.iter().map(|r| (r * 5.0).floor()).collect(),
            };
            let other = posterior_auc(&rho, &scores, theta).unwrap();
            if j == 0 {
                worst_oracle_gap = worst_oracle_gap.max((other - pairwise_posterior_auc(&rho, &scores, theta)).abs());
            }
            comparisons += 1;
            if other > best + 1e-12 {
                violations += 1;
            }
        }
    }
    Check::new(
        violations == 0 && worst_oracle_gap < 1e-12,
        format!("{comparisons} comparisons, {violations} violations; pairwise-sum oracle gap {worst_oracle_gap:.1e}"),
    )
}

fn youden_cutoff_tracks_prevalence() -> Check {
    let mut worst = 0.0f64;
    let mut cells = Vec::new();
    for (theta, perf) in replicas() {
        let gap = (perf.youden_cutoff - theta).abs();
        worst = worst.max(gap);
        cells.push(format!("{theta}->{:.3}", perf.youden_cutoff));
    }
    Check::new(
        worst <= 0.02,
        format!("cutoffs {}; max |cutoff - theta| = {worst:.3} (tol 0.02)", cells.join(", ")),
    )
}

fn replica_auc_matches_bp() -> Check {
    let mut worst = 0.0f64;
    let mut cells = Vec::new();
    for &theta in &PREVALENCES {
        let setup = InstanceSetup {
            n_items: 1000,
            n_pools: 500,
            pool_size: 10,
            params: ModelParams::new(theta, FIG2_P_TP, FIG2_P_FP).unwrap(),
            sampling: SamplingMode::Bernoulli,
        };
        let samples = simulate_many(&setup, &BpOptions::default(), &RiskParams::balanced(), 1, 100).unwrap();
        let aucs: Vec<f64> = samples.iter().filter_map(|s| s.auc).collect();
        let bp = aucs.iter().sum::<f64>() / aucs.len() as f64;
        let pd = replica_at(theta).auc;
        worst = worst.max((pd - bp).abs());
        cells.push(format!("theta {theta}: PD {pd:.4} BP {bp:.4} ({} samples)", aucs.len()));
    }
    Check::new(
        worst <= 0.01,
        format!("{}; max diff {worst:.4} (tol 0.01)", cells.join(", ")),
    )
}

fn error_correction_region() -> Check {
    let rates = |theta: f64| {
        let perf = replica_at(theta);
        (perf.tp_at(perf.youden_cutoff), perf.fp_at(perf.youden_cutoff))
    };
    let (tp_low, fp_low) = rates(0.04);
    let (tp_high, fp_high) = rates(0.10);
    let corrected_low = tp_low > FIG2_P_TP && fp_low < FIG2_P_FP;
    let corrected_high = tp_high > FIG2_P_TP && fp_high < FIG2_P_FP;
    Check::new(
        corrected_low && !corrected_high,
        format!(
            "theta 0.04: TP {tp_low:.4} FP {fp_low:.4} (both improved: {corrected_low}); theta 0.10: TP {tp_high:.4} FP {fp_high:.4} (both improved: {corrected_high})"
        ),
    )
}

fn self_averaging_setup(n_items: usize) -> CompareSetup {
    CompareSetup {
        n_items,
        degrees: Degrees::from_alpha(0.5, 10).unwrap(),
        params: ModelParams::new(0.1, 0.9, 0.05).unwrap(),
        iterations: 6,
        n_pop: 1_000_000,
        bins: 200,
        sampling: SamplingMode::Bernoulli,
    }
}

fn self_averaging(n_items: usize) -> Check {
    let rows = compare_bp_pd(&self_averaging_setup(n_items), 7).unwrap();
    let per_iteration: Vec<f64> = rows[1..].iter().map(|r| r.max_l1()).collect();
    let worst = per_iteration.iter().copied().fold(0.0, f64::max);
    let listed: Vec<String> = per_iteration.iter().map(|d| format!("{d:.3}")).collect();
    Check::new(
        worst <= 0.05,
        format!(
            "N = {n_items}, max L1 over populations per iteration 1-6: [{}]; worst {worst:.3} (tol 0.05)",
            listed.join(", ")
        ),
    )
}

fn phase_region_shrinks() -> Check {
    let degrees = Degrees::from_alpha(0.5, 10).unwrap();
    let tp_grid = linspace(0.5, 1.0, 11);
    let fp_grid = linspace(0.0, 0.5, 11);
    let superior = |theta: f64| {
        phase_diagram(theta, degrees, &tp_grid, &fp_grid, &PdConfig::desk(3))
            .unwrap()
            .iter()
            .filter(|c| c.verdict == Verdict::Superior)
            .count()
    };
    let (low, high) = (superior(0.05), superior(0.07));
    Check::new(
        high <= low,
        format!("superior cells out of 121: theta 0.05 -> {low}, theta 0.07 -> {high}"),
    )
}

// ---------------------------------------------------------------------------
// determinism of the command-line outputs

fn gt(args: &[String]) {
    let mut argv = vec!["gt".to_string()];
    argv.extend(args.iter().cloned());
    let cli = gt_cli::Cli::try_parse_from(&argv).unwrap_or_else(|e| panic!("{argv:?}: {e}"));
    gt_cli::run(cli).unwrap_or_else(|e| panic!("{argv:?}: {e}"));
}

fn strings(args: &[&str]) -> Vec<String> {
    args.iter().map(|s| s.to_string()).collect()
}

/// One invocation of every command, writing below `root`; inputs are read
/// from `inputs` so that all runs see the same paths.
fn run_all_commands(root: &Path, inputs: &Path, jobs: Option<usize>) {
    let large = inputs.join("large");
    let small = inputs.join("small");
    let input = |dir: &Path, name: &str| dir.join(name).display().to_string();
    let model = ["--theta", "0.05", "--p-tp", "0.95", "--p-fp", "0.1"];
    let commands: Vec<(&str, Vec<String>)> = vec![
        ("design", strings(&["design", "--n", "1000", "--m", "500", "--k", "10", "--seed", "11"])),
        (
            "simulate",
            [strings(&["simulate", "--n", "1000", "--m", "500", "--k", "10", "--seed", "11"]), strings(&model)].concat(),
        ),
        (
            "simulate_many",
            [strings(&["simulate", "--samples", "6", "--n", "200", "--m", "100", "--k", "10", "--seed", "12"]), strings(&model)]
                .concat(),
        ),
        (
            "infer_bp",
            [
                strings(&["infer", "--design"]),
                vec![input(&large, "design.json"), "--results".into(), input(&large, "results.csv")],
                strings(&model),
            ]
            .concat(),
        ),
        (
            "infer_exact",
            [
                strings(&["infer", "--engine", "exact", "--design"]),
                vec![input(&small, "design.json"), "--results".into(), input(&small, "results.csv")],
                strings(&model),
            ]
            .concat(),
        ),
        (
            "decide",
            [
                strings(&["decide", "--theta", "0.05", "--marginals"]),
                vec![input(&large, "posterior.csv"), "--truth".into(), input(&large, "truth.csv")],
            ]
            .concat(),
        ),
        (
            "roc",
            [
                strings(&["roc", "--theta", "0.05", "--scores"]),
                vec![input(&large, "posterior.csv"), "--truth".into(), input(&large, "truth.csv")],
            ]
            .concat(),
        ),
        (
            "pd",
            [strings(&["pd", "--seed", "13", "--n-pop", "2000", "--sweeps", "40", "--n-eval", "5000"]), strings(&model)].concat(),
        ),
        (
            "phase",
            strings(&[
                "phase", "--seed", "14", "--theta", "0.05", "--p-tp-points", "3", "--p-fp-points", "3", "--n-pop", "1000",
                "--sweeps", "20", "--n-eval", "2000",
            ]),
        ),
        (
            "validate",
            [strings(&["validate", "--seed", "15", "--n", "12", "--m", "4", "--k", "3", "--instances", "20"]), strings(&model)]
                .concat(),
        ),
        (
            "compare",
            strings(&["compare-bp-pd", "--seed", "16", "--n", "2000", "--iterations", "3", "--n-pop", "20000"]),
        ),
    ];
    for (name, mut args) in commands {
        args.extend(["--out-dir".to_string(), root.join(name).display().to_string()]);
        if let Some(jobs) = jobs {
            args.extend(["--jobs".to_string(), jobs.to_string()]);
        }
        gt(&args);
    }
}

fn files_below(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(files_below(&path));
        } else {
            out.push(path);
        }
    }
    out.sort();
    out
}

fn byte_identical_outputs() -> Check {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = tmp.path().join("inputs");
    let model = ["--theta", "0.05", "--p-tp", "0.95", "--p-fp", "0.1"];
    let out_dir = |d: &Path| ["--out-dir".to_string(), d.display().to_string()];
    gt(&[strings(&["simulate", "--seed", "21"]), strings(&model), out_dir(&inputs.join("large")).to_vec()].concat());
    gt(&[
        strings(&["simulate", "--seed", "22", "--n", "12", "--m", "4", "--k", "3"]),
        strings(&model),
        out_dir(&inputs.join("small")).to_vec(),
    ]
    .concat());

    let runs = [("first", None), ("rerun", None), ("one_job", Some(1)), ("three_jobs", Some(3))];
    for (name, jobs) in runs {
        run_all_commands(&tmp.path().join(name), &inputs, jobs);
    }
    let reference = tmp.path().join("first");
    let files = files_below(&reference);
    let mut differing = Vec::new();
    for (name, _) in &runs[1..] {
        let other = tmp.path().join(name);
        if files_below(&other).len() != files.len() {
            differing.push(format!("{name}: different file set"));
        }
        for file in &files {
            let twin = other.join(file.strip_prefix(&reference).unwrap());
            if std::fs::read(file).unwrap() != std::fs::read(&twin).unwrap_or_default() {
                differing.push(format!("{name}: {}", twin.strip_prefix(tmp.path()).unwrap().display()));
            }
        }
    }
    Check::new(
        differing.is_empty() && !files.is_empty(),
        if differing.is_empty() {
            format!("{} output files identical across a rerun, --jobs 1 and --jobs 3", files.len())
        } else {
            format!("differences: {}", differing.join("; "))
        },
    )
}

fn main() -> std::process::ExitCode {
    let mut gate = Gate::from_args();
    gate.run("1", "BP exact on forests", minutes(1), bp_exact_on_forests);
    gate.run("2", "cutoff minimises posterior risk", minutes(2), cutoff_minimises_posterior_risk);
    gate.run("3", "marginals maximise posterior AUC", minutes(1), marginals_maximise_posterior_auc);
    gate.run("4", "youden cutoff tracks prevalence", minutes(10), youden_cutoff_tracks_prevalence);
    gate.run("5", "replica AUC matches BP", minutes(20), replica_auc_matches_bp);
    gate.run("6", "error correction region", minutes(5), error_correction_region);
    gate.run("7", "BP-PD self-averaging at N = 5e4", minutes(10), || self_averaging(50_000));
    gate.run("7-large", "BP-PD self-averaging at N = 5e5", minutes(10), || self_averaging(500_000));
    gate.run("8", "effective region shrinks with prevalence", minutes(30), phase_region_shrinks);
    gate.run("9", "byte-identical outputs", minutes(5), byte_identical_outputs);
    gate.finish()
}
