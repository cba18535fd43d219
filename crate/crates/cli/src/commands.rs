//! One function per subcommand: resolve the config, run, write files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gt_core::bp::run_bp;
use gt_core::channel::{ModelParams, TestResults};
use gt_core::decision::{apply_cutoff, bf_decision, empirical_rates, optimal_cutoff, posterior_risk, Decision};
use gt_core::design::generate_design;
use gt_core::metrics::{auc_from_roc, empirical_auc, posterior_auc, roc_from_samples, uniform_grid};
use gt_core::oracle::exact_posterior_with_cap;
use gt_core::popdyn::{phase_diagram, replica_performance, run_replica, Verdict};
use serde::Serialize;
use serde_json::json;

use crate::args::{Cli, Command, GlobalArgs};
use crate::config::{
    linspace, resolve, CompareConfig, DecideConfig, DesignConfig, Engine, InferConfig, Meta, PdCommandConfig, PhaseConfig,
    Preset, RocConfig, Rule, SimulateConfig, ValidateConfig,
};
use crate::experiments::{
    self, compare_bp_pd, simulate_many, simulate_one, summarize, validate_many, CompareSetup, InstanceSetup, POPULATIONS,
};
use crate::io::{bool_cell, digest_file, fmt_f64, load_design, read_f64_column, read_indexed_bools, OutputDir};
use crate::{CliError, CliResult};

/// Runs the parsed command line, inside a thread pool when `--jobs` is set,
/// and returns the files written.
pub fn run(cli: Cli) -> CliResult<Vec<PathBuf>> {
    match cli.global.jobs {
        Some(0) => Err(CliError::Usage("--jobs must be positive".into())),
        Some(jobs) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build()
                .map_err(|e| CliError::Usage(e.to_string()))?;
            pool.install(|| dispatch(&cli.global, &cli.command))
        }
        None => dispatch(&cli.global, &cli.command),
    }
}

fn dispatch(global: &GlobalArgs, command: &Command) -> CliResult<Vec<PathBuf>> {
    let file = global.config.as_deref();
    let out = match command {
        Command::Design(a) => design(resolve(file, a, global.seed)?, &global.out_dir)?,
        Command::Simulate(a) => simulate(resolve(file, a, global.seed)?, &global.out_dir)?,
        Command::Infer(a) => infer(resolve(file, a, global.seed)?, &global.out_dir)?,
        Command::Decide(a) => decide(resolve(file, a, global.seed)?, &global.out_dir)?,
        Command::Roc(a) => roc(resolve(file, a, global.seed)?, &global.out_dir)?,
        Command::Pd(a) => pd(resolve(file, a, global.seed)?, &global.out_dir)?,
        Command::Phase(a) => phase(resolve(file, a, global.seed)?, &global.out_dir)?,
        Command::Validate(a) => validate(resolve(file, a, global.seed)?, &global.out_dir)?,
        Command::CompareBpPd(a) => compare(resolve(file, a, global.seed)?, &global.out_dir)?,
    };
    Ok(out.written().to_vec())
}

fn no_inputs() -> BTreeMap<String, String> {
    BTreeMap::new()
}

fn design(cfg: DesignConfig, dir: &Path) -> CliResult<OutputDir> {
    let d = generate_design(cfg.n, cfg.m, cfg.k, cfg.seed)?;
    let mut out = OutputDir::new(dir, Meta::new("design", &cfg, cfg.seed, no_inputs()))?;
    out.json("design.json", &d.to_raw())?;
    Ok(out)
}

fn write_posterior(out: &mut OutputDir, marginals: &[f64], log_bf: &[f64]) -> CliResult<()> {
    let rows = marginals
        .iter()
        .zip(log_bf)
        .enumerate()
        .map(|(i, (&m, &b))| vec![i.to_string(), fmt_f64(m), fmt_f64(b)]);
    out.csv("posterior.csv", &["item", "marginal", "log_bf"], rows)
}

fn write_decision(out: &mut OutputDir, decision: &Decision) -> CliResult<()> {
    let rows = decision
        .estimates
        .iter()
        .enumerate()
        .map(|(i, &x)| vec![i.to_string(), bool_cell(x)]);
    out.csv("decision.csv", &["item", "estimate"], rows)
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn simulate(cfg: SimulateConfig, dir: &Path) -> CliResult<OutputDir> {
    let params = cfg.model()?;
    let setup = InstanceSetup {
        n_items: cfg.n,
        n_pools: cfg.m,
        pool_size: cfg.k,
        params,
        sampling: cfg.sampling,
    };
    let risk = gt_core::decision::RiskParams::new(cfg.lambda_fn, cfg.lambda_fp)?;
    let bp = cfg.bp.options(0);
    let mut out = OutputDir::new(dir, Meta::new("simulate", &cfg, cfg.seed, no_inputs()))?;

    let summaries = if cfg.samples == 1 {
        let sim = simulate_one(&setup, &bp, &risk, cfg.seed, 0)?;
        out.json("design.json", &sim.design.to_raw())?;
        out.indexed_bools("truth.csv", &sim.truth.states)?;
        out.indexed_bools("results.csv", &sim.results.outcomes)?;
        write_posterior(&mut out, &sim.posterior.marginals, &sim.posterior.log_bayes_factors)?;
        out.json("convergence.json", &json!({ "engine": "bp", "report": sim.report }))?;
        write_decision(&mut out, &sim.decision)?;
        vec![summarize(0, &sim, params.theta)]
    } else {
        simulate_many(&setup, &bp, &risk, cfg.seed, cfg.samples)?
    };

    let rows = summaries.iter().map(|s| {
        vec![
            s.sample.to_string(),
            s.n_defective.to_string(),
            s.iterations.to_string(),
            bool_cell(s.converged),
            opt(s.auc),
            opt(s.posterior_auc),
            opt(s.rates.map(|r| r.tp_rate)),
            opt(s.rates.map(|r| r.fp_rate)),
            s.n_positive_estimates.to_string(),
        ]
    });
    out.csv(
        "samples.csv",
        &[
            "sample",
            "n_defective",
            "iterations",
            "converged",
            "auc",
            "posterior_auc",
            "tp_rate",
            "fp_rate",
            "n_positive",
        ],
        rows,
    )?;
    let cutoff = if params.theta > 0.0 && params.theta < 1.0 {
        Some(optimal_cutoff(params.theta, &risk)?)
    } else {
        None
    };
    out.json(
        "summary.json",
        &json!({
            "samples": summaries.len(),
            "cutoff": cutoff,
            "mean_auc": mean(summaries.iter().filter_map(|s| s.auc)),
            "mean_posterior_auc": mean(summaries.iter().filter_map(|s| s.posterior_auc)),
            "mean_tp_rate": mean(summaries.iter().filter_map(|s| s.rates.map(|r| r.tp_rate))),
            "mean_fp_rate": mean(summaries.iter().filter_map(|s| s.rates.map(|r| r.fp_rate))),
            "converged": summaries.iter().filter(|s| s.converged).count(),
        }),
    )?;
    Ok(out)
}

fn infer(cfg: InferConfig, dir: &Path) -> CliResult<OutputDir> {
    let params = ModelParams::new(cfg.theta, cfg.p_tp, cfg.p_fp)?;
    let design = load_design(&cfg.design)?;
    let outcomes = read_indexed_bools(&cfg.results)?;
    if outcomes.len() != design.n_pools() {
        return Err(CliError::input(
            &cfg.results,
            format!("{} results for {} pools", outcomes.len(), design.n_pools()),
        ));
    }
    let results = TestResults { outcomes };
    let mut inputs = BTreeMap::new();
    inputs.insert("design".to_string(), digest_file(&cfg.design)?);
    inputs.insert("results".to_string(), digest_file(&cfg.results)?);
    let mut out = OutputDir::new(dir, Meta::new("infer", &cfg, cfg.seed, inputs))?;
    match cfg.engine {
        Engine::Bp => {
            let (posterior, report) = run_bp(&design, &results, &params, &cfg.bp.options(cfg.seed))?;
            if !report.converged {
                log::warn!("BP did not converge in {} iterations", report.iterations);
            }
            write_posterior(&mut out, &posterior.marginals, &posterior.log_bayes_factors)?;
            out.json("convergence.json", &json!({ "engine": "bp", "report": report }))?;
        }
        Engine::Exact => {
            let exact = exact_posterior_with_cap(&design, &results, &params, cfg.cap)?;
            write_posterior(&mut out, &exact.marginals, &exact.log_bayes_factors)?;
            out.json(
                "convergence.json",
                &json!({ "engine": "exact", "log_evidence": exact.log_evidence }),
            )?;
        }
    }
    Ok(out)
}

fn decide(cfg: DecideConfig, dir: &Path) -> CliResult<OutputDir> {
    let risk = cfg.risk()?;
    let marginals = read_f64_column(&cfg.marginals, "marginal")?;
    let mut inputs = BTreeMap::new();
    inputs.insert("marginals".to_string(), digest_file(&cfg.marginals)?);
    let decision = match (cfg.rule, cfg.cutoff) {
        (Rule::Marginal, Some(cutoff)) => apply_cutoff(&marginals, cutoff),
        (Rule::Marginal, None) => experiments::decide(&marginals, cfg.theta, &risk)?,
        (Rule::BayesFactor, None) => bf_decision(&read_f64_column(&cfg.marginals, "log_bf")?, &risk),
        (Rule::BayesFactor, Some(_)) => {
            return Err(CliError::Usage("--cutoff applies to the marginal rule only".into()))
        }
    };
    let rates = match &cfg.truth {
        Some(path) => {
            inputs.insert("truth".to_string(), digest_file(path)?);
            let truth = read_indexed_bools(path)?;
            Some(empirical_rates(&truth, &decision)?)
        }
        None => None,
    };
    let mut out = OutputDir::new(dir, Meta::new("decide", &cfg, cfg.seed, inputs))?;
    write_decision(&mut out, &decision)?;
    out.json(
        "decision.json",
        &json!({
            "threshold": decision.threshold,
            "n_positive": decision.estimates.iter().filter(|&&x| x).count(),
            "posterior_risk": posterior_risk(&marginals, &decision, cfg.theta, &risk).ok(),
            "rates": rates,
        }),
    )?;
    Ok(out)
}

fn roc(cfg: RocConfig, dir: &Path) -> CliResult<OutputDir> {
    let truth = read_indexed_bools(&cfg.truth)?;
    let scores = read_f64_column(&cfg.scores, &cfg.column)?;
    let mut inputs = BTreeMap::new();
    inputs.insert("truth".to_string(), digest_file(&cfg.truth)?);
    inputs.insert("scores".to_string(), digest_file(&cfg.scores)?);
    let mut grid = uniform_grid(cfg.grid_points);
    grid.extend_from_slice(&scores);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let curve = roc_from_samples(&truth, &scores, &grid)?;
    let mut out = OutputDir::new(dir, Meta::new("roc", &cfg, cfg.seed, inputs))?;
    let rows = curve
        .cutoffs
        .iter()
        .zip(&curve.points)
        .map(|(&c, p)| vec![fmt_f64(c), fmt_f64(p.fp), fmt_f64(p.tp)]);
    out.csv("roc.csv", &["cutoff", "fp", "tp"], rows)?;
    let posterior = match cfg.theta {
        Some(theta) => Some(posterior_auc(&scores, &scores, theta)?),
        None => None,
    };
    out.json(
        "roc_summary.json",
        &json!({
            "auc": auc_from_roc(&curve),
            "empirical_auc": empirical_auc(&truth, &scores)?,
            "posterior_auc": posterior,
        }),
    )?;
    Ok(out)
}

#[derive(Serialize)]
struct PdSummary {
    auc: f64,
    youden_cutoff: f64,
    youden_index: f64,
    youden_ill_defined: bool,
    tp_at_youden: f64,
    fp_at_youden: f64,
    degenerate_events: u64,
}

fn pd(mut cfg: PdCommandConfig, dir: &Path) -> CliResult<OutputDir> {
    let params = ModelParams::new(cfg.theta, cfg.p_tp, cfg.p_fp)?;
    let (degrees, pd_config) = cfg.run.finalize(Preset::Full, cfg.seed)?;
    let run = run_replica(&params, degrees, &pd_config)?;
    let perf = replica_performance(&run.plus, &run.minus)?;
    let mut out = OutputDir::new(dir, Meta::new("pd", &cfg, cfg.seed, no_inputs()))?;

    let (hp, hm) = (&run.plus.histogram, &run.minus.histogram);
    let rows = (0..hp.bins()).map(|b| {
        vec![
            fmt_f64(hp.edges[b]),
            fmt_f64(hp.edges[b + 1]),
            fmt_f64(hp.masses[b]),
            fmt_f64(hm.masses[b]),
        ]
    });
    out.csv("rho.csv", &["bin_lo", "bin_hi", "mass_plus", "mass_minus"], rows)?;
    let rows = uniform_grid(1001)
        .into_iter()
        .map(|t| vec![fmt_f64(t), fmt_f64(perf.fp_at(t)), fmt_f64(perf.tp_at(t))]);
    out.csv("roc.csv", &["cutoff", "fp", "tp"], rows)?;
    out.json(
        "pd_summary.json",
        &PdSummary {
            auc: perf.auc,
            youden_cutoff: perf.youden_cutoff,
            youden_index: perf.youden_index,
            youden_ill_defined: perf.youden_ill_defined,
            tp_at_youden: perf.tp_at(perf.youden_cutoff),
            fp_at_youden: perf.fp_at(perf.youden_cutoff),
            degenerate_events: run.populations.degenerate_events,
        },
    )?;
    Ok(out)
}

fn verdict_name(v: Verdict) -> &'static str {
    match v {
        Verdict::Superior => "superior",
        Verdict::Inferior => "inferior",
        Verdict::Boundary => "boundary",
        Verdict::Failed => "failed",
    }
}

fn phase(mut cfg: PhaseConfig, dir: &Path) -> CliResult<OutputDir> {
    let (degrees, pd_config) = cfg.run.finalize(Preset::Desk, cfg.seed)?;
    let tp_grid = linspace(cfg.p_tp_min, cfg.p_tp_max, cfg.p_tp_points);
    let fp_grid = linspace(cfg.p_fp_min, cfg.p_fp_max, cfg.p_fp_points);
    let cells = phase_diagram(cfg.theta, degrees, &tp_grid, &fp_grid, &pd_config)?;
    let mut out = OutputDir::new(dir, Meta::new("phase", &cfg, cfg.seed, no_inputs()))?;
    let rows = cells
        .iter()
        .map(|c| vec![fmt_f64(c.p_tp), fmt_f64(c.p_fp), verdict_name(c.verdict).to_string()]);
    out.csv("phase.csv", &["p_tp", "p_fp", "verdict"], rows)?;
    let count = |v: Verdict| cells.iter().filter(|c| c.verdict == v).count();
    out.json(
        "phase_summary.json",
        &json!({
            "superior": count(Verdict::Superior),
            "inferior": count(Verdict::Inferior),
            "boundary": count(Verdict::Boundary),
            "failed": count(Verdict::Failed),
        }),
    )?;
    Ok(out)
}

fn validate(cfg: ValidateConfig, dir: &Path) -> CliResult<OutputDir> {
    let setup = InstanceSetup {
        n_items: cfg.n,
        n_pools: cfg.m,
        pool_size: cfg.k,
        params: ModelParams::new(cfg.theta, cfg.p_tp, cfg.p_fp)?,
        sampling: gt_core::channel::SamplingMode::Bernoulli,
    };
    let rows = validate_many(&setup, &cfg.bp.options(0), cfg.cap, cfg.seed, cfg.instances)?;
    let mut out = OutputDir::new(dir, Meta::new("validate", &cfg, cfg.seed, no_inputs()))?;
    let table = rows.iter().map(|r| {
        vec![
            r.instance.to_string(),
            r.n_items.to_string(),
            fmt_f64(r.max_gap),
            r.iterations.to_string(),
            bool_cell(r.converged),
            bool_cell(r.max_gap <= cfg.tolerance),
        ]
    });
    out.csv(
        "validate.csv",
        &["instance", "n_items", "max_gap", "iterations", "converged", "pass"],
        table,
    )?;
    let worst = rows.iter().map(|r| r.max_gap).fold(0.0, f64::max);
    out.json(
        "validate_summary.json",
        &json!({
            "instances": rows.len(),
            "max_gap": worst,
            "tolerance": cfg.tolerance,
            "failures": rows.iter().filter(|r| r.max_gap > cfg.tolerance).count(),
        }),
    )?;
    Ok(out)
}

fn compare(mut cfg: CompareConfig, dir: &Path) -> CliResult<OutputDir> {
    let degrees = cfg.degrees()?;
    let setup = CompareSetup {
        n_items: cfg.n,
        degrees,
        params: ModelParams::new(cfg.theta, cfg.p_tp, cfg.p_fp)?,
        iterations: cfg.iterations,
        n_pop: cfg.n_pop,
        bins: cfg.bins,
        sampling: cfg.sampling,
    };
    let rows = compare_bp_pd(&setup, cfg.seed)?;
    let mut out = OutputDir::new(dir, Meta::new("compare-bp-pd", &cfg, cfg.seed, no_inputs()))?;
    let distances = rows.iter().flat_map(|r| {
        POPULATIONS
            .iter()
            .zip(r.l1)
            .map(move |(name, l1)| vec![r.iteration.to_string(), name.to_string(), fmt_f64(l1)])
    });
    out.csv("compare.csv", &["iteration", "population", "l1"], distances)?;
    let mut hist_rows = Vec::new();
    for r in &rows {
        for (j, name) in POPULATIONS.iter().enumerate() {
            for (source, h) in [("bp", &r.bp[j]), ("pd", &r.pd[j])] {
                for b in 0..h.bins() {
                    hist_rows.push(vec![
                        r.iteration.to_string(),
                        name.to_string(),
                        source.to_string(),
                        fmt_f64(h.edges[b]),
                        fmt_f64(h.edges[b + 1]),
                        fmt_f64(h.masses[b]),
                    ]);
                }
            }
        }
    }
    out.csv(
        "histograms.csv",
        &["iteration", "population", "source", "bin_lo", "bin_hi", "mass"],
        hist_rows,
    )?;
    out.json(
        "compare_summary.json",
        &json!({
            "max_l1_per_iteration": rows.iter().map(|r| r.max_l1()).collect::<Vec<_>>(),
            "max_l1": rows.iter().skip(1).map(|r| r.max_l1()).fold(0.0, f64::max),
        }),
    )?;
    Ok(out)
}
