use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mscs_core::engine::criterion_value;
use mscs_core::sim::{run_simulation_alphas, scenario_params};
use mscs_core::{
    build_mscs, fit, EmConfig, MixtureParams, MscsError, MscsOptions, MscsResult, PenaltyKind,
    SimConfig, SimResult,
};
use serde::{Deserialize, Serialize};

mod plot;
mod report;

use plot::{curves_csv, grid, histogram_csv, scenario_range, Curve};
use report::{emit_json, emit_text, read_input, DataSummary, Report, RunManifest};

#[derive(Parser)]
#[command(name = "mscs", version, about = "Confidence sets for the order of a Gaussian mixture")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one mixture order to a data file.
    Fit(FitArgs),
    /// Build the confidence set of mixture orders for a data file.
    Mscs(MscsArgs),
    /// Run the coverage study on a built-in scenario.
    Simulate(SimArgs),
    /// Write density curves (and optional histogram counts) as CSV.
    PlotDensity(PlotArgs),
}

#[derive(Args)]
struct EmFlags {
    /// EM restarts per order.
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct FitArgs {
    input: PathBuf,
    #[arg(long, short)]
    k: usize,
    #[command(flatten)]
    em: EmFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MscsArgs {
    input: PathBuf,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    kmax: Option<usize>,
    #[arg(long)]
    penalty: Option<PenaltyKind>,
    #[arg(long = "ref")]
    ref_kind: Option<PenaltyKind>,
    #[arg(long)]
    mc_draws: Option<usize>,
    #[command(flatten)]
    em: EmFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimArgs {
    /// JSON file with a simulation config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<u32>,
    #[arg(long)]
    n: Option<usize>,
    /// Number of replicates.
    #[arg(long = "B")]
    b: Option<usize>,
    /// One or more levels, comma separated.
    #[arg(long, value_delimiter = ',')]
    alpha: Vec<f64>,
    #[arg(long)]
    kmax: Option<usize>,
    #[arg(long)]
    penalty: Option<PenaltyKind>,
    #[arg(long = "ref")]
    ref_kind: Option<PenaltyKind>,
    #[arg(long)]
    mc_draws: Option<usize>,
    #[command(flatten)]
    em: EmFlags,
    /// Also print a summary table to stderr.
    #[arg(long)]
    table: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// Built-in scenario id.
    #[arg(long, conflicts_with = "report", required_unless_present = "report")]
    scenario: Option<u32>,
    /// A report written by `fit` or `mscs`.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Orders to draw from an mscs report; defaults to the confidence set.
    #[arg(long, value_delimiter = ',')]
    orders: Vec<usize>,
    /// Data file for the grid range and histogram counts.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    points: usize,
    #[arg(long)]
    bins: Option<usize>,
    /// Where to write histogram counts; required with --data.
    #[arg(long)]
    hist_out: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FitReport {
    k: usize,
    params: MixtureParams,
    loglik: f64,
    aic: f64,
    bic: f64,
    tic: Option<f64>,
    tic_error: Option<String>,
    n_iter: usize,
    converged: bool,
    n_restarts_used: usize,
    degenerate_restarts: usize,
    data: DataSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MscsReport {
    data: DataSummary,
    mscs: MscsResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SimReport {
    config: SimConfig,
    alphas: Vec<f64>,
    results: Vec<SimResult>,
}

fn em_config(flags: &EmFlags, base: EmConfig) -> EmConfig {
    EmConfig {
        n_restarts: flags.restarts.unwrap_or(base.n_restarts),
        seed: flags.seed.unwrap_or(base.seed),
        ..base
    }
}

fn cmd_fit(a: &FitArgs) -> Result<()> {
    let input = read_input(&a.input)?;
    let s = &input.sample;
    let em = em_config(&a.em, EmConfig::default());
    let f = fit(s, a.k, &em)?;
    let (tic, tic_error) = match criterion_value(&f, PenaltyKind::Tic, s) {
        Ok(v) => (Some(v), None),
        Err(e) => {
            log::warn!("TIC unavailable: {e}");
            (None, Some(e.to_string()))
        }
    };
    let result = FitReport {
        k: f.k(),
        aic: criterion_value(&f, PenaltyKind::Aic, s)?,
        bic: criterion_value(&f, PenaltyKind::Bic, s)?,
        tic,
        tic_error,
        loglik: f.loglik,
        n_iter: f.n_iter,
        converged: f.converged,
        n_restarts_used: f.n_restarts_used,
        degenerate_restarts: f.degenerate_restarts,
        params: f.params,
        data: DataSummary::of(s),
    };
    let manifest = RunManifest::new(
        "fit",
        serde_json::json!({ "k": a.k, "em": em }),
        vec![("em".into(), em.seed)],
        Some(&input),
    )?;
    emit_json(&Report { manifest, result }, a.out.as_deref())
}

fn cmd_mscs(a: &MscsArgs) -> Result<()> {
    let input = read_input(&a.input)?;
    let d = MscsOptions::default();
    let mut opts = MscsOptions {
        k_max: a.kmax.unwrap_or(d.k_max),
        alpha: a.alpha.unwrap_or(d.alpha),
        penalty: a.penalty.unwrap_or(d.penalty),
        ref_kind: a.ref_kind.unwrap_or(d.ref_kind),
        em: em_config(&a.em, d.em),
        mc_draws: a.mc_draws.unwrap_or(d.mc_draws),
        seed: a.em.seed.unwrap_or(d.seed),
    };
    let mscs = build_mscs(&input.sample, &opts)?;
    for w in &mscs.warnings {
        log::warn!("{w}");
    }
    opts.k_max = mscs.k_max;
    let manifest = RunManifest::new(
        "mscs",
        opts,
        vec![("em".into(), opts.em.seed), ("null".into(), opts.seed)],
        Some(&input),
    )?;
    let result = MscsReport {
        data: DataSummary::of(&input.sample),
        mscs,
    };
    emit_json(&Report { manifest, result }, a.out.as_deref())
}

fn cmd_simulate(a: &SimArgs) -> Result<()> {
    let base: SimConfig = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("invalid config {}", p.display()))?
        }
        None => SimConfig::default(),
    };
    let config = SimConfig {
        scenario: a.scenario.unwrap_or(base.scenario),
        n: a.n.unwrap_or(base.n),
        replicates: a.b.unwrap_or(base.replicates),
        alpha: a.alpha.first().copied().unwrap_or(base.alpha),
        penalty: a.penalty.unwrap_or(base.penalty),
        ref_kind: a.ref_kind.unwrap_or(base.ref_kind),
        k_max: a.kmax.unwrap_or(base.k_max),
        master_seed: a.em.seed.unwrap_or(base.master_seed),
        em: EmConfig {
            n_restarts: a.em.restarts.unwrap_or(base.em.n_restarts),
            ..base.em
        },
        mc_draws: a.mc_draws.unwrap_or(base.mc_draws),
    };
    let alphas = if a.alpha.is_empty() { vec![config.alpha] } else { a.alpha.clone() };
    let results = run_simulation_alphas(&config, &alphas)?;
    if a.table {
        eprintln!("{:>8} {:>6} {:>6} {:>10} {:>6} {:>8}", "density", "n", "alpha", "coverage%", "size", "k_hat%");
        for r in &results {
            eprintln!(
                "{:>8} {:>6} {:>6} {:>10.1} {:>6.2} {:>8.1}",
                r.scenario,
                r.n,
                r.alpha,
                100.0 * r.coverage,
                r.mean_size,
                100.0 * r.pct_khat_correct
            );
        }
    }
    let manifest = RunManifest::new(
        "simulate",
        serde_json::json!({ "config": config, "alphas": alphas }),
        vec![("master".into(), config.master_seed)],
        None,
    )?;
    let result = SimReport { config, alphas, results };
    emit_json(&Report { manifest, result }, a.out.as_deref())
}

fn report_curves(path: &Path, orders: &[usize]) -> Result<(Vec<Curve>, DataSummary)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("invalid report {}", path.display()))?;
    let command = value["manifest"]["command"].as_str().unwrap_or_default().to_string();
    match command.as_str() {
        "fit" => {
            let r: Report<FitReport> = serde_json::from_value(value)?;
            let f = r.result;
            if !orders.is_empty() && orders != [f.k] {
                bail!("fit report only holds order {}", f.k);
            }
            Ok((vec![Curve { k: f.k, params: f.params }], f.data))
        }
        "mscs" => {
            let r: Report<MscsReport> = serde_json::from_value(value)?;
            let m = r.result.mscs;
            let wanted = if orders.is_empty() { m.gamma.clone() } else { orders.to_vec() };
            let mut curves = Vec::new();
            for k in wanted {
                let f = m
                    .fits
                    .get(k.wrapping_sub(1))
                    .with_context(|| format!("report has no fit of order {k}"))?;
                curves.push(Curve { k, params: f.params.clone() });
            }
            Ok((curves, r.result.data))
        }
        other => bail!("{} is not a fit or mscs report (command '{other}')", path.display()),
    }
}

fn cmd_plot(a: &PlotArgs) -> Result<()> {
    let data = a.data.as_deref().map(read_input).transpose()?;
    let (curves, range) = if let Some(id) = a.scenario {
        let spec = scenario_params(id)?;
        let range = scenario_range(&spec.true_params);
        (vec![Curve { k: spec.k0, params: spec.true_params }], range)
    } else {
        let path = a.report.as_deref().expect("clap enforces a source");
        let (curves, summary) = report_curves(path, &a.orders)?;
        (curves, (summary.min - 3.0 * summary.sd, summary.max + 3.0 * summary.sd))
    };
    let range = match &data {
        Some(d) if a.scenario.is_none() => {
            let sd = d.sample.variance().sqrt();
            (d.sample.min() - 3.0 * sd, d.sample.max() + 3.0 * sd)
        }
        _ => range,
    };
    let xs = grid(range.0, range.1, a.points)?;
    emit_text(&curves_csv(&xs, &curves), a.out.as_deref())?;
    if let Some(d) = &data {
        let Some(h) = &a.hist_out else {
            bail!("--data needs --hist-out for the histogram counts");
        };
        emit_text(&histogram_csv(&d.sample, a.bins)?, Some(h))?;
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<MscsError>())
        .any(MscsError::is_numerical);
    if numerical {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let run = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Mscs(a) => cmd_mscs(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::PlotDensity(a) => cmd_plot(a),
    };
    match run {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
