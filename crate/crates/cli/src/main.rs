use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dpg_core::experiments::{self, ExperimentReport, RunOutcome};
use dpg_core::{ExperimentConfig, ExperimentKind, StepSpec, Variant};

#[derive(Parser)]
#[command(name = "dpg", version, about = "Decentralized projected gradient experiments and bound checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config and write CSV output.
    Run(Common),
    /// Ball-constrained least-squares experiment with the preset stepsizes.
    Regression(Common),
    /// Two-agent scalar example with its exact analysis.
    #[command(name = "example-1d")]
    Example1d(Common),
    /// Run a list of stepsizes against one problem.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        steps: Steps,
    },
    /// Print the theory constants of every schedule as JSON.
    Constants {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        steps: Steps,
    },
    /// Run and certify every applicable inequality; exits nonzero on a violation.
    Check {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        steps: Steps,
    },
}

#[derive(Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Experiment to use when no config is given.
    #[arg(long, value_enum)]
    experiment: Option<Kind>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip inadmissible stepsizes instead of running them with a warning.
    #[arg(long)]
    strict: bool,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    /// Evaluate and certify the theoretical bounds.
    #[arg(long, value_enum)]
    bounds: Option<Toggle>,
    /// Number of iterations.
    #[arg(long)]
    horizon: Option<u64>,
}

#[derive(Args)]
struct Steps {
    /// Constant stepsizes (comma separated).
    #[arg(long, value_delimiter = ',')]
    alpha: Vec<f64>,
    /// Constant stepsizes as multiples of 1/(mu+L) (comma separated).
    #[arg(long, value_delimiter = ',')]
    scaled: Vec<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Regression,
    #[value(name = "one-dim")]
    OneDim,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse()
}

/// Config file if given, otherwise the built-in experiment (`default`,
/// then regression). A config must match `default` when both are set.
fn load_config(common: &Common, default: Option<ExperimentKind>) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ExperimentConfig::from_json(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => match default.or(common.experiment.map(kind)) {
            Some(ExperimentKind::OneDim) => ExperimentConfig::one_dim(),
            _ => ExperimentConfig::regression(),
        },
    };
    if let (Some(expected), Some(_)) = (default, &common.config) {
        if cfg.experiment != expected {
            bail!("config describes a {:?} experiment, expected {expected:?}", cfg.experiment);
        }
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(h) = common.horizon {
        cfg.horizon = Some(h);
    }
    if let Some(v) = common.variant {
        cfg.variant = v;
    }
    if let Some(b) = common.bounds {
        cfg.bounds = matches!(b, Toggle::On);
    }
    cfg.strict |= common.strict;
    Ok(cfg)
}

fn kind(k: Kind) -> ExperimentKind {
    match k {
        Kind::Regression => ExperimentKind::Regression,
        Kind::OneDim => ExperimentKind::OneDim,
    }
}

fn apply_steps(cfg: &mut ExperimentConfig, steps: &Steps) {
    let specs: Vec<StepSpec> = steps
        .alpha
        .iter()
        .map(|&alpha| StepSpec::Constant { alpha })
        .chain(steps.scaled.iter().map(|&factor| StepSpec::Scaled { factor }))
        .collect();
    if !specs.is_empty() {
        cfg.schedules = specs;
    }
}

fn out_dir(common: &Common, cfg: &ExperimentConfig, name: &str) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| Path::new("out").join(name))
}

fn print_report(report: &ExperimentReport) {
    let p = &report.problem;
    println!(
        "{:?}: n = {}, dim = {}, L = {:.6}, mu = {:.6}, beta = {:.6}, D = {:.6}",
        report.experiment, p.n, p.dim, p.l, p.mu, p.beta, p.heterogeneity
    );
    for outcome in &report.runs {
        match outcome {
            RunOutcome::Completed(run) => {
                let m = &run.final_metrics;
                let checks = match &run.certificate {
                    Some(c) => format!("{} violations", c.total_violations()),
                    None => "unchecked".into(),
                };
                println!(
                    "  {:<24} t = {:<7} R1 = {:.3e}  R2 = {:.3e}  {:?}  {checks}",
                    run.label, m.t, m.r1, m.r2, run.status
                );
                for w in &run.warnings {
                    eprintln!("  warning [{}]: {w}", run.label);
                }
            }
            RunOutcome::Failed { label, error } => println!("  {label:<24} failed: {error}"),
            RunOutcome::Skipped { label, reason } => println!("  {label:<24} skipped: {reason}"),
        }
    }
}

fn execute(cfg: &ExperimentConfig, dir: &Path) -> Result<ExperimentReport> {
    let report = experiments::run_experiment(cfg)?;
    print_report(&report);
    let written = experiments::write_outputs(&report, dir)?;
    println!("wrote {} files to {}", written.len(), dir.display());
    Ok(report)
}

fn failed_runs(report: &ExperimentReport) -> usize {
    report
        .runs
        .iter()
        .filter(|r| matches!(r, RunOutcome::Failed { .. }))
        .count()
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(common) => {
            if common.config.is_none() {
                bail!("run needs --config");
            }
            let cfg = load_config(&common, None)?;
            let report = execute(&cfg, &out_dir(&common, &cfg, "run"))?;
            Ok(if failed_runs(&report) > 0 { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
        Command::Regression(common) => {
            let cfg = load_config(&common, Some(ExperimentKind::Regression))?;
            execute(&cfg, &out_dir(&common, &cfg, "regression"))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Example1d(common) => {
            let cfg = load_config(&common, Some(ExperimentKind::OneDim))?;
            let report = execute(&cfg, &out_dir(&common, &cfg, "example-1d"))?;
            for run in report.completed() {
                if let Some(a) = &run.one_dim {
                    println!(
                        "  {:<24} lambda+ = {:.6}  hitting time {:?} (bound {:?})  error ratio {:?}",
                        run.label, a.lambda_plus, a.hitting_time, a.hitting_time_bound, a.error_ratio
                    );
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { common, steps } => {
            let mut cfg = load_config(&common, None)?;
            apply_steps(&mut cfg, &steps);
            let report = execute(&cfg, &out_dir(&common, &cfg, "sweep"))?;
            Ok(if failed_runs(&report) > 0 { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
        Command::Constants { common, steps } => {
            let mut cfg = load_config(&common, None)?;
            apply_steps(&mut cfg, &steps);
            let constants: serde_json::Map<String, serde_json::Value> = experiments::constants_for(&cfg)?
                .into_iter()
                .map(|(label, c)| Ok((label, serde_json::to_value(c)?)))
                .collect::<Result<_>>()?;
            let text = serde_json::to_string_pretty(&constants)?;
            println!("{text}");
            if let Some(dir) = &common.out {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                let path = dir.join("constants.json");
                fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Check { common, steps } => {
            let mut cfg = load_config(&common, None)?;
            apply_steps(&mut cfg, &steps);
            cfg.bounds = true;
            let report = execute(&cfg, &out_dir(&common, &cfg, "check"))?;
            for run in report.completed() {
                if let Some(cert) = &run.certificate {
                    for s in &cert.checks {
                        println!(
                            "  {:<24} {:<18} {:>8} evaluated  {:>6} violations  min slack {:.3e}",
                            run.label, s.name, s.evaluated, s.violations, s.min_slack
                        );
                    }
                    for (name, why) in &cert.skipped {
                        println!("  {:<24} {name:<18} skipped: {why}", run.label);
                    }
                }
            }
            let violations = report.total_violations();
            let failures = failed_runs(&report);
            if violations > 0 || failures > 0 {
                eprintln!("check failed: {violations} violations, {failures} failed runs");
                Ok(ExitCode::FAILURE)
            } else {
                println!("check passed");
                Ok(ExitCode::SUCCESS)
            }
        }
    }
}
