use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use lsc_core::cells::{CellKind, Readout, StackConfig};
use lsc_core::grid::pascal_curve;
use lsc_core::harness::{parse_document, read_output_dir, train_run, RunConfig, RunStatus};
use lsc_core::linalg::{NormKind, RandomSource};
use lsc_core::pretrain::{pretrain_run, GaussianBatches, GradMode, PretrainConfig};
use lsc_core::verify::{run_claim, Claim, VerifyOptions};
use lsc_core::LscError;

#[derive(Parser)]
#[command(name = "lsc", version, about = "Local stability pre-training and gradient-grid analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the numerical checks and print JSON reports.
    Verify {
        /// One claim name, or `all`.
        #[arg(long, default_value = "all")]
        claim: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        samples: Option<usize>,
        /// Write 0 seconds so that output replays byte for byte.
        #[arg(long)]
        no_timing: bool,
    },
    /// Norm curve of a width-1 PascalRNN as CSV.
    Pascal {
        #[arg(long, default_value_t = 10)]
        depth: usize,
        #[arg(long, default_value_t = 100)]
        time: usize,
        #[arg(long, default_value_t = 1.0)]
        rho: f64,
        #[arg(long, value_enum, default_value_t = Norm::Two)]
        norm: Norm,
        #[arg(long)]
        seed: Option<u64>,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pre-train a stack towards its target radii on Gaussian batches.
    Pretrain {
        #[arg(long, default_value = "gru")]
        cell: String,
        #[arg(long, default_value_t = 2)]
        depth: usize,
        #[arg(long, default_value_t = 8)]
        width: usize,
        /// Input channels; defaults to the width.
        #[arg(long)]
        channels: Option<usize>,
        /// Sequence length of the batches.
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long, default_value_t = 4)]
        batch: usize,
        #[arg(long)]
        rho_target: Option<f64>,
        /// Targets T/(T+L) in time and L/(T+L) in depth.
        #[arg(long, conflicts_with = "rho_target")]
        weighted: bool,
        #[arg(long, value_enum)]
        grad_mode: Option<Mode>,
        /// TOML or JSON pre-training config; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for the trace CSV and report JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every seed of a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated seeds replacing the config's.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Re-aggregate a training output directory.
    Report {
        dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Norm {
    One,
    Two,
    Inf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    KappaOnly,
    FiniteDifference,
    EigenAdjoint,
}

/// Failure of a run that completed: verification or convergence.
struct Failed;

fn env_seed() -> Result<Option<u64>, LscError> {
    match std::env::var("LSC_SEED") {
        Ok(s) => s.trim().parse().map(Some).map_err(|_| LscError::Config(format!("LSC_SEED must be an integer, got '{s}'"))),
        Err(_) => Ok(None),
    }
}

fn root_seed(flag: Option<u64>) -> Result<u64, LscError> {
    Ok(match flag {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    })
}

fn print_json<T: Serialize>(value: &T) -> Result<(), LscError> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn verify(claim: &str, seed: Option<u64>, samples: Option<usize>, no_timing: bool) -> Result<Result<(), Failed>, LscError> {
    let claims: Vec<Claim> = if claim == "all" { Claim::ALL.to_vec() } else { vec![claim.parse()?] };
    let opts = VerifyOptions { seed: root_seed(seed)?, samples, timing: !no_timing };
    let mut reports = Vec::new();
    for c in claims {
        reports.extend(run_claim(c, &opts)?);
    }
    print_json(&reports)?;
    for r in reports.iter().filter(|r| !r.pass) {
        eprintln!("FAIL {}: observed {} predicted {} tolerance {}", r.claim, r.observed, r.predicted, r.tolerance);
    }
    Ok(if reports.iter().all(|r| r.pass) { Ok(()) } else { Err(Failed) })
}

fn pascal(depth: usize, time: usize, rho: f64, norm: Norm, seed: Option<u64>, out: Option<&Path>) -> Result<(), LscError> {
    let norm = match norm {
        Norm::One => NormKind::One,
        Norm::Two => NormKind::Two,
        Norm::Inf => NormKind::Inf,
    };
    let curve = pascal_curve(depth, time, rho, norm, &RandomSource::new(root_seed(seed)?))?;
    match out {
        Some(p) => curve.write_csv(std::fs::File::create(p)?)?,
        None => curve.write_csv(std::io::stdout().lock())?,
    }
    eprintln!(
        "c1 {} (deviation {:e}), c2 {} (deviation {:e}), closer: {:?}",
        curve.c1, curve.binomial_deviation, curve.c2, curve.constant_deviation, curve.kind
    );
    Ok(())
}

#[derive(Serialize)]
struct PretrainSummary<'a> {
    cell: &'a str,
    depth: usize,
    width: usize,
    target_time: f64,
    target_depth: f64,
    grad_mode: GradMode,
    steps_taken: usize,
    converged: bool,
    mean_rho: f64,
    std_rho: f64,
    ema_std: f64,
    layer_time: &'a [f64],
    layer_depth: &'a [f64],
    warnings: &'a [String],
}

#[allow(clippy::too_many_arguments)]
fn pretrain(
    cell: &str,
    depth: usize,
    width: usize,
    channels: Option<usize>,
    steps: usize,
    batch: usize,
    rho_target: Option<f64>,
    weighted: bool,
    grad_mode: Option<Mode>,
    config: Option<&Path>,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<Result<(), Failed>, LscError> {
    let mut cfg: PretrainConfig = match config {
        Some(p) => parse_document(
            &std::fs::read_to_string(p).map_err(|e| LscError::Config(format!("cannot read {}: {e}", p.display())))?,
        )?,
        None => PretrainConfig::default(),
    };
    if let Some(r) = rho_target {
        (cfg.target_time, cfg.target_depth) = (r, r);
    }
    if weighted {
        let w = PretrainConfig::weighted(steps, depth)?;
        (cfg.target_time, cfg.target_depth) = (w.target_time, w.target_depth);
    }
    if let Some(m) = grad_mode {
        cfg.grad_mode = Some(match m {
            Mode::KappaOnly => GradMode::KappaOnly,
            Mode::FiniteDifference => GradMode::FiniteDifference,
            Mode::EigenAdjoint => GradMode::EigenAdjoint,
        });
    }
    if steps == 0 || batch == 0 {
        return Err(LscError::Config("steps and batch must be at least 1".into()));
    }
    let kind = CellKind::from_name(cell, 1.0)?;
    let channels = channels.unwrap_or(width);
    let stack = StackConfig::uniform(kind, depth, width, channels, Readout::Identity)?;
    let rng = RandomSource::new(root_seed(seed)?);
    let params = stack.init_params(&rng.fork(0))?;
    let mut source = GaussianBatches::new(channels, steps, batch, rng.fork(1));
    let report = pretrain_run(&stack, params, &cfg, &mut source, &rng.fork(2))?;
    let s = &report.final_stats;
    let summary = PretrainSummary {
        cell,
        depth,
        width,
        target_time: cfg.target_time,
        target_depth: cfg.target_depth,
        grad_mode: report.grad_mode,
        steps_taken: report.steps_taken,
        converged: report.converged,
        mean_rho: s.mean_rho,
        std_rho: s.std_rho,
        ema_std: s.ema_std,
        layer_time: &s.layer_time,
        layer_depth: &s.layer_depth,
        warnings: &report.warnings,
    };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        report.write_trace(&dir.join("pretrain_trace.csv"))?;
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        std::fs::write(dir.join("pretrain_report.json"), text)?;
    }
    print_json(&summary)?;
    Ok(if report.converged { Ok(()) } else { Err(Failed) })
}

fn train(config: &Path, seeds: Option<Vec<u64>>, output_dir: Option<PathBuf>) -> Result<Result<(), Failed>, LscError> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(root) = env_seed()? {
        cfg.seeds = (0..cfg.seeds.len() as u64).map(|i| root.wrapping_add(i)).collect();
    }
    if let Some(s) = seeds {
        cfg.seeds = s;
    }
    if let Some(d) = output_dir {
        cfg.output_dir = d;
    }
    cfg.validate()?;
    let outcome = train_run(&cfg)?;
    print_json(&outcome.aggregate)?;
    for s in outcome.seeds.iter().filter(|s| s.status == RunStatus::Failed) {
        eprintln!("seed {} failed: {}", s.seed, s.reason.as_deref().unwrap_or("unknown"));
    }
    Ok(if outcome.aggregate.failed.is_empty() { Ok(()) } else { Err(Failed) })
}

fn report(dir: &Path) -> Result<(), LscError> {
    let outcome = read_output_dir(dir)?;
    for m in &outcome.aggregate.metrics {
        eprintln!("{:<16} {:.6} +- {:.6} (n = {})", m.metric, m.mean, m.std, m.n);
    }
    print_json(&outcome.aggregate)
}

fn run(cli: Cli) -> Result<Result<(), Failed>, LscError> {
    match cli.command {
        Command::Verify { claim, seed, samples, no_timing } => verify(&claim, seed, samples, no_timing),
        Command::Pascal { depth, time, rho, norm, seed, out } => {
            pascal(depth, time, rho, norm, seed, out.as_deref()).map(Ok)
        }
        Command::Pretrain {
            cell,
            depth,
            width,
            channels,
            steps,
            batch,
            rho_target,
            weighted,
            grad_mode,
            config,
            seed,
            out,
        } => pretrain(
            &cell,
            depth,
            width,
            channels,
            steps,
            batch,
            rho_target,
            weighted,
            grad_mode,
            config.as_deref(),
            seed,
            out.as_deref(),
        ),
        Command::Train { config, seeds, output_dir } => train(&config, seeds, output_dir),
        Command::Report { dir } => report(&dir).map(Ok),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(Failed)) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                LscError::Config(_) | LscError::Argument(_) | LscError::Io(_) | LscError::Json(_) | LscError::Csv(_) => {
                    ExitCode::from(2)
                }
                _ => ExitCode::from(1),
            }
        }
    }
}
