use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mcem_cli::commands::summary_line;
use mcem_cli::config::keys_help;
use mcem_cli::{
    cmd_experiment, cmd_gen_data, cmd_plot_script, cmd_run, parse_config, CliError, ExperimentKind,
    RunConfig,
};

/// EM and Monte Carlo EM for hierarchical models.
///
/// Exit codes: 0 success, 1 convergence or runtime failure, 2 configuration error.
#[derive(Parser)]
#[command(name = "mcem", version, after_help = keys_help())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file (`key = value` lines)
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed; overrides the `seed` key
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output path; overrides the `out` key
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured algorithm, write the trace CSV, print a summary line
    #[command(after_help = keys_help())]
    Run(Common),
    /// Run a diagnostics experiment: hit-prob, rate or mcem-error-scaling
    #[command(after_help = EXPERIMENT_HELP)]
    Experiment {
        kind: String,
        #[command(flatten)]
        common: Common,
    },
    /// Write the configured data set (built-in or synthetic) as CSV
    GenData(Common),
    /// Write a matplotlib script that plots a trace CSV
    PlotScript {
        trace: PathBuf,
        /// Script path [default: plot_trace.py]
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
}

const EXPERIMENT_HELP: &str = "Result CSV schemas:
  hit-prob            m,runs,t0,epsilon,hits,fraction (one row per hit_m entry)
  rate                iterations,median_rate,cv,superlinear,spectral_radius (one row)
  mcem-error-scaling  m,<parameter names> (median |MCEM - EM| per scaling_m entry)";

fn load(common: &Common) -> Result<RunConfig, CliError> {
    let text = match &common.config {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut cfg = parse_config(&text).map_err(|e| match &common.config {
        Some(p) => CliError::Config(format!("{}: {e}", p.display())),
        None => e.into(),
    })?;
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    if common.out.is_some() {
        cfg.out = common.out.clone();
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(common) => {
            let cfg = load(&common)?;
            let (trace, path) = cmd_run(&cfg)?;
            for w in &trace.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}", summary_line(&cfg, &trace));
            eprintln!("trace written to {}", path.display());
            if !trace.converged && cfg.iterations.is_none() {
                return Err(CliError::Failure(format!(
                    "no convergence within max_iter = {}",
                    cfg.stop.max_iter
                )));
            }
        }
        Command::Experiment { kind, common } => {
            let kind = ExperimentKind::parse(&kind).ok_or_else(|| {
                CliError::Config(format!(
                    "unknown experiment `{kind}` (expected hit-prob, rate or mcem-error-scaling)"
                ))
            })?;
            let cfg = load(&common)?;
            let path = cmd_experiment(kind, &cfg)?;
            println!("{} results written to {}", kind.name(), path.display());
        }
        Command::GenData(common) => {
            let cfg = load(&common)?;
            let path = cmd_gen_data(&cfg)?;
            println!("data written to {}", path.display());
        }
        Command::PlotScript { trace, out } => {
            let path = cmd_plot_script(&trace, out.as_deref())?;
            println!("plot script written to {}", path.display());
        }
    }
    Ok(())
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
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
