use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use burgerslab::runner::{exit_code, run, Command, RunConfig, EXIT_ERROR};
use burgerslab::Workers;

/// Stochastic Burgers experiments on (0, π).
///
/// Exit status: 0 when every verdict passes, 2 when a verdict fails, 1 on
/// any error (nothing is written in that case).
#[derive(Debug, Parser)]
#[command(name = "burgerslab", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,

    /// TOML config file; missing keys take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed; overrides `seed` in the config.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Output directory for reports and snapshots.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,

    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true, value_name = "N", env = "BURGERSLAB_WORKERS")]
    workers: Option<usize>,

    /// Progress and verdicts on stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// One stochastic trajectory.
    Simulate,
    /// Ensemble at a fixed time, with moment estimates.
    Ensemble,
    /// Distance decay between the laws from two initial states.
    Mixing,
    /// Agreement of the laws from several initial states at one time.
    Uniformity,
    /// L¹ contraction of shared-noise pairs.
    Contraction,
    /// Hitting times of two independent copies near the steady state.
    Recurrence,
    /// Long-run energy balance.
    Energy,
    /// Smoothing of rough initial data.
    Regularize,
    /// Moment bounds over time.
    Moments,
    /// Transition-probability stability in the distance parameter.
    Stability,
    /// Finite-dimensional control to a target state.
    Control,
    /// Steady state of the deterministic equation.
    Steady,
    /// Operator norms of the heat semigroup between Sobolev spaces.
    SemigroupNorms,
}

impl Sub {
    fn command(&self) -> Command {
        match self {
            Sub::Simulate => Command::Simulate,
            Sub::Ensemble => Command::Ensemble,
            Sub::Mixing => Command::Mixing,
            Sub::Uniformity => Command::Uniformity,
            Sub::Contraction => Command::Contraction,
            Sub::Recurrence => Command::Recurrence,
            Sub::Energy => Command::Energy,
            Sub::Regularize => Command::Regularize,
            Sub::Moments => Command::Moments,
            Sub::Stability => Command::Stability,
            Sub::Control => Command::Control,
            Sub::Steady => Command::Steady,
            Sub::SemigroupNorms => Command::SemigroupNorms,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_ERROR as u8);
        }
    };
    let workers = match cli.workers {
        Some(0) => {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(EXIT_ERROR as u8);
        }
        Some(n) => Workers::new(n),
        None => Workers::available(),
    };
    let rc = RunConfig {
        command: cli.command.command(),
        config_path: cli.config,
        master_seed: cli.seed,
        out_dir: cli.out,
        workers,
        verbose: cli.verbose,
    };
    let result = run(&rc);
    match &result {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("{}", f.display());
            }
            if !outcome.passed {
                for v in outcome.artifacts.report.verdicts.iter().filter(|v| !v.passed) {
                    eprintln!("verdict failed: {}: {}", v.rule, v.detail);
                }
            }
        }
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(exit_code(&result) as u8)
}
