//! Command-line driver: experiment configs, presets and the subcommands that
//! turn them into CSV/JSON plot data.

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::init::{analyze_init, ClassSummary, InitSummary};
pub use commands::sweep::{run_sweep, SweepRow};
pub use commands::theory::{verify_theory, Gate, TheoryArgs, TheorySummary};
pub use commands::train::{train, TrainOutcome};
pub use config::{ExperimentConfig, Prepared};

/// Failure classes, each with its own exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Gate(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Gate(_) | CliError::Run(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<cleanprio_core::Error> for CliError {
    fn from(e: cleanprio_core::Error) -> Self {
        use cleanprio_core::Error as E;
        match e {
            E::Io { .. } | E::Idx(_) | E::Snapshot(_) => CliError::Io(e.to_string()),
            E::InvalidArgument(_) | E::InvalidLabel(_) | E::EmptySubset(_) | E::Unsupported(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Run(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "cleanprio", version, about = "Label-noise training dynamics experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compare closed-form angle relations with Monte-Carlo estimates.
    VerifyTheory(TheoryFlags),
    /// Gradient geometry and dominance ratios at initialization.
    AnalyzeInit(RunFlags),
    /// Train with checkpointed instrumentation.
    Train(RunFlags),
    /// Train once per point of the configured width/noise/seed axes.
    Sweep(SweepFlags),
    /// Print a preset as a config file.
    EmitDefaults {
        #[arg(long, default_value = "synthetic-binary")]
        preset: String,
    },
}

#[derive(Debug, Args)]
struct Source {
    /// Config file (TOML).
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset: synthetic-binary, mnist-7v9-fcn or mnist10-fcn.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory; defaults to $CLEANPRIO_OUT_DIR, then the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Source {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf), CliError> {
        let cfg = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(name)) => ExperimentConfig::preset(name)?,
            (None, None) => return Err(CliError::Usage("either --config or --preset is required".into())),
        };
        let out = resolve_out(self.out.clone(), &cfg.output_dir);
        Ok((cfg, out))
    }
}

fn resolve_out(flag: Option<PathBuf>, fallback: &str) -> PathBuf {
    flag.or_else(|| std::env::var_os(output::OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(fallback))
}

#[derive(Debug, Args)]
struct RunFlags {
    #[command(flatten)]
    source: Source,
}

#[derive(Debug, Args)]
struct SweepFlags {
    #[command(flatten)]
    source: Source,
    /// Runs to execute in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct TheoryFlags {
    #[arg(long, default_value_t = 8192)]
    width: usize,
    #[arg(long, default_value_t = 8)]
    trials: usize,
    /// Points of the θ_d grid over [0, π].
    #[arg(long, default_value_t = 19)]
    grid: usize,
    #[arg(long, default_value_t = 1000)]
    pairs: usize,
    #[arg(long, default_value_t = 100_000)]
    wishart_width: usize,
    #[arg(long, default_value_t = 5)]
    wishart_dim: usize,
    #[arg(long, default_value_t = 20)]
    wishart_repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report gate results without failing the exit code.
    #[arg(long)]
    no_gate: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::VerifyTheory(f) => {
            let args = TheoryArgs {
                width: f.width,
                trials: f.trials,
                grid: f.grid,
                pairs: f.pairs,
                wishart_width: f.wishart_width,
                wishart_dim: f.wishart_dim,
                wishart_repeats: f.wishart_repeats,
                seed: f.seed,
            };
            let out = resolve_out(f.out, "out");
            let summary = verify_theory(&args, &out)?;
            for g in &summary.gates {
                println!("{} {}: {} (limit {})", if g.passed { "PASS" } else { "FAIL" }, g.name, g.value, g.limit);
            }
            if let Some(note) = &summary.note {
                println!("note: {note}");
            }
            if !summary.passed && !f.no_gate {
                return Err(CliError::Gate("theory gates failed".into()));
            }
            Ok(())
        }
        Command::AnalyzeInit(f) => {
            let (cfg, out) = f.source.load()?;
            let summary = analyze_init(&cfg, &out)?;
            for c in &summary.classes {
                println!(
                    "class {}: ratio {} (expected {}), cos(clean, noise) {}",
                    c.class,
                    output::fmt_opt(c.ratio),
                    output::fmt_opt(summary.expected_ratio),
                    output::fmt_opt(c.cos_clean_noise)
                );
            }
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Train(f) => {
            let (cfg, out) = f.source.load()?;
            let outcome = train(&cfg, &out)?;
            if let Some(stop) = &outcome.stop {
                println!(
                    "early stop at step {}: min test error {}, final {}, below noise: {}",
                    stop.stop_step,
                    output::fmt_f64(stop.min_test_err),
                    output::fmt_f64(stop.final_test_err),
                    stop.below_noise
                );
            }
            println!("wrote {}", out.display());
            match &outcome.trace.error {
                Some(e) => Err(CliError::Run(format!("training stopped: {e}"))),
                None => Ok(()),
            }
        }
        Command::Sweep(f) => {
            let (cfg, out) = f.source.load()?;
            let rows = run_sweep(&cfg, f.jobs, &out)?;
            println!("{} runs, wrote {}", rows.len(), out.join("sweep.csv").display());
            Ok(())
        }
        Command::EmitDefaults { preset } => {
            print!("{}", ExperimentConfig::preset(&preset)?.to_toml());
            Ok(())
        }
    }
}
