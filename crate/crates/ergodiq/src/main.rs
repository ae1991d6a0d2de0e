//! Command-line front end: resolves a config (file or named preset, plus
//! flag and dotted-path overrides), pins the thread pool, dispatches to an
//! experiment driver, and maps outcomes to exit codes:
//!
//! * 0 — ran to completion, no path failures
//! * 1 — hard error or failed selftest
//! * 2 — invalid configuration (every violation is printed)
//! * 3 — partial failure: results written, some paths aborted
//!   (see `failures.csv` in the output directory)

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ergodiq::config::RunConfig;
use ergodiq::experiments::{
    cmd_couple_sweep, cmd_foiasprodi, cmd_girsanov_check, cmd_lyapunov, cmd_mixing,
    CommandSummary,
};
use ergodiq::Error;

#[derive(Parser)]
#[command(
    name = "ergodiq",
    version,
    about = "Spectral-Galerkin coupling experiments for stochastically forced dissipative equations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ensemble check of the exponential energy envelope.
    Lyapunov(RunArgs),
    /// Determining-mode gap contrast: bound pair vs independent control.
    Foiasprodi(RunArgs),
    /// Audit of the change-of-measure martingale and window budgets.
    GirsanovCheck(RunArgs),
    /// Two-copy mixing run: coupling ladder, distance decay, W1 reference.
    Mixing(RunArgs),
    /// Coupling probability over a (gain, low modes, window length) grid.
    CoupleSweep(RunArgs),
    /// Fast battery of exactly-known identity checks.
    Selftest,
}

impl Command {
    fn default_preset(&self) -> &'static str {
        match self {
            Command::Lyapunov(_) => "ns_lyapunov",
            Command::Foiasprodi(_) => "ns_foiasprodi",
            Command::GirsanovCheck(_) => "ns_girsanov",
            Command::Mixing(_) => "ns_mixing",
            Command::CoupleSweep(_) => "ns_sweep",
            Command::Selftest => unreachable!("selftest takes no config"),
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Config file (TOML). Defaults to the subcommand's preset.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,

    /// Named preset (see `--preset list`).
    #[arg(long)]
    preset: Option<String>,

    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory. Defaults to runs/<command>-<config hash>.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Override the ensemble size.
    #[arg(long)]
    paths: Option<usize>,

    /// Override the time horizon.
    #[arg(long)]
    horizon: Option<f64>,

    /// Dotted-path config override, e.g. --set solver.dt=0.0025 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Size of the worker pool (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

/// Everything that stops a run before any path starts, with its exit code.
enum Failure {
    Config(String),
    Hard(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        match e {
            Error::InvalidConfig(_) => Failure::Config(e.to_string()),
            other => Failure::Hard(other.to_string()),
        }
    }
}

fn resolve_config(args: &RunArgs, default_preset: &str) -> Result<RunConfig, Failure> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Hard(format!("cannot read {}: {e}", path.display())))?;
            // Parse without validating: flags and --set may still amend it.
            toml::from_str::<RunConfig>(&text)
                .map_err(|e| Failure::Config(format!("invalid configuration:\n{e}")))?
        }
        (None, Some(name)) if name == "list" => {
            return Err(Failure::Config(format!(
                "available presets:\n{}",
                RunConfig::preset_names().join("\n")
            )));
        }
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => RunConfig::preset(default_preset)?,
    };
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
    }
    if let Some(paths) = args.paths {
        cfg.run.paths = paths;
    }
    if let Some(horizon) = args.horizon {
        cfg.run.horizon = horizon;
    }
    for spec in &args.set {
        cfg.set_override(spec)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(args: &RunArgs, cfg: &RunConfig, command: &str) -> Result<PathBuf, Failure> {
    if let Some(dir) = &args.out {
        return Ok(dir.clone());
    }
    let hash = cfg.config_hash().map_err(Failure::from)?;
    Ok(PathBuf::from("runs").join(format!("{command}-{hash:016x}")))
}

fn run(cli: Cli) -> Result<CommandSummary, Failure> {
    let (args, driver, name): (&RunArgs, fn(&RunConfig, &std::path::Path) -> ergodiq::Result<CommandSummary>, &str) =
        match &cli.command {
            Command::Selftest => unreachable!("handled before dispatch"),
            Command::Lyapunov(a) => (a, cmd_lyapunov, "lyapunov"),
            Command::Foiasprodi(a) => (a, cmd_foiasprodi, "foiasprodi"),
            Command::GirsanovCheck(a) => (a, cmd_girsanov_check, "girsanov-check"),
            Command::Mixing(a) => (a, cmd_mixing, "mixing"),
            Command::CoupleSweep(a) => (a, cmd_couple_sweep, "couple-sweep"),
        };
    if let Some(threads) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::Hard(format!("cannot size the thread pool: {e}")))?;
    }
    let cfg = resolve_config(args, cli.command.default_preset())?;
    let dir = out_dir(args, &cfg, name)?;
    driver(&cfg, &dir).map_err(Failure::from)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if matches!(cli.command, Command::Selftest) {
        return if ergodiq::selftest::run_all() == 0 {
            ExitCode::SUCCESS
        } else {
            ExitCode::from(1)
        };
    }
    match run(cli) {
        Ok(summary) => {
            println!("{} -> {}", summary.command, summary.out_dir.display());
            for note in &summary.notes {
                println!("  {note}");
            }
            if summary.path_failures > 0 {
                eprintln!(
                    "{} paths aborted; see {}",
                    summary.path_failures,
                    summary.out_dir.join("failures.csv").display()
                );
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(Failure::Config(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(2)
        }
        Err(Failure::Hard(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
