//! `topoleak` command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use topoleak::Error;

mod commands;

/// Decentralized federated learning simulator and topology inference attacks.
#[derive(Debug, Parser)]
#[command(name = "topoleak", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GenKind {
    Ring,
    Star,
    Er,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    AllPairs,
    HeldOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SchemaArg {
    Run,
    Sweep,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a topology and write it as an edge list.
    GenTopology {
        #[arg(long)]
        kind: GenKind,
        #[arg(long)]
        n: usize,
        /// Edge probability (er only).
        #[arg(long)]
        p: Option<f64>,
        /// Falls back to TOPOLEAK_SEED, then 0.
        #[arg(long)]
        seed: Option<u64>,
        /// Edge-list path; stats go next to it as `<out>.stats.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a simulation and persist its log, datasets and config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides TOPOLEAK_SEED, which overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Attack a saved simulation log under one scenario and score the result.
    Attack {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        scenario: u8,
        /// Run config for attack settings; defaults to the one saved with the log.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        labeled_frac: Option<f64>,
        /// Overrides TOPOLEAK_SEED, which overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Defaults to `<log>/attack_sc<k>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a soft adjacency CSV against a ground-truth edge list.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Labeled pairs CSV (`i,j,edge`) the attacker trained on.
        #[arg(long)]
        known: Option<PathBuf>,
        /// Defaults to held-out when `--known` is given, all pairs otherwise.
        #[arg(long)]
        policy: Option<PolicyArg>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a sweep config and write the results table.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        /// Keep rows already in the output and skip their cells.
        #[arg(long)]
        resume: bool,
        /// Record wall-clock time per cell (makes output non-reproducible).
        #[arg(long)]
        timing: bool,
        /// Overrides TOPOLEAK_SEED, which overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `output` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a run or sweep config, or print a default one.
    Validate {
        #[arg(long, required_unless_present = "defaults")]
        config: Option<PathBuf>,
        /// Print a complete config with every default filled in.
        #[arg(long, conflicts_with = "config")]
        defaults: Option<SchemaArg>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Unsupported(_) => 4,
        e if e.is_config_error() => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenTopology { kind, n, p, seed, out } => commands::gen_topology(kind, n, p, seed, &out),
        Command::Simulate { config, seed, out } => commands::simulate(&config, seed, out),
        Command::Attack { log, scenario, config, labeled_frac, seed, out } => {
            commands::attack(&log, scenario, config.as_deref(), labeled_frac, seed, out)
        }
        Command::Evaluate { pred, truth, known, policy, out } => {
            commands::evaluate(&pred, &truth, known.as_deref(), policy, out.as_deref())
        }
        Command::Sweep { config, workers, resume, timing, seed, out } => {
            commands::sweep(&config, workers, resume, timing, seed, out)
        }
        Command::Validate { config, defaults } => commands::validate(config.as_deref(), defaults),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
