use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use mfbsde::harness::{self, Overrides, Subcommand};
use mfbsde::meanfield_bsde::Variant;

/// Solve, verify and compare mean-field BSDEs on finite-state Markov chains.
///
/// Worker threads can be capped with the MFBSDE_THREADS environment variable.
#[derive(Parser, Debug)]
#[command(name = "mfbsde", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of time steps.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    Solve,
    Picard,
    Verify,
    Compare,
    Converge,
    Oracle,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VariantArg {
    Y,
    Zprime,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = harness::configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let cmd = match cli.command {
        Command::Solve => Subcommand::Solve,
        Command::Picard => Subcommand::Picard,
        Command::Verify => Subcommand::Verify,
        Command::Compare => Subcommand::Compare,
        Command::Converge => Subcommand::Converge,
        Command::Oracle => Subcommand::Oracle,
    };
    let overrides = Overrides {
        out: cli.out,
        seed: cli.seed,
        steps: cli.steps,
        variant: cli.variant.map(|v| match v {
            VariantArg::Y => Variant::Y,
            VariantArg::Zprime => Variant::ZPrime,
        }),
    };
    let outcome = harness::run_file(&cli.config, cmd, &overrides);
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    if outcome.exit_code == 0 {
        println!("{}", outcome.summary);
    } else {
        eprintln!("error: {}", outcome.summary);
    }
    ExitCode::from(outcome.exit_code as u8)
}
