use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use harm_cli::commands;
use harm_cli::config::RunConfig;
use harm_cli::CliError;

#[derive(Debug, Parser)]
#[command(name = "harm", version, about = "Misaligned-feature generalization workbench")]
struct Cli {
    /// Run configuration (`section.key = value` lines). Defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run a single seed, overriding `seeds.list`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write train/val/test data for every seed.
    GenData,
    /// Train every configured method for every seed.
    Train,
    /// Build adversarial test sets against the victim method.
    Attack,
    /// Write the bound-report CSV and SVG.
    Report,
    /// Run the theorem and lemma suites over toy worlds.
    Verify,
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::from_text("")?,
    };
    if let Some(dir) = cli.out {
        cfg = cfg.with_out_dir(dir);
    }
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    let files = match cli.command {
        Command::GenData => commands::gen_data(&cfg)?,
        Command::Train => commands::train(&cfg)?,
        Command::Attack => commands::attack(&cfg)?,
        Command::Report => commands::report(&cfg)?,
        Command::Verify => {
            let (report, files) = commands::verify(&cfg)?;
            let t = &report.totals;
            println!(
                "worlds {}: generalization violations {} (allowance {}), divergence-bound violations {}, active-set lemma violations {}",
                t.worlds, t.theorem_3_1_violations, t.theorem_3_1_allowance, t.theorem_3_2_violations, t.lemma_a1_violations
            );
            for w in report.worlds.iter().filter(|w| !w.offending.is_empty()) {
                eprintln!("seed {} world {}: offending members {}", w.seed, w.index, w.offending.join(", "));
            }
            for f in &files {
                println!("{}", f.display());
            }
            return Ok(report.passed);
        }
    };
    for f in &files {
        println!("{}", f.display());
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("harm: verification found violations beyond the allowance");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("harm: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
