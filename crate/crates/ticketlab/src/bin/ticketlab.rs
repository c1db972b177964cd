//! Experiment runner CLI: run, report, curve, verify.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ticketlab::exp::config::ExperimentConfig;
use ticketlab::exp::report::{
    curve_table, curve_to_tsv, report_rows, rows_to_csv, rows_to_json, verify,
};
use ticketlab::exp::runner::cli_run;
use ticketlab::exp::ExpError;

/// Environment variable holding the default archive root.
const ARCHIVE_ROOT_ENV: &str = "TICKETLAB_RUNS";

#[derive(Parser)]
#[command(name = "ticketlab", version, about = "Lottery-ticket experiments for desk-scale GANs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute an experiment config across its seeds (resumable).
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Archive root; defaults to $TICKETLAB_RUNS, then ./runs.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated seed override, e.g. --seeds 1,2,3.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Worker threads for seed-level parallelism.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Emit the best/extreme table of one run or an archive root.
    Report {
        archive: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit per-sparsity means and 95% confidence intervals for one run.
    Curve {
        archive: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-check archive checksums and invariants.
    Verify { archive: PathBuf },
}

fn archive_root(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(ARCHIVE_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn emit(out: Option<PathBuf>, text: &str) -> Result<(), ExpError> {
    match out {
        Some(path) => {
            std::fs::write(&path, text).map_err(ExpError::io(path.display().to_string()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), ExpError> {
    match cli.cmd {
        Cmd::Run {
            config,
            out,
            seeds,
            workers,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let root = archive_root(out);
            let dir = cli_run(&cfg, &root, seeds, workers)?;
            println!("archive: {}", dir.display());
            Ok(())
        }
        Cmd::Report {
            archive,
            format,
            out,
        } => {
            let rows = report_rows(&archive)?;
            let text = match format {
                Format::Csv => rows_to_csv(&rows),
                Format::Json => rows_to_json(&rows),
            };
            emit(out, &text)
        }
        Cmd::Curve { archive, out } => {
            let table = curve_table(&archive)?;
            if table.single_seed {
                eprintln!("warning: single seed; confidence-interval columns are empty");
            }
            emit(out, &curve_to_tsv(&table))
        }
        Cmd::Verify { archive } => {
            let report = verify(&archive)?;
            for p in &report.problems {
                eprintln!("problem: {p}");
            }
            println!(
                "verified {} seeds, {} rounds, {} checkpoint files: {}",
                report.seeds,
                report.rounds,
                report.files,
                if report.problems.is_empty() {
                    "ok"
                } else {
                    "PROBLEMS FOUND"
                }
            );
            if report.problems.is_empty() {
                Ok(())
            } else {
                Err(ExpError::Archive(format!(
                    "{} invariant violations",
                    report.problems.len()
                )))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
