mod pipeline;
mod scenario;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "frobenius",
    version,
    about = "Curved Frobenius structures on constant-curvature charts: construct, verify, classify, and bridge to superintegrable structural data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file and emit a report
    Run {
        scenario: PathBuf,
        /// Write the report here instead of the scenario's output path
        #[arg(long)]
        out: Option<PathBuf>,
        /// Rebuild the scenario grid with this target spacing
        #[arg(long)]
        grid_h: Option<f64>,
        /// Override the solver RNG seed
        #[arg(long)]
        seed: Option<u64>,
        /// Suppress per-check output
        #[arg(long)]
        quiet: bool,
    },
    /// Compare the residuals of two reports
    Diff { a: PathBuf, b: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_thread_pool();
    let code = match cli.command {
        Command::Run {
            scenario,
            out,
            grid_h,
            seed,
            quiet,
        } => {
            let opts = pipeline::RunOptions {
                out,
                grid_h,
                rng_seed: seed,
                quiet,
            };
            match pipeline::run(&scenario, &opts) {
                Ok(report) => {
                    if report.pass {
                        0
                    } else {
                        1
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    e.exit_code()
                }
            }
        }
        Command::Diff { a, b } => match pipeline::diff(&a, &b) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
    };
    ExitCode::from(code as u8)
}

fn init_thread_pool() {
    if let Ok(value) = std::env::var("FROBENIUS_THREADS") {
        match value.parse::<usize>() {
            Ok(threads) if threads > 0 => {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build_global();
            }
            _ => eprintln!("warning: ignoring FROBENIUS_THREADS={value}: not a positive integer"),
        }
    }
}
