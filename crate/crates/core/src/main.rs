//! Command-line front end: run an experiment config, print a reference
//! value, or estimate the Euler strong convergence rate.
//!
//! Exit codes: 0 on success, 1 on configuration or runtime errors, 2 when an
//! experiment completed but some (n, seed) cells failed.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hjbmc::harness::{
    self, emit_report, parse_config, run_experiment, ExperimentConfig,
};
use hjbmc::model::GbmParams;

#[derive(Parser)]
#[command(
    name = "hjbmc",
    about = "Monte-Carlo control-randomization solver for HJB equations",
    version
)]
struct Cli {
    /// Number of worker threads (0 = one per core). Ignored without the
    /// `parallel` feature.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full experiment described by an INI config file.
    Solve {
        /// Path to the experiment config.
        config: PathBuf,
        /// Directory for errors.csv, rates.csv, summary.txt.
        #[arg(long, default_value = "out")]
        output_dir: PathBuf,
    },
    /// Print the reference value for the problem in a config file.
    Oracle {
        config: PathBuf,
    },
    /// Estimate the strong convergence rate of the Euler scheme for
    /// geometric Brownian motion.
    Rates {
        #[arg(long, default_value_t = 100_000)]
        paths: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Comma-separated step counts.
        #[arg(long, default_value = "8,16,32,64,128", value_delimiter = ',')]
        n_steps: Vec<usize>,
    },
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    parse_config(&text).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    #[cfg(feature = "parallel")]
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    #[cfg(not(feature = "parallel"))]
    if cli.threads > 1 {
        eprintln!("note: built without the parallel feature; running sequentially");
    }

    match cli.command {
        Command::Solve { config, output_dir } => {
            let cfg = match load_config(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            let report = match run_experiment(&cfg) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            if let Err(e) = emit_report(&report, &output_dir) {
                eprintln!("error: cannot write report: {e}");
                return ExitCode::from(1);
            }
            print!("{}", harness::render_summary(&report));
            println!("report written to {}", output_dir.display());
            if report.failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Command::Oracle { config } => {
            let cfg = match load_config(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            let value = cfg
                .build_problem()
                .and_then(|p| cfg.reference_value(&p));
            match value {
                Ok(v) => {
                    println!("{v:.16e}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Command::Rates {
            paths,
            seed,
            n_steps,
        } => {
            let gbm = GbmParams::default();
            match harness::euler_strong_errors(&gbm, &n_steps, paths, seed) {
                Ok(errs) => {
                    println!("modulus,rmse");
                    for (h, e) in &errs {
                        println!("{h:.16e},{e:.16e}");
                    }
                    match harness::estimate_rate(&errs) {
                        Ok(rate) => {
                            println!("slope,{rate:.6}");
                            ExitCode::SUCCESS
                        }
                        Err(e) => {
                            eprintln!("error: {e}");
                            ExitCode::from(1)
                        }
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
    }
}
