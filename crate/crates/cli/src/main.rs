//! `tvlars` experiment runner.
//!
//! Exit codes: 0 success, 2 config error, 3 divergence, 4 I/O error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tvlars::harness::{
    compare_runs, format_summary_table, run_experiment, run_variance, schedule_table, write_schedule_csv, HarnessError,
    RunConfig, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_IO,
};

#[derive(Parser)]
#[command(name = "tvlars", version, about = "Train and inspect layer-wise adaptive optimizers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration; writes metrics.csv and norms.jsonl.
    Run { config: PathBuf },
    /// Run every configuration matching a glob pattern.
    Sweep { pattern: String },
    /// Schedule utilities.
    Schedule {
        #[command(subcommand)]
        action: ScheduleCommand,
    },
    /// Batch-gradient deviation sweep at the initial parameters.
    Variance { config: PathBuf },
    /// Side-by-side summary of finished runs (run directories or metrics files).
    Compare {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// Accuracy threshold for the epochs-to-threshold column.
        #[arg(long, default_value_t = 0.9)]
        threshold: f64,
    },
}

#[derive(Subcommand)]
enum ScheduleCommand {
    /// Print the base rate of every step as CSV.
    Dump {
        config: PathBuf,
        /// Write to a file instead of stdout.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

fn fail(e: &HarnessError) -> i32 {
    eprintln!("error: {e}");
    e.exit_code()
}

fn run_one(path: &Path) -> i32 {
    let cfg = match RunConfig::load(path) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    match run_experiment(&cfg) {
        Ok(out) => {
            if let Some(ev) = &out.divergence {
                eprintln!(
                    "{}: diverged at epoch {} step {}: {} (partial metrics in {})",
                    path.display(),
                    ev.epoch,
                    ev.step,
                    ev.reason,
                    cfg.output_dir.display()
                );
                return EXIT_DIVERGENCE;
            }
            if let Some(last) = out.metrics.last() {
                println!(
                    "{}: epoch {} eval_loss {:.4} eval_accuracy {:.4} -> {}",
                    path.display(),
                    last.epoch,
                    last.eval_loss,
                    last.eval_accuracy,
                    cfg.output_dir.display()
                );
            } else {
                println!("{}: no epochs run -> {}", path.display(), cfg.output_dir.display());
            }
            0
        }
        Err(e) => fail(&e),
    }
}

fn sweep(pattern: &str) -> i32 {
    let paths = match glob::glob(pattern) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: bad pattern {pattern:?}: {e}");
            return EXIT_CONFIG;
        }
    };
    let mut paths: Vec<PathBuf> = match paths.collect::<Result<_, _>>() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_IO;
        }
    };
    paths.sort();
    if paths.is_empty() {
        eprintln!("error: no configs match {pattern:?}");
        return EXIT_CONFIG;
    }
    // Runs share nothing but the filesystem, so each gets its own thread.
    let codes: Vec<i32> = std::thread::scope(|s| {
        let handles: Vec<_> = paths.iter().map(|p| s.spawn(move || run_one(p))).collect();
        handles.into_iter().map(|h| h.join().unwrap_or(1)).collect()
    });
    let failed = codes.iter().filter(|&&c| c != 0).count();
    println!("{} run(s), {failed} failed", codes.len());
    codes.into_iter().max().unwrap_or(0)
}

fn dump(config: &Path, out: Option<&Path>) -> i32 {
    let table = match RunConfig::load(config).and_then(|c| schedule_table(&c)) {
        Ok(t) => t,
        Err(e) => return fail(&e),
    };
    let result = match out {
        Some(p) => std::fs::File::create(p)
            .and_then(|f| write_schedule_csv(std::io::BufWriter::new(f), &table))
            .map_err(|source| HarnessError::Io {
                path: p.to_path_buf(),
                source,
            }),
        None => write_schedule_csv(std::io::stdout().lock(), &table).map_err(|source| HarnessError::Io {
            path: PathBuf::from("<stdout>"),
            source,
        }),
    };
    result.map_or_else(|e| fail(&e), |_| 0)
}

fn variance(config: &Path) -> i32 {
    let cfg = match RunConfig::load(config) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    match run_variance(&cfg) {
        Ok((est, slope)) => {
            let mut so = std::io::stdout().lock();
            let _ = writeln!(so, "{:>6}  {:>12}  {:>12}", "B", "mean_dev", "mean_sq_dev");
            for e in &est {
                let _ = writeln!(so, "{:>6}  {:>12.6e}  {:>12.6e}", e.batch_size, e.mean_dev, e.mean_sq_dev);
            }
            match slope {
                Some(s) => {
                    let _ = writeln!(so, "log-log slope of mean_sq_dev: {s:.4}");
                }
                None => {
                    let _ = writeln!(so, "log-log slope needs at least 3 positive points");
                }
            }
            let _ = writeln!(so, "wrote {}", cfg.output_dir.join("variance.csv").display());
            0
        }
        Err(e) => fail(&e),
    }
}

fn compare(paths: &[PathBuf], threshold: f64) -> i32 {
    match compare_runs(paths, threshold) {
        Ok(rows) => {
            print!("{}", format_summary_table(&rows, threshold));
            0
        }
        Err(e) => fail(&e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Run { config } => run_one(config),
        Command::Sweep { pattern } => sweep(pattern),
        Command::Schedule {
            action: ScheduleCommand::Dump { config, out },
        } => dump(config, out.as_deref()),
        Command::Variance { config } => variance(config),
        Command::Compare { paths, threshold } => compare(paths, *threshold),
    };
    ExitCode::from(code.clamp(0, 255) as u8)
}
