//! Experiment CLI: run single experiments, sweep grids, compare finished
//! runs, and materialize synthetic datasets.

use clap::{Parser, Subcommand};
use fedsim::config::{load_config, SweepSpec};
use fedsim::engine::RunOutcome;
use fedsim::error::{Error, Result};
use fedsim::report::build_report;
use fedsim::runner::{execute_run, generate_data};
use fedsim::sweep::run_sweep;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "fedsim",
    about = "Desk-scale federated optimization simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one experiment config and write metrics/artifacts.
    Run {
        config: PathBuf,
        /// Override a config value, e.g. --set client.eta=0.05 (repeatable).
        #[arg(long = "set", value_name = "PATH=VALUE")]
        set: Vec<String>,
        /// Output directory (defaults to runs/<config-stem>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Expand a sweep spec, run every configuration, rank by accuracy.
    Sweep {
        spec: PathBuf,
        /// Output directory (defaults to <spec-stem>-sweep).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare finished run directories in a task-by-optimizer table.
    Report {
        dirs: Vec<PathBuf>,
        /// Also write the comparison as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a config's dataset as train/test CSV files.
    GenData {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_set_flags(raw: &[String]) -> Result<Vec<(String, String)>> {
    raw.iter()
        .map(|item| {
            item.split_once('=')
                .map(|(p, v)| (p.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::config(format!("--set expects PATH=VALUE, got '{item}'")))
        })
        .collect()
}

fn default_run_dir(config_path: &Path) -> PathBuf {
    let stem = config_path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "run".to_string());
    PathBuf::from("runs").join(stem)
}

fn run_command(command: Command) -> Result<i32> {
    match command {
        Command::Run { config, set, out } => {
            let overrides = parse_set_flags(&set)?;
            let parsed = load_config(&config, &overrides)?;
            let out_dir = out
                .or_else(|| parsed.output_dir.clone())
                .unwrap_or_else(|| default_run_dir(&config));
            let artifacts = execute_run(&parsed, &out_dir)?;
            if parsed.analysis.constants {
                let e = &artifacts.estimates;
                let gap = match (artifacts.first_train_loss, artifacts.final_train_loss) {
                    (Some(first), Some(last)) => (first - last).max(0.0),
                    _ => 0.0,
                };
                let (psi1, psi2) = e.rate_constants(parsed.federation.batch_size, gap);
                println!(
                    "constant estimates (empirical lower bounds): Ltilde={} sigma2={} G={} rho={} psi1={psi1} psi2={psi2}",
                    e.smoothness.map_or_else(|| "n/a".into(), |v| format!("{v:.4}")),
                    format_args!("{:.4}", e.sigma2),
                    format_args!("{:.4}", e.grad_bound),
                    e.dissimilarity
                        .map_or_else(|| "n/a".into(), |v| format!("{v:.4}")),
                );
            }
            match artifacts.outcome {
                RunOutcome::Completed => {
                    if let Some(acc) = artifacts.final_test_acc {
                        println!(
                            "ok: {} rounds written to {} (final test acc {:.4})",
                            parsed.federation.rounds,
                            out_dir.display(),
                            acc
                        );
                    } else {
                        println!(
                            "ok: {} rounds written to {}",
                            parsed.federation.rounds,
                            out_dir.display()
                        );
                    }
                    Ok(0)
                }
                RunOutcome::Diverged {
                    round,
                    client,
                    step,
                } => {
                    eprintln!(
                        "diverged at round {round}, client {client}, step {step}; partial metrics kept in {}",
                        out_dir.display()
                    );
                    Ok(3)
                }
            }
        }
        Command::Sweep { spec, out } => {
            let parsed = SweepSpec::load(&spec)?;
            let out_dir = out.unwrap_or_else(|| {
                let stem = spec
                    .file_stem()
                    .map(|s| s.to_string_lossy().to_string())
                    .unwrap_or_else(|| "sweep".to_string());
                PathBuf::from(format!("{stem}-sweep"))
            });
            let outcome = run_sweep(&parsed, &out_dir)?;
            println!("rank  mean_acc  config");
            for row in &outcome.rows {
                let acc = row
                    .mean_final_acc
                    .map_or_else(|| "DIV".to_string(), |a| format!("{a:.4}"));
                println!("{:>4}  {:>8}  {}", row.rank, acc, row.label);
            }
            println!(
                "leaderboard: {}; best config: {}",
                outcome.leaderboard_path.display(),
                out_dir.join("best.toml").display()
            );
            Ok(0)
        }
        Command::Report { dirs, out } => {
            let report = build_report(&dirs)?;
            print!("{}", report.to_text());
            if let Some(path) = out {
                std::fs::write(&path, report.to_csv())
                    .map_err(|e| Error::io(path.display().to_string(), e))?;
                println!("csv written to {}", path.display());
            }
            Ok(0)
        }
        Command::GenData { config, out } => {
            let parsed = load_config(&config, &[])?;
            let (train, test) = generate_data(&parsed, &out)?;
            println!("wrote {} and {}", train.display(), test.display());
            Ok(0)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    match run_command(cli.command) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
