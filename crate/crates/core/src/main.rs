use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use edgeflow::config::{parse_config, ExperimentConfig};
use edgeflow::harness::{self, SweepAxis};

#[derive(Parser)]
#[command(name = "edgeflow", version, about = "Serverless federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every method and repeat of an experiment config.
    Run { config: PathBuf },
    /// Repeat a run across values of N_m or K.
    Sweep {
        config: PathBuf,
        /// `N_m` or `K`.
        #[arg(long)]
        axis: String,
        /// Comma separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
    },
    /// Per-cycle communication load for each topology.
    TopoReport { config: PathBuf },
    /// Recompute bound checks from a finished run directory.
    BoundReport { run_dir: PathBuf },
}

fn load(path: &PathBuf) -> edgeflow::Result<ExperimentConfig> {
    let text = fs::read_to_string(path)?;
    parse_config(&text).map_err(|e| edgeflow::Error::Config(format!("{}: {e}", path.display())))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn execute(command: Command) -> edgeflow::Result<ExitCode> {
    match command {
        Command::Run { config } => {
            let config = load(&config)?;
            let summary = harness::run(&config)?;
            for m in &summary.methods {
                println!(
                    "{:<14} acc {:.4} ± {:.4}  load {:.0}  ratio {:.4}  failed {}",
                    m.method.name(),
                    m.final_accuracy_mean,
                    m.final_accuracy_std,
                    m.params_hop_units_mean,
                    m.compression_ratio_mean,
                    m.failed
                );
            }
            println!("artifacts: {}", summary.output_dir.display());
            Ok(if summary.failed_cells() > 0 { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
        Command::Sweep { config, axis, values } => {
            let config = load(&config)?;
            let axis = SweepAxis::parse(&axis)
                .ok_or_else(|| edgeflow::Error::Config(format!("unknown sweep axis `{axis}`, expected N_m or K")))?;
            let (table, summaries) = harness::sweep(&config, axis, &values)?;
            for r in &table.rows {
                println!(
                    "{}={:<4} {:<14} acc {:.4} ± {:.4}{}",
                    axis.name(),
                    r.value,
                    r.method.name(),
                    r.final_accuracy_mean,
                    r.final_accuracy_std,
                    if r.best { "  *" } else { "" }
                );
            }
            let failed: usize = summaries.iter().map(|s| s.failed_cells()).sum();
            Ok(if failed > 0 { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
        Command::TopoReport { config } => {
            let config = load(&config)?;
            let rows = harness::topology_report(&config)?;
            harness::write_topology_csv(std::io::stdout().lock(), &rows)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::BoundReport { run_dir } => {
            let rows = harness::bound_report(&run_dir)?;
            if rows.is_empty() {
                eprintln!("no theory reports under {}", run_dir.display());
                return Ok(ExitCode::FAILURE);
            }
            for r in &rows {
                println!(
                    "{:<20} bound {:.6}  empirical {:.6}  slack {:.6}  lemma3 violations {} (max ratio {:.4})",
                    r.run_id, r.bound_total, r.empirical_avg_grad_norm_sq, r.slack, r.lemma3_violations, r.lemma3_max_ratio
                );
            }
            let bad = rows.iter().any(|r| !r.valid || r.lemma3_violations > 0);
            Ok(if bad { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
    }
}
