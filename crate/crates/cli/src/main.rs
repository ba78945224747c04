//! `fedpoison` command-line interface: configure, run, and report
//! federated-learning poisoning experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedpoison::config::ExperimentConfig;
use fedpoison::data::{make_synthetic, save_cache};
use fedpoison::error::{Error, Result};
use fedpoison::orchestrator::run_experiment;
use fedpoison::report::{comparison_csv, final_round_table, write_outputs};
use fedpoison::transport::{client_loop, serve};

#[derive(Parser)]
#[command(
    name = "fedpoison",
    version,
    about = "Federated-learning poisoning testbed"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment as a deterministic in-process simulation.
    RunSim {
        /// Experiment config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Directory for metrics.csv, summary.json, flip_log.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the master node: accept clients, drive rounds over TCP.
    Serve {
        /// Listen address; defaults to 0.0.0.0 on the configured port.
        #[arg(long)]
        listen: Option<String>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one client process against a server.
    Client {
        /// Server address, host:port.
        #[arg(long)]
        connect: String,
        #[arg(long)]
        client_id: u32,
        #[arg(long)]
        config: PathBuf,
        /// Optional directory for this client's per-round summary.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset and write it as a binary cache file.
    GenData {
        #[arg(long, default_value_t = 2200)]
        samples: usize,
        #[arg(long, default_value_t = 20)]
        features: usize,
        #[arg(long, default_value_t = 11)]
        classes: usize,
        #[arg(long, default_value_t = 8.0)]
        separation: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge finished run directories into a plot-ready comparison CSV and
    /// print a final-round summary table.
    Report {
        /// Run directories containing metrics.csv.
        run_dirs: Vec<PathBuf>,
        /// Write the comparison CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::RunSim { config, out } => {
            let config = ExperimentConfig::load(&config)?;
            let report = run_experiment(&config)?;
            write_outputs(&report, &out)?;
            println!(
                "completed {} rounds in {:.2}s; outputs in {}",
                report.rounds.len(),
                report.wall_time_secs,
                out.display()
            );
            Ok(())
        }
        Command::Serve {
            listen,
            config,
            out,
        } => {
            let config = ExperimentConfig::load(&config)?;
            let listen = listen.unwrap_or_else(|| format!("0.0.0.0:{}", config.transport.port));
            let report = serve(&config, &listen)?;
            write_outputs(&report, &out)?;
            if !report.completed {
                return Err(Error::Timeout(format!(
                    "experiment incomplete at round {}; partial report in {}",
                    report.failed_round.unwrap_or(0),
                    out.display()
                )));
            }
            println!(
                "completed {} rounds in {:.2}s; outputs in {}",
                report.rounds.len(),
                report.wall_time_secs,
                out.display()
            );
            Ok(())
        }
        Command::Client {
            connect,
            client_id,
            config,
            out,
        } => {
            let config = ExperimentConfig::load(&config)?;
            let summary = client_loop(&connect, client_id, &config)?;
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                let path = dir.join(format!("client_{client_id}.json"));
                let text = serde_json::to_string_pretty(&summary)
                    .map_err(|e| Error::Data(format!("serializing client summary: {e}")))?;
                std::fs::write(path, text)?;
            }
            println!(
                "client {client_id} finished {} rounds",
                summary.rounds.len()
            );
            Ok(())
        }
        Command::GenData {
            samples,
            features,
            classes,
            separation,
            seed,
            out,
        } => {
            let dataset = make_synthetic(samples, features, classes, separation, seed)?;
            save_cache(&dataset, &out)?;
            println!(
                "wrote {} samples x {} features ({} classes) to {}",
                dataset.n_samples(),
                dataset.n_features(),
                dataset.n_classes(),
                out.display()
            );
            Ok(())
        }
        Command::Report { run_dirs, out } => {
            let csv = comparison_csv(&run_dirs)?;
            let table = final_round_table(&run_dirs)?;
            match out {
                Some(path) => {
                    std::fs::write(&path, csv)?;
                    println!("{table}");
                    println!("comparison CSV written to {}", path.display());
                }
                None => {
                    print!("{csv}");
                    eprintln!("{table}");
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FEDPOISON_LOG", "warn"))
        .format_timestamp(None)
        .init();

    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
