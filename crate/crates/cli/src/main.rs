//! `flsim` command-line interface: key generation, experiment execution,
//! strategy comparison sweeps, and synthetic-data utilities.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric failure during
//! training, 1 anything else. Diagnostics go to stderr (`FLSIM_LOG` sets
//! verbosity); structured results go to files and stdout.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand};

use flsim_core::config::ExperimentConfig;
use flsim_core::data::{save_csv, synth_generate, SynthSpec};
use flsim_core::error::{Error, Result};
use flsim_core::paillier;
use flsim_core::protocol::StrategyKind;
use flsim_core::sim::{run_experiment, MetricsLog};

#[derive(Parser)]
#[command(name = "flsim", version, about = "Federated-learning simulator with encrypted aggregation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Paillier key pair and write public/secret JSON files.
    Keygen {
        /// Modulus size in bits (minimum 128).
        #[arg(long, default_value_t = paillier::DEFAULT_KEY_BITS)]
        bits: u64,
        /// Directory for public.json and secret.json.
        #[arg(long)]
        out: PathBuf,
        /// Deterministic seed; omitted = OS entropy.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one experiment described by a TOML config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's strategy (sfl | afl | fedbuff | bfl).
        #[arg(long)]
        strategy: Option<String>,
        /// Output directory for metrics CSV and summary JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Disable homomorphic encryption for this run.
        #[arg(long)]
        no_he: bool,
    },
    /// Run all four strategies on identical data and seeds, side by side.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        no_he: bool,
    },
    /// Generate a synthetic dataset and write it as CSV.
    Synth {
        /// Preset name: gas-like | wustl-like.
        #[arg(long)]
        preset: String,
        #[arg(long)]
        samples: usize,
        #[arg(long)]
        seed: u64,
        /// Blob standard deviation override.
        #[arg(long)]
        spread: Option<f64>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FLSIM_LOG", "warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn exit_code_for(e: &Error) -> ExitCode {
    match e {
        Error::Config(_) => ExitCode::from(2),
        Error::Numeric(_) => ExitCode::from(3),
        _ => ExitCode::from(1),
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Keygen { bits, out, seed } => cmd_keygen(bits, &out, seed),
        Command::Run {
            config,
            seed,
            strategy,
            out,
            no_he,
        } => cmd_run(&config, seed, strategy.as_deref(), out.as_deref(), no_he),
        Command::Compare {
            config,
            seed,
            out,
            no_he,
        } => cmd_compare(&config, seed, out.as_deref(), no_he),
        Command::Synth {
            preset,
            samples,
            seed,
            spread,
            out,
        } => cmd_synth(&preset, samples, seed, spread, &out),
    }
}

fn cmd_keygen(bits: u64, out: &Path, seed: Option<u64>) -> Result<()> {
    let seed = seed.unwrap_or_else(rand::random);
    let keypair = paillier::keygen(bits, seed)?;
    std::fs::create_dir_all(out)?;
    let public_path = out.join("public.json");
    let secret_path = out.join("secret.json");
    std::fs::write(
        &public_path,
        serde_json::to_string_pretty(&keypair.public).map_err(|e| Error::Serde(e.to_string()))?,
    )?;
    std::fs::write(
        &secret_path,
        serde_json::to_string_pretty(&keypair.secret).map_err(|e| Error::Serde(e.to_string()))?,
    )?;
    log::info!("wrote {} and {}", public_path.display(), secret_path.display());
    println!("{}", public_path.display());
    println!("{}", secret_path.display());
    Ok(())
}

fn load_with_overrides(
    config_path: &Path,
    seed: Option<u64>,
    strategy: Option<&str>,
    no_he: bool,
) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(config_path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(strategy) = strategy {
        config.strategy = StrategyKind::from_str(strategy)?;
    }
    if no_he {
        config.he.enabled = false;
    }
    config.validate()?;
    Ok(config)
}

fn output_paths(config: &ExperimentConfig, out: Option<&Path>) -> Result<(PathBuf, PathBuf)> {
    let dir = out.unwrap_or(Path::new(".")).to_path_buf();
    std::fs::create_dir_all(&dir)?;
    let metrics = match &config.output.metrics_csv {
        Some(p) if p.is_absolute() => p.clone(),
        Some(p) => dir.join(p),
        None => dir.join("metrics.csv"),
    };
    let summary = match &config.output.summary_json {
        Some(p) if p.is_absolute() => p.clone(),
        Some(p) => dir.join(p),
        None => dir.join("summary.json"),
    };
    Ok((metrics, summary))
}

fn cmd_run(
    config_path: &Path,
    seed: Option<u64>,
    strategy: Option<&str>,
    out: Option<&Path>,
    no_he: bool,
) -> Result<()> {
    let config = load_with_overrides(config_path, seed, strategy, no_he)?;
    let (metrics_path, summary_path) = output_paths(&config, out)?;
    log::info!(
        "running {} for up to {} rounds (seed {})",
        config.strategy,
        config.simulation.rounds,
        config.seed
    );
    let log = run_experiment(&config)?;
    log.write_csv(&metrics_path)?;
    log.write_summary_json(&summary_path)?;
    println!(
        "{}",
        serde_json::to_string(&log.summary()).map_err(|e| Error::Serde(e.to_string()))?
    );
    Ok(())
}

fn compare_csv(logs: &[MetricsLog]) -> String {
    let mut out = String::from("strategy,round,sim_time_ms,val_accuracy,participants\n");
    for log in logs {
        for r in &log.rounds {
            let participants: Vec<String> = r.participants.iter().map(|p| p.to_string()).collect();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                log.strategy,
                r.round,
                r.sim_time_ms,
                r.val_accuracy,
                participants.join(";")
            ));
        }
    }
    out
}

fn cmd_compare(config_path: &Path, seed: Option<u64>, out: Option<&Path>, no_he: bool) -> Result<()> {
    let base = load_with_overrides(config_path, seed, None, no_he)?;
    let (dir, _) = {
        let dir = out.unwrap_or(Path::new(".")).to_path_buf();
        std::fs::create_dir_all(&dir)?;
        (dir.clone(), dir)
    };

    let mut logs = Vec::new();
    for strategy in StrategyKind::ALL {
        let mut config = base.clone();
        config.strategy = strategy;
        log::info!("compare: running {strategy}");
        logs.push(run_experiment(&config)?);
    }

    let csv_path = dir.join("compare.csv");
    std::fs::write(&csv_path, compare_csv(&logs))?;

    let summaries: serde_json::Map<String, serde_json::Value> = logs
        .iter()
        .map(|l| {
            (
                l.strategy.to_string(),
                serde_json::to_value(l.summary()).unwrap_or(serde_json::Value::Null),
            )
        })
        .collect();
    let summary_json = serde_json::to_string_pretty(&summaries)
        .map_err(|e| Error::Serde(e.to_string()))?;
    std::fs::write(dir.join("compare_summary.json"), &summary_json)?;
    println!("{summary_json}");
    Ok(())
}

fn cmd_synth(preset: &str, samples: usize, seed: u64, spread: Option<f64>, out: &Path) -> Result<()> {
    let mut spec = SynthSpec::preset(preset, samples)?;
    if let Some(spread) = spread {
        spec.spread = spread;
    }
    let dataset = synth_generate(&spec, seed)?;
    save_csv(&dataset, out)?;
    log::info!("wrote {} rows to {}", dataset.len(), out.display());
    println!("{}", out.display());
    Ok(())
}
