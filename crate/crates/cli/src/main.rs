use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use swoks_core::agent::PolicyBank;
use swoks_core::eval::{detection_delay, false_positive_rate};
use swoks_core::experiment::{
    detect_offline_file, policy_params, run_with_bank, sweep_beta, ExperimentConfig,
};

#[derive(Parser)]
#[command(name = "swoks", version, about = "Task-change detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured curriculum and write trace.csv, events.json and stream.csv.
    Run {
        /// Config file, or the name of a built-in preset (desk, paper).
        #[arg(long)]
        config: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Write the final policies to this file.
        #[arg(long)]
        save_bank: Option<PathBuf>,
        /// Start from policies saved by a previous run.
        #[arg(long)]
        load_bank: Option<PathBuf>,
    },
    /// Replay a recorded stream through the detector (no probing).
    Detect {
        #[arg(long)]
        stream: PathBuf,
        #[arg(long)]
        config: String,
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Count new-task events and accuracy for several KS adjustments.
    SweepBeta {
        #[arg(long)]
        config: String,
        #[arg(long, value_delimiter = ',', required = true)]
        betas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        seeds: Vec<u64>,
    },
    /// Fraction of single-task runs that raise a label-changing event.
    CalibrateFpr {
        #[arg(long)]
        config: String,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        /// Steps per run; defaults to the first curriculum segment.
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn load_config(name: &str) -> Result<ExperimentConfig> {
    let path = Path::new(name);
    if !path.exists() && matches!(name, "desk" | "paper") {
        return Ok(ExperimentConfig::preset(name)?);
    }
    ExperimentConfig::from_file(path).with_context(|| format!("loading config {name}"))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            config,
            seed,
            out,
            save_bank,
            load_bank,
        } => {
            let cfg = load_config(&config)?;
            let seed = seed.unwrap_or(cfg.master_seed);
            let bank = match load_bank {
                Some(p) => {
                    let mut bank = PolicyBank::new(policy_params(&cfg), cfg.agent.backup_freq)?;
                    let f = File::open(&p).with_context(|| format!("opening {}", p.display()))?;
                    bank.load(BufReader::new(f))
                        .with_context(|| format!("reading {}", p.display()))?;
                    Some(bank)
                }
                None => None,
            };
            let result = run_with_bank(&cfg, seed, bank)?;
            result.write_to(&out)?;
            if let Some(p) = save_bank {
                result.bank.save(File::create(&p)?)?;
            }
            let acc = result.trace.aligned_accuracy(Some(cfg.detector.stable_phase))?;
            let delays = detection_delay(&result.trace);
            println!("steps            {}", cfg.curriculum.total_steps());
            println!("labels           {}", result.labels.len());
            println!("new-task events  {}", result.new_task_events());
            println!("all events       {}", result.events.len());
            println!("aligned accuracy {acc:.4}");
            println!(
                "detection delays {}",
                delays
                    .iter()
                    .map(|d| d.map_or("-".to_string(), |d| d.to_string()))
                    .collect::<Vec<_>>()
                    .join(" ")
            );
            println!("outputs          {}", out.display());
        }
        Command::Detect {
            stream,
            config,
            beta,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(b) = beta {
                cfg.detector.beta = b;
            }
            let report = detect_offline_file(&stream, &cfg.detector)
                .with_context(|| format!("replaying {}", stream.display()))?;
            print!("{}", report.events_json()?);
        }
        Command::SweepBeta {
            config,
            betas,
            seeds,
        } => {
            let cfg = load_config(&config)?;
            if betas.is_empty() {
                bail!("--betas needs at least one value");
            }
            println!("beta,new_task_events,accuracy");
            for row in sweep_beta(&cfg, &betas, &seeds)? {
                println!("{},{},{:.4}", row.beta, row.new_task_events, row.accuracy);
            }
        }
        Command::CalibrateFpr {
            config,
            runs,
            steps,
            seed,
        } => {
            let cfg = load_config(&config)?;
            let (task, first_len) = cfg.curriculum.segments()[0];
            let stationary = cfg.stationary(task, steps.unwrap_or(first_len))?;
            let fpr = false_positive_rate(&stationary, runs, seed)?;
            println!("runs {runs}");
            println!("false positive rate {fpr:.4}");
        }
    }
    Ok(())
}
