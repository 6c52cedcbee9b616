//! Command-line front end: run one experiment, run a suite of configs, or
//! print the model-aware benchmark for a config's topology.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use dlma::config::ExperimentConfig;
use dlma::harness;

#[derive(Parser)]
#[command(name = "dlma", version, about = "Slotted-spectrum coexistence simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a single experiment config and write its artifacts.
    Run {
        /// Experiment TOML file.
        #[arg(long)]
        config: PathBuf,
        /// Replace the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Replace the config's total_slots.
        #[arg(long)]
        slots: Option<usize>,
        /// Replace the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Config override as dotted.path=value (repeatable),
        /// e.g. --override channel.e_down=0.4
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run every named config (files, or directories scanned for *.toml)
    /// and write per-run artifacts plus an index under --out.
    Suite {
        /// Config files and/or directories.
        configs: Vec<PathBuf>,
        #[arg(long, default_value = "runs/suite")]
        out: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Print the model-aware benchmark (optimal policy, throughputs,
    /// objective) for a config's topology.
    Oracle {
        /// Experiment TOML file.
        #[arg(long)]
        config: PathBuf,
        /// Evaluate at this alpha instead of the config's.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.cmd {
        Cmd::Run { config, seed, slots, out, overrides } => {
            let mut cfg = ExperimentConfig::load(&config, &overrides)
                .with_context(|| format!("loading {}", config.display()))?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(slots) = slots {
                cfg.total_slots = slots;
            }
            if let Some(out) = out {
                cfg.out_dir = Some(out);
            }
            let exp = cfg.validate()?;
            let (summary, dir) = harness::run_and_save(&exp)?;
            let mut text = Vec::new();
            summary.write_text(&mut text)?;
            print!("{}", String::from_utf8_lossy(&text));
            println!("artifacts={}", dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Suite { configs, out, overrides } => {
            let mut files = Vec::new();
            for path in &configs {
                if path.is_dir() {
                    let mut found: Vec<PathBuf> = std::fs::read_dir(path)
                        .with_context(|| format!("scanning {}", path.display()))?
                        .filter_map(|e| e.ok().map(|e| e.path()))
                        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
                        .collect();
                    found.sort();
                    files.extend(found);
                } else {
                    files.push(path.clone());
                }
            }
            let entries = harness::run_suite(&files, &out, &overrides)?;
            for e in &entries {
                match &e.outcome {
                    Ok(s) => println!(
                        "ok {} (seed {}): sum_final={}",
                        e.name.as_deref().unwrap_or("?"),
                        e.seed.unwrap_or(0),
                        s.sum_final
                    ),
                    Err(msg) => println!("error {}: {msg}", e.config.display()),
                }
            }
            println!("index={}", out.join("index.txt").display());
            let failed = entries.iter().filter(|e| e.outcome.is_err()).count();
            if failed > 0 {
                eprintln!("{failed} of {} runs failed", entries.len());
                return Ok(ExitCode::FAILURE);
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Oracle { config, alpha, overrides } => {
            let exp = ExperimentConfig::load(&config, &overrides)
                .with_context(|| format!("loading {}", config.display()))?
                .validate()?;
            print!("{}", harness::render_benchmark(&exp, alpha)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}
