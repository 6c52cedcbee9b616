//! Experiment driver: wires the channel, the non-agent users, and the
//! learning agents into a lock-step per-slot loop, logs every slot, and
//! writes the run artifacts (CSV log, plot series, summary text).
//!
//! Slot order is fixed: every agent picks its action, non-agents act, the
//! uplink resolves, the access point builds the acknowledgement, the downlink
//! delivers (or drops) it per agent, and only then does each agent digest the
//! slot — derive rewards, advance state, store/recover experience, train, and
//! sync its target. Two implementations of this loop therefore agree on what
//! each agent knows at every step.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::config::{Experiment, ExperimentConfig};
use crate::env::Env;
use crate::metrics::{self, RunLog, RunSummary, SlotRecord};
use crate::oracle;
use crate::rng::SeedSplitter;
use crate::trainer::AgentRuntime;
use crate::{Error, Result};

/// Runs one experiment to completion and returns the full log plus its
/// summary. Deterministic: the log depends only on the validated config.
pub fn run_experiment(exp: &Experiment) -> Result<(RunLog, RunSummary)> {
    let seeds = SeedSplitter::new(exp.seed);
    let n = exp.users.len();
    let l = exp.l;
    let mut env = Env::new(exp.users.clone(), exp.channel, exp.train.k, None, &seeds);
    let mut agents: Vec<AgentRuntime> = (0..l)
        .map(|i| AgentRuntime::new(i, l, n, exp.alpha, exp.train, &seeds))
        .collect();
    let mut log = RunLog::new(
        exp.users.iter().map(|u| u.kind_label().to_string()).collect(),
        l,
    );

    let fault = |slot: usize| {
        move |e: Error| match e {
            Error::Fault { .. } => e,
            Error::Numeric(detail) => Error::Fault { slot, detail },
            other => other,
        }
    };

    for t in 0..exp.total_slots {
        let eps: Vec<f64> = agents.iter().map(AgentRuntime::epsilon).collect();
        let choices = agents
            .iter_mut()
            .map(|a| a.select().map_err(fault(t)))
            .collect::<Result<Vec<_>>>()?;
        let transmitted: Vec<bool> = (0..n)
            .map(|u| if u < l { choices[u].a } else { env.non_agent_action(u, t) })
            .collect();
        let result = env.step(t, transmitted);
        let ack = env.build_ack(t, l);
        let delivered = env.deliver_ack(l);

        let mut u_bits = Vec::with_capacity(l);
        let mut losses = Vec::with_capacity(l);
        for (i, agent) in agents.iter_mut().enumerate() {
            let report = agent
                .absorb(t, choices[i], result.busy, delivered[i].then_some(&ack))
                .map_err(fault(t))?;
            u_bits.push(choices[i].u);
            losses.push(report.loss);
        }

        log.push(SlotRecord {
            slot: t,
            actions: result.transmitted,
            indicators: result.indicators,
            ack_ok: delivered,
            u: u_bits,
            eps,
            loss: losses,
        });
    }

    let summary = metrics::summarize(&log, exp.alpha, exp.metrics.window);
    Ok((log, summary))
}

/// Directory a run's artifacts land in when the config names none.
pub fn default_out_dir(exp: &Experiment) -> PathBuf {
    exp.out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{}-seed{}", exp.name, exp.seed)))
}

/// Writes `run.csv`, `series.csv`, and `summary.txt` into `dir`.
pub fn write_artifacts(
    exp: &Experiment,
    log: &RunLog,
    summary: &RunSummary,
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let write = |name: &str, emit: &dyn Fn(&mut Vec<u8>) -> std::io::Result<()>| {
        let path = dir.join(name);
        let mut bytes = Vec::new();
        emit(&mut bytes).map_err(Error::io(&path))?;
        fs::write(&path, bytes).map_err(Error::io(&path))
    };
    write("run.csv", &|w| metrics::write_csv(log, w))?;
    write("series.csv", &|w| {
        metrics::write_series(log, w, exp.metrics.series_every, exp.metrics.window)
    })?;
    write("summary.txt", &|w| summary.write_text(w))?;
    Ok(())
}

/// [`run_experiment`] + [`write_artifacts`] into the default directory.
pub fn run_and_save(exp: &Experiment) -> Result<(RunSummary, PathBuf)> {
    let (log, summary) = run_experiment(exp)?;
    let dir = default_out_dir(exp);
    write_artifacts(exp, &log, &summary, &dir)?;
    Ok((summary, dir))
}

/// One suite entry: where the config came from and how the run ended.
#[derive(Debug)]
pub struct SuiteEntry {
    pub config: PathBuf,
    pub name: Option<String>,
    pub seed: Option<u64>,
    pub outcome: std::result::Result<RunSummary, String>,
}

/// Runs each config under `out_root` (artifacts in per-run subdirectories),
/// isolating failures, and writes an `index.txt` with one block per run plus
/// mean/sample-stddev aggregates of the successful runs' headline numbers.
pub fn run_suite(
    paths: &[PathBuf],
    out_root: &Path,
    overrides: &[String],
) -> Result<Vec<SuiteEntry>> {
    let mut entries = Vec::new();
    for path in paths {
        let attempt = || -> Result<(Experiment, RunSummary)> {
            let exp = ExperimentConfig::load(path, overrides)?.validate()?;
            let (log, summary) = run_experiment(&exp)?;
            let dir = out_root.join(format!("{}-seed{}", exp.name, exp.seed));
            write_artifacts(&exp, &log, &summary, &dir)?;
            Ok((exp, summary))
        };
        entries.push(match attempt() {
            Ok((exp, summary)) => SuiteEntry {
                config: path.clone(),
                name: Some(exp.name),
                seed: Some(exp.seed),
                outcome: Ok(summary),
            },
            Err(e) => SuiteEntry {
                config: path.clone(),
                name: None,
                seed: None,
                outcome: Err(e.to_string()),
            },
        });
    }

    fs::create_dir_all(out_root).map_err(Error::io(out_root))?;
    let index = out_root.join("index.txt");
    let mut f = fs::File::create(&index).map_err(Error::io(&index))?;
    f.write_all(render_index(&entries).as_bytes()).map_err(Error::io(&index))?;
    Ok(entries)
}

fn render_index(entries: &[SuiteEntry]) -> String {
    let mut out = String::new();
    for (i, e) in entries.iter().enumerate() {
        let _ = writeln!(out, "run/{i}/config={}", e.config.display());
        match &e.outcome {
            Ok(s) => {
                let _ = writeln!(out, "run/{i}/name={}", e.name.as_deref().unwrap_or(""));
                let _ = writeln!(out, "run/{i}/seed={}", e.seed.unwrap_or(0));
                let _ = writeln!(out, "run/{i}/status=ok");
                let _ = writeln!(out, "run/{i}/sum_final={}", s.sum_final);
                let _ = writeln!(out, "run/{i}/sum_log_final={}", s.sum_log_final);
            }
            Err(msg) => {
                let _ = writeln!(out, "run/{i}/status=error");
                let _ = writeln!(out, "run/{i}/error={}", msg.replace('\n', " "));
            }
        }
    }
    let ok: Vec<&RunSummary> = entries.iter().filter_map(|e| e.outcome.as_ref().ok()).collect();
    let _ = writeln!(out, "aggregate/runs={}", entries.len());
    let _ = writeln!(out, "aggregate/ok={}", ok.len());
    for (key, values) in [
        ("sum_final", ok.iter().map(|s| s.sum_final).collect::<Vec<_>>()),
        ("sum_log_final", ok.iter().map(|s| s.sum_log_final).collect::<Vec<_>>()),
    ] {
        if values.is_empty() {
            continue;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let stddev = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let _ = writeln!(out, "aggregate/{key}/mean={mean}");
        let _ = writeln!(out, "aggregate/{key}/stddev={stddev}");
    }
    out
}

/// Structured text for the model-aware benchmark of an experiment's topology:
/// the optimal policy, its exact per-user throughputs, and the objective.
pub fn render_benchmark(exp: &Experiment, alpha: Option<f64>) -> Result<String> {
    let alpha = alpha.unwrap_or(exp.alpha);
    let (policy, x, obj) = oracle::optimal_coexistence(&exp.users, &exp.channel, alpha, exp.l)?;
    let mut out = String::new();
    let _ = writeln!(out, "alpha={alpha}");
    let _ = writeln!(out, "frame={}", policy.frame());
    let probs: Vec<String> = policy.probabilities().iter().map(f64::to_string).collect();
    let _ = writeln!(out, "policy={}", probs.join(","));
    for (i, (u, v)) in exp.users.iter().zip(&x).enumerate() {
        let _ = writeln!(out, "user/{i}/kind={}", u.kind_label());
        let _ = writeln!(out, "user/{i}/throughput={v}");
    }
    let _ = writeln!(out, "sum={}", x.iter().sum::<f64>());
    let _ = writeln!(out, "objective={obj}");
    Ok(out)
}
