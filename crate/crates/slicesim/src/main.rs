//! Command-line entry point for batch negotiation experiments.

use std::path::PathBuf;

use anyhow::Context;
use clap::Parser;

use slicesim::config::ExperimentConfig;
use slicesim::harness::{emit_outputs, run_experiment_with};
use slicesim::proposer::{HeuristicProposer, Proposer, RemoteProposer, ReplayProposer};

/// Risk-aware slice negotiation simulator.
///
/// Remote proposer credentials are read from the environment only:
/// SLICESIM_REMOTE_URL (required), SLICESIM_REMOTE_API_KEY (optional
/// bearer token) and SLICESIM_REMOTE_MODEL (optional model name).
#[derive(Debug, Parser)]
#[command(name = "slicesim", version, about)]
struct Cli {
    /// TOML experiment config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override the number of paired trials.
    #[arg(long)]
    trials: Option<usize>,

    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Override the CVaR confidence level.
    #[arg(long)]
    alpha: Option<f64>,

    /// Directory for result tables and transcripts.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,

    /// Proposal backend: "heuristic", "replay:<transcript.jsonl>", or
    /// "remote" (requires SLICESIM_REMOTE_URL).
    #[arg(long, default_value = "heuristic")]
    proposer: String,
}

fn make_proposer(spec: &str) -> anyhow::Result<Box<dyn Proposer>> {
    if spec == "heuristic" {
        return Ok(Box::new(HeuristicProposer::default()));
    }
    if let Some(path) = spec.strip_prefix("replay:") {
        let p = ReplayProposer::from_transcript_file(std::path::Path::new(path))
            .with_context(|| format!("loading replay transcript {path}"))?;
        return Ok(Box::new(p));
    }
    if spec == "remote" {
        return Ok(Box::new(RemoteProposer::from_env()?));
    }
    anyhow::bail!("unknown proposer backend {spec:?} (expected heuristic, replay:<path>, remote)")
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();

    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::from_toml_file(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(trials) = cli.trials {
        config.n_trials = trials;
    }
    if let Some(seed) = cli.seed {
        config.master_seed = seed;
    }
    if let Some(alpha) = cli.alpha {
        config.alpha = alpha;
    }
    config.validate().context("invalid configuration")?;

    let backend = cli.proposer.clone();
    let result = run_experiment_with(&config, &mut |_, _| {
        make_proposer(&backend).map_err(|e| slicesim::Error::Config(e.to_string()))
    })
    .context("experiment failed")?;

    emit_outputs(&result, &cli.out_dir).context("writing outputs")?;

    for run in &result.runs {
        for (i, name) in slicesim::harness::SLICE_ORDER.iter().enumerate() {
            eprintln!(
                "{} {}: {}/{} violating trials, p{} = {:.3} ms",
                run.strategy,
                name,
                run.violating_trials(i),
                run.trials.len(),
                config.alpha,
                run.pooled_quantile(i, config.alpha)?,
            );
        }
        eprintln!(
            "{}: median energy saving {:.4}",
            run.strategy,
            run.median_energy_saving()
        );
    }
    eprintln!("outputs written to {}", cli.out_dir.display());
    Ok(())
}
