//! Batch experiment harness.
//!
//! Runs paired trials of both strategies over identical worlds: for a given
//! (master seed, trial index) the arrival trace, spectral-efficiency trace,
//! per-trial jitter and warm-up state are all derived independently of the
//! strategy, so biased vs unbiased comparisons differ only in policy.
//! Produces per-trial results, pooled sliding-window latency samples, and
//! deterministic structured-text outputs plus negotiation transcripts.

use std::path::Path;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::negotiation::{
    check_feasibility, prop_fair_split, run_negotiation, NegotiationAgent, NegotiationStatus,
    NegotiationTranscript,
};
use crate::policy::{SliceName, Strategy};
use crate::power::power_w;
use crate::proposer::{HeuristicProposer, Proposer};
use crate::risk::{empirical_var, SampleSet};
use crate::seed::SeedStream;
use crate::twin::{step_queues, Action, ArrivalProcess, QueueState};

pub const RESULTS_SCHEMA: &str = "slicesim-results-v1";

pub const SLICE_ORDER: [SliceName; 2] = [SliceName::Embb, SliceName::Urllc];

fn slice_label(i: usize) -> &'static str {
    match i {
        0 => "embb",
        _ => "urllc",
    }
}

/// Ground-truth outcome for one slice in one trial.
#[derive(Debug, Clone)]
pub struct SliceTrialResult {
    pub name: SliceName,
    /// Allocation the slice ran the evaluation horizon under.
    pub action: Action,
    /// Whether any sliding latency window exceeded the SLA.
    pub violated: bool,
    pub max_window_ms: f64,
    /// All sliding-window latencies (ms) over the evaluation horizon.
    pub window_latencies_ms: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub trial: usize,
    pub strategy: Strategy,
    pub status: NegotiationStatus,
    pub rounds_used: usize,
    pub consensus_verified: bool,
    pub slices: [SliceTrialResult; 2],
    pub prop_fair: [Action; 2],
    /// Fractional energy saving vs the proportional-fair baseline of the
    /// same trial (negative means the negotiation spent more).
    pub energy_saving_frac: f64,
}

/// All trials of one strategy, with pooled window samples per slice.
#[derive(Debug, Clone)]
pub struct StrategyRun {
    pub strategy: Strategy,
    pub trials: Vec<TrialResult>,
    pub transcripts: Vec<NegotiationTranscript>,
}

impl StrategyRun {
    pub fn violating_trials(&self, slice: usize) -> usize {
        self.trials
            .iter()
            .filter(|t| t.slices[slice].violated)
            .count()
    }

    /// Window latencies pooled across all trials for one slice.
    pub fn pooled_windows(&self, slice: usize) -> Vec<f64> {
        self.trials
            .iter()
            .flat_map(|t| t.slices[slice].window_latencies_ms.iter().copied())
            .collect()
    }

    /// Empirical lower quantile of the pooled window latencies.
    pub fn pooled_quantile(&self, slice: usize, q: f64) -> Result<f64> {
        let pooled = SampleSet::new(self.pooled_windows(slice))?;
        empirical_var(&pooled, q)
    }

    pub fn median_energy_saving(&self) -> f64 {
        let mut savings: Vec<f64> = self.trials.iter().map(|t| t.energy_saving_frac).collect();
        savings.sort_by(|a, b| a.partial_cmp(b).expect("finite savings"));
        let n = savings.len();
        if n % 2 == 1 {
            savings[n / 2]
        } else {
            0.5 * (savings[n / 2 - 1] + savings[n / 2])
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    /// Index 0: biased, index 1: unbiased.
    pub runs: [StrategyRun; 2],
}

impl ExperimentResult {
    pub fn run(&self, strategy: Strategy) -> &StrategyRun {
        match strategy {
            Strategy::Biased => &self.runs[0],
            Strategy::Unbiased => &self.runs[1],
        }
    }
}

/// Strategy-independent world data for one trial.
struct TrialWorld {
    processes: [ArrivalProcess; 2],
    /// Realized arrivals (bits) per slot per slice, warm-up + evaluation.
    arrivals: [Vec<f64>; 2],
    /// Realized spectral efficiency per slot per slice.
    se: [Vec<f64>; 2],
    /// Queue state of each slice at negotiation time (end of warm-up).
    warm_state: [QueueState; 2],
    prop_fair: [Action; 2],
}

fn build_world(config: &ExperimentConfig, trial_seed: SeedStream) -> Result<TrialWorld> {
    let consts = &config.constants;
    let total_slots = config.warmup_slots + config.eval_slots;
    let base = [
        config.slices.embb.arrival_process(),
        config.slices.urllc.arrival_process(),
    ];

    let mut processes = base;
    let mut arrivals: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut se: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for i in 0..2 {
        let label = slice_label(i);
        let mut jitter_rng = trial_seed.child("jitter").child(label).rng();
        processes[i] = base[i].with_trial_jitter(&mut jitter_rng);

        let mut arr_rng = trial_seed.child("arrivals").child(label).rng();
        arrivals[i] = (0..total_slots)
            .map(|t| processes[i].sample_bits_at(t as u64, consts.tau_s, &mut arr_rng))
            .collect();

        let mut se_rng = trial_seed.child("se").child(label).rng();
        se[i] = (0..total_slots)
            .map(|_| {
                if consts.se_max - consts.se_min <= 0.0 {
                    consts.se_min
                } else {
                    rand::Rng::random_range(&mut se_rng, consts.se_min..consts.se_max)
                }
            })
            .collect();
    }

    let prop_fair = prop_fair_split(
        config.pool(),
        [
            processes[0].mean_rate_mbps * processes[0].trial_multiplier,
            processes[1].mean_rate_mbps * processes[1].trial_multiplier,
        ],
    );

    // Warm-up under the proportional-fair split, then inject the
    // congestion backlog that triggers renegotiation: a fixed number of
    // milliseconds of the slice's jittered mean load, split evenly across
    // the two queue stages. Strategy-independent by construction.
    let slice_cfgs = [&config.slices.embb, &config.slices.urllc];
    let mut warm_state = [QueueState::empty(), QueueState::empty()];
    for i in 0..2 {
        for t in 0..config.warmup_slots {
            warm_state[i] =
                step_queues(warm_state[i], prop_fair[i], arrivals[i][t], se[i][t], consts)?;
        }
        let bits_per_ms =
            processes[i].mean_rate_mbps * processes[i].trial_multiplier * 1e6 * 1e-3;
        let backlog = slice_cfgs[i].initial_backlog_ms * bits_per_ms;
        warm_state[i].edge_bits += backlog / 2.0;
        warm_state[i].ran_bits += backlog / 2.0;
    }

    Ok(TrialWorld {
        processes,
        arrivals,
        se,
        warm_state,
        prop_fair,
    })
}

/// Sliding-window average latencies over the evaluation trajectory.
fn window_latencies(
    totals: &[f64],
    process: &ArrivalProcess,
    start_slot: u64,
    config: &ExperimentConfig,
) -> Vec<f64> {
    let horizon = config.constants.horizon_t;
    let tau_ms = config.constants.tau_ms();
    let mut prefix = vec![0.0];
    for v in totals {
        prefix.push(prefix.last().unwrap() + v);
    }
    (0..=totals.len() - horizon)
        .map(|w| {
            let backlog = prefix[w + horizon] - prefix[w];
            let mean_bits = process.window_mean_bits(
                start_slot + w as u64,
                horizon,
                config.constants.tau_s,
            );
            backlog / (mean_bits * horizon as f64) * tau_ms
        })
        .collect()
}

fn run_trial(
    config: &ExperimentConfig,
    world: &TrialWorld,
    strategy: Strategy,
    trial: usize,
    trial_seed: SeedStream,
    proposer: &mut dyn Proposer,
) -> Result<(TrialResult, NegotiationTranscript)> {
    let consts = &config.constants;
    let agents = [
        NegotiationAgent {
            spec: config.slice_spec(SliceName::Embb, strategy),
            state: world.warm_state[0],
            forecast: world.processes[0],
        },
        NegotiationAgent {
            spec: config.slice_spec(SliceName::Urllc, strategy),
            state: world.warm_state[1],
            forecast: world.processes[1],
        },
    ];
    let neg_seed = trial_seed.child("negotiation").child(match strategy {
        Strategy::Biased => "biased",
        Strategy::Unbiased => "unbiased",
    });
    let (state, transcript) = run_negotiation(
        &agents,
        config.pool(),
        consts,
        &config.negotiation,
        proposer,
        neg_seed,
        world.prop_fair,
    )?;
    debug_assert!(check_feasibility(
        state.allocations[0],
        state.allocations[1],
        config.pool()
    ));

    // Ground-truth evaluation of the committed allocations.
    let mut slices = Vec::with_capacity(2);
    for i in 0..2 {
        let spec = config.slice_spec(SLICE_ORDER[i], strategy);
        let mut q = world.warm_state[i];
        let mut totals = Vec::with_capacity(config.eval_slots);
        for t in 0..config.eval_slots {
            let slot = config.warmup_slots + t;
            q = step_queues(
                q,
                state.allocations[i],
                world.arrivals[i][slot],
                world.se[i][slot],
                consts,
            )?;
            totals.push(q.total_bits());
        }
        let windows = window_latencies(
            &totals,
            &world.processes[i],
            config.warmup_slots as u64,
            config,
        );
        let max_window_ms = windows.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        slices.push(SliceTrialResult {
            name: SLICE_ORDER[i],
            action: state.allocations[i],
            violated: max_window_ms > spec.sla_ms,
            max_window_ms,
            window_latencies_ms: windows,
        });
    }
    let slices: [SliceTrialResult; 2] = slices.try_into().expect("two slices");

    // System-level saving vs the proportional-fair baseline: both slices'
    // power summed. The baseline is strictly positive (static floor).
    let power = &config.negotiation.power;
    let actual_w: f64 = state.allocations.iter().map(|a| power_w(*a, power)).sum();
    let baseline_w: f64 = world.prop_fair.iter().map(|a| power_w(*a, power)).sum();
    if baseline_w <= 0.0 {
        return Err(Error::Parameter("baseline power must be > 0".into()));
    }
    let energy_saving_frac = (baseline_w - actual_w) / baseline_w;

    Ok((
        TrialResult {
            trial,
            strategy,
            status: state.status,
            rounds_used: state.rounds_used,
            consensus_verified: state.consensus_verified,
            slices,
            prop_fair: world.prop_fair,
            energy_saving_frac,
        },
        transcript,
    ))
}

/// Run the full paired experiment with the default heuristic proposer.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    run_experiment_with(config, &mut |_, _| {
        Ok(Box::new(HeuristicProposer::default()))
    })
}

/// Run the full paired experiment, constructing a proposer per
/// (trial, strategy) negotiation.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    make_proposer: &mut dyn FnMut(usize, Strategy) -> Result<Box<dyn Proposer>>,
) -> Result<ExperimentResult> {
    config.validate()?;
    let root = SeedStream::new(config.master_seed);

    let mut runs = [
        StrategyRun {
            strategy: Strategy::Biased,
            trials: Vec::new(),
            transcripts: Vec::new(),
        },
        StrategyRun {
            strategy: Strategy::Unbiased,
            trials: Vec::new(),
            transcripts: Vec::new(),
        },
    ];

    for trial in 0..config.n_trials {
        let trial_seed = root.child("trial").index(trial as u64);
        let world = build_world(config, trial_seed)?;
        for (s, strategy) in [Strategy::Biased, Strategy::Unbiased].into_iter().enumerate() {
            let mut proposer = make_proposer(trial, strategy)?;
            let (result, transcript) = run_trial(
                config,
                &world,
                strategy,
                trial,
                trial_seed,
                proposer.as_mut(),
            )
            .map_err(|e| {
                Error::Contract(format!("trial {trial} ({strategy}) aborted: {e}"))
            })?;
            runs[s].trials.push(result);
            runs[s].transcripts.push(transcript);
        }
    }

    Ok(ExperimentResult {
        config: config.clone(),
        runs,
    })
}

// ---------------------------------------------------------------------------
// Deterministic text outputs
// ---------------------------------------------------------------------------

fn fmt_f(v: f64) -> String {
    format!("{v:.6}")
}

fn results_table(run: &StrategyRun) -> String {
    let mut out = String::new();
    out.push_str(&format!("# {RESULTS_SCHEMA}\n"));
    out.push_str(&format!("# strategy: {}\n", run.strategy));
    out.push_str(
        "trial\tstatus\trounds\tverified\tembb_b_mhz\tembb_f_ghz\turllc_b_mhz\turllc_f_ghz\t\
         embb_max_ms\turllc_max_ms\tembb_violated\turllc_violated\tenergy_saving\n",
    );
    for t in &run.trials {
        let status = match t.status {
            NegotiationStatus::Consensus => "consensus",
            NegotiationStatus::MaxRoundsExhausted => "max_rounds",
            NegotiationStatus::Running => "running",
        };
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            t.trial,
            status,
            t.rounds_used,
            t.consensus_verified,
            fmt_f(t.slices[0].action.bandwidth_mhz),
            fmt_f(t.slices[0].action.cpu_ghz),
            fmt_f(t.slices[1].action.bandwidth_mhz),
            fmt_f(t.slices[1].action.cpu_ghz),
            fmt_f(t.slices[0].max_window_ms),
            fmt_f(t.slices[1].max_window_ms),
            t.slices[0].violated,
            t.slices[1].violated,
            fmt_f(t.energy_saving_frac),
        ));
    }
    out
}

fn latency_quantiles(result: &ExperimentResult) -> Result<String> {
    let grid = [0.5, 0.9, 0.99, 0.999, 0.9999, 0.99999];
    let mut out = String::new();
    out.push_str(&format!("# {RESULTS_SCHEMA}\n"));
    out.push_str("strategy\tslice\tquantile\tlatency_ms\n");
    for run in &result.runs {
        for (i, name) in SLICE_ORDER.iter().enumerate() {
            for q in grid {
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\n",
                    run.strategy,
                    name,
                    q,
                    fmt_f(run.pooled_quantile(i, q)?)
                ));
            }
        }
    }
    Ok(out)
}

fn summary_text(result: &ExperimentResult) -> Result<String> {
    let alpha = result.config.alpha;
    let mut out = String::new();
    out.push_str(&format!("# {RESULTS_SCHEMA}\n"));
    out.push_str(&format!(
        "master_seed\t{}\nn_trials\t{}\n",
        result.config.master_seed, result.config.n_trials
    ));
    for run in &result.runs {
        for (i, name) in SLICE_ORDER.iter().enumerate() {
            out.push_str(&format!(
                "{}\t{}\tviolating_trials\t{}\n",
                run.strategy,
                name,
                run.violating_trials(i)
            ));
            out.push_str(&format!(
                "{}\t{}\tp{}_ms\t{}\n",
                run.strategy,
                name,
                alpha,
                fmt_f(run.pooled_quantile(i, alpha)?)
            ));
        }
        out.push_str(&format!(
            "{}\tmedian_energy_saving\t{}\n",
            run.strategy,
            fmt_f(run.median_energy_saving())
        ));
        let unverified = run
            .trials
            .iter()
            .filter(|t| !t.consensus_verified)
            .count();
        out.push_str(&format!(
            "{}\tunverified_consensus_trials\t{}\n",
            run.strategy, unverified
        ));
    }
    Ok(out)
}

/// Write all experiment artifacts under `out_dir`: per-strategy results
/// tables, pooled latency quantiles, the summary, and one transcript per
/// negotiation. Output bytes depend only on (config, master seed).
pub fn emit_outputs(result: &ExperimentResult, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    for run in &result.runs {
        std::fs::write(
            out_dir.join(format!("results_{}.tsv", run.strategy)),
            results_table(run),
        )?;
        let dir = out_dir.join("transcripts").join(run.strategy.to_string());
        std::fs::create_dir_all(&dir)?;
        for (t, transcript) in run.transcripts.iter().enumerate() {
            transcript.write_jsonl(&dir.join(format!("trial_{t:03}.jsonl")))?;
        }
    }
    std::fs::write(
        out_dir.join("latency_quantiles.tsv"),
        latency_quantiles(result)?,
    )?;
    std::fs::write(out_dir.join("summary.tsv"), summary_text(result)?)?;
    Ok(())
}
