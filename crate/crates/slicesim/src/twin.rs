//! Discrete-time two-stage (edge compute -> RAN radio) queuing model.
//!
//! The same state-transition kernel serves two roles: the ground-truth
//! world model the harness evaluates committed allocations in, and each
//! agent's private predictive twin, which runs seeded Monte Carlo rollouts
//! over the spectral-efficiency distribution to produce a full latency
//! distribution for a candidate action.
//!
//! Queue updates keep the edge recursion in its canonical
//! `max(0, Q - D) + arrivals` form. The RAN stage receives exactly the
//! bits the edge queue drains in the slot, `min(Q_e, D_e)`, so that bits
//! are conserved through the pipeline: arrivals enter the edge once,
//! transit to the RAN once, and depart once.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::risk::{summarize, SampleSet, TailStats};
use crate::seed::SeedStream;

/// Fixed physical and simulation constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemConstants {
    /// Slot duration (seconds).
    pub tau_s: f64,
    /// Edge processing rate (Mbit/s per GHz of CPU).
    pub cpu_rate_mbps_per_ghz: f64,
    /// Spectral-efficiency lower bound (bit/s/Hz).
    pub se_min: f64,
    /// Spectral-efficiency upper bound (bit/s/Hz).
    pub se_max: f64,
    /// Number of slots for Little's-law latency averaging.
    pub horizon_t: usize,
    /// Monte Carlo sample count per prediction.
    pub n_mc: usize,
}

impl Default for SystemConstants {
    fn default() -> Self {
        Self {
            tau_s: 1e-3,
            cpu_rate_mbps_per_ghz: 10.0,
            se_min: 5.0,
            se_max: 7.0,
            horizon_t: 50,
            n_mc: 100_000,
        }
    }
}

impl SystemConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_s > 0.0) {
            return Err(Error::Config("tau_s must be > 0".into()));
        }
        if !(self.cpu_rate_mbps_per_ghz > 0.0) {
            return Err(Error::Config("cpu_rate_mbps_per_ghz must be > 0".into()));
        }
        if !(0.0 < self.se_min && self.se_min <= self.se_max) {
            return Err(Error::Config("require 0 < se_min <= se_max".into()));
        }
        if self.horizon_t < 1 || self.n_mc < 1 {
            return Err(Error::Config("horizon_t and n_mc must be >= 1".into()));
        }
        Ok(())
    }

    /// Edge service quantum per slot (bits) for a CPU allocation.
    pub fn edge_bits_per_slot(&self, cpu_ghz: f64) -> f64 {
        self.tau_s * cpu_ghz * self.cpu_rate_mbps_per_ghz * 1e6
    }

    /// RAN service quantum per slot (bits) for a bandwidth allocation at a
    /// given spectral efficiency.
    pub fn ran_bits_per_slot(&self, bandwidth_mhz: f64, se_bps_per_hz: f64) -> f64 {
        self.tau_s * bandwidth_mhz * 1e6 * se_bps_per_hz
    }

    pub fn tau_ms(&self) -> f64 {
        self.tau_s * 1e3
    }
}

/// A slice's resource request: the action vector (bandwidth, CPU).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub bandwidth_mhz: f64,
    pub cpu_ghz: f64,
}

impl Action {
    pub fn new(bandwidth_mhz: f64, cpu_ghz: f64) -> Self {
        Self {
            bandwidth_mhz,
            cpu_ghz,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_mhz >= 0.0 && self.cpu_ghz >= 0.0)
            || !self.bandwidth_mhz.is_finite()
            || !self.cpu_ghz.is_finite()
        {
            return Err(Error::Contract(format!(
                "action components must be finite and >= 0, got ({}, {})",
                self.bandwidth_mhz, self.cpu_ghz
            )));
        }
        Ok(())
    }
}

/// Edge and RAN backlog (bits) for one slice at a slot boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueState {
    pub edge_bits: f64,
    pub ran_bits: f64,
    pub slot_index: u64,
}

impl QueueState {
    pub fn empty() -> Self {
        Self {
            edge_bits: 0.0,
            ran_bits: 0.0,
            slot_index: 0,
        }
    }

    pub fn new(edge_bits: f64, ran_bits: f64, slot_index: u64) -> Self {
        Self {
            edge_bits,
            ran_bits,
            slot_index,
        }
    }

    pub fn total_bits(&self) -> f64 {
        self.edge_bits + self.ran_bits
    }

    fn validate(&self) -> Result<()> {
        if self.edge_bits < 0.0 || self.ran_bits < 0.0 {
            return Err(Error::Contract("queue backlogs must be >= 0".into()));
        }
        Ok(())
    }
}

/// Bit movements during one slot, used for conservation accounting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotFlows {
    pub arrivals_bits: f64,
    pub edge_to_ran_bits: f64,
    pub ran_departed_bits: f64,
}

/// Advance both queues by one slot.
pub fn step_queues(
    state: QueueState,
    action: Action,
    arrivals_bits: f64,
    se_bps_per_hz: f64,
    consts: &SystemConstants,
) -> Result<QueueState> {
    step_queues_flows(state, action, arrivals_bits, se_bps_per_hz, consts).map(|(s, _)| s)
}

/// Advance both queues by one slot, also reporting the slot's bit flows.
pub fn step_queues_flows(
    state: QueueState,
    action: Action,
    arrivals_bits: f64,
    se_bps_per_hz: f64,
    consts: &SystemConstants,
) -> Result<(QueueState, SlotFlows)> {
    state.validate()?;
    action.validate()?;
    if !(arrivals_bits >= 0.0 && arrivals_bits.is_finite()) {
        return Err(Error::Contract(format!(
            "arrivals must be finite and >= 0, got {arrivals_bits}"
        )));
    }
    if !(se_bps_per_hz >= 0.0 && se_bps_per_hz.is_finite()) {
        return Err(Error::Contract(format!(
            "spectral efficiency must be finite and >= 0, got {se_bps_per_hz}"
        )));
    }

    let d_edge = consts.edge_bits_per_slot(action.cpu_ghz);
    let d_ran = consts.ran_bits_per_slot(action.bandwidth_mhz, se_bps_per_hz);

    let edge_to_ran = state.edge_bits.min(d_edge);
    let next_edge = (state.edge_bits - d_edge).max(0.0) + arrivals_bits;
    let ran_departed = state.ran_bits.min(d_ran);
    let next_ran = (state.ran_bits - d_ran).max(0.0) + edge_to_ran;

    Ok((
        QueueState {
            edge_bits: next_edge,
            ran_bits: next_ran,
            slot_index: state.slot_index + 1,
        },
        SlotFlows {
            arrivals_bits,
            edge_to_ran_bits: edge_to_ran,
            ran_departed_bits: ran_departed,
        },
    ))
}

/// Little's-law average end-to-end latency (ms) over a trajectory.
pub fn measure_latency(
    trajectory: &[QueueState],
    mean_arrival_bits_per_slot: f64,
    consts: &SystemConstants,
) -> Result<f64> {
    if trajectory.len() != consts.horizon_t {
        return Err(Error::Contract(format!(
            "trajectory length {} != horizon_t {}",
            trajectory.len(),
            consts.horizon_t
        )));
    }
    if !(mean_arrival_bits_per_slot > 0.0) {
        return Err(Error::UndefinedLatency(
            "mean arrival rate must be > 0".into(),
        ));
    }
    let total: f64 = trajectory.iter().map(QueueState::total_bits).sum();
    Ok(total / (mean_arrival_bits_per_slot * trajectory.len() as f64) * consts.tau_ms())
}

/// Time-varying stochastic arrival process for one slice.
///
/// The mean rate follows a sinusoid around the (jittered) base rate;
/// realized per-slot arrivals are Poisson counts of fixed-size packets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrivalProcess {
    /// Long-run mean bit arrival rate (Mbit/s) before jitter.
    pub mean_rate_mbps: f64,
    /// Relative amplitude of the sinusoidal modulation.
    pub modulation_amplitude: f64,
    /// Modulation period (slots); 0 disables modulation.
    pub modulation_period_slots: u64,
    /// Phase offset (slots) added to the slot index.
    pub modulation_phase_slots: u64,
    /// Half-width of the per-trial uniform jitter on the base rate.
    pub jitter_frac: f64,
    /// Packet size for Poisson arrival counts (bits).
    pub packet_bits: f64,
    /// Realized per-trial jitter multiplier (1.0 until a trial draws one).
    pub trial_multiplier: f64,
}

impl ArrivalProcess {
    pub fn new(mean_rate_mbps: f64) -> Self {
        Self {
            mean_rate_mbps,
            modulation_amplitude: 0.2,
            modulation_period_slots: 200,
            modulation_phase_slots: 0,
            jitter_frac: 0.1,
            packet_bits: 12_000.0,
            trial_multiplier: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean_rate_mbps >= 0.0) {
            return Err(Error::Config("mean_rate_mbps must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.modulation_amplitude)
            || !(0.0..=1.0).contains(&self.jitter_frac)
        {
            return Err(Error::Config(
                "modulation amplitude and jitter must lie in [0, 1]".into(),
            ));
        }
        if !(self.packet_bits > 0.0) {
            return Err(Error::Config("packet_bits must be > 0".into()));
        }
        if !(self.trial_multiplier >= 0.0) {
            return Err(Error::Config("trial_multiplier must be >= 0".into()));
        }
        Ok(())
    }

    /// Clone with a freshly drawn per-trial jitter multiplier.
    pub fn with_trial_jitter(&self, rng: &mut impl rand::Rng) -> Self {
        let mut out = *self;
        out.trial_multiplier = 1.0 + self.jitter_frac * rng.random_range(-1.0..=1.0);
        out
    }

    /// Deterministic mean rate (Mbit/s) at a slot.
    pub fn rate_mbps_at(&self, slot: u64) -> f64 {
        let modulated = if self.modulation_period_slots == 0 {
            1.0
        } else {
            let phase = (slot + self.modulation_phase_slots) as f64
                / self.modulation_period_slots as f64;
            1.0 + self.modulation_amplitude * (2.0 * std::f64::consts::PI * phase).sin()
        };
        (self.mean_rate_mbps * self.trial_multiplier * modulated).max(0.0)
    }

    /// Deterministic mean arrivals (bits) in one slot.
    pub fn mean_bits_at(&self, slot: u64, tau_s: f64) -> f64 {
        self.rate_mbps_at(slot) * 1e6 * tau_s
    }

    /// Stochastic arrivals (bits) in one slot: Poisson packet count.
    pub fn sample_bits_at(&self, slot: u64, tau_s: f64, rng: &mut impl rand::Rng) -> f64 {
        let expected_packets = self.mean_bits_at(slot, tau_s) / self.packet_bits;
        if expected_packets <= 0.0 {
            return 0.0;
        }
        let poisson = rand_distr::Poisson::new(expected_packets).expect("positive rate");
        let count: f64 = rng.sample(poisson);
        count * self.packet_bits
    }

    /// Mean arrivals per slot (bits) averaged over a window of slots.
    pub fn window_mean_bits(&self, start_slot: u64, slots: usize, tau_s: f64) -> f64 {
        (0..slots)
            .map(|t| self.mean_bits_at(start_slot + t as u64, tau_s))
            .sum::<f64>()
            / slots as f64
    }
}

/// Monte Carlo latency distribution for one (state, action) pair.
#[derive(Debug, Clone)]
pub struct LatencyDistribution {
    pub samples: SampleSet,
    /// Deterministic edge component (ms), identical across samples.
    pub compute_latency_ms: f64,
    /// Stochastic RAN components (ms), one per Monte Carlo sample.
    pub radio_latency_samples: Vec<f64>,
    pub stats: TailStats,
}

impl LatencyDistribution {
    /// Mean of the stochastic radio component (ms).
    pub fn mean_radio_ms(&self) -> f64 {
        self.stats.mean_ms - self.compute_latency_ms
    }
}

/// Roll the twin forward and return the predicted latency distribution.
///
/// The edge stage is deterministic given the arrival forecast, so it is
/// rolled once; each Monte Carlo sample then replays the RAN stage with
/// per-slot spectral efficiency drawn from U[se_min, se_max]. Sample `k`
/// always uses substream `k` of `seed`, so the result is identical for a
/// given (state, action, seed) regardless of evaluation order.
pub fn predict_distribution(
    state: QueueState,
    action: Action,
    arrival_forecast: &ArrivalProcess,
    consts: &SystemConstants,
    seed: SeedStream,
    alpha: f64,
) -> Result<LatencyDistribution> {
    action.validate()?;
    state.validate()?;
    let horizon = consts.horizon_t;
    let tau_ms = consts.tau_ms();
    let d_edge = consts.edge_bits_per_slot(action.cpu_ghz);

    // Deterministic edge rollout; record the per-slot inflow into the RAN.
    let mut edge = state.edge_bits;
    let mut ran_inflow = Vec::with_capacity(horizon);
    let mut sum_edge = 0.0;
    let mut sum_lambda = 0.0;
    for t in 0..horizon {
        let slot = state.slot_index + t as u64;
        let lambda = arrival_forecast.mean_bits_at(slot, consts.tau_s);
        ran_inflow.push(edge.min(d_edge));
        edge = (edge - d_edge).max(0.0) + lambda;
        sum_edge += edge;
        sum_lambda += lambda;
    }
    let mean_lambda = sum_lambda / horizon as f64;
    if !(mean_lambda > 0.0) {
        return Err(Error::UndefinedLatency(
            "arrival forecast has zero mean over the prediction window".into(),
        ));
    }
    let denom = mean_lambda * horizon as f64;
    let compute_latency_ms = sum_edge / denom * tau_ms;

    let frozen_se = consts.se_max - consts.se_min <= 0.0;
    let b_hz = action.bandwidth_mhz * 1e6;
    let mut radio = Vec::with_capacity(consts.n_mc);
    for k in 0..consts.n_mc {
        let mut rng = seed.index(k as u64).rng();
        let mut ran = state.ran_bits;
        let mut sum_ran = 0.0;
        for &inflow in &ran_inflow {
            let se = if frozen_se {
                consts.se_min
            } else {
                rand::Rng::random_range(&mut rng, consts.se_min..consts.se_max)
            };
            let d_ran = consts.tau_s * b_hz * se;
            ran = (ran - d_ran).max(0.0) + inflow;
            sum_ran += ran;
        }
        radio.push(sum_ran / denom * tau_ms);
    }

    let totals: Vec<f64> = radio.iter().map(|r| compute_latency_ms + r).collect();
    let samples = SampleSet::new(totals)?;
    let stats = summarize(&samples, alpha)?;
    Ok(LatencyDistribution {
        samples,
        compute_latency_ms,
        radio_latency_samples: radio,
        stats,
    })
}

/// Ground-truth world rollout: Poisson arrivals and per-slot random SE.
/// Returns the trajectory of the `n_slots` states after each step.
pub fn roll_world(
    state: QueueState,
    action: Action,
    process: &ArrivalProcess,
    consts: &SystemConstants,
    n_slots: usize,
    rng: &mut impl rand::Rng,
) -> Result<Vec<QueueState>> {
    let mut out = Vec::with_capacity(n_slots);
    let mut current = state;
    for _ in 0..n_slots {
        let arrivals = process.sample_bits_at(current.slot_index, consts.tau_s, rng);
        let se = if consts.se_max - consts.se_min <= 0.0 {
            consts.se_min
        } else {
            rng.random_range(consts.se_min..consts.se_max)
        };
        current = step_queues(current, action, arrivals, se, consts)?;
        out.push(current);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn consts() -> SystemConstants {
        SystemConstants::default()
    }

    #[test]
    fn empty_system_stays_empty() {
        let next = step_queues(
            QueueState::empty(),
            Action::new(10.0, 10.0),
            0.0,
            6.0,
            &consts(),
        )
        .unwrap();
        assert_eq!(next.edge_bits, 0.0);
        assert_eq!(next.ran_bits, 0.0);
        assert_eq!(next.slot_index, 1);
    }

    #[test]
    fn service_quanta_match_constants() {
        let c = consts();
        assert!((c.ran_bits_per_slot(16.0, 6.0) - 96_000.0).abs() < 1e-9);
        assert!((c.edge_bits_per_slot(13.0) - 130_000.0).abs() < 1e-9);
    }

    #[test]
    fn fresh_arrivals_wait_one_slot_at_the_edge() {
        // Arrivals land after service, so the edge retains them for the
        // next slot and the RAN receives nothing yet.
        let lam = 50_000.0;
        let (next, flows) = step_queues_flows(
            QueueState::empty(),
            Action::new(16.0, 13.0),
            lam,
            6.0,
            &consts(),
        )
        .unwrap();
        assert_eq!(next.edge_bits, lam);
        assert_eq!(next.ran_bits, 0.0);
        assert_eq!(flows.edge_to_ran_bits, 0.0);

        // One more slot: the retained bits transit to the RAN.
        let (after, flows) =
            step_queues_flows(next, Action::new(16.0, 13.0), lam, 6.0, &consts()).unwrap();
        assert_eq!(after.edge_bits, lam);
        assert_eq!(after.ran_bits, lam);
        assert_eq!(flows.edge_to_ran_bits, lam);
    }

    #[test]
    fn step_conserves_bits() {
        let state = QueueState::new(90_000.0, 120_000.0, 0);
        let action = Action::new(12.0, 7.0);
        let (next, flows) = step_queues_flows(state, action, 33_000.0, 5.5, &consts()).unwrap();
        let before = state.total_bits();
        let after = next.total_bits();
        let delta = after - before;
        let expected = flows.arrivals_bits - flows.ran_departed_bits;
        assert!((delta - expected).abs() < 1e-6);
    }

    #[test]
    fn negative_inputs_are_contract_violations() {
        let c = consts();
        let s = QueueState::empty();
        assert!(step_queues(s, Action::new(-1.0, 1.0), 0.0, 6.0, &c).is_err());
        assert!(step_queues(s, Action::new(1.0, 1.0), -5.0, 6.0, &c).is_err());
        assert!(step_queues(s, Action::new(1.0, 1.0), 0.0, -1.0, &c).is_err());
        assert!(step_queues(QueueState::new(-1.0, 0.0, 0), Action::new(1.0, 1.0), 0.0, 6.0, &c).is_err());
    }

    #[test]
    fn latency_zero_for_empty_trajectory_states() {
        let c = consts();
        let traj = vec![QueueState::empty(); c.horizon_t];
        assert_eq!(measure_latency(&traj, 1000.0, &c).unwrap(), 0.0);
    }

    #[test]
    fn latency_littles_law_closed_form() {
        let c = consts();
        // Constant total backlog B with E[arrivals] = B bits/slot -> 1 slot = 1 ms.
        let b = 42_000.0;
        let traj = vec![QueueState::new(b / 2.0, b / 2.0, 0); c.horizon_t];
        let l = measure_latency(&traj, b, &c).unwrap();
        assert!((l - 1.0).abs() < 1e-12);

        // Doubling all queue lengths doubles the result.
        let traj2 = vec![QueueState::new(b, b, 0); c.horizon_t];
        let l2 = measure_latency(&traj2, b, &c).unwrap();
        assert!((l2 - 2.0 * l).abs() < 1e-12);
    }

    #[test]
    fn latency_requires_positive_rate_and_full_horizon() {
        let c = consts();
        let traj = vec![QueueState::empty(); c.horizon_t];
        assert!(measure_latency(&traj, 0.0, &c).is_err());
        assert!(measure_latency(&traj[..10], 1.0, &c).is_err());
    }

    fn small_consts(n_mc: usize) -> SystemConstants {
        SystemConstants {
            n_mc,
            ..SystemConstants::default()
        }
    }

    #[test]
    fn frozen_se_gives_degenerate_distribution() {
        let consts = SystemConstants {
            se_min: 6.0,
            se_max: 6.0,
            ..small_consts(64)
        };
        let forecast = ArrivalProcess::new(30.0);
        let dist = predict_distribution(
            QueueState::new(0.0, 400_000.0, 0),
            Action::new(8.0, 10.0),
            &forecast,
            &consts,
            SeedStream::new(3),
            0.99999,
        )
        .unwrap();
        assert_eq!(dist.stats.std_ms, 0.0);
        assert_eq!(crate::risk::confidence_score(dist.stats.mean_ms, dist.stats.std_ms), 1.0);
        // Degenerate distribution: CVaR equals the (common) sample value;
        // the mean may differ from it by summation rounding only.
        assert!((dist.stats.cvar_alpha_ms - dist.stats.mean_ms).abs() < 1e-12);
    }

    #[test]
    fn prediction_is_seed_deterministic() {
        let consts = small_consts(256);
        let forecast = ArrivalProcess::new(60.0);
        let state = QueueState::new(200_000.0, 300_000.0, 17);
        let action = Action::new(11.0, 9.0);
        let a = predict_distribution(state, action, &forecast, &consts, SeedStream::new(9), 0.999)
            .unwrap();
        let b = predict_distribution(state, action, &forecast, &consts, SeedStream::new(9), 0.999)
            .unwrap();
        assert_eq!(a.samples.sorted(), b.samples.sorted());
        assert_eq!(a.compute_latency_ms, b.compute_latency_ms);
    }

    #[test]
    fn larger_action_stochastically_dominates() {
        let consts = small_consts(256);
        let forecast = ArrivalProcess::new(60.0);
        let state = QueueState::new(400_000.0, 600_000.0, 0);
        let seed = SeedStream::new(11);
        let small = predict_distribution(state, Action::new(10.0, 8.0), &forecast, &consts, seed, 0.999)
            .unwrap();
        let large = predict_distribution(state, Action::new(12.0, 10.0), &forecast, &consts, seed, 0.999)
            .unwrap();
        for (s, l) in small.samples.sorted().iter().zip(large.samples.sorted()) {
            assert!(l <= s, "sorted sample increased: {l} > {s}");
        }
    }

    #[test]
    fn sample_decomposition_invariant() {
        let consts = small_consts(128);
        let forecast = ArrivalProcess::new(40.0);
        let dist = predict_distribution(
            QueueState::new(100_000.0, 100_000.0, 0),
            Action::new(9.0, 7.0),
            &forecast,
            &consts,
            SeedStream::new(21),
            0.999,
        )
        .unwrap();
        assert_eq!(dist.samples.len(), consts.n_mc);
        assert_eq!(dist.radio_latency_samples.len(), consts.n_mc);
        let mut totals: Vec<f64> = dist
            .radio_latency_samples
            .iter()
            .map(|r| dist.compute_latency_ms + r)
            .collect();
        totals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in totals.iter().zip(dist.samples.sorted()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn arrival_process_rate_shape() {
        let mut p = ArrivalProcess::new(90.0);
        p.modulation_amplitude = 0.2;
        p.modulation_period_slots = 200;
        // Peak of the sinusoid at a quarter period.
        assert!((p.rate_mbps_at(50) - 108.0).abs() < 1e-9);
        assert!((p.rate_mbps_at(150) - 72.0).abs() < 1e-9);
        assert!((p.rate_mbps_at(0) - 90.0).abs() < 1e-9);
        p.trial_multiplier = 1.1;
        assert!((p.rate_mbps_at(0) - 99.0).abs() < 1e-9);
    }
}
