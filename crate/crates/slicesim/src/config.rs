//! Experiment configuration: TOML-serializable knobs for the batch
//! harness, with validated defaults matching the reference scenario
//! (40 MHz / 40 GHz shared pools, 50 ms eMBB and 10 ms URLLC SLAs).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::negotiation::{NegotiationParams, ResourcePool};
use crate::policy::{SliceName, SliceSpec, Strategy};
use crate::twin::{ArrivalProcess, SystemConstants};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolConfig {
    pub b_total_mhz: f64,
    pub f_total_ghz: f64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            b_total_mhz: 40.0,
            f_total_ghz: 40.0,
        }
    }
}

/// Per-slice traffic and SLA settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SliceConfig {
    pub sla_ms: f64,
    pub mean_rate_mbps: f64,
    pub modulation_amplitude: f64,
    pub modulation_period_slots: u64,
    pub modulation_phase_slots: u64,
    pub jitter_frac: f64,
    pub packet_bits: f64,
    /// Congestion backlog at negotiation time, expressed as milliseconds of
    /// the slice's (jittered) mean load. Negotiation is triggered by a
    /// congestion episode; this sets its severity.
    pub initial_backlog_ms: f64,
}

impl Default for SliceConfig {
    fn default() -> Self {
        Self::default_embb()
    }
}

impl SliceConfig {
    fn default_embb() -> Self {
        Self {
            sla_ms: 50.0,
            mean_rate_mbps: 80.0,
            modulation_amplitude: 0.2,
            modulation_period_slots: 200,
            modulation_phase_slots: 125,
            jitter_frac: 0.1,
            packet_bits: 12_000.0,
            initial_backlog_ms: 48.0,
        }
    }

    fn default_urllc() -> Self {
        Self {
            sla_ms: 10.0,
            mean_rate_mbps: 50.0,
            modulation_amplitude: 0.2,
            modulation_period_slots: 200,
            modulation_phase_slots: 125,
            jitter_frac: 0.1,
            packet_bits: 12_000.0,
            initial_backlog_ms: 9.0,
        }
    }

    pub fn arrival_process(&self) -> ArrivalProcess {
        ArrivalProcess {
            mean_rate_mbps: self.mean_rate_mbps,
            modulation_amplitude: self.modulation_amplitude,
            modulation_period_slots: self.modulation_period_slots,
            modulation_phase_slots: self.modulation_phase_slots,
            jitter_frac: self.jitter_frac,
            packet_bits: self.packet_bits,
            trial_multiplier: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlicesConfig {
    pub embb: SliceConfig,
    pub urllc: SliceConfig,
}

impl Default for SlicesConfig {
    fn default() -> Self {
        Self {
            embb: SliceConfig::default_embb(),
            urllc: SliceConfig::default_urllc(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub n_trials: usize,
    /// Ground-truth evaluation horizon after warm-up, in slots.
    pub eval_slots: usize,
    /// Slots simulated before negotiation to populate queue state.
    pub warmup_slots: usize,
    pub alpha: f64,
    /// Over-provisioning threshold for mean-based agents.
    pub theta_biased: f64,
    /// Over-provisioning threshold for risk-aware agents.
    pub theta_unbiased: f64,
    pub pool: PoolConfig,
    pub constants: SystemConstants,
    pub negotiation: NegotiationParams,
    pub slices: SlicesConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 7,
            n_trials: 20,
            eval_slots: 1000,
            warmup_slots: 100,
            alpha: 0.99999,
            theta_biased: 0.7,
            theta_unbiased: 0.6,
            pool: PoolConfig::default(),
            constants: SystemConstants::default(),
            negotiation: NegotiationParams::default(),
            slices: SlicesConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: &std::path::Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("serialize: {e}")))
    }

    pub fn pool(&self) -> ResourcePool {
        ResourcePool::new(self.pool.b_total_mhz, self.pool.f_total_ghz)
    }

    pub fn slice_spec(&self, name: SliceName, strategy: Strategy) -> SliceSpec {
        let slice = match name {
            SliceName::Embb => &self.slices.embb,
            SliceName::Urllc => &self.slices.urllc,
        };
        let theta = match strategy {
            Strategy::Biased => self.theta_biased,
            Strategy::Unbiased => self.theta_unbiased,
        };
        SliceSpec {
            name,
            sla_ms: slice.sla_ms,
            strategy,
            theta,
            alpha: self.alpha,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return Err(Error::Config("n_trials must be >= 1".into()));
        }
        if self.eval_slots < self.constants.horizon_t {
            return Err(Error::Config(
                "eval_slots must cover at least one latency window".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config("alpha must lie in (0, 1)".into()));
        }
        for theta in [self.theta_biased, self.theta_unbiased] {
            if !(theta > 0.0 && theta <= 1.0) {
                return Err(Error::Config("theta must lie in (0, 1]".into()));
            }
        }
        ResourcePool::new(self.pool.b_total_mhz, self.pool.f_total_ghz).validate()?;
        self.constants.validate()?;
        for slice in [&self.slices.embb, &self.slices.urllc] {
            if !(slice.sla_ms > 0.0) {
                return Err(Error::Config("sla_ms must be > 0".into()));
            }
            if !(slice.initial_backlog_ms >= 0.0) {
                return Err(Error::Config("initial_backlog_ms must be >= 0".into()));
            }
            slice.arrival_process().validate()?;
        }

        // Stability: the worst-case joint offered load must fit inside the
        // full pool's service capacity at the weakest spectral efficiency,
        // otherwise queues grow without bound and latency is meaningless.
        let peak_mbps: f64 = [&self.slices.embb, &self.slices.urllc]
            .iter()
            .map(|s| s.mean_rate_mbps * (1.0 + s.modulation_amplitude) * (1.0 + s.jitter_frac))
            .sum();
        let edge_cap_mbps = self.pool.f_total_ghz * self.constants.cpu_rate_mbps_per_ghz;
        let ran_cap_mbps = self.pool.b_total_mhz * self.constants.se_min;
        let cap = edge_cap_mbps.min(ran_cap_mbps);
        if peak_mbps >= cap {
            return Err(Error::Config(format!(
                "unstable scenario: peak offered load {peak_mbps:.1} Mbps >= pool capacity {cap:.1} Mbps"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_roundtrip() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_toml_uses_defaults() {
        let cfg = ExperimentConfig::from_toml_str("n_trials = 3\nmaster_seed = 42\n").unwrap();
        assert_eq!(cfg.n_trials, 3);
        assert_eq!(cfg.master_seed, 42);
        assert_eq!(cfg.pool.b_total_mhz, 40.0);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_toml_str("bogus_knob = 1\n").is_err());
    }

    #[test]
    fn unstable_load_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.slices.embb.mean_rate_mbps = 500.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn theta_depends_on_strategy() {
        let cfg = ExperimentConfig::default();
        assert_eq!(
            cfg.slice_spec(SliceName::Urllc, Strategy::Biased).theta,
            0.7
        );
        assert_eq!(
            cfg.slice_spec(SliceName::Urllc, Strategy::Unbiased).theta,
            0.6
        );
    }
}
