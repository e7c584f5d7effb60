//! Agent decision policies.
//!
//! Two strategies share one assessment shape: the biased policy compares
//! the distribution mean against the raw SLA, ignoring tail risk and
//! prediction confidence; the unbiased policy compares CVaR against a
//! confidence-tightened dynamic target. Both feed the same proposal
//! scoring and the upward (fix violation) / downward (save energy) local
//! searches.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::negotiation::ResourcePool;
use crate::power::{power_w, PowerParams};
use crate::risk::{confidence_score, TailStats};
use crate::seed::SeedStream;
use crate::twin::{
    predict_distribution, Action, ArrivalProcess, LatencyDistribution, QueueState,
    SystemConstants,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Biased,
    Unbiased,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Strategy::Biased => write!(f, "biased"),
            Strategy::Unbiased => write!(f, "unbiased"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SliceName {
    Embb,
    Urllc,
}

impl std::fmt::Display for SliceName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SliceName::Embb => write!(f, "eMBB"),
            SliceName::Urllc => write!(f, "URLLC"),
        }
    }
}

/// Per-slice negotiation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceSpec {
    pub name: SliceName,
    pub sla_ms: f64,
    pub strategy: Strategy,
    /// Over-provision threshold (0.7 biased, 0.6 unbiased by default).
    pub theta: f64,
    /// CVaR confidence level.
    pub alpha: f64,
}

impl SliceSpec {
    pub fn validate(&self) -> crate::error::Result<()> {
        if !(self.sla_ms > 0.0) {
            return Err(crate::error::Error::Config("sla_ms must be > 0".into()));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(crate::error::Error::Config("theta must lie in (0, 1)".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(crate::error::Error::Config("alpha must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Outcome of assessing one latency distribution under a slice policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskAssessment {
    pub stats: TailStats,
    /// Epistemic confidence C_E; populated for both strategies (the biased
    /// policy ignores it) so transcripts stay comparable.
    pub confidence: f64,
    /// SLA x C_E for the unbiased policy, the raw SLA for the biased one.
    pub dynamic_target_ms: f64,
    pub sla_met: bool,
    pub over_provisioned: bool,
    pub satisfied: bool,
    /// The value the policy actually compared: mean (biased) or CVaR (unbiased).
    pub decision_metric_ms: f64,
}

/// Evaluate the satisfaction predicates for one prediction.
pub fn assess(dist: &LatencyDistribution, spec: &SliceSpec) -> RiskAssessment {
    let stats = dist.stats;
    let confidence = confidence_score(stats.mean_ms, stats.std_ms);
    let (metric, target) = match spec.strategy {
        Strategy::Biased => (stats.mean_ms, spec.sla_ms),
        Strategy::Unbiased => (stats.cvar_alpha_ms, spec.sla_ms * confidence),
    };
    let sla_met = metric <= target;
    let over_provisioned = metric < spec.theta * target;
    RiskAssessment {
        stats,
        confidence,
        dynamic_target_ms: target,
        sla_met,
        over_provisioned,
        satisfied: sla_met && !over_provisioned,
        decision_metric_ms: metric,
    }
}

/// Proposal scoring constants. The (100, -1000) bases are calibration
/// constants exposed for sensitivity runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreParams {
    pub met_base: f64,
    pub violation_base: f64,
}

impl Default for ScoreParams {
    fn default() -> Self {
        Self {
            met_base: 100.0,
            violation_base: -1000.0,
        }
    }
}

/// Score a proposal: energy-minimizing among SLA-met candidates, least
/// target overshoot among violating ones. Higher is better.
pub fn score_proposal(assessment: &RiskAssessment, power_w: f64, score: &ScoreParams) -> f64 {
    if assessment.sla_met {
        score.met_base - power_w
    } else {
        score.violation_base - (assessment.decision_metric_ms - assessment.dynamic_target_ms)
    }
}

/// Local-search step sizes and iteration cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    pub step_bw_mhz: f64,
    pub step_cpu_ghz: f64,
    pub max_search_iters: usize,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            step_bw_mhz: 1.0,
            step_cpu_ghz: 2.0,
            max_search_iters: 20,
        }
    }
}

impl SearchParams {
    pub fn validate(&self) -> crate::error::Result<()> {
        if !(self.step_bw_mhz > 0.0 && self.step_cpu_ghz > 0.0) || self.max_search_iters < 1 {
            return Err(crate::error::Error::Config(
                "search steps must be > 0 and the iteration cap >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResourceKind {
    Bandwidth,
    Cpu,
}

/// Dominant latency component of a prediction. Ties break toward the
/// radio stage, which carries the aleatoric risk.
pub fn bottleneck(dist: &LatencyDistribution) -> ResourceKind {
    if dist.compute_latency_ms > dist.mean_radio_ms() {
        ResourceKind::Cpu
    } else {
        ResourceKind::Bandwidth
    }
}

/// Minimum long-run-stable allocation for a forecast: each stage's service
/// capacity must exceed the slice's (jittered) mean offered load by
/// `margin`, at the mean spectral efficiency for the radio stage. This
/// rules out queue divergence that a short prediction horizon cannot see;
/// tail risk above the mean remains the policy's job.
pub fn stability_floor(
    forecast: &ArrivalProcess,
    consts: &SystemConstants,
    margin: f64,
) -> Action {
    let rate_mbps = forecast.mean_rate_mbps * forecast.trial_multiplier;
    let se_mid = 0.5 * (consts.se_min + consts.se_max);
    Action::new(
        margin * rate_mbps / se_mid,
        margin * rate_mbps / consts.cpu_rate_mbps_per_ghz,
    )
}

/// An agent's handle on its private twin for one turn: evaluations consume
/// numbered substreams so a turn's seed sequence is reproducible.
pub struct TwinEvaluator<'a> {
    pub state: QueueState,
    pub forecast: &'a ArrivalProcess,
    pub consts: &'a SystemConstants,
    seed: SeedStream,
    evals: u64,
}

impl<'a> TwinEvaluator<'a> {
    pub fn new(
        state: QueueState,
        forecast: &'a ArrivalProcess,
        consts: &'a SystemConstants,
        seed: SeedStream,
    ) -> Self {
        Self {
            state,
            forecast,
            consts,
            seed,
            evals: 0,
        }
    }

    pub fn evaluate(&mut self, action: Action, alpha: f64) -> Result<LatencyDistribution> {
        let seed = self.seed.index(self.evals);
        self.evals += 1;
        predict_distribution(self.state, action, self.forecast, self.consts, seed, alpha)
    }

    /// Number of twin evaluations consumed so far.
    pub fn eval_count(&self) -> u64 {
        self.evals
    }
}

/// One evaluated step of a local search, recorded for the transcript.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchAttempt {
    pub action: Action,
    pub metric_ms: f64,
    pub target_ms: f64,
    pub sla_met: bool,
    pub kept: bool,
}

/// Result of a correction search: the chosen action with its evaluation.
pub struct SearchOutcome {
    pub action: Action,
    pub dist: LatencyDistribution,
    pub assessment: RiskAssessment,
    pub attempts: Vec<SearchAttempt>,
}

/// Upward search: fix an SLA violation by growing the bottleneck resource
/// by its step, clamped to the residual pool. Returns the best evaluated
/// action by score; the result may still be unsatisfied if the pool runs
/// out (negotiation continues, this is not an error).
#[allow(clippy::too_many_arguments)]
pub fn upward_search(
    action: Action,
    dist: LatencyDistribution,
    assessment: RiskAssessment,
    spec: &SliceSpec,
    residual: ResourcePool,
    twin: &mut TwinEvaluator<'_>,
    search: &SearchParams,
    power: &PowerParams,
    score: &ScoreParams,
) -> Result<SearchOutcome> {
    let mut attempts = Vec::new();
    let mut best_score = score_proposal(&assessment, power_w(action, power), score);
    let mut best = (action, dist, assessment);
    let mut current = best.0;
    let mut current_dist_assess = (best.1.clone(), best.2);

    for _ in 0..search.max_search_iters {
        if current_dist_assess.1.sla_met {
            break;
        }
        let mut candidate = current;
        match bottleneck(&current_dist_assess.0) {
            ResourceKind::Bandwidth => {
                candidate.bandwidth_mhz =
                    (candidate.bandwidth_mhz + search.step_bw_mhz).min(residual.b_total_mhz);
            }
            ResourceKind::Cpu => {
                candidate.cpu_ghz = (candidate.cpu_ghz + search.step_cpu_ghz).min(residual.f_total_ghz);
            }
        }
        if (candidate.bandwidth_mhz - current.bandwidth_mhz).abs() < 1e-12
            && (candidate.cpu_ghz - current.cpu_ghz).abs() < 1e-12
        {
            break; // pool exhausted on the bottleneck resource
        }
        let cand_dist = twin.evaluate(candidate, spec.alpha)?;
        let cand_assessment = assess(&cand_dist, spec);
        let cand_score = score_proposal(&cand_assessment, power_w(candidate, power), score);
        attempts.push(SearchAttempt {
            action: candidate,
            metric_ms: cand_assessment.decision_metric_ms,
            target_ms: cand_assessment.dynamic_target_ms,
            sla_met: cand_assessment.sla_met,
            kept: true,
        });
        current = candidate;
        current_dist_assess = (cand_dist.clone(), cand_assessment);
        if cand_score > best_score {
            best_score = cand_score;
            best = (candidate, cand_dist, cand_assessment);
        }
    }

    Ok(SearchOutcome {
        action: best.0,
        dist: best.1,
        assessment: best.2,
        attempts,
    })
}

/// Downward search: shed energy while over-provisioned by cutting the
/// non-bottleneck resource. A decrement that would break the SLA check is
/// discarded; the result never violates it. Resources are never cut below
/// `floor` (at least one step; callers raise it to the stability floor).
pub fn downward_search(
    action: Action,
    dist: LatencyDistribution,
    assessment: RiskAssessment,
    spec: &SliceSpec,
    floor: Action,
    twin: &mut TwinEvaluator<'_>,
    search: &SearchParams,
) -> Result<SearchOutcome> {
    let floor = Action::new(
        floor.bandwidth_mhz.max(search.step_bw_mhz),
        floor.cpu_ghz.max(search.step_cpu_ghz),
    );
    let mut attempts = Vec::new();
    let mut kept = (action, dist, assessment);

    for _ in 0..search.max_search_iters {
        if !kept.2.over_provisioned || !kept.2.sla_met {
            break;
        }
        let mut candidate = kept.0;
        let non_bottleneck = match bottleneck(&kept.1) {
            ResourceKind::Bandwidth => ResourceKind::Cpu,
            ResourceKind::Cpu => ResourceKind::Bandwidth,
        };
        match non_bottleneck {
            ResourceKind::Bandwidth => {
                let next = (candidate.bandwidth_mhz - search.step_bw_mhz).max(floor.bandwidth_mhz);
                if next >= candidate.bandwidth_mhz - 1e-12 {
                    break; // already at the floor
                }
                candidate.bandwidth_mhz = next;
            }
            ResourceKind::Cpu => {
                let next = (candidate.cpu_ghz - search.step_cpu_ghz).max(floor.cpu_ghz);
                if next >= candidate.cpu_ghz - 1e-12 {
                    break;
                }
                candidate.cpu_ghz = next;
            }
        }
        let cand_dist = twin.evaluate(candidate, spec.alpha)?;
        let cand_assessment = assess(&cand_dist, spec);
        attempts.push(SearchAttempt {
            action: candidate,
            metric_ms: cand_assessment.decision_metric_ms,
            target_ms: cand_assessment.dynamic_target_ms,
            sla_met: cand_assessment.sla_met,
            kept: cand_assessment.sla_met,
        });
        if !cand_assessment.sla_met {
            break; // discard the violating decrement
        }
        kept = (candidate, cand_dist, cand_assessment);
    }

    Ok(SearchOutcome {
        action: kept.0,
        dist: kept.1,
        assessment: kept.2,
        attempts,
    })
}
