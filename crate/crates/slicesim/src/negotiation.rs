//! Alternating multi-round negotiation protocol.
//!
//! Each round runs a risk-aware validation phase (both agents assess their
//! current allocation on fresh twin predictions), an early exit on joint
//! satisfaction, and a counter-proposal phase in which each unsatisfied
//! agent generates candidates, scores them against its own twin, applies
//! an upward or downward correction search, and commits a feasible
//! request. The engine emits a line-delimited transcript that is replayable
//! and byte-stable for a given (seed, config).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{
    assess, downward_search, score_proposal, stability_floor, upward_search, RiskAssessment,
    ScoreParams, SearchParams, SliceName, SliceSpec, TwinEvaluator,
};
use crate::power::{power_w, PowerParams};
use crate::proposer::{CandidateSet, HeuristicProposer, ProposalContext, Proposer};
use crate::twin::{Action, ArrivalProcess, QueueState, SystemConstants};
use crate::seed::SeedStream;

pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Shared bandwidth/CPU totals both agents negotiate over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourcePool {
    pub b_total_mhz: f64,
    pub f_total_ghz: f64,
}

impl ResourcePool {
    pub fn new(b_total_mhz: f64, f_total_ghz: f64) -> Self {
        Self {
            b_total_mhz,
            f_total_ghz,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b_total_mhz > 0.0 && self.f_total_ghz > 0.0) {
            return Err(Error::Config("pool totals must be > 0".into()));
        }
        Ok(())
    }

    /// Residual pool after the opponent's current request.
    pub fn residual(&self, opponent: Action) -> ResourcePool {
        ResourcePool {
            b_total_mhz: (self.b_total_mhz - opponent.bandwidth_mhz).max(0.0),
            f_total_ghz: (self.f_total_ghz - opponent.cpu_ghz).max(0.0),
        }
    }
}

/// True iff both sum constraints hold within tolerance.
pub fn check_feasibility(proposal: Action, opponent: Action, pool: ResourcePool) -> bool {
    proposal.bandwidth_mhz + opponent.bandwidth_mhz <= pool.b_total_mhz + FEASIBILITY_TOL
        && proposal.cpu_ghz + opponent.cpu_ghz <= pool.f_total_ghz + FEASIBILITY_TOL
}

/// Load-proportional initial split, normalized to exhaust the pool.
/// Zero total load falls back to an equal split.
pub fn prop_fair_split(pool: ResourcePool, arrival_means: [f64; 2]) -> [Action; 2] {
    let total: f64 = arrival_means.iter().sum();
    let share0 = if total > 0.0 {
        arrival_means[0] / total
    } else {
        0.5
    };
    let a0 = Action::new(pool.b_total_mhz * share0, pool.f_total_ghz * share0);
    let a1 = Action::new(
        pool.b_total_mhz - a0.bandwidth_mhz,
        pool.f_total_ghz - a0.cpu_ghz,
    );
    [a0, a1]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegotiationStatus {
    Running,
    Consensus,
    MaxRoundsExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchDirection {
    Upward,
    Downward,
}

/// One transcript record. Serialized one-per-line; proposal messages use
/// the stable wire keys (`proposed_bandwidth_mhz`, `proposed_cpu_ghz`,
/// `reasoning`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TranscriptEvent {
    Header {
        schema: String,
    },
    RoundStart {
        round: usize,
        embb: Action,
        urllc: Action,
    },
    Evaluation {
        round: usize,
        agent: SliceName,
        raw_cvar_ms: f64,
        mean_ms: f64,
        confidence: f64,
        target_ms: f64,
        decision_metric_ms: f64,
        sla_met: bool,
        over_provisioned: bool,
        satisfied: bool,
    },
    TurnStart {
        round: usize,
        agent: SliceName,
        backend: String,
        residual_b_mhz: f64,
        residual_f_ghz: f64,
    },
    ProposerFallback {
        agent: SliceName,
        reason: String,
    },
    Warning {
        agent: SliceName,
        message: String,
    },
    CandidateTest {
        agent: SliceName,
        action: Action,
        raw_cvar_ms: f64,
        mean_ms: f64,
        confidence: f64,
        target_ms: f64,
        sla_met: bool,
        energy_w: f64,
        score: f64,
    },
    SearchAttempt {
        agent: SliceName,
        direction: SearchDirection,
        attempt: usize,
        action: Action,
        metric_ms: f64,
        target_ms: f64,
        sla_met: bool,
        kept: bool,
    },
    ProposeAction {
        agent: SliceName,
        proposed_bandwidth_mhz: f64,
        proposed_cpu_ghz: f64,
        reasoning: String,
    },
    FeasibilityClamp {
        agent: SliceName,
        original: Action,
        clamped: Action,
    },
    ConsensusVerification {
        agent: SliceName,
        raw_cvar_ms: f64,
        confidence: f64,
        target_ms: f64,
        ok: bool,
    },
    Outcome {
        status: NegotiationStatus,
        round: usize,
        embb: Action,
        urllc: Action,
    },
}

pub const TRANSCRIPT_SCHEMA: &str = "slicesim-transcript-v1";

/// Ordered record of one negotiation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NegotiationTranscript {
    pub events: Vec<TranscriptEvent>,
}

impl NegotiationTranscript {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for event in &self.events {
            out.push_str(&serde_json::to_string(event)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()?)?;
        Ok(())
    }

    pub fn read_jsonl(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let events = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self { events })
    }

    fn push(&mut self, event: TranscriptEvent) {
        self.events.push(event);
    }
}

/// One negotiating agent: its policy, its private twin state and its
/// arrival forecast at negotiation time.
#[derive(Debug, Clone)]
pub struct NegotiationAgent {
    pub spec: SliceSpec,
    pub state: QueueState,
    pub forecast: ArrivalProcess,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NegotiationParams {
    pub n_rounds: usize,
    pub search: SearchParams,
    pub score: ScoreParams,
    pub power: PowerParams,
    /// Headroom factor for the per-slice stability floor (see
    /// [`stability_floor`]); requests are never shrunk below it.
    pub stability_margin: f64,
}

impl Default for NegotiationParams {
    fn default() -> Self {
        Self {
            n_rounds: 5,
            search: SearchParams::default(),
            score: ScoreParams::default(),
            power: PowerParams::default(),
            stability_margin: 1.25,
        }
    }
}

/// Final protocol state.
#[derive(Debug, Clone)]
pub struct NegotiationState {
    pub status: NegotiationStatus,
    pub rounds_used: usize,
    /// Committed allocations in protocol order [eMBB, URLLC].
    pub allocations: [Action; 2],
    pub assessments: [Option<RiskAssessment>; 2],
    /// False when a consensus failed fresh-seed re-verification.
    pub consensus_verified: bool,
    pub total_twin_evals: u64,
}

fn agent_label(i: usize) -> &'static str {
    match i {
        0 => "embb",
        _ => "urllc",
    }
}

/// Run the full protocol. Agent order is fixed: index 0 (eMBB) initiates,
/// per the protocol definition; satisfied agents hold their allocation
/// during counter-proposal turns.
pub fn run_negotiation(
    agents: &[NegotiationAgent; 2],
    pool: ResourcePool,
    consts: &SystemConstants,
    params: &NegotiationParams,
    proposer: &mut dyn Proposer,
    seed: SeedStream,
    initial_allocations: [Action; 2],
) -> Result<(NegotiationState, NegotiationTranscript)> {
    pool.validate()?;
    for agent in agents {
        agent.spec.validate()?;
        agent.forecast.validate()?;
    }
    if !check_feasibility(initial_allocations[0], initial_allocations[1], pool) {
        return Err(Error::Contract(
            "initial allocations exceed the pool".into(),
        ));
    }

    let mut transcript = NegotiationTranscript::default();
    transcript.push(TranscriptEvent::Header {
        schema: TRANSCRIPT_SCHEMA.to_string(),
    });

    let mut fallback = HeuristicProposer::default();
    let mut alloc = initial_allocations;
    let mut total_twin_evals: u64 = 0;
    let names = [agents[0].spec.name, agents[1].spec.name];

    // Per-round twin-call ceiling: 2 validations, per turn 3 candidates +
    // a bounded search, plus 2 verification evaluations on consensus.
    let per_round_cap = 2 + 2 * (3 + params.search.max_search_iters as u64) + 2;

    for round in 1..=params.n_rounds {
        let round_seed = seed.child("round").index(round as u64);
        transcript.push(TranscriptEvent::RoundStart {
            round,
            embb: alloc[0],
            urllc: alloc[1],
        });

        // --- Phase 1: risk-aware validation ---
        let mut dists = Vec::with_capacity(2);
        let mut assessments = Vec::with_capacity(2);
        for i in 0..2 {
            let mut twin = TwinEvaluator::new(
                agents[i].state,
                &agents[i].forecast,
                consts,
                round_seed.child("validate").child(agent_label(i)),
            );
            let dist = twin.evaluate(alloc[i], agents[i].spec.alpha)?;
            total_twin_evals += twin.eval_count();
            let assessment = assess(&dist, &agents[i].spec);
            transcript.push(TranscriptEvent::Evaluation {
                round,
                agent: names[i],
                raw_cvar_ms: dist.stats.cvar_alpha_ms,
                mean_ms: dist.stats.mean_ms,
                confidence: assessment.confidence,
                target_ms: assessment.dynamic_target_ms,
                decision_metric_ms: assessment.decision_metric_ms,
                sla_met: assessment.sla_met,
                over_provisioned: assessment.over_provisioned,
                satisfied: assessment.satisfied,
            });
            dists.push(dist);
            assessments.push(assessment);
        }

        if assessments.iter().all(|a| a.satisfied) {
            // Consensus: re-verify with fresh seeds to guard against a
            // seed-lucky agreement before committing.
            let mut verified = true;
            for i in 0..2 {
                let mut twin = TwinEvaluator::new(
                    agents[i].state,
                    &agents[i].forecast,
                    consts,
                    round_seed.child("verify").child(agent_label(i)),
                );
                let dist = twin.evaluate(alloc[i], agents[i].spec.alpha)?;
                total_twin_evals += twin.eval_count();
                let check = assess(&dist, &agents[i].spec);
                transcript.push(TranscriptEvent::ConsensusVerification {
                    agent: names[i],
                    raw_cvar_ms: dist.stats.cvar_alpha_ms,
                    confidence: check.confidence,
                    target_ms: check.dynamic_target_ms,
                    ok: check.sla_met,
                });
                verified &= check.sla_met;
            }
            transcript.push(TranscriptEvent::Outcome {
                status: NegotiationStatus::Consensus,
                round,
                embb: alloc[0],
                urllc: alloc[1],
            });
            debug_assert!(total_twin_evals <= per_round_cap * round as u64);
            return Ok((
                NegotiationState {
                    status: NegotiationStatus::Consensus,
                    rounds_used: round,
                    allocations: alloc,
                    assessments: [Some(assessments[0]), Some(assessments[1])],
                    consensus_verified: verified,
                    total_twin_evals,
                },
                transcript,
            ));
        }

        // --- Phase 2: counter-proposals, initiator first ---
        for i in 0..2 {
            if assessments[i].satisfied {
                continue; // no gratuitous churn
            }
            let j = 1 - i;
            let residual = pool.residual(alloc[j]);
            let turn_seed = round_seed.child("turn").child(agent_label(i));
            let mut twin = TwinEvaluator::new(
                agents[i].state,
                &agents[i].forecast,
                consts,
                turn_seed,
            );
            transcript.push(TranscriptEvent::TurnStart {
                round,
                agent: names[i],
                backend: proposer.name().to_string(),
                residual_b_mhz: residual.b_total_mhz,
                residual_f_ghz: residual.f_total_ghz,
            });

            let floor = stability_floor(&agents[i].forecast, consts, params.stability_margin);
            let ctx = ProposalContext {
                spec: agents[i].spec,
                assessment: assessments[i],
                own_action: alloc[i],
                opponent_action: alloc[j],
                remaining_pool: residual,
                min_action: floor,
                compute_latency_ms: dists[i].compute_latency_ms,
                radio_latency_ms: dists[i].mean_radio_ms(),
                round,
            };

            let set: CandidateSet = match proposer.generate(&ctx) {
                Ok(set) => set,
                Err(err) => {
                    transcript.push(TranscriptEvent::ProposerFallback {
                        agent: names[i],
                        reason: err.to_string(),
                    });
                    fallback.generate(&ctx)?
                }
            };
            for warning in &set.warnings {
                transcript.push(TranscriptEvent::Warning {
                    agent: names[i],
                    message: warning.clone(),
                });
            }

            // Score all candidates against the agent's own twin.
            let mut best: Option<(Action, crate::twin::LatencyDistribution, RiskAssessment, f64, String)> =
                None;
            for candidate in set.candidates() {
                let mut action = candidate.action;
                // Raise to the stability floor, then cap at the residual
                // pool (the pool constraint wins when they conflict).
                let clamped = Action::new(
                    action
                        .bandwidth_mhz
                        .max(floor.bandwidth_mhz)
                        .min(residual.b_total_mhz),
                    action.cpu_ghz.max(floor.cpu_ghz).min(residual.f_total_ghz),
                );
                if (clamped.bandwidth_mhz - action.bandwidth_mhz).abs() > FEASIBILITY_TOL
                    || (clamped.cpu_ghz - action.cpu_ghz).abs() > FEASIBILITY_TOL
                {
                    transcript.push(TranscriptEvent::FeasibilityClamp {
                        agent: names[i],
                        original: action,
                        clamped,
                    });
                    action = clamped;
                }
                let dist = twin.evaluate(action, agents[i].spec.alpha)?;
                let assessment = assess(&dist, &agents[i].spec);
                let score =
                    score_proposal(&assessment, power_w(action, &params.power), &params.score);
                transcript.push(TranscriptEvent::CandidateTest {
                    agent: names[i],
                    action,
                    raw_cvar_ms: dist.stats.cvar_alpha_ms,
                    mean_ms: dist.stats.mean_ms,
                    confidence: assessment.confidence,
                    target_ms: assessment.dynamic_target_ms,
                    sla_met: assessment.sla_met,
                    energy_w: power_w(action, &params.power),
                    score,
                });
                let better = best.as_ref().map_or(true, |(.., s, _)| score > *s);
                if better {
                    best = Some((action, dist, assessment, score, candidate.reasoning.clone()));
                }
            }
            let (sel_action, sel_dist, sel_assessment, _, reasoning) =
                best.expect("candidate set is non-empty");

            // Correction searches.
            let outcome = if !sel_assessment.sla_met {
                Some((
                    SearchDirection::Upward,
                    upward_search(
                        sel_action,
                        sel_dist,
                        sel_assessment,
                        &agents[i].spec,
                        residual,
                        &mut twin,
                        &params.search,
                        &params.power,
                        &params.score,
                    )?,
                ))
            } else if sel_assessment.over_provisioned {
                Some((
                    SearchDirection::Downward,
                    downward_search(
                        sel_action,
                        sel_dist,
                        sel_assessment,
                        &agents[i].spec,
                        floor,
                        &mut twin,
                        &params.search,
                    )?,
                ))
            } else {
                None
            };

            let (mut chosen, chosen_assessment) = match outcome {
                Some((direction, result)) => {
                    for (k, attempt) in result.attempts.iter().enumerate() {
                        transcript.push(TranscriptEvent::SearchAttempt {
                            agent: names[i],
                            direction,
                            attempt: k + 1,
                            action: attempt.action,
                            metric_ms: attempt.metric_ms,
                            target_ms: attempt.target_ms,
                            sla_met: attempt.sla_met,
                            kept: attempt.kept,
                        });
                    }
                    (result.action, result.assessment)
                }
                None => (sel_action, sel_assessment),
            };
            total_twin_evals += twin.eval_count();

            // Feasibility enforcement against the opponent's current request.
            if !check_feasibility(chosen, alloc[j], pool) {
                let residual_now = pool.residual(alloc[j]);
                let clamped = Action::new(
                    chosen.bandwidth_mhz.min(residual_now.b_total_mhz),
                    chosen.cpu_ghz.min(residual_now.f_total_ghz),
                );
                transcript.push(TranscriptEvent::FeasibilityClamp {
                    agent: names[i],
                    original: chosen,
                    clamped,
                });
                chosen = clamped;
            }
            alloc[i] = chosen;
            assessments[i] = chosen_assessment;
            transcript.push(TranscriptEvent::ProposeAction {
                agent: names[i],
                proposed_bandwidth_mhz: chosen.bandwidth_mhz,
                proposed_cpu_ghz: chosen.cpu_ghz,
                reasoning,
            });
        }
        debug_assert!(total_twin_evals <= per_round_cap * round as u64);
    }

    transcript.push(TranscriptEvent::Outcome {
        status: NegotiationStatus::MaxRoundsExhausted,
        round: params.n_rounds,
        embb: alloc[0],
        urllc: alloc[1],
    });
    let assessments = [None, None];
    Ok((
        NegotiationState {
            status: NegotiationStatus::MaxRoundsExhausted,
            rounds_used: params.n_rounds,
            allocations: alloc,
            assessments,
            consensus_verified: true,
            total_twin_evals,
        },
        transcript,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feasibility_examples() {
        let pool = ResourcePool::new(40.0, 40.0);
        assert!(check_feasibility(
            Action::new(14.0, 4.0),
            Action::new(23.0, 19.5),
            pool
        ));
        assert!(!check_feasibility(
            Action::new(25.0, 20.0),
            Action::new(20.0, 25.0),
            pool
        ));
        // Boundary is inclusive.
        assert!(check_feasibility(
            Action::new(20.0, 20.0),
            Action::new(20.0, 20.0),
            pool
        ));
    }

    #[test]
    fn prop_fair_split_examples() {
        let pool = ResourcePool::new(40.0, 40.0);
        let [a, b] = prop_fair_split(pool, [60.0, 60.0]);
        assert_eq!(a, Action::new(20.0, 20.0));
        assert_eq!(b, Action::new(20.0, 20.0));

        let [a, b] = prop_fair_split(pool, [90.0, 30.0]);
        assert_eq!(a, Action::new(30.0, 30.0));
        assert_eq!(b, Action::new(10.0, 10.0));

        // Zero load: equal-split fallback, pool exactly exhausted.
        let [a, b] = prop_fair_split(pool, [0.0, 0.0]);
        assert_eq!(a, Action::new(20.0, 20.0));
        assert_eq!(a.bandwidth_mhz + b.bandwidth_mhz, 40.0);
    }

    #[test]
    fn residual_pool_is_clamped() {
        let pool = ResourcePool::new(40.0, 40.0);
        let r = pool.residual(Action::new(45.0, 10.0));
        assert_eq!(r.b_total_mhz, 0.0);
        assert_eq!(r.f_total_ghz, 30.0);
    }

    #[test]
    fn transcript_jsonl_roundtrip() {
        let mut t = NegotiationTranscript::default();
        t.push(TranscriptEvent::Header {
            schema: TRANSCRIPT_SCHEMA.into(),
        });
        t.push(TranscriptEvent::ProposeAction {
            agent: SliceName::Urllc,
            proposed_bandwidth_mhz: 16.0,
            proposed_cpu_ghz: 13.0,
            reasoning: "balanced".into(),
        });
        let text = t.to_jsonl().unwrap();
        assert!(text.contains("\"proposed_bandwidth_mhz\":16.0"));
        assert!(text.contains("\"proposed_cpu_ghz\":13.0"));
        assert!(text.contains("\"reasoning\":\"balanced\""));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        t.write_jsonl(&path).unwrap();
        let back = NegotiationTranscript::read_jsonl(&path).unwrap();
        assert_eq!(back, t);
    }
}
