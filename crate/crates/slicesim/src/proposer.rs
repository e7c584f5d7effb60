//! Candidate-generation backends.
//!
//! The negotiation engine asks a [`Proposer`] for exactly three candidate
//! actions per counter-proposal turn. The default backend is a
//! deterministic heuristic that brackets the current operating point; a
//! replay backend replays candidate sets recorded in a transcript; and an
//! optional remote backend posts a rendered context to an LLM endpoint and
//! parses a strict three-candidate response. Any backend failure falls
//! back to the heuristic (the engine records the fallback in the
//! transcript); candidate generation must never deadlock a round.

use std::collections::VecDeque;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::negotiation::{ResourcePool, TranscriptEvent};
use crate::policy::{RiskAssessment, SliceName, SliceSpec};
use crate::twin::Action;

/// Everything a backend may condition on when generating candidates.
#[derive(Debug, Clone)]
pub struct ProposalContext {
    pub spec: SliceSpec,
    pub assessment: RiskAssessment,
    pub own_action: Action,
    pub opponent_action: Action,
    /// Residual pool: totals minus the opponent's current request.
    pub remaining_pool: ResourcePool,
    /// Stability floor: requests below this diverge in the long run and
    /// are raised to it by the engine.
    pub min_action: Action,
    pub compute_latency_ms: f64,
    pub radio_latency_ms: f64,
    pub round: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub action: Action,
    pub reasoning: String,
}

/// Exactly three candidates, plus flags the engine copies into the transcript.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    candidates: Vec<Candidate>,
    pub padded: bool,
    pub warnings: Vec<String>,
}

pub const CANDIDATE_COUNT: usize = 3;

impl CandidateSet {
    pub fn new(candidates: Vec<Candidate>) -> Result<Self> {
        if candidates.len() != CANDIDATE_COUNT {
            return Err(Error::ProposalParse(format!(
                "expected exactly {CANDIDATE_COUNT} candidates, got {}",
                candidates.len()
            )));
        }
        Ok(Self {
            candidates,
            padded: false,
            warnings: Vec::new(),
        })
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }
}

pub trait Proposer {
    fn generate(&mut self, ctx: &ProposalContext) -> Result<CandidateSet>;

    /// Backend name recorded in transcripts.
    fn name(&self) -> &'static str;
}

fn clamp_to_pool(action: Action, pool: ResourcePool) -> (Action, bool) {
    let clamped = Action::new(
        action.bandwidth_mhz.clamp(0.0, pool.b_total_mhz.max(0.0)),
        action.cpu_ghz.clamp(0.0, pool.f_total_ghz.max(0.0)),
    );
    let changed = (clamped.bandwidth_mhz - action.bandwidth_mhz).abs() > 1e-12
        || (clamped.cpu_ghz - action.cpu_ghz).abs() > 1e-12;
    (clamped, changed)
}

/// Deterministic bracketing heuristic (the default backend).
///
/// The bracketing factors are calibration constants; the spreads they
/// produce roughly match the recorded negotiation logs.
#[derive(Debug, Clone)]
pub struct HeuristicProposer {
    pub grow_factor: f64,
    pub shrink_factor: f64,
}

impl Default for HeuristicProposer {
    fn default() -> Self {
        Self {
            grow_factor: 1.15,
            shrink_factor: 0.85,
        }
    }
}

impl HeuristicProposer {
    fn reason(&self, label: &str, ctx: &ProposalContext, action: Action) -> String {
        format!(
            "{label} proposal for {}: requesting ({:.2} MHz, {:.2} GHz). Current {} is {:.2}ms \
             vs internal target {:.2}ms with confidence_score {:.2}; compute latency {:.2}ms, \
             radio latency {:.2}ms; residual pool ({:.2} MHz, {:.2} GHz).",
            ctx.spec.name,
            action.bandwidth_mhz,
            action.cpu_ghz,
            match ctx.spec.strategy {
                crate::policy::Strategy::Biased => "mean latency",
                crate::policy::Strategy::Unbiased => "CVaR latency",
            },
            ctx.assessment.decision_metric_ms,
            ctx.assessment.dynamic_target_ms,
            ctx.assessment.confidence,
            ctx.compute_latency_ms,
            ctx.radio_latency_ms,
            ctx.remaining_pool.b_total_mhz,
            ctx.remaining_pool.f_total_ghz,
        )
    }
}

impl Proposer for HeuristicProposer {
    fn generate(&mut self, ctx: &ProposalContext) -> Result<CandidateSet> {
        let pool = ctx.remaining_pool;
        let radio_bound = ctx.radio_latency_ms >= ctx.compute_latency_ms;

        if pool.b_total_mhz <= 0.0 || pool.f_total_ghz <= 0.0 {
            // Degenerate pool: one clamped candidate, padded by repetition.
            let (action, _) = clamp_to_pool(ctx.own_action, pool);
            let candidate = Candidate {
                reasoning: self.reason("Degenerate-pool", ctx, action),
                action,
            };
            let mut set = CandidateSet::new(vec![candidate; CANDIDATE_COUNT])?;
            set.padded = true;
            set.warnings
                .push("degenerate residual pool; candidate set padded by repetition".into());
            return Ok(set);
        }

        let mut conservative = ctx.own_action;
        let mut aggressive = ctx.own_action;
        if radio_bound {
            conservative.bandwidth_mhz *= self.grow_factor;
            aggressive.cpu_ghz *= self.shrink_factor;
        } else {
            conservative.cpu_ghz *= self.grow_factor;
            aggressive.bandwidth_mhz *= self.shrink_factor;
        }
        // Never offer to shrink below the stability floor.
        aggressive.bandwidth_mhz = aggressive.bandwidth_mhz.max(ctx.min_action.bandwidth_mhz);
        aggressive.cpu_ghz = aggressive.cpu_ghz.max(ctx.min_action.cpu_ghz);

        let mut warnings = Vec::new();
        let mut make = |label: &str, raw: Action| {
            let (action, clamped) = clamp_to_pool(raw, pool);
            if clamped {
                warnings.push(format!(
                    "{label} candidate ({:.2} MHz, {:.2} GHz) clamped to residual pool",
                    raw.bandwidth_mhz, raw.cpu_ghz
                ));
            }
            Candidate {
                reasoning: self.reason(label, ctx, action),
                action,
            }
        };

        let candidates = vec![
            make("Conservative", conservative),
            make("Balanced", ctx.own_action),
            make("Aggressive", aggressive),
        ];
        let mut set = CandidateSet::new(candidates)?;
        set.warnings = warnings;
        Ok(set)
    }

    fn name(&self) -> &'static str {
        "heuristic"
    }
}

/// Replays candidate sets recorded in an earlier transcript, in per-agent
/// turn order. Exhaustion is an error; the engine falls back to the
/// heuristic and notes it.
#[derive(Debug, Clone, Default)]
pub struct ReplayProposer {
    embb: VecDeque<CandidateSet>,
    urllc: VecDeque<CandidateSet>,
}

impl ReplayProposer {
    pub fn from_candidate_sets(
        embb: Vec<CandidateSet>,
        urllc: Vec<CandidateSet>,
    ) -> Self {
        Self {
            embb: embb.into(),
            urllc: urllc.into(),
        }
    }

    /// Rebuild per-turn candidate sets from a recorded transcript file
    /// (line-delimited events, format owned by the negotiation engine).
    pub fn from_transcript_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut embb: Vec<CandidateSet> = Vec::new();
        let mut urllc: Vec<CandidateSet> = Vec::new();
        let mut pending: Vec<(SliceName, Candidate)> = Vec::new();

        let mut flush = |pending: &mut Vec<(SliceName, Candidate)>| -> Result<()> {
            if pending.is_empty() {
                return Ok(());
            }
            let agent = pending[0].0;
            let candidates: Vec<Candidate> =
                pending.drain(..).map(|(_, c)| c).collect();
            let set = CandidateSet::new(candidates)?;
            match agent {
                SliceName::Embb => embb.push(set),
                SliceName::Urllc => urllc.push(set),
            }
            Ok(())
        };

        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let event: TranscriptEvent = serde_json::from_str(line)?;
            match event {
                TranscriptEvent::CandidateTest { agent, action, .. } => {
                    if let Some((prev, _)) = pending.first() {
                        if *prev != agent || pending.len() == CANDIDATE_COUNT {
                            flush(&mut pending)?;
                        }
                    }
                    pending.push((
                        agent,
                        Candidate {
                            action,
                            reasoning: String::new(),
                        },
                    ));
                }
                _ => flush(&mut pending)?,
            }
        }
        flush(&mut pending)?;
        Ok(Self {
            embb: embb.into(),
            urllc: urllc.into(),
        })
    }
}

impl Proposer for ReplayProposer {
    fn generate(&mut self, ctx: &ProposalContext) -> Result<CandidateSet> {
        let queue = match ctx.spec.name {
            SliceName::Embb => &mut self.embb,
            SliceName::Urllc => &mut self.urllc,
        };
        queue.pop_front().ok_or_else(|| {
            Error::ReplayExhausted(format!(
                "no recorded candidate set left for {} (round {})",
                ctx.spec.name, ctx.round
            ))
        })
    }

    fn name(&self) -> &'static str {
        "replay"
    }
}

/// Wire schema for one remote candidate.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RemoteCandidate {
    proposed_bandwidth_mhz: f64,
    proposed_cpu_ghz: f64,
    reasoning: String,
}

/// Strict parse of a remote response: a JSON array of exactly three
/// candidate objects. Out-of-pool values are clamped with a warning.
pub fn parse_remote_response(raw: &str, pool: ResourcePool) -> Result<CandidateSet> {
    let parsed: Vec<RemoteCandidate> = serde_json::from_str(raw)
        .map_err(|e| Error::ProposalParse(format!("malformed candidate document: {e}")))?;
    if parsed.len() != CANDIDATE_COUNT {
        return Err(Error::ProposalParse(format!(
            "expected exactly {CANDIDATE_COUNT} candidates, got {}",
            parsed.len()
        )));
    }
    let mut warnings = Vec::new();
    let candidates = parsed
        .into_iter()
        .map(|c| {
            if !c.proposed_bandwidth_mhz.is_finite() || !c.proposed_cpu_ghz.is_finite() {
                return Err(Error::ProposalParse("non-finite candidate fields".into()));
            }
            let raw_action = Action::new(c.proposed_bandwidth_mhz, c.proposed_cpu_ghz);
            let (action, clamped) = clamp_to_pool(raw_action, pool);
            if clamped {
                warnings.push(format!(
                    "remote candidate ({:.2} MHz, {:.2} GHz) clamped to residual pool \
                     ({:.2} MHz, {:.2} GHz)",
                    raw_action.bandwidth_mhz,
                    raw_action.cpu_ghz,
                    pool.b_total_mhz,
                    pool.f_total_ghz
                ));
            }
            Ok(Candidate {
                action,
                reasoning: c.reasoning,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut set = CandidateSet::new(candidates)?;
    set.warnings = warnings;
    Ok(set)
}

/// Render the negotiation context into the prompt sent to the remote
/// backend. The field set mirrors what the engine logs per turn.
pub fn render_context_prompt(ctx: &ProposalContext) -> String {
    format!(
        "You negotiate radio bandwidth (MHz) and edge CPU (GHz) for the {slice} network \
         slice.\n\
         Current request: {ob:.2} MHz, {oc:.2} GHz. Opponent request: {pb:.2} MHz, {pc:.2} GHz.\n\
         Residual pool: {rb:.2} MHz, {rc:.2} GHz. Internal latency target: {target:.2} ms.\n\
         Current decision metric: {metric:.2} ms (compute {comp:.2} ms, radio {radio:.2} ms), \
         confidence_score {conf:.2}, round {round}.\n\
         Reply with ONLY a JSON array of exactly 3 objects, each with numeric fields \
         \"proposed_bandwidth_mhz\" and \"proposed_cpu_ghz\" and a string field \"reasoning\" \
         that states the latency risk, the confidence score and the target you reasoned from. \
         All candidates must fit inside the residual pool.",
        slice = ctx.spec.name,
        ob = ctx.own_action.bandwidth_mhz,
        oc = ctx.own_action.cpu_ghz,
        pb = ctx.opponent_action.bandwidth_mhz,
        pc = ctx.opponent_action.cpu_ghz,
        rb = ctx.remaining_pool.b_total_mhz,
        rc = ctx.remaining_pool.f_total_ghz,
        target = ctx.assessment.dynamic_target_ms,
        metric = ctx.assessment.decision_metric_ms,
        comp = ctx.compute_latency_ms,
        radio = ctx.radio_latency_ms,
        conf = ctx.assessment.confidence,
        round = ctx.round,
    )
}

/// Remote LLM backend: one HTTP POST per turn, bounded timeout, at most
/// one retry. Credentials come from the environment, never from flags.
pub struct RemoteProposer {
    endpoint: String,
    api_key: Option<String>,
    model: String,
    timeout: Duration,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    model: &'a str,
    prompt: &'a str,
}

impl RemoteProposer {
    pub fn new(endpoint: String, api_key: Option<String>, model: String) -> Result<Self> {
        let timeout = Duration::from_secs(10);
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Remote(e.to_string()))?;
        Ok(Self {
            endpoint,
            api_key,
            model,
            timeout,
            client,
        })
    }

    /// Build from `SLICESIM_REMOTE_URL` (required), `SLICESIM_REMOTE_API_KEY`
    /// and `SLICESIM_REMOTE_MODEL` (optional).
    pub fn from_env() -> Result<Self> {
        let endpoint = std::env::var("SLICESIM_REMOTE_URL").map_err(|_| {
            Error::Config("remote backend requires SLICESIM_REMOTE_URL".into())
        })?;
        let api_key = std::env::var("SLICESIM_REMOTE_API_KEY").ok();
        let model = std::env::var("SLICESIM_REMOTE_MODEL")
            .unwrap_or_else(|_| "default".to_string());
        Self::new(endpoint, api_key, model)
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    fn post_once(&self, prompt: &str) -> Result<String> {
        let mut req = self.client.post(&self.endpoint).json(&RemoteRequest {
            model: &self.model,
            prompt,
        });
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Error::Remote(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(Error::Remote(format!("endpoint returned {}", resp.status())));
        }
        resp.text().map_err(|e| Error::Remote(e.to_string()))
    }
}

impl Proposer for RemoteProposer {
    fn generate(&mut self, ctx: &ProposalContext) -> Result<CandidateSet> {
        let prompt = render_context_prompt(ctx);
        let body = self
            .post_once(&prompt)
            .or_else(|_| self.post_once(&prompt))?; // single retry
        parse_remote_response(&body, ctx.remaining_pool)
    }

    fn name(&self) -> &'static str {
        "remote"
    }
}
