//! Risk-aware negotiation simulator for shared network-slice resources.
//!
//! Two agents (an eMBB slice and a URLLC slice) negotiate bandwidth and
//! CPU allocations drawn from shared pools. Each agent validates proposals
//! against a Monte Carlo digital twin of a two-stage tandem queue and
//! decides using either a mean-latency rule (biased) or a
//! CVaR-with-epistemic-confidence rule (unbiased). The crate provides the
//! risk kernel, the twin, the agent policies, pluggable proposal
//! generation, the negotiation protocol, and a batch experiment harness.

pub mod config;
pub mod error;
pub mod harness;
pub mod negotiation;
pub mod policy;
pub mod power;
pub mod proposer;
pub mod risk;
pub mod seed;
pub mod twin;

pub use error::{Error, Result};
