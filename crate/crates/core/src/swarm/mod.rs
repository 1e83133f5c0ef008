//! The persona swarm: pool management, cohort sampling, prompt rendering,
//! bounded-concurrency inference, response parsing and the TTL cache.

mod cache;
mod evaluate;
mod limiter;
mod persona;
mod prompt;
mod provider;
mod response;
mod simulated;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Probability, UnixMillis};

pub use cache::{CacheEntry, CacheKey, ResponseCache, DEFAULT_CACHE_TTL_SECS};
pub use evaluate::{evaluate_market, AgentFailure, FailureKind, MarketEvaluation};
pub use limiter::{InFlightGuard, InFlightLimiter};
pub use persona::{
    sample_personas, Archetype, Persona, PersonaPool, DEFAULT_AGENTS_PER_MARKET, POOL_SIZE,
};
pub use prompt::{build_prompt, PromptText};
pub use provider::{
    Completion, CompletionRequest, InferenceProvider, ProviderError, ProviderKind, ProviderRouter,
    RemoteHttpProvider,
};
pub use response::{parse_agent_response, ParsedResponse, ResponseParseError};
pub use simulated::{
    derive_seed, logistic, logit, simulated_draw, simulated_provider_complete, FaultPlan,
    SimulatedProvider, TruthTable,
};


/// One persona's forecast for one market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentPrediction {
    pub persona_id: String,
    pub market_id: String,
    pub probability: Probability,
    /// Confidence weight in `(0, 1]`.
    pub confidence: f64,
    pub reasoning: String,
    pub provider_id: String,
    pub latency_ms: f64,
    pub created_at: UnixMillis,
}

impl AgentPrediction {
    pub fn validate(&self) -> Result<(), crate::domain::ValidationError> {
        if !(self.confidence > 0.0 && self.confidence <= 1.0) {
            return Err(crate::domain::ValidationError::Invalid {
                field: "confidence",
                reason: format!("{} outside (0, 1]", self.confidence),
            });
        }
        Probability::new(self.probability.value())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Error)]
pub enum SwarmError {
    #[error("cannot sample {requested} personas from a pool of {available}")]
    Sample { requested: usize, available: usize },
    #[error("cannot build prompt for {market_id}: {reason}")]
    PromptBuild { market_id: String, reason: String },
    #[error("persona pool: {0}")]
    Pool(String),
    #[error("cohort is empty")]
    EmptyCohort,
    #[error("every agent failed for market {market_id}")]
    Empty {
        market_id: String,
        failures: Vec<AgentFailure>,
    },
}
