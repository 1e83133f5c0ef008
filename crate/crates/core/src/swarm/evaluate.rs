use futures::future::join_all;
use serde::{Deserialize, Serialize};
use tracing::debug;

use super::cache::{CacheKey, ResponseCache};
use super::limiter::InFlightLimiter;
use super::persona::Persona;
use super::prompt::build_prompt;
use super::provider::{CompletionRequest, InferenceProvider, ProviderError};
use super::response::parse_agent_response;
use super::{AgentPrediction, SwarmError};
use crate::domain::{MarketSnapshot, UnixMillis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Prompt,
    Transport,
    Parse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentFailure {
    pub persona_id: String,
    pub market_id: String,
    pub kind: FailureKind,
    pub detail: String,
}

/// Everything one market's swarm evaluation produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MarketEvaluation {
    pub market_id: String,
    pub predictions: Vec<AgentPrediction>,
    pub failures: Vec<AgentFailure>,
    pub provider_calls: usize,
    pub cache_hits: usize,
}

enum AgentOutcome {
    Ok { pred: AgentPrediction, calls: usize, cached: bool },
    Failed { failure: AgentFailure, calls: usize },
}

/// Attempts per persona per cycle for transport errors (one retry).
const TRANSPORT_ATTEMPTS: usize = 2;

async fn call_with_retry(
    provider: &dyn InferenceProvider,
    limiter: &InFlightLimiter,
    request: &CompletionRequest,
) -> (Result<super::provider::Completion, ProviderError>, usize) {
    let mut last = None;
    for attempt in 1..=TRANSPORT_ATTEMPTS {
        let result = {
            let _guard = limiter.acquire().await;
            match tokio::time::timeout(provider.timeout(), provider.complete(request)).await {
                Ok(r) => r,
                Err(_) => Err(ProviderError::Timeout {
                    provider: provider.provider_id().to_owned(),
                }),
            }
        };
        match result {
            Ok(c) => return (Ok(c), attempt),
            Err(e) => {
                debug!(persona = %request.persona_id, market = %request.market_id, %e, attempt, "provider call failed");
                last = Some(e);
            }
        }
    }
    (Err(last.expect("at least one attempt")), TRANSPORT_ATTEMPTS)
}

async fn evaluate_agent(
    market: &MarketSnapshot,
    persona: &Persona,
    provider: &dyn InferenceProvider,
    cache: &ResponseCache,
    limiter: &InFlightLimiter,
    now: UnixMillis,
) -> AgentOutcome {
    let failure = |kind, detail: String| AgentFailure {
        persona_id: persona.persona_id.clone(),
        market_id: market.market_id.clone(),
        kind,
        detail,
    };
    let prompt = match build_prompt(persona, market) {
        Ok(p) => p,
        Err(e) => {
            return AgentOutcome::Failed {
                failure: failure(FailureKind::Prompt, e.to_string()),
                calls: 0,
            }
        }
    };
    let key = CacheKey::new(&persona.persona_id, market);
    if let Some(pred) = cache.get(&key, now) {
        return AgentOutcome::Ok {
            pred,
            calls: 0,
            cached: true,
        };
    }
    let request = CompletionRequest {
        persona_id: persona.persona_id.clone(),
        market_id: market.market_id.clone(),
        prompt,
    };
    let (result, calls) = call_with_retry(provider, limiter, &request).await;
    let completion = match result {
        Ok(c) => c,
        Err(e) => {
            return AgentOutcome::Failed {
                failure: failure(FailureKind::Transport, e.to_string()),
                calls,
            }
        }
    };
    match parse_agent_response(&completion.text) {
        Ok(parsed) => {
            let pred = AgentPrediction {
                persona_id: persona.persona_id.clone(),
                market_id: market.market_id.clone(),
                probability: parsed.probability,
                confidence: parsed.confidence,
                reasoning: parsed.reasoning,
                provider_id: completion.provider_id,
                latency_ms: completion.latency_ms,
                created_at: now,
            };
            cache.insert(key, pred.clone(), now);
            AgentOutcome::Ok {
                pred,
                calls,
                cached: false,
            }
        }
        Err(e) => AgentOutcome::Failed {
            failure: failure(FailureKind::Parse, e.reason),
            calls,
        },
    }
}

/// Runs the cohort against `provider` with at most `limiter.bound()` calls in
/// flight. Failed agents are dropped and recorded, never replaced. Output
/// order follows the cohort order regardless of completion order.
pub async fn evaluate_market(
    market: &MarketSnapshot,
    cohort: &[Persona],
    provider: &dyn InferenceProvider,
    cache: &ResponseCache,
    limiter: &InFlightLimiter,
    now: UnixMillis,
) -> Result<MarketEvaluation, SwarmError> {
    if cohort.is_empty() {
        return Err(SwarmError::EmptyCohort);
    }
    let outcomes = join_all(
        cohort
            .iter()
            .map(|p| evaluate_agent(market, p, provider, cache, limiter, now)),
    )
    .await;

    let mut eval = MarketEvaluation {
        market_id: market.market_id.clone(),
        ..Default::default()
    };
    for o in outcomes {
        match o {
            AgentOutcome::Ok { pred, calls, cached } => {
                eval.provider_calls += calls;
                eval.cache_hits += usize::from(cached);
                eval.predictions.push(pred);
            }
            AgentOutcome::Failed { failure, calls } => {
                eval.provider_calls += calls;
                eval.failures.push(failure);
            }
        }
    }
    if eval.predictions.is_empty() {
        return Err(SwarmError::Empty {
            market_id: market.market_id.clone(),
            failures: eval.failures,
        });
    }
    Ok(eval)
}
