use std::fmt;

use chrono::{TimeZone, Utc};

use super::persona::Persona;
use super::SwarmError;
use crate::domain::MarketSnapshot;

/// Fully rendered prompt sent to an inference provider.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PromptText(String);

impl PromptText {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PromptText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

// No digits in the template: the only numbers in a prompt come from the
// market title and expiry date.
const INSTRUCTIONS: &str = "\
Think step by step before answering. Work through:
- the base rate for events of this kind,
- the evidence that would move you away from that base rate,
- the main sources of uncertainty and what could make you wrong,
- how confident you are in your own analysis.

Form your own independent estimate. You are not told what any market or
other analyst currently believes, and you should not guess it.

End your answer with this block, exactly once, as the final lines:
PROBABILITY: <your probability that the question resolves YES, a decimal between zero and one>
CONFIDENCE: <your confidence in this estimate, a decimal greater than zero and at most one>
REASONING: <a concise summary of your reasoning>";

/// Renders the persona-conditioned question. Market prices, volumes and
/// liquidity are never included.
pub fn build_prompt(persona: &Persona, market: &MarketSnapshot) -> Result<PromptText, SwarmError> {
    let title = market.title.trim();
    if title.is_empty() {
        return Err(SwarmError::PromptBuild {
            market_id: market.market_id.clone(),
            reason: "market title is empty".into(),
        });
    }
    let expiry = Utc
        .timestamp_millis_opt(market.expiry)
        .single()
        .map(|d| d.format("%Y-%m-%d %H:%M UTC").to_string())
        .ok_or_else(|| SwarmError::PromptBuild {
            market_id: market.market_id.clone(),
            reason: format!("invalid expiry {}", market.expiry),
        })?;
    Ok(PromptText(format!(
        "{preamble}\n\n\
         You are forecasting the outcome of a binary prediction market question.\n\n\
         Question: {title}\n\
         Category: {category}\n\
         Resolves by: {expiry}\n\n\
         {INSTRUCTIONS}\n",
        preamble = persona.prompt_preamble.trim(),
        category = market.category.as_str(),
    )))
}
