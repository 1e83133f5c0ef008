//! Swarm consensus, market mixing, expected value and trade gates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{net_odds_from_price, NetOdds, Probability, ValidationError};
use crate::execution::Side;
use crate::swarm::AgentPrediction;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AggregationError {
    #[error("no predictions to aggregate")]
    EmptySwarm,
    #[error("weight {0} must be positive and finite")]
    BadWeight(f64),
    #[error("market price {0} is not tradable")]
    Untradable(f64),
}

/// Mixing weight on the swarm side, in `[0, 1]`. The market weight is its
/// complement, so the two always sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct SwarmWeight(f64);

impl SwarmWeight {
    pub const DEFAULT: SwarmWeight = SwarmWeight(0.70);

    pub fn new(w: f64) -> Result<Self, ValidationError> {
        if (0.0..=1.0).contains(&w) {
            Ok(Self(w))
        } else {
            Err(ValidationError::Invalid {
                field: "weight_swarm",
                reason: format!("{w} outside [0, 1]"),
            })
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn market(self) -> f64 {
        1.0 - self.0
    }
}

impl TryFrom<f64> for SwarmWeight {
    type Error = ValidationError;
    fn try_from(v: f64) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<SwarmWeight> for f64 {
    fn from(w: SwarmWeight) -> f64 {
        w.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub min_ev: f64,
    pub max_std_dev: f64,
    pub weight_swarm: SwarmWeight,
    pub min_agents: usize,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            min_ev: 0.05,
            max_std_dev: 0.30,
            weight_swarm: SwarmWeight::DEFAULT,
            min_agents: 5,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if !(self.min_ev >= 0.0 && self.min_ev.is_finite()) {
            return Err(ValidationError::Invalid {
                field: "min_ev",
                reason: format!("{} must be a non-negative number", self.min_ev),
            });
        }
        if !(self.max_std_dev > 0.0 && self.max_std_dev <= 1.0) {
            return Err(ValidationError::Invalid {
                field: "max_std_dev",
                reason: format!("{} outside (0, 1]", self.max_std_dev),
            });
        }
        if self.min_agents == 0 {
            return Err(ValidationError::Invalid {
                field: "min_agents",
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }
}

/// Weighted mean, weighted population standard deviation and sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsensusStats {
    pub p_swarm: Probability,
    pub std_dev: f64,
    pub n_agents: usize,
}

/// Confidence-weighted consensus over `(probability, weight)` pairs.
pub fn consensus_from_pairs(pairs: &[(f64, f64)]) -> Result<ConsensusStats, AggregationError> {
    if pairs.is_empty() {
        return Err(AggregationError::EmptySwarm);
    }
    let mut w_sum = 0.0;
    let mut wp_sum = 0.0;
    for &(p, w) in pairs {
        if !(w > 0.0 && w.is_finite()) {
            return Err(AggregationError::BadWeight(w));
        }
        w_sum += w;
        wp_sum += w * p;
    }
    let mean = wp_sum / w_sum;
    let var = pairs
        .iter()
        .map(|&(p, w)| w * (p - mean) * (p - mean))
        .sum::<f64>()
        / w_sum;
    Ok(ConsensusStats {
        p_swarm: Probability::saturating(mean),
        std_dev: var.max(0.0).sqrt(),
        n_agents: pairs.len(),
    })
}

pub fn swarm_consensus(predictions: &[AgentPrediction]) -> Result<ConsensusStats, AggregationError> {
    let pairs: Vec<(f64, f64)> = predictions
        .iter()
        .map(|p| (p.probability.value(), p.confidence))
        .collect();
    consensus_from_pairs(&pairs)
}

/// Linear mixture of swarm and market probabilities.
pub fn bayesian_combine(p_swarm: Probability, p_market: Probability, weight: SwarmWeight) -> Probability {
    if weight.value() == 0.0 {
        return p_market;
    }
    if weight.value() == 1.0 {
        return p_swarm;
    }
    let mixed = weight.value() * p_swarm.value() + weight.market() * p_market.value();
    // keep the result inside the closed interval spanned by the inputs
    let lo = p_swarm.value().min(p_market.value());
    let hi = p_swarm.value().max(p_market.value());
    Probability::saturating(mixed.clamp(lo, hi))
}

/// Expected profit per unit stake: `p * b - (1 - p)`.
pub fn expected_value(p: Probability, b: NetOdds) -> f64 {
    p.value() * b.value() - (1.0 - p.value())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateReason {
    BelowEvThreshold,
    AboveStddevThreshold,
    TooFewAgents,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateDecision {
    pub passed: bool,
    pub reason: Option<GateReason>,
}

/// Passes iff `ev > min_ev`, `std_dev < max_std_dev` and
/// `n_agents >= min_agents`, checked in that order.
pub fn apply_gates(ev: f64, std_dev: f64, n_agents: usize, config: &GateConfig) -> GateDecision {
    let reason = if !(ev > config.min_ev) {
        Some(GateReason::BelowEvThreshold)
    } else if !(std_dev < config.max_std_dev) {
        Some(GateReason::AboveStddevThreshold)
    } else if n_agents < config.min_agents {
        Some(GateReason::TooFewAgents)
    } else {
        None
    };
    GateDecision {
        passed: reason.is_none(),
        reason,
    }
}

/// Aggregated view of one market for one cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwarmConsensus {
    pub market_id: String,
    pub p_swarm: Probability,
    pub std_dev: f64,
    pub n_agents: usize,
    pub p_market: Probability,
    pub p_combined: Probability,
    pub ev_yes: f64,
    pub ev_no: f64,
    /// The better of the two sides.
    pub side: Side,
    /// EV of `side`.
    pub ev: f64,
    /// True when the candidate is blocked.
    pub gated: bool,
    pub gate_reason: Option<GateReason>,
}

impl SwarmConsensus {
    /// Probability that `side` wins, under the combined estimate.
    pub fn win_probability(&self) -> Probability {
        match self.side {
            Side::BuyYes => self.p_combined,
            Side::BuyNo => self.p_combined.complement(),
        }
    }
}

/// Mixes, prices both sides and gates. YES is priced at the YES price; NO at
/// its complement with `1 - p_combined`.
pub fn evaluate_consensus(
    market_id: &str,
    stats: ConsensusStats,
    p_market: Probability,
    config: &GateConfig,
) -> Result<SwarmConsensus, AggregationError> {
    let b_yes = net_odds_from_price(p_market).map_err(|e| AggregationError::Untradable(e.price))?;
    let b_no = net_odds_from_price(p_market.complement())
        .map_err(|e| AggregationError::Untradable(e.price))?;
    let p_combined = bayesian_combine(stats.p_swarm, p_market, config.weight_swarm);
    let ev_yes = expected_value(p_combined, b_yes);
    let ev_no = expected_value(p_combined.complement(), b_no);
    let (side, ev) = if ev_no > ev_yes {
        (Side::BuyNo, ev_no)
    } else {
        (Side::BuyYes, ev_yes)
    };
    let gate = apply_gates(ev, stats.std_dev, stats.n_agents, config);
    Ok(SwarmConsensus {
        market_id: market_id.to_owned(),
        p_swarm: stats.p_swarm,
        std_dev: stats.std_dev,
        n_agents: stats.n_agents,
        p_market,
        p_combined,
        ev_yes,
        ev_no,
        side,
        ev,
        gated: !gate.passed,
        gate_reason: gate.reason,
    })
}
