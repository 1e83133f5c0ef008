//! Inefficiency detection: swarm-versus-market divergence and cross-market
//! structural checks (negation pairs, partition sums).

mod divergence;
mod negation;
mod partition;

use serde::{Deserialize, Serialize};

use crate::domain::UnixMillis;
use crate::execution::Side;

pub use divergence::{js_divergence, kl_divergence, rank_markets, score_market, DivergenceReport};
pub use negation::{find_negation_pairs, NegationPair, DEFAULT_MATCH_THRESHOLD};
pub use partition::{check_partition, scan_partitions, GroupError, PartitionGroup, PartitionGroups};

pub const DEFAULT_DEVIATION_THRESHOLD: f64 = 0.02;
pub const DEFAULT_JS_PRIORITY_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    Divergence,
    Negation,
    Partition,
    Latency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalDirection {
    BuyYes,
    BuyNo,
    Paired,
}

/// One order a signal would place if acted on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalLeg {
    pub market_id: String,
    pub side: Side,
}

/// A detected inefficiency. Only emitted when `magnitude` exceeds the
/// threshold configured for its kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArbitrageSignal {
    pub kind: SignalKind,
    pub market_ids: Vec<String>,
    pub magnitude: f64,
    pub direction: SignalDirection,
    pub legs: Vec<SignalLeg>,
    pub detected_at: UnixMillis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_id: Option<String>,
}

/// Paired signals for negation pairs deviating by more than `threshold`.
/// Below 1 both YES legs are bought; above 1 both NO legs.
pub fn negation_signals(pairs: &[NegationPair], threshold: f64, now: UnixMillis) -> Vec<ArbitrageSignal> {
    pairs
        .iter()
        .filter(|p| p.deviation > threshold)
        .map(|p| {
            let side = if p.p_sum < 1.0 { Side::BuyYes } else { Side::BuyNo };
            ArbitrageSignal {
                kind: SignalKind::Negation,
                market_ids: vec![p.market_a.clone(), p.market_b.clone()],
                magnitude: p.deviation,
                direction: SignalDirection::Paired,
                legs: [&p.market_a, &p.market_b]
                    .into_iter()
                    .map(|id| SignalLeg {
                        market_id: id.clone(),
                        side,
                    })
                    .collect(),
                detected_at: now,
                group_id: None,
            }
        })
        .collect()
}

/// Directional signal for a market whose swarm/market JS divergence exceeds
/// `threshold`.
pub fn divergence_signal(
    report: &DivergenceReport,
    p_swarm: f64,
    p_market: f64,
    threshold: f64,
    now: UnixMillis,
) -> Option<ArbitrageSignal> {
    if !(report.js > threshold) {
        return None;
    }
    let side = if p_swarm > p_market { Side::BuyYes } else { Side::BuyNo };
    Some(ArbitrageSignal {
        kind: SignalKind::Divergence,
        market_ids: vec![report.market_id.clone()],
        magnitude: report.js,
        direction: side.into(),
        legs: vec![SignalLeg {
            market_id: report.market_id.clone(),
            side,
        }],
        detected_at: now,
        group_id: None,
    })
}

impl From<Side> for SignalDirection {
    fn from(s: Side) -> Self {
        match s {
            Side::BuyYes => SignalDirection::BuyYes,
            Side::BuyNo => SignalDirection::BuyNo,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{BinaryDistribution, Probability};
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    fn dist(p: f64) -> BinaryDistribution {
        BinaryDistribution::from_yes(Probability::new(p).unwrap())
    }

    #[test]
    fn negation_signal_threshold_is_strict() {
        let pair = |dev: f64| NegationPair {
            market_a: "a".into(),
            market_b: "b".into(),
            match_score: 1.0,
            p_sum: 1.0 + dev,
            deviation: dev,
        };
        assert!(negation_signals(&[pair(0.02)], 0.02, 0).is_empty());
        let s = negation_signals(&[pair(0.1)], 0.02, 0);
        assert_eq!(s.len(), 1);
        assert!(s[0].legs.iter().all(|l| l.side == Side::BuyNo));
    }

    #[test]
    fn divergence_signal_direction() {
        let r = score_market("m", Probability::new(0.9).unwrap(), Probability::HALF);
        let s = divergence_signal(&r, 0.9, 0.5, 0.01, 0).unwrap();
        assert_eq!(s.direction, SignalDirection::BuyYes);
        assert!(divergence_signal(&r, 0.9, 0.5, 1.0, 0).is_none());
    }

    proptest! {
        #[test]
        fn kl_nonnegative_and_zero_on_self(p in 0.0f64..=1.0, q in 0.0f64..=1.0) {
            prop_assert!(kl_divergence(&dist(p), &dist(q)) >= 0.0);
            prop_assert_eq!(kl_divergence(&dist(p), &dist(p)), 0.0);
        }

        #[test]
        fn js_symmetric_and_bounded(p in 0.0f64..=1.0, q in 0.0f64..=1.0) {
            let a = js_divergence(&dist(p), &dist(q));
            let b = js_divergence(&dist(q), &dist(p));
            prop_assert_eq!(a, b);
            prop_assert!((0.0..=LN_2 + 1e-12).contains(&a));
            prop_assert!(a.is_finite());
        }

        #[test]
        fn js_distance_triangle(p in 0.0f64..=1.0, q in 0.0f64..=1.0, r in 0.0f64..=1.0) {
            let d = |x: f64, y: f64| js_divergence(&dist(x), &dist(y)).sqrt();
            prop_assert!(d(p, r) <= d(p, q) + d(q, r) + 1e-9);
        }
    }
}
