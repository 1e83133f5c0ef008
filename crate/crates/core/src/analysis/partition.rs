use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use super::{ArbitrageSignal, SignalDirection, SignalKind, SignalLeg};
use crate::domain::{MarketSnapshot, UnixMillis};
use crate::execution::Side;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GroupError {
    #[error("partition group {0} has fewer than two members")]
    TooFewMembers(String),
    #[error("cannot load partition groups: {0}")]
    Load(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionGroup {
    pub group_id: String,
    pub member_market_ids: Vec<String>,
    pub p_sum: f64,
    pub deviation: f64,
}

/// Declared partition groups: event id to member market ids.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PartitionGroups(pub BTreeMap<String, Vec<String>>);

impl PartitionGroups {
    pub fn load(path: &Path) -> Result<Self, GroupError> {
        let text = std::fs::read_to_string(path).map_err(|e| GroupError::Load(format!("{}: {e}", path.display())))?;
        let groups: Self = serde_json::from_str(&text).map_err(|e| GroupError::Load(e.to_string()))?;
        for (id, members) in &groups.0 {
            if members.len() < 2 {
                return Err(GroupError::TooFewMembers(id.clone()));
            }
        }
        Ok(groups)
    }
}

/// Emits a paired signal when the members' YES prices miss 1 by more than
/// `threshold`. Below 1 the legs buy YES on every member; above 1 they buy NO.
pub fn check_partition(
    group_id: &str,
    members: &[MarketSnapshot],
    threshold: f64,
    now: UnixMillis,
) -> Result<(PartitionGroup, Option<ArbitrageSignal>), GroupError> {
    if members.len() < 2 {
        return Err(GroupError::TooFewMembers(group_id.to_owned()));
    }
    let p_sum: f64 = members.iter().map(|m| m.yes_price.value()).sum();
    let deviation = (p_sum - 1.0).abs();
    let group = PartitionGroup {
        group_id: group_id.to_owned(),
        member_market_ids: members.iter().map(|m| m.market_id.clone()).collect(),
        p_sum,
        deviation,
    };
    if !(deviation > threshold) {
        return Ok((group, None));
    }
    let side = if p_sum < 1.0 { Side::BuyYes } else { Side::BuyNo };
    let signal = ArbitrageSignal {
        kind: SignalKind::Partition,
        market_ids: group.member_market_ids.clone(),
        magnitude: deviation,
        direction: SignalDirection::Paired,
        legs: members
            .iter()
            .map(|m| SignalLeg {
                market_id: m.market_id.clone(),
                side,
            })
            .collect(),
        detected_at: now,
        group_id: Some(group_id.to_owned()),
    };
    Ok((group, Some(signal)))
}

/// Checks every declared group whose members are all present in `markets`.
pub fn scan_partitions(
    groups: &PartitionGroups,
    markets: &[MarketSnapshot],
    threshold: f64,
    now: UnixMillis,
) -> Vec<ArbitrageSignal> {
    let by_id: HashMap<&str, &MarketSnapshot> = markets.iter().map(|m| (m.market_id.as_str(), m)).collect();
    let mut out = Vec::new();
    for (gid, ids) in &groups.0 {
        let members: Option<Vec<MarketSnapshot>> = ids.iter().map(|id| by_id.get(id.as_str()).map(|m| (*m).clone())).collect();
        let Some(members) = members else {
            continue;
        };
        match check_partition(gid, &members, threshold, now) {
            Ok((_, Some(sig))) => out.push(sig),
            Ok((_, None)) => {}
            Err(e) => warn!(%e, "skipping partition group"),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Category, Probability};

    fn members(prices: &[f64]) -> Vec<MarketSnapshot> {
        prices
            .iter()
            .enumerate()
            .map(|(i, p)| MarketSnapshot {
                market_id: format!("q{i}"),
                title: format!("Outcome {i}"),
                yes_price: Probability::new(*p).unwrap(),
                volume_usdc: 1.0,
                liquidity_usdc: 1.0,
                category: Category::Economics,
                expiry: 0,
                observed_at: 0,
                volume_basis: Default::default(),
            })
            .collect()
    }

    #[test]
    fn exact_partition_no_signal() {
        let (g, s) = check_partition("g", &members(&[0.25; 4]), 0.05, 0).unwrap();
        assert!(s.is_none());
        assert_eq!(g.deviation, 0.0);
    }

    #[test]
    fn underpriced_partition_signals_buy_yes() {
        let (_, s) = check_partition("g", &members(&[0.2, 0.2, 0.2]), 0.05, 7).unwrap();
        let s = s.unwrap();
        assert!((s.magnitude - 0.4).abs() < 1e-12);
        assert_eq!(s.direction, SignalDirection::Paired);
        assert!(s.legs.iter().all(|l| l.side == Side::BuyYes));
        assert_eq!(s.detected_at, 7);
    }

    #[test]
    fn small_deviation_below_threshold() {
        let (g, s) = check_partition("g", &members(&[0.5, 0.52]), 0.05, 0).unwrap();
        assert!(s.is_none());
        assert!((g.deviation - 0.02).abs() < 1e-12);
    }

    #[test]
    fn overpriced_partition_buys_no() {
        let (_, s) = check_partition("g", &members(&[0.6, 0.6]), 0.05, 0).unwrap();
        assert!(s.unwrap().legs.iter().all(|l| l.side == Side::BuyNo));
    }

    #[test]
    fn singleton_rejected() {
        assert_eq!(
            check_partition("g", &members(&[1.0]), 0.05, 0).unwrap_err(),
            GroupError::TooFewMembers("g".into())
        );
    }

    #[test]
    fn scan_skips_incomplete_groups() {
        let ms = members(&[0.2, 0.2, 0.2]);
        let mut groups = PartitionGroups::default();
        groups.0.insert("full".into(), vec!["q0".into(), "q1".into(), "q2".into()]);
        groups.0.insert("partial".into(), vec!["q0".into(), "missing".into()]);
        let sigs = scan_partitions(&groups, &ms, 0.02, 0);
        assert_eq!(sigs.len(), 1);
        assert_eq!(sigs[0].group_id.as_deref(), Some("full"));
    }
}
