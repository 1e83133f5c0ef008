use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::domain::{Category, MarketSnapshot, ValidationError};

/// Selection thresholds applied to every fetched batch. All comparisons are
/// inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketFilter {
    pub min_volume_usdc: f64,
    pub min_liquidity_usdc: f64,
    /// `None` means unbounded.
    pub max_hours_to_expiry: Option<f64>,
    pub categories: Option<BTreeSet<Category>>,
}

impl Default for MarketFilter {
    fn default() -> Self {
        Self::unbounded()
    }
}

impl MarketFilter {
    pub fn unbounded() -> Self {
        Self {
            min_volume_usdc: 0.0,
            min_liquidity_usdc: 0.0,
            max_hours_to_expiry: None,
            categories: None,
        }
    }

    pub fn with_min_volume(mut self, v: f64) -> Self {
        self.min_volume_usdc = v;
        self
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if !(self.min_volume_usdc >= 0.0) {
            return Err(ValidationError::Negative {
                field: "min_volume_usdc",
                value: self.min_volume_usdc,
            });
        }
        if !(self.min_liquidity_usdc >= 0.0) {
            return Err(ValidationError::Negative {
                field: "min_liquidity_usdc",
                value: self.min_liquidity_usdc,
            });
        }
        if let Some(h) = self.max_hours_to_expiry {
            if !(h > 0.0) {
                return Err(ValidationError::Invalid {
                    field: "max_hours_to_expiry",
                    reason: format!("{h} must be positive"),
                });
            }
        }
        Ok(())
    }

    pub fn accepts(&self, m: &MarketSnapshot) -> bool {
        if m.volume_usdc < self.min_volume_usdc || m.liquidity_usdc < self.min_liquidity_usdc {
            return false;
        }
        if let Some(max_h) = self.max_hours_to_expiry {
            if m.hours_to_expiry(m.observed_at) > max_h {
                return false;
            }
        }
        match &self.categories {
            Some(cats) => cats.contains(&m.category),
            None => true,
        }
    }
}

/// Returns the markets satisfying every predicate, in input order.
pub fn filter_markets(markets: &[MarketSnapshot], filter: &MarketFilter) -> Vec<MarketSnapshot> {
    markets.iter().filter(|m| filter.accepts(m)).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Probability;
    use proptest::prelude::*;

    fn market(id: &str, volume: f64) -> MarketSnapshot {
        MarketSnapshot {
            market_id: id.into(),
            title: format!("Market {id}"),
            yes_price: Probability::new(0.4).unwrap(),
            volume_usdc: volume,
            liquidity_usdc: 100.0,
            category: Category::Politics,
            expiry: 10 * 3_600_000,
            observed_at: 0,
            volume_basis: Default::default(),
        }
    }

    #[test]
    fn min_volume_is_inclusive() {
        let ms = vec![market("a", 500.0), market("b", 1000.0), market("c", 5000.0)];
        let out = filter_markets(&ms, &MarketFilter::unbounded().with_min_volume(1000.0));
        let ids: Vec<_> = out.iter().map(|m| m.market_id.as_str()).collect();
        assert_eq!(ids, vec!["b", "c"]);
    }

    #[test]
    fn unbounded_is_identity_and_strict_empties() {
        let ms = vec![market("a", 500.0), market("b", 1000.0)];
        assert_eq!(filter_markets(&ms, &MarketFilter::unbounded()), ms);
        assert!(filter_markets(&ms, &MarketFilter::unbounded().with_min_volume(1e9)).is_empty());
    }

    #[test]
    fn expiry_and_category_predicates() {
        let mut f = MarketFilter::unbounded();
        f.max_hours_to_expiry = Some(5.0);
        assert!(filter_markets(&[market("a", 1.0)], &f).is_empty());
        f.max_hours_to_expiry = Some(10.0);
        assert_eq!(filter_markets(&[market("a", 1.0)], &f).len(), 1);
        f.categories = Some([Category::Crypto].into_iter().collect());
        assert!(filter_markets(&[market("a", 1.0)], &f).is_empty());
    }

    #[test]
    fn negative_threshold_rejected() {
        assert!(MarketFilter::unbounded().with_min_volume(-1.0).validate().is_err());
    }

    proptest! {
        #[test]
        fn idempotent_subset(vols in proptest::collection::vec(0.0f64..10_000.0, 0..40), thr in 0.0f64..10_000.0) {
            let ms: Vec<_> = vols.iter().enumerate().map(|(i, v)| market(&i.to_string(), *v)).collect();
            let f = MarketFilter::unbounded().with_min_volume(thr);
            let once = filter_markets(&ms, &f);
            let twice = filter_markets(&once, &f);
            prop_assert_eq!(&once, &twice);
            prop_assert!(once.iter().all(|m| m.volume_usdc >= thr));
            // order preserved
            let pos: Vec<usize> = once.iter().map(|m| m.market_id.parse().unwrap()).collect();
            prop_assert!(pos.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
