//! Core value types shared by every module: validated probabilities, net odds,
//! market snapshots and binary distributions.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance used for probability equality checks.
pub const PROB_EPS: f64 = 1e-12;

/// UTC milliseconds since the Unix epoch.
pub type UnixMillis = i64;

pub const MS_PER_HOUR: f64 = 3_600_000.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("price {0} must lie strictly inside (0, 1)")]
    PriceOutOfRange(f64),
    #[error("{field} must be non-negative, got {value}")]
    Negative { field: &'static str, value: f64 },
    #[error("{field} is invalid: {reason}")]
    Invalid { field: &'static str, reason: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("net odds are degenerate at price {price}")]
pub struct DegenerateOddsError {
    pub price: f64,
}

/// A probability in `[0, 1]`. Construction outside that range fails.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Probability(f64);

impl Probability {
    pub const ZERO: Probability = Probability(0.0);
    pub const HALF: Probability = Probability(0.5);
    pub const ONE: Probability = Probability(1.0);

    pub fn new(value: f64) -> Result<Self, ValidationError> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(ValidationError::ProbabilityOutOfRange(value))
        }
    }

    /// Clamps into `[0, 1]`. Only for values that are probabilities up to
    /// floating-point rounding (weighted means, mixtures). NaN maps to 0.5.
    pub(crate) fn saturating(value: f64) -> Self {
        if value.is_nan() {
            return Self::HALF;
        }
        Self(value.clamp(0.0, 1.0))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    #[inline]
    pub fn complement(self) -> Self {
        Self(1.0 - self.0)
    }

    pub fn approx_eq(self, other: Probability) -> bool {
        (self.0 - other.0).abs() <= PROB_EPS
    }
}

impl TryFrom<f64> for Probability {
    type Error = ValidationError;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Probability::new(value)
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.0
    }
}

impl fmt::Display for Probability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Profit per unit stake on a winning bet. Always strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
pub struct NetOdds(f64);

impl NetOdds {
    pub fn new(b: f64) -> Result<Self, ValidationError> {
        if b > 0.0 && b.is_finite() {
            Ok(Self(b))
        } else {
            Err(ValidationError::Invalid {
                field: "net_odds",
                reason: format!("{b} is not a positive finite number"),
            })
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Reads an exchange YES price as a probability. Tradable prices sit strictly
/// inside `(0, 1)`.
pub fn probability_from_price(price: f64) -> Result<Probability, ValidationError> {
    if price > 0.0 && price < 1.0 {
        Ok(Probability(price))
    } else {
        Err(ValidationError::PriceOutOfRange(price))
    }
}

/// Net odds for buying a share at `price`: `b = (1 - price) / price`.
pub fn net_odds_from_price(price: Probability) -> Result<NetOdds, DegenerateOddsError> {
    let p = price.value();
    if p <= 0.0 || p >= 1.0 {
        return Err(DegenerateOddsError { price: p });
    }
    Ok(NetOdds((1.0 - p) / p))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Politics,
    Economics,
    Crypto,
    Sports,
    Science,
    Other,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Politics,
        Category::Economics,
        Category::Crypto,
        Category::Sports,
        Category::Science,
        Category::Other,
    ];

    /// Maps free-form exchange category labels; unknown labels become `Other`.
    pub fn from_label(label: &str) -> Self {
        let l = label.to_ascii_lowercase();
        match l.as_str() {
            "politics" | "elections" | "us-current-affairs" | "geopolitics" => Category::Politics,
            "economics" | "economy" | "finance" | "business" => Category::Economics,
            "crypto" | "cryptocurrency" => Category::Crypto,
            "sports" | "nba" | "nfl" | "soccer" => Category::Sports,
            "science" | "tech" | "technology" | "health" => Category::Science,
            _ => Category::Other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Politics => "politics",
            Category::Economics => "economics",
            Category::Crypto => "crypto",
            Category::Sports => "sports",
            Category::Science => "science",
            Category::Other => "other",
        }
    }
}

/// Which volume field populated `volume_usdc`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeBasis {
    Trailing24h,
    #[default]
    Total,
}

/// One binary market observed at a point in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSnapshot {
    pub market_id: String,
    pub title: String,
    pub yes_price: Probability,
    pub volume_usdc: f64,
    pub liquidity_usdc: f64,
    pub category: Category,
    pub expiry: UnixMillis,
    pub observed_at: UnixMillis,
    #[serde(default)]
    pub volume_basis: VolumeBasis,
}

impl MarketSnapshot {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.market_id.is_empty() {
            return Err(ValidationError::Invalid {
                field: "market_id",
                reason: "empty".into(),
            });
        }
        if !(self.volume_usdc >= 0.0) {
            return Err(ValidationError::Negative {
                field: "volume_usdc",
                value: self.volume_usdc,
            });
        }
        if !(self.liquidity_usdc >= 0.0) {
            return Err(ValidationError::Negative {
                field: "liquidity_usdc",
                value: self.liquidity_usdc,
            });
        }
        Ok(())
    }

    /// Tradable markets have a YES price strictly inside `(0, 1)`.
    pub fn is_tradable(&self) -> bool {
        let p = self.yes_price.value();
        p > 0.0 && p < 1.0
    }

    pub fn hours_to_expiry(&self, now: UnixMillis) -> f64 {
        (self.expiry - now) as f64 / MS_PER_HOUR
    }
}

/// A distribution over {YES, NO}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryDistribution {
    pub p_yes: Probability,
    pub p_no: Probability,
}

impl BinaryDistribution {
    pub fn from_yes(p_yes: Probability) -> Self {
        Self {
            p_yes,
            p_no: p_yes.complement(),
        }
    }

    pub fn new(p_yes: f64, p_no: f64) -> Result<Self, ValidationError> {
        let yes = Probability::new(p_yes)?;
        let no = Probability::new(p_no)?;
        if (p_yes + p_no - 1.0).abs() > PROB_EPS {
            return Err(ValidationError::Invalid {
                field: "binary_distribution",
                reason: format!("p_yes + p_no = {} != 1", p_yes + p_no),
            });
        }
        Ok(Self { p_yes: yes, p_no: no })
    }

    pub fn masses(&self) -> [f64; 2] {
        [self.p_yes.value(), self.p_no.value()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn price_conversion_examples() {
        assert_eq!(probability_from_price(0.5).unwrap().value(), 0.5);
        assert_eq!(probability_from_price(0.62).unwrap().value(), 0.62);
        assert!(probability_from_price(0.0).is_err());
        assert!(probability_from_price(1.0).is_err());
        assert!(probability_from_price(f64::NAN).is_err());
    }

    #[test]
    fn odds_examples() {
        let b = net_odds_from_price(Probability::new(0.5).unwrap()).unwrap();
        assert_eq!(b.value(), 1.0);
        let b = net_odds_from_price(Probability::new(0.25).unwrap()).unwrap();
        assert!((b.value() - 3.0).abs() < 1e-15);
        let b = net_odds_from_price(Probability::new(0.99999).unwrap()).unwrap();
        assert!((b.value() - 1e-5).abs() < 1e-9);
        assert!(net_odds_from_price(Probability::ZERO).is_err());
        assert!(net_odds_from_price(Probability::ONE).is_err());
    }

    #[test]
    fn probability_rejects_out_of_range_on_deserialize() {
        assert!(serde_json::from_str::<Probability>("1.3").is_err());
        assert_eq!(serde_json::from_str::<Probability>("0.3").unwrap().value(), 0.3);
    }

    #[test]
    fn binary_distribution_sums_to_one() {
        assert!(BinaryDistribution::new(0.3, 0.7).is_ok());
        assert!(BinaryDistribution::new(0.3, 0.6).is_err());
        let d = BinaryDistribution::from_yes(Probability::new(0.123).unwrap());
        assert!((d.p_yes.value() + d.p_no.value() - 1.0).abs() <= PROB_EPS);
    }

    proptest! {
        #[test]
        fn price_round_trip(price in 1e-9f64..(1.0 - 1e-9)) {
            prop_assert_eq!(probability_from_price(price).unwrap().value(), price);
        }

        #[test]
        fn odds_strictly_decreasing(a in 1e-6f64..0.999_999, b in 1e-6f64..0.999_999) {
            prop_assume!(a < b);
            let oa = net_odds_from_price(Probability::new(a).unwrap()).unwrap();
            let ob = net_odds_from_price(Probability::new(b).unwrap()).unwrap();
            prop_assert!(oa.value() > ob.value());
        }

        #[test]
        fn zero_ev_at_fair_price(p in 1e-6f64..0.999_999) {
            let b = net_odds_from_price(Probability::new(p).unwrap()).unwrap().value();
            prop_assert!((p * b - (1.0 - p)).abs() <= 1e-12);
        }
    }
}
