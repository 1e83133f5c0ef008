//! CEX-implied probabilities for crypto strike markets and latency signals
//! when the prediction-market price lags the spot market.

mod quotes;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{ArbitrageSignal, SignalDirection, SignalKind, SignalLeg};
use crate::domain::{Probability, UnixMillis, MS_PER_HOUR};
use crate::execution::Side;

pub use quotes::{parse_quote_replay, QuoteBook, QuoteFeed, QuoteSourceKind};

pub const DEFAULT_LATENCY_THRESHOLD: f64 = 0.10;
pub const DEFAULT_VOL_WINDOW_HOURS: f64 = 24.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LatencyError {
    #[error("contract {0} has expired")]
    Expired(String),
    #[error("volatility is zero for {0}")]
    DegenerateVol(String),
    #[error("need at least two samples in the window, found {0}")]
    InsufficientSamples(usize),
    #[error("invalid input: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CexQuote {
    pub symbol: String,
    pub spot: f64,
    pub observed_at: UnixMillis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrikeDirection {
    Above,
    Below,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrikeContract {
    pub market_id: String,
    pub symbol: String,
    pub strike: f64,
    pub expiry: UnixMillis,
    pub direction: StrikeDirection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolatilityEstimate {
    pub symbol: String,
    /// Log-return standard deviation per square-root hour.
    pub sigma_hourly: f64,
    pub window_hours: f64,
    pub n_samples: usize,
}

/// Which exceedance formula to use. `Driftless` is `Phi(ln(S/K) / (sigma sqrt T))`;
/// `DriftCorrected` subtracts the `sigma^2 T / 2` log-normal drift term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExceedanceModel {
    #[default]
    Driftless,
    DriftCorrected,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImpliedProbOptions {
    pub model: ExceedanceModel,
    /// With zero volatility and `S != K`, return the deterministic limit
    /// instead of failing.
    pub allow_degenerate: bool,
}

/// Standard normal CDF, accurate to well under 1e-9 absolute.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Probability that the contract pays out under a log-normal spot model.
pub fn cex_implied_probability(
    quote: &CexQuote,
    contract: &StrikeContract,
    vol: &VolatilityEstimate,
    now: UnixMillis,
    opts: ImpliedProbOptions,
) -> Result<Probability, LatencyError> {
    if !(quote.spot > 0.0) || !(contract.strike > 0.0) {
        return Err(LatencyError::Invalid(format!(
            "spot {} and strike {} must be positive",
            quote.spot, contract.strike
        )));
    }
    let hours = (contract.expiry - now) as f64 / MS_PER_HOUR;
    if !(hours > 0.0) {
        return Err(LatencyError::Expired(contract.market_id.clone()));
    }
    let log_moneyness = (quote.spot / contract.strike).ln();
    let sigma = vol.sigma_hourly;
    let p_above = if sigma > 0.0 {
        let s_sqrt_t = sigma * hours.sqrt();
        let drift = match opts.model {
            ExceedanceModel::Driftless => 0.0,
            ExceedanceModel::DriftCorrected => 0.5 * sigma * sigma * hours,
        };
        std_normal_cdf((log_moneyness - drift) / s_sqrt_t)
    } else if opts.allow_degenerate && log_moneyness != 0.0 {
        if log_moneyness > 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        return Err(LatencyError::DegenerateVol(contract.symbol.clone()));
    };
    let p = match contract.direction {
        StrikeDirection::Above => p_above,
        StrikeDirection::Below => 1.0 - p_above,
    };
    Ok(Probability::saturating(p))
}

/// Realized volatility from the samples within `window_hours` of the last
/// sample. Each log return is normalized by the square root of its own
/// interval, and the estimate is the root mean square of those (zero mean).
pub fn realized_volatility(
    symbol: &str,
    series: &[(UnixMillis, f64)],
    window_hours: f64,
) -> Result<VolatilityEstimate, LatencyError> {
    let Some(&(t_last, _)) = series.last() else {
        return Err(LatencyError::InsufficientSamples(0));
    };
    let cutoff = t_last - (window_hours * MS_PER_HOUR) as i64;
    let window: Vec<(UnixMillis, f64)> = series.iter().copied().filter(|(t, _)| *t >= cutoff).collect();
    if window.len() < 2 {
        return Err(LatencyError::InsufficientSamples(window.len()));
    }
    let mut sum_sq = 0.0;
    let mut n = 0usize;
    for w in window.windows(2) {
        let (t0, p0) = w[0];
        let (t1, p1) = w[1];
        let dt_h = (t1 - t0) as f64 / MS_PER_HOUR;
        if !(dt_h > 0.0) || !(p0 > 0.0) || !(p1 > 0.0) {
            return Err(LatencyError::Invalid(format!(
                "samples must be positive with increasing timestamps at t={t1}"
            )));
        }
        let z = (p1 / p0).ln() / dt_h.sqrt();
        sum_sq += z * z;
        n += 1;
    }
    Ok(VolatilityEstimate {
        symbol: symbol.to_owned(),
        sigma_hourly: (sum_sq / n as f64).sqrt(),
        window_hours,
        n_samples: window.len(),
    })
}

/// Signal when the spot-implied and prediction-market probabilities differ by
/// more than `threshold`.
pub fn latency_signal(
    market_id: &str,
    p_cex: Probability,
    p_poly: Probability,
    threshold: f64,
    now: UnixMillis,
) -> Option<ArbitrageSignal> {
    let gap = (p_cex.value() - p_poly.value()).abs();
    if !(gap > threshold) {
        return None;
    }
    let side = if p_cex.value() > p_poly.value() {
        Side::BuyYes
    } else {
        Side::BuyNo
    };
    Some(ArbitrageSignal {
        kind: SignalKind::Latency,
        market_ids: vec![market_id.to_owned()],
        magnitude: gap,
        direction: SignalDirection::from(side),
        legs: vec![SignalLeg {
            market_id: market_id.to_owned(),
            side,
        }],
        detected_at: now,
        group_id: None,
    })
}

/// Strike declarations keyed by market id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StrikeMap(pub BTreeMap<String, StrikeSpec>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrikeSpec {
    pub symbol: String,
    pub strike: f64,
    pub direction: StrikeDirection,
}

impl StrikeMap {
    pub fn load(path: &Path) -> Result<Self, LatencyError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LatencyError::Invalid(format!("{}: {e}", path.display())))?;
        let map: Self = serde_json::from_str(&text).map_err(|e| LatencyError::Invalid(e.to_string()))?;
        for (id, spec) in &map.0 {
            if !(spec.strike > 0.0) {
                return Err(LatencyError::Invalid(format!("strike for {id} must be positive")));
            }
        }
        Ok(map)
    }

    pub fn contract(&self, market_id: &str, expiry: UnixMillis) -> Option<StrikeContract> {
        self.0.get(market_id).map(|s| StrikeContract {
            market_id: market_id.to_owned(),
            symbol: s.symbol.clone(),
            strike: s.strike,
            expiry,
            direction: s.direction,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Composite Simpson integration of the standard normal density from -12.
    fn cdf_by_quadrature(x: f64) -> f64 {
        let a = -12.0;
        let n = 200_000;
        let h = (x - a) / n as f64;
        let f = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = f(a) + f(x);
        for i in 1..n {
            let t = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(t);
        }
        s * h / 3.0
    }

    fn quote(spot: f64) -> CexQuote {
        CexQuote {
            symbol: "BTC".into(),
            spot,
            observed_at: 0,
        }
    }

    fn contract(strike: f64, hours: f64, direction: StrikeDirection) -> StrikeContract {
        StrikeContract {
            market_id: "m".into(),
            symbol: "BTC".into(),
            strike,
            expiry: (hours * MS_PER_HOUR) as i64,
            direction,
        }
    }

    fn vol(sigma: f64) -> VolatilityEstimate {
        VolatilityEstimate {
            symbol: "BTC".into(),
            sigma_hourly: sigma,
            window_hours: 24.0,
            n_samples: 100,
        }
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(std_normal_cdf(0.0), 0.5);
        for x in [0.3, 1.0, 2.5, 4.0] {
            assert!((std_normal_cdf(-x) - (1.0 - std_normal_cdf(x))).abs() < 1e-15);
        }
        assert!((std_normal_cdf(1.0) - cdf_by_quadrature(1.0)).abs() <= 1e-9);
    }

    #[test]
    fn at_the_money_is_half() {
        for (s, h) in [(0.01, 1.0), (0.05, 100.0), (1.0, 0.1)] {
            let p = cex_implied_probability(&quote(100.0), &contract(100.0, h, StrikeDirection::Above), &vol(s), 0, Default::default()).unwrap();
            assert_eq!(p.value(), 0.5);
        }
    }

    #[test]
    fn in_the_money_matches_monte_carlo() {
        // S=110, K=100, sigma=0.01/sqrt(h), T=100h -> Phi(ln 1.1 / 0.1)
        let p = cex_implied_probability(&quote(110.0), &contract(100.0, 100.0, StrikeDirection::Above), &vol(0.01), 0, Default::default())
            .unwrap()
            .value();
        assert!((p - std_normal_cdf(1.1f64.ln() / 0.1)).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let paths = 1_000_000;
        let s_sqrt_t = 0.01 * 10.0;
        let hits = (0..paths)
            .filter(|_| {
                let z: f64 = rng.sample(StandardNormal);
                110.0 * (s_sqrt_t * z).exp() > 100.0
            })
            .count();
        let mc = hits as f64 / paths as f64;
        assert!((p - mc).abs() < 0.005, "analytic {p} vs mc {mc}");
        let below = cex_implied_probability(&quote(110.0), &contract(100.0, 100.0, StrikeDirection::Below), &vol(0.01), 0, Default::default()).unwrap();
        assert!((below.value() - (1.0 - p)).abs() < 1e-15);
    }

    #[test]
    fn expired_and_degenerate() {
        let opts = ImpliedProbOptions::default();
        let c = contract(100.0, 1.0, StrikeDirection::Above);
        assert!(matches!(
            cex_implied_probability(&quote(110.0), &c, &vol(0.01), c.expiry, opts),
            Err(LatencyError::Expired(_))
        ));
        assert!(matches!(
            cex_implied_probability(&quote(110.0), &c, &vol(0.0), 0, opts),
            Err(LatencyError::DegenerateVol(_))
        ));
        let lenient = ImpliedProbOptions {
            allow_degenerate: true,
            ..Default::default()
        };
        assert_eq!(cex_implied_probability(&quote(110.0), &c, &vol(0.0), 0, lenient).unwrap().value(), 1.0);
        assert_eq!(cex_implied_probability(&quote(90.0), &c, &vol(0.0), 0, lenient).unwrap().value(), 0.0);
        // S == K stays an error even when lenient
        assert!(cex_implied_probability(&quote(100.0), &c, &vol(0.0), 0, lenient).is_err());
    }

    #[test]
    fn drift_corrected_variant_is_lower_for_above() {
        let c = contract(100.0, 100.0, StrikeDirection::Above);
        let base = cex_implied_probability(&quote(100.0), &c, &vol(0.02), 0, Default::default()).unwrap();
        let opts = ImpliedProbOptions {
            model: ExceedanceModel::DriftCorrected,
            ..Default::default()
        };
        let corrected = cex_implied_probability(&quote(100.0), &c, &vol(0.02), 0, opts).unwrap();
        assert!(corrected.value() < base.value());
    }

    #[test]
    fn short_horizon_limits() {
        let c = contract(100.0, 1e-6, StrikeDirection::Above);
        let hi = cex_implied_probability(&quote(101.0), &c, &vol(0.01), 0, Default::default()).unwrap();
        let lo = cex_implied_probability(&quote(99.0), &c, &vol(0.01), 0, Default::default()).unwrap();
        assert!(hi.value() > 1.0 - 1e-9);
        assert!(lo.value() < 1e-9);
    }

    #[test]
    fn monotone_in_spot_and_strike() {
        let v = vol(0.02);
        let mut last = 0.0;
        for s in (80..=120).map(|x| x as f64) {
            let p = cex_implied_probability(&quote(s), &contract(100.0, 24.0, StrikeDirection::Above), &v, 0, Default::default()).unwrap().value();
            assert!(p >= last);
            last = p;
        }
        let mut last = 1.0;
        for k in (80..=120).map(|x| x as f64) {
            let p = cex_implied_probability(&quote(100.0), &contract(k, 24.0, StrikeDirection::Above), &v, 0, Default::default()).unwrap().value();
            assert!(p <= last);
            last = p;
        }
    }

    #[test]
    fn realized_vol_examples() {
        let flat: Vec<_> = (0..10).map(|i| (i * 60_000, 100.0)).collect();
        assert_eq!(realized_volatility("X", &flat, 24.0).unwrap().sigma_hourly, 0.0);
        assert!(matches!(
            realized_volatility("X", &[(0, 1.0)], 24.0),
            Err(LatencyError::InsufficientSamples(1))
        ));
        assert!(matches!(realized_volatility("X", &[], 24.0), Err(LatencyError::InsufficientSamples(0))));
    }

    #[test]
    fn realized_vol_recovers_gbm_sigma() {
        let sigma = 0.02;
        let dt_h: f64 = 1.0 / 60.0;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut price = 100.0;
        let mut series = vec![(0i64, price)];
        for i in 1..10_000i64 {
            let z: f64 = rng.sample(StandardNormal);
            price *= (sigma * dt_h.sqrt() * z - 0.5 * sigma * sigma * dt_h).exp();
            series.push((i * 60_000, price));
        }
        let est = realized_volatility("X", &series, 1e6).unwrap();
        assert!((est.sigma_hourly - sigma).abs() / sigma < 0.05, "estimate {}", est.sigma_hourly);
        assert_eq!(est.n_samples, 10_000);
        // window trims older samples
        let short = realized_volatility("X", &series, 1.0).unwrap();
        assert_eq!(short.n_samples, 61);
    }

    #[test]
    fn latency_signal_examples() {
        let p = |v| Probability::new(v).unwrap();
        assert!(latency_signal("m", p(0.65), p(0.65), 0.10, 0).is_none());
        let s = latency_signal("m", p(0.80), p(0.65), 0.10, 0).unwrap();
        assert_eq!(s.direction, SignalDirection::BuyYes);
        assert!((s.magnitude - 0.15).abs() < 1e-12);
        assert!(latency_signal("m", p(0.70), p(0.65), 0.10, 0).is_none());
        let s = latency_signal("m", p(0.40), p(0.65), 0.10, 0).unwrap();
        assert_eq!(s.direction, SignalDirection::BuyNo);
    }
}
