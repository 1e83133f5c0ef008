//! Kelly sizing with a fractional multiplier and hard cap, plus the daily
//! loss circuit breaker.

use chrono::{DateTime, NaiveDate, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::domain::{NetOdds, Probability, UnixMillis, ValidationError};

pub const DEFAULT_KELLY_MULTIPLIER: f64 = 0.25;
pub const DEFAULT_MAX_POSITION_USDC: f64 = 10.0;
pub const DEFAULT_DAILY_LOSS_LIMIT_USDC: f64 = 50.0;
pub const DEFAULT_BANKROLL_USDC: f64 = 1000.0;

/// Full-Kelly fraction `(p*b - (1-p)) / b`. Negative for unfavorable bets.
pub fn kelly_fraction(p: Probability, b: NetOdds) -> f64 {
    let p = p.value();
    (p * b.value() - (1.0 - p)) / b.value()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskConfig {
    pub kelly_multiplier: f64,
    pub max_position_usdc: f64,
    pub daily_loss_limit_usdc: f64,
    pub bankroll_usdc: f64,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self {
            kelly_multiplier: DEFAULT_KELLY_MULTIPLIER,
            max_position_usdc: DEFAULT_MAX_POSITION_USDC,
            daily_loss_limit_usdc: DEFAULT_DAILY_LOSS_LIMIT_USDC,
            bankroll_usdc: DEFAULT_BANKROLL_USDC,
        }
    }
}

impl RiskConfig {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if !(self.kelly_multiplier > 0.0 && self.kelly_multiplier <= 1.0) {
            return Err(ValidationError::Invalid {
                field: "kelly_multiplier",
                reason: format!("{} outside (0, 1]", self.kelly_multiplier),
            });
        }
        for (field, v) in [
            ("max_position_usdc", self.max_position_usdc),
            ("daily_loss_limit_usdc", self.daily_loss_limit_usdc),
            ("bankroll_usdc", self.bankroll_usdc),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ValidationError::Invalid {
                    field,
                    reason: format!("{v} must be positive"),
                });
            }
        }
        Ok(())
    }
}

/// Stake in USDC: `min(max(f*, 0) * multiplier * bankroll, cap)`.
pub fn position_size(f_star: f64, config: &RiskConfig) -> f64 {
    if !(f_star > 0.0) {
        return 0.0;
    }
    (f_star * config.kelly_multiplier * config.bankroll_usdc).min(config.max_position_usdc)
}

pub fn utc_day(ts: UnixMillis) -> NaiveDate {
    DateTime::<Utc>::from_timestamp_millis(ts)
        .unwrap_or_default()
        .date_naive()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskState {
    pub realized_pnl_today_usdc: f64,
    pub suspended: bool,
    pub suspended_at: Option<UnixMillis>,
    pub trading_day: NaiveDate,
}

impl RiskState {
    pub fn new(now: UnixMillis) -> Self {
        Self {
            realized_pnl_today_usdc: 0.0,
            suspended: false,
            suspended_at: None,
            trading_day: utc_day(now),
        }
    }
}

/// Resets the day's PnL and clears suspension when `now` falls on a later UTC
/// day than the state's trading day.
pub fn roll_day(state: RiskState, now: UnixMillis) -> RiskState {
    let today = utc_day(now);
    if today > state.trading_day {
        RiskState::new(now)
    } else {
        state
    }
}

/// Applies a realized PnL delta and trips the breaker the first time the
/// day's PnL reaches `-daily_loss_limit` (inclusive).
pub fn record_fill_and_check(pnl_delta_usdc: f64, state: RiskState, config: &RiskConfig, now: UnixMillis) -> RiskState {
    let mut s = roll_day(state, now);
    s.realized_pnl_today_usdc += pnl_delta_usdc;
    if !s.suspended && s.realized_pnl_today_usdc <= -config.daily_loss_limit_usdc {
        s.suspended = true;
        s.suspended_at = Some(now);
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResumeRecord {
    pub operator: String,
    pub at: UnixMillis,
    pub pnl_at_resume: f64,
}

#[derive(Debug)]
struct RiskInner {
    state: RiskState,
    config: RiskConfig,
    /// Realized PnL accumulated over all previous days; sizing uses the
    /// start-of-day bankroll `config.bankroll + carried`.
    carried_pnl: f64,
    resumes: Vec<ResumeRecord>,
}

/// The single owner of [`RiskState`]. Callers receive snapshots.
#[derive(Debug)]
pub struct RiskManager {
    inner: Mutex<RiskInner>,
}

impl RiskManager {
    pub fn new(config: RiskConfig, now: UnixMillis) -> Self {
        Self {
            inner: Mutex::new(RiskInner {
                state: RiskState::new(now),
                config,
                carried_pnl: 0.0,
                resumes: Vec::new(),
            }),
        }
    }

    pub fn restore(config: RiskConfig, state: RiskState, carried_pnl: f64) -> Self {
        Self {
            inner: Mutex::new(RiskInner {
                state,
                config,
                carried_pnl,
                resumes: Vec::new(),
            }),
        }
    }

    pub fn snapshot(&self) -> RiskState {
        self.inner.lock().state.clone()
    }

    pub fn config(&self) -> RiskConfig {
        self.inner.lock().config
    }

    pub fn set_config(&self, config: RiskConfig) {
        self.inner.lock().config = config;
    }

    pub fn carried_pnl(&self) -> f64 {
        self.inner.lock().carried_pnl
    }

    pub fn start_of_day_bankroll(&self) -> f64 {
        let g = self.inner.lock();
        g.config.bankroll_usdc + g.carried_pnl
    }

    /// Rolls the trading day if needed; returns true when a rollover happened.
    pub fn roll(&self, now: UnixMillis) -> bool {
        let mut g = self.inner.lock();
        let before = g.state.trading_day;
        let next = roll_day(g.state.clone(), now);
        if next.trading_day != before {
            let pnl = g.state.realized_pnl_today_usdc;
            g.carried_pnl += pnl;
            if g.state.suspended {
                info!(day = %next.trading_day, "trading day rolled over, suspension cleared");
            }
            g.state = next;
            true
        } else {
            false
        }
    }

    pub fn is_suspended(&self) -> bool {
        self.inner.lock().state.suspended
    }

    /// Size for a bet with full-Kelly fraction `f_star`, using the
    /// start-of-day bankroll. Zero while suspended.
    pub fn size_for(&self, f_star: f64) -> f64 {
        let g = self.inner.lock();
        if g.state.suspended {
            return 0.0;
        }
        let cfg = RiskConfig {
            bankroll_usdc: (g.config.bankroll_usdc + g.carried_pnl).max(0.0),
            ..g.config
        };
        position_size(f_star, &cfg)
    }

    pub fn record(&self, pnl_delta_usdc: f64, now: UnixMillis) -> RiskState {
        self.roll(now);
        let mut g = self.inner.lock();
        let was = g.state.suspended;
        g.state = record_fill_and_check(pnl_delta_usdc, g.state.clone(), &g.config, now);
        if g.state.suspended && !was {
            warn!(pnl = g.state.realized_pnl_today_usdc, "daily loss limit hit, trading suspended");
        }
        g.state.clone()
    }

    /// Operator override clearing the suspension before rollover.
    pub fn resume(&self, operator: &str, now: UnixMillis) -> RiskState {
        let mut g = self.inner.lock();
        if g.state.suspended {
            let rec = ResumeRecord {
                operator: operator.to_owned(),
                at: now,
                pnl_at_resume: g.state.realized_pnl_today_usdc,
            };
            info!(operator, at = now, "operator resumed trading");
            g.resumes.push(rec);
            g.state.suspended = false;
            g.state.suspended_at = None;
        }
        g.state.clone()
    }

    pub fn resumes(&self) -> Vec<ResumeRecord> {
        self.inner.lock().resumes.clone()
    }
}
