//! Order execution in paper or live mode, the append-only trade ledger and
//! settlement.

mod ledger;
mod live;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{MarketSnapshot, Probability, UnixMillis, ValidationError};

pub use ledger::{Ledger, LedgerEvent, LedgerSummary};
pub use live::{
    live_submit, HttpOrderClient, IdempotencyKey, LimitOrder, MockOrderClient, MockResponse, OrderClient,
    OrderClientError, SubmitOutcome, SubmitRegistry,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    BuyYes,
    BuyNo,
}

impl Side {
    /// Price of one share on this side given the YES price.
    pub fn price(self, yes_price: Probability) -> Probability {
        match self {
            Side::BuyYes => yes_price,
            Side::BuyNo => yes_price.complement(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::BuyYes => "buy_yes",
            Side::BuyNo => "buy_no",
        }
    }

    pub fn wins(self, outcome: Outcome) -> bool {
        matches!((self, outcome), (Side::BuyYes, Outcome::Yes) | (Side::BuyNo, Outcome::No))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Yes,
    No,
}

impl Outcome {
    pub fn as_f64(self) -> f64 {
        match self {
            Outcome::Yes => 1.0,
            Outcome::No => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TradingMode {
    #[default]
    Paper,
    Live,
}

impl TradingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TradingMode::Paper => "paper",
            TradingMode::Live => "live",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Swarm,
    Negation,
    Partition,
    Latency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderRequest {
    pub market_id: String,
    pub side: Side,
    pub size_usdc: f64,
    pub limit_price: Probability,
    pub mode: TradingMode,
    pub provenance: Provenance,
    pub cycle_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TradeStatus {
    Filled,
    Rejected,
    ResolvedWin,
    ResolvedLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trade {
    pub trade_id: String,
    pub market_id: String,
    pub side: Side,
    pub size_usdc: f64,
    pub limit_price: Probability,
    pub mode: TradingMode,
    pub provenance: Provenance,
    pub cycle_id: u64,
    pub fill_price: Probability,
    pub shares: f64,
    pub filled_at: UnixMillis,
    pub status: TradeStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exchange_order_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realized_pnl: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub settled_at: Option<UnixMillis>,
}

impl Trade {
    pub fn is_open(&self) -> bool {
        self.status == TradeStatus::Filled
    }

    /// Cost basis of an open position.
    pub fn cost(&self) -> f64 {
        self.shares * self.fill_price.value()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecutionError {
    #[error("market {0} is not in the current snapshot batch")]
    StaleMarket(String),
    #[error("order size {size} exceeds cap {cap}")]
    CapExceeded { size: f64, cap: f64 },
    #[error("order mode {0:?} does not match this path")]
    WrongMode(TradingMode),
    #[error("submission outcome unknown for {0}; operator attention required")]
    AmbiguousSubmit(IdempotencyKey),
    #[error("order {0} was already submitted")]
    DuplicateSubmit(IdempotencyKey),
    #[error(transparent)]
    Invalid(#[from] ValidationError),
}

/// Optional cost knobs applied to paper fills, in basis points of price.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FillCosts {
    pub fee_bps: f64,
    pub slippage_bps: f64,
}

impl FillCosts {
    fn apply(&self, price: Probability) -> Probability {
        let bump = (self.fee_bps + self.slippage_bps) / 10_000.0;
        if bump == 0.0 {
            return price;
        }
        Probability::saturating((price.value() * (1.0 + bump)).min(1.0))
    }
}

pub(crate) fn validate_order(order: &OrderRequest, cap: f64) -> Result<(), ExecutionError> {
    if !(order.size_usdc > 0.0 && order.size_usdc.is_finite()) {
        return Err(ValidationError::Invalid {
            field: "size_usdc",
            reason: format!("{} must be positive", order.size_usdc),
        }
        .into());
    }
    // tolerate float dust from sizing arithmetic
    if order.size_usdc > cap + 1e-9 {
        return Err(ExecutionError::CapExceeded {
            size: order.size_usdc,
            cap,
        });
    }
    Ok(())
}

/// Simulated full fill at the snapshot price of the order's side. The trade id
/// is left empty for the ledger to assign.
pub fn paper_fill(
    order: &OrderRequest,
    snapshots: &[MarketSnapshot],
    costs: FillCosts,
    cap: f64,
    now: UnixMillis,
) -> Result<Trade, ExecutionError> {
    if order.mode != TradingMode::Paper {
        return Err(ExecutionError::WrongMode(order.mode));
    }
    validate_order(order, cap)?;
    let snap = snapshots
        .iter()
        .find(|m| m.market_id == order.market_id)
        .ok_or_else(|| ExecutionError::StaleMarket(order.market_id.clone()))?;
    let fill_price = costs.apply(order.side.price(snap.yes_price));
    if !(fill_price.value() > 0.0) {
        return Err(ValidationError::PriceOutOfRange(fill_price.value()).into());
    }
    Ok(Trade {
        trade_id: String::new(),
        market_id: order.market_id.clone(),
        side: order.side,
        size_usdc: order.size_usdc,
        limit_price: order.limit_price,
        mode: order.mode,
        provenance: order.provenance,
        cycle_id: order.cycle_id,
        fill_price,
        shares: order.size_usdc / fill_price.value(),
        filled_at: now,
        status: TradeStatus::Filled,
        reason: None,
        exchange_order_id: None,
        realized_pnl: None,
        settled_at: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Category;

    pub(crate) fn snap(id: &str, yes: f64) -> MarketSnapshot {
        MarketSnapshot {
            market_id: id.into(),
            title: id.into(),
            yes_price: Probability::new(yes).unwrap(),
            volume_usdc: 1000.0,
            liquidity_usdc: 100.0,
            category: Category::Other,
            expiry: 1_000_000_000,
            observed_at: 0,
            volume_basis: Default::default(),
        }
    }

    pub(crate) fn order(id: &str, side: Side, size: f64) -> OrderRequest {
        OrderRequest {
            market_id: id.into(),
            side,
            size_usdc: size,
            limit_price: Probability::HALF,
            mode: TradingMode::Paper,
            provenance: Provenance::Swarm,
            cycle_id: 1,
        }
    }

    #[test]
    fn paper_fill_examples() {
        let snaps = [snap("m", 0.40)];
        let t = paper_fill(&order("m", Side::BuyYes, 10.0), &snaps, FillCosts::default(), 10.0, 5).unwrap();
        assert_eq!(t.fill_price.value(), 0.40);
        assert!((t.shares - 25.0).abs() < 1e-12);
        let t = paper_fill(&order("m", Side::BuyNo, 10.0), &snaps, FillCosts::default(), 10.0, 5).unwrap();
        assert!((t.fill_price.value() - 0.60).abs() < 1e-15);
        assert_eq!(
            paper_fill(&order("x", Side::BuyNo, 10.0), &snaps, FillCosts::default(), 10.0, 5).unwrap_err(),
            ExecutionError::StaleMarket("x".into())
        );
    }

    #[test]
    fn cap_is_enforced_again() {
        let snaps = [snap("m", 0.40)];
        assert!(matches!(
            paper_fill(&order("m", Side::BuyYes, 11.0), &snaps, FillCosts::default(), 10.0, 0),
            Err(ExecutionError::CapExceeded { .. })
        ));
        let mut live = order("m", Side::BuyYes, 1.0);
        live.mode = TradingMode::Live;
        assert!(matches!(
            paper_fill(&live, &snaps, FillCosts::default(), 10.0, 0),
            Err(ExecutionError::WrongMode(TradingMode::Live))
        ));
    }

    #[test]
    fn costs_raise_fill_price() {
        let snaps = [snap("m", 0.40)];
        let costs = FillCosts {
            fee_bps: 100.0,
            slippage_bps: 50.0,
        };
        let t = paper_fill(&order("m", Side::BuyYes, 10.0), &snaps, costs, 10.0, 0).unwrap();
        assert!((t.fill_price.value() - 0.406).abs() < 1e-12);
    }
}
