use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::time::Duration;

use async_trait::async_trait;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{error, info};

use super::{validate_order, ExecutionError, OrderRequest, Side, Trade, TradeStatus, TradingMode};
use crate::domain::{Probability, UnixMillis};

/// `(market_id, cycle_id, side)`; one submission per key, ever.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IdempotencyKey {
    pub market_id: String,
    pub cycle_id: u64,
    pub side: Side,
}

impl IdempotencyKey {
    pub fn for_order(order: &OrderRequest) -> Self {
        Self {
            market_id: order.market_id.clone(),
            cycle_id: order.cycle_id,
            side: order.side,
        }
    }
}

impl fmt::Display for IdempotencyKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.market_id, self.cycle_id, self.side.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitOrder {
    pub idempotency_key: String,
    pub market_id: String,
    pub side: Side,
    pub size_usdc: f64,
    pub limit_price: Probability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SubmitOutcome {
    Accepted { order_id: String },
    Rejected { reason: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OrderClientError {
    #[error("order submission timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
}

#[async_trait]
pub trait OrderClient: Send + Sync {
    async fn submit(&self, order: &LimitOrder) -> Result<SubmitOutcome, OrderClientError>;
    async fn cancel(&self, order_id: &str) -> Result<(), OrderClientError>;
}

/// Keys already sent to the exchange, including ambiguous ones.
#[derive(Debug, Default)]
pub struct SubmitRegistry {
    keys: Mutex<HashSet<IdempotencyKey>>,
}

impl SubmitRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, key: &IdempotencyKey) -> bool {
        self.keys.lock().contains(key)
    }

    fn claim(&self, key: IdempotencyKey) -> bool {
        self.keys.lock().insert(key)
    }

    /// Re-registers the key of a live trade found in the ledger after a
    /// restart.
    pub fn restore(&self, trade: &Trade) {
        self.keys.lock().insert(IdempotencyKey {
            market_id: trade.market_id.clone(),
            cycle_id: trade.cycle_id,
            side: trade.side,
        });
    }

    pub fn len(&self) -> usize {
        self.keys.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn base_trade(order: &OrderRequest, now: UnixMillis) -> Trade {
    Trade {
        trade_id: String::new(),
        market_id: order.market_id.clone(),
        side: order.side,
        size_usdc: order.size_usdc,
        limit_price: order.limit_price,
        mode: order.mode,
        provenance: order.provenance,
        cycle_id: order.cycle_id,
        fill_price: order.limit_price,
        shares: 0.0,
        filled_at: now,
        status: TradeStatus::Rejected,
        reason: None,
        exchange_order_id: None,
        realized_pnl: None,
        settled_at: None,
    }
}

/// Submits a limit order at the decision-time price. Without both keys
/// (`live_enabled` from config and `armed` from the control API) the order is
/// rejected with reason `not_armed` and the client is never called. The key is
/// claimed before the call so a timeout can never lead to a second submit.
pub async fn live_submit(
    order: &OrderRequest,
    client: &dyn OrderClient,
    live_enabled: bool,
    armed: bool,
    registry: &SubmitRegistry,
    cap: f64,
    now: UnixMillis,
) -> Result<Trade, ExecutionError> {
    if order.mode != TradingMode::Live {
        return Err(ExecutionError::WrongMode(order.mode));
    }
    validate_order(order, cap)?;
    let mut trade = base_trade(order, now);
    if !(live_enabled && armed) {
        trade.reason = Some("not_armed".into());
        return Ok(trade);
    }
    let key = IdempotencyKey::for_order(order);
    if !registry.claim(key.clone()) {
        return Err(ExecutionError::DuplicateSubmit(key));
    }
    let limit = LimitOrder {
        idempotency_key: key.to_string(),
        market_id: order.market_id.clone(),
        side: order.side,
        size_usdc: order.size_usdc,
        limit_price: order.limit_price,
    };
    match client.submit(&limit).await {
        Ok(SubmitOutcome::Accepted { order_id }) => {
            info!(%key, %order_id, "live order accepted");
            trade.status = TradeStatus::Filled;
            trade.shares = if order.limit_price.value() > 0.0 {
                order.size_usdc / order.limit_price.value()
            } else {
                0.0
            };
            trade.exchange_order_id = Some(order_id);
            Ok(trade)
        }
        Ok(SubmitOutcome::Rejected { reason }) => {
            trade.reason = Some(reason);
            Ok(trade)
        }
        Err(e) => {
            error!(%key, error = %e, "live submission outcome unknown");
            Err(ExecutionError::AmbiguousSubmit(key))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MockResponse {
    Accept,
    Reject(String),
    Timeout,
}

/// Scriptable client. Responses are consumed in order; once the script runs
/// out the default applies. `forbidden()` panics on any call.
#[derive(Debug)]
pub struct MockOrderClient {
    script: Mutex<VecDeque<MockResponse>>,
    default: MockResponse,
    forbid: bool,
    submitted: Mutex<Vec<LimitOrder>>,
    cancelled: Mutex<Vec<String>>,
}

impl MockOrderClient {
    pub fn accepting() -> Self {
        Self::scripted(Vec::new(), MockResponse::Accept)
    }

    pub fn scripted(script: Vec<MockResponse>, default: MockResponse) -> Self {
        Self {
            script: Mutex::new(script.into()),
            default,
            forbid: false,
            submitted: Mutex::new(Vec::new()),
            cancelled: Mutex::new(Vec::new()),
        }
    }

    pub fn forbidden() -> Self {
        Self {
            forbid: true,
            ..Self::accepting()
        }
    }

    pub fn submitted(&self) -> Vec<LimitOrder> {
        self.submitted.lock().clone()
    }

    pub fn cancelled(&self) -> Vec<String> {
        self.cancelled.lock().clone()
    }
}

#[async_trait]
impl OrderClient for MockOrderClient {
    async fn submit(&self, order: &LimitOrder) -> Result<SubmitOutcome, OrderClientError> {
        assert!(!self.forbid, "live order emitted: {order:?}");
        let n = {
            let mut s = self.submitted.lock();
            s.push(order.clone());
            s.len()
        };
        let resp = self.script.lock().pop_front().unwrap_or_else(|| self.default.clone());
        match resp {
            MockResponse::Accept => Ok(SubmitOutcome::Accepted {
                order_id: format!("mock-{n}"),
            }),
            MockResponse::Reject(reason) => Ok(SubmitOutcome::Rejected { reason }),
            MockResponse::Timeout => Err(OrderClientError::Timeout),
        }
    }

    async fn cancel(&self, order_id: &str) -> Result<(), OrderClientError> {
        assert!(!self.forbid, "live cancel emitted for {order_id}");
        self.cancelled.lock().push(order_id.to_owned());
        Ok(())
    }
}

/// JSON gateway client: `POST {base}/orders` with a [`LimitOrder`] body and an
/// `Idempotency-Key` header, answered by a [`SubmitOutcome`];
/// `DELETE {base}/orders/{id}` cancels.
pub struct HttpOrderClient {
    base_url: String,
    api_key: Option<String>,
    timeout: Duration,
    http: reqwest::Client,
}

impl HttpOrderClient {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_owned(),
            api_key,
            timeout,
            http: reqwest::Client::new(),
        }
    }

    fn auth(&self, req: reqwest::RequestBuilder) -> reqwest::RequestBuilder {
        match &self.api_key {
            Some(k) => req.bearer_auth(k),
            None => req,
        }
    }
}

fn transport(e: reqwest::Error) -> OrderClientError {
    if e.is_timeout() {
        OrderClientError::Timeout
    } else {
        OrderClientError::Transport(e.to_string())
    }
}

#[async_trait]
impl OrderClient for HttpOrderClient {
    async fn submit(&self, order: &LimitOrder) -> Result<SubmitOutcome, OrderClientError> {
        let req = self
            .http
            .post(format!("{}/orders", self.base_url))
            .timeout(self.timeout)
            .header("Idempotency-Key", &order.idempotency_key)
            .json(order);
        let resp = self.auth(req).send().await.map_err(transport)?;
        let status = resp.status();
        if status.is_client_error() {
            let body = resp.text().await.unwrap_or_default();
            return Ok(SubmitOutcome::Rejected {
                reason: format!("http {}: {body}", status.as_u16()),
            });
        }
        if !status.is_success() {
            // 5xx: the exchange may or may not have the order
            return Err(OrderClientError::Transport(format!("http {}", status.as_u16())));
        }
        resp.json::<SubmitOutcome>().await.map_err(transport)
    }

    async fn cancel(&self, order_id: &str) -> Result<(), OrderClientError> {
        let req = self
            .http
            .delete(format!("{}/orders/{order_id}", self.base_url))
            .timeout(self.timeout);
        self.auth(req)
            .send()
            .await
            .and_then(|r| r.error_for_status())
            .map_err(transport)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::order;
    use super::*;

    fn live(id: &str) -> OrderRequest {
        let mut o = order(id, Side::BuyYes, 10.0);
        o.mode = TradingMode::Live;
        o.limit_price = Probability::new(0.4).unwrap();
        o
    }

    #[tokio::test]
    async fn not_armed_never_calls_client() {
        let client = MockOrderClient::forbidden();
        let reg = SubmitRegistry::new();
        for (enabled, armed) in [(false, false), (true, false), (false, true)] {
            let t = live_submit(&live("m"), &client, enabled, armed, &reg, 10.0, 0).await.unwrap();
            assert_eq!(t.status, TradeStatus::Rejected);
            assert_eq!(t.reason.as_deref(), Some("not_armed"));
        }
        assert!(reg.is_empty());
    }

    #[tokio::test]
    async fn accepting_mock_fills_at_limit() {
        let client = MockOrderClient::accepting();
        let reg = SubmitRegistry::new();
        let t = live_submit(&live("m"), &client, true, true, &reg, 10.0, 0).await.unwrap();
        assert_eq!(t.status, TradeStatus::Filled);
        assert_eq!(t.fill_price.value(), 0.4);
        assert!((t.shares - 25.0).abs() < 1e-12);
        assert_eq!(t.exchange_order_id.as_deref(), Some("mock-1"));
        assert_eq!(client.submitted()[0].idempotency_key, "m:1:buy_yes");
    }

    #[tokio::test]
    async fn timeout_is_ambiguous_and_not_resubmitted() {
        let client = MockOrderClient::scripted(vec![MockResponse::Timeout], MockResponse::Accept);
        let reg = SubmitRegistry::new();
        let err = live_submit(&live("m"), &client, true, true, &reg, 10.0, 0).await.unwrap_err();
        assert!(matches!(err, ExecutionError::AmbiguousSubmit(_)));
        let err = live_submit(&live("m"), &client, true, true, &reg, 10.0, 1).await.unwrap_err();
        assert!(matches!(err, ExecutionError::DuplicateSubmit(_)));
        assert_eq!(client.submitted().len(), 1);
    }

    #[tokio::test]
    async fn rejection_carries_reason() {
        let client = MockOrderClient::scripted(vec![MockResponse::Reject("insufficient_balance".into())], MockResponse::Accept);
        let t = live_submit(&live("m"), &client, true, true, &SubmitRegistry::new(), 10.0, 0).await.unwrap();
        assert_eq!(t.status, TradeStatus::Rejected);
        assert_eq!(t.reason.as_deref(), Some("insufficient_balance"));
    }

    #[tokio::test]
    async fn paper_orders_refused() {
        let client = MockOrderClient::forbidden();
        let err = live_submit(&order("m", Side::BuyYes, 1.0), &client, true, true, &SubmitRegistry::new(), 10.0, 0)
            .await
            .unwrap_err();
        assert_eq!(err, ExecutionError::WrongMode(TradingMode::Paper));
    }
}
