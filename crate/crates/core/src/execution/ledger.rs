use serde::{Deserialize, Serialize};
use tracing::warn;

use super::{Outcome, Trade, TradeStatus};
use crate::domain::UnixMillis;

/// Append-only ledger events. Replaying the log through [`Ledger::apply`]
/// reproduces the ledger exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LedgerEvent {
    Opened { trade: Trade },
    Rejected { trade: Trade },
    Settled {
        trade_id: String,
        market_id: String,
        outcome: Outcome,
        pnl: f64,
        at: UnixMillis,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerSummary {
    pub realized_pnl_usdc: f64,
    pub win_rate: Option<f64>,
    pub wins: u64,
    pub losses: u64,
    pub open_exposure_usdc: f64,
    pub open_positions: usize,
    pub cash_usdc: f64,
    pub equity_curve: Vec<(UnixMillis, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ledger {
    initial_bankroll: f64,
    cash: f64,
    open: Vec<Trade>,
    closed: Vec<Trade>,
    rejected: Vec<Trade>,
    realized_pnl: f64,
    wins: u64,
    losses: u64,
    equity_curve: Vec<(UnixMillis, f64)>,
    next_seq: u64,
    events: Vec<LedgerEvent>,
}

impl Ledger {
    pub fn new(initial_bankroll: f64, started_at: UnixMillis) -> Self {
        Self {
            initial_bankroll,
            cash: initial_bankroll,
            open: Vec::new(),
            closed: Vec::new(),
            rejected: Vec::new(),
            realized_pnl: 0.0,
            wins: 0,
            losses: 0,
            equity_curve: vec![(started_at, initial_bankroll)],
            next_seq: 1,
            events: Vec::new(),
        }
    }

    pub fn replay<'a>(
        initial_bankroll: f64,
        started_at: UnixMillis,
        events: impl IntoIterator<Item = &'a LedgerEvent>,
    ) -> Self {
        let mut l = Self::new(initial_bankroll, started_at);
        for ev in events {
            l.apply(ev.clone());
        }
        l
    }

    fn next_id(&mut self) -> String {
        let id = format!("t{:06}", self.next_seq);
        self.next_seq += 1;
        id
    }

    /// Applies an event. Trade ids found in the log advance the id counter so
    /// a replayed ledger continues the same sequence.
    pub fn apply(&mut self, ev: LedgerEvent) {
        match &ev {
            LedgerEvent::Opened { trade } => {
                self.bump_seq(&trade.trade_id);
                self.cash -= trade.size_usdc;
                self.open.push(trade.clone());
            }
            LedgerEvent::Rejected { trade } => {
                self.bump_seq(&trade.trade_id);
                self.rejected.push(trade.clone());
            }
            LedgerEvent::Settled {
                trade_id,
                outcome,
                pnl,
                at,
                ..
            } => {
                let Some(pos) = self.open.iter().position(|t| &t.trade_id == trade_id) else {
                    warn!(%trade_id, "settlement for unknown trade ignored");
                    return;
                };
                let mut t = self.open.remove(pos);
                let win = t.side.wins(*outcome);
                t.status = if win { TradeStatus::ResolvedWin } else { TradeStatus::ResolvedLoss };
                t.realized_pnl = Some(*pnl);
                t.settled_at = Some(*at);
                self.cash += t.size_usdc + pnl;
                self.realized_pnl += pnl;
                if win {
                    self.wins += 1;
                } else {
                    self.losses += 1;
                }
                self.closed.push(t);
                self.equity_curve.push((*at, self.initial_bankroll + self.realized_pnl));
            }
        }
        self.events.push(ev);
    }

    fn bump_seq(&mut self, id: &str) {
        if let Some(n) = id.strip_prefix('t').and_then(|s| s.parse::<u64>().ok()) {
            self.next_seq = self.next_seq.max(n + 1);
        }
    }

    /// Records a filled trade, assigning its id.
    pub fn record_fill(&mut self, mut trade: Trade) -> (Trade, LedgerEvent) {
        trade.trade_id = self.next_id();
        trade.status = TradeStatus::Filled;
        let ev = LedgerEvent::Opened { trade: trade.clone() };
        self.apply(ev.clone());
        (trade, ev)
    }

    pub fn record_rejection(&mut self, mut trade: Trade) -> (Trade, LedgerEvent) {
        trade.trade_id = self.next_id();
        trade.status = TradeStatus::Rejected;
        trade.shares = 0.0;
        let ev = LedgerEvent::Rejected { trade: trade.clone() };
        self.apply(ev.clone());
        (trade, ev)
    }

    /// Settles every open position in `market_id` at 1 (win) or 0 (loss).
    pub fn resolve_market(&mut self, market_id: &str, outcome: Outcome, now: UnixMillis) -> (Vec<Trade>, Vec<LedgerEvent>) {
        let ids: Vec<(String, f64)> = self
            .open
            .iter()
            .filter(|t| t.market_id == market_id)
            .map(|t| {
                let settle = if t.side.wins(outcome) { 1.0 } else { 0.0 };
                (t.trade_id.clone(), t.shares * (settle - t.fill_price.value()))
            })
            .collect();
        if ids.is_empty() {
            warn!(market_id, "resolution for market with no open positions");
            return (Vec::new(), Vec::new());
        }
        let mut events = Vec::with_capacity(ids.len());
        for (trade_id, pnl) in ids {
            let ev = LedgerEvent::Settled {
                trade_id,
                market_id: market_id.to_owned(),
                outcome,
                pnl,
                at: now,
            };
            self.apply(ev.clone());
            events.push(ev);
        }
        let n = events.len();
        (self.closed[self.closed.len() - n..].to_vec(), events)
    }

    pub fn has_open(&self, market_id: &str) -> bool {
        self.open.iter().any(|t| t.market_id == market_id)
    }

    pub fn open_positions(&self) -> &[Trade] {
        &self.open
    }

    /// All trades in id order: open, settled and rejected.
    pub fn trades(&self) -> Vec<Trade> {
        let mut all: Vec<Trade> = self.open.iter().chain(&self.closed).chain(&self.rejected).cloned().collect();
        all.sort_by(|a, b| a.trade_id.cmp(&b.trade_id));
        all
    }

    pub fn events(&self) -> &[LedgerEvent] {
        &self.events
    }

    pub fn initial_bankroll(&self) -> f64 {
        self.initial_bankroll
    }

    pub fn cash(&self) -> f64 {
        self.cash
    }

    pub fn realized_pnl(&self) -> f64 {
        self.realized_pnl
    }

    pub fn open_exposure(&self) -> f64 {
        self.open.iter().map(|t| t.size_usdc).sum()
    }

    /// `cash + open cost basis == initial bankroll + realized PnL`.
    pub fn conservation_gap(&self) -> f64 {
        (self.cash + self.open_exposure()) - (self.initial_bankroll + self.realized_pnl)
    }

    pub fn summary(&self) -> LedgerSummary {
        let decided = self.wins + self.losses;
        LedgerSummary {
            realized_pnl_usdc: self.realized_pnl,
            win_rate: (decided > 0).then(|| self.wins as f64 / decided as f64),
            wins: self.wins,
            losses: self.losses,
            open_exposure_usdc: self.open_exposure(),
            open_positions: self.open.len(),
            cash_usdc: self.cash,
            equity_curve: self.equity_curve.clone(),
        }
    }
}
