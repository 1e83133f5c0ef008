//! The scan loop: fetch, evaluate, aggregate, analyse, size, execute, persist
//! and broadcast, once per interval.

mod build;
mod view;

use std::collections::{BTreeMap, HashSet};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use futures::future::join_all;
use parking_lot::{Mutex, RwLock};
use serde::Serialize;
use serde_json::{json, Value};
use tokio::sync::watch;
use tokio::time::Instant;
use tracing::{info, warn};

use crate::aggregation::{evaluate_consensus, swarm_consensus, SwarmConsensus};
use crate::analysis::{
    divergence_signal, find_negation_pairs, negation_signals, scan_partitions, score_market, ArbitrageSignal,
    PartitionGroups, SignalKind,
};
use crate::clock::{Clock, ManualClock, SystemClock};
use crate::config::Settings;
use crate::control::{ControlState, Controller, Thresholds};
use crate::domain::{net_odds_from_price, MarketSnapshot, Probability, UnixMillis};
use crate::events::{EventBus, EventKind};
use crate::execution::{
    live_submit, paper_fill, Ledger, LedgerSummary, OrderClient, OrderRequest, Provenance, Side,
    SubmitRegistry, Trade, TradeStatus, TradingMode,
};
use crate::latency_arb::{cex_implied_probability, latency_signal, QuoteBook, QuoteFeed, StrikeMap};
use crate::marketdata::{filter_markets, MarketFeed};
use crate::persistence::{
    BufferedWriter, ConsensusRecord, CycleRecord, PredictionRecord, Query, ResolutionRecord, RiskDayRecord,
    SignalRecord, SnapshotRecord, StorageError, Store, TradeEventRecord, WriteStatus,
};
use crate::risk::{kelly_fraction, ResumeRecord, RiskConfig, RiskManager, RiskState};
use crate::swarm::{
    derive_seed, evaluate_market, sample_personas, InFlightLimiter, InferenceProvider, MarketEvaluation, PersonaPool,
    ResponseCache, SwarmError,
};

pub use build::{build_engine, open_store, BuildError};
pub use view::{AgentStats, EngineView, ScanCycleReport, SkipReason};

/// Wall clock, or a logical clock the engine moves to
/// `epoch + (cycle - 1) * interval` at the start of every cycle.
pub enum EngineClock {
    System,
    Logical { clock: Arc<ManualClock>, epoch: UnixMillis },
}

/// Everything the engine is assembled from.
pub struct EngineParts {
    pub settings: Settings,
    pub feed: MarketFeed,
    pub provider: Arc<dyn InferenceProvider>,
    pub pool: PersonaPool,
    pub store: Arc<Store>,
    pub clock: EngineClock,
    pub order_client: Option<Arc<dyn OrderClient>>,
    pub groups: PartitionGroups,
    pub strikes: StrikeMap,
    pub quotes: Option<QuoteFeed>,
}

/// Ledger and risk state reconstructed from the store.
pub struct Restored {
    pub ledger: Ledger,
    pub risk: Option<(RiskState, f64)>,
    pub last_cycle: u64,
    pub resolved: HashSet<String>,
    pub started_at: Option<UnixMillis>,
}

/// Rebuilds the ledger and the latest risk state from persisted events.
pub fn restore_from_store(store: &Store, bankroll: f64) -> Result<Restored, StorageError> {
    let days: Vec<RiskDayRecord> = store.query_typed(&Query::all())?;
    let started_at = days.iter().find(|d| d.note == "start").map(|d| d.at);
    let events: Vec<TradeEventRecord> = store.query_typed(&Query::all())?;
    let ledger = Ledger::replay(
        bankroll,
        started_at.unwrap_or(0),
        events.iter().map(|e| &e.event),
    );
    let risk = days.last().map(|d| (d.state.clone(), d.carried_pnl));
    let cycles: Vec<CycleRecord> = store.query_typed(&Query::all())?;
    let last_cycle = cycles
        .iter()
        .filter_map(|c| c.report.get("cycle_id").and_then(Value::as_u64))
        .max()
        .unwrap_or(0);
    let resolutions: Vec<ResolutionRecord> = store.query_typed(&Query::all())?;
    Ok(Restored {
        ledger,
        risk,
        last_cycle,
        resolved: resolutions.into_iter().map(|r| r.market_id).collect(),
        started_at,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PnlView {
    #[serde(flatten)]
    pub summary: LedgerSummary,
    pub realized_pnl_today_usdc: f64,
    pub initial_bankroll_usdc: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RiskView {
    pub state: RiskState,
    pub config: RiskConfig,
    pub start_of_day_bankroll_usdc: f64,
    pub scanning: &'static str,
    pub mode: TradingMode,
    pub armed: bool,
    pub live_trading_enabled: bool,
    pub storage_suspended: bool,
    pub thresholds: Thresholds,
    pub resumes: Vec<ResumeRecord>,
}

pub struct Engine {
    settings: Settings,
    clock: EngineClock,
    feed: MarketFeed,
    provider: Arc<dyn InferenceProvider>,
    pool: PersonaPool,
    writer: BufferedWriter,
    bus: Arc<EventBus>,
    controller: Arc<Controller>,
    risk: RiskManager,
    ledger: Mutex<Ledger>,
    cache: ResponseCache,
    limiter: InFlightLimiter,
    registry: SubmitRegistry,
    order_client: Option<Arc<dyn OrderClient>>,
    groups: PartitionGroups,
    strikes: StrikeMap,
    quotes: Option<QuoteFeed>,
    book: QuoteBook,
    view: RwLock<EngineView>,
    resolved: Mutex<HashSet<String>>,
    storage_suspended: AtomicBool,
    next_cycle: AtomicU64,
}

/// Work produced inside a cycle and broadcast after every lock is released.
type Outbox = Vec<(EventKind, Value)>;

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("engine types serialize")
}

impl Engine {
    /// Assembles the engine, restoring ledger and risk state from the store.
    pub async fn start(parts: EngineParts) -> Result<Arc<Self>, StorageError> {
        let EngineParts {
            settings,
            feed,
            provider,
            pool,
            store,
            clock,
            order_client,
            groups,
            strikes,
            quotes,
        } = parts;
        let restored = restore_from_store(&store, settings.risk.bankroll_usdc)?;
        let now = match &clock {
            EngineClock::System => SystemClock.now_ms(),
            EngineClock::Logical { clock, epoch } => {
                clock.set(*epoch);
                *epoch
            }
        };
        let controller = Arc::new(Controller::new(Controller::initial_state(&settings), store.clone()));
        let risk = match restored.risk {
            Some((state, carried)) => RiskManager::restore(settings.risk, state, carried),
            None => RiskManager::new(settings.risk, now),
        };
        let ledger = if restored.started_at.is_some() {
            restored.ledger
        } else {
            store.append(&RiskDayRecord {
                at: now,
                state: risk.snapshot(),
                carried_pnl: 0.0,
                note: "start".into(),
            })?;
            Ledger::new(settings.risk.bankroll_usdc, now)
        };
        let registry = SubmitRegistry::new();
        for t in ledger.trades() {
            if t.mode == TradingMode::Live {
                registry.restore(&t);
            }
        }
        if restored.last_cycle > 0 {
            info!(
                last_cycle = restored.last_cycle,
                trades = ledger.trades().len(),
                "restored engine state from store"
            );
        }
        let engine = Arc::new(Self {
            writer: BufferedWriter::new(store, settings.store_buffer_records),
            bus: Arc::new(EventBus::new(settings.server.ws_buffer_frames)),
            cache: ResponseCache::new(settings.cache_ttl_secs),
            limiter: InFlightLimiter::new(settings.max_in_flight),
            book: QuoteBook::new(settings.vol_window_hours.max(1.0) * 2.0),
            next_cycle: AtomicU64::new(restored.last_cycle + 1),
            resolved: Mutex::new(restored.resolved),
            ledger: Mutex::new(ledger),
            storage_suspended: AtomicBool::new(false),
            view: RwLock::new(EngineView::default()),
            settings,
            clock,
            feed,
            provider,
            pool,
            controller,
            risk,
            registry,
            order_client,
            groups,
            strikes,
            quotes,
        });
        let weak = Arc::downgrade(&engine);
        engine
            .bus
            .set_snapshot_source(move || weak.upgrade().map(|e| e.state_snapshot()).unwrap_or(Value::Null));
        Ok(engine)
    }

    pub fn now(&self) -> UnixMillis {
        match &self.clock {
            EngineClock::System => SystemClock.now_ms(),
            EngineClock::Logical { clock, .. } => clock.now_ms(),
        }
    }

    pub fn settings(&self) -> &Settings {
        &self.settings
    }

    pub fn bus(&self) -> &Arc<EventBus> {
        &self.bus
    }

    pub fn controller(&self) -> &Arc<Controller> {
        &self.controller
    }

    pub fn store(&self) -> &Arc<Store> {
        self.writer.store()
    }

    pub fn limiter(&self) -> &InFlightLimiter {
        &self.limiter
    }

    pub fn markets(&self) -> Vec<MarketSnapshot> {
        self.view.read().markets.clone()
    }

    pub fn consensus(&self) -> Vec<SwarmConsensus> {
        self.view.read().consensus.values().cloned().collect()
    }

    pub fn signals(&self) -> Vec<ArbitrageSignal> {
        self.view.read().signals.iter().cloned().collect()
    }

    pub fn agents(&self) -> Vec<AgentStats> {
        self.view.read().agents.values().cloned().collect()
    }

    pub fn reports(&self) -> Vec<ScanCycleReport> {
        self.view.read().reports.iter().cloned().collect()
    }

    pub fn trades(&self) -> Vec<Trade> {
        self.ledger.lock().trades()
    }

    pub fn ledger_summary(&self) -> LedgerSummary {
        self.ledger.lock().summary()
    }

    pub fn conservation_gap(&self) -> f64 {
        self.ledger.lock().conservation_gap()
    }

    pub fn pnl(&self) -> PnlView {
        let (summary, initial) = {
            let l = self.ledger.lock();
            (l.summary(), l.initial_bankroll())
        };
        PnlView {
            summary,
            realized_pnl_today_usdc: self.risk.snapshot().realized_pnl_today_usdc,
            initial_bankroll_usdc: initial,
        }
    }

    pub fn risk(&self) -> RiskView {
        let ctl = self.controller.state();
        RiskView {
            state: self.risk.snapshot(),
            config: self.risk.config(),
            start_of_day_bankroll_usdc: self.risk.start_of_day_bankroll(),
            scanning: ctl.scanning(),
            mode: ctl.mode,
            armed: ctl.armed,
            live_trading_enabled: ctl.live_trading_enabled,
            storage_suspended: self.storage_suspended.load(Ordering::SeqCst),
            thresholds: ctl.thresholds,
            resumes: self.risk.resumes(),
        }
    }

    /// Full state for a newly connected client. Runs under the bus lock, so
    /// it only reads.
    pub fn state_snapshot(&self) -> Value {
        json!({
            "markets": self.markets(),
            "consensus": self.consensus(),
            "signals": self.signals(),
            "trades": self.trades(),
            "pnl": self.pnl(),
            "agents": self.agents(),
            "risk": self.risk(),
        })
    }

    fn stage<T: crate::persistence::Persisted>(&self, rec: &T) {
        if let Err(e) = self.writer.stage(rec) {
            warn!(%e, "record rejected by storage validation");
        }
    }

    fn risk_record(&self, now: UnixMillis, note: &str) -> RiskDayRecord {
        RiskDayRecord {
            at: now,
            state: self.risk.snapshot(),
            carried_pnl: self.risk.carried_pnl(),
            note: note.to_owned(),
        }
    }

    fn flush(&self, out: &mut Outbox, now: UnixMillis) {
        match self.writer.flush() {
            WriteStatus::Written => {
                if self.storage_suspended.swap(false, Ordering::SeqCst) {
                    info!("storage recovered, trading resumes");
                    out.push((EventKind::LogLine, json!({"level": "info", "message": "storage recovered"})));
                }
            }
            WriteStatus::Buffered { pending } => {
                warn!(pending, "storage write failed, records buffered");
            }
            WriteStatus::Overflow { pending } => {
                if !self.storage_suspended.swap(true, Ordering::SeqCst) {
                    warn!(pending, "storage buffer full, suspending trading");
                    out.push((
                        EventKind::LogLine,
                        json!({"level": "error", "message": "storage buffer full, trading suspended", "at": now}),
                    ));
                }
            }
        }
    }

    fn apply_boundary(&self, state: &ControlState, work: crate::control::BoundaryWork, now: UnixMillis, out: &mut Outbox) {
        let th = &state.thresholds;
        self.risk.set_config(RiskConfig {
            kelly_multiplier: th.kelly_fraction,
            max_position_usdc: th.max_position_usdc,
            daily_loss_limit_usdc: th.daily_loss_limit_usdc,
            bankroll_usdc: self.settings.risk.bankroll_usdc,
        });
        let mut risk_changed = false;
        if self.risk.roll(now) {
            self.stage(&self.risk_record(now, "rollover"));
            risk_changed = true;
        }
        for (operator, _) in work.resumes {
            self.risk.resume(&operator, now);
            self.stage(&self.risk_record(now, &format!("resume:{operator}")));
            risk_changed = true;
        }
        for (market_id, outcome, operator, _) in work.resolutions {
            self.stage(&ResolutionRecord {
                market_id: market_id.clone(),
                outcome,
                resolved_at: now,
                operator,
            });
            self.resolved.lock().insert(market_id.clone());
            let (settled, events) = self.ledger.lock().resolve_market(&market_id, outcome, now);
            for ev in &events {
                self.stage(&TradeEventRecord { at: now, event: ev.clone() });
            }
            for t in &settled {
                self.risk.record(t.realized_pnl.unwrap_or(0.0), now);
                out.push((EventKind::Trade, to_value(t)));
            }
            if !settled.is_empty() {
                self.stage(&self.risk_record(now, &format!("settle:{market_id}")));
                out.push((EventKind::PnlUpdate, to_value(&self.pnl())));
                risk_changed = true;
            }
        }
        if risk_changed {
            out.push((EventKind::RiskState, to_value(&self.risk())));
        }
    }

    async fn evaluate_one(
        &self,
        cycle_id: u64,
        market: &MarketSnapshot,
        now: UnixMillis,
    ) -> Result<MarketEvaluation, SwarmError> {
        let n = self.settings.agents_per_market.min(self.pool.len());
        let seed = derive_seed(self.settings.sim.seed, &["cohort", &cycle_id.to_string(), &market.market_id]);
        let cohort = sample_personas(self.pool.personas(), n, seed)?;
        evaluate_market(market, &cohort, &*self.provider, &self.cache, &self.limiter, now).await
    }

    async fn latency_signals(
        &self,
        markets: &[MarketSnapshot],
        threshold: f64,
        now: UnixMillis,
    ) -> (Vec<ArbitrageSignal>, BTreeMap<String, Probability>) {
        let mut signals = Vec::new();
        let mut implied = BTreeMap::new();
        let Some(feed) = &self.quotes else {
            return (signals, implied);
        };
        let mut symbols: Vec<String> = self.strikes.0.values().map(|s| s.symbol.clone()).collect();
        symbols.sort();
        symbols.dedup();
        feed.poll(&symbols, &self.book, now).await;
        for m in markets {
            let Some(contract) = self.strikes.contract(&m.market_id, m.expiry) else {
                continue;
            };
            let Some(quote) = self.book.latest(&contract.symbol) else {
                continue;
            };
            let vol = match self.book.volatility(&contract.symbol, self.settings.vol_window_hours) {
                Ok(v) => v,
                Err(e) => {
                    warn!(market = %m.market_id, %e, "no volatility estimate");
                    continue;
                }
            };
            match cex_implied_probability(&quote, &contract, &vol, now, self.settings.implied_opts) {
                Ok(p_cex) => {
                    implied.insert(m.market_id.clone(), p_cex);
                    if let Some(sig) = latency_signal(&m.market_id, p_cex, m.yes_price, threshold, now) {
                        signals.push(sig);
                    }
                }
                Err(e) => warn!(market = %m.market_id, %e, "cannot price strike contract"),
            }
        }
        (signals, implied)
    }

    fn kelly_size(&self, p_win: Probability, side: Side, yes_price: Probability) -> Option<(f64, Probability)> {
        let price = side.price(yes_price);
        let b = net_odds_from_price(price).ok()?;
        let size = self.risk.size_for(kelly_fraction(p_win, b));
        (size > 0.0).then_some((size, price))
    }

    /// Orders in execution order: swarm, then structural legs, then latency.
    /// At most one open position per market.
    #[allow(clippy::too_many_arguments)]
    fn plan_orders(
        &self,
        cycle_id: u64,
        mode: TradingMode,
        consensus: &[SwarmConsensus],
        structural: &[ArbitrageSignal],
        latency: &[ArbitrageSignal],
        implied: &BTreeMap<String, Probability>,
        by_id: &BTreeMap<&str, &MarketSnapshot>,
        cap: f64,
    ) -> Vec<OrderRequest> {
        let mut taken: HashSet<String> = {
            let l = self.ledger.lock();
            l.open_positions().iter().map(|t| t.market_id.clone()).collect()
        };
        taken.extend(self.resolved.lock().iter().cloned());
        let mut orders = Vec::new();
        for c in consensus.iter().filter(|c| !c.gated) {
            if taken.contains(&c.market_id) {
                continue;
            }
            if let Some((size, price)) = self.kelly_size(c.win_probability(), c.side, c.p_market) {
                taken.insert(c.market_id.clone());
                orders.push(OrderRequest {
                    market_id: c.market_id.clone(),
                    side: c.side,
                    size_usdc: size.min(cap),
                    limit_price: price,
                    mode,
                    provenance: Provenance::Swarm,
                    cycle_id,
                });
            }
        }
        let leg_size = self.settings.arb_leg_usdc.min(cap);
        if leg_size > 0.0 && !self.risk.is_suspended() {
            for sig in structural {
                let legs_ok = sig
                    .legs
                    .iter()
                    .all(|l| !taken.contains(&l.market_id) && by_id.contains_key(l.market_id.as_str()));
                if !legs_ok {
                    continue;
                }
                let provenance = match sig.kind {
                    SignalKind::Partition => Provenance::Partition,
                    _ => Provenance::Negation,
                };
                for leg in &sig.legs {
                    let m = by_id[leg.market_id.as_str()];
                    taken.insert(leg.market_id.clone());
                    orders.push(OrderRequest {
                        market_id: leg.market_id.clone(),
                        side: leg.side,
                        size_usdc: leg_size,
                        limit_price: leg.side.price(m.yes_price),
                        mode,
                        provenance,
                        cycle_id,
                    });
                }
            }
        }
        for sig in latency {
            let leg = &sig.legs[0];
            let (Some(m), Some(p_cex)) = (by_id.get(leg.market_id.as_str()), implied.get(&leg.market_id)) else {
                continue;
            };
            if taken.contains(&leg.market_id) {
                continue;
            }
            let p_win = match leg.side {
                Side::BuyYes => *p_cex,
                Side::BuyNo => p_cex.complement(),
            };
            if let Some((size, price)) = self.kelly_size(p_win, leg.side, m.yes_price) {
                taken.insert(leg.market_id.clone());
                orders.push(OrderRequest {
                    market_id: leg.market_id.clone(),
                    side: leg.side,
                    size_usdc: size.min(cap),
                    limit_price: price,
                    mode,
                    provenance: Provenance::Latency,
                    cycle_id,
                });
            }
        }
        orders
    }

    async fn execute(
        &self,
        order: &OrderRequest,
        snapshots: &[MarketSnapshot],
        state: &ControlState,
        cap: f64,
        now: UnixMillis,
        out: &mut Outbox,
    ) -> Option<Trade> {
        let recorded = match order.mode {
            TradingMode::Paper => match paper_fill(order, snapshots, self.settings.costs, cap, now) {
                Ok(t) => self.ledger.lock().record_fill(t),
                Err(e) => {
                    warn!(market = %order.market_id, %e, "paper order refused");
                    return None;
                }
            },
            TradingMode::Live => {
                let Some(client) = &self.order_client else {
                    warn!("live mode without an order gateway");
                    out.push((
                        EventKind::LogLine,
                        json!({"level": "error", "message": "live mode without an order gateway"}),
                    ));
                    return None;
                };
                match live_submit(
                    order,
                    &**client,
                    state.live_trading_enabled,
                    state.armed,
                    &self.registry,
                    cap,
                    now,
                )
                .await
                {
                    Ok(t) if t.status == TradeStatus::Filled => self.ledger.lock().record_fill(t),
                    Ok(t) => self.ledger.lock().record_rejection(t),
                    Err(e) => {
                        warn!(market = %order.market_id, %e, "live submit failed");
                        out.push((
                            EventKind::LogLine,
                            json!({"level": "error", "message": e.to_string(), "market_id": order.market_id}),
                        ));
                        return None;
                    }
                }
            }
        };
        let (trade, event) = recorded;
        self.stage(&TradeEventRecord { at: now, event });
        if order.mode == TradingMode::Live {
            // live fills are durable before anything else happens
            self.flush(out, now);
        }
        out.push((EventKind::Trade, to_value(&trade)));
        (trade.status == TradeStatus::Filled).then_some(trade)
    }

    /// Runs one scan cycle and returns its report.
    pub async fn run_cycle(&self) -> ScanCycleReport {
        let cycle_id = self.next_cycle.fetch_add(1, Ordering::SeqCst);
        if let EngineClock::Logical { clock, epoch } = &self.clock {
            let step = self.settings.scan_interval.as_millis() as i64;
            clock.set(epoch + (cycle_id as i64 - 1) * step);
        }
        let started = self.now();
        let mut report = ScanCycleReport::empty(cycle_id, started);
        let mut out: Outbox = Vec::new();
        if self.storage_suspended.load(Ordering::SeqCst) {
            self.flush(&mut out, started);
        }

        let work = self.controller.take_boundary();
        let state = work.state.clone();
        self.apply_boundary(&state, work, started, &mut out);

        if state.paused {
            report.skipped = Some(SkipReason::Paused);
            return self.finish(report, started, out);
        }
        let fetched = match self.feed.fetch(started).await {
            Ok(f) => f,
            Err(e) => {
                warn!(%e, "market fetch failed, skipping cycle");
                out.push((EventKind::LogLine, json!({"level": "warn", "message": e.to_string()})));
                report.skipped = Some(SkipReason::SourceUnavailable);
                return self.finish(report, started, out);
            }
        };
        report.markets_fetched = fetched.markets.len();
        report.parse_errors = fetched.errors.len();
        for snapshot in &fetched.markets {
            self.stage(&SnapshotRecord {
                cycle_id,
                snapshot: snapshot.clone(),
            });
        }
        self.view.write().markets = fetched.markets.clone();
        out.push((EventKind::SnapshotBatch, json!({"cycle_id": cycle_id, "markets": fetched.markets})));

        let filtered: Vec<MarketSnapshot> = filter_markets(&fetched.markets, &self.settings.filter)
            .into_iter()
            .filter(|m| m.is_tradable())
            .collect();
        report.markets_filtered = filtered.len();

        if self.risk.is_suspended() {
            report.skipped = Some(SkipReason::RiskSuspended);
            return self.finish(report, started, out);
        }
        if self.storage_suspended.load(Ordering::SeqCst) {
            report.skipped = Some(SkipReason::StorageSuspended);
            return self.finish(report, started, out);
        }

        let mut selected = filtered.clone();
        selected.sort_by(|a, b| b.volume_usdc.total_cmp(&a.volume_usdc));
        selected.truncate(self.settings.max_markets_per_cycle);

        let th = state.thresholds.clone();
        let gates = th.gates();
        let evals = join_all(selected.iter().map(|m| self.evaluate_one(cycle_id, m, started))).await;
        let mut consensus = Vec::new();
        let mut signals = Vec::new();
        {
            let mut view = self.view.write();
            for (m, res) in selected.iter().zip(evals) {
                let eval = match res {
                    Ok(e) => e,
                    Err(e) => {
                        report.failed_markets += 1;
                        if let SwarmError::Empty { failures, .. } = &e {
                            view.record_evaluation(&MarketEvaluation {
                                market_id: m.market_id.clone(),
                                failures: failures.clone(),
                                ..Default::default()
                            });
                        }
                        warn!(market = %m.market_id, %e, "market evaluation failed");
                        continue;
                    }
                };
                report.provider_calls += eval.provider_calls;
                report.cache_hits += eval.cache_hits;
                view.record_evaluation(&eval);
                for p in &eval.predictions {
                    self.stage(&PredictionRecord {
                        cycle_id,
                        prediction: p.clone(),
                    });
                }
                let stats = match swarm_consensus(&eval.predictions) {
                    Ok(s) => s,
                    Err(e) => {
                        report.failed_markets += 1;
                        warn!(market = %m.market_id, %e, "no consensus");
                        continue;
                    }
                };
                let c = match evaluate_consensus(&m.market_id, stats, m.yes_price, &gates) {
                    Ok(c) => c,
                    Err(e) => {
                        report.failed_markets += 1;
                        warn!(market = %m.market_id, %e, "consensus not priceable");
                        continue;
                    }
                };
                report.markets_evaluated += 1;
                let div = score_market(&m.market_id, c.p_swarm, c.p_market);
                if let Some(sig) =
                    divergence_signal(&div, c.p_swarm.value(), c.p_market.value(), th.js_threshold, started)
                {
                    signals.push(sig);
                }
                view.consensus.insert(c.market_id.clone(), c.clone());
                consensus.push(c);
            }
        }
        for c in &consensus {
            self.stage(&ConsensusRecord {
                cycle_id,
                at: started,
                consensus: c.clone(),
            });
            out.push((EventKind::Consensus, to_value(c)));
        }

        let pairs = find_negation_pairs(self.settings.exec_policy, &filtered, self.settings.negation_match_threshold);
        let mut structural = negation_signals(&pairs, th.deviation_threshold, started);
        structural.extend(scan_partitions(&self.groups, &filtered, th.deviation_threshold, started));
        let (latency, implied) = self.latency_signals(&filtered, th.latency_threshold, started).await;
        signals.extend(structural.iter().cloned());
        signals.extend(latency.iter().cloned());
        report.signals_emitted = signals.len();
        for sig in &signals {
            self.stage(&SignalRecord {
                cycle_id,
                signal: sig.clone(),
            });
            out.push((EventKind::Signal, to_value(sig)));
        }
        self.view.write().push_signals(&signals);

        let by_id: BTreeMap<&str, &MarketSnapshot> = filtered.iter().map(|m| (m.market_id.as_str(), m)).collect();
        let cap = th.max_position_usdc;
        let orders = self.plan_orders(cycle_id, state.mode, &consensus, &structural, &latency, &implied, &by_id, cap);
        for order in &orders {
            if self.risk.is_suspended() || self.storage_suspended.load(Ordering::SeqCst) {
                break;
            }
            if self.execute(order, &fetched.markets, &state, cap, started, &mut out).await.is_some() {
                report.trades_executed += 1;
            }
        }
        if report.trades_executed > 0 {
            out.push((EventKind::PnlUpdate, to_value(&self.pnl())));
        }
        self.finish(report, started, out)
    }

    fn finish(&self, mut report: ScanCycleReport, started: UnixMillis, mut out: Outbox) -> ScanCycleReport {
        report.duration_ms = self.now() - started;
        self.stage(&CycleRecord {
            report: to_value(&report),
            at: started,
        });
        self.flush(&mut out, started);
        self.view.write().push_report(&report);
        out.push((EventKind::CycleReport, to_value(&report)));
        for (kind, payload) in out {
            self.bus.publish(kind, payload, started);
        }
        info!(
            cycle = report.cycle_id,
            fetched = report.markets_fetched,
            evaluated = report.markets_evaluated,
            signals = report.signals_emitted,
            trades = report.trades_executed,
            skipped = ?report.skipped,
            "scan cycle done"
        );
        report
    }

    /// Runs cycles until `MAX_CYCLES` is reached or `shutdown` flips to true.
    /// Each cycle starts `SCAN_INTERVAL` after the previous start, or right
    /// away when the previous cycle overran. `observe` sees every report with
    /// the cycle's start instant.
    pub async fn run(
        &self,
        mut shutdown: Option<watch::Receiver<bool>>,
        mut observe: impl FnMut(&ScanCycleReport, Instant),
    ) -> u64 {
        let interval: Duration = self.settings.scan_interval;
        let mut next = Instant::now();
        let mut done = 0u64;
        loop {
            let stop = async {
                match shutdown.as_mut() {
                    Some(rx) => {
                        let _ = rx.wait_for(|v| *v).await;
                    }
                    None => std::future::pending::<()>().await,
                }
            };
            tokio::select! {
                _ = tokio::time::sleep_until(next) => {}
                _ = stop => break,
            }
            let start = Instant::now();
            let report = self.run_cycle().await;
            observe(&report, start);
            done += 1;
            if self.settings.max_cycles > 0 && done >= self.settings.max_cycles {
                break;
            }
            next = (start + interval).max(Instant::now());
        }
        self.flush(&mut Vec::new(), self.now());
        done
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        if self.writer.pending() > 0 {
            let _ = self.writer.flush();
        }
    }
}
