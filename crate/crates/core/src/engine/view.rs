use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::aggregation::SwarmConsensus;
use crate::analysis::ArbitrageSignal;
use crate::domain::{MarketSnapshot, UnixMillis};
use crate::swarm::{AgentPrediction, FailureKind, MarketEvaluation};

/// One row per scan cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanCycleReport {
    pub cycle_id: u64,
    pub started_at: UnixMillis,
    pub markets_fetched: usize,
    pub markets_filtered: usize,
    pub markets_evaluated: usize,
    pub signals_emitted: usize,
    pub trades_executed: usize,
    /// Measured on the engine clock; a logical clock does not advance within
    /// a cycle, so this is 0 in deterministic runs.
    pub duration_ms: i64,
    pub provider_calls: usize,
    pub cache_hits: usize,
    #[serde(default)]
    pub parse_errors: usize,
    #[serde(default)]
    pub failed_markets: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<SkipReason>,
}

impl ScanCycleReport {
    pub fn empty(cycle_id: u64, started_at: UnixMillis) -> Self {
        Self {
            cycle_id,
            started_at,
            markets_fetched: 0,
            markets_filtered: 0,
            markets_evaluated: 0,
            signals_emitted: 0,
            trades_executed: 0,
            duration_ms: 0,
            provider_calls: 0,
            cache_hits: 0,
            parse_errors: 0,
            failed_markets: 0,
            skipped: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    Paused,
    SourceUnavailable,
    /// Fetch and broadcast ran; evaluation and execution did not.
    RiskSuspended,
    StorageSuspended,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentStats {
    pub persona_id: String,
    pub predictions: u64,
    pub mean_probability: f64,
    pub mean_confidence: f64,
    pub transport_failures: u64,
    pub parse_failures: u64,
    pub last_market_id: Option<String>,
    pub last_probability: Option<f64>,
}

const SIGNAL_HISTORY: usize = 500;
const REPORT_HISTORY: usize = 200;

/// Latest derived state, read by the REST layer.
#[derive(Debug, Clone, Default, Serialize)]
pub struct EngineView {
    pub markets: Vec<MarketSnapshot>,
    pub consensus: BTreeMap<String, SwarmConsensus>,
    pub signals: VecDeque<ArbitrageSignal>,
    pub agents: BTreeMap<String, AgentStats>,
    pub reports: VecDeque<ScanCycleReport>,
}

impl EngineView {
    pub fn record_evaluation(&mut self, eval: &MarketEvaluation) {
        for p in &eval.predictions {
            self.record_prediction(p);
        }
        for f in &eval.failures {
            let s = self.agents.entry(f.persona_id.clone()).or_insert_with(|| AgentStats {
                persona_id: f.persona_id.clone(),
                ..Default::default()
            });
            match f.kind {
                FailureKind::Parse => s.parse_failures += 1,
                FailureKind::Transport | FailureKind::Prompt => s.transport_failures += 1,
            }
        }
    }

    fn record_prediction(&mut self, p: &AgentPrediction) {
        let s = self.agents.entry(p.persona_id.clone()).or_insert_with(|| AgentStats {
            persona_id: p.persona_id.clone(),
            ..Default::default()
        });
        let n = s.predictions as f64;
        s.mean_probability = (s.mean_probability * n + p.probability.value()) / (n + 1.0);
        s.mean_confidence = (s.mean_confidence * n + p.confidence) / (n + 1.0);
        s.predictions += 1;
        s.last_market_id = Some(p.market_id.clone());
        s.last_probability = Some(p.probability.value());
    }

    pub fn push_signals(&mut self, signals: &[ArbitrageSignal]) {
        for s in signals {
            if self.signals.len() == SIGNAL_HISTORY {
                self.signals.pop_front();
            }
            self.signals.push_back(s.clone());
        }
    }

    pub fn push_report(&mut self, r: &ScanCycleReport) {
        if self.reports.len() == REPORT_HISTORY {
            self.reports.pop_front();
        }
        self.reports.push_back(r.clone());
    }
}
