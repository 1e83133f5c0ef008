use serde::{Deserialize, Serialize};

use super::{Persisted, Table};
use crate::aggregation::SwarmConsensus;
use crate::analysis::ArbitrageSignal;
use crate::domain::{MarketSnapshot, UnixMillis, ValidationError};
use crate::execution::{LedgerEvent, Outcome};
use crate::risk::RiskState;
use crate::swarm::AgentPrediction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub cycle_id: u64,
    pub snapshot: MarketSnapshot,
}

impl Persisted for SnapshotRecord {
    const TABLE: Table = Table::Snapshots;
    fn ts(&self) -> UnixMillis {
        self.snapshot.observed_at
    }
    fn market_id(&self) -> Option<&str> {
        Some(&self.snapshot.market_id)
    }
    fn validate(&self) -> Result<(), ValidationError> {
        self.snapshot.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub cycle_id: u64,
    pub prediction: AgentPrediction,
}

impl Persisted for PredictionRecord {
    const TABLE: Table = Table::Predictions;
    fn ts(&self) -> UnixMillis {
        self.prediction.created_at
    }
    fn market_id(&self) -> Option<&str> {
        Some(&self.prediction.market_id)
    }
    fn source(&self) -> Option<String> {
        Some(format!("agent:{}", self.prediction.persona_id))
    }
    fn validate(&self) -> Result<(), ValidationError> {
        self.prediction.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusRecord {
    pub cycle_id: u64,
    pub at: UnixMillis,
    pub consensus: SwarmConsensus,
}

impl Persisted for ConsensusRecord {
    const TABLE: Table = Table::Consensus;
    fn ts(&self) -> UnixMillis {
        self.at
    }
    fn market_id(&self) -> Option<&str> {
        Some(&self.consensus.market_id)
    }
    fn validate(&self) -> Result<(), ValidationError> {
        if !(self.consensus.std_dev >= 0.0) {
            return Err(ValidationError::Negative {
                field: "std_dev",
                value: self.consensus.std_dev,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalRecord {
    pub cycle_id: u64,
    pub signal: ArbitrageSignal,
}

impl Persisted for SignalRecord {
    const TABLE: Table = Table::Signals;
    fn ts(&self) -> UnixMillis {
        self.signal.detected_at
    }
    fn market_id(&self) -> Option<&str> {
        self.signal.market_ids.first().map(String::as_str)
    }
    fn source(&self) -> Option<String> {
        serde_json::to_value(self.signal.kind)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
    }
    fn validate(&self) -> Result<(), ValidationError> {
        if !(self.signal.magnitude >= 0.0) {
            return Err(ValidationError::Negative {
                field: "magnitude",
                value: self.signal.magnitude,
            });
        }
        Ok(())
    }
}

/// A ledger event; the trades table is the source of truth for replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeEventRecord {
    pub at: UnixMillis,
    pub event: LedgerEvent,
}

impl Persisted for TradeEventRecord {
    const TABLE: Table = Table::Trades;
    fn ts(&self) -> UnixMillis {
        self.at
    }
    fn market_id(&self) -> Option<&str> {
        match &self.event {
            LedgerEvent::Opened { trade } | LedgerEvent::Rejected { trade } => Some(&trade.market_id),
            LedgerEvent::Settled { market_id, .. } => Some(market_id),
        }
    }
    fn source(&self) -> Option<String> {
        match &self.event {
            LedgerEvent::Opened { trade } | LedgerEvent::Rejected { trade } => Some(trade.mode.as_str().to_owned()),
            LedgerEvent::Settled { .. } => None,
        }
    }
}

/// Risk state after a change (fill, rollover, suspension, resume).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskDayRecord {
    pub at: UnixMillis,
    pub state: RiskState,
    /// Realized PnL from previous trading days.
    pub carried_pnl: f64,
    pub note: String,
}

impl Persisted for RiskDayRecord {
    const TABLE: Table = Table::RiskDays;
    fn ts(&self) -> UnixMillis {
        self.at
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionRecord {
    pub market_id: String,
    pub outcome: Outcome,
    pub resolved_at: UnixMillis,
    pub operator: String,
}

impl Persisted for ResolutionRecord {
    const TABLE: Table = Table::Resolutions;
    fn ts(&self) -> UnixMillis {
        self.resolved_at
    }
    fn market_id(&self) -> Option<&str> {
        Some(&self.market_id)
    }
}

/// Audit row for an operator command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub at: UnixMillis,
    pub operator: String,
    pub command: serde_json::Value,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Persisted for CommandRecord {
    const TABLE: Table = Table::Commands;
    fn ts(&self) -> UnixMillis {
        self.at
    }
    fn source(&self) -> Option<String> {
        Some(self.operator.clone())
    }
}

/// Per-cycle report row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub report: serde_json::Value,
    pub at: UnixMillis,
}

impl Persisted for CycleRecord {
    const TABLE: Table = Table::Cycles;
    fn ts(&self) -> UnixMillis {
        self.at
    }
}
