//! Append-only record store. Every row carries a global sequence number and a
//! timestamp; tables are line-delimited JSON files (or memory, for tests).

mod buffer;
mod records;
mod store;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use buffer::{BufferedWriter, WriteStatus};
pub use records::{
    CommandRecord, ConsensusRecord, CycleRecord, PredictionRecord, ResolutionRecord, RiskDayRecord, SignalRecord,
    SnapshotRecord, TradeEventRecord,
};
pub use store::{JsonlBackend, MemoryBackend, StorageBackend, Store};

use crate::domain::{UnixMillis, ValidationError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Table {
    Snapshots,
    Predictions,
    Consensus,
    Signals,
    Trades,
    RiskDays,
    Resolutions,
    Commands,
    Cycles,
}

impl Table {
    pub const ALL: [Table; 9] = [
        Table::Snapshots,
        Table::Predictions,
        Table::Consensus,
        Table::Signals,
        Table::Trades,
        Table::RiskDays,
        Table::Resolutions,
        Table::Commands,
        Table::Cycles,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Table::Snapshots => "snapshots",
            Table::Predictions => "predictions",
            Table::Consensus => "consensus",
            Table::Signals => "signals",
            Table::Trades => "trades",
            Table::RiskDays => "risk_days",
            Table::Resolutions => "resolutions",
            Table::Commands => "commands",
            Table::Cycles => "cycles",
        }
    }

    pub fn parse(s: &str) -> Option<Table> {
        Table::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("storage unavailable: {0}")]
    Unavailable(String),
    #[error("record rejected: {0}")]
    Invalid(#[from] ValidationError),
    #[error("corrupt record in {table} at line {line}: {reason}")]
    Corrupt { table: &'static str, line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One stored row. `payload` holds the typed record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredRecord {
    pub seq: u64,
    pub ts: UnixMillis,
    pub table: Table,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub market_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    pub payload: serde_json::Value,
}

impl StoredRecord {
    pub fn decode<T: Persisted>(&self) -> Result<T, StorageError> {
        Ok(serde_json::from_value(self.payload.clone())?)
    }
}

/// A typed row. `validate` runs before anything is written.
pub trait Persisted: Serialize + serde::de::DeserializeOwned {
    const TABLE: Table;
    fn ts(&self) -> UnixMillis;
    fn market_id(&self) -> Option<&str> {
        None
    }
    fn source(&self) -> Option<String> {
        None
    }
    fn validate(&self) -> Result<(), ValidationError> {
        Ok(())
    }
}

/// Filter for [`Store::query`]. Time bounds are inclusive.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Query {
    pub from_ts: Option<UnixMillis>,
    pub to_ts: Option<UnixMillis>,
    pub market_id: Option<String>,
    pub source: Option<String>,
    pub from_seq: Option<u64>,
}

impl Query {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn matches(&self, r: &StoredRecord) -> bool {
        self.from_ts.is_none_or(|t| r.ts >= t)
            && self.to_ts.is_none_or(|t| r.ts <= t)
            && self.from_seq.is_none_or(|s| r.seq >= s)
            && self
                .market_id
                .as_deref()
                .is_none_or(|m| r.market_id.as_deref() == Some(m))
            && self.source.as_deref().is_none_or(|s| r.source.as_deref() == Some(s))
    }
}
