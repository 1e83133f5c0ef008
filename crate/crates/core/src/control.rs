//! Operator commands. All mutations go through [`Controller::apply`], which
//! validates, persists, then applies. The scan loop reads a snapshot of
//! [`ControlState`] at each cycle boundary and drains queued resolutions and
//! resumes there, so a cycle never sees a half-applied command.

use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::info;

use crate::aggregation::{GateConfig, SwarmWeight};
use crate::config::Settings;
use crate::domain::UnixMillis;
use crate::execution::{Outcome, TradingMode};
use crate::persistence::{CommandRecord, StorageError, Store};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum CommandKind {
    Pause,
    Resume,
    SetMode { mode: TradingMode },
    ArmLive,
    DisarmLive,
    SetThreshold { name: String, value: f64 },
    ResumeAfterLossLimit,
    ResolveMarket { market_id: String, outcome: Outcome },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlCommand {
    #[serde(flatten)]
    pub kind: CommandKind,
    pub issued_by: String,
    pub issued_at: UnixMillis,
}

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("{0}")]
    Invalid(String),
    #[error("live trading is not enabled in config")]
    LiveDisabled,
    #[error("arm_live requires mode live")]
    NotInLiveMode,
    #[error("command could not be persisted: {0}")]
    Storage(#[from] StorageError),
}

/// Runtime-adjustable thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub min_ev: f64,
    pub max_stddev: f64,
    pub weight_swarm: f64,
    pub min_agents: usize,
    pub deviation_threshold: f64,
    pub js_threshold: f64,
    pub latency_threshold: f64,
    pub kelly_fraction: f64,
    pub max_position_usdc: f64,
    pub daily_loss_limit_usdc: f64,
}

impl Thresholds {
    pub fn from_settings(s: &Settings) -> Self {
        Self {
            min_ev: s.gates.min_ev,
            max_stddev: s.gates.max_std_dev,
            weight_swarm: s.gates.weight_swarm.value(),
            min_agents: s.gates.min_agents,
            deviation_threshold: s.deviation_threshold,
            js_threshold: s.js_threshold,
            latency_threshold: s.latency_threshold,
            kelly_fraction: s.risk.kelly_multiplier,
            max_position_usdc: s.risk.max_position_usdc,
            daily_loss_limit_usdc: s.risk.daily_loss_limit_usdc,
        }
    }

    pub fn gates(&self) -> GateConfig {
        GateConfig {
            min_ev: self.min_ev,
            max_std_dev: self.max_stddev,
            weight_swarm: SwarmWeight::new(self.weight_swarm).expect("validated on set"),
            min_agents: self.min_agents,
        }
    }

    fn set(&mut self, name: &str, value: f64) -> Result<(), ControlError> {
        let bad = |why: &str| Err(ControlError::Invalid(format!("{name}={value}: {why}")));
        if !value.is_finite() {
            return bad("must be finite");
        }
        match name {
            "min_ev" if value >= 0.0 => self.min_ev = value,
            "max_stddev" if value > 0.0 => self.max_stddev = value,
            "weight_swarm" if (0.0..=1.0).contains(&value) => self.weight_swarm = value,
            "min_agents" if value >= 1.0 && value.fract() == 0.0 => self.min_agents = value as usize,
            "deviation_threshold" if value >= 0.0 => self.deviation_threshold = value,
            "js_threshold" if (0.0..=std::f64::consts::LN_2).contains(&value) => self.js_threshold = value,
            "latency_threshold" if (0.0..=1.0).contains(&value) => self.latency_threshold = value,
            "kelly_fraction" if value > 0.0 && value <= 1.0 => self.kelly_fraction = value,
            "max_position_usdc" if value > 0.0 => self.max_position_usdc = value,
            "daily_loss_limit_usdc" if value > 0.0 => self.daily_loss_limit_usdc = value,
            "min_ev" | "max_stddev" | "weight_swarm" | "min_agents" | "deviation_threshold" | "js_threshold"
            | "latency_threshold" | "kelly_fraction" | "max_position_usdc" | "daily_loss_limit_usdc" => {
                return bad("out of range")
            }
            _ => return Err(ControlError::Invalid(format!("unknown threshold {name:?}"))),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlState {
    pub paused: bool,
    pub mode: TradingMode,
    pub armed: bool,
    pub live_trading_enabled: bool,
    pub thresholds: Thresholds,
    /// Commands accepted but waiting for the next cycle boundary.
    pub pending: Vec<CommandKind>,
    pub last_command_at: Option<UnixMillis>,
}

impl ControlState {
    pub fn scanning(&self) -> &'static str {
        if self.paused {
            "paused"
        } else {
            "running"
        }
    }
}

/// Work the scan loop picks up at a cycle boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryWork {
    pub state: ControlState,
    pub resolutions: Vec<(String, Outcome, String, UnixMillis)>,
    pub resumes: Vec<(String, UnixMillis)>,
}

pub struct Controller {
    state: Mutex<ControlState>,
    resolutions: Mutex<Vec<(String, Outcome, String, UnixMillis)>>,
    resumes: Mutex<Vec<(String, UnixMillis)>>,
    applier: Mutex<()>,
    store: Arc<Store>,
}

impl Controller {
    pub fn new(initial: ControlState, store: Arc<Store>) -> Self {
        Self {
            state: Mutex::new(initial),
            resolutions: Mutex::new(Vec::new()),
            resumes: Mutex::new(Vec::new()),
            applier: Mutex::new(()),
            store,
        }
    }

    pub fn initial_state(s: &Settings) -> ControlState {
        ControlState {
            paused: false,
            mode: s.trading_mode,
            armed: false,
            live_trading_enabled: s.live_trading_enabled,
            thresholds: Thresholds::from_settings(s),
            pending: Vec::new(),
            last_command_at: None,
        }
    }

    pub fn state(&self) -> ControlState {
        self.state.lock().clone()
    }

    fn validate(&self, cmd: &ControlCommand, state: &ControlState) -> Result<ControlState, ControlError> {
        let mut next = state.clone();
        match &cmd.kind {
            CommandKind::Pause => next.paused = true,
            CommandKind::Resume => next.paused = false,
            CommandKind::SetMode { mode } => {
                if *mode == TradingMode::Live && !state.live_trading_enabled {
                    return Err(ControlError::LiveDisabled);
                }
                next.mode = *mode;
                if *mode == TradingMode::Paper {
                    next.armed = false;
                }
            }
            CommandKind::ArmLive => {
                if !state.live_trading_enabled {
                    return Err(ControlError::LiveDisabled);
                }
                if state.mode != TradingMode::Live {
                    return Err(ControlError::NotInLiveMode);
                }
                next.armed = true;
            }
            CommandKind::DisarmLive => next.armed = false,
            CommandKind::SetThreshold { name, value } => next.thresholds.set(name, *value)?,
            CommandKind::ResumeAfterLossLimit => next.pending.push(cmd.kind.clone()),
            CommandKind::ResolveMarket { market_id, .. } => {
                if market_id.trim().is_empty() {
                    return Err(ControlError::Invalid("market_id is empty".into()));
                }
                next.pending.push(cmd.kind.clone());
            }
        }
        if cmd.issued_by.trim().is_empty() {
            return Err(ControlError::Invalid("issued_by is empty".into()));
        }
        next.last_command_at = Some(cmd.issued_at);
        Ok(next)
    }

    /// Validates, persists (accepted or not), then applies. Returns the new
    /// state. Commands are applied one at a time.
    pub fn apply(&self, cmd: ControlCommand) -> Result<ControlState, ControlError> {
        let _serial = self.applier.lock();
        let current = self.state();
        let outcome = self.validate(&cmd, &current);
        let record = CommandRecord {
            at: cmd.issued_at,
            operator: cmd.issued_by.clone(),
            command: serde_json::to_value(&cmd.kind).expect("command serializes"),
            accepted: outcome.is_ok(),
            error: outcome.as_ref().err().map(|e| e.to_string()),
        };
        self.store.append(&record)?;
        let next = outcome?;
        match &cmd.kind {
            CommandKind::ResolveMarket { market_id, outcome } => self.resolutions.lock().push((
                market_id.clone(),
                *outcome,
                cmd.issued_by.clone(),
                cmd.issued_at,
            )),
            CommandKind::ResumeAfterLossLimit => self.resumes.lock().push((cmd.issued_by.clone(), cmd.issued_at)),
            _ => {}
        }
        info!(operator = %cmd.issued_by, command = ?cmd.kind, "control command applied");
        *self.state.lock() = next.clone();
        Ok(next)
    }

    /// Snapshot for the next cycle plus the queued work, which is removed.
    pub fn take_boundary(&self) -> BoundaryWork {
        let _serial = self.applier.lock();
        let mut st = self.state.lock();
        st.pending.clear();
        BoundaryWork {
            state: st.clone(),
            resolutions: std::mem::take(&mut *self.resolutions.lock()),
            resumes: std::mem::take(&mut *self.resumes.lock()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use crate::persistence::{Query, Table};

    fn ctl(live_enabled: bool) -> (Controller, Arc<Store>) {
        let mut c = Config::default();
        if live_enabled {
            c.set("LIVE_TRADING_ENABLED", "true").unwrap();
        }
        let store = Arc::new(Store::in_memory());
        let s = c.settings().unwrap();
        (Controller::new(Controller::initial_state(&s), store.clone()), store)
    }

    fn cmd(kind: CommandKind) -> ControlCommand {
        ControlCommand {
            kind,
            issued_by: "alice".into(),
            issued_at: 7,
        }
    }

    #[test]
    fn pause_resume_round_trip_and_persisted() {
        let (c, store) = ctl(false);
        assert_eq!(c.apply(cmd(CommandKind::Pause)).unwrap().scanning(), "paused");
        assert_eq!(c.apply(cmd(CommandKind::Resume)).unwrap().scanning(), "running");
        assert_eq!(store.query(Table::Commands, &Query::all()).unwrap().len(), 2);
    }

    #[test]
    fn two_key_live() {
        let (c, _) = ctl(false);
        assert!(matches!(
            c.apply(cmd(CommandKind::SetMode { mode: TradingMode::Live })),
            Err(ControlError::LiveDisabled)
        ));
        let (c, _) = ctl(true);
        assert!(matches!(c.apply(cmd(CommandKind::ArmLive)), Err(ControlError::NotInLiveMode)));
        c.apply(cmd(CommandKind::SetMode { mode: TradingMode::Live })).unwrap();
        assert!(c.apply(cmd(CommandKind::ArmLive)).unwrap().armed);
        // back to paper disarms
        assert!(!c.apply(cmd(CommandKind::SetMode { mode: TradingMode::Paper })).unwrap().armed);
    }

    #[test]
    fn thresholds_validated_and_rejections_audited() {
        let (c, store) = ctl(false);
        let bad = c.apply(cmd(CommandKind::SetThreshold {
            name: "min_ev".into(),
            value: -1.0,
        }));
        assert!(matches!(bad, Err(ControlError::Invalid(_))));
        assert!(c
            .apply(cmd(CommandKind::SetThreshold {
                name: "nonsense".into(),
                value: 1.0
            }))
            .is_err());
        let ok = c
            .apply(cmd(CommandKind::SetThreshold {
                name: "min_ev".into(),
                value: 0.1,
            }))
            .unwrap();
        assert_eq!(ok.thresholds.min_ev, 0.1);
        let rows = store.query(Table::Commands, &Query::all()).unwrap();
        let accepted: Vec<bool> = rows.iter().map(|r| r.payload["accepted"].as_bool().unwrap()).collect();
        assert_eq!(accepted, vec![false, false, true]);
    }

    #[test]
    fn queued_work_drained_at_boundary() {
        let (c, _) = ctl(false);
        c.apply(cmd(CommandKind::ResolveMarket {
            market_id: "m".into(),
            outcome: Outcome::Yes,
        }))
        .unwrap();
        c.apply(cmd(CommandKind::ResumeAfterLossLimit)).unwrap();
        assert_eq!(c.state().pending.len(), 2);
        let w = c.take_boundary();
        assert_eq!(w.resolutions.len(), 1);
        assert_eq!(w.resumes.len(), 1);
        assert!(w.state.pending.is_empty());
        assert!(c.take_boundary().resolutions.is_empty());
    }

    #[test]
    fn command_json_shape() {
        let c: ControlCommand = serde_json::from_str(
            r#"{"action":"set_threshold","name":"min_ev","value":0.1,"issued_by":"a","issued_at":1}"#,
        )
        .unwrap();
        assert_eq!(
            c.kind,
            CommandKind::SetThreshold {
                name: "min_ev".into(),
                value: 0.1
            }
        );
    }
}
