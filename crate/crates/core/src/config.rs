//! Flat key/value configuration. Precedence, lowest first: built-in
//! defaults, the config file, environment variables, command-line flags.
//!
//! File grammar: one `KEY = value` per line. Blank lines and lines starting
//! with `#` or `;` are ignored, as are `[section]` headers. Values may be
//! wrapped in single or double quotes. Keys are case-insensitive and `-` is
//! read as `_`. Unknown keys are an error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use thiserror::Error;

use crate::aggregation::{GateConfig, SwarmWeight};
use crate::execution::{FillCosts, TradingMode};
use crate::latency_arb::{ExceedanceModel, ImpliedProbOptions};
use crate::marketdata::{MarketFilter, MarketSource, PriceBasis};
use crate::par::ExecPolicy;
use crate::risk::RiskConfig;

pub struct KeySpec {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

macro_rules! keys {
    ($($name:literal => $default:literal, $help:literal;)*) => {
        pub const KEYS: &[KeySpec] = &[$(KeySpec { name: $name, default: $default, help: $help }),*];
    };
}

keys! {
    "MARKET_SOURCE" => "https://gamma-api.polymarket.com", "market source: http(s) base URL, fixture:<path> or a bare fixture path";
    "PRICE_BASIS" => "mid", "yes_price for HTTP sources: mid (bid/ask midpoint) or last (last trade)";
    "MIN_VOLUME_USDC" => "1000", "minimum market volume (inclusive)";
    "MIN_LIQUIDITY_USDC" => "0", "minimum market liquidity (inclusive)";
    "MAX_HOURS_TO_EXPIRY" => "", "skip markets expiring later than this; empty is unbounded";
    "SCAN_INTERVAL_SECS" => "5", "scan cycle interval";
    "MAX_MARKETS_PER_CYCLE" => "50", "evaluation budget per cycle, top markets by volume";
    "MAX_CYCLES" => "0", "stop after this many cycles; 0 runs until interrupted";
    "CLOCK" => "auto", "auto, system or logical; auto is logical for fixture sources";
    "EXEC_POLICY" => "parallel", "parallel or sequential data-parallel kernels";
    "AGENTS_PER_MARKET" => "25", "personas sampled per market";
    "MAX_IN_FLIGHT" => "16", "global bound on concurrent provider calls";
    "CACHE_TTL_SECS" => "300", "agent response cache TTL";
    "PERSONA_POOL_PATH" => "data/personas.json", "persona pool JSON file";
    "PROVIDERS" => "simulated", "simulated, or comma-separated names of remote providers (PROVIDER_<NAME>_URL/_KEY/_MODEL)";
    "PROVIDER_TIMEOUT_SECS" => "30", "per-call inference timeout";
    "SIM_SEED" => "42", "seed for the simulated provider and cohort sampling";
    "SIM_NOISE_SIGMA" => "0.8", "simulated agent logit noise";
    "SIM_BIAS_SIGMA" => "0.3", "simulated per-persona logit bias spread";
    "SIM_LATENCY_MS" => "0", "simulated provider latency";
    "SIM_TRUTH_PATH" => "", "optional JSON object market_id -> hidden probability for the simulated provider";
    "MIN_EV" => "0.05", "minimum expected value to trade";
    "MAX_STDDEV" => "0.30", "maximum swarm disagreement to trade";
    "WEIGHT_SWARM" => "0.70", "swarm weight in the market mixture";
    "MIN_AGENTS" => "5", "minimum successful agents to trade";
    "NEGATION_DEVIATION_THRESHOLD" => "0.02", "structural signal threshold on |sum - 1|";
    "NEGATION_MATCH_THRESHOLD" => "0.6", "title similarity needed to pair negations";
    "PARTITION_GROUPS_PATH" => "", "JSON object group_id -> member market ids";
    "JS_PRIORITY_THRESHOLD" => "0.01", "JS divergence above which a divergence signal is emitted";
    "CEX_SOURCE" => "", "spot quotes: http URL template with {symbol}, or replay:<path>; empty disables";
    "CEX_POLL_INTERVAL_SECS" => "5", "spot quote poll interval";
    "LATENCY_THRESHOLD" => "0.10", "latency signal threshold on |p_cex - p_market|";
    "STRIKE_MAP_PATH" => "", "JSON object market_id -> {symbol, strike, direction}";
    "VOL_WINDOW_HOURS" => "24", "realized volatility window";
    "ALLOW_DEGENERATE_VOL" => "false", "treat zero volatility as a deterministic limit";
    "EXCEEDANCE_MODEL" => "driftless", "driftless or drift_corrected";
    "KELLY_FRACTION" => "0.25", "fractional Kelly multiplier";
    "MAX_POSITION_USDC" => "10", "hard cap per position";
    "DAILY_LOSS_LIMIT_USDC" => "50", "daily realized loss that suspends trading";
    "BANKROLL_USDC" => "1000", "starting bankroll";
    "ARB_LEG_USDC" => "10", "stake per leg for structural arbitrage, capped by MAX_POSITION_USDC";
    "TRADING_MODE" => "paper", "paper or live";
    "LIVE_TRADING_ENABLED" => "false", "first key of the two-key live interlock";
    "FEE_BPS" => "0", "paper fill fee";
    "SLIPPAGE_BPS" => "0", "paper fill slippage";
    "ORDER_GATEWAY_URL" => "", "live order gateway base URL";
    "ORDER_GATEWAY_KEY" => "", "live order gateway API key";
    "STORE_PATH" => "data/store", "record store directory, or memory";
    "STORE_BUFFER_RECORDS" => "10000", "records held in memory during a storage outage before suspending";
    "LISTEN_ADDR" => "127.0.0.1:8080", "REST and WebSocket listen address";
    "API_TOKEN" => "", "operator tokens: token or name:token pairs separated by commas";
    "READ_REQUIRES_TOKEN" => "false", "require a token on GET endpoints too";
    "WS_BUFFER_FRAMES" => "256", "per-client WebSocket buffer before the client is dropped";
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key {0}")]
    UnknownKey(String),
    #[error("{path}:{line}: {reason}")]
    Syntax { path: PathBuf, line: usize, reason: String },
    #[error("invalid value for {key}: {reason}")]
    Invalid { key: &'static str, reason: String },
    #[error("cannot read {0}: {1}")]
    Io(PathBuf, std::io::Error),
}

pub fn normalize_key(k: &str) -> String {
    k.trim().to_ascii_uppercase().replace('-', "_")
}

pub fn key_spec(name: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|k| k.name == name)
}

/// The effective raw configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    values: BTreeMap<&'static str, String>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|k| (k.name, k.default.to_owned())).collect(),
        }
    }
}

impl Config {
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), ConfigError> {
        let k = normalize_key(key);
        let spec = key_spec(&k).ok_or(ConfigError::UnknownKey(k))?;
        self.values.insert(spec.name, value.into());
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(normalize_key(key).as_str())
            .map(String::as_str)
            .unwrap_or_else(|| panic!("unregistered config key {key}"))
    }

    pub fn parse_file_text(&mut self, path: &Path, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') || line.starts_with('[') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    path: path.to_owned(),
                    line: i + 1,
                    reason: "expected KEY = value".into(),
                });
            };
            let v = v.trim();
            let v = v
                .strip_prefix('"')
                .and_then(|s| s.strip_suffix('"'))
                .or_else(|| v.strip_prefix('\'').and_then(|s| s.strip_suffix('\'')))
                .unwrap_or(v);
            self.set(k, v).map_err(|e| ConfigError::Syntax {
                path: path.to_owned(),
                line: i + 1,
                reason: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// Layers file, environment and flag overrides over the defaults. Only
    /// environment variables named like a registered key are read.
    pub fn load(
        file: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
        flags: &[(String, String)],
    ) -> Result<Self, ConfigError> {
        let mut cfg = Config::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.to_owned(), e))?;
            cfg.parse_file_text(path, &text)?;
        }
        for (k, v) in env {
            if let Some(spec) = key_spec(&k) {
                cfg.values.insert(spec.name, v);
            }
        }
        for (k, v) in flags {
            cfg.set(k, v.clone())?;
        }
        Ok(cfg)
    }

    /// `KEY=value` lines in key-table order.
    pub fn render(&self) -> String {
        KEYS.iter().map(|k| format!("{}={}\n", k.name, self.values[k.name])).collect()
    }

    fn parse<T: std::str::FromStr>(&self, key: &'static str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key).trim().parse::<T>().map_err(|e| ConfigError::Invalid {
            key,
            reason: e.to_string(),
        })
    }

    fn f64_nonneg(&self, key: &'static str) -> Result<f64, ConfigError> {
        let v: f64 = self.parse(key)?;
        if !(v >= 0.0 && v.is_finite()) {
            return Err(ConfigError::Invalid {
                key,
                reason: format!("{v} must be a finite non-negative number"),
            });
        }
        Ok(v)
    }

    fn f64_pos(&self, key: &'static str) -> Result<f64, ConfigError> {
        let v = self.f64_nonneg(key)?;
        if v == 0.0 {
            return Err(ConfigError::Invalid {
                key,
                reason: "must be positive".into(),
            });
        }
        Ok(v)
    }

    fn usize_pos(&self, key: &'static str) -> Result<usize, ConfigError> {
        let v: usize = self.parse(key)?;
        if v == 0 {
            return Err(ConfigError::Invalid {
                key,
                reason: "must be at least 1".into(),
            });
        }
        Ok(v)
    }

    fn bool(&self, key: &'static str) -> Result<bool, ConfigError> {
        match self.get(key).trim().to_ascii_lowercase().as_str() {
            "true" | "1" | "yes" | "on" => Ok(true),
            "false" | "0" | "no" | "off" | "" => Ok(false),
            other => Err(ConfigError::Invalid {
                key,
                reason: format!("{other:?} is not a boolean"),
            }),
        }
    }

    fn opt_path(&self, key: &'static str) -> Option<PathBuf> {
        let v = self.get(key).trim();
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    fn opt_string(&self, key: &'static str) -> Option<String> {
        let v = self.get(key).trim();
        (!v.is_empty()).then(|| v.to_owned())
    }

    pub fn settings(&self) -> Result<Settings, ConfigError> {
        Settings::from_config(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockMode {
    Auto,
    System,
    Logical,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProviderSetting {
    Simulated,
    Remote(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum StoreSetting {
    Memory,
    Dir(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSettings {
    pub seed: u64,
    pub noise_sigma: f64,
    pub bias_sigma: f64,
    pub latency: Duration,
    pub truth_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerSettings {
    pub listen_addr: String,
    pub tokens: Vec<(String, String)>,
    pub read_requires_token: bool,
    pub ws_buffer_frames: usize,
}

/// Validated, typed view of a [`Config`].
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub source: MarketSource,
    pub filter: MarketFilter,
    pub scan_interval: Duration,
    pub max_markets_per_cycle: usize,
    pub max_cycles: u64,
    pub clock: ClockMode,
    pub exec_policy: ExecPolicy,
    pub agents_per_market: usize,
    pub max_in_flight: usize,
    pub cache_ttl_secs: u64,
    pub persona_pool_path: PathBuf,
    pub provider: ProviderSetting,
    pub provider_timeout: Duration,
    pub sim: SimSettings,
    pub gates: GateConfig,
    pub deviation_threshold: f64,
    pub negation_match_threshold: f64,
    pub partition_groups_path: Option<PathBuf>,
    pub js_threshold: f64,
    pub cex_source: Option<String>,
    pub cex_poll_interval: Duration,
    pub latency_threshold: f64,
    pub strike_map_path: Option<PathBuf>,
    pub vol_window_hours: f64,
    pub implied_opts: ImpliedProbOptions,
    pub risk: RiskConfig,
    pub arb_leg_usdc: f64,
    pub trading_mode: TradingMode,
    pub live_trading_enabled: bool,
    pub costs: FillCosts,
    pub order_gateway_url: Option<String>,
    pub order_gateway_key: Option<String>,
    pub store: StoreSetting,
    pub store_buffer_records: usize,
    pub server: ServerSettings,
}

/// Parses `API_TOKEN`: a bare token (operator `operator`) or
/// `name:token` pairs separated by commas.
pub fn parse_tokens(raw: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for part in raw.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (name, token) = match part.split_once(':') {
            Some((n, t)) => (n.trim().to_owned(), t.trim().to_owned()),
            None => ("operator".to_owned(), part.to_owned()),
        };
        if name.is_empty() || token.is_empty() {
            return Err(ConfigError::Invalid {
                key: "API_TOKEN",
                reason: format!("malformed entry {part:?}"),
            });
        }
        out.push((name, token));
    }
    Ok(out)
}

impl Settings {
    pub fn from_config(c: &Config) -> Result<Self, ConfigError> {
        let max_hours = match c.get("MAX_HOURS_TO_EXPIRY").trim() {
            "" => None,
            _ => Some(c.f64_pos("MAX_HOURS_TO_EXPIRY")?),
        };
        let filter = MarketFilter {
            min_volume_usdc: c.f64_nonneg("MIN_VOLUME_USDC")?,
            min_liquidity_usdc: c.f64_nonneg("MIN_LIQUIDITY_USDC")?,
            max_hours_to_expiry: max_hours,
            categories: None,
        };
        let clock = match c.get("CLOCK").trim() {
            "auto" => ClockMode::Auto,
            "system" => ClockMode::System,
            "logical" => ClockMode::Logical,
            other => {
                return Err(ConfigError::Invalid {
                    key: "CLOCK",
                    reason: format!("{other:?} is not auto, system or logical"),
                })
            }
        };
        let exec_policy = match c.get("EXEC_POLICY").trim() {
            "parallel" => ExecPolicy::Parallel,
            "sequential" => ExecPolicy::Sequential,
            other => {
                return Err(ConfigError::Invalid {
                    key: "EXEC_POLICY",
                    reason: format!("{other:?} is not parallel or sequential"),
                })
            }
        };
        let provider = match c.get("PROVIDERS").trim() {
            "simulated" => ProviderSetting::Simulated,
            "" => {
                return Err(ConfigError::Invalid {
                    key: "PROVIDERS",
                    reason: "at least one provider is required".into(),
                })
            }
            names => ProviderSetting::Remote(names.split(',').map(|s| s.trim().to_owned()).filter(|s| !s.is_empty()).collect()),
        };
        let weight = SwarmWeight::new(c.parse("WEIGHT_SWARM")?).map_err(|e| ConfigError::Invalid {
            key: "WEIGHT_SWARM",
            reason: e.to_string(),
        })?;
        let gates = GateConfig {
            min_ev: c.f64_nonneg("MIN_EV")?,
            max_std_dev: c.f64_pos("MAX_STDDEV")?,
            weight_swarm: weight,
            min_agents: c.usize_pos("MIN_AGENTS")?,
        };
        let risk = RiskConfig {
            kelly_multiplier: c.f64_pos("KELLY_FRACTION")?,
            max_position_usdc: c.f64_pos("MAX_POSITION_USDC")?,
            daily_loss_limit_usdc: c.f64_pos("DAILY_LOSS_LIMIT_USDC")?,
            bankroll_usdc: c.f64_pos("BANKROLL_USDC")?,
        };
        risk.validate().map_err(|e| ConfigError::Invalid {
            key: "KELLY_FRACTION",
            reason: e.to_string(),
        })?;
        let trading_mode = match c.get("TRADING_MODE").trim() {
            "paper" => TradingMode::Paper,
            "live" => TradingMode::Live,
            other => {
                return Err(ConfigError::Invalid {
                    key: "TRADING_MODE",
                    reason: format!("{other:?} is not paper or live"),
                })
            }
        };
        let live_trading_enabled = c.bool("LIVE_TRADING_ENABLED")?;
        if trading_mode == TradingMode::Live && !live_trading_enabled {
            return Err(ConfigError::Invalid {
                key: "TRADING_MODE",
                reason: "live mode requires LIVE_TRADING_ENABLED=true".into(),
            });
        }
        let model = match c.get("EXCEEDANCE_MODEL").trim() {
            "driftless" => ExceedanceModel::Driftless,
            "drift_corrected" => ExceedanceModel::DriftCorrected,
            other => {
                return Err(ConfigError::Invalid {
                    key: "EXCEEDANCE_MODEL",
                    reason: format!("{other:?} is not driftless or drift_corrected"),
                })
            }
        };
        let store = match c.get("STORE_PATH").trim() {
            "memory" => StoreSetting::Memory,
            "" => {
                return Err(ConfigError::Invalid {
                    key: "STORE_PATH",
                    reason: "empty path".into(),
                })
            }
            p => StoreSetting::Dir(PathBuf::from(p)),
        };
        let match_threshold: f64 = c.f64_nonneg("NEGATION_MATCH_THRESHOLD")?;
        if match_threshold > 1.0 {
            return Err(ConfigError::Invalid {
                key: "NEGATION_MATCH_THRESHOLD",
                reason: "must be within [0, 1]".into(),
            });
        }
        let mut source = MarketSource::parse(c.get("MARKET_SOURCE").trim());
        source.price_basis = match c.get("PRICE_BASIS").trim() {
            "mid" => PriceBasis::Mid,
            "last" => PriceBasis::Last,
            other => {
                return Err(ConfigError::Invalid {
                    key: "PRICE_BASIS",
                    reason: format!("{other:?} is not mid or last"),
                })
            }
        };
        Ok(Settings {
            source,
            filter,
            scan_interval: Duration::from_secs_f64(c.f64_pos("SCAN_INTERVAL_SECS")?),
            max_markets_per_cycle: c.usize_pos("MAX_MARKETS_PER_CYCLE")?,
            max_cycles: c.parse("MAX_CYCLES")?,
            clock,
            exec_policy,
            agents_per_market: c.usize_pos("AGENTS_PER_MARKET")?,
            max_in_flight: c.usize_pos("MAX_IN_FLIGHT")?,
            cache_ttl_secs: c.parse("CACHE_TTL_SECS")?,
            persona_pool_path: PathBuf::from(c.get("PERSONA_POOL_PATH").trim()),
            provider,
            provider_timeout: Duration::from_secs_f64(c.f64_pos("PROVIDER_TIMEOUT_SECS")?),
            sim: SimSettings {
                seed: c.parse("SIM_SEED")?,
                noise_sigma: c.f64_nonneg("SIM_NOISE_SIGMA")?,
                bias_sigma: c.f64_nonneg("SIM_BIAS_SIGMA")?,
                latency: Duration::from_millis(c.parse("SIM_LATENCY_MS")?),
                truth_path: c.opt_path("SIM_TRUTH_PATH"),
            },
            gates,
            deviation_threshold: c.f64_nonneg("NEGATION_DEVIATION_THRESHOLD")?,
            negation_match_threshold: match_threshold,
            partition_groups_path: c.opt_path("PARTITION_GROUPS_PATH"),
            js_threshold: c.f64_nonneg("JS_PRIORITY_THRESHOLD")?,
            cex_source: c.opt_string("CEX_SOURCE"),
            cex_poll_interval: Duration::from_secs_f64(c.f64_pos("CEX_POLL_INTERVAL_SECS")?),
            latency_threshold: c.f64_nonneg("LATENCY_THRESHOLD")?,
            strike_map_path: c.opt_path("STRIKE_MAP_PATH"),
            vol_window_hours: c.f64_pos("VOL_WINDOW_HOURS")?,
            implied_opts: ImpliedProbOptions {
                model,
                allow_degenerate: c.bool("ALLOW_DEGENERATE_VOL")?,
            },
            risk,
            arb_leg_usdc: c.f64_pos("ARB_LEG_USDC")?,
            trading_mode,
            live_trading_enabled,
            costs: FillCosts {
                fee_bps: c.f64_nonneg("FEE_BPS")?,
                slippage_bps: c.f64_nonneg("SLIPPAGE_BPS")?,
            },
            order_gateway_url: c.opt_string("ORDER_GATEWAY_URL"),
            order_gateway_key: c.opt_string("ORDER_GATEWAY_KEY"),
            store,
            store_buffer_records: c.usize_pos("STORE_BUFFER_RECORDS")?,
            server: ServerSettings {
                listen_addr: c.get("LISTEN_ADDR").trim().to_owned(),
                tokens: parse_tokens(c.get("API_TOKEN"))?,
                read_requires_token: c.bool("READ_REQUIRES_TOKEN")?,
                ws_buffer_frames: c.usize_pos("WS_BUFFER_FRAMES")?,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_render_and_validate() {
        let c = Config::default();
        let text = c.render();
        for line in [
            "KELLY_FRACTION=0.25",
            "MIN_EV=0.05",
            "MAX_STDDEV=0.30",
            "AGENTS_PER_MARKET=25",
            "MAX_POSITION_USDC=10",
            "SCAN_INTERVAL_SECS=5",
            "WEIGHT_SWARM=0.70",
        ] {
            assert!(text.lines().any(|l| l == line), "missing {line}");
        }
        let s = c.settings().unwrap();
        assert_eq!(s.risk, RiskConfig::default());
        assert_eq!(s.gates, GateConfig::default());
        assert_eq!(s.trading_mode, TradingMode::Paper);
    }

    #[test]
    fn precedence_file_env_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("desk.conf");
        std::fs::write(&path, "# comment\n[risk]\nmin-ev = 0.07\nMAX_STDDEV=\"0.2\"\nBANKROLL_USDC = 500\n").unwrap();
        let env = vec![
            ("MAX_STDDEV".to_string(), "0.25".to_string()),
            ("HOME".to_string(), "/root".to_string()),
        ];
        let flags = vec![("BANKROLL_USDC".to_string(), "700".to_string())];
        let c = Config::load(Some(&path), env, &flags).unwrap();
        assert_eq!(c.get("MIN_EV"), "0.07");
        assert_eq!(c.get("MAX_STDDEV"), "0.25");
        assert_eq!(c.get("BANKROLL_USDC"), "700");
    }

    #[test]
    fn bad_inputs() {
        let mut c = Config::default();
        assert!(matches!(c.set("NOPE", "1"), Err(ConfigError::UnknownKey(_))));
        c.set("MIN_EV", "-1").unwrap();
        assert!(c.settings().is_err());
        let mut c = Config::default();
        c.set("TRADING_MODE", "live").unwrap();
        assert!(c.settings().is_err());
        c.set("LIVE_TRADING_ENABLED", "true").unwrap();
        assert!(c.settings().is_ok());
        let mut c = Config::default();
        c.set("KELLY_FRACTION", "1.5").unwrap();
        assert!(c.settings().is_err());
        let mut c = Config::default();
        assert!(c.parse_file_text(Path::new("x"), "just words").is_err());
        let mut c = Config::default();
        c.set("PRICE_BASIS", "ask").unwrap();
        assert!(c.settings().is_err());
        c.set("price-basis", "last").unwrap();
        assert_eq!(c.settings().unwrap().source.price_basis, PriceBasis::Last);
    }

    #[test]
    fn token_parsing() {
        assert_eq!(parse_tokens("").unwrap(), vec![]);
        assert_eq!(parse_tokens("abc").unwrap(), vec![("operator".into(), "abc".into())]);
        assert_eq!(
            parse_tokens("alice:t1, bob:t2").unwrap(),
            vec![("alice".into(), "t1".into()), ("bob".into(), "t2".into())]
        );
        assert!(parse_tokens("alice:").is_err());
    }
}
