use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use super::{Engine, EngineClock, EngineParts};
use crate::analysis::{GroupError, PartitionGroups};
use crate::clock::{Clock, ManualClock, SystemClock};
use crate::config::{ClockMode, ProviderSetting, Settings, StoreSetting};
use crate::execution::{HttpOrderClient, OrderClient};
use crate::latency_arb::{LatencyError, QuoteFeed, QuoteSourceKind, StrikeMap};
use crate::marketdata::{MarketDataError, MarketFeed, SourceKind};
use crate::persistence::{StorageError, Store};
use crate::swarm::{
    InferenceProvider, PersonaPool, ProviderRouter, RemoteHttpProvider, SimulatedProvider, SwarmError, TruthTable,
};

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("persona pool {path}: {source}")]
    Personas { path: String, source: SwarmError },
    #[error(transparent)]
    MarketData(#[from] MarketDataError),
    #[error("provider {0}: set PROVIDER_{1}_URL")]
    Provider(String, String),
    #[error("simulator truth table: {0}")]
    Truth(String),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("partition groups: {0}")]
    Groups(#[from] GroupError),
    #[error("latency arbitrage: {0}")]
    Latency(#[from] LatencyError),
}

const ORDER_TIMEOUT: Duration = Duration::from_secs(10);
const QUOTE_TIMEOUT: Duration = Duration::from_secs(5);

fn provider(s: &Settings) -> Result<Arc<dyn InferenceProvider>, BuildError> {
    match &s.provider {
        ProviderSetting::Simulated => {
            let mut sim = SimulatedProvider::new(s.sim.seed, s.sim.noise_sigma, s.sim.bias_sigma)
                .with_latency(s.sim.latency)
                .with_max_in_flight(s.max_in_flight)
                .with_timeout(s.provider_timeout);
            if let Some(path) = &s.sim.truth_path {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| BuildError::Truth(format!("{}: {e}", path.display())))?;
                let known: HashMap<String, f64> =
                    serde_json::from_str(&text).map_err(|e| BuildError::Truth(e.to_string()))?;
                sim = sim.with_truth(TruthTable { known });
            }
            Ok(Arc::new(sim))
        }
        ProviderSetting::Remote(names) => {
            let mut out: Vec<Arc<dyn InferenceProvider>> = Vec::new();
            for name in names {
                let p = RemoteHttpProvider::from_env(name, s.max_in_flight, s.provider_timeout)
                    .ok_or_else(|| BuildError::Provider(name.clone(), name.to_ascii_uppercase()))?;
                out.push(Arc::new(p));
            }
            if out.len() == 1 {
                Ok(out.remove(0))
            } else {
                Ok(Arc::new(ProviderRouter::new(out)))
            }
        }
    }
}

fn quote_source(spec: &str) -> QuoteSourceKind {
    if spec.starts_with("http://") || spec.starts_with("https://") {
        QuoteSourceKind::Http {
            url_template: spec.to_owned(),
            timeout: QUOTE_TIMEOUT,
        }
    } else {
        QuoteSourceKind::Replay { path: spec.to_owned() }
    }
}

/// Opens the store named in the settings.
pub fn open_store(s: &Settings) -> Result<Arc<Store>, StorageError> {
    Ok(Arc::new(match &s.store {
        StoreSetting::Memory => Store::in_memory(),
        StoreSetting::Dir(dir) => Store::open_dir(dir)?,
    }))
}

/// Assembles an engine from settings. `CLOCK=auto` picks the logical clock for
/// fixture sources, starting at the first frame's timestamp.
pub async fn build_engine(settings: Settings) -> Result<Arc<Engine>, BuildError> {
    let pool = PersonaPool::load(&settings.persona_pool_path).map_err(|source| BuildError::Personas {
        path: settings.persona_pool_path.display().to_string(),
        source,
    })?;
    let feed = MarketFeed::new(settings.source.clone())?;
    let provider = provider(&settings)?;
    let store = open_store(&settings)?;
    let fixture = settings.source.kind == SourceKind::FixtureFile;
    let logical = match settings.clock {
        ClockMode::Logical => true,
        ClockMode::System => false,
        ClockMode::Auto => fixture,
    };
    let clock = if logical {
        let epoch = match feed.first_observed_at().await {
            Some(t) => t,
            None => SystemClock.now_ms(),
        };
        EngineClock::Logical {
            clock: Arc::new(ManualClock::new(epoch)),
            epoch,
        }
    } else {
        EngineClock::System
    };
    let order_client = settings.order_gateway_url.as_ref().map(|url| {
        Arc::new(HttpOrderClient::new(url.clone(), settings.order_gateway_key.clone(), ORDER_TIMEOUT))
            as Arc<dyn OrderClient>
    });
    let groups = match &settings.partition_groups_path {
        Some(p) => PartitionGroups::load(p)?,
        None => PartitionGroups::default(),
    };
    let strikes = match &settings.strike_map_path {
        Some(p) => StrikeMap::load(p)?,
        None => StrikeMap::default(),
    };
    let quotes = match &settings.cex_source {
        Some(spec) => Some(QuoteFeed::new(quote_source(spec))?),
        None => None,
    };
    Ok(Engine::start(EngineParts {
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
    })
    .await?)
}
