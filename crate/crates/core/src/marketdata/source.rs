use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tokio::sync::Mutex;
use tracing::{debug, warn};

use crate::domain::{
    Category, MarketSnapshot, Probability, UnixMillis, ValidationError, VolumeBasis,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    HttpApi,
    FixtureFile,
}

/// Which exchange price field becomes `yes_price` for HTTP sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceBasis {
    #[default]
    Mid,
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSource {
    pub kind: SourceKind,
    pub endpoint_or_path: String,
    pub poll_timeout: Duration,
    pub price_basis: PriceBasis,
    pub page_limit: usize,
}

impl MarketSource {
    pub fn fixture(path: impl Into<String>) -> Self {
        Self {
            kind: SourceKind::FixtureFile,
            endpoint_or_path: path.into(),
            poll_timeout: Duration::from_secs(10),
            price_basis: PriceBasis::Mid,
            page_limit: 500,
        }
    }

    pub fn http(base_url: impl Into<String>) -> Self {
        Self {
            kind: SourceKind::HttpApi,
            endpoint_or_path: base_url.into(),
            poll_timeout: Duration::from_secs(10),
            price_basis: PriceBasis::Mid,
            page_limit: 500,
        }
    }

    /// Parses `MARKET_SOURCE`: `fixture:<path>`, a bare path, or an
    /// `http(s)://` base URL.
    pub fn parse(spec: &str) -> Self {
        if let Some(path) = spec.strip_prefix("fixture:") {
            Self::fixture(path)
        } else if spec.starts_with("http://") || spec.starts_with("https://") {
            Self::http(spec)
        } else {
            Self::fixture(spec)
        }
    }
}

/// A record that could not be turned into a snapshot.
#[derive(Debug, Clone, PartialEq, Error, Serialize)]
#[error("record {record_id}: {reason}")]
pub struct ParseError {
    pub record_id: String,
    pub reason: String,
}

#[derive(Debug, Error)]
pub enum MarketDataError {
    #[error("market source unavailable: {0}")]
    SourceUnavailable(String),
    #[error("cannot read fixture {path}: {source}")]
    Fixture {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed payload: {0}")]
    Payload(String),
}

/// Result of one fetch: the good snapshots plus every rejected record.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FetchOutcome {
    pub markets: Vec<MarketSnapshot>,
    pub errors: Vec<ParseError>,
}

/// Wire shape of one fixture line.
#[derive(Debug, Deserialize)]
struct FixtureRecord {
    market_id: String,
    title: String,
    yes_price: f64,
    volume_usdc: f64,
    liquidity_usdc: f64,
    category: Category,
    expiry: UnixMillis,
    observed_at: UnixMillis,
    #[serde(default)]
    volume_basis: VolumeBasis,
}

impl FixtureRecord {
    fn into_snapshot(self) -> Result<MarketSnapshot, ValidationError> {
        let snap = MarketSnapshot {
            yes_price: Probability::new(self.yes_price)?,
            market_id: self.market_id,
            title: self.title,
            volume_usdc: self.volume_usdc,
            liquidity_usdc: self.liquidity_usdc,
            category: self.category,
            expiry: self.expiry,
            observed_at: self.observed_at,
            volume_basis: self.volume_basis,
        };
        snap.validate()?;
        Ok(snap)
    }
}

fn record_id_hint(line: &str, line_no: usize) -> String {
    serde_json::from_str::<Value>(line)
        .ok()
        .and_then(|v| v.get("market_id").and_then(Value::as_str).map(str::to_owned))
        .unwrap_or_else(|| format!("line {line_no}"))
}

/// Parses line-delimited fixture text. Blank lines are ignored.
pub fn parse_fixture(text: &str) -> FetchOutcome {
    let mut out = FetchOutcome::default();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<FixtureRecord>(line)
            .map_err(|e| e.to_string())
            .and_then(|r| r.into_snapshot().map_err(|e| e.to_string()));
        match parsed {
            Ok(s) => out.markets.push(s),
            Err(reason) => {
                let err = ParseError {
                    record_id: record_id_hint(line, idx + 1),
                    reason,
                };
                warn!(%err, "skipping malformed fixture record");
                out.errors.push(err);
            }
        }
    }
    out
}

/// Serializes snapshots into the fixture line format.
pub fn write_fixture_line(s: &MarketSnapshot) -> String {
    serde_json::json!({
        "market_id": s.market_id,
        "title": s.title,
        "yes_price": s.yes_price.value(),
        "volume_usdc": s.volume_usdc,
        "liquidity_usdc": s.liquidity_usdc,
        "category": s.category,
        "expiry": s.expiry,
        "observed_at": s.observed_at,
        "volume_basis": s.volume_basis,
    })
    .to_string()
}

fn num(v: Option<&Value>) -> Option<f64> {
    match v? {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn parse_outcome_prices(v: Option<&Value>) -> Option<Vec<f64>> {
    match v? {
        Value::Array(items) => items.iter().map(|x| num(Some(x))).collect(),
        Value::String(s) => {
            let inner: Value = serde_json::from_str(s).ok()?;
            parse_outcome_prices(Some(&inner))
        }
        _ => None,
    }
}

fn parse_timestamp(v: Option<&Value>) -> Option<UnixMillis> {
    match v? {
        Value::String(s) => chrono::DateTime::parse_from_rfc3339(s)
            .ok()
            .map(|d| d.timestamp_millis())
            .or_else(|| {
                chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d")
                    .ok()
                    .and_then(|d| d.and_hms_opt(0, 0, 0))
                    .map(|d| d.and_utc().timestamp_millis())
            }),
        Value::Number(n) => n.as_i64(),
        _ => None,
    }
}

/// Converts one market-metadata API record. `Ok(None)` means the record is
/// well formed but not an open binary market.
fn gamma_record(
    rec: &Value,
    now: UnixMillis,
    basis: PriceBasis,
) -> Result<Option<MarketSnapshot>, ParseError> {
    let id = match rec.get("id") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => {
            return Err(ParseError {
                record_id: "<missing id>".into(),
                reason: "missing id".into(),
            })
        }
    };
    let fail = |reason: &str| ParseError {
        record_id: id.clone(),
        reason: reason.to_owned(),
    };
    if rec.get("closed").and_then(Value::as_bool) == Some(true)
        || rec.get("active").and_then(Value::as_bool) == Some(false)
    {
        return Ok(None);
    }
    let title = rec
        .get("question")
        .and_then(Value::as_str)
        .ok_or_else(|| fail("missing question"))?
        .to_owned();
    let outcome_prices = parse_outcome_prices(rec.get("outcomePrices"));
    if let Some(ps) = &outcome_prices {
        if ps.len() != 2 {
            debug!(market_id = %id, "skipping non-binary market");
            return Ok(None);
        }
    }
    let fallback = outcome_prices.as_ref().map(|ps| ps[0]);
    let price = match basis {
        PriceBasis::Mid => match (num(rec.get("bestBid")), num(rec.get("bestAsk"))) {
            (Some(b), Some(a)) if a >= b => Some((a + b) / 2.0),
            _ => fallback,
        },
        PriceBasis::Last => num(rec.get("lastTradePrice")).or(fallback),
    }
    .ok_or_else(|| fail("missing outcomePrices"))?;
    let yes_price = Probability::new(price).map_err(|e| fail(&e.to_string()))?;
    let (volume, volume_basis) = match num(rec.get("volume24hr")) {
        Some(v) => (v, VolumeBasis::Trailing24h),
        None => (
            num(rec.get("volume")).ok_or_else(|| fail("missing volume"))?,
            VolumeBasis::Total,
        ),
    };
    let liquidity = num(rec.get("liquidity")).ok_or_else(|| fail("missing liquidity"))?;
    let expiry = parse_timestamp(rec.get("endDate")).ok_or_else(|| fail("missing endDate"))?;
    let category = rec
        .get("category")
        .and_then(Value::as_str)
        .map(Category::from_label)
        .unwrap_or(Category::Other);
    let snap = MarketSnapshot {
        market_id: id.clone(),
        title,
        yes_price,
        volume_usdc: volume,
        liquidity_usdc: liquidity,
        category,
        expiry,
        observed_at: now,
        volume_basis,
    };
    snap.validate().map_err(|e| fail(&e.to_string()))?;
    Ok(Some(snap))
}

/// Parses a JSON array response from the market-metadata API.
pub fn parse_gamma_markets(
    body: &str,
    now: UnixMillis,
    basis: PriceBasis,
) -> Result<FetchOutcome, MarketDataError> {
    let value: Value =
        serde_json::from_str(body).map_err(|e| MarketDataError::Payload(e.to_string()))?;
    let Value::Array(records) = value else {
        return Err(MarketDataError::Payload("expected a JSON array".into()));
    };
    let mut out = FetchOutcome::default();
    for rec in &records {
        match gamma_record(rec, now, basis) {
            Ok(Some(s)) => out.markets.push(s),
            Ok(None) => {}
            Err(e) => {
                warn!(%e, "skipping malformed market record");
                out.errors.push(e);
            }
        }
    }
    Ok(out)
}

async fn fetch_http(source: &MarketSource, now: UnixMillis) -> Result<FetchOutcome, MarketDataError> {
    let url = format!(
        "{}/markets?active=true&closed=false&limit={}",
        source.endpoint_or_path.trim_end_matches('/'),
        source.page_limit
    );
    let client = reqwest::Client::builder()
        .timeout(source.poll_timeout)
        .build()
        .map_err(|e| MarketDataError::SourceUnavailable(e.to_string()))?;
    let resp = client
        .get(&url)
        .send()
        .await
        .map_err(|e| MarketDataError::SourceUnavailable(e.to_string()))?;
    let status = resp.status();
    if !status.is_success() {
        return Err(MarketDataError::SourceUnavailable(format!("HTTP {status} from {url}")));
    }
    let body = resp
        .text()
        .await
        .map_err(|e| MarketDataError::SourceUnavailable(e.to_string()))?;
    parse_gamma_markets(&body, now, source.price_basis)
}

fn read_fixture(path: &Path) -> Result<FetchOutcome, MarketDataError> {
    let text = std::fs::read_to_string(path).map_err(|source| MarketDataError::Fixture {
        path: path.to_owned(),
        source,
    })?;
    Ok(parse_fixture(&text))
}

/// Fetches every open binary market from `source`. Fixture sources return the
/// whole file with the recorded `observed_at`; HTTP sources stamp `now`.
pub async fn fetch_active_markets(
    source: &MarketSource,
    now: UnixMillis,
) -> Result<FetchOutcome, MarketDataError> {
    match source.kind {
        SourceKind::FixtureFile => read_fixture(Path::new(&source.endpoint_or_path)),
        SourceKind::HttpApi => fetch_http(source, now).await,
    }
}

struct FeedState {
    frames: Option<Vec<FetchOutcome>>,
    cursor: usize,
}

/// Stateful per-source poller used by the scan loop. At most one fetch is in
/// flight per feed.
///
/// Fixture files are split into frames by `observed_at`; each fetch returns
/// the next frame and the last frame repeats once the file is exhausted.
pub struct MarketFeed {
    source: MarketSource,
    state: Mutex<FeedState>,
}

impl MarketFeed {
    pub fn new(source: MarketSource) -> Result<Self, MarketDataError> {
        let frames = match source.kind {
            SourceKind::FixtureFile => Some(split_frames(read_fixture(Path::new(
                &source.endpoint_or_path,
            ))?)),
            SourceKind::HttpApi => None,
        };
        Ok(Self {
            source,
            state: Mutex::new(FeedState { frames, cursor: 0 }),
        })
    }

    pub fn source(&self) -> &MarketSource {
        &self.source
    }

    /// Recorded time of the first fixture frame; `None` for HTTP sources.
    pub async fn first_observed_at(&self) -> Option<UnixMillis> {
        let st = self.state.lock().await;
        st.frames.as_ref()?.iter().find_map(|f| f.markets.first().map(|m| m.observed_at))
    }

    pub async fn fetch(&self, now: UnixMillis) -> Result<FetchOutcome, MarketDataError> {
        let mut st = self.state.lock().await;
        if let Some(frames) = &st.frames {
            if frames.is_empty() {
                return Ok(FetchOutcome::default());
            }
            let idx = st.cursor.min(frames.len() - 1);
            let out = frames[idx].clone();
            st.cursor += 1;
            return Ok(out);
        }
        drop(st);
        match tokio::time::timeout(self.source.poll_timeout, fetch_http(&self.source, now)).await {
            Ok(r) => r,
            Err(_) => Err(MarketDataError::SourceUnavailable("poll timeout".into())),
        }
    }
}

fn split_frames(all: FetchOutcome) -> Vec<FetchOutcome> {
    let mut times: Vec<UnixMillis> = all.markets.iter().map(|m| m.observed_at).collect();
    times.sort_unstable();
    times.dedup();
    let mut frames: Vec<FetchOutcome> = times
        .iter()
        .map(|t| FetchOutcome {
            markets: all.markets.iter().filter(|m| m.observed_at == *t).cloned().collect(),
            errors: Vec::new(),
        })
        .collect();
    // parse errors are reported with the first frame only
    match frames.first_mut() {
        Some(f) => f.errors = all.errors,
        None if !all.errors.is_empty() => frames.push(FetchOutcome {
            markets: Vec::new(),
            errors: all.errors,
        }),
        None => {}
    }
    frames
}
