use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::time::Duration;

use parking_lot::Mutex;
use serde::Deserialize;
use tracing::warn;

use super::{realized_volatility, CexQuote, LatencyError, VolatilityEstimate};
use crate::domain::{UnixMillis, MS_PER_HOUR};

/// Rolling per-symbol spot history. Samples older than the retention window
/// are dropped on insert.
#[derive(Debug, Default)]
pub struct QuoteBook {
    retention_hours: f64,
    series: Mutex<BTreeMap<String, VecDeque<(UnixMillis, f64)>>>,
}

impl QuoteBook {
    pub fn new(retention_hours: f64) -> Self {
        Self {
            retention_hours,
            series: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn record(&self, q: &CexQuote) {
        let mut series = self.series.lock();
        let s = series.entry(q.symbol.clone()).or_default();
        if s.back().is_some_and(|(t, _)| *t >= q.observed_at) {
            return;
        }
        s.push_back((q.observed_at, q.spot));
        let cutoff = q.observed_at - (self.retention_hours * MS_PER_HOUR) as i64;
        while s.front().is_some_and(|(t, _)| *t < cutoff) {
            s.pop_front();
        }
    }

    pub fn latest(&self, symbol: &str) -> Option<CexQuote> {
        self.series.lock().get(symbol).and_then(|s| s.back()).map(|&(t, spot)| CexQuote {
            symbol: symbol.to_owned(),
            spot,
            observed_at: t,
        })
    }

    pub fn volatility(&self, symbol: &str, window_hours: f64) -> Result<VolatilityEstimate, LatencyError> {
        let series = self.series.lock();
        let s: Vec<_> = series.get(symbol).map(|s| s.iter().copied().collect()).unwrap_or_default();
        realized_volatility(symbol, &s, window_hours)
    }

    pub fn symbols(&self) -> Vec<String> {
        self.series.lock().keys().cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum QuoteSourceKind {
    /// URL template containing `{symbol}`; the response body is `{"price": ...}`.
    Http { url_template: String, timeout: Duration },
    /// Line-delimited `{symbol, spot, observed_at}` records.
    Replay { path: String },
}

#[derive(Deserialize)]
struct PriceBody {
    price: f64,
}

pub fn parse_quote_replay(text: &str) -> Result<Vec<CexQuote>, LatencyError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let q: CexQuote = serde_json::from_str(line).map_err(|e| LatencyError::Invalid(format!("line {}: {e}", i + 1)))?;
        if !(q.spot > 0.0) {
            return Err(LatencyError::Invalid(format!("line {}: spot must be positive", i + 1)));
        }
        out.push(q);
    }
    out.sort_by_key(|q| q.observed_at);
    Ok(out)
}

/// Pulls quotes into a [`QuoteBook`]. The replay backend releases every
/// record with `observed_at <= now`; the HTTP backend fetches each symbol once
/// per poll.
pub struct QuoteFeed {
    kind: QuoteSourceKind,
    pending: tokio::sync::Mutex<VecDeque<CexQuote>>,
    client: Option<reqwest::Client>,
}

impl QuoteFeed {
    pub fn new(kind: QuoteSourceKind) -> Result<Self, LatencyError> {
        let (pending, client) = match &kind {
            QuoteSourceKind::Replay { path } => {
                let text = std::fs::read_to_string(Path::new(path))
                    .map_err(|e| LatencyError::Invalid(format!("{path}: {e}")))?;
                (parse_quote_replay(&text)?.into(), None)
            }
            QuoteSourceKind::Http { .. } => (VecDeque::new(), Some(reqwest::Client::new())),
        };
        Ok(Self {
            kind,
            pending: tokio::sync::Mutex::new(pending),
            client,
        })
    }

    pub fn from_quotes(quotes: Vec<CexQuote>) -> Self {
        let mut quotes = quotes;
        quotes.sort_by_key(|q| q.observed_at);
        Self {
            kind: QuoteSourceKind::Replay { path: String::new() },
            pending: tokio::sync::Mutex::new(quotes.into()),
            client: None,
        }
    }

    /// Returns the number of quotes recorded. The internal lock keeps at most
    /// one poll in flight.
    pub async fn poll(&self, symbols: &[String], book: &QuoteBook, now: UnixMillis) -> usize {
        let mut pending = self.pending.lock().await;
        match &self.kind {
            QuoteSourceKind::Replay { .. } => {
                let mut n = 0;
                while pending.front().is_some_and(|q| q.observed_at <= now) {
                    let q = pending.pop_front().expect("front checked");
                    book.record(&q);
                    n += 1;
                }
                n
            }
            QuoteSourceKind::Http { url_template, timeout } => {
                let client = self.client.as_ref().expect("http feed has a client");
                let mut n = 0;
                for sym in symbols {
                    let url = url_template.replace("{symbol}", sym);
                    let res = tokio::time::timeout(*timeout, async {
                        client.get(&url).send().await?.error_for_status()?.json::<PriceBody>().await
                    })
                    .await;
                    match res {
                        Ok(Ok(body)) if body.price > 0.0 => {
                            book.record(&CexQuote {
                                symbol: sym.clone(),
                                spot: body.price,
                                observed_at: now,
                            });
                            n += 1;
                        }
                        Ok(Ok(body)) => warn!(symbol = %sym, price = body.price, "ignoring non-positive quote"),
                        Ok(Err(e)) => warn!(symbol = %sym, error = %e, "quote fetch failed"),
                        Err(_) => warn!(symbol = %sym, "quote fetch timed out"),
                    }
                }
                n
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn book_keeps_window_and_latest() {
        let book = QuoteBook::new(1.0);
        for i in 0..120 {
            book.record(&CexQuote {
                symbol: "BTC".into(),
                spot: 100.0 + i as f64,
                observed_at: i * 60_000,
            });
        }
        assert_eq!(book.latest("BTC").unwrap().spot, 219.0);
        let v = book.volatility("BTC", 24.0).unwrap();
        assert_eq!(v.n_samples, 61);
        assert!(book.latest("ETH").is_none());
    }

    #[test]
    fn replay_parsing_sorts_and_validates() {
        let text = "{\"symbol\":\"BTC\",\"spot\":2.0,\"observed_at\":20}\n\n{\"symbol\":\"BTC\",\"spot\":1.0,\"observed_at\":10}\n";
        let qs = parse_quote_replay(text).unwrap();
        assert_eq!(qs[0].observed_at, 10);
        assert!(parse_quote_replay("{\"symbol\":\"X\",\"spot\":0,\"observed_at\":1}").is_err());
        assert!(parse_quote_replay("nope").is_err());
    }

    #[tokio::test]
    async fn replay_releases_up_to_now() {
        let feed = QuoteFeed::from_quotes(
            (0..5)
                .map(|i| CexQuote {
                    symbol: "BTC".into(),
                    spot: 100.0,
                    observed_at: i * 1000,
                })
                .collect(),
        );
        let book = QuoteBook::new(24.0);
        assert_eq!(feed.poll(&[], &book, 2500).await, 3);
        assert_eq!(feed.poll(&[], &book, 2500).await, 0);
        assert_eq!(feed.poll(&[], &book, 10_000).await, 2);
    }
}
