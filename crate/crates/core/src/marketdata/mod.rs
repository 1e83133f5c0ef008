//! Market ingestion: the exchange's market-metadata HTTP API and a
//! line-delimited JSON fixture backend for offline runs.

mod filter;
mod source;

pub use filter::{filter_markets, MarketFilter};
pub use source::{
    fetch_active_markets, parse_fixture, parse_gamma_markets, write_fixture_line, FetchOutcome,
    MarketDataError, MarketFeed, MarketSource, ParseError, PriceBasis, SourceKind,
};
