use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::RwLock;
use sha2::{Digest, Sha256};

use super::AgentPrediction;
use crate::domain::{MarketSnapshot, UnixMillis};

pub const DEFAULT_CACHE_TTL_SECS: u64 = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CacheKey([u8; 32]);

impl CacheKey {
    /// Keyed on persona, market id and a digest of title, expiry and category.
    /// Price is deliberately excluded.
    pub fn new(persona_id: &str, market: &MarketSnapshot) -> Self {
        let mut info = Sha256::new();
        info.update(market.title.as_bytes());
        info.update([0]);
        info.update(market.expiry.to_le_bytes());
        info.update(market.category.as_str().as_bytes());
        let digest = info.finalize();

        let mut h = Sha256::new();
        h.update(persona_id.as_bytes());
        h.update([0]);
        h.update(market.market_id.as_bytes());
        h.update([0]);
        h.update(digest);
        Self(h.finalize().into())
    }
}

#[derive(Debug, Clone)]
pub struct CacheEntry {
    pub key: CacheKey,
    pub response: AgentPrediction,
    pub expires_at: UnixMillis,
}

/// TTL cache of agent predictions, safe for concurrent use.
#[derive(Debug)]
pub struct ResponseCache {
    ttl_ms: i64,
    entries: RwLock<HashMap<CacheKey, CacheEntry>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl ResponseCache {
    pub fn new(ttl_secs: u64) -> Self {
        Self {
            ttl_ms: (ttl_secs as i64).saturating_mul(1000),
            entries: RwLock::new(HashMap::new()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    /// Served only while `now < expires_at`.
    pub fn get(&self, key: &CacheKey, now: UnixMillis) -> Option<AgentPrediction> {
        let found = self
            .entries
            .read()
            .get(key)
            .filter(|e| now < e.expires_at)
            .map(|e| e.response.clone());
        match found {
            Some(_) => self.hits.fetch_add(1, Ordering::Relaxed),
            None => self.misses.fetch_add(1, Ordering::Relaxed),
        };
        found
    }

    pub fn insert(&self, key: CacheKey, response: AgentPrediction, now: UnixMillis) {
        let entry = CacheEntry {
            key,
            response,
            expires_at: now.saturating_add(self.ttl_ms),
        };
        self.entries.write().insert(key, entry);
    }

    /// Drops expired entries; returns how many were removed.
    pub fn purge_expired(&self, now: UnixMillis) -> usize {
        let mut map = self.entries.write();
        let before = map.len();
        map.retain(|_, e| now < e.expires_at);
        before - map.len()
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Category, Probability};

    fn market(price: f64) -> MarketSnapshot {
        MarketSnapshot {
            market_id: "m1".into(),
            title: "Q".into(),
            yes_price: Probability::new(price).unwrap(),
            volume_usdc: 1.0,
            liquidity_usdc: 1.0,
            category: Category::Sports,
            expiry: 1000,
            observed_at: 0,
            volume_basis: Default::default(),
        }
    }

    fn pred() -> AgentPrediction {
        AgentPrediction {
            persona_id: "p".into(),
            market_id: "m1".into(),
            probability: Probability::new(0.4).unwrap(),
            confidence: 0.5,
            reasoning: "r".into(),
            provider_id: "sim".into(),
            latency_ms: 0.0,
            created_at: 0,
        }
    }

    #[test]
    fn never_served_at_or_after_expiry() {
        let cache = ResponseCache::new(300);
        let key = CacheKey::new("p", &market(0.4));
        cache.insert(key, pred(), 1_000);
        assert!(cache.get(&key, 1_000).is_some());
        assert!(cache.get(&key, 300_999).is_some());
        assert!(cache.get(&key, 301_000).is_none());
        assert!(cache.get(&key, 1_000_000).is_none());
        assert_eq!(cache.purge_expired(301_000), 1);
        assert!(cache.is_empty());
    }

    #[test]
    fn key_ignores_price_but_not_title() {
        let a = CacheKey::new("p", &market(0.4));
        let b = CacheKey::new("p", &market(0.9));
        assert_eq!(a, b);
        let mut m = market(0.4);
        m.title = "Other".into();
        assert_ne!(a, CacheKey::new("p", &m));
        assert_ne!(a, CacheKey::new("q", &market(0.4)));
    }
}
