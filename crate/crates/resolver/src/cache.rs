//! Original → target link mappings shared between clients.
//!
//! Clients that follow a redirect chain report the mapping; later visitors ask
//! for it instead of fetching. Mappings nobody has asked about for longer
//! than the TTL are evicted.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::RwLock;

use chrono::{DateTime, Duration};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use trustnet_core::{Timestamp, UrlKey};

pub const DEFAULT_MAPPING_TTL: Duration = Duration::days(7);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RedirectMapping {
    pub original_key: UrlKey,
    pub target_key: UrlKey,
    pub created_at: Timestamp,
    pub last_requested_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CacheError {
    #[error("mapping from {0} to itself")]
    InvalidMapping(UrlKey),
    #[error("storage: {0}")]
    Storage(String),
}

/// Storage for redirect mappings. Implemented in memory here and durably by
/// the store crate.
pub trait MappingStore: Send + Sync {
    /// Inserts or replaces the mapping for `original`; the latest target wins.
    /// `last_requested_at` is set to `now`.
    fn put(
        &self,
        original: &UrlKey,
        target: &UrlKey,
        now: Timestamp,
    ) -> Result<RedirectMapping, CacheError>;

    /// Targets for the originals that have a mapping. Every hit's
    /// `last_requested_at` is advanced to `now`.
    fn get_many(
        &self,
        originals: &[UrlKey],
        now: Timestamp,
    ) -> Result<BTreeMap<UrlKey, UrlKey>, CacheError>;

    /// Removes mappings with `now - last_requested_at > ttl`; returns how many.
    fn evict(&self, now: Timestamp, ttl: Duration) -> Result<usize, CacheError>;

    /// Reads a mapping without touching it.
    fn inspect(&self, original: &UrlKey) -> Result<Option<RedirectMapping>, CacheError>;
}

#[derive(Debug)]
struct Entry {
    target: UrlKey,
    created_at: Timestamp,
    last_requested_ms: AtomicI64,
}

impl Entry {
    fn to_mapping(&self, original: &UrlKey) -> RedirectMapping {
        let ms = self.last_requested_ms.load(Ordering::Acquire);
        RedirectMapping {
            original_key: original.clone(),
            target_key: self.target.clone(),
            created_at: self.created_at,
            last_requested_at: DateTime::from_timestamp_millis(ms).unwrap_or(self.created_at),
        }
    }
}

/// In-memory mapping cache. Lookups share a read lock and touch entries
/// atomically, so concurrent `get_many` calls never block each other.
#[derive(Debug, Default)]
pub struct MemoryMappingCache {
    entries: RwLock<HashMap<UrlKey, Entry>>,
}

impl MemoryMappingCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl MappingStore for MemoryMappingCache {
    fn put(
        &self,
        original: &UrlKey,
        target: &UrlKey,
        now: Timestamp,
    ) -> Result<RedirectMapping, CacheError> {
        if original == target {
            return Err(CacheError::InvalidMapping(original.clone()));
        }
        let mut entries = self.entries.write().expect("cache lock poisoned");
        let created_at = match entries.get(original) {
            Some(prev) if prev.target == *target => prev.created_at.min(now),
            _ => now,
        };
        let entry = Entry {
            target: target.clone(),
            created_at,
            last_requested_ms: AtomicI64::new(now.timestamp_millis()),
        };
        let mapping = entry.to_mapping(original);
        entries.insert(original.clone(), entry);
        Ok(mapping)
    }

    fn get_many(
        &self,
        originals: &[UrlKey],
        now: Timestamp,
    ) -> Result<BTreeMap<UrlKey, UrlKey>, CacheError> {
        let entries = self.entries.read().expect("cache lock poisoned");
        let now_ms = now.timestamp_millis();
        Ok(originals
            .iter()
            .filter_map(|k| {
                let entry = entries.get(k)?;
                entry.last_requested_ms.fetch_max(now_ms, Ordering::AcqRel);
                Some((k.clone(), entry.target.clone()))
            })
            .collect())
    }

    fn evict(&self, now: Timestamp, ttl: Duration) -> Result<usize, CacheError> {
        let cutoff = (now - ttl).timestamp_millis();
        let mut entries = self.entries.write().expect("cache lock poisoned");
        let before = entries.len();
        entries.retain(|_, e| e.last_requested_ms.load(Ordering::Acquire) >= cutoff);
        Ok(before - entries.len())
    }

    fn inspect(&self, original: &UrlKey) -> Result<Option<RedirectMapping>, CacheError> {
        let entries = self.entries.read().expect("cache lock poisoned");
        Ok(entries.get(original).map(|e| e.to_mapping(original)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};

    fn k(s: &str) -> UrlKey {
        UrlKey::from_canonical(format!("https://{s}"))
    }

    fn t(secs: i64) -> Timestamp {
        Utc.timestamp_opt(1_700_000_000 + secs, 0).unwrap()
    }

    #[test]
    fn put_get_and_latest_wins() {
        let c = MemoryMappingCache::new();
        c.put(&k("t.co/1"), &k("a.ex/x"), t(0)).unwrap();
        c.put(&k("t.co/1"), &k("b.ex/y"), t(5)).unwrap();
        let got = c.get_many(&[k("t.co/1"), k("t.co/2")], t(6)).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[&k("t.co/1")], k("b.ex/y"));
        assert!(c.get_many(&[], t(6)).unwrap().is_empty());
    }

    #[test]
    fn self_mapping_rejected() {
        let c = MemoryMappingCache::new();
        assert_eq!(
            c.put(&k("a.ex"), &k("a.ex"), t(0)),
            Err(CacheError::InvalidMapping(k("a.ex")))
        );
    }

    #[test]
    fn get_touches_hits_only() {
        let c = MemoryMappingCache::new();
        c.put(&k("o/1"), &k("t/1"), t(0)).unwrap();
        c.put(&k("o/2"), &k("t/2"), t(0)).unwrap();
        c.get_many(&[k("o/1")], t(100)).unwrap();
        assert_eq!(
            c.inspect(&k("o/1")).unwrap().unwrap().last_requested_at,
            t(100)
        );
        assert_eq!(
            c.inspect(&k("o/2")).unwrap().unwrap().last_requested_at,
            t(0)
        );
        // a lookup with an older clock never moves the timestamp back
        c.get_many(&[k("o/1")], t(50)).unwrap();
        assert_eq!(
            c.inspect(&k("o/1")).unwrap().unwrap().last_requested_at,
            t(100)
        );
    }

    #[test]
    fn evicts_stale_only() {
        let day = 86_400;
        let c = MemoryMappingCache::new();
        c.put(&k("old"), &k("x"), t(0)).unwrap();
        c.put(&k("fresh"), &k("y"), t(10 * day - 3600)).unwrap();
        let n = c.evict(t(10 * day), DEFAULT_MAPPING_TTL).unwrap();
        assert_eq!(n, 1);
        assert!(c.inspect(&k("old")).unwrap().is_none());
        assert!(c.inspect(&k("fresh")).unwrap().is_some());
    }

    #[test]
    fn exactly_ttl_old_is_kept() {
        let c = MemoryMappingCache::new();
        c.put(&k("edge"), &k("x"), t(0)).unwrap();
        assert_eq!(c.evict(t(7 * 86_400), DEFAULT_MAPPING_TTL).unwrap(), 0);
        assert_eq!(c.evict(t(7 * 86_400 + 1), DEFAULT_MAPPING_TTL).unwrap(), 1);
    }
}
