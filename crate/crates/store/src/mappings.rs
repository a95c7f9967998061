//! Durable redirect mappings.

use std::collections::BTreeMap;

use chrono::Duration;
use rusqlite::{params, OptionalExtension, TransactionBehavior};
use trustnet_core::{Timestamp, UrlKey};
use trustnet_resolver::{CacheError, MappingStore, RedirectMapping};

use crate::{Store, StoreError};

fn storage(e: impl Into<StoreError>) -> CacheError {
    CacheError::Storage(e.into().to_string())
}

pub(crate) fn mapping_row(r: &rusqlite::Row<'_>) -> rusqlite::Result<RedirectMapping> {
    Ok(RedirectMapping {
        original_key: UrlKey::from_canonical(r.get::<_, String>(0)?),
        target_key: UrlKey::from_canonical(r.get::<_, String>(1)?),
        created_at: r.get(2)?,
        last_requested_at: r.get(3)?,
    })
}

impl MappingStore for Store {
    fn put(
        &self,
        original: &UrlKey,
        target: &UrlKey,
        now: Timestamp,
    ) -> Result<RedirectMapping, CacheError> {
        if original == target {
            return Err(CacheError::InvalidMapping(original.clone()));
        }
        let conn = self.lock().map_err(storage)?;
        conn.query_row(
            "INSERT INTO redirect_mappings (original_key, target_key, created_at, last_requested_at)
             VALUES (?1, ?2, ?3, ?3)
             ON CONFLICT(original_key) DO UPDATE SET
                 created_at = CASE WHEN target_key = excluded.target_key
                                   THEN min(created_at, excluded.created_at) ELSE excluded.created_at END,
                 target_key = excluded.target_key,
                 last_requested_at = excluded.last_requested_at
             RETURNING original_key, target_key, created_at, last_requested_at",
            params![original.as_str(), target.as_str(), now],
            mapping_row,
        )
        .map_err(storage)
    }

    fn get_many(
        &self,
        originals: &[UrlKey],
        now: Timestamp,
    ) -> Result<BTreeMap<UrlKey, UrlKey>, CacheError> {
        let mut conn = self.lock().map_err(storage)?;
        let tx = conn
            .transaction_with_behavior(TransactionBehavior::Immediate)
            .map_err(storage)?;
        let mut hits = BTreeMap::new();
        {
            let mut select = tx
                .prepare_cached("SELECT target_key FROM redirect_mappings WHERE original_key = ?1")
                .map_err(storage)?;
            let mut touch = tx
                .prepare_cached(
                    "UPDATE redirect_mappings SET last_requested_at = ?2
                     WHERE original_key = ?1 AND last_requested_at < ?2",
                )
                .map_err(storage)?;
            for key in originals {
                let target: Option<String> = select
                    .query_row([key.as_str()], |r| r.get(0))
                    .optional()
                    .map_err(storage)?;
                if let Some(target) = target {
                    touch.execute(params![key.as_str(), now]).map_err(storage)?;
                    hits.insert(key.clone(), UrlKey::from_canonical(target));
                }
            }
        }
        tx.commit().map_err(storage)?;
        Ok(hits)
    }

    fn evict(&self, now: Timestamp, ttl: Duration) -> Result<usize, CacheError> {
        let conn = self.lock().map_err(storage)?;
        conn.execute(
            "DELETE FROM redirect_mappings WHERE last_requested_at < ?1",
            [now - ttl],
        )
        .map_err(storage)
    }

    fn inspect(&self, original: &UrlKey) -> Result<Option<RedirectMapping>, CacheError> {
        let conn = self.lock().map_err(storage)?;
        conn.query_row(
            "SELECT original_key, target_key, created_at, last_requested_at FROM redirect_mappings
             WHERE original_key = ?1",
            [original.as_str()],
            mapping_row,
        )
        .optional()
        .map_err(storage)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tests::at;

    fn k(s: &str) -> UrlKey {
        UrlKey::from_canonical(format!("https://{s}"))
    }

    #[test]
    fn put_get_evict() {
        let store = Store::open_in_memory().unwrap();
        store.put(&k("t.co/a"), &k("x.example/1"), at(0)).unwrap();
        store.put(&k("t.co/b"), &k("x.example/2"), at(0)).unwrap();
        let m = store.put(&k("t.co/a"), &k("x.example/3"), at(10)).unwrap();
        assert_eq!(m.created_at, at(10));
        assert_eq!(
            store.put(&k("t.co/a"), &k("t.co/a"), at(10)),
            Err(CacheError::InvalidMapping(k("t.co/a")))
        );

        let hits = store
            .get_many(&[k("t.co/a"), k("t.co/zzz")], at(86_400))
            .unwrap();
        assert_eq!(hits, BTreeMap::from([(k("t.co/a"), k("x.example/3"))]));
        assert_eq!(
            store
                .inspect(&k("t.co/a"))
                .unwrap()
                .unwrap()
                .last_requested_at,
            at(86_400)
        );
        assert_eq!(
            store
                .inspect(&k("t.co/b"))
                .unwrap()
                .unwrap()
                .last_requested_at,
            at(0)
        );

        let evicted = store.evict(at(8 * 86_400), Duration::days(7)).unwrap();
        assert_eq!(evicted, 1);
        assert!(store.inspect(&k("t.co/b")).unwrap().is_none());
        assert!(store.inspect(&k("t.co/a")).unwrap().is_some());
    }

    #[test]
    fn same_target_put_keeps_creation_time() {
        let store = Store::open_in_memory().unwrap();
        store.put(&k("t.co/a"), &k("x.example/1"), at(0)).unwrap();
        let m = store.put(&k("t.co/a"), &k("x.example/1"), at(50)).unwrap();
        assert_eq!((m.created_at, m.last_requested_at), (at(0), at(50)));
    }
}
