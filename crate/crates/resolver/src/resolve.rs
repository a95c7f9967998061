use std::collections::HashSet;
use std::sync::Arc;

use http::header::RETRY_AFTER;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use trustnet_core::{PolicyTable, SharedPolicies};
use url::Url;

use crate::classify::{classify_redirect, ClassifyError, ExtractorRegistry, RedirectKind};
use crate::fetch::{FetchError, Fetcher};
use crate::governor::{Governor, ResponseClass};

/// Most fetches spent on one chain.
pub const DEFAULT_MAX_DEPTH: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Hop {
    pub url: Url,
    pub kind: RedirectKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ResolutionResult {
    pub final_url: Url,
    pub chain: Vec<Hop>,
    pub hops: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResolveError {
    #[error("redirect loop back to {url}")]
    LoopDetected { url: Url },
    #[error("no final page within {max_depth} fetches")]
    DepthExceeded { max_depth: usize },
    #[error("fetch {hop} failed: {cause}")]
    FetchFailed { hop: usize, cause: String },
    #[error("hop {hop}: {source}")]
    MalformedRedirect { hop: usize, source: ClassifyError },
    #[error("cannot resolve {0}: not an http(s) url")]
    InvalidUrl(String),
    #[error("hop {hop}: fetching {url} is not allowed")]
    BlockedTarget { hop: usize, url: Url },
}

impl ResolveError {
    pub fn code(&self) -> &'static str {
        match self {
            ResolveError::LoopDetected { .. } => "loop_detected",
            ResolveError::DepthExceeded { .. } => "depth_exceeded",
            ResolveError::FetchFailed { .. } => "fetch_failed",
            ResolveError::MalformedRedirect { .. } => "malformed_redirect",
            ResolveError::InvalidUrl(_) => "invalid_url",
            ResolveError::BlockedTarget { .. } => "blocked_target",
        }
    }
}

type TargetFilter = dyn Fn(&Url) -> bool + Send + Sync;

/// Follows redirect chains, pacing every fetch through the shared governor.
pub struct Resolver<F> {
    fetcher: F,
    governor: Arc<Governor>,
    policies: SharedPolicies,
    extractors: ExtractorRegistry,
    target_filter: Option<Arc<TargetFilter>>,
}

impl<F: Fetcher> Resolver<F> {
    pub fn new(fetcher: F, governor: Arc<Governor>, policies: SharedPolicies) -> Self {
        Resolver {
            fetcher,
            governor,
            policies,
            extractors: ExtractorRegistry::default(),
            target_filter: None,
        }
    }

    /// Only URLs the filter accepts are fetched; the first rejected hop ends
    /// resolution with [`ResolveError::BlockedTarget`].
    pub fn with_target_filter(
        mut self,
        allow: impl Fn(&Url) -> bool + Send + Sync + 'static,
    ) -> Self {
        self.target_filter = Some(Arc::new(allow));
        self
    }

    pub fn with_extractors(mut self, extractors: ExtractorRegistry) -> Self {
        self.extractors = extractors;
        self
    }

    pub fn governor(&self) -> &Arc<Governor> {
        &self.governor
    }

    /// Fetches `url` and each redirect target in turn until a page that does
    /// not redirect. At most `max_depth` fetches are made.
    pub async fn resolve(
        &self,
        url: &Url,
        max_depth: usize,
    ) -> Result<ResolutionResult, ResolveError> {
        let policies = self.policies.current();
        let key_of = |u: &Url, table: &PolicyTable| {
            table
                .canonicalize(u)
                .map_err(|_| ResolveError::InvalidUrl(u.to_string()))
        };
        let mut seen = HashSet::from([key_of(url, &policies)?]);
        let mut chain: Vec<Hop> = Vec::new();
        let mut current = url.clone();

        loop {
            if chain.len() >= max_depth {
                return Err(ResolveError::DepthExceeded { max_depth });
            }
            let hop = chain.len();
            if self
                .target_filter
                .as_ref()
                .is_some_and(|allow| !allow(&current))
            {
                return Err(ResolveError::BlockedTarget { hop, url: current });
            }
            let domain = current.host_str().unwrap_or_default().to_ascii_lowercase();

            self.governor.acquire(&domain).await;
            let fetched = self
                .fetcher
                .fetch(&current)
                .await
                .map_err(|e: FetchError| ResolveError::FetchFailed {
                    hop,
                    cause: e.to_string(),
                })?;
            let retry_after = fetched
                .headers
                .get(RETRY_AFTER)
                .and_then(|v| v.to_str().ok());
            let class = ResponseClass::from_status(fetched.status, retry_after);
            self.governor.record(&domain, class);
            if let ResponseClass::RateLimited { .. } = class {
                return Err(ResolveError::FetchFailed {
                    hop,
                    cause: format!("rate limited ({})", fetched.status),
                });
            }

            let kind = classify_redirect(
                fetched.status,
                &fetched.headers,
                Some(&fetched.body),
                &current,
                &self.extractors,
            )
            .map_err(|source| ResolveError::MalformedRedirect { hop, source })?;
            let next = kind.target().cloned();
            tracing::debug!(hop, url = %current, status = fetched.status, ?kind, "resolved hop");
            chain.push(Hop {
                url: current.clone(),
                kind,
            });
            match next {
                None => {
                    return Ok(ResolutionResult {
                        final_url: current,
                        hops: chain.len() - 1,
                        chain,
                    })
                }
                Some(target) => {
                    if !seen.insert(key_of(&target, &policies)?) {
                        return Err(ResolveError::LoopDetected { url: target });
                    }
                    current = target;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fetch::Fetched;
    use crate::governor::AimdConfig;
    use http::{header, HeaderMap, HeaderValue};
    use std::collections::HashMap;
    use std::sync::Mutex;

    /// In-memory fetcher: path → (status, location, body).
    #[derive(Default)]
    struct Table {
        routes: HashMap<String, (u16, Option<String>, String)>,
        hits: Mutex<Vec<String>>,
    }

    impl Table {
        fn route(mut self, url: &str, status: u16, location: Option<&str>, body: &str) -> Self {
            self.routes.insert(
                url.to_string(),
                (status, location.map(String::from), body.to_string()),
            );
            self
        }
    }

    impl Fetcher for Table {
        async fn fetch(&self, url: &Url) -> Result<Fetched, FetchError> {
            self.hits.lock().unwrap().push(url.to_string());
            let (status, location, body) = self
                .routes
                .get(url.as_str())
                .cloned()
                .ok_or_else(|| FetchError::Connect(format!("no route {url}")))?;
            let mut headers = HeaderMap::new();
            if let Some(loc) = location {
                headers.insert(header::LOCATION, HeaderValue::from_str(&loc).unwrap());
            }
            Ok(Fetched {
                status,
                headers,
                body: body.into_bytes(),
            })
        }
    }

    fn resolver(table: Table) -> Resolver<Table> {
        let governor = Arc::new(Governor::new(AimdConfig {
            initial_rate: 8.0,
            ..AimdConfig::default()
        }));
        Resolver::new(table, governor, SharedPolicies::default())
    }

    fn url(s: &str) -> Url {
        Url::parse(s).unwrap()
    }

    #[tokio::test(start_paused = true)]
    async fn follows_http_chain() {
        let r = resolver(
            Table::default()
                .route("https://a.ex/a", 301, Some("/b"), "")
                .route("https://a.ex/b", 302, Some("https://c.ex/c"), "")
                .route("https://c.ex/c", 200, None, "<p>hi</p>"),
        );
        let res = r.resolve(&url("https://a.ex/a"), 10).await.unwrap();
        assert_eq!(res.final_url.as_str(), "https://c.ex/c");
        assert_eq!(res.hops, 2);
        assert_eq!(res.chain.last().unwrap().kind, RedirectKind::Terminal);
    }

    #[tokio::test(start_paused = true)]
    async fn loop_detected_on_canonical_repeat() {
        let r = resolver(
            Table::default()
                .route("https://a.ex/l1", 301, Some("/l2"), "")
                // same page as /l1 once canonicalized
                .route(
                    "https://a.ex/l2",
                    301,
                    Some("http://A.ex/l1/?utm_source=x"),
                    "",
                ),
        );
        let err = r.resolve(&url("https://a.ex/l1"), 10).await.unwrap_err();
        assert!(matches!(err, ResolveError::LoopDetected { .. }), "{err:?}");
        assert_eq!(r.fetcher.hits.lock().unwrap().len(), 2);
    }

    #[tokio::test(start_paused = true)]
    async fn depth_bound_counts_fetches() {
        let mut table = Table::default();
        for i in 0..12 {
            table = table.route(
                &format!("https://a.ex/{i}"),
                301,
                Some(&format!("/{}", i + 1)),
                "",
            );
        }
        table = table.route("https://a.ex/12", 200, None, "");
        let r = resolver(table);
        let err = r.resolve(&url("https://a.ex/0"), 10).await.unwrap_err();
        assert_eq!(err, ResolveError::DepthExceeded { max_depth: 10 });
        assert_eq!(r.fetcher.hits.lock().unwrap().len(), 10);
        // 9 hops fit in 10 fetches
        let ok = r.resolve(&url("https://a.ex/3"), 10).await.unwrap();
        assert_eq!(ok.hops, 9);
    }

    #[tokio::test(start_paused = true)]
    async fn fetch_errors_and_rate_limits_fail_the_hop() {
        let r = resolver(
            Table::default()
                .route("https://a.ex/a", 301, Some("/missing"), "")
                .route("https://b.ex/x", 429, None, ""),
        );
        let err = r.resolve(&url("https://a.ex/a"), 10).await.unwrap_err();
        assert!(
            matches!(err, ResolveError::FetchFailed { hop: 1, .. }),
            "{err:?}"
        );
        let err = r.resolve(&url("https://b.ex/x"), 10).await.unwrap_err();
        assert!(
            matches!(err, ResolveError::FetchFailed { hop: 0, .. }),
            "{err:?}"
        );
        assert_eq!(r.governor().state("b.ex").unwrap().rate_per_sec, 4.0);
    }

    #[tokio::test(start_paused = true)]
    async fn malformed_redirect_reported() {
        let r = resolver(Table::default().route("https://a.ex/a", 302, None, ""));
        let err = r.resolve(&url("https://a.ex/a"), 10).await.unwrap_err();
        assert!(matches!(
            err,
            ResolveError::MalformedRedirect { hop: 0, .. }
        ));
    }

    #[tokio::test(start_paused = true)]
    async fn target_filter_stops_the_chain() {
        let r = resolver(
            Table::default()
                .route("https://a.ex/a", 301, Some("https://internal.ex/admin"), "")
                .route("https://internal.ex/admin", 200, None, ""),
        )
        .with_target_filter(|u| u.host_str() != Some("internal.ex"));
        let err = r.resolve(&url("https://a.ex/a"), 10).await.unwrap_err();
        assert!(
            matches!(err, ResolveError::BlockedTarget { hop: 1, .. }),
            "{err:?}"
        );
        assert_eq!(r.fetcher.hits.lock().unwrap().len(), 1);
    }

    #[tokio::test]
    async fn rejects_non_http_start() {
        let r = resolver(Table::default());
        let err = r.resolve(&url("ftp://a.ex/a"), 10).await.unwrap_err();
        assert!(matches!(err, ResolveError::InvalidUrl(_)));
    }
}
