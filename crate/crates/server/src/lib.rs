//! HTTP API over the store, the per-viewer rules and the link resolver.
//!
//! Handlers load a store snapshot scoped to the pages a request touches and
//! evaluate it with the core rules, so every status and visibility answer is
//! exactly what the core computes for that snapshot.

pub mod auth;
pub mod error;
pub mod routes;

use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use axum::Router;
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::task::JoinHandle;
use tower_http::trace::TraceLayer;
use trustnet_core::{PolicyTable, SharedPolicies, Timestamp};
use trustnet_resolver::{
    AimdConfig, Governor, HttpFetcher, HttpFetcherConfig, MappingStore, Resolver, DEFAULT_MAX_DEPTH,
};
use trustnet_store::{Store, StoreError};

use crate::error::ApiError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Most URLs accepted by one status, link-status or mapping call.
pub const BATCH_CAP: usize = 200;

pub type Clock = Arc<dyn Fn() -> Timestamp + Send + Sync>;

#[derive(Debug, Clone)]
pub struct Settings {
    pub max_depth: usize,
    pub mapping_ttl: chrono::Duration,
    pub session_ttl: chrono::Duration,
    /// Lets server-side resolution fetch loopback and private addresses.
    /// Off in production; tests point it at local fixtures.
    pub allow_private_targets: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            max_depth: DEFAULT_MAX_DEPTH,
            mapping_ttl: trustnet_resolver::DEFAULT_MAPPING_TTL,
            session_ttl: chrono::Duration::days(30),
            allow_private_targets: false,
        }
    }
}

struct Inner {
    store: Arc<Store>,
    policies: SharedPolicies,
    resolver: Resolver<HttpFetcher>,
    settings: Settings,
    clock: Clock,
}

/// Shared handler state; cheap to clone.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    pub fn new(
        store: Arc<Store>,
        policies: SharedPolicies,
        resolver: Resolver<HttpFetcher>,
        settings: Settings,
    ) -> Self {
        Self::with_clock(
            store,
            policies,
            resolver,
            settings,
            Arc::new(chrono::Utc::now),
        )
    }

    pub fn with_clock(
        store: Arc<Store>,
        policies: SharedPolicies,
        resolver: Resolver<HttpFetcher>,
        settings: Settings,
        clock: Clock,
    ) -> Self {
        AppState {
            inner: Arc::new(Inner {
                store,
                policies,
                resolver,
                settings,
                clock,
            }),
        }
    }

    pub fn now(&self) -> Timestamp {
        (self.inner.clock)()
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.inner.store
    }

    pub fn policies(&self) -> PolicyTableRef {
        self.inner.policies.current()
    }

    pub fn shared_policies(&self) -> &SharedPolicies {
        &self.inner.policies
    }

    pub fn resolver(&self) -> &Resolver<HttpFetcher> {
        &self.inner.resolver
    }

    pub fn settings(&self) -> &Settings {
        &self.inner.settings
    }

    /// Runs blocking store work off the async workers.
    pub async fn with_store<T, F>(&self, f: F) -> Result<T, ApiError>
    where
        T: Send + 'static,
        F: FnOnce(&Store) -> Result<T, StoreError> + Send + 'static,
    {
        let store = self.inner.store.clone();
        tokio::task::spawn_blocking(move || f(&store))
            .await
            .map_err(|e| ApiError::internal(format!("store task failed: {e}")))?
            .map_err(ApiError::from)
    }
}

pub type PolicyTableRef = Arc<PolicyTable>;

/// False for URLs naming loopback, private, link-local or unspecified
/// addresses, or `localhost`. Hostnames that merely resolve to such addresses
/// are not caught here.
pub fn is_public_target(url: &url::Url) -> bool {
    match url.host() {
        Some(url::Host::Ipv4(ip)) => {
            !(ip.is_loopback()
                || ip.is_private()
                || ip.is_link_local()
                || ip.is_unspecified()
                || ip.is_broadcast())
        }
        Some(url::Host::Ipv6(ip)) => {
            let first = ip.segments()[0];
            let unique_local = first & 0xfe00 == 0xfc00;
            let link_local = first & 0xffc0 == 0xfe80;
            let mapped_private = ip.to_ipv4_mapped().is_some_and(|v4| {
                v4.is_loopback() || v4.is_private() || v4.is_link_local() || v4.is_unspecified()
            });
            !(ip.is_loopback()
                || ip.is_unspecified()
                || unique_local
                || link_local
                || mapped_private)
        }
        Some(url::Host::Domain(d)) => {
            let d = d.trim_end_matches('.').to_ascii_lowercase();
            d != "localhost" && !d.ends_with(".localhost")
        }
        None => false,
    }
}

pub fn router(state: AppState) -> Router {
    routes::routes()
        .with_state(state)
        .layer(TraceLayer::new_for_http())
}

/// Everything needed to run the service.
#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub bind: IpAddr,
    /// 0 picks a free port.
    pub port: u16,
    /// `None` keeps everything in memory.
    pub db_path: Option<PathBuf>,
    pub policy_file: Option<PathBuf>,
    pub settings: Settings,
    pub fetcher: HttpFetcherConfig,
    pub aimd: AimdConfig,
    /// How often stale mappings and expired sessions are purged and learned
    /// domain rates are saved.
    pub maintenance_interval: Duration,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: 8080,
            db_path: None,
            policy_file: None,
            settings: Settings::default(),
            fetcher: HttpFetcherConfig::default(),
            aimd: AimdConfig::default(),
            maintenance_interval: Duration::from_secs(3600),
        }
    }
}

pub fn load_policies(path: Option<&PathBuf>) -> anyhow::Result<SharedPolicies> {
    let table = match path {
        None => PolicyTable::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading policy file {}", p.display()))?;
            PolicyTable::from_config(&text)
                .with_context(|| format!("policy file {}", p.display()))?
        }
    };
    Ok(SharedPolicies::new(table))
}

/// A started service. Dropping it does not stop it; call [`RunningServer::shutdown`].
pub struct RunningServer {
    pub addr: SocketAddr,
    pub state: AppState,
    stop: watch::Sender<bool>,
    task: JoinHandle<std::io::Result<()>>,
}

impl RunningServer {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stops accepting connections, lets in-flight requests finish, and
    /// saves learned domain rates.
    pub async fn shutdown(self) -> anyhow::Result<()> {
        let _ = self.stop.send(true);
        self.task.await.context("server task")??;
        persist_rates(&self.state);
        Ok(())
    }

    /// Resolves when the server stops for any reason.
    pub async fn wait(self) -> anyhow::Result<()> {
        let state = self.state.clone();
        let result = self.task.await.context("server task")?;
        persist_rates(&state);
        Ok(result?)
    }

    pub fn stop_handle(&self) -> watch::Sender<bool> {
        self.stop.clone()
    }
}

fn persist_rates(state: &AppState) {
    let rates = state.resolver().governor().snapshot();
    if let Err(e) = state.store().save_domain_rates(&rates) {
        tracing::warn!(error = %e, "could not save domain rates");
    }
}

fn maintenance(state: &AppState) {
    let now = state.now();
    match state.store().evict(now, state.settings().mapping_ttl) {
        Ok(n) if n > 0 => tracing::info!(evicted = n, "evicted stale link mappings"),
        Ok(_) => {}
        Err(e) => tracing::warn!(error = %e, "mapping eviction failed"),
    }
    if let Err(e) = state.store().purge_sessions(now) {
        tracing::warn!(error = %e, "session purge failed");
    }
    persist_rates(state);
}

/// Opens the store, binds the port and starts serving in the background.
pub async fn start(config: ServerConfig) -> anyhow::Result<RunningServer> {
    let store = match &config.db_path {
        Some(path) => {
            Store::open(path).with_context(|| format!("opening database {}", path.display()))?
        }
        None => Store::open_in_memory().context("opening in-memory database")?,
    };
    let store = Arc::new(store);
    let policies = load_policies(config.policy_file.as_ref())?;

    let governor = Arc::new(Governor::new(config.aimd.clone()));
    governor.restore(store.load_domain_rates().context("loading domain rates")?);
    let fetcher = HttpFetcher::new(config.fetcher.clone()).context("building HTTP client")?;
    let mut resolver = Resolver::new(fetcher, governor, policies.clone());
    if !config.settings.allow_private_targets {
        resolver = resolver.with_target_filter(is_public_target);
    }
    let state = AppState::new(store, policies, resolver, config.settings.clone());

    let addr = SocketAddr::new(config.bind, config.port);
    let listener = TcpListener::bind(addr)
        .await
        .with_context(|| format!("cannot listen on {addr}"))?;
    let addr = listener.local_addr()?;
    tracing::info!(%addr, version = VERSION, "listening");

    let (stop, mut stopped) = watch::channel(false);
    let app = router(state.clone());

    let tick_state = state.clone();
    let mut tick_stop = stop.subscribe();
    let interval = config.maintenance_interval;
    tokio::spawn(async move {
        let mut ticker = tokio::time::interval(interval);
        ticker.tick().await;
        loop {
            tokio::select! {
                _ = ticker.tick() => {
                    let s = tick_state.clone();
                    let _ = tokio::task::spawn_blocking(move || maintenance(&s)).await;
                }
                _ = tick_stop.changed() => break,
            }
        }
    });

    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                let _ = stopped.wait_for(|v| *v).await;
            })
            .await
    });
    Ok(RunningServer {
        addr,
        state,
        stop,
        task,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn private_targets() {
        for u in [
            "http://127.0.0.1:8080/x",
            "http://10.1.2.3/",
            "http://[::1]/",
            "http://localhost/",
            "http://a.localhost./",
            "http://169.254.169.254/latest",
            "http://[fd00::1]/",
        ] {
            assert!(!is_public_target(&url::Url::parse(u).unwrap()), "{u}");
        }
        for u in [
            "https://example.com/",
            "http://93.184.216.34/",
            "http://[2606:4700::1]/",
        ] {
            assert!(is_public_target(&url::Url::parse(u).unwrap()), "{u}");
        }
    }
}
