//! Outbound GETs for redirect resolution.

use std::future::Future;
use std::net::SocketAddr;
use std::time::Duration;

use http::HeaderMap;
use thiserror::Error;
use url::Url;

pub const USER_AGENT: &str = concat!(
    "trustnet-link-resolver/",
    env!("CARGO_PKG_VERSION"),
    " (follows shared links to find the page they point to)"
);

pub const DEFAULT_FETCH_TIMEOUT: Duration = Duration::from_secs(10);
pub const DEFAULT_BODY_CAP: usize = 512 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FetchError {
    #[error("timed out after {0:?}")]
    Timeout(Duration),
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone)]
pub struct Fetched {
    pub status: u16,
    pub headers: HeaderMap,
    /// At most the configured body cap; truncated silently beyond it.
    pub body: Vec<u8>,
}

/// Performs one GET without following redirects.
pub trait Fetcher: Send + Sync {
    fn fetch(&self, url: &Url) -> impl Future<Output = Result<Fetched, FetchError>> + Send;
}

#[derive(Debug, Clone)]
pub struct HttpFetcherConfig {
    pub timeout: Duration,
    pub body_cap: usize,
    pub user_agent: String,
    /// Pins hostnames to fixed addresses (used to point real hostnames at
    /// local fixtures).
    pub resolve_overrides: Vec<(String, SocketAddr)>,
}

impl Default for HttpFetcherConfig {
    fn default() -> Self {
        HttpFetcherConfig {
            timeout: DEFAULT_FETCH_TIMEOUT,
            body_cap: DEFAULT_BODY_CAP,
            user_agent: USER_AGENT.to_string(),
            resolve_overrides: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct HttpFetcher {
    client: reqwest::Client,
    timeout: Duration,
    body_cap: usize,
}

impl HttpFetcher {
    pub fn new(config: HttpFetcherConfig) -> Result<Self, FetchError> {
        let mut builder = reqwest::Client::builder()
            .redirect(reqwest::redirect::Policy::none())
            .user_agent(config.user_agent)
            .timeout(config.timeout)
            .connect_timeout(config.timeout);
        for (host, addr) in &config.resolve_overrides {
            builder = builder.resolve(host, *addr);
        }
        let client = builder
            .build()
            .map_err(|e| FetchError::Other(e.to_string()))?;
        Ok(HttpFetcher {
            client,
            timeout: config.timeout,
            body_cap: config.body_cap,
        })
    }

    fn map_err(&self, e: reqwest::Error) -> FetchError {
        if e.is_timeout() {
            FetchError::Timeout(self.timeout)
        } else if e.is_connect() {
            FetchError::Connect(e.to_string())
        } else {
            FetchError::Other(e.to_string())
        }
    }

    async fn get(&self, url: &Url) -> Result<Fetched, FetchError> {
        let mut resp = self
            .client
            .get(url.as_str())
            .send()
            .await
            .map_err(|e| self.map_err(e))?;
        let status = resp.status().as_u16();
        let headers = resp.headers().clone();
        let mut body = Vec::new();
        while body.len() < self.body_cap {
            match resp.chunk().await.map_err(|e| self.map_err(e))? {
                Some(chunk) => body.extend_from_slice(&chunk),
                None => break,
            }
        }
        body.truncate(self.body_cap);
        Ok(Fetched {
            status,
            headers,
            body,
        })
    }
}

impl Fetcher for HttpFetcher {
    async fn fetch(&self, url: &Url) -> Result<Fetched, FetchError> {
        // reqwest's timeout covers the whole exchange; this guards the body loop too
        match tokio::time::timeout(self.timeout, self.get(url)).await {
            Ok(result) => result,
            Err(_) => Err(FetchError::Timeout(self.timeout)),
        }
    }
}
