//! A small HTTP server that replays canned responses from a TOML fixture.
//!
//! ```toml
//! [[route]]
//! path = "/short/abc"
//! status = 301
//! headers = { Location = "{{origin}}/landing" }
//!
//! [[route]]
//! host = "news.google.com"        # optional; matched against the Host header
//! path = "/articles/x"
//! body_file = "google_news_article.html"
//! replace = { "https://www.reuters.example" = "http://www.reuters.example:{{port}}" }
//! delay_ms = 0
//! ```
//!
//! `{{origin}}` and `{{port}}` are substituted in headers and bodies once the
//! server is bound. Hits are counted per path.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Body;
use axum::extract::{Request, State};
use axum::http::{header::HOST, HeaderName, HeaderValue, StatusCode};
use axum::response::Response;
use axum::Router;
use serde::Deserialize;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::oneshot;

#[derive(Debug, Error)]
pub enum MockError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("fixture: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("route {path}: {message}")]
    Route { path: String, message: String },
    #[error("bind: {0}")]
    Bind(std::io::Error),
}

#[derive(Debug, Clone, Deserialize)]
pub struct MockFixture {
    #[serde(default, rename = "route")]
    pub routes: Vec<MockRoute>,
}

fn ok_status() -> u16 {
    200
}

#[derive(Debug, Clone, Deserialize)]
pub struct MockRoute {
    pub path: String,
    #[serde(default)]
    pub host: Option<String>,
    #[serde(default = "ok_status")]
    pub status: u16,
    #[serde(default)]
    pub headers: BTreeMap<String, String>,
    #[serde(default)]
    pub body: Option<String>,
    /// Relative to the fixture file's directory.
    #[serde(default)]
    pub body_file: Option<PathBuf>,
    #[serde(default)]
    pub replace: BTreeMap<String, String>,
    #[serde(default)]
    pub delay_ms: u64,
}

impl MockFixture {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, MockError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| MockError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses fixture text; `body_file` entries are resolved against `base_dir`
    /// and inlined.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, MockError> {
        let mut fixture: MockFixture = toml::from_str(text)?;
        for route in &mut fixture.routes {
            if let Some(file) = route.body_file.take() {
                if route.body.is_some() {
                    return Err(MockError::Route {
                        path: route.path.clone(),
                        message: "both body and body_file given".into(),
                    });
                }
                let full = base_dir.join(&file);
                let body = std::fs::read_to_string(&full)
                    .map_err(|source| MockError::Io { path: full, source })?;
                route.body = Some(body);
            }
        }
        Ok(fixture)
    }
}

struct Prepared {
    host: Option<String>,
    status: StatusCode,
    headers: Vec<(HeaderName, HeaderValue)>,
    body: String,
    delay: Duration,
}

struct Shared {
    routes: HashMap<String, Vec<Prepared>>,
    hits: Mutex<HashMap<String, usize>>,
}

/// Running fixture server; stops when dropped.
pub struct MockServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    shutdown: Option<oneshot::Sender<()>>,
}

fn fill(template: &str, origin: &str, port: u16) -> String {
    template
        .replace("{{origin}}", origin)
        .replace("{{port}}", &port.to_string())
}

impl MockServer {
    pub async fn start(fixture: MockFixture) -> Result<Self, MockError> {
        let listener = TcpListener::bind("127.0.0.1:0")
            .await
            .map_err(MockError::Bind)?;
        let addr = listener.local_addr().map_err(MockError::Bind)?;
        let origin = format!("http://{addr}");

        let mut routes: HashMap<String, Vec<Prepared>> = HashMap::new();
        for route in fixture.routes {
            let bad = |message: String| MockError::Route {
                path: route.path.clone(),
                message,
            };
            let status = StatusCode::from_u16(route.status).map_err(|e| bad(e.to_string()))?;
            let mut headers = Vec::new();
            for (name, value) in &route.headers {
                let name = HeaderName::try_from(name.as_str()).map_err(|e| bad(e.to_string()))?;
                let value = HeaderValue::from_str(&fill(value, &origin, addr.port()))
                    .map_err(|e| bad(e.to_string()))?;
                headers.push((name, value));
            }
            let mut body = route.body.clone().unwrap_or_default();
            for (from, to) in &route.replace {
                body = body.replace(from.as_str(), to);
            }
            routes
                .entry(route.path.clone())
                .or_default()
                .push(Prepared {
                    host: route.host.map(|h| h.to_ascii_lowercase()),
                    status,
                    headers,
                    body: fill(&body, &origin, addr.port()),
                    delay: Duration::from_millis(route.delay_ms),
                });
        }

        let shared = Arc::new(Shared {
            routes,
            hits: Mutex::new(HashMap::new()),
        });
        let app = Router::new().fallback(serve).with_state(shared.clone());
        let (tx, rx) = oneshot::channel();
        tokio::spawn(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
        Ok(MockServer {
            addr,
            shared,
            shutdown: Some(tx),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn origin(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// `http://127.0.0.1:port{path}`
    pub fn url(&self, path: &str) -> url::Url {
        url::Url::parse(&format!("{}{path}", self.origin())).expect("mock url")
    }

    pub fn hits(&self, path: &str) -> usize {
        self.shared
            .hits
            .lock()
            .unwrap()
            .get(path)
            .copied()
            .unwrap_or(0)
    }

    pub fn total_hits(&self) -> usize {
        self.shared.hits.lock().unwrap().values().sum()
    }

    pub fn reset_hits(&self) {
        self.shared.hits.lock().unwrap().clear();
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

async fn serve(State(shared): State<Arc<Shared>>, req: Request) -> Response {
    let path = req.uri().path().to_string();
    let host = req
        .headers()
        .get(HOST)
        .and_then(|h| h.to_str().ok())
        .map(|h| h.split(':').next().unwrap_or(h).to_ascii_lowercase());
    *shared.hits.lock().unwrap().entry(path.clone()).or_default() += 1;

    let chosen = shared.routes.get(&path).and_then(|candidates| {
        candidates
            .iter()
            .find(|r| r.host.is_some() && r.host == host)
            .or_else(|| candidates.iter().find(|r| r.host.is_none()))
    });
    let Some(route) = chosen else {
        return Response::builder()
            .status(StatusCode::NOT_FOUND)
            .body(Body::from("no fixture route"))
            .unwrap();
    };
    if !route.delay.is_zero() {
        tokio::time::sleep(route.delay).await;
    }
    let mut resp = Response::builder().status(route.status);
    for (name, value) in &route.headers {
        resp = resp.header(name, value);
    }
    resp.body(Body::from(route.body.clone())).unwrap()
}
