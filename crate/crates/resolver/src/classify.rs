//! Decide whether a fetched response redirects somewhere, and how.

use std::sync::{Arc, LazyLock};

use http::{header, HeaderMap};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::google_news;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "target", rename_all = "snake_case")]
pub enum RedirectKind {
    Http3xx(Url),
    MetaRefresh(Url),
    JsSpecialCase(Url),
    Terminal,
}

impl RedirectKind {
    pub fn target(&self) -> Option<&Url> {
        match self {
            RedirectKind::Http3xx(u)
            | RedirectKind::MetaRefresh(u)
            | RedirectKind::JsSpecialCase(u) => Some(u),
            RedirectKind::Terminal => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClassifyError {
    #[error("{status} redirect without a usable Location header")]
    MalformedRedirect { status: u16 },
}

type ExtractFn = dyn Fn(&Url, &[u8]) -> Option<Url> + Send + Sync;
type HostMatchFn = dyn Fn(&str) -> bool + Send + Sync;

/// Host-specific extractors for redirects performed by page scripts.
#[derive(Clone)]
pub struct ExtractorRegistry {
    entries: Vec<(Arc<HostMatchFn>, Arc<ExtractFn>)>,
}

impl std::fmt::Debug for ExtractorRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExtractorRegistry")
            .field("entries", &self.entries.len())
            .finish()
    }
}

impl Default for ExtractorRegistry {
    /// Google News article wrappers.
    fn default() -> Self {
        let mut registry = ExtractorRegistry::empty();
        registry.register(google_news::is_google_news_host, |url, body| {
            google_news::resolve_google_news(url, body).ok().flatten()
        });
        registry
    }
}

impl ExtractorRegistry {
    pub fn empty() -> Self {
        ExtractorRegistry {
            entries: Vec::new(),
        }
    }

    pub fn register<M, E>(&mut self, host_matches: M, extract: E)
    where
        M: Fn(&str) -> bool + Send + Sync + 'static,
        E: Fn(&Url, &[u8]) -> Option<Url> + Send + Sync + 'static,
    {
        self.entries
            .push((Arc::new(host_matches), Arc::new(extract)));
    }

    pub fn extract(&self, url: &Url, body: &[u8]) -> Option<Url> {
        let host = url.host_str()?;
        self.entries
            .iter()
            .filter(|(matches, _)| matches(host))
            .find_map(|(_, extract)| extract(url, body))
    }
}

static META_TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?is)<meta\b[^>]*>").unwrap());
static ATTR: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(?is)([a-z][a-z0-9_:-]*)\s*=\s*(?:"([^"]*)"|'([^']*)'|([^\s"'>]+))"#).unwrap()
});
static REFRESH_URL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(?is)^\s*[0-9.]*\s*[;,]?\s*url\s*=\s*['"]?([^'"]+?)['"]?\s*$"#).unwrap()
});

/// Attributes of an HTML start tag, names lowercased, values entity-decoded.
pub(crate) fn tag_attributes(tag: &str) -> Vec<(String, String)> {
    ATTR.captures_iter(tag)
        .map(|c| {
            let value = c
                .get(2)
                .or_else(|| c.get(3))
                .or_else(|| c.get(4))
                .map_or("", |m| m.as_str());
            (c[1].to_ascii_lowercase(), decode_entities(value))
        })
        .collect()
}

pub(crate) fn decode_entities(s: &str) -> String {
    if !s.contains('&') {
        return s.to_string();
    }
    s.replace("&quot;", "\"")
        .replace("&#39;", "'")
        .replace("&#x27;", "'")
        .replace("&#x2F;", "/")
        .replace("&#47;", "/")
        .replace("&#x3D;", "=")
        .replace("&#61;", "=")
        .replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&amp;", "&")
}

/// Target of a `<meta http-equiv="refresh" content="N;url=...">` tag, if any.
pub fn meta_refresh_target(body: &[u8], current: &Url) -> Option<Url> {
    let html = String::from_utf8_lossy(body);
    META_TAG.find_iter(&html).find_map(|tag| {
        let attrs = tag_attributes(tag.as_str());
        let is_refresh = attrs
            .iter()
            .any(|(n, v)| n == "http-equiv" && v.trim().eq_ignore_ascii_case("refresh"));
        if !is_refresh {
            return None;
        }
        let content = attrs.iter().find(|(n, _)| n == "content")?.1.as_str();
        let target = REFRESH_URL.captures(content)?.get(1)?.as_str().trim();
        current
            .join(target)
            .ok()
            .filter(|u| matches!(u.scheme(), "http" | "https"))
    })
}

/// Classifies a completed response: HTTP 3xx, then meta refresh, then a
/// registered host extractor, otherwise terminal.
pub fn classify_redirect(
    status: u16,
    headers: &HeaderMap,
    body: Option<&[u8]>,
    current: &Url,
    extractors: &ExtractorRegistry,
) -> Result<RedirectKind, ClassifyError> {
    if (300..400).contains(&status) {
        let target = headers
            .get(header::LOCATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|loc| current.join(loc.trim()).ok())
            .filter(|u| matches!(u.scheme(), "http" | "https"))
            .ok_or(ClassifyError::MalformedRedirect { status })?;
        return Ok(RedirectKind::Http3xx(target));
    }
    let Some(body) = body else {
        return Ok(RedirectKind::Terminal);
    };
    if let Some(target) = meta_refresh_target(body, current) {
        return Ok(RedirectKind::MetaRefresh(target));
    }
    if let Some(target) = extractors.extract(current, body) {
        return Ok(RedirectKind::JsSpecialCase(target));
    }
    Ok(RedirectKind::Terminal)
}
