//! Google News article links redirect through script, not HTTP or meta
//! refresh. The wrapper page still carries the publisher URL in its markup;
//! this module digs it out. Best-effort: the markup changes over time.

use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;
use url::Url;

use crate::classify::tag_attributes;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0} is not a Google News url")]
pub struct NotGoogleNews(pub String);

static ANCHOR: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?is)<a\b[^>]*>").unwrap());
static TAG_WITH_TARGET_ATTR: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?is)<[a-z][a-z0-9-]*\b[^>]*\bdata-n-au\s*=[^>]*>").unwrap());

const GOOGLE_OWNED: [&str; 6] = [
    "gstatic.com",
    "googleusercontent.com",
    "googleapis.com",
    "googletagmanager.com",
    "doubleclick.net",
    "google-analytics.com",
];

pub fn is_google_news_host(host: &str) -> bool {
    let host = host.to_ascii_lowercase();
    host.starts_with("news.google.") && host.len() > "news.google.".len()
}

fn is_google_owned(host: &str) -> bool {
    let labels: Vec<&str> = host.split('.').collect();
    labels.contains(&"google")
        || GOOGLE_OWNED
            .iter()
            .any(|d| host == *d || host.ends_with(&format!(".{d}")))
}

fn external(candidate: &str, page: &Url) -> Option<Url> {
    let url = page.join(candidate.trim()).ok()?;
    let host = url.host_str()?.to_ascii_lowercase();
    (matches!(url.scheme(), "http" | "https") && !is_google_owned(&host)).then_some(url)
}

/// Publisher URL behind a Google News article wrapper page.
///
/// Looks first for the `data-n-au` attribute Google uses to carry the
/// article URL, then for the first anchor pointing outside Google.
pub fn resolve_google_news(url: &Url, body: &[u8]) -> Result<Option<Url>, NotGoogleNews> {
    if !url.host_str().is_some_and(is_google_news_host) {
        return Err(NotGoogleNews(url.to_string()));
    }
    let html = String::from_utf8_lossy(body);
    let from_attr = TAG_WITH_TARGET_ATTR.find_iter(&html).find_map(|tag| {
        tag_attributes(tag.as_str())
            .into_iter()
            .find(|(name, _)| name == "data-n-au")
            .and_then(|(_, value)| external(&value, url))
    });
    if from_attr.is_some() {
        return Ok(from_attr);
    }
    Ok(ANCHOR.find_iter(&html).find_map(|tag| {
        tag_attributes(tag.as_str())
            .into_iter()
            .find(|(name, _)| name == "href")
            .and_then(|(_, href)| external(&href, url))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gn() -> Url {
        Url::parse("https://news.google.com/articles/CBMiXmh0dHBz?hl=en-US").unwrap()
    }

    #[test]
    fn host_matching() {
        assert!(is_google_news_host("news.google.com"));
        assert!(is_google_news_host("news.google.co.uk"));
        assert!(!is_google_news_host("google.com"));
        assert!(!is_google_news_host("news.google."));
        assert!(!is_google_news_host("fakenews.google.com"));
    }

    #[test]
    fn single_external_anchor() {
        let body =
            br#"<a href="./topics/x">Topic</a><a href="https://accounts.google.com/">Sign in</a>
            <a href="https://www.publisher.example/2023/story.html" rel="nofollow">Story</a>"#;
        assert_eq!(
            resolve_google_news(&gn(), body).unwrap().unwrap().as_str(),
            "https://www.publisher.example/2023/story.html"
        );
    }

    #[test]
    fn attribute_preferred_over_anchors() {
        let body = br#"<a href="https://other.example/">x</a>
            <c-wiz jsrenderer="x" data-n-au="https://pub.example/a?x=1&amp;y=2"></c-wiz>"#;
        assert_eq!(
            resolve_google_news(&gn(), body).unwrap().unwrap().as_str(),
            "https://pub.example/a?x=1&y=2"
        );
    }

    #[test]
    fn no_external_target() {
        let body = br#"<a href="https://news.google.com/home">Home</a><img src="https://lh3.googleusercontent.com/x">"#;
        assert_eq!(resolve_google_news(&gn(), body).unwrap(), None);
        assert_eq!(resolve_google_news(&gn(), b"").unwrap(), None);
    }

    #[test]
    fn rejects_other_hosts() {
        let other = Url::parse("https://www.example.com/").unwrap();
        assert!(resolve_google_news(&other, b"<a href='https://x.example'>").is_err());
    }

    #[test]
    fn committed_fixture_page() {
        let body = include_bytes!("../fixtures/google_news_article.html");
        assert_eq!(
            resolve_google_news(&gn(), body).unwrap().unwrap().as_str(),
            "https://www.reuters.example/world/us/senate-passes-stopgap-funding-bill-2023-11-16/"
        );
    }
}
