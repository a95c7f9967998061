//! Link cleaning and URL canonicalization.
//!
//! Every href found on a page goes through [`clean`] (resolve against the page
//! URL) and then [`PolicyTable::canonicalize`], which folds the usual
//! variations of one resource onto a single [`UrlKey`]:
//!
//! * host lowercased, then mapped through the host-alias table,
//! * `http` and `https` folded to `https`, default ports dropped,
//! * fragment, trailing `/` and trailing `/index.html` removed,
//! * every query parameter dropped unless a [`ParamPolicy`] for the host keeps
//!   it; kept parameters are sorted,
//! * percent-escapes written with uppercase hex.
//!
//! The policy table ships with entries for sites that identify resources by
//! query parameter (YouTube, Hacker News, Facebook media and comments) and can
//! be extended from a line-oriented config file.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::{Arc, RwLock};

use percent_encoding::percent_decode_str;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

/// Errors produced while cleaning or canonicalizing a URL.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CanonError {
    #[error("invalid href {0:?}")]
    InvalidHref(String),
    #[error("unsupported scheme {0:?}")]
    UnsupportedScheme(String),
    #[error("invalid url {0:?}")]
    InvalidUrl(String),
}

/// A malformed line in a policy/alias config file.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

/// The canonical key under which all variations of one resource are stored.
///
/// Only produced by [`PolicyTable::canonicalize`]; deserialization trusts its
/// input since keys are only ever persisted after canonicalization.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UrlKey(String);

impl UrlKey {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Wraps a string that is already known to be canonical (e.g. read back
    /// from storage).
    pub fn from_canonical(s: impl Into<String>) -> Self {
        UrlKey(s.into())
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl fmt::Display for UrlKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for UrlKey {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamMode {
    KeepListed,
    DropAll,
}

/// Query-parameter retention rule for one host (and optionally one path prefix).
///
/// `host` matches the host itself and every subdomain of it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamPolicy {
    pub host: String,
    pub path_prefix: Option<String>,
    pub kept_params: BTreeSet<String>,
    pub mode: ParamMode,
}

impl ParamPolicy {
    pub fn keep<I, S>(host: &str, params: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ParamPolicy {
            host: host.to_ascii_lowercase(),
            path_prefix: None,
            kept_params: params.into_iter().map(Into::into).collect(),
            mode: ParamMode::KeepListed,
        }
    }

    pub fn drop_all(host: &str) -> Self {
        ParamPolicy {
            host: host.to_ascii_lowercase(),
            path_prefix: None,
            kept_params: BTreeSet::new(),
            mode: ParamMode::DropAll,
        }
    }

    pub fn on_path(mut self, prefix: &str) -> Self {
        self.path_prefix = Some(prefix.to_string());
        self
    }

    fn matches(&self, host: &str, path: &str) -> bool {
        let host_ok = host == self.host
            || (host.len() > self.host.len()
                && host.ends_with(&self.host)
                && host.as_bytes()[host.len() - self.host.len() - 1] == b'.');
        host_ok
            && self
                .path_prefix
                .as_deref()
                .is_none_or(|prefix| path.starts_with(prefix))
    }

    fn keeps(&self, name: &str) -> bool {
        self.mode == ParamMode::KeepListed && self.kept_params.contains(name)
    }

    fn slot(&self) -> (&str, Option<&str>) {
        (&self.host, self.path_prefix.as_deref())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostAlias {
    pub from_host: String,
    pub to_host: String,
}

static GLOBAL_DEFAULT: ParamPolicy = ParamPolicy {
    host: String::new(),
    path_prefix: None,
    kept_params: BTreeSet::new(),
    mode: ParamMode::DropAll,
};

const FACEBOOK_COMMENT_PARAMS: [&str; 2] = ["comment_id", "reply_comment_id"];

/// The built-in query-parameter policies.
pub fn default_param_policies() -> Vec<ParamPolicy> {
    let fb = |extra: &[&str]| {
        ParamPolicy::keep(
            "facebook.com",
            extra.iter().chain(FACEBOOK_COMMENT_PARAMS.iter()).copied(),
        )
    };
    vec![
        ParamPolicy::keep("youtube.com", ["v"]),
        ParamPolicy::keep("news.ycombinator.com", ["id"]),
        // posts are path-addressed; only comments carry an identifying param
        fb(&[]),
        fb(&["fbid", "set"]).on_path("/photo"),
        fb(&["v"]).on_path("/video"),
        fb(&["v"]).on_path("/watch"),
    ]
}

pub fn default_host_aliases() -> Vec<HostAlias> {
    [("bbc.co.uk", "bbc.com"), ("www.bbc.co.uk", "www.bbc.com")]
        .into_iter()
        .map(|(f, t)| HostAlias {
            from_host: f.into(),
            to_host: t.into(),
        })
        .collect()
}

/// Query-parameter policies plus host aliases.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    policies: Vec<ParamPolicy>,
    /// Declared aliases, in declaration order.
    aliases: Vec<HostAlias>,
    /// Alias chains collapsed to their final host.
    alias_map: BTreeMap<String, String>,
}

impl Default for PolicyTable {
    fn default() -> Self {
        let mut table = PolicyTable::empty();
        for policy in default_param_policies() {
            table.set_policy(policy);
        }
        for alias in default_host_aliases() {
            table
                .add_alias(alias)
                .expect("built-in aliases are acyclic");
        }
        table
    }
}

impl PolicyTable {
    /// A table with no site policies and no aliases: every parameter dropped.
    pub fn empty() -> Self {
        PolicyTable {
            policies: Vec::new(),
            aliases: Vec::new(),
            alias_map: BTreeMap::new(),
        }
    }

    /// Built-in defaults overridden by the given config text.
    pub fn from_config(text: &str) -> Result<Self, ConfigError> {
        let mut table = PolicyTable::default();
        table.apply_config(text)?;
        Ok(table)
    }

    pub fn policies(&self) -> &[ParamPolicy] {
        &self.policies
    }

    pub fn aliases(&self) -> &[HostAlias] {
        &self.aliases
    }

    /// Inserts a policy, replacing any existing one for the same host and path prefix.
    pub fn set_policy(&mut self, policy: ParamPolicy) {
        match self.policies.iter_mut().find(|p| p.slot() == policy.slot()) {
            Some(existing) => *existing = policy,
            None => self.policies.push(policy),
        }
    }

    /// Adds (or replaces) an alias. Rejects aliases that would create a cycle.
    pub fn add_alias(&mut self, alias: HostAlias) -> Result<(), String> {
        let from = alias.from_host.to_ascii_lowercase();
        let to = alias.to_host.to_ascii_lowercase();
        if from == to {
            return Err(format!("alias {from} maps to itself"));
        }
        let mut aliases: Vec<HostAlias> = self
            .aliases
            .iter()
            .filter(|a| a.from_host != from)
            .cloned()
            .collect();
        aliases.push(HostAlias {
            from_host: from,
            to_host: to,
        });
        self.alias_map = collapse_aliases(&aliases)?;
        self.aliases = aliases;
        Ok(())
    }

    /// Applies `keep`, `drop` and `alias` lines on top of the current table.
    ///
    /// ```text
    /// # comment
    /// keep forum.example p,page
    /// keep facebook.com/photo fbid,set
    /// drop example.org
    /// alias bbc.co.uk bbc.com
    /// ```
    pub fn apply_config(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut staged = self.clone();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |message: String| ConfigError { line, message };
            let fields: Vec<&str> = content.split_whitespace().collect();
            match fields.as_slice() {
                ["keep", target, params] => {
                    let (host, path) = split_target(target).map_err(err)?;
                    let kept: BTreeSet<String> = params
                        .split(',')
                        .map(str::trim)
                        .filter(|p| !p.is_empty())
                        .map(String::from)
                        .collect();
                    if kept.is_empty() {
                        return Err(err("keep requires at least one parameter".into()));
                    }
                    staged.set_policy(ParamPolicy {
                        host,
                        path_prefix: path,
                        kept_params: kept,
                        mode: ParamMode::KeepListed,
                    });
                }
                ["keep", _] => {
                    return Err(err("keep requires at least one parameter".into()));
                }
                ["drop", target] => {
                    let (host, path) = split_target(target).map_err(err)?;
                    staged.set_policy(ParamPolicy {
                        host,
                        path_prefix: path,
                        kept_params: BTreeSet::new(),
                        mode: ParamMode::DropAll,
                    });
                }
                ["alias", from, to] => {
                    let from = validate_host(from).map_err(err)?;
                    let to = validate_host(to).map_err(err)?;
                    staged
                        .add_alias(HostAlias {
                            from_host: from,
                            to_host: to,
                        })
                        .map_err(err)?;
                }
                [directive, ..] if !matches!(*directive, "keep" | "drop" | "alias") => {
                    return Err(err(format!("unknown directive {directive:?}")));
                }
                _ => return Err(err(format!("wrong number of fields in {content:?}"))),
            }
        }
        *self = staged;
        Ok(())
    }

    /// The policy governing `host` for host-wide lookups (no path).
    pub fn lookup(&self, host: &str) -> &ParamPolicy {
        self.lookup_path(host, "")
    }

    /// Most specific policy for `host` and `path`: longest host pattern first,
    /// then longest path prefix. Falls back to the global drop-all default.
    pub fn lookup_path(&self, host: &str, path: &str) -> &ParamPolicy {
        let host = host.to_ascii_lowercase();
        self.policies
            .iter()
            .filter(|p| p.matches(&host, path))
            .max_by_key(|p| {
                (
                    p.host.len(),
                    p.path_prefix.as_ref().map_or(0, |s| s.len() + 1),
                )
            })
            .unwrap_or(&GLOBAL_DEFAULT)
    }

    pub fn canonicalize_str(&self, raw: &str) -> Result<UrlKey, CanonError> {
        let url = Url::parse(raw.trim()).map_err(|_| CanonError::InvalidUrl(raw.to_string()))?;
        self.canonicalize(&url)
    }

    /// Maps an absolute http(s) URL to its canonical key.
    pub fn canonicalize(&self, url: &Url) -> Result<UrlKey, CanonError> {
        match url.scheme() {
            "http" | "https" => {}
            other => return Err(CanonError::UnsupportedScheme(other.to_string())),
        }
        let host = url
            .host_str()
            .ok_or_else(|| CanonError::InvalidUrl(url.to_string()))?
            .to_ascii_lowercase();
        let host = self.alias_map.get(&host).cloned().unwrap_or(host);

        // 80 is already elided by the parser for http; 443 is default once folded.
        let port = url.port().filter(|&p| p != 443);

        let mut path = url.path();
        loop {
            if let Some(stripped) = path.strip_suffix("/index.html") {
                path = stripped;
            } else if path.len() > 1 && path.ends_with('/') {
                path = &path[..path.len() - 1];
            } else {
                break;
            }
        }
        if path == "/" {
            path = "";
        }
        let path = uppercase_escapes(path);

        let policy = self.lookup_path(&host, &path);
        let mut kept: Vec<(String, String)> = url
            .query()
            .unwrap_or("")
            .split('&')
            .filter(|pair| !pair.is_empty())
            .filter_map(|pair| {
                let name = pair.split('=').next().unwrap_or("");
                let decoded = percent_decode_str(&name.replace('+', " "))
                    .decode_utf8_lossy()
                    .into_owned();
                policy
                    .keeps(&decoded)
                    .then(|| (decoded, uppercase_escapes(pair)))
            })
            .collect();
        kept.sort();

        let mut key = String::with_capacity(url.as_str().len());
        key.push_str("https://");
        key.push_str(&host);
        if let Some(port) = port {
            key.push(':');
            key.push_str(&port.to_string());
        }
        if kept.is_empty() {
            key.push_str(&path);
        } else {
            key.push_str(if path.is_empty() { "/" } else { &path });
            key.push('?');
            let query: Vec<&str> = kept.iter().map(|(_, pair)| pair.as_str()).collect();
            key.push_str(&query.join("&"));
        }
        Ok(UrlKey(key))
    }

    /// True if `candidate` is exactly its own canonical form.
    pub fn is_canonical(&self, candidate: &str) -> bool {
        self.canonicalize_str(candidate)
            .map(|k| k.as_str() == candidate)
            .unwrap_or(false)
    }
}

fn collapse_aliases(aliases: &[HostAlias]) -> Result<BTreeMap<String, String>, String> {
    let direct: BTreeMap<&str, &str> = aliases
        .iter()
        .map(|a| (a.from_host.as_str(), a.to_host.as_str()))
        .collect();
    let mut out = BTreeMap::new();
    for &start in direct.keys() {
        let mut seen = BTreeSet::from([start]);
        let mut current = start;
        while let Some(&next) = direct.get(current) {
            if !seen.insert(next) {
                return Err(format!("alias cycle through {start}"));
            }
            current = next;
        }
        out.insert(start.to_string(), current.to_string());
    }
    Ok(out)
}

fn split_target(target: &str) -> Result<(String, Option<String>), String> {
    match target.find('/') {
        Some(idx) => {
            let host = validate_host(&target[..idx])?;
            Ok((host, Some(target[idx..].to_string())))
        }
        None => Ok((validate_host(target)?, None)),
    }
}

fn validate_host(host: &str) -> Result<String, String> {
    let ok = !host.is_empty()
        && host
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_'));
    if ok {
        Ok(host.to_ascii_lowercase())
    } else {
        Err(format!("invalid host {host:?}"))
    }
}

fn uppercase_escapes(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = String::with_capacity(s.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%'
            && i + 2 < bytes.len()
            && bytes[i + 1].is_ascii_hexdigit()
            && bytes[i + 2].is_ascii_hexdigit()
        {
            out.push('%');
            out.push(bytes[i + 1].to_ascii_uppercase() as char);
            out.push(bytes[i + 2].to_ascii_uppercase() as char);
            i += 3;
        } else {
            // input is valid UTF-8; copy the full char
            let ch = s[i..].chars().next().expect("in bounds");
            out.push(ch);
            i += ch.len_utf8();
        }
    }
    out
}

const NON_FETCHABLE: [&str; 7] = [
    "javascript",
    "mailto",
    "tel",
    "data",
    "about",
    "blob",
    "file",
];

/// Resolves an href found on a page into an absolute http(s) URL.
///
/// Handles relative paths, protocol-relative (`//host/p`) and query-only
/// hrefs. Surrounding whitespace is ignored.
pub fn clean(raw_href: &str, base: &Url) -> Result<Url, CanonError> {
    let href = raw_href.trim();
    if href.is_empty() {
        return Err(CanonError::InvalidHref(raw_href.to_string()));
    }
    let resolved = match Url::parse(href) {
        Ok(url) => url,
        Err(url::ParseError::RelativeUrlWithoutBase) => base
            .join(href)
            .map_err(|_| CanonError::InvalidHref(raw_href.to_string()))?,
        Err(_) => return Err(CanonError::InvalidHref(raw_href.to_string())),
    };
    match resolved.scheme() {
        "http" | "https" if resolved.host_str().is_some() => Ok(resolved),
        s if NON_FETCHABLE.contains(&s) => Err(CanonError::InvalidHref(raw_href.to_string())),
        _ => Err(CanonError::InvalidHref(raw_href.to_string())),
    }
}

/// A policy table that can be swapped atomically on config reload.
#[derive(Debug, Clone, Default)]
pub struct SharedPolicies {
    inner: Arc<RwLock<Arc<PolicyTable>>>,
}

impl SharedPolicies {
    pub fn new(table: PolicyTable) -> Self {
        SharedPolicies {
            inner: Arc::new(RwLock::new(Arc::new(table))),
        }
    }

    pub fn current(&self) -> Arc<PolicyTable> {
        self.inner.read().expect("policy lock poisoned").clone()
    }

    /// Rebuilds the table from defaults plus `config` and swaps it in. On
    /// error the previous table stays active.
    pub fn reload(&self, config: &str) -> Result<(), ConfigError> {
        let table = PolicyTable::from_config(config)?;
        *self.inner.write().expect("policy lock poisoned") = Arc::new(table);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn canon(s: &str) -> String {
        PolicyTable::default()
            .canonicalize_str(s)
            .unwrap()
            .into_string()
    }

    #[test]
    fn folds_scheme_port_fragment_and_index() {
        assert_eq!(
            canon("http://Example.com:80/a/index.html#top"),
            "https://example.com/a"
        );
        assert_eq!(canon("https://example.com/"), "https://example.com");
        assert_eq!(canon("https://example.com:443/a/"), "https://example.com/a");
        assert_eq!(canon("http://example.com:443/a"), "https://example.com/a");
        assert_eq!(
            canon("https://example.com:8080/a"),
            "https://example.com:8080/a"
        );
    }

    #[test]
    fn drops_tracking_params() {
        assert_eq!(
            canon("https://example.com/article?fbclid=XYZ&utm_source=t"),
            "https://example.com/article"
        );
    }

    #[test]
    fn keeps_site_identifying_params() {
        assert_eq!(
            canon("https://www.youtube.com/watch?v=abc123&t=42s"),
            "https://www.youtube.com/watch?v=abc123"
        );
        assert_eq!(
            canon("https://news.ycombinator.com/item?id=35"),
            "https://news.ycombinator.com/item?id=35"
        );
        assert_eq!(
            canon("https://www.facebook.com/photo/?fbid=10&set=a.5&__tn__=x"),
            "https://www.facebook.com/photo?fbid=10&set=a.5"
        );
        assert_eq!(
            canon("https://www.facebook.com/groups/g/posts/1?comment_id=9&fbclid=z"),
            "https://www.facebook.com/groups/g/posts/1?comment_id=9"
        );
        assert_eq!(
            canon("https://www.facebook.com/story.php?story_fbid=1&id=2"),
            "https://www.facebook.com/story.php"
        );
    }

    #[test]
    fn kept_params_sorted() {
        let mut table = PolicyTable::default();
        table.apply_config("keep forum.example t,p").unwrap();
        assert_eq!(
            table
                .canonicalize_str("https://forum.example/v?t=1&x=2&p=3")
                .unwrap()
                .as_str(),
            "https://forum.example/v?p=3&t=1"
        );
    }

    #[test]
    fn root_with_kept_query_keeps_slash() {
        let table = PolicyTable::from_config("keep q.example id").unwrap();
        let key = table.canonicalize_str("https://q.example/?id=4").unwrap();
        assert_eq!(key.as_str(), "https://q.example/?id=4");
        assert_eq!(table.canonicalize_str(key.as_str()).unwrap(), key);
    }

    #[test]
    fn percent_escapes_uppercased() {
        assert_eq!(
            canon("https://example.com/a%2fb%c3%a9"),
            "https://example.com/a%2Fb%C3%A9"
        );
    }

    #[test]
    fn host_alias_applied() {
        assert_eq!(
            canon("https://www.bbc.co.uk/news/x"),
            "https://www.bbc.com/news/x"
        );
        assert_eq!(canon("http://bbc.co.uk/"), "https://bbc.com");
    }

    #[test]
    fn alias_chains_collapse_and_cycles_rejected() {
        let mut table = PolicyTable::empty();
        table
            .apply_config("alias a.example b.example\nalias b.example c.example")
            .unwrap();
        assert_eq!(
            table
                .canonicalize_str("https://a.example/x")
                .unwrap()
                .as_str(),
            "https://c.example/x"
        );
        let err = table.apply_config("alias c.example a.example").unwrap_err();
        assert_eq!(err.line, 1);
        // failed apply leaves the table unchanged
        assert_eq!(table.aliases().len(), 2);
    }

    #[test]
    fn unsupported_scheme() {
        assert_eq!(
            PolicyTable::default().canonicalize_str("ftp://x.example/a"),
            Err(CanonError::UnsupportedScheme("ftp".into()))
        );
    }

    #[test]
    fn lookup_policies() {
        let table = PolicyTable::default();
        let yt = table.lookup("www.youtube.com");
        assert_eq!(yt.mode, ParamMode::KeepListed);
        assert_eq!(yt.kept_params, BTreeSet::from(["v".to_string()]));
        assert_eq!(table.lookup("unknown.example").mode, ParamMode::DropAll);
        // suffix matching requires a label boundary
        assert_eq!(table.lookup("notyoutube.com").mode, ParamMode::DropAll);
    }

    #[test]
    fn config_override_honored_on_reload() {
        let shared = SharedPolicies::default();
        let url = "https://forum.example/t?p=7&utm_medium=x";
        assert_eq!(
            shared.current().canonicalize_str(url).unwrap().as_str(),
            "https://forum.example/t"
        );
        shared
            .reload("# forum threads\nkeep forum.example p\n")
            .unwrap();
        assert_eq!(
            shared.current().canonicalize_str(url).unwrap().as_str(),
            "https://forum.example/t?p=7"
        );
        // overriding a built-in
        shared.reload("drop youtube.com").unwrap();
        assert_eq!(
            shared.current().lookup("youtube.com").mode,
            ParamMode::DropAll
        );
    }

    #[test]
    fn config_errors_carry_line_numbers() {
        let cases = [
            ("keep a.example", 1),
            ("# ok\n\nfrobnicate x", 3),
            ("keep a.example p\nalias bad/host x.example", 2),
            ("keep a.example ,,", 1),
            ("drop", 1),
        ];
        for (text, line) in cases {
            let err = PolicyTable::from_config(text).unwrap_err();
            assert_eq!(err.line, line, "{text:?} -> {err}");
        }
    }

    #[test]
    fn malformed_reload_keeps_previous_table() {
        let shared = SharedPolicies::default();
        shared.reload("keep forum.example p").unwrap();
        assert!(shared.reload("keep").is_err());
        assert_eq!(
            shared.current().lookup("forum.example").mode,
            ParamMode::KeepListed
        );
    }

    #[test]
    fn clean_resolves_relative_forms() {
        let base = Url::parse("https://site.org/x/y").unwrap();
        assert_eq!(
            clean("/news/a", &base).unwrap().as_str(),
            "https://site.org/news/a"
        );
        assert_eq!(
            clean("  z?q=1 ", &base).unwrap().as_str(),
            "https://site.org/x/z?q=1"
        );
        let root = Url::parse("https://site.org/").unwrap();
        assert_eq!(
            clean("//cdn.site.org/p", &root).unwrap().as_str(),
            "https://cdn.site.org/p"
        );
        assert_eq!(
            clean("http://other.example/p", &root).unwrap().as_str(),
            "http://other.example/p"
        );
    }

    #[test]
    fn clean_rejects_non_fetchable() {
        let base = Url::parse("https://site.org/").unwrap();
        for href in [
            "javascript:void(0)",
            "mailto:a@b.c",
            "tel:123",
            "",
            "   ",
            "http://",
        ] {
            assert!(
                matches!(clean(href, &base), Err(CanonError::InvalidHref(_))),
                "{href:?}"
            );
        }
    }
}
