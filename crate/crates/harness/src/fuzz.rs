//! Seeded URL generator for canonicalization idempotence checks.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use trustnet_core::PolicyTable;

const HOSTS: &[&str] = &[
    "example.com",
    "www.example.com",
    "news.ycombinator.com",
    "www.youtube.com",
    "m.youtube.com",
    "www.facebook.com",
    "bbc.co.uk",
    "www.bbc.co.uk",
    "sub.domain.example.org",
    "xn--caf-dma.example",
];
const SEGMENTS: &[&str] = &[
    "a",
    "Story",
    "index.html",
    "2024",
    "caf%c3%a9",
    "x%2fy",
    "post-1",
    "",
    "watch",
    "item",
    "photo",
    "video",
];
const PARAMS: &[&str] = &[
    "v",
    "id",
    "utm_source",
    "fbclid",
    "comment_id",
    "fbid",
    "set",
    "q",
    "t",
    "p",
    "ref",
];
const VALUES: &[&str] = &["1", "abc", "A%2b", "", "x y", "%e2%9c%93"];

/// `n` URL strings mixing case, ports, paths, tracking and identifying
/// parameters, fragments and userinfo.
pub fn fuzz_urls(seed: u64, n: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| fuzz_url(&mut rng)).collect()
}

fn fuzz_url(rng: &mut ChaCha8Rng) -> String {
    let scheme = if rng.random_bool(0.5) {
        "http"
    } else {
        "HTTPS"
    };
    let mut host = HOSTS.choose(rng).unwrap().to_string();
    if rng.random_bool(0.3) {
        host = host.to_uppercase();
    }
    let mut url = format!("{scheme}://");
    if rng.random_bool(0.1) {
        url.push_str("user:pw@");
    }
    url.push_str(&host);
    match rng.random_range(0..6) {
        0 => url.push_str(":80"),
        1 => url.push_str(":443"),
        2 => url.push_str(":8080"),
        _ => {}
    }
    for _ in 0..rng.random_range(0..4) {
        url.push('/');
        url.push_str(SEGMENTS.choose(rng).unwrap());
    }
    if rng.random_bool(0.3) {
        url.push('/');
    }
    let params = rng.random_range(0..4);
    for i in 0..params {
        url.push(if i == 0 { '?' } else { '&' });
        url.push_str(PARAMS.choose(rng).unwrap());
        if rng.random_bool(0.9) {
            url.push('=');
            url.push_str(VALUES.choose(rng).unwrap());
        }
    }
    if rng.random_bool(0.2) {
        url.push_str("#frag");
    }
    url
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct IdempotenceFailure {
    pub input: String,
    pub once: String,
    pub twice: String,
}

/// Inputs where canonicalizing the key again changes it (or fails).
pub fn check_idempotence(policies: &PolicyTable, urls: &[String]) -> Vec<IdempotenceFailure> {
    urls.iter()
        .filter_map(|input| {
            let once = policies.canonicalize_str(input).ok()?;
            let twice = policies
                .canonicalize_str(once.as_str())
                .map(|k| k.into_string())
                .unwrap_or_else(|e| format!("error: {e}"));
            (twice != once.as_str()).then(|| IdempotenceFailure {
                input: input.clone(),
                once: once.into_string(),
                twice,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_urls_parse_and_are_reproducible() {
        let a = fuzz_urls(3, 200);
        assert_eq!(a, fuzz_urls(3, 200));
        let ok = a
            .iter()
            .filter(|u| PolicyTable::default().canonicalize_str(u).is_ok())
            .count();
        assert_eq!(ok, a.len());
    }

    #[test]
    fn idempotent_on_fuzzed_urls() {
        let failures = check_idempotence(&PolicyTable::default(), &fuzz_urls(99, 500));
        assert!(failures.is_empty(), "{failures:#?}");
    }
}
