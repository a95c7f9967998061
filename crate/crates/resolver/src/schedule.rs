//! Spreading link lookups out over time instead of firing them all at once.

use std::collections::HashMap;
use std::time::Duration;

use serde::Serialize;
use url::Url;

use crate::governor::{AimdConfig, DomainPacer, DomainRateState};

pub const DEFAULT_BATCH_SIZE: usize = 10;
pub const DEFAULT_INTER_BATCH_DELAY: Duration = Duration::from_millis(500);

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Batch {
    pub index: usize,
    /// Offset from the start of the run.
    pub dispatch_at: Duration,
    pub links: Vec<Url>,
}

/// Cuts `links` into consecutive batches of `batch_size`; batch `i` goes out
/// at `i * delay`. Input order is preserved.
///
/// # Panics
/// If `batch_size` is zero.
pub fn schedule_batches(links: &[Url], batch_size: usize, delay: Duration) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    links
        .chunks(batch_size)
        .enumerate()
        .map(|(index, chunk)| Batch {
            index,
            dispatch_at: delay * index as u32,
            links: chunk.to_vec(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Dispatch {
    pub url: Url,
    pub batch: usize,
    /// Seconds from the start of the run.
    pub at: f64,
}

/// Per-link send times: each link leaves no earlier than its batch, and no
/// faster than its domain's current rate allows.
pub fn plan_dispatch(
    batches: &[Batch],
    rates: &[DomainRateState],
    config: &AimdConfig,
) -> Vec<Dispatch> {
    let mut pacers: HashMap<String, DomainPacer> = rates
        .iter()
        .filter(|s| s.is_valid())
        .map(|s| {
            (
                s.domain.clone(),
                DomainPacer::new(s.clone(), config.clone()),
            )
        })
        .collect();
    let mut out = Vec::new();
    for batch in batches {
        let start = batch.dispatch_at.as_secs_f64();
        for url in &batch.links {
            let domain = url.host_str().unwrap_or_default().to_ascii_lowercase();
            let pacer = pacers.entry(domain.clone()).or_insert_with(|| {
                DomainPacer::new(
                    DomainRateState::new(domain, config, chrono::Utc::now()),
                    config.clone(),
                )
            });
            out.push(Dispatch {
                url: url.clone(),
                batch: batch.index,
                at: pacer.reserve(start),
            });
        }
    }
    out.sort_by(|a, b| a.at.total_cmp(&b.at));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn links(n: usize, host: &str) -> Vec<Url> {
        (0..n)
            .map(|i| Url::parse(&format!("https://{host}/p/{i}")).unwrap())
            .collect()
    }

    #[test]
    fn batch_shapes() {
        let b = schedule_batches(&links(25, "a.ex"), 10, DEFAULT_INTER_BATCH_DELAY);
        assert_eq!(
            b.iter().map(|b| b.links.len()).collect::<Vec<_>>(),
            [10, 10, 5]
        );
        assert_eq!(b[2].dispatch_at, Duration::from_millis(1000));
        assert!(schedule_batches(&[], 10, DEFAULT_INTER_BATCH_DELAY).is_empty());
    }

    #[test]
    fn order_preserved() {
        let input = links(23, "a.ex");
        let flat: Vec<Url> = schedule_batches(&input, 4, Duration::ZERO)
            .into_iter()
            .flat_map(|b| b.links)
            .collect();
        assert_eq!(flat, input);
    }

    #[test]
    #[should_panic]
    fn zero_batch_size_rejected() {
        schedule_batches(&links(3, "a.ex"), 0, Duration::ZERO);
    }

    #[test]
    fn one_domain_never_exceeds_its_rate() {
        let config = AimdConfig::default();
        let mut rate = DomainRateState::new("a.ex", &config, chrono::Utc::now());
        rate.rate_per_sec = 2.0;
        let plan = plan_dispatch(
            &schedule_batches(
                &links(50, "a.ex"),
                DEFAULT_BATCH_SIZE,
                DEFAULT_INTER_BATCH_DELAY,
            ),
            &[rate],
            &config,
        );
        assert_eq!(plan.len(), 50);
        for w in plan.windows(2) {
            assert!(w[1].at - w[0].at >= 0.5 - 1e-9);
        }
        // in any one-second window, at most two sends
        for (i, d) in plan.iter().enumerate() {
            let in_window = plan[i..].iter().take_while(|e| e.at < d.at + 1.0).count();
            assert!(in_window <= 2);
        }
        let span = plan.last().unwrap().at - plan[0].at;
        assert!(49.0 / span <= 2.0 + 1e-9);
    }

    #[test]
    fn domains_paced_independently() {
        let config = AimdConfig::default();
        let mut input = links(5, "a.ex");
        input.extend(links(5, "b.ex"));
        let plan = plan_dispatch(&schedule_batches(&input, 10, Duration::ZERO), &[], &config);
        // default rate 1/s per domain: both domains finish at t=4
        assert_eq!(plan.last().unwrap().at, 4.0);
        assert_eq!(plan.iter().filter(|d| d.at == 0.0).count(), 2);
    }
}
