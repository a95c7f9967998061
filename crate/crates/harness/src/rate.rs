//! Virtual-clock simulation of one domain's rate limit against the pacer.

use std::time::Duration;

use serde::Serialize;
use thiserror::Error;
use trustnet_resolver::{AimdConfig, DomainPacer, DomainRateState, ResponseClass};

use crate::world::epoch;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("domain limit must be a positive number of requests per second, got {0}")]
    InvalidLimit(f64),
    #[error("invalid governor config: {0}")]
    InvalidConfig(&'static str),
}

/// A domain that admits at most `limit` requests per second: a token bucket
/// holding one request's worth, refilled continuously.
#[derive(Debug, Clone)]
pub struct DomainLimit {
    limit: f64,
    tokens: f64,
    last: f64,
}

// absorbs float error when requests arrive exactly at 1/limit spacing
const EPSILON: f64 = 1e-9;

impl DomainLimit {
    pub fn new(limit: f64) -> Self {
        DomainLimit {
            limit,
            tokens: 1.0,
            last: 0.0,
        }
    }

    /// True if a request at time `t` (seconds, non-decreasing) is admitted.
    pub fn admit(&mut self, t: f64) -> bool {
        self.tokens = (self.tokens + (t - self.last) * self.limit).min(1.0);
        self.last = t;
        if self.tokens >= 1.0 - EPSILON {
            self.tokens -= 1.0;
            true
        } else {
            false
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RateSample {
    /// Start of the one-second bucket.
    pub t: u32,
    pub sent: u32,
    pub limited: u32,
    /// Governor rate at the end of the bucket.
    pub rate: f64,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RateTrace {
    pub limit: f64,
    pub duration_secs: f64,
    pub samples: Vec<RateSample>,
    pub sent_count: u64,
    pub limited_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SteadyState {
    pub from_secs: f64,
    /// Requests sent per second, rejected ones included.
    pub sent_rate: f64,
    pub accepted_rate: f64,
    pub limited_fraction: f64,
    pub min_governor_rate: f64,
    pub max_governor_rate: f64,
}

impl RateTrace {
    /// Averages over the samples from `warmup` to the end.
    pub fn steady_state(&self, warmup: Duration) -> SteadyState {
        let from = warmup.as_secs_f64();
        let tail: Vec<&RateSample> = self
            .samples
            .iter()
            .filter(|s| f64::from(s.t) >= from)
            .collect();
        let secs = tail.len().max(1) as f64;
        let sent: u32 = tail.iter().map(|s| s.sent).sum();
        let limited: u32 = tail.iter().map(|s| s.limited).sum();
        SteadyState {
            from_secs: from,
            sent_rate: f64::from(sent) / secs,
            accepted_rate: f64::from(sent - limited) / secs,
            limited_fraction: if sent == 0 {
                0.0
            } else {
                f64::from(limited) / f64::from(sent)
            },
            min_governor_rate: tail.iter().map(|s| s.rate).fold(f64::INFINITY, f64::min),
            max_governor_rate: tail.iter().map(|s| s.rate).fold(0.0, f64::max),
        }
    }
}

/// Sends requests to one domain as fast as the pacer allows for `duration`
/// of simulated time. The domain rejects anything above `domain_limit`;
/// each answer is fed back to the pacer, which adapts its rate.
pub fn simulate_rate(
    domain_limit: f64,
    duration: Duration,
    config: &AimdConfig,
) -> Result<RateTrace, SimError> {
    if !(domain_limit.is_finite() && domain_limit > 0.0) {
        return Err(SimError::InvalidLimit(domain_limit));
    }
    if !(config.floor > 0.0 && config.floor <= config.ceiling) {
        return Err(SimError::InvalidConfig("need 0 < floor <= ceiling"));
    }
    if !(config.decrease > 0.0 && config.decrease < 1.0) {
        return Err(SimError::InvalidConfig("decrease must be in (0, 1)"));
    }

    let end = duration.as_secs_f64();
    let buckets = end.ceil() as usize;
    let mut samples: Vec<RateSample> = (0..buckets)
        .map(|t| RateSample {
            t: t as u32,
            sent: 0,
            limited: 0,
            rate: 0.0,
        })
        .collect();
    let mut pacer = DomainPacer::new(
        DomainRateState::new("sim.example", config, epoch()),
        config.clone(),
    );
    let mut domain = DomainLimit::new(domain_limit);
    let (mut sent, mut limited) = (0u64, 0u64);
    let mut now = 0.0;

    loop {
        let t = pacer.reserve(now);
        if t >= end {
            break;
        }
        let bucket = &mut samples[t as usize];
        bucket.sent += 1;
        sent += 1;
        let class = if domain.admit(t) {
            ResponseClass::Accepted
        } else {
            bucket.limited += 1;
            limited += 1;
            ResponseClass::RateLimited { retry_after: None }
        };
        let wall = epoch() + chrono::Duration::milliseconds((t * 1000.0) as i64);
        pacer.record(class, t, wall);
        samples[t as usize].rate = pacer.state().rate_per_sec;
        now = t;
    }

    // buckets with no send still report the rate in force
    let mut rate = config.initial_rate.clamp(config.floor, config.ceiling);
    for s in &mut samples {
        if s.sent == 0 {
            s.rate = rate;
        }
        rate = s.rate;
    }

    Ok(RateTrace {
        limit: domain_limit,
        duration_secs: end,
        samples,
        sent_count: sent,
        limited_count: limited,
    })
}
