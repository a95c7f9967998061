//! Per-domain request pacing with AIMD rate adaptation.
//!
//! Each domain gets a request rate. Every `success_window` consecutive
//! responses that were not rate-limited raise it by `increase` req/s; a
//! rate-limited response multiplies it by `decrease`. The rate is clamped
//! to `[floor, ceiling]`.
//!
//! [`DomainPacer`] holds the arithmetic and works on any clock expressed as
//! seconds since an arbitrary origin, so the same code drives the real
//! [`Governor`] and virtual-clock simulations.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use chrono::Utc;
use serde::{Deserialize, Serialize};
use tokio::time::Instant;
use trustnet_core::Timestamp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AimdConfig {
    /// Additive increase, req/s.
    pub increase: f64,
    /// Multiplicative decrease factor.
    pub decrease: f64,
    pub initial_rate: f64,
    pub floor: f64,
    pub ceiling: f64,
    /// Consecutive non-limited responses that count as one success window.
    pub success_window: u32,
}

impl Default for AimdConfig {
    fn default() -> Self {
        AimdConfig {
            increase: 0.5,
            decrease: 0.5,
            initial_rate: 1.0,
            floor: 0.25,
            ceiling: 8.0,
            success_window: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RateOutcome {
    SuccessWindow,
    RateLimited,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DomainRateState {
    pub domain: String,
    pub rate_per_sec: f64,
    pub floor: f64,
    pub ceiling: f64,
    pub last_adjusted_at: Timestamp,
}

impl DomainRateState {
    pub fn new(domain: impl Into<String>, config: &AimdConfig, now: Timestamp) -> Self {
        DomainRateState {
            domain: domain.into(),
            rate_per_sec: config.initial_rate.clamp(config.floor, config.ceiling),
            floor: config.floor,
            ceiling: config.ceiling,
            last_adjusted_at: now,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.floor > 0.0 && self.floor <= self.rate_per_sec && self.rate_per_sec <= self.ceiling
    }
}

/// One AIMD step.
pub fn adjust_rate(
    state: &DomainRateState,
    outcome: RateOutcome,
    config: &AimdConfig,
    now: Timestamp,
) -> DomainRateState {
    let rate = match outcome {
        RateOutcome::SuccessWindow => (state.rate_per_sec + config.increase).min(state.ceiling),
        RateOutcome::RateLimited => (state.rate_per_sec * config.decrease).max(state.floor),
    };
    DomainRateState {
        rate_per_sec: rate,
        last_adjusted_at: now,
        ..state.clone()
    }
}

/// How a response bears on the domain's rate limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResponseClass {
    Accepted,
    /// 429, or 503 with `Retry-After`. Carries the server's hint if any.
    RateLimited {
        retry_after: Option<Duration>,
    },
}

impl ResponseClass {
    pub fn from_status(status: u16, retry_after: Option<&str>) -> Self {
        let hint = retry_after
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        match status {
            429 => ResponseClass::RateLimited { retry_after: hint },
            503 if retry_after.is_some() => ResponseClass::RateLimited { retry_after: hint },
            _ => ResponseClass::Accepted,
        }
    }
}

/// Longest `Retry-After` honoured when pushing back the next slot.
const MAX_RETRY_AFTER: f64 = 60.0;

/// Pacing and AIMD bookkeeping for one domain, on an abstract clock in seconds.
#[derive(Debug, Clone)]
pub struct DomainPacer {
    state: DomainRateState,
    config: AimdConfig,
    streak: u32,
    next_slot: f64,
}

impl DomainPacer {
    pub fn new(state: DomainRateState, config: AimdConfig) -> Self {
        DomainPacer {
            state,
            config,
            streak: 0,
            next_slot: f64::NEG_INFINITY,
        }
    }

    pub fn state(&self) -> &DomainRateState {
        &self.state
    }

    /// Claims the next send slot at or after `now`; returns its time.
    pub fn reserve(&mut self, now: f64) -> f64 {
        let slot = now.max(self.next_slot);
        self.next_slot = slot + 1.0 / self.state.rate_per_sec;
        slot
    }

    /// Feeds one response back. Returns the outcome if the rate changed.
    pub fn record(
        &mut self,
        class: ResponseClass,
        now: f64,
        wall: Timestamp,
    ) -> Option<RateOutcome> {
        match class {
            ResponseClass::Accepted => {
                self.streak += 1;
                if self.streak >= self.config.success_window {
                    self.streak = 0;
                    self.state =
                        adjust_rate(&self.state, RateOutcome::SuccessWindow, &self.config, wall);
                    return Some(RateOutcome::SuccessWindow);
                }
                None
            }
            ResponseClass::RateLimited { retry_after } => {
                self.streak = 0;
                self.state = adjust_rate(&self.state, RateOutcome::RateLimited, &self.config, wall);
                let spacing = 1.0 / self.state.rate_per_sec;
                let backoff = retry_after.map_or(0.0, |d| d.as_secs_f64().min(MAX_RETRY_AFTER));
                self.next_slot = self.next_slot.max(now + spacing.max(backoff));
                Some(RateOutcome::RateLimited)
            }
        }
    }
}

/// Shared per-domain pacing for concurrent fetchers. Token grants for one
/// domain are serialized; different domains never wait on each other.
#[derive(Debug)]
pub struct Governor {
    config: AimdConfig,
    origin: Instant,
    domains: Mutex<HashMap<String, DomainPacer>>,
}

impl Default for Governor {
    fn default() -> Self {
        Governor::new(AimdConfig::default())
    }
}

impl Governor {
    pub fn new(config: AimdConfig) -> Self {
        Governor {
            config,
            origin: Instant::now(),
            domains: Mutex::new(HashMap::new()),
        }
    }

    pub fn config(&self) -> &AimdConfig {
        &self.config
    }

    fn clock(&self) -> f64 {
        self.origin.elapsed().as_secs_f64()
    }

    fn with_pacer<T>(&self, domain: &str, f: impl FnOnce(&mut DomainPacer) -> T) -> T {
        let mut domains = self.domains.lock().expect("governor lock poisoned");
        let pacer = domains.entry(domain.to_string()).or_insert_with(|| {
            DomainPacer::new(
                DomainRateState::new(domain, &self.config, Utc::now()),
                self.config.clone(),
            )
        });
        f(pacer)
    }

    /// Waits until `domain` may be fetched again.
    pub async fn acquire(&self, domain: &str) {
        let now = self.clock();
        let slot = self.with_pacer(domain, |p| p.reserve(now));
        if slot > now {
            tokio::time::sleep_until(self.origin + Duration::from_secs_f64(slot)).await;
        }
    }

    pub fn record(&self, domain: &str, class: ResponseClass) -> Option<RateOutcome> {
        let now = self.clock();
        self.with_pacer(domain, |p| p.record(class, now, Utc::now()))
    }

    pub fn state(&self, domain: &str) -> Option<DomainRateState> {
        let domains = self.domains.lock().expect("governor lock poisoned");
        domains.get(domain).map(|p| p.state().clone())
    }

    pub fn snapshot(&self) -> Vec<DomainRateState> {
        let domains = self.domains.lock().expect("governor lock poisoned");
        let mut out: Vec<_> = domains.values().map(|p| p.state().clone()).collect();
        out.sort_by(|a, b| a.domain.cmp(&b.domain));
        out
    }

    /// Seeds domains with previously learned rates.
    pub fn restore(&self, states: impl IntoIterator<Item = DomainRateState>) {
        let mut domains = self.domains.lock().expect("governor lock poisoned");
        for state in states.into_iter().filter(DomainRateState::is_valid) {
            domains.insert(
                state.domain.clone(),
                DomainPacer::new(state, self.config.clone()),
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(rate: f64, floor: f64) -> DomainRateState {
        DomainRateState {
            domain: "d.example".into(),
            rate_per_sec: rate,
            floor,
            ceiling: 8.0,
            last_adjusted_at: Utc::now(),
        }
    }

    #[test]
    fn additive_increase() {
        let s = adjust_rate(
            &state(2.0, 0.25),
            RateOutcome::SuccessWindow,
            &AimdConfig::default(),
            Utc::now(),
        );
        assert_eq!(s.rate_per_sec, 2.5);
    }

    #[test]
    fn multiplicative_decrease() {
        let s = adjust_rate(
            &state(4.0, 0.25),
            RateOutcome::RateLimited,
            &AimdConfig::default(),
            Utc::now(),
        );
        assert_eq!(s.rate_per_sec, 2.0);
    }

    #[test]
    fn clamped_to_floor_and_ceiling() {
        let cfg = AimdConfig::default();
        let s = adjust_rate(
            &state(0.4, 0.25),
            RateOutcome::RateLimited,
            &cfg,
            Utc::now(),
        );
        assert_eq!(s.rate_per_sec, 0.25);
        let s = adjust_rate(
            &state(7.8, 0.25),
            RateOutcome::SuccessWindow,
            &cfg,
            Utc::now(),
        );
        assert_eq!(s.rate_per_sec, 8.0);
    }

    #[test]
    fn response_classes() {
        assert_eq!(
            ResponseClass::from_status(200, None),
            ResponseClass::Accepted
        );
        assert_eq!(
            ResponseClass::from_status(429, None),
            ResponseClass::RateLimited { retry_after: None }
        );
        assert_eq!(
            ResponseClass::from_status(503, None),
            ResponseClass::Accepted
        );
        assert_eq!(
            ResponseClass::from_status(503, Some("7")),
            ResponseClass::RateLimited {
                retry_after: Some(Duration::from_secs(7))
            }
        );
    }

    #[test]
    fn pacer_spaces_requests_and_counts_windows() {
        let cfg = AimdConfig::default();
        let mut p = DomainPacer::new(DomainRateState::new("d", &cfg, Utc::now()), cfg.clone());
        let slots: Vec<f64> = (0..3).map(|_| p.reserve(0.0)).collect();
        assert_eq!(slots, vec![0.0, 1.0, 2.0]);
        for i in 0..19 {
            assert_eq!(
                p.record(ResponseClass::Accepted, i as f64, Utc::now()),
                None
            );
        }
        assert_eq!(
            p.record(ResponseClass::Accepted, 20.0, Utc::now()),
            Some(RateOutcome::SuccessWindow)
        );
        assert_eq!(p.state().rate_per_sec, 1.5);
        // a limited response resets the streak
        p.record(
            ResponseClass::RateLimited { retry_after: None },
            21.0,
            Utc::now(),
        );
        assert_eq!(p.state().rate_per_sec, 0.75);
        for i in 0..19 {
            p.record(ResponseClass::Accepted, 22.0 + i as f64, Utc::now());
        }
        assert_eq!(p.state().rate_per_sec, 0.75);
    }

    #[test]
    fn retry_after_pushes_next_slot() {
        let cfg = AimdConfig::default();
        let mut p = DomainPacer::new(DomainRateState::new("d", &cfg, Utc::now()), cfg);
        p.reserve(0.0);
        p.record(
            ResponseClass::RateLimited {
                retry_after: Some(Duration::from_secs(30)),
            },
            0.5,
            Utc::now(),
        );
        assert!(p.reserve(0.6) >= 30.5);
    }

    #[tokio::test(start_paused = true)]
    async fn governor_paces_per_domain() {
        let gov = Governor::new(AimdConfig {
            initial_rate: 2.0,
            ..AimdConfig::default()
        });
        let start = Instant::now();
        for _ in 0..5 {
            gov.acquire("a.example").await;
        }
        // five grants at 2/s: the fifth lands at t = 2 s
        assert_eq!(start.elapsed(), Duration::from_secs(2));
        let before = Instant::now();
        gov.acquire("b.example").await;
        assert_eq!(before.elapsed(), Duration::ZERO);
        assert_eq!(gov.snapshot().len(), 2);
    }

    #[test]
    fn restore_ignores_invalid_states() {
        let gov = Governor::default();
        let mut bad = state(10.0, 0.25);
        bad.domain = "bad".into();
        gov.restore([state(3.0, 0.25), bad]);
        assert_eq!(gov.state("d.example").unwrap().rate_per_sec, 3.0);
        assert!(gov.state("bad").is_none());
    }
}
