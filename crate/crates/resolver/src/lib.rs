//! Following shared links to the page they end up at.
//!
//! [`Resolver`] walks HTTP, meta-refresh and script-driven redirect chains,
//! pacing every fetch through a per-domain AIMD [`Governor`]. Results land in
//! a [`MappingStore`] so later visitors skip the walk.

pub mod cache;
pub mod classify;
pub mod fetch;
pub mod google_news;
pub mod governor;
#[cfg(feature = "mock")]
pub mod mock;
pub mod resolve;
pub mod schedule;

pub use cache::{
    CacheError, MappingStore, MemoryMappingCache, RedirectMapping, DEFAULT_MAPPING_TTL,
};
pub use classify::{classify_redirect, ClassifyError, ExtractorRegistry, RedirectKind};
pub use fetch::{FetchError, Fetched, Fetcher, HttpFetcher, HttpFetcherConfig};
pub use governor::{
    adjust_rate, AimdConfig, DomainPacer, DomainRateState, Governor, RateOutcome, ResponseClass,
};
pub use resolve::{Hop, ResolutionResult, ResolveError, Resolver, DEFAULT_MAX_DEPTH};
pub use schedule::{plan_dispatch, schedule_batches, Batch, Dispatch};
