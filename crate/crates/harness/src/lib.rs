//! Desk-scale verification and operations tooling.
//!
//! * [`world`]: seeded community snapshots and their record files,
//! * [`oracle`] and [`check`]: a brute-force restatement of the per-viewer
//!   rules and the differential sweep against the core model,
//! * [`rate`]: virtual-clock simulation of the per-domain pacer,
//! * [`corpus`] and [`fuzz`]: canonicalization checks,
//! * [`seed`]: loading a world into a running service over HTTP.

pub mod check;
pub mod corpus;
pub mod fuzz;
pub mod oracle;
pub mod rate;
pub mod seed;
pub mod world;

pub use check::{check_oracle, check_world, exhaustive, random_worlds, Mismatch, OracleReport};
pub use corpus::{run_corpus, run_corpus_text, CorpusError, CorpusFailure, CorpusReport};
pub use fuzz::{check_idempotence, fuzz_urls, IdempotenceFailure};
pub use oracle::{oracle_status, oracle_visible_questions};
pub use rate::{simulate_rate, DomainLimit, RateSample, RateTrace, SimError, SteadyState};
pub use seed::{seed_world, ApiClient, SeedError, SeedReport, SeededAccount, SEED_PASSWORD};
pub use world::{gen_world, World, WorldError, WorldParams};

/// The corpus shipped with this crate.
pub fn shipped_corpus() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus/canonical.tsv")
}
