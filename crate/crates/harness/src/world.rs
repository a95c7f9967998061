//! Seeded community snapshots for differential checks and seeding.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use chrono::{TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use trustnet_core::{
    Assessment, Community, ModelError, Question, RelationSet, ShareItem, Source, SourceId,
    Timestamp, UrlKey, Verdict,
};
use trustnet_store::{Record, SourceRecord};

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("inconsistent world: {0}")]
    Model(#[from] ModelError),
}

/// A complete community snapshot. Assessments are the live ones only.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct World {
    pub seed: u64,
    pub sources: Vec<Source>,
    pub relations: Vec<RelationSet>,
    pub assessments: Vec<Assessment>,
    pub questions: Vec<Question>,
    pub shares: Vec<ShareItem>,
}

#[derive(Debug, Clone)]
pub struct WorldParams {
    pub max_sources: usize,
    pub max_pages: usize,
    pub max_assessments_per_page: usize,
    pub max_questions_per_page: usize,
    pub trust_probability: f64,
    pub follow_probability: f64,
    /// Chance that a page also carries an assessment by a source that no
    /// longer exists.
    pub orphan_probability: f64,
}

impl Default for WorldParams {
    fn default() -> Self {
        WorldParams {
            max_sources: 8,
            max_pages: 3,
            max_assessments_per_page: 6,
            max_questions_per_page: 3,
            trust_probability: 0.3,
            follow_probability: 0.3,
            orphan_probability: 0.05,
        }
    }
}

/// The id of an assessor that does not exist in any generated world.
pub const ORPHAN_ID: &str = "departed";

pub fn epoch() -> Timestamp {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
}

pub fn at(secs: i64) -> Timestamp {
    epoch() + chrono::Duration::seconds(secs)
}

pub fn source_id(i: usize) -> SourceId {
    SourceId::new(format!("s{i}"))
}

pub fn source(i: usize) -> Source {
    Source {
        id: source_id(i),
        username: format!("user{i}"),
        display_name: format!("Source {i}"),
        created_at: at(i as i64),
    }
}

pub fn page(i: usize) -> UrlKey {
    UrlKey::from_canonical(format!("https://news.example/story/{i}"))
}

/// Generates a consistent world; the same seed and params always give the
/// same world.
pub fn gen_world(seed: u64, params: &WorldParams) -> World {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=params.max_sources.max(1));
    let sources: Vec<Source> = (0..n).map(source).collect();

    let relations = (0..n)
        .map(|i| {
            let mut set = RelationSet::new(source_id(i));
            for j in (0..n).filter(|&j| j != i) {
                if rng.random_bool(params.trust_probability) {
                    set.trusted.insert(source_id(j));
                }
                if rng.random_bool(params.follow_probability) {
                    set.followed.insert(source_id(j));
                }
            }
            set
        })
        .collect();

    let mut assessments = Vec::new();
    let mut questions = Vec::new();
    let mut clock = 1_000i64;
    let pages = rng.random_range(1..=params.max_pages.max(1));
    for p in 0..pages {
        let key = page(p);
        let count = rng.random_range(0..=params.max_assessments_per_page.min(n));
        let mut assessors: Vec<usize> = (0..n).collect();
        for i in 0..count {
            let pick = rng.random_range(i..n);
            assessors.swap(i, pick);
        }
        let mut ids: Vec<SourceId> = assessors[..count].iter().map(|&i| source_id(i)).collect();
        if rng.random_bool(params.orphan_probability) {
            ids.push(SourceId::new(ORPHAN_ID));
        }
        for assessor in ids {
            clock += rng.random_range(1..600);
            let verdict = if rng.random_bool(0.5) {
                Verdict::Accurate
            } else {
                Verdict::Inaccurate
            };
            assessments.push(Assessment {
                id: format!("a{}", assessments.len()).as_str().into(),
                assessor_id: assessor,
                url_key: key.clone(),
                verdict,
                rationale: rng.random_bool(0.3).then(|| format!("note {clock}")),
                created_at: at(clock),
                updated_at: at(clock + rng.random_range(0..100)),
            });
        }
        let q = rng.random_range(0..=params.max_questions_per_page);
        for _ in 0..q {
            clock += rng.random_range(1..600);
            let asker = rng.random_range(0..n);
            let others: Vec<usize> = (0..n).filter(|&j| j != asker).collect();
            let targets = if !others.is_empty() && rng.random_bool(0.4) {
                let mut t: BTreeSet<SourceId> = others
                    .iter()
                    .filter(|_| rng.random_bool(0.5))
                    .map(|&j| source_id(j))
                    .collect();
                if t.is_empty() {
                    t.insert(source_id(others[rng.random_range(0..others.len())]));
                }
                Some(t)
            } else {
                None
            };
            questions.push(Question {
                id: format!("q{}", questions.len()).as_str().into(),
                asker_id: source_id(asker),
                url_key: key.clone(),
                body: rng
                    .random_bool(0.7)
                    .then(|| "Is this accurate?".to_string()),
                anonymous: rng.random_bool(0.5),
                targets,
                created_at: at(clock),
            });
        }
    }

    World {
        seed,
        sources,
        relations,
        assessments,
        questions,
        shares: Vec::new(),
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Header {
    World { seed: u64 },
}

impl World {
    /// Distinct pages that carry any assessment or question.
    pub fn pages(&self) -> Vec<UrlKey> {
        let keys: BTreeSet<&UrlKey> = self
            .assessments
            .iter()
            .map(|a| &a.url_key)
            .chain(self.questions.iter().map(|q| &q.url_key))
            .collect();
        keys.into_iter().cloned().collect()
    }

    /// Loads the world into the core model, checking every invariant on the way.
    pub fn community(&self) -> Result<Community, ModelError> {
        let mut c = Community::new();
        for s in &self.sources {
            c.insert_source(s.clone())?;
        }
        for r in &self.relations {
            c.set_relations(r.clone())?;
        }
        for a in &self.assessments {
            c.insert_assessment(a.clone());
        }
        for q in &self.questions {
            c.insert_question(q.clone())?;
        }
        for s in &self.shares {
            c.insert_share(s.clone())?;
        }
        Ok(c)
    }

    /// Store records; importable with the store's `import`.
    pub fn to_records(&self) -> Vec<Record> {
        let mut out: Vec<Record> = self
            .sources
            .iter()
            .map(|s| {
                Record::Source(SourceRecord {
                    source: s.clone(),
                    password_hash: None,
                })
            })
            .collect();
        out.extend(self.relations.iter().cloned().map(Record::Relations));
        out.extend(
            self.assessments
                .iter()
                .filter(|a| self.sources.iter().any(|s| s.id == a.assessor_id))
                .cloned()
                .map(Record::Assessment),
        );
        out.extend(self.questions.iter().cloned().map(Record::Question));
        out.extend(self.shares.iter().cloned().map(Record::Share));
        out
    }

    /// One JSON object per line: a `world` header with the seed, then records.
    pub fn write_ndjson<W: Write>(&self, mut out: W) -> Result<(), WorldError> {
        let header = Header::World { seed: self.seed };
        writeln!(
            out,
            "{}",
            serde_json::to_string(&header).expect("header serializes")
        )?;
        for record in self.to_records() {
            writeln!(
                out,
                "{}",
                serde_json::to_string(&record).expect("records serialize")
            )?;
        }
        // orphaned assessments are not importable into a store but belong to the world
        for a in self
            .assessments
            .iter()
            .filter(|a| !self.sources.iter().any(|s| s.id == a.assessor_id))
        {
            writeln!(
                out,
                "{}",
                serde_json::to_string(&Record::Assessment(a.clone())).expect("records serialize")
            )?;
        }
        Ok(())
    }

    pub fn to_ndjson(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_ndjson(&mut buf).expect("writing to memory");
        buf
    }

    pub fn read_ndjson<R: BufRead>(input: R) -> Result<World, WorldError> {
        let mut world = World::default();
        for (idx, line) in input.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |e: serde_json::Error| WorldError::Parse {
                line: line_no,
                message: e.to_string(),
            };
            if idx == 0 {
                if let Ok(Header::World { seed }) = serde_json::from_str::<Header>(&line) {
                    world.seed = seed;
                    continue;
                }
            }
            match serde_json::from_str::<Record>(&line).map_err(parse_err)? {
                Record::Source(r) => world.sources.push(r.source),
                Record::Relations(r) => world.relations.push(r),
                Record::Assessment(a) => world.assessments.push(a),
                Record::Question(q) => world.questions.push(q),
                Record::Share(s) => world.shares.push(s),
                Record::Meta { .. } | Record::Mapping(_) | Record::DomainRate(_) => {}
            }
        }
        Ok(world)
    }
}
