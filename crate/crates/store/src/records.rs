//! Newline-delimited JSON export and import, one record per line.
//!
//! The first line is a `meta` record carrying the schema version. Sources
//! come before anything that references them, so a file can be imported in
//! a single pass.

use std::io::{BufRead, Write};

use rusqlite::params;
use serde::{Deserialize, Serialize};
use trustnet_core::{Assessment, Question, RelationSet, ShareItem, Source};
use trustnet_resolver::{DomainRateState, RedirectMapping};

use crate::mappings::mapping_row;
use crate::schema::CURRENT_SCHEMA_VERSION;
use crate::{apply, insert_domain_rate, read_domain_rates, Mutation, Store, StoreError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SourceRecord {
    #[serde(flatten)]
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub password_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Record {
    Meta { schema_version: u32 },
    Source(SourceRecord),
    Relations(RelationSet),
    Assessment(Assessment),
    Question(Question),
    Share(ShareItem),
    Mapping(RedirectMapping),
    DomainRate(DomainRateState),
}

impl Record {
    /// Mutation that writes this record, if it is community data.
    pub fn into_mutations(self) -> Vec<Mutation> {
        match self {
            Record::Source(r) => vec![Mutation::CreateSource {
                source: r.source,
                password_hash: r.password_hash,
            }],
            Record::Relations(set) => vec![
                Mutation::ReplaceTrusted {
                    owner: set.owner_id.clone(),
                    ids: set.trusted,
                },
                Mutation::ReplaceFollowed {
                    owner: set.owner_id,
                    ids: set.followed,
                },
            ],
            Record::Assessment(a) => vec![Mutation::PutAssessment(a)],
            Record::Question(q) => vec![Mutation::AddQuestion(q)],
            Record::Share(s) => vec![Mutation::AddShare(s)],
            Record::Meta { .. } | Record::Mapping(_) | Record::DomainRate(_) => Vec::new(),
        }
    }
}

impl Store {
    /// Every record in the store, dependencies first. Only live assessments
    /// are exported; password hashes are included so accounts survive a
    /// round trip.
    pub fn export_records(&self) -> Result<Vec<Record>, StoreError> {
        let community = self.snapshot()?;
        let mut out = vec![Record::Meta {
            schema_version: CURRENT_SCHEMA_VERSION,
        }];
        for source in community.sources() {
            let password_hash = self.credentials(&source.username)?.and_then(|(_, h)| h);
            out.push(Record::Source(SourceRecord {
                source: source.clone(),
                password_hash,
            }));
        }
        out.extend(
            community
                .all_relations()
                .filter(|r| !r.trusted.is_empty() || !r.followed.is_empty())
                .cloned()
                .map(Record::Relations),
        );
        let mut assessments: Vec<&Assessment> = community.all_assessments().collect();
        assessments.sort_by(|a, b| (a.created_at, &a.id).cmp(&(b.created_at, &b.id)));
        out.extend(assessments.into_iter().cloned().map(Record::Assessment));
        let mut questions: Vec<&Question> = community.all_questions().collect();
        questions.sort_by(|a, b| (a.created_at, &a.id).cmp(&(b.created_at, &b.id)));
        out.extend(questions.into_iter().cloned().map(Record::Question));
        out.extend(community.all_shares().iter().cloned().map(Record::Share));

        let conn = self.lock()?;
        let mut stmt = conn.prepare(
            "SELECT original_key, target_key, created_at, last_requested_at FROM redirect_mappings
             ORDER BY original_key",
        )?;
        for m in stmt.query_map([], mapping_row)? {
            out.push(Record::Mapping(m?));
        }
        drop(stmt);
        out.extend(
            read_domain_rates(&conn)?
                .into_iter()
                .map(Record::DomainRate),
        );
        Ok(out)
    }

    /// Writes [`Store::export_records`] as NDJSON; returns the line count.
    pub fn export(&self, mut w: impl Write) -> Result<usize, StoreError> {
        let records = self.export_records()?;
        for r in &records {
            let line = serde_json::to_string(r).map_err(|e| StoreError::Invalid(e.to_string()))?;
            writeln!(w, "{line}").map_err(|e| StoreError::Unavailable(e.to_string()))?;
        }
        Ok(records.len())
    }

    /// Reads NDJSON records and applies them in one transaction. Blank lines
    /// are skipped. Returns the number of records applied.
    pub fn import(&self, r: impl BufRead) -> Result<usize, StoreError> {
        let mut records = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| StoreError::Import {
                line: i + 1,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let record: Record = serde_json::from_str(&line).map_err(|e| StoreError::Import {
                line: i + 1,
                message: e.to_string(),
            })?;
            if let Record::Meta { schema_version } = record {
                if schema_version > CURRENT_SCHEMA_VERSION {
                    return Err(StoreError::Import {
                        line: i + 1,
                        message: format!(
                            "records from schema version {schema_version} are not supported"
                        ),
                    });
                }
            }
            records.push((i + 1, record));
        }
        self.import_records(records)
    }

    /// Applies records in order inside one transaction; `line` numbers are
    /// used only for error reporting.
    pub fn import_records(&self, records: Vec<(usize, Record)>) -> Result<usize, StoreError> {
        let mut conn = self.lock()?;
        let tx = conn.transaction_with_behavior(rusqlite::TransactionBehavior::Immediate)?;
        let count = records.len();
        let at_line = |line: usize, e: StoreError| StoreError::Import {
            line,
            message: e.to_string(),
        };
        for (line, record) in records {
            match record {
                Record::Mapping(m) => {
                    if m.original_key == m.target_key {
                        return Err(at_line(
                            line,
                            StoreError::ConstraintViolation("self_mapping".into()),
                        ));
                    }
                    tx.execute(
                        "INSERT OR REPLACE INTO redirect_mappings (original_key, target_key, created_at, last_requested_at)
                         VALUES (?1, ?2, ?3, ?4)",
                        params![m.original_key.as_str(), m.target_key.as_str(), m.created_at, m.last_requested_at],
                    )
                    .map_err(|e| at_line(line, e.into()))?;
                }
                Record::DomainRate(s) => {
                    insert_domain_rate(&tx, &s).map_err(|e| at_line(line, e))?
                }
                other => {
                    for m in other.into_mutations() {
                        apply(&tx, m).map_err(|e| at_line(line, e))?;
                    }
                }
            }
        }
        tx.commit()?;
        Ok(count)
    }
}
