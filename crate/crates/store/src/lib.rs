//! Durable storage on an embedded SQLite database.
//!
//! Writes go through [`Store::transact`], which applies a list of
//! [`Mutation`]s all-or-nothing. Reads hand back a [`Community`] snapshot for
//! the core rules to evaluate, or small lookups the API needs directly.

mod mappings;
mod records;
mod schema;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};
use std::time::Duration;

use rusqlite::{
    params, Connection, ErrorCode, OptionalExtension, Transaction, TransactionBehavior,
};
use thiserror::Error;
use trustnet_core::{
    Assessment, AssessmentId, Community, Question, QuestionId, RelationSet, ShareId, ShareItem,
    Source, SourceId, Timestamp, UrlKey, Verdict,
};
use trustnet_resolver::DomainRateState;

pub use records::{Record, SourceRecord};
pub use schema::CURRENT_SCHEMA_VERSION;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    /// Unreadable, corrupt, or newer-than-supported database.
    #[error("schema: {0}")]
    Schema(String),
    #[error("constraint violated: {0}")]
    ConstraintViolation(String),
    #[error("invalid data: {0}")]
    Invalid(String),
    #[error("storage unavailable: {0}")]
    Unavailable(String),
    #[error("line {line}: {message}")]
    Import { line: usize, message: String },
}

impl StoreError {
    /// Name of the violated constraint, if that is what went wrong.
    pub fn constraint(&self) -> Option<&str> {
        match self {
            StoreError::ConstraintViolation(name) => Some(name),
            _ => None,
        }
    }
}

/// Maps SQLite constraint failures to stable names.
fn constraint_name(message: &str) -> String {
    let message = message.trim();
    if message.starts_with("FOREIGN KEY") {
        return "source_fk".into();
    }
    if let Some(name) = message.strip_prefix("CHECK constraint failed: ") {
        return name.trim().to_string();
    }
    let columns = message
        .strip_prefix("UNIQUE constraint failed: ")
        .unwrap_or(message);
    match columns {
        "sources.username" => "username",
        "sources.id" => "source_id",
        "assessments.assessor_id, assessments.url_key" => "live_assessment",
        "assessments.id" => "assessment_id",
        "questions.id" => "question_id",
        "shares.id" => "share_id",
        "sessions.token_hash" => "session",
        other => return other.to_string(),
    }
    .into()
}

impl From<rusqlite::Error> for StoreError {
    fn from(e: rusqlite::Error) -> Self {
        match &e {
            rusqlite::Error::SqliteFailure(err, msg)
                if err.code == ErrorCode::ConstraintViolation =>
            {
                StoreError::ConstraintViolation(constraint_name(msg.as_deref().unwrap_or("")))
            }
            rusqlite::Error::SqliteFailure(err, _) if err.code == ErrorCode::NotADatabase => {
                StoreError::Schema(e.to_string())
            }
            _ => StoreError::Unavailable(e.to_string()),
        }
    }
}

/// One write inside a transaction.
#[derive(Debug, Clone)]
pub enum Mutation {
    CreateSource {
        source: Source,
        password_hash: Option<String>,
    },
    /// Replaces the owner's whole trusted set.
    ReplaceTrusted {
        owner: SourceId,
        ids: BTreeSet<SourceId>,
    },
    /// Replaces the owner's whole followed set.
    ReplaceFollowed {
        owner: SourceId,
        ids: BTreeSet<SourceId>,
    },
    /// Creates the assessor's live assessment of the page, or supersedes it.
    /// `fresh_id` is only used on creation.
    UpsertAssessment {
        assessor: SourceId,
        url_key: UrlKey,
        verdict: Verdict,
        rationale: Option<String>,
        fresh_id: AssessmentId,
        now: Timestamp,
    },
    /// Inserts an assessment row exactly as given (imports), superseding any
    /// live one for the same assessor and page.
    PutAssessment(Assessment),
    AddQuestion(Question),
    /// Requires a live assessment or question by the sharer on the page.
    AddShare(ShareItem),
    CreateSession {
        token_hash: String,
        source: SourceId,
        created_at: Timestamp,
        expires_at: Timestamp,
    },
    DeleteSession {
        token_hash: String,
    },
}

/// What a mutation produced, in input order.
#[derive(Debug, Clone, PartialEq)]
pub enum Applied {
    Done,
    Assessment(Assessment),
}

pub struct Store {
    conn: Mutex<Connection>,
    path: Option<PathBuf>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("path", &self.path).finish()
    }
}

fn verdict_str(v: Verdict) -> &'static str {
    match v {
        Verdict::Accurate => "accurate",
        Verdict::Inaccurate => "inaccurate",
    }
}

fn parse_verdict(s: &str) -> rusqlite::Result<Verdict> {
    match s {
        "accurate" => Ok(Verdict::Accurate),
        "inaccurate" => Ok(Verdict::Inaccurate),
        other => Err(rusqlite::Error::FromSqlConversionFailure(
            0,
            rusqlite::types::Type::Text,
            format!("unknown verdict {other:?}").into(),
        )),
    }
}

const ASSESSMENT_COLUMNS: &str =
    "id, assessor_id, url_key, verdict, rationale, created_at, updated_at";

fn assessment_row(r: &rusqlite::Row<'_>) -> rusqlite::Result<Assessment> {
    Ok(Assessment {
        id: AssessmentId::new(r.get::<_, String>(0)?),
        assessor_id: SourceId::new(r.get::<_, String>(1)?),
        url_key: UrlKey::from_canonical(r.get::<_, String>(2)?),
        verdict: parse_verdict(&r.get::<_, String>(3)?)?,
        rationale: r.get(4)?,
        created_at: r.get(5)?,
        updated_at: r.get(6)?,
    })
}

fn source_row(r: &rusqlite::Row<'_>) -> rusqlite::Result<Source> {
    Ok(Source {
        id: SourceId::new(r.get::<_, String>(0)?),
        username: r.get(1)?,
        display_name: r.get(2)?,
        created_at: r.get(3)?,
    })
}

impl Store {
    /// Opens (creating if needed) the database at `path` and migrates it to
    /// the current schema.
    pub fn open(path: impl AsRef<Path>) -> Result<Store, StoreError> {
        let path = path.as_ref();
        let conn = Connection::open(path).map_err(|e| StoreError::Schema(e.to_string()))?;
        Self::init(conn, Some(path.to_path_buf()))
    }

    pub fn open_in_memory() -> Result<Store, StoreError> {
        let conn =
            Connection::open_in_memory().map_err(|e| StoreError::Unavailable(e.to_string()))?;
        Self::init(conn, None)
    }

    fn init(mut conn: Connection, path: Option<PathBuf>) -> Result<Store, StoreError> {
        conn.busy_timeout(Duration::from_secs(5))?;
        conn.pragma_update(None, "foreign_keys", true)?;
        if path.is_some() {
            // journal_mode returns a row, so it cannot go through execute
            conn.query_row("PRAGMA journal_mode = WAL", [], |_| Ok(()))
                .map_err(|e| StoreError::Schema(e.to_string()))?;
        }
        schema::migrate(&mut conn)?;
        Ok(Store {
            conn: Mutex::new(conn),
            path,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    fn lock(&self) -> Result<MutexGuard<'_, Connection>, StoreError> {
        self.conn
            .lock()
            .map_err(|_| StoreError::Unavailable("connection lock poisoned".into()))
    }

    pub fn schema_version(&self) -> Result<u32, StoreError> {
        let conn = self.lock()?;
        schema::version(&conn)
    }

    /// Applies `ops` in order inside one transaction. Either every mutation
    /// lands or none does.
    pub fn transact(&self, ops: Vec<Mutation>) -> Result<Vec<Applied>, StoreError> {
        let mut conn = self.lock()?;
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        let mut applied = Vec::with_capacity(ops.len());
        for op in ops {
            applied.push(apply(&tx, op)?);
        }
        tx.commit()?;
        Ok(applied)
    }

    /// Everything, as one consistent snapshot.
    pub fn snapshot(&self) -> Result<Community, StoreError> {
        self.load(None)
    }

    /// Sources, relations and shares, plus assessments and questions on `keys`
    /// only. Enough to evaluate any per-page rule for those pages.
    pub fn snapshot_for_keys(&self, keys: &[UrlKey]) -> Result<Community, StoreError> {
        self.load(Some(keys))
    }

    fn load(&self, keys: Option<&[UrlKey]>) -> Result<Community, StoreError> {
        let mut conn = self.lock()?;
        let tx = conn.transaction()?;
        let mut community = Community::new();

        let mut stmt =
            tx.prepare("SELECT id, username, display_name, created_at FROM sources ORDER BY id")?;
        for source in stmt.query_map([], source_row)? {
            community
                .insert_source(source?)
                .map_err(|e| StoreError::Invalid(e.to_string()))?;
        }
        drop(stmt);

        let mut relations: BTreeMap<SourceId, RelationSet> = BTreeMap::new();
        for (table, trusted) in [("trust", true), ("follow", false)] {
            let mut stmt = tx.prepare(&format!("SELECT owner_id, target_id FROM {table}"))?;
            let rows =
                stmt.query_map([], |r| Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?)))?;
            for row in rows {
                let (owner, target) = row?;
                let owner = SourceId::new(owner);
                let set = relations
                    .entry(owner.clone())
                    .or_insert_with(|| RelationSet::new(owner));
                if trusted {
                    set.trusted.insert(SourceId::new(target));
                } else {
                    set.followed.insert(SourceId::new(target));
                }
            }
        }
        for set in relations.into_values() {
            community
                .set_relations(set)
                .map_err(|e| StoreError::Invalid(e.to_string()))?;
        }

        let key_filter: Option<BTreeSet<&str>> =
            keys.map(|ks| ks.iter().map(UrlKey::as_str).collect());
        let wanted = |k: &str| key_filter.as_ref().is_none_or(|f| f.contains(k));

        let mut stmt = tx.prepare(&format!(
            "SELECT {ASSESSMENT_COLUMNS} FROM assessments WHERE live = 1 ORDER BY seq"
        ))?;
        for a in stmt.query_map([], assessment_row)? {
            let a = a?;
            if wanted(a.url_key.as_str()) {
                community.insert_assessment(a);
            }
        }
        drop(stmt);

        for q in read_questions(&tx)? {
            if wanted(q.url_key.as_str()) {
                community
                    .insert_question(q)
                    .map_err(|e| StoreError::Invalid(e.to_string()))?;
            }
        }

        // Share preconditions are checked against what is loaded, so shares on
        // pages outside the key filter are skipped.
        let mut stmt = tx.prepare(
            "SELECT id, sharer_id, url_key, created_at FROM shares ORDER BY created_at, id",
        )?;
        let shares = stmt.query_map([], |r| {
            Ok(ShareItem {
                id: ShareId::new(r.get::<_, String>(0)?),
                sharer_id: SourceId::new(r.get::<_, String>(1)?),
                url_key: UrlKey::from_canonical(r.get::<_, String>(2)?),
                created_at: r.get(3)?,
            })
        })?;
        for share in shares {
            let share = share?;
            if wanted(share.url_key.as_str()) {
                community
                    .insert_share(share)
                    .map_err(|e| StoreError::Invalid(e.to_string()))?;
            }
        }
        drop(stmt);
        tx.commit()?;
        Ok(community)
    }

    pub fn source(&self, id: &SourceId) -> Result<Option<Source>, StoreError> {
        let conn = self.lock()?;
        Ok(conn
            .query_row(
                "SELECT id, username, display_name, created_at FROM sources WHERE id = ?1",
                [id.as_str()],
                source_row,
            )
            .optional()?)
    }

    /// The source with `username` and its stored password hash.
    pub fn credentials(
        &self,
        username: &str,
    ) -> Result<Option<(Source, Option<String>)>, StoreError> {
        let conn = self.lock()?;
        Ok(conn
            .query_row(
                "SELECT id, username, display_name, created_at, password_hash FROM sources WHERE username = ?1",
                [username],
                |r| Ok((source_row(r)?, r.get(4)?)),
            )
            .optional()?)
    }

    /// The owner's own relations. Nobody else's trust edges are readable.
    pub fn relations(&self, owner: &SourceId) -> Result<RelationSet, StoreError> {
        let conn = self.lock()?;
        let mut set = RelationSet::new(owner.clone());
        for (table, into) in [("trust", &mut set.trusted), ("follow", &mut set.followed)] {
            let mut stmt = conn.prepare(&format!(
                "SELECT target_id FROM {table} WHERE owner_id = ?1"
            ))?;
            for id in stmt.query_map([owner.as_str()], |r| r.get::<_, String>(0))? {
                into.insert(SourceId::new(id?));
            }
        }
        Ok(set)
    }

    /// How many sources trust `id`.
    pub fn trust_count(&self, id: &SourceId) -> Result<u32, StoreError> {
        let conn = self.lock()?;
        Ok(conn.query_row(
            "SELECT COUNT(*) FROM trust WHERE target_id = ?1",
            [id.as_str()],
            |r| r.get::<_, u32>(0),
        )?)
    }

    /// Every version of the assessor's assessment of a page, oldest first;
    /// the last one is live.
    pub fn assessment_history(
        &self,
        assessor: &SourceId,
        key: &UrlKey,
    ) -> Result<Vec<Assessment>, StoreError> {
        let conn = self.lock()?;
        let mut stmt = conn.prepare(&format!(
            "SELECT {ASSESSMENT_COLUMNS} FROM assessments WHERE assessor_id = ?1 AND url_key = ?2 ORDER BY seq"
        ))?;
        let rows = stmt.query_map([assessor.as_str(), key.as_str()], assessment_row)?;
        Ok(rows.collect::<Result<_, _>>()?)
    }

    /// Number of live rows for (assessor, page). Never more than one.
    pub fn live_assessment_count(
        &self,
        assessor: &SourceId,
        key: &UrlKey,
    ) -> Result<u32, StoreError> {
        let conn = self.lock()?;
        Ok(conn.query_row(
            "SELECT COUNT(*) FROM assessments WHERE assessor_id = ?1 AND url_key = ?2 AND live = 1",
            [assessor.as_str(), key.as_str()],
            |r| r.get(0),
        )?)
    }

    /// Subject of an unexpired session.
    pub fn session(
        &self,
        token_hash: &str,
        now: Timestamp,
    ) -> Result<Option<SourceId>, StoreError> {
        let conn = self.lock()?;
        let row: Option<(String, Timestamp)> = conn
            .query_row(
                "SELECT source_id, expires_at FROM sessions WHERE token_hash = ?1",
                [token_hash],
                |r| Ok((r.get(0)?, r.get(1)?)),
            )
            .optional()?;
        Ok(row
            .filter(|(_, expires)| *expires > now)
            .map(|(id, _)| SourceId::new(id)))
    }

    /// Drops expired sessions; returns how many.
    pub fn purge_sessions(&self, now: Timestamp) -> Result<usize, StoreError> {
        let conn = self.lock()?;
        Ok(conn.execute("DELETE FROM sessions WHERE expires_at <= ?1", [now])?)
    }

    /// Replaces the stored per-domain rates.
    pub fn save_domain_rates(&self, states: &[DomainRateState]) -> Result<(), StoreError> {
        let mut conn = self.lock()?;
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        tx.execute("DELETE FROM domain_rates", [])?;
        for s in states {
            insert_domain_rate(&tx, s)?;
        }
        tx.commit()?;
        Ok(())
    }

    pub fn load_domain_rates(&self) -> Result<Vec<DomainRateState>, StoreError> {
        let conn = self.lock()?;
        read_domain_rates(&conn)
    }
}

fn insert_domain_rate(tx: &Transaction<'_>, s: &DomainRateState) -> Result<(), StoreError> {
    tx.execute(
        "INSERT INTO domain_rates (domain, rate_per_sec, floor, ceiling, last_adjusted_at)
         VALUES (?1, ?2, ?3, ?4, ?5)
         ON CONFLICT(domain) DO UPDATE SET rate_per_sec = excluded.rate_per_sec, floor = excluded.floor,
             ceiling = excluded.ceiling, last_adjusted_at = excluded.last_adjusted_at",
        params![s.domain, s.rate_per_sec, s.floor, s.ceiling, s.last_adjusted_at],
    )?;
    Ok(())
}

fn read_domain_rates(conn: &Connection) -> Result<Vec<DomainRateState>, StoreError> {
    let mut stmt =
        conn.prepare("SELECT domain, rate_per_sec, floor, ceiling, last_adjusted_at FROM domain_rates ORDER BY domain")?;
    let rows = stmt.query_map([], |r| {
        Ok(DomainRateState {
            domain: r.get(0)?,
            rate_per_sec: r.get(1)?,
            floor: r.get(2)?,
            ceiling: r.get(3)?,
            last_adjusted_at: r.get(4)?,
        })
    })?;
    Ok(rows.collect::<Result<_, _>>()?)
}

fn read_questions(conn: &Connection) -> Result<Vec<Question>, StoreError> {
    let mut targets: BTreeMap<String, BTreeSet<SourceId>> = BTreeMap::new();
    let mut stmt = conn.prepare("SELECT question_id, target_id FROM question_targets")?;
    for row in stmt.query_map([], |r| Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?)))? {
        let (q, t) = row?;
        targets.entry(q).or_default().insert(SourceId::new(t));
    }
    let mut stmt = conn.prepare(
        "SELECT id, asker_id, url_key, body, anonymous, targeted, created_at FROM questions ORDER BY created_at, id",
    )?;
    let rows = stmt.query_map([], |r| {
        let id: String = r.get(0)?;
        let targeted: bool = r.get(5)?;
        Ok(Question {
            targets: targeted.then(|| targets.get(&id).cloned().unwrap_or_default()),
            id: QuestionId::new(id),
            asker_id: SourceId::new(r.get::<_, String>(1)?),
            url_key: UrlKey::from_canonical(r.get::<_, String>(2)?),
            body: r.get(3)?,
            anonymous: r.get(4)?,
            created_at: r.get(6)?,
        })
    })?;
    Ok(rows.collect::<Result<_, _>>()?)
}

fn replace_relation(
    tx: &Transaction<'_>,
    table: &str,
    owner: &SourceId,
    ids: &BTreeSet<SourceId>,
) -> Result<(), StoreError> {
    let exists: bool = tx.query_row(
        "SELECT EXISTS(SELECT 1 FROM sources WHERE id = ?1)",
        [owner.as_str()],
        |r| r.get(0),
    )?;
    if !exists {
        return Err(StoreError::ConstraintViolation("source_fk".into()));
    }
    tx.execute(
        &format!("DELETE FROM {table} WHERE owner_id = ?1"),
        [owner.as_str()],
    )?;
    let mut stmt = tx.prepare(&format!(
        "INSERT INTO {table} (owner_id, target_id) VALUES (?1, ?2)"
    ))?;
    for id in ids {
        stmt.execute([owner.as_str(), id.as_str()])?;
    }
    Ok(())
}

fn live_assessment(
    tx: &Transaction<'_>,
    assessor: &SourceId,
    key: &UrlKey,
) -> Result<Option<Assessment>, StoreError> {
    Ok(tx
        .query_row(
            &format!("SELECT {ASSESSMENT_COLUMNS} FROM assessments WHERE assessor_id = ?1 AND url_key = ?2 AND live = 1"),
            [assessor.as_str(), key.as_str()],
            assessment_row,
        )
        .optional()?)
}

fn insert_assessment(tx: &Transaction<'_>, a: &Assessment) -> Result<(), StoreError> {
    tx.execute(
        "UPDATE assessments SET live = 0 WHERE assessor_id = ?1 AND url_key = ?2 AND live = 1",
        [a.assessor_id.as_str(), a.url_key.as_str()],
    )?;
    tx.execute(
        "INSERT INTO assessments (id, assessor_id, url_key, verdict, rationale, created_at, updated_at, live)
         VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, 1)",
        params![
            a.id.as_str(),
            a.assessor_id.as_str(),
            a.url_key.as_str(),
            verdict_str(a.verdict),
            a.rationale,
            a.created_at,
            a.updated_at
        ],
    )?;
    Ok(())
}

fn apply(tx: &Transaction<'_>, op: Mutation) -> Result<Applied, StoreError> {
    match op {
        Mutation::CreateSource {
            source,
            password_hash,
        } => {
            tx.execute(
                "INSERT INTO sources (id, username, display_name, password_hash, created_at) VALUES (?1, ?2, ?3, ?4, ?5)",
                params![
                    source.id.as_str(),
                    source.username,
                    source.display_name,
                    password_hash,
                    source.created_at
                ],
            )?;
        }
        Mutation::ReplaceTrusted { owner, ids } => replace_relation(tx, "trust", &owner, &ids)?,
        Mutation::ReplaceFollowed { owner, ids } => replace_relation(tx, "follow", &owner, &ids)?,
        Mutation::UpsertAssessment {
            assessor,
            url_key,
            verdict,
            rationale,
            fresh_id,
            now,
        } => {
            let assessment = match live_assessment(tx, &assessor, &url_key)? {
                Some(prev) => Assessment {
                    verdict,
                    rationale,
                    updated_at: now.max(prev.created_at),
                    ..prev
                },
                None => Assessment {
                    id: fresh_id,
                    assessor_id: assessor,
                    url_key,
                    verdict,
                    rationale,
                    created_at: now,
                    updated_at: now,
                },
            };
            insert_assessment(tx, &assessment)?;
            return Ok(Applied::Assessment(assessment));
        }
        Mutation::PutAssessment(a) => {
            if a.updated_at < a.created_at {
                return Err(StoreError::ConstraintViolation(
                    "updated_after_created".into(),
                ));
            }
            insert_assessment(tx, &a)?;
            return Ok(Applied::Assessment(a));
        }
        Mutation::AddQuestion(q) => {
            q.validate()
                .map_err(|e| StoreError::Invalid(e.to_string()))?;
            tx.execute(
                "INSERT INTO questions (id, asker_id, url_key, body, anonymous, targeted, created_at)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7)",
                params![
                    q.id.as_str(),
                    q.asker_id.as_str(),
                    q.url_key.as_str(),
                    q.body,
                    q.anonymous,
                    q.targets.is_some(),
                    q.created_at
                ],
            )?;
            for t in q.targets.iter().flatten() {
                tx.execute(
                    "INSERT INTO question_targets (question_id, target_id) VALUES (?1, ?2)",
                    [q.id.as_str(), t.as_str()],
                )?;
            }
        }
        Mutation::AddShare(share) => {
            let eligible: bool = tx.query_row(
                "SELECT EXISTS(SELECT 1 FROM assessments WHERE assessor_id = ?1 AND url_key = ?2 AND live = 1)
                     OR EXISTS(SELECT 1 FROM questions WHERE asker_id = ?1 AND url_key = ?2)",
                [share.sharer_id.as_str(), share.url_key.as_str()],
                |r| r.get(0),
            )?;
            if !eligible {
                return Err(StoreError::ConstraintViolation("share_precondition".into()));
            }
            tx.execute(
                "INSERT INTO shares (id, sharer_id, url_key, created_at) VALUES (?1, ?2, ?3, ?4)",
                params![
                    share.id.as_str(),
                    share.sharer_id.as_str(),
                    share.url_key.as_str(),
                    share.created_at
                ],
            )?;
        }
        Mutation::CreateSession {
            token_hash,
            source,
            created_at,
            expires_at,
        } => {
            tx.execute(
                "INSERT INTO sessions (token_hash, source_id, created_at, expires_at) VALUES (?1, ?2, ?3, ?4)",
                params![token_hash, source.as_str(), created_at, expires_at],
            )?;
        }
        Mutation::DeleteSession { token_hash } => {
            tx.execute("DELETE FROM sessions WHERE token_hash = ?1", [token_hash])?;
        }
    }
    Ok(Applied::Done)
}
