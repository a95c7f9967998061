//! Schema creation and forward migrations, tracked in `PRAGMA user_version`.

use rusqlite::Connection;

use crate::StoreError;

pub const CURRENT_SCHEMA_VERSION: u32 = 2;

pub(crate) const V1: &str = r#"
CREATE TABLE sources (
    id            TEXT PRIMARY KEY,
    username      TEXT NOT NULL,
    display_name  TEXT NOT NULL,
    password_hash TEXT,
    created_at    TEXT NOT NULL
);
CREATE UNIQUE INDEX sources_username ON sources(username);

CREATE TABLE trust (
    owner_id  TEXT NOT NULL REFERENCES sources(id),
    target_id TEXT NOT NULL REFERENCES sources(id),
    PRIMARY KEY (owner_id, target_id),
    CONSTRAINT self_relation CHECK (owner_id <> target_id)
);
CREATE INDEX trust_target ON trust(target_id);

CREATE TABLE follow (
    owner_id  TEXT NOT NULL REFERENCES sources(id),
    target_id TEXT NOT NULL REFERENCES sources(id),
    PRIMARY KEY (owner_id, target_id),
    CONSTRAINT self_relation CHECK (owner_id <> target_id)
);
CREATE INDEX follow_target ON follow(target_id);

-- Superseded assessments stay as rows with live = 0.
CREATE TABLE assessments (
    seq         INTEGER PRIMARY KEY AUTOINCREMENT,
    id          TEXT NOT NULL,
    assessor_id TEXT NOT NULL REFERENCES sources(id),
    url_key     TEXT NOT NULL,
    verdict     TEXT NOT NULL CHECK (verdict IN ('accurate', 'inaccurate')),
    rationale   TEXT,
    created_at  TEXT NOT NULL,
    updated_at  TEXT NOT NULL,
    live        INTEGER NOT NULL DEFAULT 1,
    CONSTRAINT updated_after_created CHECK (updated_at >= created_at)
);
CREATE UNIQUE INDEX assessments_live ON assessments(assessor_id, url_key) WHERE live = 1;
CREATE UNIQUE INDEX assessments_live_id ON assessments(id) WHERE live = 1;
CREATE INDEX assessments_url ON assessments(url_key) WHERE live = 1;

CREATE TABLE questions (
    id         TEXT PRIMARY KEY,
    asker_id   TEXT NOT NULL REFERENCES sources(id),
    url_key    TEXT NOT NULL,
    body       TEXT,
    anonymous  INTEGER NOT NULL,
    targeted   INTEGER NOT NULL,
    created_at TEXT NOT NULL
);
CREATE INDEX questions_url ON questions(url_key);

CREATE TABLE question_targets (
    question_id TEXT NOT NULL REFERENCES questions(id),
    target_id   TEXT NOT NULL REFERENCES sources(id),
    PRIMARY KEY (question_id, target_id)
);

CREATE TABLE shares (
    id         TEXT PRIMARY KEY,
    sharer_id  TEXT NOT NULL REFERENCES sources(id),
    url_key    TEXT NOT NULL,
    created_at TEXT NOT NULL
);
CREATE INDEX shares_sharer ON shares(sharer_id, created_at);

CREATE TABLE redirect_mappings (
    original_key      TEXT PRIMARY KEY,
    target_key        TEXT NOT NULL,
    created_at        TEXT NOT NULL,
    last_requested_at TEXT NOT NULL,
    CONSTRAINT self_mapping CHECK (original_key <> target_key)
);
CREATE INDEX redirect_mappings_last ON redirect_mappings(last_requested_at);

CREATE TABLE sessions (
    token_hash TEXT PRIMARY KEY,
    source_id  TEXT NOT NULL REFERENCES sources(id),
    created_at TEXT NOT NULL,
    expires_at TEXT NOT NULL
);
"#;

pub(crate) const V2: &str = r#"
CREATE TABLE domain_rates (
    domain           TEXT PRIMARY KEY,
    rate_per_sec     REAL NOT NULL,
    floor            REAL NOT NULL,
    ceiling          REAL NOT NULL,
    last_adjusted_at TEXT NOT NULL,
    CONSTRAINT rate_in_bounds CHECK (floor > 0 AND floor <= rate_per_sec AND rate_per_sec <= ceiling)
);
"#;

const MIGRATIONS: [&str; CURRENT_SCHEMA_VERSION as usize] = [V1, V2];

pub(crate) fn version(conn: &Connection) -> Result<u32, StoreError> {
    conn.query_row("PRAGMA user_version", [], |r| r.get::<_, i64>(0))
        .map(|v| v as u32)
        .map_err(|e| StoreError::Schema(format!("cannot read schema version: {e}")))
}

/// Brings the database up to the current version, one migration per step.
pub(crate) fn migrate(conn: &mut Connection) -> Result<u32, StoreError> {
    let found = version(conn)?;
    if found > CURRENT_SCHEMA_VERSION {
        return Err(StoreError::Schema(format!(
            "database schema version {found} is newer than supported version {CURRENT_SCHEMA_VERSION}"
        )));
    }
    for (i, sql) in MIGRATIONS.iter().enumerate().skip(found as usize) {
        let next = i as u32 + 1;
        let tx = conn
            .transaction()
            .map_err(|e| StoreError::Schema(e.to_string()))?;
        tx.execute_batch(sql)
            .and_then(|_| tx.pragma_update(None, "user_version", next))
            .map_err(|e| StoreError::Schema(format!("migration to version {next}: {e}")))?;
        tx.commit().map_err(|e| StoreError::Schema(e.to_string()))?;
    }
    Ok(CURRENT_SCHEMA_VERSION)
}
