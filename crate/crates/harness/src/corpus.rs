//! Canonicalization corpus files: `input<TAB>expected key` per line.
//!
//! Blank lines and lines starting with `#` are skipped. An expected value of
//! `!error` means the input must be rejected.

use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;
use trustnet_core::PolicyTable;

pub const EXPECT_ERROR: &str = "!error";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CorpusFailure {
    pub line: usize,
    pub input: String,
    pub expected: String,
    pub actual: String,
}

#[derive(Debug, Clone, Default, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CorpusReport {
    pub cases: usize,
    pub failures: Vec<CorpusFailure>,
    pub warnings: Vec<String>,
}

impl CorpusReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn run_corpus(path: &Path, policies: &PolicyTable) -> Result<CorpusReport, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(run_corpus_text(&text, policies))
}

pub fn run_corpus_text(text: &str, policies: &PolicyTable) -> CorpusReport {
    let mut report = CorpusReport::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        report.cases += 1;
        let Some((input, expected)) = raw.split_once('\t') else {
            report.failures.push(CorpusFailure {
                line,
                input: raw.to_string(),
                expected: String::new(),
                actual: "malformed line: expected input<TAB>expected".into(),
            });
            continue;
        };
        let expected = expected.trim();
        let actual = match policies.canonicalize_str(input) {
            Ok(key) => key.into_string(),
            Err(_) => EXPECT_ERROR.to_string(),
        };
        if actual != expected {
            report.failures.push(CorpusFailure {
                line,
                input: input.to_string(),
                expected: expected.to_string(),
                actual,
            });
        }
    }
    if report.cases == 0 {
        report.warnings.push("corpus has no cases".into());
    }
    report
}
