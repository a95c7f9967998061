//! Pushing a world into a running service through its public API.

use std::collections::BTreeMap;

use reqwest::{Client, StatusCode};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;
use trustnet_core::SourceId;

use crate::world::World;

/// Password given to every seeded account.
pub const SEED_PASSWORD: &str = "seeded-password";

#[derive(Debug, Error)]
pub enum SeedError {
    #[error("request to {path} failed: {source}")]
    Http {
        path: String,
        #[source]
        source: reqwest::Error,
    },
    #[error("{path} answered {status}: {body}")]
    Rejected {
        path: String,
        status: StatusCode,
        body: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SeededAccount {
    pub username: String,
    /// Id assigned by the service.
    pub id: SourceId,
    pub token: String,
}

#[derive(Debug, Clone, Default, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SeedReport {
    /// World source id → account created for it.
    pub accounts: BTreeMap<SourceId, SeededAccount>,
    pub assessments: usize,
    pub questions: usize,
    pub shares: usize,
}

/// Thin JSON client for the service.
#[derive(Debug, Clone)]
pub struct ApiClient {
    base: String,
    http: Client,
}

impl ApiClient {
    pub fn new(base_url: &str) -> Self {
        ApiClient {
            base: base_url.trim_end_matches('/').to_string(),
            http: Client::new(),
        }
    }

    /// Sends a request and returns the raw body on success.
    pub async fn send_raw(
        &self,
        method: reqwest::Method,
        path: &str,
        token: Option<&str>,
        body: Option<&Value>,
    ) -> Result<(StatusCode, String), SeedError> {
        let http = |source| SeedError::Http {
            path: path.to_string(),
            source,
        };
        let mut req = self.http.request(method, format!("{}{path}", self.base));
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        if let Some(b) = body {
            req = req.json(b);
        }
        let resp = req.send().await.map_err(http)?;
        let status = resp.status();
        let text = resp.text().await.map_err(http)?;
        Ok((status, text))
    }

    /// Like [`send_raw`](Self::send_raw) but fails on non-2xx and parses JSON.
    pub async fn send(
        &self,
        method: reqwest::Method,
        path: &str,
        token: Option<&str>,
        body: Option<&Value>,
    ) -> Result<Value, SeedError> {
        let (status, text) = self.send_raw(method, path, token, body).await?;
        if !status.is_success() {
            return Err(SeedError::Rejected {
                path: path.to_string(),
                status,
                body: text,
            });
        }
        Ok(serde_json::from_str(&text).unwrap_or(Value::Null))
    }

    pub async fn post(
        &self,
        path: &str,
        token: Option<&str>,
        body: &Value,
    ) -> Result<Value, SeedError> {
        self.send(reqwest::Method::POST, path, token, Some(body))
            .await
    }

    pub async fn put(&self, path: &str, token: &str, body: &Value) -> Result<Value, SeedError> {
        self.send(reqwest::Method::PUT, path, Some(token), Some(body))
            .await
    }

    pub async fn get(&self, path: &str, token: &str) -> Result<Value, SeedError> {
        self.send(reqwest::Method::GET, path, Some(token), None)
            .await
    }
}

/// Creates an account per source, then relations, assessments, questions and
/// shares, translating world ids to the ids the service assigns. Assessments
/// by sources outside the world are skipped. Timestamps and ids of content
/// are the service's own.
pub async fn seed_world(api: &ApiClient, world: &World) -> Result<SeedReport, SeedError> {
    let mut report = SeedReport::default();
    for s in &world.sources {
        let body = json!({"username": s.username, "password": SEED_PASSWORD, "displayName": s.display_name});
        let v = api.post("/v1/auth/signup", None, &body).await?;
        report.accounts.insert(
            s.id.clone(),
            SeededAccount {
                username: s.username.clone(),
                id: SourceId::new(v["source"]["id"].as_str().unwrap_or_default()),
                token: v["token"].as_str().unwrap_or_default().to_string(),
            },
        );
    }
    let map = |ids: &mut dyn Iterator<Item = &SourceId>| -> Vec<SourceId> {
        ids.filter_map(|id| report.accounts.get(id).map(|a| a.id.clone()))
            .collect()
    };
    let mut relation_calls = Vec::new();
    for r in &world.relations {
        let Some(owner) = report.accounts.get(&r.owner_id) else {
            continue;
        };
        relation_calls.push((
            owner.token.clone(),
            map(&mut r.trusted.iter()),
            map(&mut r.followed.iter()),
        ));
    }
    for (token, trusted, followed) in relation_calls {
        api.put("/v1/relations/trusted", &token, &json!({"ids": trusted}))
            .await?;
        api.put("/v1/relations/followed", &token, &json!({"ids": followed}))
            .await?;
    }

    let mut assessments: Vec<_> = world.assessments.iter().collect();
    assessments.sort_by_key(|a| (a.updated_at, a.id.clone()));
    for a in assessments {
        let Some(account) = report.accounts.get(&a.assessor_id) else {
            continue;
        };
        let body = json!({"url": a.url_key, "verdict": a.verdict, "rationale": a.rationale});
        api.post("/v1/assessments", Some(&account.token), &body)
            .await?;
        report.assessments += 1;
    }
    for q in &world.questions {
        let Some(account) = report.accounts.get(&q.asker_id) else {
            continue;
        };
        let targets = q.targets.as_ref().map(|t| map(&mut t.iter()));
        let body =
            json!({"url": q.url_key, "body": q.body, "anonymous": q.anonymous, "targets": targets});
        api.post("/v1/questions", Some(&account.token), &body)
            .await?;
        report.questions += 1;
    }
    for s in &world.shares {
        let Some(account) = report.accounts.get(&s.sharer_id) else {
            continue;
        };
        api.post(
            "/v1/shares",
            Some(&account.token),
            &json!({"url": s.url_key}),
        )
        .await?;
        report.shares += 1;
    }
    Ok(report)
}
