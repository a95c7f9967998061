//! Endpoint handlers and their JSON shapes.

use std::collections::{BTreeMap, BTreeSet};

use axum::extract::{Path, Query, RawQuery, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::DateTime;
use serde::{Deserialize, Serialize};
use trustnet_core::model::DEFAULT_RECOMMENDATIONS;
use trustnet_core::{
    Assessment, Basis, FeedItem, PageReport, PageStatus, PublicSource, Question, QuestionId,
    QuestionView, RelationSet, ShareItem, Source, SourceId, Status, UrlKey, Verdict,
};
use trustnet_resolver::{Hop, MappingStore};
use trustnet_store::{Applied, Mutation};
use url::Url;

use crate::auth::{hash_password, new_token, token_hash, verify_password, Viewer};
use crate::error::ApiError;
use crate::{AppState, BATCH_CAP, VERSION};

const MAX_RATIONALE_BYTES: usize = 64 * 1024;
const MAX_QUESTION_BYTES: usize = 8 * 1024;
const DEFAULT_FEED_PAGE: usize = 50;
const MAX_FEED_PAGE: usize = 200;

pub fn routes() -> Router<AppState> {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/auth/signup", post(signup))
        .route("/v1/auth/login", post(login))
        .route("/v1/auth/logout", post(logout))
        .route("/v1/relations/trusted", get(get_trusted).put(put_trusted))
        .route(
            "/v1/relations/followed",
            get(get_followed).put(put_followed),
        )
        .route("/v1/sources/{id}", get(get_source))
        .route("/v1/assessments", post(post_assessment))
        .route("/v1/questions", post(post_question))
        .route("/v1/status", post(post_status))
        .route("/v1/links/status", post(post_link_status))
        .route("/v1/urls/mappings", get(get_mappings).post(post_mappings))
        .route("/v1/urls/resolve", post(post_resolve))
        .route("/v1/shares", post(post_share))
        .route("/v1/feed", get(get_feed))
}

fn canonical(state: &AppState, raw: &str) -> Result<UrlKey, ApiError> {
    state
        .policies()
        .canonicalize_str(raw)
        .map_err(|e| ApiError::bad_request("invalid_url", e.to_string()))
}

fn check_batch(n: usize) -> Result<(), ApiError> {
    if n > BATCH_CAP {
        return Err(ApiError::bad_request(
            "batch_too_large",
            format!("{n} urls in one call; the limit is {BATCH_CAP}"),
        ));
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}

async fn health() -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: VERSION.into(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SignupRequest {
    pub username: String,
    pub password: String,
    #[serde(default)]
    pub display_name: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LoginRequest {
    pub username: String,
    pub password: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AuthResponse {
    pub token: String,
    pub expires_at: DateTime<chrono::Utc>,
    pub source: PublicSource,
}

fn valid_username(u: &str) -> bool {
    (3..=32).contains(&u.len())
        && u.bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'.')
}

async fn issue_session(state: &AppState, source: Source) -> Result<AuthResponse, ApiError> {
    let token = new_token();
    let now = state.now();
    let expires_at = now + state.settings().session_ttl;
    let op = Mutation::CreateSession {
        token_hash: token_hash(&token),
        source: source.id.clone(),
        created_at: now,
        expires_at,
    };
    state.with_store(move |s| s.transact(vec![op])).await?;
    Ok(AuthResponse {
        token,
        expires_at,
        source: PublicSource::from(&source),
    })
}

async fn signup(
    State(state): State<AppState>,
    Json(req): Json<SignupRequest>,
) -> Result<(StatusCode, Json<AuthResponse>), ApiError> {
    if !valid_username(&req.username) {
        return Err(ApiError::bad_request(
            "invalid_username",
            "usernames are 3-32 characters of a-z, 0-9, '_' or '.'",
        ));
    }
    if req.password.chars().count() < 8 {
        return Err(ApiError::bad_request(
            "weak_password",
            "passwords need at least 8 characters",
        ));
    }
    let password = req.password;
    let hash = tokio::task::spawn_blocking(move || hash_password(&password))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    let source = Source {
        id: SourceId::new(uuid::Uuid::new_v4().to_string()),
        display_name: req
            .display_name
            .map(|d| d.trim().to_string())
            .filter(|d| !d.is_empty())
            .unwrap_or_else(|| req.username.clone()),
        username: req.username,
        created_at: state.now(),
    };
    let op = Mutation::CreateSource {
        source: source.clone(),
        password_hash: Some(hash),
    };
    state.with_store(move |s| s.transact(vec![op])).await?;
    Ok((
        StatusCode::CREATED,
        Json(issue_session(&state, source).await?),
    ))
}

async fn login(
    State(state): State<AppState>,
    Json(req): Json<LoginRequest>,
) -> Result<Json<AuthResponse>, ApiError> {
    let username = req.username.clone();
    let found = state.with_store(move |s| s.credentials(&username)).await?;
    let bad = || {
        ApiError::new(
            StatusCode::UNAUTHORIZED,
            "bad_credentials",
            "unknown username or wrong password",
        )
    };
    let (source, stored) = found.ok_or_else(bad)?;
    let stored = stored.ok_or_else(bad)?;
    let password = req.password;
    let ok = tokio::task::spawn_blocking(move || verify_password(&password, &stored))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?;
    if !ok {
        return Err(bad());
    }
    Ok(Json(issue_session(&state, source).await?))
}

async fn logout(State(state): State<AppState>, viewer: Viewer) -> Result<StatusCode, ApiError> {
    let op = Mutation::DeleteSession {
        token_hash: viewer.token_hash,
    };
    state.with_store(move |s| s.transact(vec![op])).await?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationIds {
    pub ids: BTreeSet<SourceId>,
}

async fn own_relations(state: &AppState, viewer: &Viewer) -> Result<RelationSet, ApiError> {
    let id = viewer.id.clone();
    state.with_store(move |s| s.relations(&id)).await
}

async fn get_trusted(
    State(state): State<AppState>,
    viewer: Viewer,
) -> Result<Json<RelationIds>, ApiError> {
    Ok(Json(RelationIds {
        ids: own_relations(&state, &viewer).await?.trusted,
    }))
}

async fn get_followed(
    State(state): State<AppState>,
    viewer: Viewer,
) -> Result<Json<RelationIds>, ApiError> {
    Ok(Json(RelationIds {
        ids: own_relations(&state, &viewer).await?.followed,
    }))
}

async fn replace_relations(
    state: &AppState,
    viewer: &Viewer,
    ids: BTreeSet<SourceId>,
    trusted: bool,
) -> Result<Json<RelationIds>, ApiError> {
    if ids.contains(&viewer.id) {
        return Err(ApiError::bad_request(
            "self_relation",
            "you cannot trust or follow yourself",
        ));
    }
    let owner = viewer.id.clone();
    let op = if trusted {
        Mutation::ReplaceTrusted { owner, ids }
    } else {
        Mutation::ReplaceFollowed { owner, ids }
    };
    state.with_store(move |s| s.transact(vec![op])).await?;
    let set = own_relations(state, viewer).await?;
    Ok(Json(RelationIds {
        ids: if trusted { set.trusted } else { set.followed },
    }))
}

async fn put_trusted(
    State(state): State<AppState>,
    viewer: Viewer,
    Json(body): Json<RelationIds>,
) -> Result<Json<RelationIds>, ApiError> {
    replace_relations(&state, &viewer, body.ids, true).await
}

async fn put_followed(
    State(state): State<AppState>,
    viewer: Viewer,
    Json(body): Json<RelationIds>,
) -> Result<Json<RelationIds>, ApiError> {
    replace_relations(&state, &viewer, body.ids, false).await
}

/// Public profile: identity and whom the source follows. Trust stays private.
#[derive(Debug, Serialize, Deserialize)]
pub struct Profile {
    pub source: PublicSource,
    pub followed: BTreeSet<SourceId>,
}

async fn get_source(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<Profile>, ApiError> {
    let id = SourceId::new(id);
    let lookup = id.clone();
    let (source, relations) = state
        .with_store(move |s| Ok((s.source(&lookup)?, s.relations(&lookup)?)))
        .await?;
    let source = source.ok_or_else(|| ApiError::not_found(format!("no source {id}")))?;
    Ok(Json(Profile {
        source: PublicSource::from(&source),
        followed: relations.followed,
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AssessRequest {
    pub url: String,
    pub verdict: Verdict,
    #[serde(default)]
    pub rationale: Option<String>,
}

async fn post_assessment(
    State(state): State<AppState>,
    viewer: Viewer,
    Json(req): Json<AssessRequest>,
) -> Result<Json<Assessment>, ApiError> {
    let key = canonical(&state, &req.url)?;
    if req
        .rationale
        .as_ref()
        .is_some_and(|r| r.len() > MAX_RATIONALE_BYTES)
    {
        return Err(ApiError::bad_request(
            "rationale_too_long",
            format!("rationales are limited to {MAX_RATIONALE_BYTES} bytes"),
        ));
    }
    let op = Mutation::UpsertAssessment {
        assessor: viewer.id,
        url_key: key,
        verdict: req.verdict,
        rationale: req.rationale,
        fresh_id: uuid::Uuid::new_v4().to_string().as_str().into(),
        now: state.now(),
    };
    match state.with_store(move |s| s.transact(vec![op])).await?.pop() {
        Some(Applied::Assessment(a)) => Ok(Json(a)),
        _ => Err(ApiError::internal("upsert produced no assessment")),
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QuestionRequest {
    pub url: String,
    #[serde(default)]
    pub body: Option<String>,
    #[serde(default)]
    pub anonymous: bool,
    /// Absent: relayed to the asker's trusted sources.
    #[serde(default)]
    pub targets: Option<BTreeSet<SourceId>>,
}

async fn post_question(
    State(state): State<AppState>,
    viewer: Viewer,
    Json(req): Json<QuestionRequest>,
) -> Result<(StatusCode, Json<QuestionView>), ApiError> {
    let key = canonical(&state, &req.url)?;
    if req
        .body
        .as_ref()
        .is_some_and(|b| b.len() > MAX_QUESTION_BYTES)
    {
        return Err(ApiError::bad_request(
            "question_too_long",
            format!("questions are limited to {MAX_QUESTION_BYTES} bytes"),
        ));
    }
    let question = Question {
        id: QuestionId::new(uuid::Uuid::new_v4().to_string()),
        asker_id: viewer.id.clone(),
        url_key: key.clone(),
        body: req.body,
        anonymous: req.anonymous,
        targets: req.targets,
        created_at: state.now(),
    };
    question.validate()?;
    let id = question.id.clone();
    let scope = vec![key.clone()];
    let community = state
        .with_store(move |s| {
            s.transact(vec![Mutation::AddQuestion(question)])?;
            s.snapshot_for_keys(&scope)
        })
        .await?;
    let view = community
        .visible_questions(&viewer.id, &key)?
        .into_iter()
        .find(|q| q.id == id)
        .ok_or_else(|| ApiError::internal("question not visible to its asker"))?;
    Ok((StatusCode::CREATED, Json(view)))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct UrlsRequest {
    pub urls: Vec<String>,
    /// Source recommendations per page; defaults to 10.
    #[serde(default)]
    pub recommendations: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StatusResponse {
    /// One report per requested URL, in request order.
    pub pages: Vec<PageReport>,
}

async fn post_status(
    State(state): State<AppState>,
    viewer: Viewer,
    Json(req): Json<UrlsRequest>,
) -> Result<Json<StatusResponse>, ApiError> {
    check_batch(req.urls.len())?;
    let keys = req
        .urls
        .iter()
        .map(|u| canonical(&state, u))
        .collect::<Result<Vec<_>, _>>()?;
    let scope = keys.clone();
    let community = state
        .with_store(move |s| s.snapshot_for_keys(&scope))
        .await?;
    let limit = req
        .recommendations
        .unwrap_or(DEFAULT_RECOMMENDATIONS)
        .min(DEFAULT_RECOMMENDATIONS);
    let pages = keys
        .iter()
        .map(|k| community.page_report(&viewer.id, k, limit))
        .collect::<Result<_, _>>()?;
    Ok(Json(StatusResponse { pages }))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LinkStatus {
    pub url_key: UrlKey,
    pub status: Status,
    pub basis: Basis,
    pub has_questions: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LinkStatusResponse {
    /// Keyed by the URL exactly as sent.
    pub statuses: BTreeMap<String, LinkStatus>,
    /// URLs that could not be canonicalized; they get no badge.
    pub invalid: Vec<String>,
}

async fn post_link_status(
    State(state): State<AppState>,
    viewer: Viewer,
    Json(req): Json<UrlsRequest>,
) -> Result<Json<LinkStatusResponse>, ApiError> {
    check_batch(req.urls.len())?;
    let mut invalid = Vec::new();
    let mut pairs = Vec::new();
    for raw in req.urls {
        match canonical(&state, &raw) {
            Ok(key) => pairs.push((raw, key)),
            Err(_) => invalid.push(raw),
        }
    }
    let scope: Vec<UrlKey> = pairs.iter().map(|(_, k)| k.clone()).collect();
    let community = state
        .with_store(move |s| s.snapshot_for_keys(&scope))
        .await?;
    let by_key = community.link_statuses(&viewer.id, pairs.iter().map(|(_, k)| k))?;
    let statuses = pairs
        .into_iter()
        .map(|(raw, key)| {
            let PageStatus {
                status,
                has_questions,
                basis,
            } = by_key[&key];
            (
                raw,
                LinkStatus {
                    url_key: key,
                    status,
                    basis,
                    has_questions,
                },
            )
        })
        .collect();
    Ok(Json(LinkStatusResponse { statuses, invalid }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MappingsResponse {
    /// Hits only, keyed by the original URL exactly as sent.
    pub mappings: BTreeMap<String, UrlKey>,
}

async fn get_mappings(
    State(state): State<AppState>,
    _viewer: Viewer,
    RawQuery(query): RawQuery,
) -> Result<Json<MappingsResponse>, ApiError> {
    let originals: Vec<String> = url::form_urlencoded::parse(query.unwrap_or_default().as_bytes())
        .filter(|(k, _)| k == "orig")
        .map(|(_, v)| v.into_owned())
        .collect();
    check_batch(originals.len())?;
    let mut by_key: BTreeMap<UrlKey, Vec<String>> = BTreeMap::new();
    for raw in originals {
        if let Ok(key) = canonical(&state, &raw) {
            by_key.entry(key).or_default().push(raw);
        }
    }
    let keys: Vec<UrlKey> = by_key.keys().cloned().collect();
    let now = state.now();
    let store = state.store().clone();
    let hits = tokio::task::spawn_blocking(move || store.get_many(&keys, now))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    let mappings = hits
        .into_iter()
        .flat_map(|(key, target)| {
            by_key
                .remove(&key)
                .unwrap_or_default()
                .into_iter()
                .map(move |raw| (raw, target.clone()))
        })
        .collect();
    Ok(Json(MappingsResponse { mappings }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MappingInput {
    pub original: String,
    pub target: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MappingsRequest {
    pub mappings: Vec<MappingInput>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MappingsStored {
    pub stored: usize,
}

async fn post_mappings(
    State(state): State<AppState>,
    _viewer: Viewer,
    Json(req): Json<MappingsRequest>,
) -> Result<Json<MappingsStored>, ApiError> {
    check_batch(req.mappings.len())?;
    let pairs = req
        .mappings
        .iter()
        .map(|m| {
            Ok((
                canonical(&state, &m.original)?,
                canonical(&state, &m.target)?,
            ))
        })
        .collect::<Result<Vec<_>, ApiError>>()?;
    if let Some((k, _)) = pairs.iter().find(|(o, t)| o == t) {
        return Err(ApiError::bad_request(
            "invalid_mapping",
            format!("{k} maps to itself"),
        ));
    }
    let now = state.now();
    let store = state.store().clone();
    let stored = tokio::task::spawn_blocking(move || {
        pairs
            .iter()
            .map(|(o, t)| store.put(o, t, now))
            .collect::<Result<Vec<_>, _>>()
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(MappingsStored {
        stored: stored.len(),
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ResolveRequest {
    pub url: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ResolveResponse {
    pub original_key: UrlKey,
    pub target_key: UrlKey,
    /// Answered from the mapping cache without fetching.
    pub cached: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_url: Option<Url>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hops: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<Vec<Hop>>,
}

async fn post_resolve(
    State(state): State<AppState>,
    _viewer: Viewer,
    Json(req): Json<ResolveRequest>,
) -> Result<Json<ResolveResponse>, ApiError> {
    let start = Url::parse(req.url.trim())
        .ok()
        .filter(|u| matches!(u.scheme(), "http" | "https") && u.host_str().is_some())
        .ok_or_else(|| {
            ApiError::bad_request(
                "invalid_url",
                format!("{:?} is not an absolute http(s) url", req.url),
            )
        })?;
    let original_key = canonical(&state, start.as_str())?;

    let now = state.now();
    let store = state.store().clone();
    let lookup = vec![original_key.clone()];
    let cached = tokio::task::spawn_blocking(move || store.get_many(&lookup, now))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    if let Some(target_key) = cached.get(&original_key) {
        return Ok(Json(ResolveResponse {
            original_key,
            target_key: target_key.clone(),
            cached: true,
            final_url: None,
            hops: None,
            chain: None,
        }));
    }

    let result = state
        .resolver()
        .resolve(&start, state.settings().max_depth)
        .await?;
    let target_key = canonical(&state, result.final_url.as_str())?;
    if target_key != original_key {
        let store = state.store().clone();
        let (o, t) = (original_key.clone(), target_key.clone());
        let now = state.now();
        tokio::task::spawn_blocking(move || store.put(&o, &t, now))
            .await
            .map_err(|e| ApiError::internal(e.to_string()))??;
    }
    Ok(Json(ResolveResponse {
        original_key,
        target_key,
        cached: false,
        hops: Some(result.hops),
        final_url: Some(result.final_url),
        chain: Some(result.chain),
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ShareRequest {
    pub url: String,
}

async fn post_share(
    State(state): State<AppState>,
    viewer: Viewer,
    Json(req): Json<ShareRequest>,
) -> Result<(StatusCode, Json<ShareItem>), ApiError> {
    let share = ShareItem {
        id: uuid::Uuid::new_v4().to_string().as_str().into(),
        sharer_id: viewer.id,
        url_key: canonical(&state, &req.url)?,
        created_at: state.now(),
    };
    let op = Mutation::AddShare(share.clone());
    state.with_store(move |s| s.transact(vec![op])).await?;
    Ok((StatusCode::CREATED, Json(share)))
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct FeedQuery {
    pub cursor: Option<String>,
    pub limit: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FeedResponse {
    pub items: Vec<FeedItem>,
    /// Pass back as `cursor` for the next, older page; absent at the end.
    pub next_cursor: Option<String>,
}

fn feed_cursor(item: &FeedItem) -> String {
    format!(
        "{}~{}",
        item.share
            .created_at
            .to_rfc3339_opts(chrono::SecondsFormat::Nanos, true),
        item.share.id
    )
}

fn parse_cursor(raw: &str) -> Result<(DateTime<chrono::Utc>, String), ApiError> {
    let bad = || ApiError::bad_request("invalid_cursor", "cursor was not produced by this feed");
    let (at, id) = raw.split_once('~').ok_or_else(bad)?;
    let at = DateTime::parse_from_rfc3339(at).map_err(|_| bad())?;
    Ok((at.with_timezone(&chrono::Utc), id.to_string()))
}

async fn get_feed(
    State(state): State<AppState>,
    viewer: Viewer,
    Query(q): Query<FeedQuery>,
) -> Result<Json<FeedResponse>, ApiError> {
    let limit = q.limit.unwrap_or(DEFAULT_FEED_PAGE).clamp(1, MAX_FEED_PAGE);
    let after = q.cursor.as_deref().map(parse_cursor).transpose()?;
    let community = state.with_store(|s| s.snapshot()).await?;
    let mut items: Vec<FeedItem> = community
        .feed(&viewer.id)?
        .into_iter()
        .filter(|item| {
            after.as_ref().is_none_or(|(at, id)| {
                (item.share.created_at, item.share.id.as_str()) < (*at, id.as_str())
            })
        })
        .take(limit + 1)
        .collect();
    let next_cursor = if items.len() > limit {
        items.truncate(limit);
        items.last().map(feed_cursor)
    } else {
        None
    };
    Ok(Json(FeedResponse { items, next_cursor }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usernames() {
        assert!(valid_username("alice_92"));
        assert!(!valid_username("Al"));
        assert!(!valid_username("has space"));
        assert!(!valid_username(&"x".repeat(33)));
    }

    #[test]
    fn cursor_round_trip() {
        let (at, id) = parse_cursor("2024-03-01T10:00:00.000000123Z~abc-1").unwrap();
        assert_eq!(id, "abc-1");
        assert_eq!(at.timestamp_subsec_nanos(), 123);
        assert!(parse_cursor("garbage").is_err());
    }
}
