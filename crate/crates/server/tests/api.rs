use std::collections::BTreeSet;

use reqwest::{Client, StatusCode};
use serde_json::{json, Value};
use trustnet_resolver::mock::{MockFixture, MockServer};
use trustnet_server::{start, RunningServer, ServerConfig, Settings};

async fn server(allow_private: bool) -> RunningServer {
    start(ServerConfig {
        port: 0,
        settings: Settings {
            allow_private_targets: allow_private,
            ..Settings::default()
        },
        ..ServerConfig::default()
    })
    .await
    .unwrap()
}

struct Api {
    base: String,
    http: Client,
}

impl Api {
    fn new(s: &RunningServer) -> Self {
        Api {
            base: s.base_url(),
            http: Client::new(),
        }
    }

    async fn call(
        &self,
        method: reqwest::Method,
        path: &str,
        token: Option<&str>,
        body: Option<Value>,
    ) -> (StatusCode, Value) {
        let mut req = self.http.request(method, format!("{}{path}", self.base));
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        if let Some(b) = body {
            req = req.json(&b);
        }
        let resp = req.send().await.unwrap();
        let status = resp.status();
        let text = resp.text().await.unwrap();
        (status, serde_json::from_str(&text).unwrap_or(Value::Null))
    }

    async fn post(&self, path: &str, token: &str, body: Value) -> (StatusCode, Value) {
        self.call(reqwest::Method::POST, path, Some(token), Some(body))
            .await
    }

    async fn put(&self, path: &str, token: &str, body: Value) -> (StatusCode, Value) {
        self.call(reqwest::Method::PUT, path, Some(token), Some(body))
            .await
    }

    async fn get(&self, path: &str, token: &str) -> (StatusCode, Value) {
        self.call(reqwest::Method::GET, path, Some(token), None)
            .await
    }

    /// Returns (token, source id).
    async fn signup(&self, username: &str) -> (String, String) {
        let (status, body) = self
            .call(
                reqwest::Method::POST,
                "/v1/auth/signup",
                None,
                Some(json!({"username": username, "password": "correct horse"})),
            )
            .await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
        (
            body["token"].as_str().unwrap().to_string(),
            body["source"]["id"].as_str().unwrap().to_string(),
        )
    }
}

#[tokio::test]
async fn health_is_public() {
    let s = server(false).await;
    let api = Api::new(&s);
    let (status, body) = api
        .call(reqwest::Method::GET, "/v1/health", None, None)
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    s.shutdown().await.unwrap();
}

#[tokio::test]
async fn missing_or_bad_token_is_401() {
    let s = server(false).await;
    let api = Api::new(&s);
    let (status, body) = api
        .call(
            reqwest::Method::POST,
            "/v1/status",
            None,
            Some(json!({"urls": []})),
        )
        .await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    assert!(body["code"].is_string());
    let (status, _) = api
        .post("/v1/status", "not-a-token", json!({"urls": []}))
        .await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    s.shutdown().await.unwrap();
}

#[tokio::test]
async fn signup_login_logout() {
    let s = server(false).await;
    let api = Api::new(&s);
    let (first, _) = api.signup("alice").await;
    let (status, body) = api
        .call(
            reqwest::Method::POST,
            "/v1/auth/signup",
            None,
            Some(json!({"username": "alice", "password": "another one"})),
        )
        .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "username_taken");

    let (status, _) = api
        .call(
            reqwest::Method::POST,
            "/v1/auth/login",
            None,
            Some(json!({"username": "alice", "password": "wrong password"})),
        )
        .await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, body) = api
        .call(
            reqwest::Method::POST,
            "/v1/auth/login",
            None,
            Some(json!({"username": "alice", "password": "correct horse"})),
        )
        .await;
    assert_eq!(status, StatusCode::OK);
    let second = body["token"].as_str().unwrap().to_string();

    let (status, _) = api
        .call(reqwest::Method::POST, "/v1/auth/logout", Some(&first), None)
        .await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    assert_eq!(
        api.get("/v1/relations/trusted", &first).await.0,
        StatusCode::UNAUTHORIZED
    );
    assert_eq!(
        api.get("/v1/relations/trusted", &second).await.0,
        StatusCode::OK
    );
    s.shutdown().await.unwrap();
}

#[tokio::test]
async fn assess_then_status_through_trust() {
    let s = server(false).await;
    let api = Api::new(&s);
    let (alice, _) = api.signup("alice").await;
    let (bob, bob_id) = api.signup("bob").await;

    let (status, body) = api
        .post(
            "/v1/assessments",
            &bob,
            json!({"url": "HTTP://News.Example/story/?utm_source=x#top", "verdict": "inaccurate", "rationale": "numbers are off"}),
        )
        .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["urlKey"], "https://news.example/story");

    let page = json!({"urls": ["https://news.example/story"]});
    let (_, body) = api.post("/v1/status", &alice, page.clone()).await;
    assert_eq!(body["pages"][0]["status"], "none");
    assert_eq!(body["pages"][0]["basis"], "no_assessment");

    let (status, body) = api
        .put("/v1/relations/trusted", &alice, json!({"ids": [bob_id]}))
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["ids"], json!([bob_id]));

    let (_, body) = api.post("/v1/status", &alice, page.clone()).await;
    let report = &body["pages"][0];
    assert_eq!(report["status"], "inaccurate");
    assert_eq!(report["basis"], "trusted");
    assert_eq!(report["assessments"][0]["assessor"]["username"], "bob");
    assert_eq!(
        report["assessments"][0]["assessment"]["rationale"],
        "numbers are off"
    );

    // alice's own verdict overrides
    api.post(
        "/v1/assessments",
        &alice,
        json!({"url": "https://news.example/story", "verdict": "accurate"}),
    )
    .await;
    let (_, body) = api.post("/v1/status", &alice, page).await;
    assert_eq!(body["pages"][0]["status"], "accurate");
    assert_eq!(body["pages"][0]["basis"], "own");
    s.shutdown().await.unwrap();
}

#[tokio::test]
async fn relation_put_is_idempotent_and_whole_set() {
    let s = server(false).await;
    let api = Api::new(&s);
    let (alice, alice_id) = api.signup("alice").await;
    let (_, b) = api.signup("bobby").await;
    let (_, c) = api.signup("carol").await;

    let body = json!({"ids": [b, c]});
    let first = api
        .put("/v1/relations/followed", &alice, body.clone())
        .await;
    let again = api.put("/v1/relations/followed", &alice, body).await;
    assert_eq!(first, again);
    let (_, body) = api
        .put("/v1/relations/followed", &alice, json!({"ids": [c]}))
        .await;
    assert_eq!(body["ids"], json!([c]));
    let (_, body) = api.get("/v1/relations/followed", &alice).await;
    assert_eq!(body["ids"], json!([c]));

    let (status, body) = api
        .put("/v1/relations/trusted", &alice, json!({"ids": [alice_id]}))
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "self_relation");
    let (status, body) = api
        .put("/v1/relations/trusted", &alice, json!({"ids": ["ghost"]}))
        .await;
    assert_eq!(status, StatusCode::NOT_FOUND, "{body}");

    // followed is public, trusted is not
    let (_, profile) = api.get(&format!("/v1/sources/{alice_id}"), &alice).await;
    assert_eq!(profile["followed"], json!([c]));
    assert!(profile.get("trusted").is_none());
    s.shutdown().await.unwrap();
}

#[tokio::test]
async fn questions_respect_visibility() {
    let s = server(false).await;
    let api = Api::new(&s);
    let (alice, _) = api.signup("alice").await;
    let (bob, bob_id) = api.signup("bob").await;
    let (carol, _) = api.signup("carol").await;
    api.put("/v1/relations/trusted", &alice, json!({"ids": [bob_id]}))
        .await;

    let (status, q) = api
        .post(
            "/v1/questions",
            &alice,
            json!({"url": "https://news.example/q", "body": "source?", "anonymous": true}),
        )
        .await;
    assert_eq!(status, StatusCode::CREATED, "{q}");
    assert_eq!(q["own"], true);

    let urls = json!({"urls": ["https://news.example/q"]});
    let (_, bob_view) = api.post("/v1/links/status", &bob, urls.clone()).await;
    assert_eq!(
        bob_view["statuses"]["https://news.example/q"]["hasQuestions"],
        true
    );
    let (_, bob_page) = api.post("/v1/status", &bob, urls.clone()).await;
    assert_eq!(bob_page["pages"][0]["questions"][0]["asker"], Value::Null);

    let (_, carol_view) = api.post("/v1/links/status", &carol, urls).await;
    assert_eq!(
        carol_view["statuses"]["https://news.example/q"]["hasQuestions"],
        false
    );
    s.shutdown().await.unwrap();
}

#[tokio::test]
async fn link_status_batches() {
    let s = server(false).await;
    let api = Api::new(&s);
    let (alice, _) = api.signup("alice").await;
    let (_, body) = api
        .post(
            "/v1/links/status",
            &alice,
            json!({"urls": ["https://a.example/x?fbclid=1", "mailto:someone@example.com"]}),
        )
        .await;
    assert_eq!(
        body["statuses"]["https://a.example/x?fbclid=1"]["urlKey"],
        "https://a.example/x"
    );
    assert_eq!(body["invalid"], json!(["mailto:someone@example.com"]));

    let too_many: Vec<String> = (0..201).map(|i| format!("https://a.example/{i}")).collect();
    let (status, body) = api
        .post("/v1/links/status", &alice, json!({"urls": too_many}))
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "batch_too_large");
    s.shutdown().await.unwrap();
}

#[tokio::test]
async fn mappings_store_and_look_up() {
    let s = server(false).await;
    let api = Api::new(&s);
    let (alice, _) = api.signup("alice").await;
    let (status, body) = api
        .post(
            "/v1/urls/mappings",
            &alice,
            json!({"mappings": [{"original": "https://t.co/abc", "target": "https://news.example/long?utm_medium=x"}]}),
        )
        .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["stored"], 1);

    let (_, body) = api
        .get(
            "/v1/urls/mappings?orig=https%3A%2F%2Ft.co%2Fabc&orig=https%3A%2F%2Ft.co%2Fmissing",
            &alice,
        )
        .await;
    assert_eq!(
        body["mappings"],
        json!({"https://t.co/abc": "https://news.example/long"})
    );

    let (status, body) = api
        .post(
            "/v1/urls/mappings",
            &alice,
            json!({"mappings": [{"original": "https://x.example/a/", "target": "https://x.example/a"}]}),
        )
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "invalid_mapping");
    s.shutdown().await.unwrap();
}

#[tokio::test]
async fn resolve_follows_redirects_and_caches() {
    let fixture = MockFixture::load(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../resolver/fixtures/redirects.toml"
    ))
    .unwrap();
    let mock = MockServer::start(fixture).await.unwrap();
    let s = server(true).await;
    let api = Api::new(&s);
    let (alice, _) = api.signup("alice").await;

    let url = mock.url("/r/301");
    let (status, body) = api
        .post("/v1/urls/resolve", &alice, json!({"url": url}))
        .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["cached"], false);
    assert_eq!(body["hops"], 2);
    assert_eq!(
        body["targetKey"],
        format!("{}/final", mock.origin().replace("http://", "https://"))
    );
    let fetched = mock.total_hits();

    let (_, again) = api
        .post("/v1/urls/resolve", &alice, json!({"url": url}))
        .await;
    assert_eq!(again["cached"], true);
    assert_eq!(again["targetKey"], body["targetKey"]);
    assert_eq!(mock.total_hits(), fetched, "cache hit must not fetch");

    let (status, body) = api
        .post(
            "/v1/urls/resolve",
            &alice,
            json!({"url": mock.url("/loop/a")}),
        )
        .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "loop_detected");
    s.shutdown().await.unwrap();
}

#[tokio::test]
async fn private_targets_blocked_by_default() {
    let fixture = MockFixture::load(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../resolver/fixtures/redirects.toml"
    ))
    .unwrap();
    let mock = MockServer::start(fixture).await.unwrap();
    let s = server(false).await;
    let api = Api::new(&s);
    let (alice, _) = api.signup("alice").await;
    let (status, body) = api
        .post(
            "/v1/urls/resolve",
            &alice,
            json!({"url": mock.url("/r/301")}),
        )
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "blocked_target");
    assert_eq!(mock.total_hits(), 0);
    s.shutdown().await.unwrap();
}

#[tokio::test]
async fn feed_pages_newest_first() {
    let s = server(false).await;
    let api = Api::new(&s);
    let (alice, _) = api.signup("alice").await;
    let (bob, bob_id) = api.signup("bob").await;
    api.put("/v1/relations/followed", &alice, json!({"ids": [bob_id]}))
        .await;
    let (status, body) = api
        .post(
            "/v1/shares",
            &bob,
            json!({"url": "https://news.example/unread"}),
        )
        .await;
    assert_eq!(
        status,
        StatusCode::CONFLICT,
        "sharing needs an assessment or question first"
    );
    assert_eq!(body["code"], "share_precondition");
    for i in 0..5 {
        let url = format!("https://news.example/{i}");
        api.post(
            "/v1/assessments",
            &bob,
            json!({"url": url, "verdict": "accurate"}),
        )
        .await;
        let (status, _) = api.post("/v1/shares", &bob, json!({"url": url})).await;
        assert_eq!(status, StatusCode::CREATED);
    }
    let mut seen = Vec::new();
    let mut cursor: Option<String> = None;
    loop {
        let path = match &cursor {
            Some(c) => format!(
                "/v1/feed?limit=2&cursor={}",
                url::form_urlencoded::byte_serialize(c.as_bytes()).collect::<String>()
            ),
            None => "/v1/feed?limit=2".to_string(),
        };
        let (status, body) = api.get(&path, &alice).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        for item in body["items"].as_array().unwrap() {
            seen.push(item["share"]["urlKey"].as_str().unwrap().to_string());
            assert_eq!(item["assessment"]["verdict"], "accurate");
        }
        match body["nextCursor"].as_str() {
            Some(c) => cursor = Some(c.to_string()),
            None => break,
        }
    }
    let expected: Vec<String> = (0..5)
        .rev()
        .map(|i| format!("https://news.example/{i}"))
        .collect();
    assert_eq!(seen, expected);
    assert_eq!(seen.iter().collect::<BTreeSet<_>>().len(), 5);
    s.shutdown().await.unwrap();
}

#[tokio::test]
async fn data_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let config = ServerConfig {
        port: 0,
        db_path: Some(dir.path().join("api.db")),
        ..ServerConfig::default()
    };
    let s = start(config.clone()).await.unwrap();
    let api = Api::new(&s);
    let (bob, _) = api.signup("bob").await;
    api.post(
        "/v1/assessments",
        &bob,
        json!({"url": "https://news.example/kept", "verdict": "accurate"}),
    )
    .await;
    s.shutdown().await.unwrap();

    let s = start(config).await.unwrap();
    let api = Api::new(&s);
    let (status, body) = api
        .call(
            reqwest::Method::POST,
            "/v1/auth/login",
            None,
            Some(json!({"username": "bob", "password": "correct horse"})),
        )
        .await;
    assert_eq!(status, StatusCode::OK);
    let token = body["token"].as_str().unwrap();
    let (_, body) = api
        .post(
            "/v1/status",
            token,
            json!({"urls": ["https://news.example/kept"]}),
        )
        .await;
    assert_eq!(body["pages"][0]["status"], "accurate");
    s.shutdown().await.unwrap();
}
