use axum::body::Body;
use axum::http::{Request, StatusCode};
use serde_json::Value;
use tower::ServiceExt;

use super::*;
use crate::error::ERROR_CODES;

struct Fixture {
    _dir: tempfile::TempDir,
    app: Router,
    platform: Arc<Platform>,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let config = ServiceConfig {
        data_dir: dir.path().join("data"),
        admin_name: "root".into(),
        admin_secret: Some("rootpw".into()),
        ..Default::default()
    };
    let platform = Arc::new(Platform::open(config).unwrap());
    Fixture { _dir: dir, app: router(Arc::clone(&platform)), platform }
}

impl Fixture {
    async fn call(&self, method: &str, uri: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Value) {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(t) = token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        let body = match body {
            Some(v) => {
                req = req.header("content-type", "application/json");
                Body::from(v.to_string())
            }
            None => Body::empty(),
        };
        let resp = self.app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
        let status = resp.status();
        let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
        (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
    }

    async fn login(&self, name: &str, secret: &str) -> String {
        let (s, v) = self.call("POST", "/api/auth/login", None, Some(json!({"name": name, "secret": secret}))).await;
        assert_eq!(s, StatusCode::OK, "{v}");
        v["token"].as_str().unwrap().to_string()
    }
}

fn code(v: &Value) -> &str {
    v["error"]["code"].as_str().unwrap_or("<none>")
}

#[tokio::test]
async fn health_needs_no_session() {
    let fx = fixture();
    let (s, v) = fx.call("GET", "/api/health", None, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, json!({"status": "ok"}));
}

#[tokio::test]
async fn routing_errors() {
    let fx = fixture();
    let (s, v) = fx.call("GET", "/api/nope", None, None).await;
    assert_eq!((s, code(&v)), (StatusCode::NOT_FOUND, "unknown-route"));
    let (s, v) = fx.call("DELETE", "/api/health", None, None).await;
    assert_eq!((s, code(&v)), (StatusCode::METHOD_NOT_ALLOWED, "method-not-allowed"));
}

#[tokio::test]
async fn every_protected_route_rejects_anonymous_callers() {
    let fx = fixture();
    for (method, path) in ROUTES {
        if PUBLIC_ROUTES.contains(path) {
            continue;
        }
        let uri = format!("/api{}", path.replace("{id}", "1"));
        for token in [None, Some("00112233445566778899aabbccddeeff")] {
            let (s, v) = fx.call(method, &uri, token, Some(json!({}))).await;
            assert_eq!((s, code(&v)), (StatusCode::UNAUTHORIZED, "unauthorized"), "{method} {uri}");
            assert_eq!(v["error"].as_object().unwrap().len(), 2, "{method} {uri}: {v}");
        }
    }
}

#[tokio::test]
async fn route_table_matches_router() {
    let fx = fixture();
    let token = fx.login("root", "rootpw").await;
    for (method, path) in ROUTES {
        if *path == "/rooms/{id}/stream" {
            continue;
        }
        let uri = format!("/api{}", path.replace("{id}", "999"));
        let (_, v) = fx.call(method, &uri, Some(&token), Some(json!({}))).await;
        assert_ne!(code(&v), "unknown-route", "{method} {uri}");
        assert_ne!(code(&v), "method-not-allowed", "{method} {uri}");
    }
}

#[tokio::test]
async fn codes_on_the_wire_are_documented() {
    let fx = fixture();
    let token = fx.login("root", "rootpw").await;
    let probes: Vec<(&str, &str, Option<Value>)> = vec![
        ("GET", "/api/datasets/999", None),
        ("GET", "/api/datasets/abc", None),
        ("POST", "/api/rooms", Some(json!({"name": ""}))),
        ("POST", "/api/facilities/1/metrics", Some(json!({"analytic_id": 1, "label": "x", "weight": 1.0}))),
        ("GET", "/api/series?source=s&channel=a&from=10&to=5", None),
        ("GET", "/api/series?source=s&channel=a&from=0&to=5&bucket_ms=0&agg=mean", None),
        ("POST", "/api/auth/login", Some(json!({"name": "root", "secret": "no"}))),
        ("GET", "/api/nope", None),
    ];
    for (m, uri, body) in probes {
        let (s, v) = fx.call(m, uri, Some(&token), body).await;
        assert!(s.is_client_error(), "{m} {uri}: {s}");
        assert!(ERROR_CODES.contains(&code(&v)), "{m} {uri}: {v}");
    }
}

#[tokio::test]
async fn job_on_unreadable_dataset_is_not_authorized() {
    let fx = fixture();
    let admin = fx.platform.catalog.authorize(&fx.login("root", "rootpw").await).unwrap();
    let owner = fx.platform.catalog.register_user(&admin, "owner", crate::Role::Analyst, "pw").unwrap().principal();
    fx.platform.catalog.register_user(&admin, "other", crate::Role::Analyst, "pw").unwrap();
    let meta = crate::catalog::DatasetMeta { name: "secret".into(), ..Default::default() };
    let ds = fx.platform.catalog.create_dataset(&owner, meta, &b"x"[..]).unwrap();
    let token = fx.login("other", "pw").await;
    let meta = crate::catalog::AnalyticMeta { name: "a".into(), runtime_id: "rt-echo".into(), ..Default::default() };
    let other = fx.platform.catalog.authorize(&token).unwrap();
    let an = fx.platform.catalog.create_analytic(&other, meta, &b"x"[..]).unwrap();
    let (s, v) =
        fx.call("POST", "/api/jobs", Some(&token), Some(json!({"analytic_id": an.id, "dataset_id": ds.id}))).await;
    assert_eq!((s, code(&v)), (StatusCode::FORBIDDEN, "not-authorized"));
}

#[tokio::test]
async fn chat_round_trip() {
    let fx = fixture();
    let token = fx.login("root", "rootpw").await;
    let (s, room) = fx.call("POST", "/api/rooms", Some(&token), Some(json!({"name": "ops"}))).await;
    assert_eq!(s, StatusCode::CREATED);
    let uri = format!("/api/rooms/{}/messages", room["id"]);
    for body in ["a", "b", "c"] {
        fx.call("POST", &uri, Some(&token), Some(json!({"body": body}))).await;
    }
    let (_, msgs) = fx.call("GET", &format!("{uri}?since=1&limit=1"), Some(&token), None).await;
    assert_eq!(msgs[0]["seq"], 2);
    assert_eq!(msgs.as_array().unwrap().len(), 1);
    let (s, v) = fx.call("GET", &format!("{uri}?limit=0"), Some(&token), None).await;
    assert_eq!((s, code(&v)), (StatusCode::UNPROCESSABLE_ENTITY, "invalid-limit"));
}

#[test]
fn status_classes() {
    assert!(status_of(&Error::Storage("x".into())).is_server_error());
    assert!(status_of(&Error::StorageCorrupt("x".into())).is_server_error());
    assert!(status_of(&Error::InvalidWeight).is_client_error());
    assert!(status_of(&Error::NotAuthorized).is_client_error());
}
