use std::path::Path;
use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;
use uu_audit::characterize::TargetMode;
use uu_audit::evalcv::Split;
use uu_audit::features::indicator_ids;
use uu_audit::grouping::Group;
use uu_audit::pipeline::{run_audit, AuditConfig, GridSize};
use uu_audit::synth::{generate_course, SynthConfig};
use uu_audit_serve::{router, AppState};

struct Fixture {
    dir: TempDir,
    test_fractions: Vec<(Group, f64)>,
    n: usize,
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let cfg = SynthConfig {
            n_students: 120,
            n_weeks: 4,
            ..SynthConfig::flipped(3).with_confounding(0.2)
        };
        let course = generate_course(&cfg).unwrap();
        let audit_cfg = AuditConfig {
            grid: GridSize::Compact,
            k: 4,
            seed: 3,
            ..AuditConfig::default()
        };
        let audit = run_audit(&course.events, &course.schedule, &course.outcomes, &course.demographics, &audit_cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let ch = audit.write_artifacts(dir.path(), TargetMode::Binary).unwrap();
        assert!(ch.is_some(), "fixture needs a characterization");
        Fixture {
            test_fractions: Group::ALL
                .iter()
                .map(|g| (*g, audit.prevalence.fraction(Split::Test, *g)))
                .collect(),
            n: course.outcomes.len(),
            dir,
        }
    })
}

/// Copy of the fixture artifacts, so journals do not leak between tests.
fn artifact_dir() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    for entry in std::fs::read_dir(fixture().dir.path()).unwrap() {
        let entry = entry.unwrap();
        std::fs::copy(entry.path(), dir.path().join(entry.file_name())).unwrap();
    }
    dir
}

fn app(dir: &Path) -> axum::Router {
    router(Arc::new(AppState::open(dir, None).unwrap()), None)
}

async fn call(app: &axum::Router, req: Request<Body>) -> (StatusCode, Value) {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    let body = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, body)
}

async fn get(app: &axum::Router, uri: &str) -> (StatusCode, Value) {
    call(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post(app: &axum::Router, uri: &str, body: &str) -> (StatusCode, Value) {
    let req = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    call(app, req).await
}

#[tokio::test]
async fn data_routes_answer_409_before_an_audit() {
    let empty = tempfile::tempdir().unwrap();
    let app = app(empty.path());
    assert_eq!(get(&app, "/api/roster").await.0, StatusCode::CONFLICT);
    assert_eq!(get(&app, "/api/characterization").await.0, StatusCode::CONFLICT);
    let (status, _) = post(&app, "/api/interventions", r#"{"user_id":"s1","marked":true}"#).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn roster_groups_match_the_audit_prevalence() {
    let dir = artifact_dir();
    let app = app(dir.path());
    let (status, body) = get(&app, "/api/roster?delta=0.25").await;
    assert_eq!(status, StatusCode::OK);
    let rows = body["rows"].as_array().unwrap();
    assert_eq!(rows.len(), fixture().n);
    for (g, fraction) in &fixture().test_fractions {
        let count = body["counts"][g.short()].as_u64().unwrap() as f64;
        assert!((count / fixture().n as f64 - fraction).abs() < 1e-12, "{g:?}");
    }
}

#[tokio::test]
async fn delta_out_of_range_is_400() {
    let dir = artifact_dir();
    let app = app(dir.path());
    for q in ["0.7", "0", "0.5", "-0.1", "abc"] {
        let (status, _) = get(&app, &format!("/api/roster?delta={q}")).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "delta={q}");
    }
}

#[tokio::test]
async fn known_unknowns_grow_with_delta() {
    let dir = artifact_dir();
    let app = app(dir.path());
    let mut last = 0;
    for delta in [0.05, 0.25, 0.45, 0.49] {
        let (_, body) = get(&app, &format!("/api/roster?delta={delta}")).await;
        let ku = body["counts"]["KU"].as_u64().unwrap();
        assert!(ku >= last, "KU fell to {ku} at {delta}");
        last = ku;
    }
}

#[tokio::test]
async fn roster_order_is_risk_then_user_id() {
    let dir = artifact_dir();
    let app = app(dir.path());
    let (_, body) = get(&app, "/api/roster").await;
    let rows = body["rows"].as_array().unwrap();
    let key = |r: &Value| {
        (
            !r["uu_risk"].as_bool().unwrap(),
            -r["risk_score"].as_f64().unwrap(),
            r["user_id"].as_str().unwrap().to_string(),
        )
    };
    for pair in rows.windows(2) {
        let (a, b) = (key(&pair[0]), key(&pair[1]));
        assert!(a.partial_cmp(&b) != Some(std::cmp::Ordering::Greater), "{a:?} before {b:?}");
    }
    for r in rows {
        let c = r["c"].as_f64().unwrap();
        if r["uu_risk"].as_bool().unwrap() {
            assert!(c >= 0.25);
        }
        assert!(r["explanation"].as_array().unwrap().len() <= 3);
    }
}

#[tokio::test]
async fn characterization_passthrough_uses_known_ids() {
    let dir = artifact_dir();
    let app = app(dir.path());
    let (status, body) = get(&app, "/api/characterization").await;
    assert_eq!(status, StatusCode::OK);
    let ids: Vec<&str> = indicator_ids().collect();
    let coefficients = body["coefficients"].as_array().unwrap();
    assert!(!coefficients.is_empty());
    let mut last = f64::INFINITY;
    for c in coefficients {
        let id = c["id"].as_str().unwrap();
        assert!(
            ids.contains(&id) || id.starts_with("gender=") || id.starts_with("provenience="),
            "unexpected id {id}"
        );
        let g = c["gamma"].as_f64().unwrap().abs();
        assert!(g <= last);
        last = g;
    }
    let raw = std::fs::read_to_string(dir.path().join("characterization.json")).unwrap();
    assert_eq!(body, serde_json::from_str::<Value>(&raw).unwrap());
}

#[tokio::test]
async fn marks_are_validated() {
    let dir = artifact_dir();
    let app = app(dir.path());
    let (status, _) = post(&app, "/api/interventions", r#"{"user_id":"nobody","marked":true}"#).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    for body in [r#"{"user_id":"s1"}"#, "not json", r#"{"user_id":"s1","marked":"yes"}"#, r#"{"user_id":"s1","marked":true,"extra":1}"#] {
        let (status, _) = post(&app, "/api/interventions", body).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    }
    assert_eq!(get(&app, "/api/interventions/nobody").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn marks_survive_a_restart() {
    let dir = artifact_dir();
    let (_, roster) = get(&app(dir.path()), "/api/roster").await;
    let user = roster["rows"][0]["user_id"].as_str().unwrap().to_string();
    let other = roster["rows"][1]["user_id"].as_str().unwrap().to_string();

    let first = app(dir.path());
    let body = json!({"user_id": user, "marked": true, "note": "email sent"}).to_string();
    let (status, mark) = post(&first, "/api/interventions", &body).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(mark["author"], "instructor");
    let body = json!({"user_id": other, "marked": true, "author": "ta"}).to_string();
    post(&first, "/api/interventions", &body).await;
    let body = json!({"user_id": other, "marked": false}).to_string();
    post(&first, "/api/interventions", &body).await;
    let (_, read_back) = get(&first, &format!("/api/interventions/{user}")).await;
    assert_eq!(read_back["marked"], true);
    drop(first);

    let restarted = app(dir.path());
    let (status, mark) = get(&restarted, &format!("/api/interventions/{user}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(mark["marked"], true);
    assert_eq!(mark["note"], "email sent");
    let (_, other_mark) = get(&restarted, &format!("/api/interventions/{other}")).await;
    assert_eq!(other_mark["marked"], false);
    let (_, all) = get(&restarted, "/api/interventions").await;
    assert_eq!(all.as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn static_bundle_is_served_next_to_the_api() {
    let dir = artifact_dir();
    let bundle = tempfile::tempdir().unwrap();
    std::fs::write(bundle.path().join("index.html"), "<html>triage</html>").unwrap();
    let app = router(Arc::new(AppState::open(dir.path(), None).unwrap()), Some(bundle.path()));
    let res = app
        .clone()
        .oneshot(Request::get("/index.html").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(res.status(), StatusCode::OK);
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    assert_eq!(&bytes[..], b"<html>triage</html>");
    assert_eq!(get(&app, "/api/roster").await.0, StatusCode::OK);
}
