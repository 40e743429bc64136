use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use dptradeoff::SessionConfig64;
use dptradeoff_cli::server::{router, serve, AppState};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn tiny_config() -> SessionConfig64 {
    let mut cfg = SessionConfig64::default();
    cfg.priors.front_particles = 200;
    cfg.user_model.particles = 48;
    cfg.user_model.q = 11;
    cfg.acquisition.num_curve_candidates = 2;
    cfg.acquisition.num_p_candidates = 5;
    cfg.acquisition.num_sims = 8;
    cfg.acquisition.p_grid_size = 51;
    cfg.loop_.num_steps = 4;
    cfg
}

fn app() -> (Arc<AppState>, Router) {
    let state = Arc::new(AppState::new(tiny_config(), 7));
    (state.clone(), router(state))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).expect("JSON body") };
    (status, value)
}

async fn create(app: &Router, overrides: &str) -> String {
    let (status, body) = call(app, "POST", "/sessions", Some(overrides)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["status"], "awaiting_evaluation");
    body["id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn healthz() {
    let (_, app) = app();
    assert_eq!(call(&app, "GET", "/healthz", None).await, (StatusCode::OK, json!({"ok": true})));
}

#[tokio::test]
async fn full_round_trip_follows_the_alternation() {
    let (_, app) = app();
    let id = create(&app, "{}").await;

    // A choice before the first evaluation conflicts with the schedule.
    let (status, body) = call(&app, "POST", &format!("/sessions/{id}/choice"), Some(r#"{"chosen_index": 0}"#)).await;
    assert_eq!(status, StatusCode::CONFLICT, "{body}");
    assert!(body["error"].as_str().unwrap().contains("awaiting_evaluation"));
    let (status, _) = call(&app, "GET", &format!("/sessions/{id}/query"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (status, body) = call(&app, "POST", &format!("/sessions/{id}/evaluate"), None).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["status"], "awaiting_choice");
    assert_eq!(body["step"], 1);
    let eps = body["observation"]["epsilon"].as_f64().unwrap();
    assert!((0.01..=0.5).contains(&eps));
    assert!(body["front_summary"]["ess"].as_f64().unwrap() > 0.0);

    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/evaluate"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (status, query) = call(&app, "GET", &format!("/sessions/{id}/query"), None).await;
    assert_eq!(status, StatusCode::OK, "{query}");
    let points = query["points"].as_array().unwrap();
    assert_eq!(points.len(), 11);
    assert_eq!(query["step"], 1);
    for key in ["kind", "L", "k", "b", "c"] {
        assert!(!query["curve"][key].is_null(), "{key}");
    }
    // Fetching again serves the same query.
    assert_eq!(call(&app, "GET", &format!("/sessions/{id}/query"), None).await.1, query);

    let (_, before) = call(&app, "GET", &format!("/sessions/{id}/state"), None).await;
    let (status, body) = call(&app, "POST", &format!("/sessions/{id}/choice"), Some(r#"{"chosen_index": 11}"#)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");

    let (status, body) = call(&app, "POST", &format!("/sessions/{id}/choice"), Some(r#"{"chosen_index": 9}"#)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["status"], "awaiting_evaluation");
    let mean_w = body["pref_summary"]["mean_w"].as_array().unwrap();
    assert_eq!(mean_w.len(), 2);
    assert_ne!(body["pref_summary"]["mean_w"], before["mean_w"]);
    assert!(body["pref_summary"]["ess"].as_f64().unwrap() < before["pref_ess"].as_f64().unwrap());

    let (status, state) = call(&app, "GET", &format!("/sessions/{id}/state"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(state["step"], 2);
    assert_eq!(state["choice_count"], 1);
    assert_eq!(state["obs_history"].as_array().unwrap().len(), 1);
    assert_eq!(state["posterior_mean_curve"].as_array().unwrap().len(), 51);
    assert_eq!(state["credible_band"].as_array().unwrap().len(), 51);
    let eps_star = state["p_star_denormalized"].as_f64().unwrap();
    assert!((0.01..=0.5).contains(&eps_star));
    assert!(state["u_star"].as_f64().unwrap() > 0.0);
    let trace = state["metric_trace"].as_array().unwrap();
    assert_eq!(trace.len(), 2);
    // No ground truth in live mode: the metrics are omitted, not invented.
    assert!(trace.iter().all(|m| m.get("regret").is_none() && m.get("pref_error").is_none()));

    call(&app, "POST", &format!("/sessions/{id}/evaluate"), None).await;
    call(&app, "GET", &format!("/sessions/{id}/query"), None).await;
    let (_, body) = call(&app, "POST", &format!("/sessions/{id}/choice"), Some(r#"{"chosen_index": 0}"#)).await;
    assert_eq!(body["status"], "done");
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/evaluate"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn served_points_are_exactly_what_the_model_conditions_on() {
    let (state, app) = app();
    let id = create(&app, "{}").await;
    call(&app, "POST", &format!("/sessions/{id}/evaluate"), None).await;
    let (_, query) = call(&app, "GET", &format!("/sessions/{id}/query"), None).await;
    call(&app, "POST", &format!("/sessions/{id}/choice"), Some(r#"{"chosen_index": 4}"#)).await;

    let dir = tempfile::tempdir().unwrap();
    state.write_snapshots(dir.path()).unwrap();
    let snap: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join(format!("{id}.json"))).unwrap()).unwrap();
    let record = &snap["state"]["choice_history"][0];
    assert_eq!(record["chosen_index"], 4);
    let conditioned = record["query"]["points"].as_array().unwrap();
    let served = query["points"].as_array().unwrap();
    assert_eq!(conditioned.len(), served.len());
    for (c, s) in conditioned.iter().zip(served) {
        assert_eq!(c["p"].as_f64().unwrap().to_bits(), s["p"].as_f64().unwrap().to_bits());
        assert_eq!(c["alpha"].as_f64().unwrap().to_bits(), s["alpha"].as_f64().unwrap().to_bits());
    }
}

#[tokio::test]
async fn errors_have_json_bodies_and_the_right_codes() {
    let (_, app) = app();
    let (status, body) = call(&app, "GET", "/sessions/nope/state", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["error"].as_str().unwrap().contains("nope"));
    let (status, _) = call(&app, "POST", "/sessions/nope/choice", Some(r#"{"chosen_index": 0}"#)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, body) = call(&app, "POST", "/sessions", Some("{not json")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].is_string());
    let (status, body) = call(&app, "POST", "/sessions", Some(r#"{"loop": {"num_stepz": 3}}"#)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("num_stepz"), "{body}");
    let (status, _) = call(&app, "POST", "/sessions", Some("[1, 2]")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let id = create(&app, "").await;
    call(&app, "POST", &format!("/sessions/{id}/evaluate"), None).await;
    call(&app, "GET", &format!("/sessions/{id}/query"), None).await;
    for bad in ["{}", r#"{"chosen_index": -1}"#, r#"{"chosen_index": "two"}"#, "garbage"] {
        let (status, body) = call(&app, "POST", &format!("/sessions/{id}/choice"), Some(bad)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{bad}");
        assert!(body["error"].is_string());
    }
}

#[tokio::test]
async fn sessions_do_not_share_state() {
    let (_, app) = app();
    let a = create(&app, "{}").await;
    let b = create(&app, r#"{"user_model": {"q": 5}}"#).await;
    assert_ne!(a, b);
    call(&app, "POST", &format!("/sessions/{a}/evaluate"), None).await;
    let (_, sa) = call(&app, "GET", &format!("/sessions/{a}/state"), None).await;
    let (_, sb) = call(&app, "GET", &format!("/sessions/{b}/state"), None).await;
    assert_eq!(sa["step"], 1);
    assert_eq!(sb["step"], 0);
    assert_eq!(sb["status"], "awaiting_evaluation");

    call(&app, "POST", &format!("/sessions/{b}/evaluate"), None).await;
    let (_, qb) = call(&app, "GET", &format!("/sessions/{b}/query"), None).await;
    assert_eq!(qb["points"].as_array().unwrap().len(), 5);

    let (_, list) = call(&app, "GET", "/sessions", None).await;
    assert_eq!(list.as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn known_front_sessions_only_interact() {
    let (_, app) = app();
    let (status, body) = call(&app, "POST", "/sessions", Some(r#"{"loop": {"known_front": true}}"#)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "awaiting_choice");
    let id = body["id"].as_str().unwrap();
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/evaluate"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    // A choice needs a served query first.
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/choice"), Some(r#"{"chosen_index": 0}"#)).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn snapshots_restore_sessions() {
    let (state, app) = app();
    let id = create(&app, "{}").await;
    call(&app, "POST", &format!("/sessions/{id}/evaluate"), None).await;
    let (_, before) = call(&app, "GET", &format!("/sessions/{id}/state"), None).await;

    let dir = tempfile::tempdir().unwrap();
    assert_eq!(state.write_snapshots(dir.path()).unwrap(), 1);
    let restored = Arc::new(AppState::new(tiny_config(), 0));
    assert_eq!(restored.load_snapshots(dir.path()).unwrap(), 1);
    let app2 = router(restored);
    let (status, after) = call(&app2, "GET", &format!("/sessions/{id}/state"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(before, after);
}

#[tokio::test]
async fn busy_port_is_a_startup_error() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap();
    let err = serve(addr, Arc::new(AppState::new(tiny_config(), 0)), None).await.unwrap_err();
    assert!(format!("{err:#}").contains("cannot bind"), "{err:#}");
}
