use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use scatterfit::fit::Snapshot;
use scatterfit::model::chi2_current;
use scatterfit_cli::service::{router, Session};
use scatterfit_cli::Workspace;
use serde_json::{json, Value};
use tower::ServiceExt;

fn sphere(q: f64, r: f64) -> f64 {
    let x = q * r;
    let f = 3.0 * (x.sin() - x * x.cos()) / x.powi(3);
    1e5 * (1.2e-3 * 4.0 / 3.0 * PI * r.powi(3) * f).powi(2) + 4.0
}

fn sphere_workspace(r0: f64, points: usize) -> Workspace {
    let q: Vec<f64> = (1..=points).map(|i| 2.0 * i as f64 / points as f64).collect();
    let y: Vec<f64> = q.iter().map(|&q| sphere(q, 7.5)).collect();
    let model = json!({
        "variables": ["q"],
        "parameters": [
            { "name": "R", "value": r0, "bounds": [5, 10] },
            { "name": "C", "value": 1.2, "scale": 1e-3, "bounds": [0.5, 2] },
            { "name": "B", "value": 4, "fixed": true },
            { "name": "N", "value": 1e5, "fixed": true },
            { "name": "V", "expr": "4/3*pi*R^3" }
        ],
        "materials": [{ "name": "film", "sld_re": 4e-4 }, { "name": "si", "sld_re": 2.074e-4 }],
        "sample": {
            "type": "multilayer",
            "name": "film",
            "substrate": { "material": "si", "roughness": 0.5 },
            "layers": [{ "material": "film", "thickness": 10, "roughness": 0.5 }]
        },
        "functors": [
            { "name": "F", "expr": "3*(sin(q*R) - q*R*cos(q*R))/pow(q*R, 3)" },
            { "name": "I", "expr": "N*(C*V*F)^2 + B" },
            { "name": "Rfilm", "kind": "specrefl", "sample": "film", "variable": "q" }
        ],
        "datasets": [{ "name": "sim", "coords": [q], "intensity": y }],
        "models": [{ "name": "m", "functor": "I", "dataset": "sim" }]
    });
    Workspace::from_json(&model.to_string(), Path::new(".")).unwrap()
}

async fn send(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let v = serde_json::from_slice(&bytes).unwrap_or(Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, v)
}

async fn events(app: &Router) -> Vec<Value> {
    let req = Request::builder().uri("/api/fit/events").body(Body::empty()).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    String::from_utf8_lossy(&bytes)
        .lines()
        .filter_map(|l| l.strip_prefix("data: "))
        .map(|d| serde_json::from_str(d).unwrap())
        .collect()
}

fn setup(r0: f64, points: usize) -> (Arc<Session>, Router) {
    let s = Session::new(sphere_workspace(r0, points));
    let app = router(s.clone(), None);
    (s, app)
}

#[tokio::test]
async fn health_and_session_inventory() {
    let (_, app) = setup(7.5, 50);
    let (st, v) = send(&app, Method::GET, "/api/health", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["status"], "ok");
    let (st, v) = send(&app, Method::GET, "/api/session", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["revision"], 0);
    let params = v["parameters"].as_array().unwrap();
    assert_eq!(params.len(), 4);
    assert_eq!(params[0]["id"], "p0");
    assert_eq!(params[0]["name"], "R");
    assert_eq!(params[0]["bounds"], json!([5.0, 10.0]));
    assert_eq!(params[2]["fixed"], true);
    assert_eq!(v["dependents"][0]["name"], "V");
    assert_eq!(v["functors"].as_array().unwrap().len(), 3);
    assert_eq!(v["models"][0]["dataset"], "sim");
    assert_eq!(v["datasets"][0]["len"], 50);
    assert_eq!(v["samples"][0]["kind"], "multilayer");
}

#[tokio::test]
async fn patched_curve_matches_library_bitwise() {
    let (s, app) = setup(7.5, 50);
    let (st, v) = send(&app, Method::PATCH, "/api/params", Some(json!({ "p0": 8.0 }))).await;
    assert_eq!(st, StatusCode::OK, "{v}");
    assert_eq!(v["revision"], 1);
    let (st, c) = send(&app, Method::GET, "/api/curve?functor=I&grid=q%3D0.01%3A3%40301", None).await;
    assert_eq!(st, StatusCode::OK, "{c}");
    assert_eq!(c["revision"], 1);
    assert_eq!(c["shape"], json!([301]));
    let q: Vec<f64> = c["coords"][0].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    let got: Vec<f64> = c["values"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    let expect = s.ws.functor("I").unwrap().evaluate_real(&[&q]).unwrap();
    assert_eq!(s.ws.parameters[0].value(), 8.0);
    for (a, b) in got.iter().zip(&expect) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[tokio::test]
async fn curve_defaults_to_dataset_coordinates() {
    let (_, app) = setup(7.5, 40);
    let (st, c) = send(&app, Method::GET, "/api/curve?functor=I", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(c["values"].as_array().unwrap().len(), 40);
    let (st, _) = send(&app, Method::GET, "/api/curve?functor=nope", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    let (st, _) = send(&app, Method::GET, "/api/curve?functor=I&grid=q%3D1%3A0%3A1", None).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn patch_validation() {
    let (s, app) = setup(7.5, 50);
    let (st, _) = send(&app, Method::PATCH, "/api/params", Some(json!({ "p9": 1.0 }))).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    // one bad entry rejects the whole batch
    let (st, _) = send(&app, Method::PATCH, "/api/params", Some(json!({ "p1": 1.5, "p0": 12.0 }))).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(s.ws.parameters[1].raw_value(), 1.2);
    assert_eq!(s.ws.parameters[0].raw_value(), 7.5);
    let (st, v) = send(
        &app,
        Method::PATCH,
        "/api/params",
        Some(json!({ "p0": { "raw_value": 12.0, "bounds": [5, 15] }, "p2": { "fixed": false } })),
    )
    .await;
    assert_eq!(st, StatusCode::OK, "{v}");
    assert_eq!(s.ws.parameters[0].raw_value(), 12.0);
    assert_eq!(s.ws.parameters[0].bounds(), Some((5.0, 15.0)));
    assert!(!s.ws.parameters[2].is_fixed());
    let (st, _) = send(&app, Method::PATCH, "/api/params", Some(json!({ "p0": { "bounds": null } }))).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(s.ws.parameters[0].bounds(), None);
}

#[tokio::test]
async fn chi2_matches_library() {
    let (s, app) = setup(7.3, 50);
    let (st, v) = send(&app, Method::GET, "/api/chi2", None).await;
    assert_eq!(st, StatusCode::OK);
    let lib = chi2_current(&s.ws.objective().unwrap(), true).unwrap();
    assert_eq!(v["chi2"].as_f64().unwrap().to_bits(), lib.to_bits());
    assert_eq!(v["models"][0]["chi2"].as_f64().unwrap().to_bits(), lib.to_bits());
}

#[tokio::test]
async fn profile_arrays() {
    let (_, app) = setup(7.5, 10);
    let (st, v) = send(&app, Method::GET, "/api/profile?sample=film&zmin=-10&zmax=30&n=81", None).await;
    assert_eq!(st, StatusCode::OK, "{v}");
    let z = v["z"].as_array().unwrap();
    let re = v["sld_re"].as_array().unwrap();
    assert_eq!(z.len(), 81);
    assert_eq!(re.len(), 81);
    assert!(re[0].as_f64().unwrap().abs() < 1e-12);
    assert!((re[30].as_f64().unwrap() - 4e-4).abs() < 1e-8);
    assert!((re[80].as_f64().unwrap() - 2.074e-4).abs() < 1e-8);
    let (st, _) = send(&app, Method::GET, "/api/profile?sample=none", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn fit_events_are_ordered_and_end_converged() {
    let (s, app) = setup(7.5 * 1.05, 200);
    let (st, v) = send(&app, Method::POST, "/api/fit", Some(json!({ "optimizer": "lm" }))).await;
    assert_eq!(st, StatusCode::ACCEPTED, "{v}");
    assert_eq!(v["fit_id"], 1);
    let evs = events(&app).await;
    let last = evs.last().unwrap();
    assert_eq!(last["type"], "finished");
    assert_eq!(last["status"], "converged");
    assert_eq!(evs.iter().filter(|e| e["type"] == "finished").count(), 1);
    let chi: Vec<f64> = evs.iter().filter_map(|e| e["chi2"].as_f64()).collect();
    assert!(chi.windows(2).all(|w| w[1] <= w[0]), "{chi:?}");
    let its: Vec<u64> = evs.iter().filter(|e| e["type"] == "progress").map(|e| e["iteration"].as_u64().unwrap()).collect();
    assert!(its.windows(2).all(|w| w[0] < w[1]));
    let (_, sess) = send(&app, Method::GET, "/api/session", None).await;
    assert_eq!(sess["revision"], 1);
    assert!((s.ws.parameters[0].raw_value() - 7.5).abs() < 1e-6);
    assert!(sess["parameters"][0]["error"].as_f64().is_some());
}

#[tokio::test]
async fn running_fit_blocks_writes_and_interrupt_keeps_best() {
    let (s, app) = setup(7.5 * 1.05, 400);
    let body = json!({ "method": "de", "population_size": 80, "max_generations": 1000000, "seed": 2, "final_polish_iters": 0 });
    let (st, v) = send(&app, Method::POST, "/api/fit", Some(body.clone())).await;
    assert_eq!(st, StatusCode::ACCEPTED, "{v}");
    tokio::time::sleep(std::time::Duration::from_millis(200)).await;
    let before = s.ws.parameters[0].raw_value();
    let (st, _) = send(&app, Method::PATCH, "/api/params", Some(json!({ "p0": 6.0 }))).await;
    assert_eq!(st, StatusCode::CONFLICT);
    assert_eq!(s.ws.parameters[0].raw_value(), before);
    let (st, _) = send(&app, Method::PUT, "/api/params/snapshot", Some(serde_json::to_value(s.snapshot()).unwrap())).await;
    assert_eq!(st, StatusCode::CONFLICT);
    let (st, _) = send(&app, Method::POST, "/api/fit", Some(body)).await;
    assert_eq!(st, StatusCode::CONFLICT);
    let (st, v) = send(&app, Method::POST, "/api/fit/interrupt", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["interrupted"], true);
    let evs = events(&app).await;
    let last = evs.last().unwrap();
    assert_eq!(last["status"], "interrupted");
    let best = last["params"]["R"].as_f64().unwrap();
    let (_, sess) = send(&app, Method::GET, "/api/session", None).await;
    assert_eq!(sess["parameters"][0]["value"].as_f64().unwrap(), best);
    assert_eq!(sess["fit"]["running"], false);
    // progress is coalesced: no more than 20 per second plus the terminal one
    let progress = evs.iter().filter(|e| e["type"] == "progress").count();
    assert!(progress >= 1);
}

#[tokio::test]
async fn fit_precondition_is_422() {
    let (_, app) = setup(7.5, 50);
    send(&app, Method::PATCH, "/api/params", Some(json!({ "p1": { "bounds": null } }))).await;
    let (st, v) = send(&app, Method::POST, "/api/fit", Some(json!({ "method": "de" }))).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(v["error"].as_str().unwrap().contains("`C`"));
    let (st, _) = send(&app, Method::GET, "/api/fit/events", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn snapshot_round_trip() {
    let (s, app) = setup(7.5, 50);
    let (st, snap) = send(&app, Method::GET, "/api/params/snapshot", None).await;
    assert_eq!(st, StatusCode::OK);
    let saved: Snapshot = serde_json::from_value(snap.clone()).unwrap();
    send(&app, Method::PATCH, "/api/params", Some(json!({ "p0": 9.0, "p1": { "fixed": true } }))).await;
    assert_eq!(s.ws.parameters[0].raw_value(), 9.0);
    let (st, v) = send(&app, Method::PUT, "/api/params/snapshot", Some(snap)).await;
    assert_eq!(st, StatusCode::OK, "{v}");
    assert_eq!(v["revision"], 2);
    let (_, again) = send(&app, Method::GET, "/api/params/snapshot", None).await;
    let again: Snapshot = serde_json::from_value(again).unwrap();
    assert_eq!(again, saved);
    let mut bad = serde_json::to_value(&saved).unwrap();
    bad["parameters"][0]["name"] = json!("nope");
    let (st, _) = send(&app, Method::PUT, "/api/params/snapshot", Some(bad)).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    let mut bad = serde_json::to_value(&saved).unwrap();
    bad["parameters"][0]["raw_value"] = json!(50.0);
    let (st, _) = send(&app, Method::PUT, "/api/params/snapshot", Some(bad)).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(s.ws.parameters[0].raw_value(), 7.5);
}

#[tokio::test]
async fn static_assets_are_served() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<html>ui</html>").unwrap();
    let s = Session::new(sphere_workspace(7.5, 10));
    let app = router(s, Some(dir.path().to_path_buf()));
    let (st, v) = send(&app, Method::GET, "/index.html", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v, Value::String("<html>ui</html>".into()));
}

#[tokio::test]
async fn throttle_coalesces_and_ends_once() {
    use futures::StreamExt;
    use scatterfit::fit::{FitEvent, FitStatus, Progress};
    let (tx, rx) = tokio::sync::mpsc::unbounded_channel();
    for i in 0..500 {
        tx.send(FitEvent::Progress(Progress {
            iteration: i,
            chi2: 1000.0 - i as f64,
            elapsed: 0.0,
            parameters: vec![("R".into(), i as f64)],
        }))
        .unwrap();
    }
    tx.send(FitEvent::Finished {
        status: FitStatus::Converged,
        chi2: Some(500.0),
        error: None,
        result: None,
    })
    .unwrap();
    let out: Vec<Value> = scatterfit_cli::service::throttle(rx, std::time::Duration::from_millis(50)).collect().await;
    // first event goes out at once, the rest of the burst collapses into the latest
    assert_eq!(out.len(), 3, "{out:?}");
    assert_eq!(out[0]["iteration"], 0);
    assert_eq!(out[1]["iteration"], 499);
    assert_eq!(out[2]["type"], "finished");
    assert_eq!(out[2]["status"], "converged");
}
