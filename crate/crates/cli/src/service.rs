//! HTTP service over one loaded workspace.
//!
//! Parameter writes bump the revision; curves and χ² are computed under a
//! read lock so the revision they report is the one they were computed at.
//! A finished fit also counts as one mutation.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use futures::Stream;
use scatterfit::expr::Values;
use scatterfit::fit::{FitEvent, FitHandle, FitMeta, FitStatus, Optimizer, Snapshot, SnapshotError};
use scatterfit::model::chi2_current;
use scatterfit::reflect::ProfileComponent;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::mpsc;
use tokio::time::Instant;

use crate::error::CliError;
use crate::fitcmd::{choose_optimizer, fit_error};
use crate::grid::Grid;
use crate::modelfile::{SampleKind, Workspace};
use crate::simulate::{evaluate, Points};

/// Minimum spacing of progress events on the stream.
pub const EVENT_INTERVAL: Duration = Duration::from_millis(50);

struct ActiveFit {
    id: u64,
    handle: FitHandle,
    counted: bool,
}

#[derive(Default)]
struct FitSlot {
    next_id: u64,
    current: Option<ActiveFit>,
    last: Option<FitMeta>,
}

pub struct Session {
    pub ws: Workspace,
    revision: RwLock<u64>,
    fit: Mutex<FitSlot>,
}

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

fn not_found(m: impl Into<String>) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, m.into())
}

fn conflict() -> ApiError {
    ApiError(StatusCode::CONFLICT, "a fit is running".into())
}

fn invalid(m: impl ToString) -> ApiError {
    ApiError(StatusCode::UNPROCESSABLE_ENTITY, m.to_string())
}

fn cli_error(e: CliError) -> ApiError {
    invalid(e)
}

type ApiResult = Result<Json<Value>, ApiError>;

impl Session {
    pub fn new(ws: Workspace) -> Arc<Session> {
        Arc::new(Session {
            ws,
            revision: RwLock::new(0),
            fit: Mutex::new(FitSlot::default()),
        })
    }

    // Counts a fit that has finished since the last look.
    fn sync(&self, slot: &mut FitSlot) {
        if let Some(a) = &mut slot.current {
            if !a.counted && a.handle.is_finished() {
                a.counted = true;
                *self.revision.write().unwrap() += 1;
                let sub = a.handle.subscribe();
                if let Some(FitEvent::Finished { result: Some(r), .. }) = sub.replay.last() {
                    slot.last = Some(FitMeta::now(r));
                }
            }
        }
    }

    fn running(slot: &FitSlot) -> bool {
        slot.current.as_ref().is_some_and(|a| !a.handle.is_finished())
    }

    pub fn revision(&self) -> u64 {
        let mut slot = self.fit.lock().unwrap();
        self.sync(&mut slot);
        *self.revision.read().unwrap()
    }

    pub fn is_fit_running(&self) -> bool {
        Session::running(&self.fit.lock().unwrap())
    }

    pub fn snapshot(&self) -> Snapshot {
        let mut slot = self.fit.lock().unwrap();
        self.sync(&mut slot);
        Snapshot::capture(&self.ws.parameters, slot.last.clone())
    }

    /// Interrupts any running fit and waits for it to hand back its best
    /// point.
    pub fn stop_fit(&self) {
        let mut slot = self.fit.lock().unwrap();
        if let Some(a) = slot.current.take() {
            a.handle.interrupt();
            let counted = a.counted;
            let res = a.handle.wait();
            if !counted {
                *self.revision.write().unwrap() += 1;
            }
            if let Ok(r) = res {
                slot.last = Some(FitMeta::now(&r));
            }
        }
    }

    fn chi2(&self) -> Result<(f64, Vec<(String, f64)>), ApiError> {
        let obj = self.ws.objective().map_err(cli_error)?;
        let total = chi2_current(&obj, true).map_err(invalid)?;
        let each = self
            .ws
            .models
            .iter()
            .map(|m| Ok((m.name().to_string(), chi2_current(m, true).map_err(invalid)?)))
            .collect::<Result<Vec<_>, ApiError>>()?;
        Ok((total, each))
    }
}

pub fn router(session: Arc<Session>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/session", get(session_info))
        .route("/api/params", patch(patch_params))
        .route("/api/params/snapshot", get(get_snapshot).put(put_snapshot))
        .route("/api/curve", get(curve))
        .route("/api/profile", get(profile))
        .route("/api/chi2", get(chi2))
        .route("/api/fit", post(start_fit))
        .route("/api/fit/interrupt", post(interrupt_fit))
        .route("/api/fit/events", get(fit_events))
        .with_state(session);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

fn param_json(i: usize, p: &scatterfit::Parameter) -> Value {
    let st = p.state();
    json!({
        "id": format!("p{i}"),
        "name": st.name,
        "value": st.value(),
        "raw_value": st.raw_value,
        "scale": st.scale,
        "error": st.error,
        "bounds": st.bounds.map(|(a, b)| [a, b]),
        "fixed": st.fixed,
        "units": st.units,
    })
}

async fn session_info(State(s): State<Arc<Session>>) -> ApiResult {
    let (fit, revision) = {
        let mut slot = s.fit.lock().unwrap();
        s.sync(&mut slot);
        let fit = match &slot.current {
            Some(a) => json!({
                "id": a.id,
                "running": !a.handle.is_finished(),
                "status": slot.last.as_ref().map(|m| m.status.as_str()),
            }),
            None => Value::Null,
        };
        (fit, *s.revision.read().unwrap())
    };
    let guard = s.revision.read().unwrap();
    let ws = &s.ws;
    let parameters: Vec<Value> = ws.parameters.iter().enumerate().map(|(i, p)| param_json(i, p)).collect();
    let dependents: Vec<Value> = ws
        .dependents
        .iter()
        .map(|(n, e)| json!({ "name": n, "expr": e.to_string(), "value": e.value().ok() }))
        .collect();
    let functors: Vec<Value> = ws
        .functors
        .iter()
        .map(|f| {
            json!({
                "name": f.name(),
                "variables": f.variables().iter().map(|v| v.name()).collect::<Vec<_>>(),
                "complex": f.is_complex(),
            })
        })
        .collect();
    let models: Vec<Value> = ws
        .models
        .iter()
        .map(|m| {
            json!({
                "name": m.name(),
                "functor": m.functor().name(),
                "dataset": m.data().name(),
                "scaling": m.scaling(),
                "chi2": chi2_current(m, true).ok(),
            })
        })
        .collect();
    let datasets: Vec<Value> = ws
        .datasets
        .iter()
        .map(|d| json!({ "name": d.name(), "dims": d.dims(), "len": d.len(), "active": d.active_len() }))
        .collect();
    let samples: Vec<Value> = ws
        .samples
        .iter()
        .map(|x| {
            let kind = match x.kind {
                SampleKind::Multilayer(_) => "multilayer",
                SampleKind::Potential(_) => "potential",
            };
            json!({ "name": x.name, "kind": kind })
        })
        .collect();
    let chi2 = if ws.models.is_empty() { None } else { s.chi2().ok().map(|c| c.0) };
    drop(guard);
    Ok(Json(json!({
        "revision": revision,
        "parameters": parameters,
        "dependents": dependents,
        "variables": ws.variables.iter().map(|v| v.name()).collect::<Vec<_>>(),
        "functors": functors,
        "models": models,
        "datasets": datasets,
        "samples": samples,
        "fit": fit,
        "chi2": chi2,
    })))
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ParamPatch {
    Raw(f64),
    Fields {
        #[serde(default)]
        raw_value: Option<f64>,
        #[serde(default)]
        fixed: Option<bool>,
        #[serde(default, deserialize_with = "double_option")]
        bounds: Option<Option<[f64; 2]>>,
    },
}

// distinguishes an absent `bounds` from an explicit null
fn double_option<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<Option<[f64; 2]>>, D::Error> {
    Option::<[f64; 2]>::deserialize(d).map(Some)
}

fn param_index(id: &str, n: usize) -> Option<usize> {
    id.strip_prefix('p').and_then(|s| s.parse::<usize>().ok()).filter(|&i| i < n)
}

async fn patch_params(State(s): State<Arc<Session>>, body: Json<BTreeMap<String, ParamPatch>>) -> ApiResult {
    let mut slot = s.fit.lock().unwrap();
    s.sync(&mut slot);
    if Session::running(&slot) {
        return Err(conflict());
    }
    let params = &s.ws.parameters;
    let mut plan = Vec::new();
    for (id, patch) in body.0 {
        let i = param_index(&id, params.len()).ok_or_else(|| not_found(format!("unknown parameter id `{id}`")))?;
        let p = &params[i];
        let (raw, fixed, bounds) = match patch {
            ParamPatch::Raw(v) => (v, p.is_fixed(), p.bounds()),
            ParamPatch::Fields { raw_value, fixed, bounds } => (
                raw_value.unwrap_or(p.raw_value()),
                fixed.unwrap_or(p.is_fixed()),
                match bounds {
                    Some(b) => b.map(|[a, b]| (a, b)),
                    None => p.bounds(),
                },
            ),
        };
        let name = p.name();
        if !raw.is_finite() {
            return Err(invalid(format!("`{name}`: value must be finite")));
        }
        if let Some((lo, hi)) = bounds {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(invalid(format!("`{name}`: invalid bounds [{lo}, {hi}]")));
            }
            if !(lo <= raw && raw <= hi) {
                return Err(invalid(format!("`{name}`: value {raw} outside bounds [{lo}, {hi}]")));
            }
        }
        plan.push((p, raw, fixed, bounds));
    }
    let mut rev = s.revision.write().unwrap();
    for (p, raw, fixed, bounds) in plan {
        p.set_bounds(None).map_err(invalid)?;
        p.set_raw_value(raw).map_err(invalid)?;
        p.set_bounds(bounds).map_err(invalid)?;
        p.set_fixed(fixed);
    }
    *rev += 1;
    Ok(Json(json!({ "revision": *rev })))
}

async fn get_snapshot(State(s): State<Arc<Session>>) -> Json<Snapshot> {
    Json(s.snapshot())
}

async fn put_snapshot(State(s): State<Arc<Session>>, Json(snap): Json<Snapshot>) -> ApiResult {
    let mut slot = s.fit.lock().unwrap();
    s.sync(&mut slot);
    if Session::running(&slot) {
        return Err(conflict());
    }
    let mut rev = s.revision.write().unwrap();
    let n = snap.apply(&s.ws.parameters).map_err(|e| match e {
        SnapshotError::UnknownParameter(_) => not_found(e.to_string()),
        _ => invalid(e),
    })?;
    *rev += 1;
    if let Some(m) = snap.fit {
        slot.last = Some(m);
    }
    Ok(Json(json!({ "revision": *rev, "applied": n })))
}

#[derive(Debug, Deserialize)]
struct CurveQuery {
    functor: String,
    grid: Option<String>,
}

async fn curve(State(s): State<Arc<Session>>, Query(q): Query<CurveQuery>) -> ApiResult {
    if s.ws.functor(&q.functor).is_none() {
        return Err(not_found(format!("unknown functor `{}`", q.functor)));
    }
    let points = match &q.grid {
        Some(g) if !g.is_empty() => Points::Grid(Grid::parse(g).map_err(cli_error)?),
        _ => Points::FromData,
    };
    s.revision();
    tokio::task::spawn_blocking(move || {
        let rev = s.revision.read().unwrap();
        let c = evaluate(&s.ws, &q.functor, &points).map_err(cli_error)?;
        let mut out = json!({
            "functor": c.functor,
            "revision": *rev,
            "variables": c.variables,
            "coords": c.coords,
            "shape": c.shape,
        });
        match c.values {
            Values::Real(v) => {
                out["complex"] = json!(false);
                out["values"] = json!(v);
            }
            Values::Complex(v) => {
                out["complex"] = json!(true);
                out["re"] = json!(v.iter().map(|z| z.re).collect::<Vec<_>>());
                out["im"] = json!(v.iter().map(|z| z.im).collect::<Vec<_>>());
            }
        }
        Ok(Json(out))
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

#[derive(Debug, Deserialize)]
struct ProfileQuery {
    sample: String,
    zmin: Option<f64>,
    zmax: Option<f64>,
    n: Option<usize>,
}

async fn profile(State(s): State<Arc<Session>>, Query(q): Query<ProfileQuery>) -> ApiResult {
    let sample = s.ws.sample(&q.sample).ok_or_else(|| not_found(format!("unknown sample `{}`", q.sample)))?;
    let SampleKind::Multilayer(ml) = &sample.kind else {
        return Err(invalid(format!("sample `{}` is not a multilayer", q.sample)));
    };
    s.revision();
    let rev = s.revision.read().unwrap();
    let slabs = ml.flatten().map_err(invalid)?;
    let depth: f64 = slabs[1..slabs.len().saturating_sub(1)].iter().map(|x| x.thickness).sum();
    let zmin = q.zmin.unwrap_or(-20.0);
    let zmax = q.zmax.unwrap_or(depth + 20.0);
    let n = q.n.unwrap_or(500);
    if !(n >= 2 && zmin.is_finite() && zmax.is_finite() && zmin < zmax) || n > 1_000_000 {
        return Err(invalid("need zmin < zmax and 2 <= n <= 1000000"));
    }
    let z: Vec<f64> = (0..n).map(|i| zmin + (zmax - zmin) * i as f64 / (n - 1) as f64).collect();
    let prof = |c| scatterfit::reflect::profile(&slabs, &z, c);
    Ok(Json(json!({
        "sample": q.sample,
        "revision": *rev,
        "z": z,
        "sld_re": prof(ProfileComponent::Real),
        "sld_im": prof(ProfileComponent::Imaginary),
        "msld": prof(ProfileComponent::Magnetic),
    })))
}

async fn chi2(State(s): State<Arc<Session>>) -> ApiResult {
    s.revision();
    let rev = s.revision.read().unwrap();
    let (total, each) = s.chi2()?;
    let models: Vec<Value> = each.into_iter().map(|(n, c)| json!({ "name": n, "chi2": c })).collect();
    Ok(Json(json!({ "revision": *rev, "chi2": total, "models": models })))
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum FitRequest {
    Full(Optimizer),
    Named {
        #[serde(default)]
        optimizer: Option<String>,
        #[serde(default)]
        options: Option<Value>,
    },
}

fn request_optimizer(ws: &Workspace, body: &[u8]) -> Result<Optimizer, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return choose_optimizer(ws, None, None).map_err(cli_error);
    }
    let req: FitRequest = serde_json::from_slice(body).map_err(invalid)?;
    match req {
        FitRequest::Full(o) => Ok(o),
        FitRequest::Named { optimizer, options } => {
            let base = choose_optimizer(ws, optimizer.as_deref(), None).map_err(cli_error)?;
            match options {
                None => Ok(base),
                Some(mut opts) => {
                    let method = match base {
                        Optimizer::Lm(_) => "lm",
                        Optimizer::De(_) => "de",
                    };
                    let obj = opts.as_object_mut().ok_or_else(|| invalid("options must be an object"))?;
                    obj.insert("method".into(), json!(method));
                    serde_json::from_value(opts).map_err(invalid)
                }
            }
        }
    }
}

async fn start_fit(State(s): State<Arc<Session>>, body: axum::body::Bytes) -> Result<(StatusCode, Json<Value>), ApiError> {
    let optimizer = request_optimizer(&s.ws, &body)?;
    let mut slot = s.fit.lock().unwrap();
    s.sync(&mut slot);
    if Session::running(&slot) {
        return Err(conflict());
    }
    let obj = Arc::new(s.ws.objective().map_err(cli_error)?);
    let _guard = s.revision.write().unwrap();
    let handle = FitHandle::start(obj, optimizer).map_err(|e| match fit_error(e) {
        CliError::Schema(m) | CliError::Eval(m) | CliError::Fit(m) => invalid(m),
    })?;
    slot.next_id += 1;
    let id = slot.next_id;
    slot.current = Some(ActiveFit {
        id,
        handle,
        counted: false,
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "fit_id": id }))))
}

async fn interrupt_fit(State(s): State<Arc<Session>>) -> Json<Value> {
    let slot = s.fit.lock().unwrap();
    let running = Session::running(&slot);
    if let Some(a) = &slot.current {
        a.handle.interrupt();
    }
    Json(json!({ "interrupted": running }))
}

fn message(ev: &FitEvent, last_iteration: usize) -> Value {
    match ev {
        FitEvent::Progress(p) => json!({
            "type": "progress",
            "iteration": p.iteration,
            "chi2": p.chi2,
            "params": p.parameters.iter().cloned().collect::<BTreeMap<String, f64>>(),
            "status": "running",
        }),
        FitEvent::Finished { status, chi2, error, result } => json!({
            "type": "finished",
            "iteration": result.as_ref().map_or(last_iteration, |r| r.iterations),
            "chi2": chi2,
            "params": result.as_ref().map(|r| r.parameters.iter().map(|p| (p.name.clone(), p.value)).collect::<BTreeMap<_, _>>()),
            "status": status.as_str(),
            "error": error,
        }),
    }
}

/// Progress events at most every `interval`, keeping the latest of any
/// skipped ones, then exactly one terminal message.
pub fn throttle(mut rx: mpsc::UnboundedReceiver<FitEvent>, interval: Duration) -> impl Stream<Item = Value> {
    let (tx, out) = mpsc::unbounded_channel::<Value>();
    tokio::spawn(async move {
        let mut last_sent: Option<Instant> = None;
        let mut pending: Option<FitEvent> = None;
        let mut last_iteration = 0;
        loop {
            let deadline = last_sent.map(|t| t + interval);
            let next = match (&pending, deadline) {
                (Some(_), Some(d)) => tokio::select! {
                    ev = rx.recv() => Some(ev),
                    _ = tokio::time::sleep_until(d) => None,
                },
                _ => Some(rx.recv().await),
            };
            match next {
                None => {
                    if let Some(ev) = pending.take() {
                        if tx.send(message(&ev, last_iteration)).is_err() {
                            return;
                        }
                        last_sent = Some(Instant::now());
                    }
                }
                Some(None) => {
                    // the fit went away without a terminal event
                    let ev = FitEvent::Finished {
                        status: FitStatus::Failed,
                        chi2: None,
                        error: Some("event source closed".into()),
                        result: None,
                    };
                    if let Some(p) = pending.take() {
                        let _ = tx.send(message(&p, last_iteration));
                    }
                    let _ = tx.send(message(&ev, last_iteration));
                    return;
                }
                Some(Some(ev)) => {
                    if let FitEvent::Progress(p) = &ev {
                        last_iteration = p.iteration;
                    }
                    if ev.is_terminal() {
                        if let Some(p) = pending.take() {
                            let _ = tx.send(message(&p, last_iteration));
                        }
                        let _ = tx.send(message(&ev, last_iteration));
                        return;
                    }
                    let due = last_sent.is_none_or(|t| t.elapsed() >= interval);
                    if due {
                        pending = None;
                        if tx.send(message(&ev, last_iteration)).is_err() {
                            return;
                        }
                        last_sent = Some(Instant::now());
                    } else {
                        pending = Some(ev);
                    }
                }
            }
        }
    });
    tokio_stream(out)
}

fn tokio_stream(mut rx: mpsc::UnboundedReceiver<Value>) -> impl Stream<Item = Value> {
    futures::stream::poll_fn(move |cx| rx.poll_recv(cx))
}

async fn fit_events(State(s): State<Arc<Session>>) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let sub = {
        let slot = s.fit.lock().unwrap();
        let a = slot.current.as_ref().ok_or_else(|| not_found("no fit has been started"))?;
        a.handle.subscribe()
    };
    let (tx, rx) = mpsc::unbounded_channel();
    std::thread::spawn(move || {
        for ev in sub.replay {
            if tx.send(ev).is_err() {
                return;
            }
        }
        for ev in sub.receiver {
            if tx.send(ev).is_err() {
                return;
            }
        }
    });
    use futures::StreamExt;
    let stream = throttle(rx, EVENT_INTERVAL).map(|v| Ok(Event::default().json_data(v).expect("json event")));
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

/// Serves until `shutdown` resolves, then stops any running fit.
pub async fn serve(
    listener: tokio::net::TcpListener,
    session: Arc<Session>,
    static_dir: Option<PathBuf>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let app = router(session.clone(), static_dir);
    let stopper = session.clone();
    let signal = async move {
        shutdown.await;
        let _ = tokio::task::spawn_blocking(move || stopper.stop_fit()).await;
    };
    axum::serve(listener, app).with_graceful_shutdown(signal).await
}

pub async fn bind(port: u16) -> Result<(tokio::net::TcpListener, SocketAddr), CliError> {
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port))
        .await
        .map_err(|e| CliError::schema("--port", format!("cannot bind port {port}: {e}")))?;
    let addr = listener.local_addr().map_err(|e| CliError::schema("--port", e))?;
    Ok((listener, addr))
}
