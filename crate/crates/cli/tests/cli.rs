use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_scatterfit"))
}

fn models_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("models")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("run scatterfit")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn sphere_intensity(q: f64, r: f64) -> f64 {
    let x = q * r;
    let f = 3.0 * (x.sin() - x * x.cos()) / x.powi(3);
    let v = 4.0 / 3.0 * PI * r.powi(3);
    1e5 * (1.2e-3 * v * f).powi(2) + 4.0
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(|s| s.parse().unwrap()).collect()).collect();
    (header, rows)
}

#[test]
fn sphere_curve_on_fine_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sphere.csv");
    let o = run(&[
        "simulate",
        models_dir().join("sphere.json").to_str().unwrap(),
        "--grid",
        "q=0.001:4:0.001",
        "--functor",
        "I",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, rows) = read_csv(&out);
    assert_eq!(header, ["q", "value"]);
    assert_eq!(rows.len(), 4000);
    for row in rows.iter().step_by(37) {
        let expect = sphere_intensity(row[0], 7.5);
        assert!((row[1] - expect).abs() <= 1e-8 * expect, "q={}: {} vs {expect}", row[0], row[1]);
    }
    assert!((rows[0][1] - 4.49688e5).abs() < 1e-3 * 4.49688e5);
}

#[test]
fn two_functors_give_two_suffixed_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("curve.csv");
    let o = run(&[
        "simulate",
        models_dir().join("sphere.json").to_str().unwrap(),
        "--grid",
        "q=0.01:1@50",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("curve_F.csv").exists());
    assert!(dir.path().join("curve_I.csv").exists());
    assert!(!out.exists());
}

#[test]
fn png_output_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.png");
    let o = run(&[
        "simulate",
        models_dir().join("film.json").to_str().unwrap(),
        "--grid",
        "q=0.05:2@300",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let bytes = std::fs::read(&out).unwrap();
    assert_eq!(&bytes[1..4], b"PNG");
}

fn write_model(dir: &Path, name: &str, model: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(model).unwrap()).unwrap();
    p
}

#[test]
fn empty_functor_list_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_model(dir.path(), "m.json", &json!({ "variables": ["q"], "parameters": [], "functors": [] }));
    let o = run(&["simulate", m.to_str().unwrap(), "--grid", "q=0:1@3", "--out", dir.path().join("o.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no functors"), "{}", stderr(&o));
}

#[test]
fn schema_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_model(
        dir.path(),
        "m.json",
        &json!({
            "variables": ["q"],
            "materials": [{ "name": "si", "sld_re": 2.074e-4 }],
            "sample": { "type": "multilayer", "name": "s", "substrate": { "material": "sio2" } },
            "functors": [{ "name": "R", "kind": "specrefl", "sample": "s", "variable": "q" }]
        }),
    );
    let o = run(&["simulate", m.to_str().unwrap(), "--grid", "q=0:1@3", "--out", dir.path().join("o.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("sample.substrate.material"), "{}", stderr(&o));

    let m = write_model(
        dir.path(),
        "cycle.json",
        &json!({
            "variables": ["q"],
            "parameters": [{ "name": "a", "expr": "b + 1" }, { "name": "b", "expr": "2*a" }],
            "functors": [{ "name": "f", "expr": "a*q" }]
        }),
    );
    let o = run(&["simulate", m.to_str().unwrap(), "--grid", "q=0:1@3", "--out", dir.path().join("o.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("cycle"), "{}", stderr(&o));

    let m = write_model(
        dir.path(),
        "unknown.json",
        &json!({ "variables": ["q"], "functors": [{ "name": "f", "expr": "k*q" }] }),
    );
    let o = run(&["simulate", m.to_str().unwrap(), "--grid", "q=0:1@3", "--out", dir.path().join("o.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("functors[0].expr"), "{}", stderr(&o));
}

#[test]
fn evaluation_fault_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_model(
        dir.path(),
        "m.json",
        &json!({
            "variables": ["q"],
            "parameters": [{ "name": "T", "value": -5 }],
            "functors": [{ "name": "L", "kind": "lattice", "variable": "q", "period": "T", "count": 4 }]
        }),
    );
    let o = run(&["simulate", m.to_str().unwrap(), "--grid", "q=0:1@3", "--out", dir.path().join("o.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

/// Sphere model whose data come from a simulated CSV, with R started 5% off.
fn fit_setup(dir: &Path, bounded: bool) -> PathBuf {
    let data = dir.join("data.csv");
    let o = run(&[
        "simulate",
        models_dir().join("sphere.json").to_str().unwrap(),
        "--grid",
        "q=0.01:2:0.01",
        "--functor",
        "I",
        "--out",
        data.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut model: Value = serde_json::from_str(&std::fs::read_to_string(models_dir().join("sphere.json")).unwrap()).unwrap();
    model["parameters"][0]["value"] = json!(7.5 * 1.05);
    if !bounded {
        model["parameters"][1].as_object_mut().unwrap().remove("bounds");
    }
    model["datasets"] = json!([{ "name": "sim", "file": "data.csv" }]);
    model["models"] = json!([{ "name": "m", "functor": "I", "dataset": "sim" }]);
    write_model(dir, "fit.json", &model)
}

#[test]
fn lm_fit_recovers_simulated_radius() {
    let dir = tempfile::tempdir().unwrap();
    let m = fit_setup(dir.path(), true);
    let before = std::fs::read(&m).unwrap();
    let out = dir.path().join("results.json");
    let o = run(&["fit", m.to_str().unwrap(), "--optimizer", "lm", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("chi2 ="));
    let rep: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let r = rep["parameters"].as_array().unwrap().iter().find(|p| p["name"] == "R").unwrap();
    let r = r["raw_value"].as_f64().unwrap();
    assert!((r - 7.5).abs() < 1e-4 * 7.5, "R = {r}");
    assert!(rep["chi2"].as_f64().unwrap() < 1e-10, "{}", rep["chi2"]);
    assert_eq!(rep["status"], "converged");
    let hist: Vec<f64> = rep["chi2_history"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(hist.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(std::fs::read(&m).unwrap(), before, "input file changed");
}

#[test]
fn de_needs_bounds_on_every_free_parameter() {
    let dir = tempfile::tempdir().unwrap();
    let m = fit_setup(dir.path(), false);
    let o = run(&["fit", m.to_str().unwrap(), "--optimizer", "de", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("`C`"), "{}", stderr(&o));
}

#[test]
fn de_is_deterministic_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let m = fit_setup(dir.path(), true);
    let mut reports = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("r{k}.json"));
        let o = run(&["fit", m.to_str().unwrap(), "--optimizer", "de", "--seed", "17", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        let mut rep: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
        rep.as_object_mut().unwrap().remove("timestamp");
        reports.push(rep);
    }
    assert_eq!(reports[0], reports[1]);
    let r = reports[0]["parameters"][0]["raw_value"].as_f64().unwrap();
    assert!((r - 7.5).abs() < 1e-3 * 7.5, "R = {r}");
}

#[test]
fn save_model_writes_fitted_values_elsewhere() {
    let dir = tempfile::tempdir().unwrap();
    let m = fit_setup(dir.path(), true);
    let saved = dir.path().join("fitted.json");
    let o = run(&["fit", m.to_str().unwrap(), "--save-model", saved.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&saved).unwrap()).unwrap();
    let r = v["parameters"][0]["value"].as_f64().unwrap();
    assert!((r - 7.5).abs() < 1e-4 * 7.5);
    let orig: Value = serde_json::from_str(&std::fs::read_to_string(&m).unwrap()).unwrap();
    assert_eq!(orig["parameters"][0]["value"], json!(7.5 * 1.05));
}

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn http(port: u16, method: &str, path: &str, body: &str) -> (u16, String) {
    use std::io::{Read, Write};
    let mut s = std::net::TcpStream::connect(("127.0.0.1", port)).unwrap();
    write!(
        s,
        "{method} {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut text = String::new();
    s.read_to_string(&mut text).unwrap();
    let code = text.split_whitespace().nth(1).unwrap().parse().unwrap();
    let body = text.split_once("\r\n\r\n").map(|x| x.1.to_string()).unwrap_or_default();
    (code, body)
}

struct Server(std::process::Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn start_server(model: &Path, port: u16, extra: &[&str]) -> Server {
    let child = bin()
        .args(["serve", model.to_str().unwrap(), "--port", &port.to_string()])
        .args(extra)
        .stdout(std::process::Stdio::null())
        .spawn()
        .unwrap();
    for _ in 0..200 {
        if std::net::TcpStream::connect(("127.0.0.1", port)).is_ok() {
            return Server(child);
        }
        std::thread::sleep(std::time::Duration::from_millis(25));
    }
    panic!("server did not start");
}

#[test]
fn serve_health_and_port_in_use() {
    let port = free_port();
    let model = models_dir().join("sphere.json");
    let _server = start_server(&model, port, &[]);
    let (code, body) = http(port, "GET", "/api/health", "");
    assert_eq!(code, 200);
    assert!(body.contains("ok"));
    let o = run(&["serve", model.to_str().unwrap(), "--port", &port.to_string()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn serve_port_from_environment() {
    let port = free_port();
    let model = models_dir().join("sphere.json");
    let child = bin()
        .args(["serve", model.to_str().unwrap()])
        .env("SCATTERFIT_PORT", port.to_string())
        .stdout(std::process::Stdio::null())
        .spawn()
        .unwrap();
    let _server = Server(child);
    let mut ok = false;
    for _ in 0..200 {
        if std::net::TcpStream::connect(("127.0.0.1", port)).is_ok() {
            ok = true;
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(25));
    }
    assert!(ok);
    assert_eq!(http(port, "GET", "/api/health", "").0, 200);
}

#[test]
fn sigint_interrupts_fit_and_saves_state() {
    let dir = tempfile::tempdir().unwrap();
    let m = fit_setup(dir.path(), true);
    let snap = dir.path().join("state.json");
    let port = free_port();
    let mut server = start_server(&m, port, &["--out", snap.to_str().unwrap()]);
    let opts = json!({ "method": "de", "population_size": 60, "max_generations": 1000000, "seed": 1, "final_polish_iters": 0 });
    let (code, body) = http(port, "POST", "/api/fit", &opts.to_string());
    assert_eq!(code, 202, "{body}");
    std::thread::sleep(std::time::Duration::from_millis(400));
    let (_, session) = http(port, "GET", "/api/session", "");
    let session: Value = serde_json::from_str(&session).unwrap();
    assert_eq!(session["fit"]["running"], true);
    let pid = server.0.id().to_string();
    assert!(Command::new("kill").args(["-INT", &pid]).status().unwrap().success());
    let status = server.0.wait().unwrap();
    assert!(status.success(), "{status:?}");
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(&snap).unwrap()).unwrap();
    assert_eq!(saved["fit"]["status"], "interrupted");
    let r = saved["parameters"].as_array().unwrap().iter().find(|p| p["name"] == "R").unwrap();
    assert!(r["raw_value"].as_f64().unwrap().is_finite());
}
