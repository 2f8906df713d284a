use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use scatterfit::expr::Values;
use scatterfit::Functor;

use crate::error::CliError;
use crate::grid::Grid;
use crate::modelfile::Workspace;
use crate::plot;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Png,
}

impl Format {
    pub fn parse(s: &str) -> Option<Format> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Some(Format::Csv),
            "png" => Some(Format::Png),
            _ => None,
        }
    }

    fn ext(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Png => "png",
        }
    }
}

/// Where to evaluate: a grid spec, an explicit coordinate table, or the
/// coordinates of a dataset that a model pairs with the functor.
#[derive(Debug, Clone)]
pub enum Points {
    Grid(Grid),
    Table(Vec<Vec<f64>>),
    FromData,
}

#[derive(Debug, Clone)]
pub struct SimulateOptions {
    pub points: Points,
    pub out: PathBuf,
    pub format: Format,
    /// Empty means every declared functor.
    pub functors: Vec<String>,
}

/// One functor evaluated at a set of points, laid out as `shape`.
#[derive(Debug, Clone)]
pub struct Curve {
    pub functor: String,
    pub variables: Vec<String>,
    pub coords: Vec<Vec<f64>>,
    pub shape: Vec<usize>,
    pub values: Values,
}

/// Reads a coordinate table: one column per variable, optional header line
/// and `#` comments.
pub fn read_coords(path: &Path, dims: usize) -> Result<Vec<Vec<f64>>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::schema("--coords", format!("cannot read {}: {e}", path.display())))?;
    let mut cols = vec![Vec::new(); dims];
    let mut first = true;
    for (n, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = t.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
        let nums: Result<Vec<f64>, _> = tokens.iter().map(|s| s.parse::<f64>()).collect();
        let nums = match nums {
            Ok(v) => v,
            Err(_) if first => {
                first = false;
                continue;
            }
            Err(e) => return Err(CliError::schema("--coords", format!("line {}: {e}", n + 1))),
        };
        first = false;
        if nums.len() < dims {
            return Err(CliError::schema(
                "--coords",
                format!("line {}: expected {dims} columns, found {}", n + 1, nums.len()),
            ));
        }
        for (c, v) in cols.iter_mut().zip(nums) {
            c.push(v);
        }
    }
    Ok(cols)
}

fn data_points(ws: &Workspace, f: &Functor) -> Result<Vec<Vec<f64>>, CliError> {
    ws.models
        .iter()
        .find(|m| m.functor().name() == f.name())
        .map(|m| m.data().coords().to_vec())
        .ok_or_else(|| {
            CliError::schema(
                "--grid",
                format!("functor `{}` has no dataset; give a grid or coordinate file", f.name()),
            )
        })
}

pub fn evaluate(ws: &Workspace, name: &str, points: &Points) -> Result<Curve, CliError> {
    let f = ws
        .functor(name)
        .ok_or_else(|| CliError::schema("functor", format!("unknown functor `{name}`")))?;
    let variables: Vec<String> = f.variables().iter().map(|v| v.name().to_string()).collect();
    let (coords, shape) = match points {
        Points::Grid(g) => g.points(&variables)?,
        Points::Table(t) => {
            if t.len() != variables.len() {
                return Err(CliError::schema(
                    "--coords",
                    format!("functor `{name}` takes {} variables, table has {} columns", variables.len(), t.len()),
                ));
            }
            let n = t.first().map_or(1, Vec::len);
            (t.clone(), vec![n])
        }
        Points::FromData => {
            let c = data_points(ws, f)?;
            let n = c.first().map_or(0, Vec::len);
            (c, vec![n])
        }
    };
    let refs: Vec<&[f64]> = coords.iter().map(Vec::as_slice).collect();
    let values = f
        .evaluate(&refs)
        .map_err(|e| CliError::Eval(format!("functor `{name}`: {e}")))?;
    Ok(Curve {
        functor: name.to_string(),
        variables,
        coords,
        shape,
        values,
    })
}

/// Columns are the coordinates, then `value` (or `re,im` for complex
/// functors), each with 9 significant digits.
pub fn to_csv(c: &Curve) -> String {
    let mut s = String::new();
    let mut header: Vec<&str> = c.variables.iter().map(String::as_str).collect();
    match &c.values {
        Values::Real(_) => header.push("value"),
        Values::Complex(_) => header.extend(["re", "im"]),
    }
    s.push_str(&header.join(","));
    s.push('\n');
    for i in 0..c.values.len() {
        for col in &c.coords {
            let _ = write!(s, "{:.8e},", col[i]);
        }
        match &c.values {
            Values::Real(v) => {
                let _ = writeln!(s, "{:.8e}", v[i]);
            }
            Values::Complex(v) => {
                let z: Complex64 = v[i];
                let _ = writeln!(s, "{:.8e},{:.8e}", z.re, z.im);
            }
        }
    }
    s
}

fn output_path(out: &Path, name: &str, many: bool, format: Format) -> PathBuf {
    if !many {
        return out.to_path_buf();
    }
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let ext = out.extension().and_then(|s| s.to_str()).unwrap_or(format.ext());
    out.with_file_name(format!("{stem}_{name}.{ext}"))
}

/// Evaluates each selected functor and writes one file per functor; with
/// several functors the names get a `_functor` suffix.
pub fn simulate(ws: &Workspace, opts: &SimulateOptions) -> Result<Vec<PathBuf>, CliError> {
    let names: Vec<String> = if opts.functors.is_empty() {
        ws.functors.iter().map(|f| f.name().to_string()).collect()
    } else {
        opts.functors.clone()
    };
    if names.is_empty() {
        return Err(CliError::schema("functors", "no functors"));
    }
    let curves = names
        .iter()
        .map(|n| evaluate(ws, n, &opts.points))
        .collect::<Result<Vec<_>, _>>()?;
    let mut written = Vec::new();
    for c in &curves {
        let path = output_path(&opts.out, &c.functor, curves.len() > 1, opts.format);
        let io = |e: std::io::Error| CliError::schema("--out", format!("cannot write {}: {e}", path.display()));
        match opts.format {
            Format::Csv => std::fs::write(&path, to_csv(c)).map_err(io)?,
            Format::Png => plot::write_png(c, &path)?,
        }
        written.push(path);
    }
    Ok(written)
}
