//! Experimental data: coordinates, intensities, errors and a mask.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("data must have 1 to 3 coordinate dimensions, got {0}")]
    Dimensions(usize),
    #[error("non-finite {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("sigma must be positive, got {value} at index {index}")]
    NonPositiveSigma { index: usize, value: f64 },
    #[error("index {index} out of range for {len} points")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("dimension {dim} out of range for {dims}-dimensional data")]
    DimensionOutOfRange { dim: usize, dims: usize },
    #[error("line {line}: cannot parse `{token}` as a number")]
    Parse { line: usize, token: String },
    #[error("line {line}: expected at least {expected} columns, found {got}")]
    Columns {
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("invalid column mapping: {0}")]
    Mapping(String),
    #[error("i/o error: {0}")]
    Io(String),
}

/// Default error for a count: `sqrt(max(I, 1))`.
pub fn poisson_sigma(intensity: f64) -> f64 {
    intensity.max(1.0).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    name: String,
    coords: Vec<Vec<f64>>,
    intensity: Vec<f64>,
    sigma: Vec<f64>,
    // true = excluded
    mask: Vec<bool>,
}

/// Which points a mask operation applies to.
#[derive(Debug, Clone, PartialEq)]
pub enum Selector {
    /// Half-open index range `start..end`.
    Range(usize, usize),
    /// Points whose coordinate along `dim` lies in `[lo, hi]`.
    Interval { dim: usize, lo: f64, hi: f64 },
    Indices(Vec<usize>),
}

impl DataSet {
    pub fn new(
        name: impl Into<String>,
        coords: Vec<Vec<f64>>,
        intensity: Vec<f64>,
        sigma: Option<Vec<f64>>,
    ) -> Result<DataSet, DataError> {
        let n = intensity.len();
        if coords.is_empty() || coords.len() > 3 {
            return Err(DataError::Dimensions(coords.len()));
        }
        for (k, c) in coords.iter().enumerate() {
            if c.len() != n {
                return Err(DataError::LengthMismatch {
                    what: format!("coordinate {k}"),
                    expected: n,
                    got: c.len(),
                });
            }
        }
        if let Some(i) = intensity.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite {
                what: "intensity",
                index: i,
            });
        }
        let sigma = match sigma {
            Some(s) => {
                if s.len() != n {
                    return Err(DataError::LengthMismatch {
                        what: "sigma".into(),
                        expected: n,
                        got: s.len(),
                    });
                }
                if let Some(i) = s.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
                    return Err(DataError::NonPositiveSigma { index: i, value: s[i] });
                }
                s
            }
            None => intensity.iter().map(|&i| poisson_sigma(i)).collect(),
        };
        Ok(DataSet {
            name: name.into(),
            coords,
            intensity,
            sigma,
            mask: vec![false; n],
        })
    }

    /// One-dimensional convenience constructor.
    pub fn new_1d(
        name: impl Into<String>,
        x: Vec<f64>,
        intensity: Vec<f64>,
        sigma: Option<Vec<f64>>,
    ) -> Result<DataSet, DataError> {
        DataSet::new(name, vec![x], intensity, sigma)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.intensity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intensity.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[Vec<f64>] {
        &self.coords
    }

    pub fn intensity(&self) -> &[f64] {
        &self.intensity
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.mask[i]).collect()
    }

    pub fn active_len(&self) -> usize {
        self.mask.iter().filter(|m| !**m).count()
    }

    /// Coordinates of active points, one array per dimension.
    pub fn active_coords(&self) -> Vec<Vec<f64>> {
        let idx = self.active_indices();
        self.coords
            .iter()
            .map(|c| idx.iter().map(|&i| c[i]).collect())
            .collect()
    }

    pub fn active_intensity(&self) -> Vec<f64> {
        self.active_indices().iter().map(|&i| self.intensity[i]).collect()
    }

    pub fn active_sigma(&self) -> Vec<f64> {
        self.active_indices().iter().map(|&i| self.sigma[i]).collect()
    }

    /// Sets (`on = true`, excluded) or clears mask bits for the selected points.
    pub fn set_mask(&mut self, selector: &Selector, on: bool) -> Result<(), DataError> {
        let n = self.len();
        match selector {
            Selector::Range(a, b) => {
                if *a > n || *b > n || a > b {
                    return Err(DataError::IndexOutOfRange {
                        index: (*a).max(*b),
                        len: n,
                    });
                }
                self.mask[*a..*b].iter_mut().for_each(|m| *m = on);
            }
            Selector::Interval { dim, lo, hi } => {
                let c = self.coords.get(*dim).ok_or(DataError::DimensionOutOfRange {
                    dim: *dim,
                    dims: self.dims(),
                })?;
                for (m, &x) in self.mask.iter_mut().zip(c) {
                    if x >= *lo && x <= *hi {
                        *m = on;
                    }
                }
            }
            Selector::Indices(idx) => {
                if let Some(&i) = idx.iter().find(|&&i| i >= n) {
                    return Err(DataError::IndexOutOfRange { index: i, len: n });
                }
                for &i in idx {
                    self.mask[i] = on;
                }
            }
        }
        Ok(())
    }

    pub fn clear_mask(&mut self) {
        self.mask.iter_mut().for_each(|m| *m = false);
    }

    /// Active rows as text: coordinates, intensity, sigma.
    pub fn save_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {}", self.name);
        for i in self.active_indices() {
            for c in &self.coords {
                let _ = write!(out, "{:.16e} ", c[i]);
            }
            let _ = writeln!(out, "{:.16e} {:.16e}", self.intensity[i], self.sigma[i]);
        }
        out
    }
}

/// Column assignment for text ingestion (zero-based).
#[derive(Debug, Clone, PartialEq)]
pub struct Columns {
    pub coords: Vec<usize>,
    pub intensity: usize,
    pub sigma: Option<usize>,
}

impl Columns {
    /// `x, I[, sigma]` in the first columns.
    pub fn standard(dims: usize, with_sigma: bool) -> Columns {
        Columns {
            coords: (0..dims).collect(),
            intensity: dims,
            sigma: with_sigma.then_some(dims + 1),
        }
    }

    /// Parses a mapping like `x,y,sigma` or `x,_,y` naming each file column in
    /// order; `x`, `x1`..`x3` (or `qx`, `qy`, `qz`) are coordinates, `y` or
    /// `i` the intensity, `sigma`/`s`/`dy` the error, `_` skipped.
    pub fn parse(spec: &str) -> Result<Columns, DataError> {
        let mut coords: Vec<(usize, usize)> = Vec::new();
        let mut intensity = None;
        let mut sigma = None;
        for (col, name) in spec.split(',').map(str::trim).enumerate() {
            let order = match name.to_ascii_lowercase().as_str() {
                "x" | "q" | "x1" | "qx" => Some(0),
                "x2" | "qy" => Some(1),
                "x3" | "qz" => Some(2),
                "y" | "i" | "intensity" => {
                    intensity = Some(col);
                    None
                }
                "sigma" | "s" | "dy" | "err" | "error" => {
                    sigma = Some(col);
                    None
                }
                "_" | "" => None,
                other => return Err(DataError::Mapping(format!("unknown column name `{other}`"))),
            };
            if let Some(o) = order {
                coords.push((o, col));
            }
        }
        coords.sort();
        for (k, (o, _)) in coords.iter().enumerate() {
            if *o != k {
                return Err(DataError::Mapping(format!("coordinate columns must be contiguous from x: `{spec}`")));
            }
        }
        if coords.is_empty() {
            return Err(DataError::Mapping("no coordinate column".into()));
        }
        let intensity = intensity.ok_or_else(|| DataError::Mapping("no intensity column".into()))?;
        Ok(Columns {
            coords: coords.into_iter().map(|(_, c)| c).collect(),
            intensity,
            sigma,
        })
    }

    fn required(&self) -> usize {
        self.coords
            .iter()
            .copied()
            .chain([self.intensity])
            .chain(self.sigma)
            .max()
            .unwrap_or(0)
            + 1
    }
}

/// Reads whitespace- or comma-delimited numeric rows. Lines starting with
/// one of `comment_prefixes` and blank lines are skipped.
pub fn load_text<R: Read>(
    name: impl Into<String>,
    source: R,
    columns: &Columns,
    comment_prefixes: &[&str],
) -> Result<DataSet, DataError> {
    let need = columns.required().max(2);
    let dims = columns.coords.len();
    let mut coords = vec![Vec::new(); dims];
    let mut intensity = Vec::new();
    let mut sigma = Vec::new();
    for (lineno, line) in BufReader::new(source).lines().enumerate() {
        let line = line.map_err(|e| DataError::Io(e.to_string()))?;
        let t = line.trim();
        if t.is_empty() || comment_prefixes.iter().any(|p| t.starts_with(p)) {
            continue;
        }
        let tokens: Vec<&str> = t
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        let mut row = Vec::with_capacity(tokens.len());
        for tok in &tokens {
            row.push(tok.parse::<f64>().map_err(|_| DataError::Parse {
                line: lineno + 1,
                token: tok.to_string(),
            })?);
        }
        if row.len() < need {
            return Err(DataError::Columns {
                line: lineno + 1,
                expected: need,
                got: row.len(),
            });
        }
        for (k, &c) in columns.coords.iter().enumerate() {
            coords[k].push(row[c]);
        }
        intensity.push(row[columns.intensity]);
        if let Some(s) = columns.sigma {
            sigma.push(row[s]);
        }
    }
    DataSet::new(name, coords, intensity, columns.sigma.map(|_| sigma))
}

/// Loads `x I [sigma]` columns using `#` comments.
pub fn load_text_default<R: Read>(name: impl Into<String>, source: R) -> Result<DataSet, DataError> {
    let mut buf = String::new();
    let mut source = source;
    source
        .read_to_string(&mut buf)
        .map_err(|e| DataError::Io(e.to_string()))?;
    let three = buf
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).count() >= 3)
        .unwrap_or(false);
    load_text(name, buf.as_bytes(), &Columns::standard(1, three), &["#"])
}
