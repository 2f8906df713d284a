//! Evaluation grids: `q=0.001:4:0.001` (start:stop:step, stop included) or
//! `q=0:1@101` (101 evenly spaced points); several axes separated by `,`
//! form their outer product with the last axis varying fastest.

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub axes: Vec<Axis>,
}

fn num(s: &str, spec: &str) -> Result<f64, CliError> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| CliError::schema("grid", format!("`{s}` is not a number in `{spec}`")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::schema("grid", format!("`{s}` is not finite")))
    }
}

fn parse_axis(spec: &str) -> Result<Axis, CliError> {
    let (name, range) = spec
        .split_once('=')
        .ok_or_else(|| CliError::schema("grid", format!("expected name=range, got `{spec}`")))?;
    let name = name.trim().to_string();
    if name.is_empty() {
        return Err(CliError::schema("grid", format!("missing axis name in `{spec}`")));
    }
    let values = if let Some((span, n)) = range.split_once('@') {
        let (a, b) = span
            .split_once(':')
            .ok_or_else(|| CliError::schema("grid", format!("expected start:stop@count in `{spec}`")))?;
        let (a, b) = (num(a, spec)?, num(b, spec)?);
        let n: usize = n
            .trim()
            .parse()
            .map_err(|_| CliError::schema("grid", format!("bad point count in `{spec}`")))?;
        match n {
            0 => return Err(CliError::schema("grid", format!("zero points in `{spec}`"))),
            1 => vec![a],
            _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
        }
    } else {
        let parts: Vec<&str> = range.split(':').collect();
        match parts.as_slice() {
            [v] => vec![num(v, spec)?],
            [a, b, s] => {
                let (a, b, s) = (num(a, spec)?, num(b, spec)?, num(s, spec)?);
                if !(s > 0.0) || b < a {
                    return Err(CliError::schema("grid", format!("need start <= stop and step > 0 in `{spec}`")));
                }
                let n = ((b - a) / s + 1e-9).floor() as usize + 1;
                if n > 50_000_000 {
                    return Err(CliError::schema("grid", format!("too many points in `{spec}`")));
                }
                (0..n).map(|i| a + s * i as f64).collect()
            }
            _ => return Err(CliError::schema("grid", format!("expected start:stop:step in `{spec}`"))),
        }
    };
    Ok(Axis { name, values })
}

impl Grid {
    pub fn parse(spec: &str) -> Result<Grid, CliError> {
        let axes = spec
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(parse_axis)
            .collect::<Result<Vec<_>, _>>()?;
        if axes.is_empty() {
            return Err(CliError::schema("grid", "empty grid"));
        }
        for (i, a) in axes.iter().enumerate() {
            if axes[..i].iter().any(|b| b.name == a.name) {
                return Err(CliError::schema("grid", format!("axis `{}` given twice", a.name)));
            }
        }
        Ok(Grid { axes })
    }

    pub fn axis(&self, name: &str) -> Option<&Axis> {
        self.axes.iter().find(|a| a.name == name)
    }

    /// Flattened outer product over the named axes, one array per name.
    pub fn points(&self, names: &[String]) -> Result<(Vec<Vec<f64>>, Vec<usize>), CliError> {
        let axes: Vec<&Axis> = names
            .iter()
            .map(|n| {
                self.axis(n)
                    .ok_or_else(|| CliError::schema("grid", format!("no axis for variable `{n}`")))
            })
            .collect::<Result<_, _>>()?;
        let shape: Vec<usize> = axes.iter().map(|a| a.values.len()).collect();
        let total: usize = shape.iter().product();
        let mut out = vec![Vec::with_capacity(total); axes.len()];
        for flat in 0..total {
            let mut rem = flat;
            for k in (0..axes.len()).rev() {
                out[k].push(axes[k].values[rem % shape[k]]);
                rem /= shape[k];
            }
        }
        Ok((out, shape))
    }
}
