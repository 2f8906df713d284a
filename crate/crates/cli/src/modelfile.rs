//! JSON model files and the in-memory workspace built from them.
//!
//! Expression strings use the library grammar and may refer to declared
//! variables, parameters (independent or dependent) and previously declared
//! functors. Dependent parameters may appear in any order as long as they do
//! not refer to each other in a cycle.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use scatterfit::data::{load_text, Columns, DataSet, Selector};
use scatterfit::expr::{parse, referenced_names, Env, Expr, Functor, Parameter, Variable};
use scatterfit::fit::Optimizer;
use scatterfit::model::{Model, MultiModel, Scaling};
use scatterfit::potential::{self, box_potential, polyhedron, Potential};
use scatterfit::quad::{average_parameter, convolve_variable, integrate_variable, IntegrationSpec};
use scatterfit::reflect::{pnr_channel, pnrspec, specrefl, Formalism, Item, Layer, Material, Multilayer, Spin, Stack};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// A number or an expression string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Number(f64),
    Text(String),
}

impl Default for Value {
    fn default() -> Self {
        Value::Number(0.0)
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

fn one() -> Value {
    Value::Number(1.0)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub variables: Vec<String>,
    #[serde(default)]
    pub parameters: Vec<ParamSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub materials: Vec<MaterialSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<SampleSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<SampleSpec>,
    #[serde(default)]
    pub functors: Vec<FunctorSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub datasets: Vec<DatasetSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub models: Vec<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<Optimizer>,
}

/// Independent when `value` is given, dependent when `expr` is.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expr: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub fixed: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub units: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSpec {
    pub name: String,
    pub sld_re: Value,
    #[serde(default)]
    pub sld_im: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum SampleSpec {
    Multilayer(MultilayerSpec),
    Potential(PotentialSpec),
}

impl SampleSpec {
    pub fn name(&self) -> &str {
        match self {
            SampleSpec::Multilayer(m) => &m.name,
            SampleSpec::Potential(p) => &p.name,
        }
    }
}

/// Layers are listed from the top (ambient side) down to the substrate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultilayerSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ambient: Option<String>,
    pub substrate: LayerSpec,
    #[serde(default)]
    pub layers: Vec<ItemSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub material: String,
    #[serde(default)]
    pub thickness: Value,
    #[serde(default)]
    pub roughness: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub msld: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub repeats: Value,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ItemSpec {
    Stack(StackSpec),
    Layer(LayerSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub name: String,
    pub variables: [String; 3],
    pub terms: Vec<TermSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TermOp {
    #[default]
    #[serde(rename = "+")]
    Add,
    #[serde(rename = "-")]
    Sub,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    #[serde(default)]
    pub op: TermOp,
    #[serde(default = "one")]
    pub scale: Value,
    pub material: String,
    pub shape: ShapeSpec,
    #[serde(default)]
    pub positions: Vec<[Value; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ShapeSpec {
    Box { wx: Value, wy: Value, wz: Value },
    Polyhedron { vertices: Vec<[f64; 3]>, faces: Vec<Vec<usize>> },
}

/// `kind` selects which of the optional fields apply: `expr` (default),
/// `specrefl`, `pnr`, `pnrspec`, `formfactor`, `lattice`, `sas`,
/// `integrate`, `average`, `convolve`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctorSpec {
    pub name: String,
    #[serde(default = "expr_kind")]
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expr: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variables: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variable: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formalism: Option<Formalism>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_i: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_f: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functor: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fwhm: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integration: Option<IntegrationSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<f64>,
}

fn expr_kind() -> String {
    "expr".into()
}

/// Data from `file` (relative to the model file) or given inline.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub columns: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coords: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intensity: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mask: Vec<MaskRule>,
}

fn yes() -> bool {
    true
}

/// Exactly one of `range` (index range, end exclusive), `interval`
/// (coordinate range along `dim`) or `indices`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskRule {
    #[serde(default = "yes")]
    pub exclude: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<[f64; 2]>,
    #[serde(default)]
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indices: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub functor: String,
    pub dataset: String,
    #[serde(default)]
    pub scaling: Scaling,
}

#[derive(Debug, Clone)]
pub enum SampleKind {
    Multilayer(Multilayer),
    Potential(Potential),
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub name: String,
    pub kind: SampleKind,
}

/// Everything a model file declares, built and cross-linked.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub file: ModelFile,
    pub base_dir: PathBuf,
    pub variables: Vec<Variable>,
    /// Independent parameters in file order.
    pub parameters: Vec<Parameter>,
    pub dependents: Vec<(String, Expr)>,
    pub materials: Vec<Material>,
    pub samples: Vec<Sample>,
    pub functors: Vec<Functor>,
    pub datasets: Vec<DataSet>,
    pub models: Vec<Model>,
    // index into file.parameters for each independent parameter
    param_specs: Vec<usize>,
}

struct Builder<'a> {
    env: Env,
    names: HashSet<String>,
    vars: HashMap<String, Variable>,
    params: HashMap<String, Parameter>,
    materials: HashMap<String, Material>,
    base_dir: &'a Path,
}

fn value_expr(v: &Value, env: &Env, field: &str) -> Result<Expr, CliError> {
    match v {
        Value::Number(x) => Ok(Expr::constant(*x)),
        Value::Text(t) => parse(t, env).map_err(|e| CliError::schema(field, e)),
    }
}

impl Builder<'_> {
    fn claim(&mut self, name: &str, field: &str) -> Result<(), CliError> {
        if name.is_empty() {
            return Err(CliError::schema(field, "empty name"));
        }
        if !self.names.insert(name.to_string()) {
            return Err(CliError::schema(field, format!("name `{name}` is already declared")));
        }
        Ok(())
    }

    fn variable(&mut self, name: &str, field: &str) -> Result<Variable, CliError> {
        if let Some(v) = self.vars.get(name) {
            return Ok(v.clone());
        }
        self.claim(name, field)?;
        let v = Variable::new(name);
        self.env.var(&v);
        self.vars.insert(name.to_string(), v.clone());
        Ok(v)
    }

    fn existing_variable(&self, name: &str, field: &str) -> Result<Variable, CliError> {
        self.vars
            .get(name)
            .cloned()
            .ok_or_else(|| CliError::schema(field, format!("unknown variable `{name}`")))
    }

    fn expr(&self, v: &Value, field: &str) -> Result<Expr, CliError> {
        value_expr(v, &self.env, field)
    }

    fn material(&self, name: &str, field: &str) -> Result<Material, CliError> {
        if name == "vacuum" && !self.materials.contains_key(name) {
            return Ok(Material::vacuum());
        }
        self.materials
            .get(name)
            .cloned()
            .ok_or_else(|| CliError::schema(field, format!("unknown material `{name}`")))
    }

    fn layer(&self, l: &LayerSpec, field: &str, fallback: String) -> Result<Layer, CliError> {
        let mat = self.material(&l.material, &format!("{field}.material"))?;
        let mut layer = Layer::new(
            l.name.clone().unwrap_or(fallback),
            mat,
            self.expr(&l.thickness, &format!("{field}.thickness"))?,
            self.expr(&l.roughness, &format!("{field}.roughness"))?,
        );
        if let Some(m) = &l.msld {
            layer = layer.with_msld(self.expr(m, &format!("{field}.msld"))?);
        }
        Ok(layer)
    }

    fn multilayer(&self, s: &MultilayerSpec, field: &str) -> Result<Multilayer, CliError> {
        let ambient = match &s.ambient {
            Some(a) => self.material(a, &format!("{field}.ambient"))?,
            None => Material::vacuum(),
        };
        let substrate = self.layer(&s.substrate, &format!("{field}.substrate"), "substrate".into())?;
        let mut ml = Multilayer::new(s.name.clone(), ambient, substrate);
        for (i, it) in s.layers.iter().enumerate() {
            let f = format!("{field}.layers[{i}]");
            let item: Item = match it {
                ItemSpec::Layer(l) => self.layer(l, &f, format!("layer{i}"))?.into(),
                ItemSpec::Stack(st) => {
                    let layers = st
                        .layers
                        .iter()
                        .enumerate()
                        .map(|(k, l)| self.layer(l, &format!("{f}.layers[{k}]"), format!("layer{i}_{k}")))
                        .collect::<Result<Vec<_>, _>>()?;
                    Stack::new(
                        st.name.clone().unwrap_or(format!("stack{i}")),
                        layers,
                        self.expr(&st.repeats, &format!("{f}.repeats"))?,
                    )
                    .into()
                }
            };
            ml.add(item);
        }
        Ok(ml)
    }

    fn potential(&mut self, s: &PotentialSpec, field: &str) -> Result<Potential, CliError> {
        let vars = [
            self.variable(&s.variables[0], &format!("{field}.variables[0]"))?,
            self.variable(&s.variables[1], &format!("{field}.variables[1]"))?,
            self.variable(&s.variables[2], &format!("{field}.variables[2]"))?,
        ];
        let refs = [&vars[0], &vars[1], &vars[2]];
        let mut total: Option<Potential> = None;
        if s.terms.is_empty() {
            return Err(CliError::schema(format!("{field}.terms"), "no terms"));
        }
        for (i, t) in s.terms.iter().enumerate() {
            let f = format!("{field}.terms[{i}]");
            let mat = self.material(&t.material, &format!("{f}.material"))?;
            let positions = if t.positions.is_empty() {
                vec![potential::pos(0.0, 0.0, 0.0)]
            } else {
                t.positions
                    .iter()
                    .enumerate()
                    .map(|(k, p)| {
                        let g = |j: usize| self.expr(&p[j], &format!("{f}.positions[{k}][{j}]"));
                        Ok([g(0)?, g(1)?, g(2)?])
                    })
                    .collect::<Result<Vec<_>, CliError>>()?
            };
            let term = match &t.shape {
                ShapeSpec::Box { wx, wy, wz } => box_potential(
                    refs,
                    &mat,
                    self.expr(wx, &format!("{f}.shape.wx"))?,
                    self.expr(wy, &format!("{f}.shape.wy"))?,
                    self.expr(wz, &format!("{f}.shape.wz"))?,
                    positions,
                ),
                ShapeSpec::Polyhedron { vertices, faces } => {
                    polyhedron(refs, &mat, vertices.clone(), faces.clone(), positions)
                        .map_err(|e| CliError::schema(format!("{f}.shape"), e))?
                }
            };
            let term = match &t.scale {
                Value::Number(x) if *x == 1.0 => term,
                v => term.scaled(self.expr(v, &format!("{f}.scale"))?),
            };
            total = Some(match (total, t.op) {
                (None, TermOp::Add) => term,
                (None, TermOp::Sub) => term.scaled(-1.0),
                (Some(acc), TermOp::Add) => acc.try_add(&term).expect("same variables"),
                (Some(acc), TermOp::Sub) => acc.try_sub(&term).expect("same variables"),
            });
        }
        Ok(total.expect("at least one term"))
    }
}

fn need<'a, T>(v: &'a Option<T>, field: String) -> Result<&'a T, CliError> {
    v.as_ref().ok_or_else(|| CliError::schema(field, "missing"))
}

fn rename(f: Functor, name: &str, field: &str) -> Result<Functor, CliError> {
    Functor::with_variables(name, f.body().clone(), f.variables().to_vec()).map_err(|e| CliError::schema(field, e))
}

/// Splits off a header line of column names, if the first data line has one.
fn split_header(text: &str) -> (Option<Vec<String>>, String) {
    let mut header = None;
    let mut out = String::with_capacity(text.len());
    let mut seen_data = false;
    for line in text.lines() {
        let t = line.trim();
        if !seen_data && !t.is_empty() && !t.starts_with('#') {
            seen_data = true;
            let tokens: Vec<&str> = t.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
            if tokens.iter().any(|s| s.parse::<f64>().is_err()) {
                header = Some(tokens.iter().map(|s| s.to_string()).collect());
                continue;
            }
        }
        out.push_str(line);
        out.push('\n');
    }
    (header, out)
}

/// Maps header names onto a column spec: `value`/`y`/`re` intensity,
/// `sigma`-like names the error, `im` skipped, anything else a coordinate.
fn header_columns(names: &[String]) -> String {
    let mut dims = 0;
    names
        .iter()
        .map(|n| match n.to_ascii_lowercase().as_str() {
            "value" | "y" | "i" | "intensity" | "re" => "y".to_string(),
            "sigma" | "s" | "dy" | "err" | "error" => "sigma".to_string(),
            "im" | "_" => "_".to_string(),
            _ => {
                dims += 1;
                format!("x{dims}")
            }
        })
        .collect::<Vec<_>>()
        .join(",")
}

impl Workspace {
    pub fn load(path: &Path) -> Result<Workspace, CliError> {
        Workspace::load_with(path, None)
    }

    /// Like `load`, with `columns` used for data files that declare none.
    pub fn load_with(path: &Path, columns: Option<&str>) -> Result<Workspace, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::schema(path.display(), format!("cannot read model file: {e}")))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut file: ModelFile = serde_json::from_str(&text).map_err(|e| CliError::schema("model file", e))?;
        if let Some(c) = columns {
            for d in file.datasets.iter_mut().filter(|d| d.file.is_some() && d.columns.is_none()) {
                d.columns = Some(c.to_string());
            }
        }
        Workspace::build(file, &base)
    }

    pub fn from_json(text: &str, base_dir: &Path) -> Result<Workspace, CliError> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| CliError::schema("model file", e))?;
        Workspace::build(file, base_dir)
    }

    pub fn build(file: ModelFile, base_dir: &Path) -> Result<Workspace, CliError> {
        let mut b = Builder {
            env: Env::new(),
            names: HashSet::new(),
            vars: HashMap::new(),
            params: HashMap::new(),
            materials: HashMap::new(),
            base_dir,
        };
        let mut variables = Vec::new();
        for (i, v) in file.variables.iter().enumerate() {
            let f = format!("variables[{i}]");
            if b.vars.contains_key(v) {
                return Err(CliError::schema(f, format!("variable `{v}` declared twice")));
            }
            variables.push(b.variable(v, &f)?);
        }

        let mut parameters = Vec::new();
        let mut param_specs = Vec::new();
        let mut pending = Vec::new();
        for (i, p) in file.parameters.iter().enumerate() {
            let f = format!("parameters[{i}]");
            b.claim(&p.name, &format!("{f}.name"))?;
            match (&p.value, &p.expr) {
                (Some(v), None) => {
                    let mut pb = Parameter::builder(&p.name, *v)
                        .scale(p.scale.unwrap_or(1.0))
                        .fixed(p.fixed)
                        .units(p.units.clone());
                    if let Some([lo, hi]) = p.bounds {
                        pb = pb.bounds(lo, hi);
                    }
                    let par = pb.build().map_err(|e| CliError::schema(&f, e))?;
                    par.set_error(p.error);
                    b.env.param(&par);
                    b.params.insert(p.name.clone(), par.clone());
                    parameters.push(par);
                    param_specs.push(i);
                }
                (None, Some(e)) => {
                    if p.bounds.is_some() || p.scale.is_some() || p.fixed {
                        return Err(CliError::schema(
                            &f,
                            "dependent parameters take no scale, bounds or fixed flag",
                        ));
                    }
                    let refs = referenced_names(e).map_err(|err| CliError::schema(format!("{f}.expr"), err))?;
                    pending.push((i, p.name.clone(), e.clone(), refs));
                }
                _ => return Err(CliError::schema(&f, "exactly one of `value` or `expr` is required")),
            }
        }
        let dependent_names: HashSet<String> = pending.iter().map(|p| p.1.clone()).collect();
        let mut dependents = Vec::new();
        while !pending.is_empty() {
            let before = pending.len();
            let mut rest = Vec::new();
            for (i, name, text, refs) in pending {
                let waiting = refs.iter().any(|r| dependent_names.contains(r) && !b.env.contains(r));
                if waiting {
                    rest.push((i, name, text, refs));
                    continue;
                }
                let e = parse(&text, &b.env).map_err(|err| CliError::schema(format!("parameters[{i}].expr"), err))?;
                b.env.expr(&name, e.clone());
                dependents.push((name, e));
            }
            if rest.len() == before {
                let names: Vec<&str> = rest.iter().map(|p| p.1.as_str()).collect();
                return Err(CliError::schema(
                    format!("parameters[{}].expr", rest[0].0),
                    format!("dependency cycle among {}", names.join(", ")),
                ));
            }
            pending = rest;
        }

        let mut materials = Vec::new();
        for (i, m) in file.materials.iter().enumerate() {
            let f = format!("materials[{i}]");
            if b.materials.contains_key(&m.name) {
                return Err(CliError::schema(format!("{f}.name"), format!("material `{}` declared twice", m.name)));
            }
            let mat = Material::new(
                m.name.clone(),
                b.expr(&m.sld_re, &format!("{f}.sld_re"))?,
                b.expr(&m.sld_im, &format!("{f}.sld_im"))?,
            );
            b.materials.insert(m.name.clone(), mat.clone());
            materials.push(mat);
        }

        let sample_specs: Vec<(String, &SampleSpec)> = file
            .sample
            .iter()
            .map(|s| ("sample".to_string(), s))
            .chain(file.samples.iter().enumerate().map(|(i, s)| (format!("samples[{i}]"), s)))
            .collect();
        let mut samples: Vec<Sample> = Vec::new();
        for (f, s) in sample_specs {
            if samples.iter().any(|x| x.name == s.name()) {
                return Err(CliError::schema(format!("{f}.name"), format!("sample `{}` declared twice", s.name())));
            }
            let kind = match s {
                SampleSpec::Multilayer(m) => SampleKind::Multilayer(b.multilayer(m, &f)?),
                SampleSpec::Potential(p) => SampleKind::Potential(b.potential(p, &f)?),
            };
            samples.push(Sample {
                name: s.name().to_string(),
                kind,
            });
        }

        let mut functors: Vec<Functor> = Vec::new();
        for (i, fs) in file.functors.iter().enumerate() {
            let f = format!("functors[{i}]");
            b.claim(&fs.name, &format!("{f}.name"))?;
            let functor = build_functor(&mut b, fs, &f, &samples, &functors)?;
            b.env.expr(&fs.name, functor.body().clone());
            functors.push(functor);
        }

        let mut datasets: Vec<DataSet> = Vec::new();
        for (i, d) in file.datasets.iter().enumerate() {
            let f = format!("datasets[{i}]");
            if datasets.iter().any(|x| x.name() == d.name) {
                return Err(CliError::schema(format!("{f}.name"), format!("dataset `{}` declared twice", d.name)));
            }
            datasets.push(load_dataset(d, &f, b.base_dir)?);
        }

        let mut models = Vec::new();
        for (i, m) in file.models.iter().enumerate() {
            let f = format!("models[{i}]");
            let functor = functors
                .iter()
                .find(|x| x.name() == m.functor)
                .ok_or_else(|| CliError::schema(format!("{f}.functor"), format!("unknown functor `{}`", m.functor)))?;
            let data = datasets
                .iter()
                .find(|x| x.name() == m.dataset)
                .ok_or_else(|| CliError::schema(format!("{f}.dataset"), format!("unknown dataset `{}`", m.dataset)))?;
            models.push(
                Model::new(m.name.clone(), functor.clone(), data.clone(), m.scaling).map_err(|e| CliError::schema(&f, e))?,
            );
        }

        Ok(Workspace {
            file,
            base_dir: base_dir.to_path_buf(),
            variables,
            parameters,
            dependents,
            materials,
            samples,
            functors,
            datasets,
            models,
            param_specs,
        })
    }

    pub fn functor(&self, name: &str) -> Option<&Functor> {
        self.functors.iter().find(|f| f.name() == name)
    }

    pub fn sample(&self, name: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.name == name)
    }

    /// All declared models fitted together.
    pub fn objective(&self) -> Result<MultiModel, CliError> {
        if self.models.is_empty() {
            return Err(CliError::schema("models", "no models declared"));
        }
        Ok(MultiModel::new(self.models.clone()))
    }

    /// The model file with current parameter values, bounds, flags and
    /// errors written back.
    pub fn to_file(&self) -> ModelFile {
        let mut file = self.file.clone();
        for (p, &i) in self.parameters.iter().zip(&self.param_specs) {
            let st = p.state();
            let spec = &mut file.parameters[i];
            spec.value = Some(st.raw_value);
            spec.bounds = st.bounds.map(|(a, b)| [a, b]);
            spec.fixed = st.fixed;
            spec.error = st.error;
        }
        file
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("model file serializes")
    }
}

fn build_functor(
    b: &mut Builder,
    fs: &FunctorSpec,
    f: &str,
    samples: &[Sample],
    functors: &[Functor],
) -> Result<Functor, CliError> {
    let field = |name: &str| format!("{f}.{name}");
    let sample = || -> Result<&Sample, CliError> {
        let name = need(&fs.sample, field("sample"))?;
        samples
            .iter()
            .find(|s| &s.name == name)
            .ok_or_else(|| CliError::schema(field("sample"), format!("unknown sample `{name}`")))
    };
    let ml_sample = || -> Result<&Multilayer, CliError> {
        match &sample()?.kind {
            SampleKind::Multilayer(m) => Ok(m),
            _ => Err(CliError::schema(field("sample"), "not a multilayer")),
        }
    };
    let pot_sample = || -> Result<&Potential, CliError> {
        match &sample()?.kind {
            SampleKind::Potential(p) => Ok(p),
            _ => Err(CliError::schema(field("sample"), "not a potential")),
        }
    };
    let inner = || -> Result<&Functor, CliError> {
        let name = need(&fs.functor, field("functor"))?;
        functors
            .iter()
            .find(|x| x.name() == name)
            .ok_or_else(|| CliError::schema(field("functor"), format!("unknown functor `{name}`")))
    };
    let var = |b: &Builder| -> Result<Variable, CliError> {
        b.existing_variable(need(&fs.variable, field("variable"))?, &field("variable"))
    };
    let formalism = fs.formalism.unwrap_or_default();
    let integration = fs.integration.unwrap_or(IntegrationSpec::adaptive(1e-8, 1e-15));
    let span = fs.span.unwrap_or(3.0);
    let schema = |name: &str| {
        let fname = field(name);
        move |e: &dyn std::fmt::Display| CliError::schema(fname.clone(), e)
    };
    let out = match fs.kind.as_str() {
        "expr" => {
            let text = need(&fs.expr, field("expr"))?;
            let body = parse(text, &b.env).map_err(|e| CliError::schema(field("expr"), e))?;
            let vars = match &fs.variables {
                Some(names) => names
                    .iter()
                    .enumerate()
                    .map(|(k, n)| b.existing_variable(n, &format!("{f}.variables[{k}]")))
                    .collect::<Result<Vec<_>, _>>()?,
                None => body.free_variables(),
            };
            Functor::with_variables(fs.name.clone(), body, vars).map_err(|e| schema("expr")(&e))?
        }
        "specrefl" => specrefl(&var(b)?, ml_sample()?, formalism).map_err(|e| schema("sample")(&e))?,
        "pnr" => {
            let spin = match need(&fs.spin, field("spin"))?.as_str() {
                "up" | "++" | "+" => Spin::Up,
                "down" | "--" | "-" => Spin::Down,
                other => return Err(CliError::schema(field("spin"), format!("expected up or down, got `{other}`"))),
            };
            pnr_channel(&var(b)?, ml_sample()?, spin, formalism).map_err(|e| schema("sample")(&e))?
        }
        "pnrspec" => {
            let p_i = b.expr(fs.p_i.as_ref().unwrap_or(&Value::Number(1.0)), &field("p_i"))?;
            let p_f = b.expr(fs.p_f.as_ref().unwrap_or(&Value::Number(1.0)), &field("p_f"))?;
            pnrspec(&var(b)?, ml_sample()?, p_i, p_f, formalism).map_err(|e| schema("sample")(&e))?
        }
        "formfactor" => pot_sample()?.form_factor(fs.name.clone()).map_err(|e| schema("sample")(&e))?,
        "lattice" => {
            let period = b.expr(need(&fs.period, field("period"))?, &field("period"))?;
            let count = *need(&fs.count, field("count"))?;
            potential::lattice(&var(b)?, period, count).map_err(|e| schema("count")(&e))?
        }
        "sas" => {
            let pot = pot_sample()?;
            let lattice = match &fs.lattice {
                Some(name) => functors
                    .iter()
                    .find(|x| x.name() == name)
                    .cloned()
                    .ok_or_else(|| CliError::schema(field("lattice"), format!("unknown functor `{name}`")))?,
                None => Functor::with_variables("one", Expr::constant(1.0), vec![]).expect("constant functor"),
            };
            potential::sas(pot, &lattice).map_err(|e| schema("lattice")(&e))?
        }
        "integrate" => {
            let a = b.expr(need(&fs.from, field("from"))?, &field("from"))?;
            let c = b.expr(need(&fs.to, field("to"))?, &field("to"))?;
            integrate_variable(inner()?, &var(b)?, a, c, integration).map_err(|e| schema("variable")(&e))?
        }
        "average" => {
            let pname = need(&fs.parameter, field("parameter"))?;
            let p = b
                .params
                .get(pname)
                .ok_or_else(|| CliError::schema(field("parameter"), format!("unknown independent parameter `{pname}`")))?;
            let fwhm = b.expr(need(&fs.fwhm, field("fwhm"))?, &field("fwhm"))?;
            average_parameter(inner()?, p, fwhm, integration, span).map_err(|e| schema("parameter")(&e))?
        }
        "convolve" => {
            let fwhm = b.expr(need(&fs.fwhm, field("fwhm"))?, &field("fwhm"))?;
            convolve_variable(inner()?, &var(b)?, fwhm, integration, span).map_err(|e| schema("variable")(&e))?
        }
        other => return Err(CliError::schema(field("kind"), format!("unknown functor kind `{other}`"))),
    };
    rename(out, &fs.name, f)
}

fn load_dataset(d: &DatasetSpec, f: &str, base: &Path) -> Result<DataSet, CliError> {
    let mut ds = match (&d.file, &d.intensity) {
        (Some(file), None) => {
            let path = base.join(file);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| CliError::schema(format!("{f}.file"), format!("cannot read {}: {e}", path.display())))?;
            let (header, body) = split_header(&text);
            let spec = match (&d.columns, &header) {
                (Some(c), _) => c.clone(),
                (None, Some(h)) => header_columns(h),
                (None, None) => {
                    let width = body
                        .lines()
                        .map(str::trim)
                        .find(|l| !l.is_empty() && !l.starts_with('#'))
                        .map(|l| l.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).count())
                        .unwrap_or(2);
                    if width >= 3 { "x,y,sigma" } else { "x,y" }.to_string()
                }
            };
            let cols = Columns::parse(&spec).map_err(|e| CliError::schema(format!("{f}.columns"), e))?;
            load_text(d.name.clone(), body.as_bytes(), &cols, &["#"]).map_err(|e| CliError::schema(format!("{f}.file"), e))?
        }
        (None, Some(intensity)) => {
            let coords = need(&d.coords, format!("{f}.coords"))?;
            DataSet::new(d.name.clone(), coords.clone(), intensity.clone(), d.sigma.clone())
                .map_err(|e| CliError::schema(f, e))?
        }
        _ => return Err(CliError::schema(f, "exactly one of `file` or inline `intensity` is required")),
    };
    for (k, m) in d.mask.iter().enumerate() {
        let mf = format!("{f}.mask[{k}]");
        let sel = match (&m.range, &m.interval, &m.indices) {
            (Some([a, b]), None, None) => Selector::Range(*a, *b),
            (None, Some([lo, hi]), None) => Selector::Interval {
                dim: m.dim,
                lo: *lo,
                hi: *hi,
            },
            (None, None, Some(idx)) => Selector::Indices(idx.clone()),
            _ => return Err(CliError::schema(mf, "exactly one of `range`, `interval` or `indices` is required")),
        };
        ds.set_mask(&sel, m.exclude).map_err(|e| CliError::schema(mf, e))?;
    }
    Ok(ds)
}
