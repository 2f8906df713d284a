use std::collections::HashMap;

use num_complex::Complex64;
use thiserror::Error;

use crate::expr::sinc;

pub type V3 = [f64; 3];

fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn add(a: V3, b: V3) -> V3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: V3, s: f64) -> V3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: V3, b: V3) -> V3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: V3) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeshError {
    #[error("face {face} has fewer than 3 vertices")]
    TooFewVertices { face: usize },
    #[error("face {face} refers to missing vertex {index}")]
    BadIndex { face: usize, index: usize },
    #[error("vertex {0} is not finite")]
    NonFinite(usize),
    #[error("face {0} has zero area")]
    Degenerate(usize),
    #[error("face {0} is not planar")]
    NonPlanar(usize),
    #[error("edge {0}-{1} is not shared by exactly two oppositely oriented faces")]
    Open(usize, usize),
    #[error("faces are oriented inwards (signed volume {0})")]
    Inward(f64),
}

#[derive(Debug, Clone)]
struct Edge {
    // vector from start to end vertex, midpoint relative to the mesh centre
    e: V3,
    mid: V3,
}

#[derive(Debug, Clone)]
struct Face {
    normal: V3,
    centre: V3,
    radius: f64,
    edges: Vec<Edge>,
    // fan triangles from the face centre: other two corners (relative to the
    // face centre) and signed area
    fan: Vec<(V3, V3, f64)>,
}

/// A closed, outward-oriented polyhedral surface with planar faces, stored
/// relative to its vertex centroid.
#[derive(Debug, Clone)]
pub struct Polyhedron {
    vertices: Vec<V3>,
    faces_idx: Vec<Vec<usize>>,
    centre: V3,
    radius: f64,
    volume: f64,
    faces: Vec<Face>,
    // fan tetrahedra from the centre: three corners (relative) and signed volume
    tets: Vec<(V3, V3, V3, f64)>,
}

// series expansions are used while |q|·radius stays below this
const SERIES_LIMIT: f64 = 1.0;
const MAX_TERMS: usize = 80;

impl Polyhedron {
    pub fn new(vertices: Vec<V3>, faces: Vec<Vec<usize>>) -> Result<Polyhedron, MeshError> {
        for (i, v) in vertices.iter().enumerate() {
            if v.iter().any(|c| !c.is_finite()) {
                return Err(MeshError::NonFinite(i));
            }
        }
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for (fi, f) in faces.iter().enumerate() {
            if f.len() < 3 {
                return Err(MeshError::TooFewVertices { face: fi });
            }
            for &i in f {
                if i >= vertices.len() {
                    return Err(MeshError::BadIndex { face: fi, index: i });
                }
            }
            for k in 0..f.len() {
                *directed.entry((f[k], f[(k + 1) % f.len()])).or_default() += 1;
            }
        }
        for (&(a, b), &n) in &directed {
            if n != 1 || directed.get(&(b, a)) != Some(&1) {
                return Err(MeshError::Open(a.min(b), a.max(b)));
            }
        }
        let centre = scale(
            vertices.iter().fold([0.0; 3], |acc, v| add(acc, *v)),
            1.0 / vertices.len() as f64,
        );
        let rel: Vec<V3> = vertices.iter().map(|v| sub(*v, centre)).collect();
        let radius = rel.iter().map(|v| norm(*v)).fold(0.0, f64::max);
        let tol = 1e-9 * radius.max(f64::MIN_POSITIVE);

        let mut out_faces = Vec::with_capacity(faces.len());
        let mut tets = Vec::new();
        let mut volume = 0.0;
        for (fi, f) in faces.iter().enumerate() {
            // Newell normal
            let mut nn = [0.0; 3];
            for k in 0..f.len() {
                let (a, b) = (rel[f[k]], rel[f[(k + 1) % f.len()]]);
                nn = add(nn, cross(a, b));
            }
            let area = 0.5 * norm(nn);
            if area <= 1e-12 * radius * radius {
                return Err(MeshError::Degenerate(fi));
            }
            let n = scale(nn, 0.5 / area);
            let fc = scale(f.iter().fold([0.0; 3], |acc, &i| add(acc, rel[i])), 1.0 / f.len() as f64);
            if f.iter().any(|&i| dot(sub(rel[i], fc), n).abs() > tol) {
                return Err(MeshError::NonPlanar(fi));
            }
            let mut edges = Vec::with_capacity(f.len());
            let mut fan = Vec::with_capacity(f.len());
            let mut fr = 0.0f64;
            for k in 0..f.len() {
                let (a, b) = (rel[f[k]], rel[f[(k + 1) % f.len()]]);
                edges.push(Edge {
                    e: sub(b, a),
                    mid: scale(add(a, b), 0.5),
                });
                let (ar, br) = (sub(a, fc), sub(b, fc));
                fr = fr.max(norm(ar));
                fan.push((ar, br, 0.5 * dot(cross(ar, br), n)));
                // tetra (centre, fc, a, b)
                let vol = dot(fc, cross(a, b)) / 6.0;
                tets.push((fc, a, b, vol));
                volume += vol;
            }
            out_faces.push(Face {
                normal: n,
                centre: fc,
                radius: fr,
                edges,
                fan,
            });
        }
        if !(volume > 0.0) {
            return Err(MeshError::Inward(volume));
        }
        Ok(Polyhedron {
            vertices,
            faces_idx: faces,
            centre,
            radius,
            volume,
            faces: out_faces,
            tets,
        })
    }

    /// Axis-aligned box `[0,a]×[0,b]×[0,c]` offset by `origin`.
    pub fn cuboid(origin: V3, a: f64, b: f64, c: f64) -> Result<Polyhedron, MeshError> {
        let [x, y, z] = origin;
        let v = vec![
            [x, y, z],
            [x + a, y, z],
            [x + a, y + b, z],
            [x, y + b, z],
            [x, y, z + c],
            [x + a, y, z + c],
            [x + a, y + b, z + c],
            [x, y + b, z + c],
        ];
        let f = vec![
            vec![0, 3, 2, 1],
            vec![4, 5, 6, 7],
            vec![0, 1, 5, 4],
            vec![2, 3, 7, 6],
            vec![1, 2, 6, 5],
            vec![0, 4, 7, 3],
        ];
        Polyhedron::new(v, f)
    }

    pub fn vertices(&self) -> &[V3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[Vec<usize>] {
        &self.faces_idx
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn centre(&self) -> V3 {
        self.centre
    }

    /// `∫ exp(i q·r) dV` over the solid, in its own coordinates.
    pub fn form_factor(&self, q: V3) -> Complex64 {
        let qn = norm(q);
        let shift = Complex64::from_polar(1.0, dot(q, self.centre));
        if qn * self.radius < SERIES_LIMIT {
            return shift * self.volume_series(q);
        }
        let mut total = Complex64::new(0.0, 0.0);
        for f in &self.faces {
            let qn_f = dot(q, f.normal);
            if qn_f == 0.0 {
                continue;
            }
            total += qn_f * self.face_integral(f, q);
        }
        // F = -(i/q²) Σ (q·n) S_f
        shift * Complex64::new(0.0, -1.0) * total / (qn * qn)
    }

    /// `∫_face exp(i q·r) dA`, relative to the mesh centre.
    fn face_integral(&self, f: &Face, q: V3) -> Complex64 {
        let qpar = sub(q, scale(f.normal, dot(q, f.normal)));
        let qp2 = dot(qpar, qpar);
        if qp2.sqrt() * f.radius < SERIES_LIMIT {
            let phase = Complex64::from_polar(1.0, dot(q, f.centre));
            let terms = f.fan.iter().map(|(a, b, area)| (dot(qpar, *a), dot(qpar, *b), *area));
            return phase * series(terms.map(|(x, y, w)| (x, y, 0.0, w)), 2, qp2.sqrt() * f.radius);
        }
        let mut s = Complex64::new(0.0, 0.0);
        for e in &f.edges {
            let qe = dot(q, cross(e.e, f.normal));
            if qe == 0.0 {
                continue;
            }
            s += qe * sinc(0.5 * dot(q, e.e)) * Complex64::from_polar(1.0, dot(q, e.mid));
        }
        Complex64::new(0.0, -1.0) * s / qp2
    }

    fn volume_series(&self, q: V3) -> Complex64 {
        series(
            self.tets
                .iter()
                .map(|(a, b, c, v)| (dot(q, *a), dot(q, *b), dot(q, *c), *v)),
            3,
            norm(q) * self.radius,
        )
    }
}

/// `Σ_n iⁿ/n! ∫ (q·r)ⁿ` over simplices sharing a vertex at the origin. Each
/// item gives the linear form at the other corners and the signed measure;
/// `∫_simplex fⁿ = d!·measure·n!/(n+d)!·h_n(corner values)` with `h_n` the
/// complete homogeneous symmetric polynomial.
/// `qr` bounds |q·r| over the simplices and sets the truncation.
fn series(simplices: impl Iterator<Item = (f64, f64, f64, f64)>, dim: usize, qr: f64) -> Complex64 {
    let items: Vec<(f64, f64, f64, f64)> = simplices.collect();
    // h_n(x), h_n(x,y), h_n(x,y,z) per simplex, advanced together
    let mut hx: Vec<f64> = vec![1.0; items.len()];
    let mut hxy: Vec<f64> = vec![1.0; items.len()];
    let mut hxyz: Vec<f64> = vec![1.0; items.len()];
    let d_fact = if dim == 2 { 2.0 } else { 6.0 };
    let mut sum = Complex64::new(0.0, 0.0);
    // 1/(n+d)!
    let mut inv_fact = 1.0 / d_fact;
    let measure: f64 = items.iter().map(|it| it.3.abs()).sum();
    // qrⁿ/n!
    let mut bound = 1.0;
    for n in 0..MAX_TERMS {
        if n > 0 {
            for (k, &(x, y, z, _)) in items.iter().enumerate() {
                hx[k] *= x;
                hxy[k] = hx[k] + y * hxy[k];
                hxyz[k] = hxy[k] + z * hxyz[k];
            }
            inv_fact /= (n + dim) as f64;
        }
        let moment: f64 = items
            .iter()
            .enumerate()
            .map(|(k, it)| it.3 * if dim == 2 { hxy[k] } else { hxyz[k] })
            .sum::<f64>()
            * d_fact
            * inv_fact;
        let term = match n % 4 {
            0 => Complex64::new(moment, 0.0),
            1 => Complex64::new(0.0, moment),
            2 => Complex64::new(-moment, 0.0),
            _ => Complex64::new(0.0, -moment),
        };
        sum += term;
        bound *= qr / (n + 1) as f64;
        if bound * measure <= 1e-17 * sum.norm() {
            break;
        }
    }
    sum
}
