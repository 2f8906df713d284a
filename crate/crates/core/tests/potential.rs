use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scatterfit::potential::{polyhedron, pos, Potential};
use scatterfit::reflect::Material;
use scatterfit::Variable;

type V3 = [f64; 3];

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: V3, b: V3) -> V3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Random affine image of an octahedron or a cube, or a random tetrahedron.
fn random_convex(rng: &mut ChaCha8Rng, kind: usize) -> (Vec<V3>, Vec<Vec<usize>>) {
    let (base, mut faces): (Vec<V3>, Vec<Vec<usize>>) = match kind % 3 {
        0 => {
            let v = (0..4).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
            (v, vec![vec![0, 2, 1], vec![0, 1, 3], vec![0, 3, 2], vec![1, 2, 3]])
        }
        1 => (
            vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, -1.0]],
            vec![
                vec![0, 2, 4],
                vec![2, 1, 4],
                vec![1, 3, 4],
                vec![3, 0, 4],
                vec![2, 0, 5],
                vec![1, 2, 5],
                vec![3, 1, 5],
                vec![0, 3, 5],
            ],
        ),
        _ => (
            vec![
                [-0.5, -0.5, -0.5],
                [0.5, -0.5, -0.5],
                [0.5, 0.5, -0.5],
                [-0.5, 0.5, -0.5],
                [-0.5, -0.5, 0.5],
                [0.5, -0.5, 0.5],
                [0.5, 0.5, 0.5],
                [-0.5, 0.5, 0.5],
            ],
            vec![vec![0, 3, 2, 1], vec![4, 5, 6, 7], vec![0, 1, 5, 4], vec![2, 3, 7, 6], vec![1, 2, 6, 5], vec![0, 4, 7, 3]],
        ),
    };
    let verts: Vec<V3> = if kind % 3 == 0 {
        base
    } else {
        let m: [V3; 3] = std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)));
        let m = [
            [m[0][0] + 1.5, m[0][1], m[0][2]],
            [m[1][0], m[1][1] + 1.5, m[1][2]],
            [m[2][0], m[2][1], m[2][2] + 1.5],
        ];
        let t: V3 = std::array::from_fn(|_| rng.gen_range(-0.5..0.5));
        base.iter().map(|v| std::array::from_fn(|i| dot(m[i], *v) + t[i])).collect()
    };
    // orientation follows the sign of the signed volume
    let c: V3 = std::array::from_fn(|i| verts.iter().map(|v| v[i]).sum::<f64>() / verts.len() as f64);
    let vol: f64 = faces
        .iter()
        .map(|f| {
            (1..f.len() - 1)
                .map(|k| dot(sub(verts[f[0]], c), cross(sub(verts[f[k]], c), sub(verts[f[k + 1]], c))))
                .sum::<f64>()
        })
        .sum();
    if vol < 0.0 {
        for f in &mut faces {
            f.reverse();
        }
    }
    (verts, faces)
}

/// Midpoint rule on an 80×80 grid over the bounding box in x and y; along
/// each column the body is a single segment, integrated exactly.
fn grid_oracle(verts: &[V3], faces: &[Vec<usize>], q: V3) -> Complex64 {
    let planes: Vec<(V3, f64)> = faces
        .iter()
        .map(|f| {
            let n = cross(sub(verts[f[1]], verts[f[0]]), sub(verts[f[2]], verts[f[0]]));
            (n, dot(n, verts[f[0]]))
        })
        .collect();
    let lo: V3 = std::array::from_fn(|i| verts.iter().map(|v| v[i]).fold(f64::INFINITY, f64::min));
    let hi: V3 = std::array::from_fn(|i| verts.iter().map(|v| v[i]).fold(f64::NEG_INFINITY, f64::max));
    let n = 80;
    let (hx, hy) = ((hi[0] - lo[0]) / n as f64, (hi[1] - lo[1]) / n as f64);
    let mut total = Complex64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let (x, y) = (lo[0] + (i as f64 + 0.5) * hx, lo[1] + (j as f64 + 0.5) * hy);
            let (mut z0, mut z1) = (f64::NEG_INFINITY, f64::INFINITY);
            let mut empty = false;
            for (nv, d) in &planes {
                // n·(x, y, z) ≤ d
                let rest = d - nv[0] * x - nv[1] * y;
                if nv[2].abs() < 1e-14 {
                    if rest < 0.0 {
                        empty = true;
                    }
                } else if nv[2] > 0.0 {
                    z1 = z1.min(rest / nv[2]);
                } else {
                    z0 = z0.max(rest / nv[2]);
                }
            }
            if empty || z1 <= z0 {
                continue;
            }
            let len = z1 - z0;
            let seg = len * scatterfit::expr::sinc(0.5 * q[2] * len);
            let phase = Complex64::from_polar(1.0, q[0] * x + q[1] * y + q[2] * 0.5 * (z0 + z1));
            total += seg * phase * hx * hy;
        }
    }
    total
}

fn vars() -> [Variable; 3] {
    [Variable::new("qx"), Variable::new("qy"), Variable::new("qz")]
}

fn build(v: &[Variable; 3], verts: Vec<V3>, faces: Vec<Vec<usize>>) -> Potential {
    polyhedron([&v[0], &v[1], &v[2]], &Material::new("m", 1.0, 0.0), verts, faces, vec![pos(0.0, 0.0, 0.0)]).unwrap()
}

#[test]
fn convex_polyhedra_match_grid_integration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let v = vars();
    for kind in 0..9 {
        let (verts, faces) = random_convex(&mut rng, kind);
        let p = build(&v, verts.clone(), faces.clone());
        for _ in 0..4 {
            let dir: V3 = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            let len = dot(dir, dir).sqrt();
            let mag = rng.gen_range(0.05..0.5);
            let q: V3 = std::array::from_fn(|i| dir[i] / len * mag);
            let exact = p.transform(q).unwrap();
            let grid = grid_oracle(&verts, &faces, q);
            assert!(
                (exact - grid).norm() < 1e-3 * exact.norm(),
                "kind {kind}, q {q:?}: {exact} vs {grid}"
            );
        }
    }
}

#[test]
fn forward_value_is_volume() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let v = vars();
    for kind in 0..6 {
        let (verts, faces) = random_convex(&mut rng, kind);
        let p = build(&v, verts.clone(), faces.clone());
        let grid = grid_oracle(&verts, &faces, [0.0; 3]);
        let f0 = p.transform([0.0; 3]).unwrap();
        assert!(f0.im.abs() < 1e-15);
        assert!((f0.re - grid.re).abs() < 1e-3 * f0.re);
    }
}
