use std::f64::consts::PI;

use num_complex::Complex64;

use super::{Formalism, Slab};

/// z-components of the wavevector in every slab, `k_j = sqrt((Q/2)² − 4π(ρ_j − ρ_0))`
/// on the branch with non-negative imaginary part.
pub fn wavevectors(slabs: &[Slab], q: f64, spin: f64) -> Vec<Complex64> {
    let rho0 = slabs[0].rho(spin);
    let k0sq = Complex64::new(0.25 * q * q, 0.0);
    slabs
        .iter()
        .map(|s| {
            let k = (k0sq - 4.0 * PI * (s.rho(spin) - rho0)).sqrt();
            if k.im < 0.0 {
                -k
            } else {
                k
            }
        })
        .collect()
}

/// Fresnel coefficient with the Névot-Croce roughness factor.
pub fn fresnel(k1: Complex64, k2: Complex64, sigma: f64) -> Complex64 {
    let den = k1 + k2;
    if den == Complex64::new(0.0, 0.0) {
        return den;
    }
    let r = (k1 - k2) / den;
    if sigma > 0.0 {
        r * (-2.0 * k1 * k2 * sigma * sigma).exp()
    } else {
        r
    }
}

/// Reflection amplitude by Parratt recursion from the substrate upward.
pub fn parratt_amplitude(slabs: &[Slab], q: f64, spin: f64) -> Complex64 {
    let k = wavevectors(slabs, q, spin);
    let n = slabs.len();
    let mut x = Complex64::new(0.0, 0.0);
    for j in (0..n - 1).rev() {
        let r = fresnel(k[j], k[j + 1], slabs[j + 1].roughness);
        let phase = if j + 1 < n - 1 {
            (Complex64::new(0.0, 2.0) * k[j + 1] * slabs[j + 1].thickness).exp()
        } else {
            Complex64::new(0.0, 0.0)
        };
        let xp = x * phase;
        x = (r + xp) / (1.0 + r * xp);
    }
    x
}

/// Reflection amplitude from the 2×2 transfer-matrix product.
pub fn matrix_amplitude(slabs: &[Slab], q: f64, spin: f64) -> Complex64 {
    let k = wavevectors(slabs, q, spin);
    let n = slabs.len();
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    let mut m = [[one, zero], [zero, one]];
    let mul = |a: [[Complex64; 2]; 2], b: [[Complex64; 2]; 2]| {
        let mut c = [[zero; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        c
    };
    for j in 0..n - 1 {
        let (a, b) = (k[j], k[j + 1]);
        let s2 = slabs[j + 1].roughness.powi(2);
        let (p, mm) = if a == zero {
            // grazing limit: only the ratio matters, scale both by 2k_j
            (
                (a + b) * (-(b - a) * (b - a) * s2 / 2.0).exp(),
                (a - b) * (-(b + a) * (b + a) * s2 / 2.0).exp(),
            )
        } else {
            (
                (a + b) / (2.0 * a) * (-(b - a) * (b - a) * s2 / 2.0).exp(),
                (a - b) / (2.0 * a) * (-(b + a) * (b + a) * s2 / 2.0).exp(),
            )
        };
        m = mul(m, [[p, mm], [mm, p]]);
        if j + 1 < n - 1 {
            let phase = Complex64::new(0.0, 1.0) * b * slabs[j + 1].thickness;
            m = mul(m, [[(-phase).exp(), zero], [zero, phase.exp()]]);
        }
    }
    if m[0][0] == zero {
        return zero;
    }
    m[1][0] / m[0][0]
}

/// `|r|²` for one spin state (0 for unpolarized).
pub fn reflectivity(slabs: &[Slab], q: f64, spin: f64, formalism: Formalism) -> f64 {
    let r = match formalism {
        Formalism::Parratt => parratt_amplitude(slabs, q, spin),
        Formalism::Matrix => matrix_amplitude(slabs, q, spin),
    };
    r.norm_sqr()
}
