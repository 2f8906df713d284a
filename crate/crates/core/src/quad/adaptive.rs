use super::rules::{GaussLegendre, QuadValue};

/// Outcome of a quadrature: the estimate, and whether every subinterval met
/// the tolerance before the depth limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature<T> {
    pub value: T,
    pub converged: bool,
}

/// Recursive bisection comparing an `order`-point rule with a `2*order`-point
/// rule on each subinterval; a subinterval is accepted when the two differ by
/// less than `max(abs_tol, rel_tol * |fine estimate|)`.
pub(crate) fn adaptive<T, E, F>(
    coarse: &GaussLegendre,
    fine: &GaussLegendre,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
    max_depth: u32,
    f: &mut F,
) -> Result<Quadrature<T>, E>
where
    T: QuadValue,
    F: FnMut(f64) -> Result<T, E>,
{
    let mut converged = true;
    let value = bisect(coarse, fine, a, b, rel_tol, abs_tol, max_depth, f, &mut converged)?;
    Ok(Quadrature { value, converged })
}

#[allow(clippy::too_many_arguments)]
fn bisect<T, E, F>(
    coarse: &GaussLegendre,
    fine: &GaussLegendre,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
    depth_left: u32,
    f: &mut F,
    converged: &mut bool,
) -> Result<T, E>
where
    T: QuadValue,
    F: FnMut(f64) -> Result<T, E>,
{
    let lo = coarse.try_integrate(a, b, &mut *f)?;
    let hi = fine.try_integrate(a, b, &mut *f)?;
    let diff = (hi - lo).magnitude();
    let tol = abs_tol.max(rel_tol * hi.magnitude());
    if diff <= tol {
        return Ok(hi);
    }
    let mid = 0.5 * (a + b);
    if depth_left == 0 || mid <= a.min(b) || mid >= a.max(b) {
        *converged = false;
        return Ok(hi);
    }
    // halves get half the absolute budget so the total stays bounded
    let left = bisect(coarse, fine, a, mid, rel_tol, 0.5 * abs_tol, depth_left - 1, f, converged)?;
    let right = bisect(coarse, fine, mid, b, rel_tol, 0.5 * abs_tol, depth_left - 1, f, converged)?;
    Ok(left + right)
}
