use nalgebra::{Matrix2, Vector2};

use super::ScvxError;

const ROOT_ITERATIONS: usize = 200;

/// Closest point to `p` on the curve zᵀ C_eff⁻¹ z = d2_bar.
///
/// Points inside and outside the ellipse are both mapped to the boundary.
/// When several boundary points are equally close (p at the centre, or on
/// the major axis near the centre) the one with positive ξ is returned, or
/// positive ζ if the candidates share ξ.
pub fn project_to_ellipse(p: &Vector2<f64>, c_eff: &Matrix2<f64>, d2_bar: f64) -> Result<Vector2<f64>, ScvxError> {
    if !(d2_bar > 0.0 && d2_bar.is_finite()) {
        return Err(ScvxError::InvalidConfig(format!("ellipse level must be positive, got {d2_bar}")));
    }
    if c_eff.cholesky().is_none() || !p.iter().all(|v| v.is_finite()) {
        return Err(ScvxError::InvalidConfig("ellipse metric must be positive definite".into()));
    }
    let eig = c_eff.symmetric_eigen();
    let (l0, l1) = (eig.eigenvalues[0], eig.eigenvalues[1]);
    if p.norm() == 0.0 && (l0 - l1).abs() <= 1e-12 * l0.max(l1) {
        return Ok(Vector2::new((d2_bar * l0.max(l1)).sqrt(), 0.0));
    }
    let (i_major, i_minor) = if eig.eigenvalues[0] >= eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
    let u_major = eig.eigenvectors.column(i_major).into_owned();
    let u_minor = eig.eigenvectors.column(i_minor).into_owned();
    let e_major = (d2_bar * eig.eigenvalues[i_major]).sqrt();
    let e_minor = (d2_bar * eig.eigenvalues[i_minor]).sqrt();

    let q_major = u_major.dot(p);
    let q_minor = u_minor.dot(p);
    let (x_major, x_minor, tie) = closest_in_quadrant(e_major, e_minor, q_major.abs(), q_minor.abs())?;
    let s_major = if q_major < 0.0 { -1.0 } else { 1.0 };
    let mut s_minor = if q_minor < 0.0 { -1.0 } else { 1.0 };
    if tie {
        let a = u_major * (s_major * x_major) + u_minor * x_minor;
        let b = u_major * (s_major * x_major) - u_minor * x_minor;
        s_minor = if prefer(&a, &b) { 1.0 } else { -1.0 };
    }
    Ok(u_major * (s_major * x_major) + u_minor * (s_minor * x_minor))
}

fn prefer(a: &Vector2<f64>, b: &Vector2<f64>) -> bool {
    let scale = a.norm().max(b.norm()).max(f64::MIN_POSITIVE);
    if (a.x - b.x).abs() > 1e-12 * scale {
        a.x > b.x
    } else {
        a.y >= b.y
    }
}

/// Closest boundary point for an axis-aligned ellipse with semi-axes
/// e0 ≥ e1 and a query point with y0, y1 ≥ 0. The flag marks the case where
/// the reflection of the answer across the major axis is equally close.
fn closest_in_quadrant(e0: f64, e1: f64, y0: f64, y1: f64) -> Result<(f64, f64, bool), ScvxError> {
    if y1 > 0.0 {
        if y0 > 0.0 {
            let t = multiplier_root(e0, e1, y0, y1)?;
            return Ok((e0 * e0 * y0 / (t + e0 * e0), e1 * e1 * y1 / (t + e1 * e1), false));
        }
        return Ok((0.0, e1, false));
    }
    let denom = e0 * e0 - e1 * e1;
    if e0 * y0 < denom {
        let x0 = e0 * e0 * y0 / denom;
        let r = x0 / e0;
        let x1 = e1 * (1.0 - r * r).max(0.0).sqrt();
        return Ok((x0, x1, x1 > 0.0));
    }
    Ok((e0, 0.0, false))
}

/// Root of F(t) = (e0 y0/(t+e0²))² + (e1 y1/(t+e1²))² − 1 on t > −e1².
/// F is strictly decreasing there; Newton is safeguarded by the bracket.
fn multiplier_root(e0: f64, e1: f64, y0: f64, y1: f64) -> Result<f64, ScvxError> {
    let a0 = e0 * y0;
    let a1 = e1 * y1;
    let f = |t: f64| {
        let r0 = a0 / (t + e0 * e0);
        let r1 = a1 / (t + e1 * e1);
        let val = r0 * r0 + r1 * r1 - 1.0;
        let der = -2.0 * (r0 * r0 / (t + e0 * e0) + r1 * r1 / (t + e1 * e1));
        (val, der)
    };
    let mut lo = -e1 * e1 + a1;
    let mut hi = -e1 * e1 + (a0 * a0 + a1 * a1).sqrt();
    if hi <= lo {
        return Ok(lo);
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..ROOT_ITERATIONS {
        let (val, der) = f(t);
        if val == 0.0 {
            return Ok(t);
        }
        if val > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let newton = t - val / der;
        let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        let scale = e0 * e0 + t.abs();
        if (next - t).abs() <= 4.0 * f64::EPSILON * scale || hi - lo <= 4.0 * f64::EPSILON * scale {
            return Ok(next);
        }
        t = next;
    }
    Err(ScvxError::NoConvergence("ellipse projection multiplier"))
}
