use std::f64::consts::{E, PI};
use std::sync::OnceLock;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::ConjunctionError;

/// Safety requirement on the encounter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Constraint {
    /// Constant-density collision probability at most p̄.
    PcApprox(f64),
    /// Worst-case (covariance-scaled) probability at most p̄.
    PcMax(f64),
    /// Euclidean b-plane miss distance at least d̄ (km).
    MissDistance(f64),
}

impl Constraint {
    pub fn label(&self) -> &'static str {
        match self {
            Constraint::PcApprox(_) => "pc",
            Constraint::PcMax(_) => "pcmax",
            Constraint::MissDistance(_) => "miss",
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            Constraint::PcApprox(v) | Constraint::PcMax(v) | Constraint::MissDistance(v) => v,
        }
    }
}

/// Squared-distance threshold and the metric it is measured in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub d2_bar: f64,
    pub c_eff: Matrix2<f64>,
    /// The supplied position already satisfies the requirement.
    pub already_safe: bool,
}

pub fn mahalanobis_sq(dr_b: &Vector2<f64>, c_b: &Matrix2<f64>) -> Result<f64, ConjunctionError> {
    let chol = c_b.cholesky().ok_or(ConjunctionError::NotPositiveDefinite)?;
    Ok(dr_b.dot(&chol.solve(dr_b)))
}

pub fn pc_approx(d2: f64, c_b: &Matrix2<f64>, radius: f64) -> f64 {
    radius * radius / (2.0 * c_b.determinant().sqrt()) * (-0.5 * d2).exp()
}

pub fn pc_max(d2: f64, c_b: &Matrix2<f64>, radius: f64) -> Result<f64, ConjunctionError> {
    if d2 <= f64::EPSILON {
        return Err(ConjunctionError::DirectImpact);
    }
    Ok(radius * radius / (d2 * c_b.determinant().sqrt() * E))
}

pub fn threshold_to_mahalanobis(
    constraint: &Constraint,
    dr_b: &Vector2<f64>,
    c_b: &Matrix2<f64>,
    radius: f64,
) -> Result<Threshold, ConjunctionError> {
    let sqrt_det = c_b.determinant().sqrt();
    let (d2_bar, c_eff) = match *constraint {
        Constraint::PcApprox(p) => {
            check_probability(p)?;
            let arg = radius * radius / (2.0 * p * sqrt_det);
            if !(arg > 1.0) {
                return Err(ConjunctionError::InvalidThreshold(format!(
                    "probability {p:e} is above the peak constant-density value {:e}",
                    radius * radius / (2.0 * sqrt_det)
                )));
            }
            (2.0 * arg.ln(), *c_b)
        }
        Constraint::PcMax(p) => {
            check_probability(p)?;
            (radius * radius / (p * sqrt_det * E), *c_b)
        }
        Constraint::MissDistance(d) => {
            if !(d > 0.0 && d.is_finite()) {
                return Err(ConjunctionError::InvalidThreshold(format!(
                    "miss distance must be positive, got {d}"
                )));
            }
            (d * d, Matrix2::identity())
        }
    };
    let current = mahalanobis_sq(dr_b, &c_eff)?;
    Ok(Threshold {
        d2_bar,
        c_eff,
        already_safe: current >= d2_bar,
    })
}

fn check_probability(p: f64) -> Result<(), ConjunctionError> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(ConjunctionError::InvalidThreshold(format!(
            "probability threshold must lie in (0, 1), got {p}"
        )))
    }
}

const GL_ORDER: usize = 16;
const QUAD_TOL: f64 = 1e-10;
const MAX_DEPTH: u32 = 40;

fn gauss_legendre() -> &'static ([f64; GL_ORDER], [f64; GL_ORDER]) {
    static RULE: OnceLock<([f64; GL_ORDER], [f64; GL_ORDER])> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = GL_ORDER;
        let mut x = [0.0; GL_ORDER];
        let mut w = [0.0; GL_ORDER];
        for i in 0..n {
            let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, z);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
                let dz = p1 / dp;
                z -= dz;
                if dz.abs() < 1e-16 {
                    break;
                }
            }
            x[i] = z;
            w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        }
        (x, w)
    })
}

fn gl_panel(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64) -> f64 {
    let (x, w) = gauss_legendre();
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut s = 0.0;
    for i in 0..GL_ORDER {
        s += w[i] * f(mid + half * x[i]);
    }
    s * half
}

/// Adaptive bisection: a panel is accepted once its 16-point value agrees
/// with the sum over its two halves.
fn adaptive(
    f: &mut impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64, ConjunctionError> {
    let m = 0.5 * (a + b);
    let left = gl_panel(f, a, m);
    let right = gl_panel(f, m, b);
    let both = left + right;
    if (both - whole).abs() <= tol {
        return Ok(both);
    }
    if depth >= MAX_DEPTH {
        return Err(ConjunctionError::QuadratureNonConvergence);
    }
    Ok(adaptive(f, a, m, left, 0.5 * tol, depth + 1)? + adaptive(f, m, b, right, 0.5 * tol, depth + 1)?)
}

fn integrate(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64, ConjunctionError> {
    let whole = gl_panel(f, a, b);
    adaptive(f, a, b, whole, tol, 0)
}

/// Gaussian density integrated over the disc of radius `radius` centred at
/// the b-plane origin, in polar coordinates (ρ, θ).
pub fn pc_quadrature(dr_b: &Vector2<f64>, c_b: &Matrix2<f64>, radius: f64) -> Result<f64, ConjunctionError> {
    let chol = c_b.cholesky().ok_or(ConjunctionError::NotPositiveDefinite)?;
    if !(radius > 0.0) || !dr_b.iter().all(|v| v.is_finite()) {
        return Err(ConjunctionError::QuadratureNonConvergence);
    }
    let inv = chol.inverse();
    let norm = 1.0 / (2.0 * PI * c_b.determinant().sqrt());
    let inner_tol = 0.1 * QUAD_TOL / (2.0 * PI);
    let mut failed = false;
    let mut outer = |theta: f64| {
        let dir = Vector2::new(theta.cos(), theta.sin());
        let mut radial = |rho: f64| {
            let d = dir * rho - dr_b;
            norm * rho * (-0.5 * d.dot(&(inv * d))).exp()
        };
        match integrate(&mut radial, 0.0, radius, inner_tol) {
            Ok(v) => v,
            Err(_) => {
                failed = true;
                0.0
            }
        }
    };
    // Four angular quarters so the first estimate already sees every lobe.
    let mut total = 0.0;
    for q in 0..4 {
        let a = 0.5 * PI * q as f64;
        total += integrate(&mut outer, a, a + 0.5 * PI, 0.25 * 0.9 * QUAD_TOL)?;
    }
    if failed {
        return Err(ConjunctionError::QuadratureNonConvergence);
    }
    Ok(total.min(1.0))
}
