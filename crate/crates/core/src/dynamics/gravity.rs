use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Point-mass plus J2, J3, J4 zonal gravity field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GravityModel {
    /// Gravitational parameter (km³/s²).
    pub mu: f64,
    /// Reference equatorial radius (km).
    pub re: f64,
    pub j2: f64,
    pub j3: f64,
    pub j4: f64,
}

impl Default for GravityModel {
    fn default() -> Self {
        Self::earth()
    }
}

impl GravityModel {
    pub const fn earth() -> Self {
        Self {
            mu: 398_600.441_8,
            re: 6_378.137,
            j2: 1.082_626_68e-3,
            j3: -2.532_656_49e-6,
            j4: -1.619_621_59e-6,
        }
    }

    /// Same central body with every zonal coefficient set to zero.
    pub const fn two_body(mu: f64, re: f64) -> Self {
        Self {
            mu,
            re,
            j2: 0.0,
            j3: 0.0,
            j4: 0.0,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.mu > 0.0
            && self.re > 0.0
            && self.mu.is_finite()
            && self.re.is_finite()
            && self.j2.is_finite()
            && self.j3.is_finite()
            && self.j4.is_finite()
    }
}

/// Gravitational acceleration (km/s²), evaluated term by term: central,
/// J2, J3 and J4 contributions per axis.
pub fn acceleration(position: &Vector3<f64>, model: &GravityModel) -> Vector3<f64> {
    let (x, y, z) = (position.x, position.y, position.z);
    let mu = model.mu;
    let re = model.re;
    let r2 = position.norm_squared();
    let r = r2.sqrt();
    let r3 = r2 * r;
    let r5 = r3 * r2;
    let r7 = r5 * r2;
    let zr2 = z * z / r2;
    let zr4 = zr2 * zr2;

    let central = -mu / r3;
    let mut a = Vector3::new(central * x, central * y, central * z);

    if model.j2 != 0.0 {
        let k = 3.0 * mu * model.j2 * re * re / (2.0 * r5);
        a.x += k * (5.0 * zr2 - 1.0) * x;
        a.y += k * (5.0 * zr2 - 1.0) * y;
        a.z += k * (5.0 * zr2 - 3.0) * z;
    }
    if model.j3 != 0.0 {
        let re3 = re * re * re;
        let k = 5.0 * mu * model.j3 * re3 / (2.0 * r7);
        a.x += k * x * z * (7.0 * zr2 - 3.0);
        a.y += k * y * z * (7.0 * zr2 - 3.0);
        a.z += 5.0 * mu * model.j3 * re3 / (2.0 * r5) * (0.6 - 6.0 * zr2 + 7.0 * zr4);
    }
    if model.j4 != 0.0 {
        let re4 = re * re * re * re;
        let k = 15.0 * mu * model.j4 * re4 / (8.0 * r7);
        a.x += k * x * (1.0 - 14.0 * zr2 + 21.0 * zr4);
        a.y += k * y * (1.0 - 14.0 * zr2 + 21.0 * zr4);
        a.z += k * z * (5.0 - 70.0 * zr2 / 3.0 + 21.0 * zr4);
    }
    a
}

/// Analytic Jacobian ∂a/∂r of [`acceleration`].
///
/// The field is rewritten as a_x = x·F(r,s), a_y = y·F(r,s),
/// a_z = z·G(r,s) + H(r,s) with s = z/r, and differentiated through
/// ∇r = r̂ and ∇s = (ẑ − s·r̂)/r.
pub fn acceleration_jacobian(position: &Vector3<f64>, model: &GravityModel) -> Matrix3<f64> {
    let mu = model.mu;
    let re = model.re;
    let r = position.norm();
    let s = position.z / r;
    let s2 = s * s;
    let s3 = s2 * s;
    let s4 = s2 * s2;
    let k2 = 1.5 * mu * model.j2 * re.powi(2);
    let k3 = 2.5 * mu * model.j3 * re.powi(3);
    let k4 = 1.875 * mu * model.j4 * re.powi(4);
    let (r4, r5, r6, r7, r8) = (r.powi(4), r.powi(5), r.powi(6), r.powi(7), r.powi(8));
    let r3 = r * r * r;

    let f = -mu / r3
        + k2 * (5.0 * s2 - 1.0) / r5
        + k3 * (7.0 * s3 - 3.0 * s) / r6
        + k4 * (1.0 - 14.0 * s2 + 21.0 * s4) / r7;
    let f_r = 3.0 * mu / r4
        - 5.0 * k2 * (5.0 * s2 - 1.0) / r6
        - 6.0 * k3 * (7.0 * s3 - 3.0 * s) / r7
        - 7.0 * k4 * (1.0 - 14.0 * s2 + 21.0 * s4) / r8;
    let f_s = 10.0 * k2 * s / r5 + k3 * (21.0 * s2 - 3.0) / r6 + k4 * (84.0 * s3 - 28.0 * s) / r7;

    let g = -mu / r3 + k2 * (5.0 * s2 - 3.0) / r5 + k4 * (5.0 - 70.0 / 3.0 * s2 + 21.0 * s4) / r7;
    let g_r = 3.0 * mu / r4
        - 5.0 * k2 * (5.0 * s2 - 3.0) / r6
        - 7.0 * k4 * (5.0 - 70.0 / 3.0 * s2 + 21.0 * s4) / r8;
    let g_s = 10.0 * k2 * s / r5 + k4 * (84.0 * s3 - 140.0 / 3.0 * s) / r7;

    let h_r = -5.0 * k3 * (0.6 - 6.0 * s2 + 7.0 * s4) / r6;
    let h_s = k3 * (28.0 * s3 - 12.0 * s) / r5;

    let rhat = position / r;
    let grad_r = rhat;
    let grad_s = (Vector3::z() - s * rhat) / r;
    let grad_f = f_r * grad_r + f_s * grad_s;
    let grad_g = g_r * grad_r + g_s * grad_s;
    let grad_h = h_r * grad_r + h_s * grad_s;

    let mut jac = Matrix3::zeros();
    for j in 0..3 {
        jac[(0, j)] = position.x * grad_f[j];
        jac[(1, j)] = position.y * grad_f[j];
        jac[(2, j)] = position.z * grad_g[j] + grad_h[j];
    }
    jac[(0, 0)] += f;
    jac[(1, 1)] += f;
    jac[(2, 2)] += g;
    jac
}

/// Gravitational potential U (km²/s²) with the sign convention a = ∇U.
pub fn potential(position: &Vector3<f64>, model: &GravityModel) -> f64 {
    let r = position.norm();
    let s = position.z / r;
    let q = model.re / r;
    let p2 = 0.5 * (3.0 * s * s - 1.0);
    let p3 = 0.5 * (5.0 * s.powi(3) - 3.0 * s);
    let p4 = (35.0 * s.powi(4) - 30.0 * s * s + 3.0) / 8.0;
    model.mu / r
        * (1.0 - model.j2 * q.powi(2) * p2 - model.j3 * q.powi(3) * p3 - model.j4 * q.powi(4) * p4)
}
