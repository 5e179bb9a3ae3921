use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{ConjunctionError, ConjunctionEvent};
use crate::dynamics::StateVector;

/// Encounter plane frame: η along the relative velocity, ξ normal to both
/// velocities, ζ completing the right-handed triad.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BPlaneFrame {
    pub u_xi: Vector3<f64>,
    pub u_eta: Vector3<f64>,
    pub u_zeta: Vector3<f64>,
    /// Rows u_ξ, u_η, u_ζ.
    pub r3d: Matrix3<f64>,
    /// Rows u_ξ, u_ζ.
    pub r2d: Matrix2x3<f64>,
}

impl BPlaneFrame {
    pub fn project(&self, v: &Vector3<f64>) -> Vector2<f64> {
        self.r2d * v
    }
}

/// Which RTN triad each object's covariance is rotated with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceFrame {
    /// Each covariance uses its own object's triad.
    #[default]
    PerObject,
    /// Both covariances use the primary's triad.
    PrimaryTriad,
}

pub fn build_bplane_frame(
    v_primary: &Vector3<f64>,
    v_secondary: &Vector3<f64>,
) -> Result<BPlaneFrame, ConjunctionError> {
    let cross = v_secondary.cross(v_primary);
    let rel = v_primary - v_secondary;
    let scale = v_primary.norm() * v_secondary.norm();
    if rel.norm() == 0.0 {
        return Err(ConjunctionError::DegenerateGeometry("zero relative velocity"));
    }
    if !(cross.norm() > 1e-14 * scale) {
        return Err(ConjunctionError::DegenerateGeometry("parallel velocities"));
    }
    let u_xi = cross.normalize();
    let u_eta = rel.normalize();
    let u_zeta = u_xi.cross(&u_eta);
    let r3d = Matrix3::from_rows(&[u_xi.transpose(), u_eta.transpose(), u_zeta.transpose()]);
    let r2d = Matrix2x3::from_rows(&[u_xi.transpose(), u_zeta.transpose()]);
    Ok(BPlaneFrame {
        u_xi,
        u_eta,
        u_zeta,
        r3d,
        r2d,
    })
}

/// Rotation whose columns are the radial, transverse and normal unit vectors
/// of (r, v); maps RTN components to ECI.
pub fn rtn_to_eci(r: &Vector3<f64>, v: &Vector3<f64>) -> Result<Matrix3<f64>, ConjunctionError> {
    let h = r.cross(v);
    if r.norm() == 0.0 || !(h.norm() > 1e-14 * r.norm() * v.norm()) {
        return Err(ConjunctionError::DegenerateGeometry("radial and velocity vectors are parallel"));
    }
    let radial = r.normalize();
    let normal = h.normalize();
    let transverse = normal.cross(&radial);
    Ok(Matrix3::from_columns(&[radial, transverse, normal]))
}

/// Combined covariance of the event projected on `frame`.
pub fn combined_bplane_covariance(
    event: &ConjunctionEvent,
    frame: &BPlaneFrame,
    mode: CovarianceFrame,
) -> Result<Matrix2<f64>, ConjunctionError> {
    combined_bplane_covariance_at(
        &event.primary,
        &event.secondary,
        &event.cov_primary_rtn,
        &event.cov_secondary_rtn,
        frame,
        mode,
    )
}

/// Same as [`combined_bplane_covariance`] with the RTN triads taken from the
/// given states, e.g. maneuvered encounter states.
pub fn combined_bplane_covariance_at(
    primary: &StateVector,
    secondary: &StateVector,
    cov_primary_rtn: &Matrix3<f64>,
    cov_secondary_rtn: &Matrix3<f64>,
    frame: &BPlaneFrame,
    mode: CovarianceFrame,
) -> Result<Matrix2<f64>, ConjunctionError> {
    let mp = rtn_to_eci(&primary.position, &primary.velocity)?;
    let ms = match mode {
        CovarianceFrame::PerObject => rtn_to_eci(&secondary.position, &secondary.velocity)?,
        CovarianceFrame::PrimaryTriad => mp,
    };
    let c_eci = mp * cov_primary_rtn * mp.transpose() + ms * cov_secondary_rtn * ms.transpose();
    let c_b = frame.r2d * c_eci * frame.r2d.transpose();
    let c_b = 0.5 * (c_b + c_b.transpose());
    if c_b.cholesky().is_none() {
        return Err(ConjunctionError::NotPositiveDefinite);
    }
    Ok(c_b)
}
