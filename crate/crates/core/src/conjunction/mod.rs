//! Encounter geometry at closest approach: b-plane frame, combined
//! covariance, Mahalanobis distance, collision-probability metrics, TCA
//! refinement and first-order encounter sensitivities.

mod frame;
mod probability;
mod tca;

pub use frame::{
    build_bplane_frame, combined_bplane_covariance, combined_bplane_covariance_at, rtn_to_eci,
    BPlaneFrame, CovarianceFrame,
};
pub use probability::{
    mahalanobis_sq, pc_approx, pc_max, pc_quadrature, threshold_to_mahalanobis, Constraint,
    Threshold,
};
pub use tca::{
    bplane_encounter, encounter_sensitivities, refine_tca, BPlaneEncounter, Sensitivities,
    TcaSettings, TcaSolution,
};

use nalgebra::{Matrix2, Matrix3, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{DynamicsError, StateVector};

/// Relative tolerance on Δr·Δv for states claimed to be at closest approach.
pub const TOL_CA: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConjunctionError {
    #[error("degenerate encounter geometry: {0}")]
    DegenerateGeometry(&'static str),
    #[error("combined covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("direct impact: Mahalanobis distance is zero and the maximum-probability bound diverges")]
    DirectImpact,
    #[error("collision-probability quadrature did not converge")]
    QuadratureNonConvergence,
    #[error("closest-approach refinement did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("closest-approach root at t = {t} s is a distance maximum (g' = {g_prime})")]
    SaddlePoint { t: f64, g_prime: f64 },
    #[error("invalid threshold: {0}")]
    InvalidThreshold(String),
    #[error("invalid conjunction event: {0}")]
    InvalidEvent(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Two objects at their nominal time of closest approach (epoch 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjunctionEvent {
    pub primary: StateVector,
    pub secondary: StateVector,
    /// Primary positional covariance in its own RTN frame (km²).
    pub cov_primary_rtn: Matrix3<f64>,
    /// Secondary positional covariance in its own RTN frame (km²).
    pub cov_secondary_rtn: Matrix3<f64>,
    /// Combined hard-body radius (km).
    pub radius: f64,
}

/// Projected encounter quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncounterGeometry {
    /// Relative position of the primary in the b-plane, (ξ, ζ) in km.
    pub dr_b: Vector2<f64>,
    /// Combined covariance projected on the b-plane (km²).
    pub c_b: Matrix2<f64>,
    pub d2: f64,
    pub pc_approx: f64,
    /// `None` for a direct hit, where the bound diverges.
    pub pc_max: Option<f64>,
}

fn check_covariance(name: &str, cov: &Matrix3<f64>) -> Result<(), ConjunctionError> {
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(ConjunctionError::InvalidEvent(format!("{name} covariance has non-finite entries")));
    }
    let scale = cov.abs().max().max(f64::MIN_POSITIVE);
    for i in 0..3 {
        for j in (i + 1)..3 {
            if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-12 * scale {
                return Err(ConjunctionError::InvalidEvent(format!(
                    "{name} covariance is not symmetric at ({i},{j})"
                )));
            }
        }
    }
    let eig = cov.symmetric_eigenvalues();
    if eig.min() < -1e-12 * scale {
        return Err(ConjunctionError::InvalidEvent(format!(
            "{name} covariance is not positive semi-definite (min eigenvalue {:e})",
            eig.min()
        )));
    }
    Ok(())
}

impl ConjunctionEvent {
    pub fn validate(&self) -> Result<(), ConjunctionError> {
        if !self.primary.is_finite() || !self.secondary.is_finite() {
            return Err(ConjunctionError::InvalidEvent("non-finite state".into()));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(ConjunctionError::InvalidEvent(format!(
                "combined radius must be positive, got {}",
                self.radius
            )));
        }
        check_covariance("primary", &self.cov_primary_rtn)?;
        check_covariance("secondary", &self.cov_secondary_rtn)?;
        let dr = self.primary.position - self.secondary.position;
        let dv = self.primary.velocity - self.secondary.velocity;
        if dv.norm() == 0.0 {
            return Err(ConjunctionError::InvalidEvent("zero relative velocity".into()));
        }
        if dr.dot(&dv).abs() >= TOL_CA * dr.norm() * dv.norm() && dr.norm() > 0.0 {
            return Err(ConjunctionError::InvalidEvent(format!(
                "states are not at closest approach: |dr.dv| / (|dr||dv|) = {:e}",
                dr.dot(&dv).abs() / (dr.norm() * dv.norm())
            )));
        }
        Ok(())
    }

    /// Geometry and probability metrics of the event as given.
    pub fn geometry(&self, mode: CovarianceFrame) -> Result<EncounterGeometry, ConjunctionError> {
        let frame = build_bplane_frame(&self.primary.velocity, &self.secondary.velocity)?;
        let c_b = combined_bplane_covariance(self, &frame, mode)?;
        let dr_b = frame.project(&(self.primary.position - self.secondary.position));
        encounter_geometry(&dr_b, &c_b, self.radius)
    }
}

/// Evaluates d2 and both closed-form probabilities for a projected encounter.
pub fn encounter_geometry(
    dr_b: &Vector2<f64>,
    c_b: &Matrix2<f64>,
    radius: f64,
) -> Result<EncounterGeometry, ConjunctionError> {
    let d2 = mahalanobis_sq(dr_b, c_b)?;
    let pc_max = match pc_max(d2, c_b, radius) {
        Ok(p) => Some(p),
        Err(ConjunctionError::DirectImpact) => None,
        Err(e) => return Err(e),
    };
    Ok(EncounterGeometry {
        dr_b: *dr_b,
        c_b: *c_b,
        d2,
        pc_approx: pc_approx(d2, c_b, radius),
        pc_max,
    })
}
