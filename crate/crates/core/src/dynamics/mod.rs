//! Cartesian orbit dynamics under a J2–J4 zonal gravity field.
//!
//! States are expressed in an Earth-centred inertial frame in km and km/s,
//! with epochs counted in seconds relative to the nominal time of closest
//! approach. First-order sensitivities are obtained by integrating the
//! 6×6 variational equations alongside the state.

mod gravity;
mod propagate;

pub use gravity::{acceleration, acceleration_jacobian, potential, GravityModel};
pub use propagate::{
    osculating_period, propagate, propagate_with_stm, IntegratorSettings, SegmentMap,
};

use nalgebra::{Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("integrator step size underflow at t = {t} s")]
    StepSizeUnderflow { t: f64 },
    #[error("integrator exceeded the maximum number of steps at t = {t} s")]
    MaxSteps { t: f64 },
    #[error("state radius {radius} km is below the reference radius {re} km")]
    Subsurface { radius: f64, re: f64 },
}

/// Cartesian state of an object at a given epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    /// Position (km).
    pub position: Vector3<f64>,
    /// Velocity (km/s).
    pub velocity: Vector3<f64>,
    /// Seconds relative to the nominal time of closest approach.
    pub epoch: f64,
}

impl StateVector {
    pub fn new(position: Vector3<f64>, velocity: Vector3<f64>, epoch: f64) -> Self {
        Self {
            position,
            velocity,
            epoch,
        }
    }

    pub fn from_array(rv: [f64; 6], epoch: f64) -> Self {
        Self {
            position: Vector3::new(rv[0], rv[1], rv[2]),
            velocity: Vector3::new(rv[3], rv[4], rv[5]),
            epoch,
        }
    }

    pub fn to_vector6(&self) -> Vector6<f64> {
        Vector6::new(
            self.position.x,
            self.position.y,
            self.position.z,
            self.velocity.x,
            self.velocity.y,
            self.velocity.z,
        )
    }

    pub fn from_vector6(rv: &Vector6<f64>, epoch: f64) -> Self {
        Self {
            position: Vector3::new(rv[0], rv[1], rv[2]),
            velocity: Vector3::new(rv[3], rv[4], rv[5]),
            epoch,
        }
    }

    /// Adds a 6-vector deviation (δr, δv) to the state.
    pub fn perturbed(&self, delta: &Vector6<f64>) -> Self {
        Self {
            position: self.position + delta.fixed_rows::<3>(0),
            velocity: self.velocity + delta.fixed_rows::<3>(3),
            epoch: self.epoch,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().chain(self.velocity.iter()).all(|v| v.is_finite()) && self.epoch.is_finite()
    }

    /// Checks the finite / above-surface invariants against a gravity model.
    pub fn validate(&self, model: &GravityModel) -> Result<(), DynamicsError> {
        if !self.is_finite() {
            return Err(DynamicsError::NonFinite("state vector"));
        }
        let radius = self.position.norm();
        if radius <= model.re {
            return Err(DynamicsError::Subsurface {
                radius,
                re: model.re,
            });
        }
        Ok(())
    }

    /// Specific mechanical energy v²/2 − U(r) in the full zonal field (km²/s²).
    pub fn energy(&self, model: &GravityModel) -> f64 {
        0.5 * self.velocity.norm_squared() - potential(&self.position, model)
    }
}
