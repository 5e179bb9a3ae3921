use std::f64::consts::PI;

use nalgebra::{DVector, Matrix2, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    build_grid, constraint_threshold, linearize_reference, Convexified, ManeuverPlan, ScvxConfig, ScvxError,
};
use crate::conjunction::ConjunctionEvent;
use crate::dynamics::GravityModel;
use crate::socp::{solve, Status};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Parameter angle of the boundary point (rad).
    pub theta: f64,
    pub boundary_point: Vector2<f64>,
    /// Cheapest ΔV reaching the point (km/s); `None` if the solve failed.
    pub total_dv: Option<f64>,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    /// Indices of cyclic local minima of the ΔV profile.
    pub local_minima: Vec<usize>,
    pub d2_bar: f64,
    pub c_eff: Matrix2<f64>,
}

impl SweepResult {
    /// Index of the cheapest boundary point.
    pub fn global_minimum(&self) -> Option<usize> {
        self.points
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.total_dv.map(|v| (i, v)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
    }
}

/// ΔV profile along the keep-out ellipse boundary about the ballistic
/// trajectory.
pub fn boundary_sweep(
    event: &ConjunctionEvent,
    config: &ScvxConfig,
    m: usize,
    model: &GravityModel,
) -> Result<SweepResult, ScvxError> {
    let grid = build_grid(event, config)?;
    boundary_sweep_about(event, config, m, model, &ManeuverPlan::zeros(&grid))
}

/// ΔV profile along the keep-out ellipse boundary, with dynamics, covariance
/// and threshold linearized about the trajectory flown with `reference`.
/// Each of the `m` points is reached exactly by the linear model.
pub fn boundary_sweep_about(
    event: &ConjunctionEvent,
    config: &ScvxConfig,
    m: usize,
    model: &GravityModel,
    reference: &ManeuverPlan,
) -> Result<SweepResult, ScvxError> {
    if m < 8 {
        return Err(ScvxError::InvalidConfig(format!("sweep needs at least 8 points, got {m}")));
    }
    config.validate()?;
    event.validate()?;
    let grid = build_grid(event, config)?;
    let lin = linearize_reference(event, &grid, reference, model, config)?;
    let threshold = constraint_threshold(&config.constraint, &lin.dr_b_ref, &lin.c_b_ref, event.radius)?
        .ok_or_else(|| ScvxError::InvalidConfig("constraint cannot be active".into()))?;
    let conv = Convexified::new(&lin, &reference.decision())?;

    let eig = threshold.c_eff.symmetric_eigen();
    let axes = eig.eigenvectors * Matrix2::from_diagonal(&eig.eigenvalues.map(|l| (threshold.d2_bar * l).sqrt()));
    let points: Vec<SweepPoint> = (0..m)
        .into_par_iter()
        .map(|i| {
            let theta = 2.0 * PI * i as f64 / m as f64;
            let target = axes * Vector2::new(theta.cos(), theta.sin());
            let (total_dv, status) = match conv.terminal_program(&target, config) {
                Ok(program) => {
                    let sol = solve(&program, &config.solver);
                    let dv = sol
                        .is_usable(1e-6)
                        .then(|| sigma_sum(&sol.x, conv.n));
                    (dv, sol.status)
                }
                Err(_) => (None, Status::NumericalFailure),
            };
            SweepPoint {
                theta,
                boundary_point: target,
                total_dv,
                status,
            }
        })
        .collect();
    let local_minima = cyclic_minima(&points);
    Ok(SweepResult {
        points,
        local_minima,
        d2_bar: threshold.d2_bar,
        c_eff: threshold.c_eff,
    })
}

fn sigma_sum(x: &DVector<f64>, n: usize) -> f64 {
    x.rows(3 * n, n).iter().map(|v| v.max(0.0)).sum::<f64>() * 1e-3
}

/// Points strictly below the previous valid sample and not above the next.
fn cyclic_minima(points: &[SweepPoint]) -> Vec<usize> {
    let valid: Vec<(usize, f64)> = points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.total_dv.map(|v| (i, v)))
        .collect();
    let k = valid.len();
    if k < 3 {
        return Vec::new();
    }
    (0..k)
        .filter(|&j| {
            let prev = valid[(j + k - 1) % k].1;
            let next = valid[(j + 1) % k].1;
            valid[j].1 < prev && valid[j].1 <= next
        })
        .map(|j| valid[j].0)
        .collect()
}

#[cfg(test)]
pub(crate) fn minima_of(values: &[f64]) -> Vec<usize> {
    let points: Vec<SweepPoint> = values
        .iter()
        .map(|&v| SweepPoint {
            theta: 0.0,
            boundary_point: Vector2::zeros(),
            total_dv: Some(v),
            status: Status::Optimal,
        })
        .collect();
    cyclic_minima(&points)
}
