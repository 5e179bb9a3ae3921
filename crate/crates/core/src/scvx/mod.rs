//! Successive convexification of the multiple-impulse avoidance problem.
//!
//! Each major iteration linearizes the orbital dynamics about the current
//! maneuvered trajectory. Each minor iteration projects the predicted
//! encounter onto the keep-out ellipse, replaces the ellipse by its tangent
//! half-plane and solves a second-order cone program in which impulse
//! magnitudes are slack variables.

mod ellipse;
mod grid;
mod linearize;
mod subproblem;
mod sweep;

pub use ellipse::project_to_ellipse;
pub use grid::{build_grid, TimeGrid};
pub use linearize::{evaluate_plan, linearize_reference, Linearization, PlanOutcome};
pub use subproblem::{assemble_subproblem, Convexified};
pub use sweep::{boundary_sweep, boundary_sweep_about, SweepPoint, SweepResult};

use nalgebra::{DVector, Matrix2, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conjunction::{
    combined_bplane_covariance, build_bplane_frame, mahalanobis_sq, threshold_to_mahalanobis, ConjunctionError,
    ConjunctionEvent, Constraint, CovarianceFrame, TcaSettings,
};
use crate::dynamics::{osculating_period, DynamicsError, GravityModel, IntegratorSettings};
use crate::socp::{self, solve, Status};

/// Impulses with a magnitude above this (km/s) count as active.
pub const ACTIVE_THRESHOLD: f64 = 1e-9;

/// Relative slack on d2 allowed when re-checking a plan on the true dynamics.
pub const VERIFY_TOLERANCE: f64 = 0.02;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScvxError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("lead time {lead_time} s holds no full {delta_t} s step")]
    GridTooShort { lead_time: f64, delta_t: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{0} did not converge")]
    NoConvergence(&'static str),
    #[error("cone solver stopped with status {0:?}")]
    Solver(Status),
    #[error(transparent)]
    Conjunction(#[from] ConjunctionError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScvxConfig {
    /// Grid spacing (s).
    pub delta_t: f64,
    /// Largest number of impulse nodes.
    pub n_max: usize,
    /// Time from the start of the maneuver window to closest approach (s).
    pub lead_time: f64,
    /// Largest magnitude of a single impulse (km/s).
    pub dv_max: f64,
    pub constraint: Constraint,
    /// Major-loop stop on the max-norm change of the decision vector (km/s).
    pub tol_major: f64,
    /// Minor-loop stop on the change of the predicted b-plane point (km).
    pub tol_minor: f64,
    pub max_major: usize,
    pub max_minor: usize,
    /// Largest b-plane displacement per subproblem (km).
    pub bplane_deviation_cap: f64,
    /// Run from both ±dr_b* and keep the cheaper converged branch.
    pub dual_start: bool,
    pub covariance_frame: CovarianceFrame,
    pub integrator: IntegratorSettings,
    pub tca: TcaSettings,
    pub solver: socp::Settings,
}

impl Default for ScvxConfig {
    fn default() -> Self {
        Self {
            delta_t: 60.0,
            n_max: 200,
            lead_time: 3600.0,
            dv_max: 6e-6,
            constraint: Constraint::PcMax(1e-4),
            tol_major: 1e-6,
            tol_minor: 1e-3,
            max_major: 15,
            max_minor: 30,
            bplane_deviation_cap: 20.0,
            dual_start: true,
            covariance_frame: CovarianceFrame::PerObject,
            integrator: IntegratorSettings::default(),
            tca: TcaSettings::default(),
            solver: socp::Settings::default(),
        }
    }
}

impl ScvxConfig {
    pub fn validate(&self) -> Result<(), ScvxError> {
        let positive = [
            ("delta_t", self.delta_t),
            ("dv_max", self.dv_max),
            ("tol_major", self.tol_major),
            ("tol_minor", self.tol_minor),
            ("bplane_deviation_cap", self.bplane_deviation_cap),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ScvxError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lead_time > self.delta_t && self.lead_time.is_finite()) {
            return Err(ScvxError::InvalidConfig(format!(
                "lead_time {} s must exceed delta_t {} s",
                self.lead_time, self.delta_t
            )));
        }
        if self.n_max == 0 || self.max_major == 0 || self.max_minor == 0 {
            return Err(ScvxError::InvalidConfig("iteration and node limits must be at least 1".into()));
        }
        Ok(())
    }

    /// Places the window start `lead_orbits` periods before closest approach
    /// and limits the impulse nodes to `window_orbits` periods.
    pub fn with_orbit_window(mut self, period: f64, lead_orbits: f64, window_orbits: f64) -> Self {
        self.lead_time = lead_orbits * period;
        let window_nodes = (window_orbits * period / self.delta_t).floor().max(1.0) as usize;
        self.n_max = self.n_max.min(window_nodes);
        self
    }
}

/// Osculating Keplerian period of the primary at closest approach (s).
pub fn orbital_period(event: &ConjunctionEvent, model: &GravityModel) -> Result<f64, ScvxError> {
    osculating_period(&event.primary, model.mu)
        .ok_or_else(|| ScvxError::InvalidConfig("primary orbit is not bound".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManeuverPlan {
    /// Epoch of each impulse (s).
    pub node_times: Vec<f64>,
    /// Impulse vectors in ECI (km/s).
    pub impulses: Vec<Vector3<f64>>,
    /// Magnitude slacks (km/s).
    pub magnitudes: Vec<f64>,
    pub total_dv: f64,
    pub active_count: usize,
}

impl ManeuverPlan {
    pub fn zeros(grid: &TimeGrid) -> Self {
        let n = grid.n;
        Self {
            node_times: grid.node_times[..n].to_vec(),
            impulses: vec![Vector3::zeros(); n],
            magnitudes: vec![0.0; n],
            total_dv: 0.0,
            active_count: 0,
        }
    }

    /// Builds a plan from a subproblem solution [Δv (m/s); σ (m/s)].
    pub fn from_decision(grid: &TimeGrid, x: &DVector<f64>) -> Self {
        let n = grid.n;
        let impulses: Vec<Vector3<f64>> = (0..n)
            .map(|i| Vector3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2]) * 1e-3)
            .collect();
        let magnitudes: Vec<f64> = (0..n).map(|i| x[3 * n + i].max(0.0) * 1e-3).collect();
        let total_dv = magnitudes.iter().sum();
        let active_count = magnitudes.iter().filter(|&&m| m > ACTIVE_THRESHOLD).count();
        Self {
            node_times: grid.node_times[..n].to_vec(),
            impulses,
            magnitudes,
            total_dv,
            active_count,
        }
    }

    /// Decision vector [Δv (m/s); σ (m/s)].
    pub fn decision(&self) -> DVector<f64> {
        let n = self.impulses.len();
        let mut x = DVector::zeros(4 * n);
        for (i, dv) in self.impulses.iter().enumerate() {
            x.fixed_rows_mut::<3>(3 * i).copy_from(&(dv * 1e3));
            x[3 * n + i] = self.magnitudes[i] * 1e3;
        }
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScvxStatus {
    Converged,
    Infeasible,
    MaxIterations,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    PlusStart,
    MinusStart,
}

impl Branch {
    fn sign(self) -> f64 {
        match self {
            Branch::PlusStart => 1.0,
            Branch::MinusStart => -1.0,
        }
    }
}

/// State of the linear model after one minor iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub major: usize,
    pub minor: usize,
    /// Predicted b-plane position (km).
    pub dr_b: Vector2<f64>,
    /// Projection point the half-plane was built on (km).
    pub z_point: Vector2<f64>,
    /// km/s
    pub total_dv: f64,
    /// Predicted shift of closest approach from its nominal epoch (s).
    pub tca_shift: f64,
}

/// Encounter of the maneuvered trajectory evaluated on the full dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub d2: f64,
    pub pc_approx: f64,
    pub pc_max: Option<f64>,
    /// km
    pub miss_distance: f64,
    /// s
    pub tca_shift: f64,
    /// Threshold re-derived at the maneuvered encounter.
    pub d2_bar: f64,
    /// Squared distance in the metric the constraint is stated in.
    pub constraint_d2: f64,
    /// The same quantity as predicted by the last convex subproblem.
    pub predicted_d2: f64,
    /// Predicted closest-approach shift of the last subproblem (s).
    pub predicted_tca_shift: f64,
    /// constraint_d2 ≥ (1 − 2%) d2_bar
    pub verified: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchSummary {
    pub branch: Branch,
    pub status: ScvxStatus,
    /// km/s
    pub total_dv: f64,
    pub major_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScvxReport {
    pub status: ScvxStatus,
    pub plan: ManeuverPlan,
    pub grid: TimeGrid,
    pub major_iterations: usize,
    pub minor_iterations_per_major: Vec<usize>,
    pub trace: Vec<TraceEntry>,
    #[serde(rename = "final")]
    pub final_metrics: FinalMetrics,
    pub branch: Branch,
    /// Outcome of the start that was not selected, when both were run.
    pub other_branch: Option<BranchSummary>,
}

impl ScvxReport {
    fn summary(&self) -> BranchSummary {
        BranchSummary {
            branch: self.branch,
            status: self.status,
            total_dv: self.plan.total_dv,
            major_iterations: self.major_iterations,
        }
    }
}

/// Mahalanobis threshold for the event's constraint evaluated at the given
/// encounter. `None` means the constraint cannot be violated anywhere on the
/// b-plane (a probability above the peak density value).
fn constraint_threshold(
    constraint: &Constraint,
    dr_b: &Vector2<f64>,
    c_b: &Matrix2<f64>,
    radius: f64,
) -> Result<Option<crate::conjunction::Threshold>, ScvxError> {
    if let Constraint::PcApprox(p) = *constraint {
        let peak = radius * radius / (2.0 * c_b.determinant().sqrt());
        if p > 0.0 && p < 1.0 && p >= peak {
            return Ok(None);
        }
    }
    Ok(Some(threshold_to_mahalanobis(constraint, dr_b, c_b, radius)?))
}

/// Plans a fuel-optimal avoidance maneuver for the event.
pub fn solve_cam(event: &ConjunctionEvent, config: &ScvxConfig, model: &GravityModel) -> Result<ScvxReport, ScvxError> {
    config.validate()?;
    event.validate()?;
    let grid = build_grid(event, config)?;
    let zero = ManeuverPlan::zeros(&grid);
    let nominal = linearize_reference(event, &grid, &zero, model, config)?;

    let frame = build_bplane_frame(&event.primary.velocity, &event.secondary.velocity)?;
    let c_b = combined_bplane_covariance(event, &frame, config.covariance_frame)?;
    let safe = match constraint_threshold(&config.constraint, &nominal.dr_b_ref, &c_b, event.radius)? {
        None => true,
        Some(t) => t.already_safe,
    };
    if safe {
        let outcome = evaluate_plan(event, &grid, &zero, model, config)?;
        let final_metrics = outcome.metrics(outcome.constraint_d2, 0.0);
        return Ok(ScvxReport {
            status: ScvxStatus::Converged,
            plan: zero,
            grid,
            major_iterations: 0,
            minor_iterations_per_major: Vec::new(),
            trace: Vec::new(),
            final_metrics,
            branch: Branch::PlusStart,
            other_branch: None,
        });
    }

    if !config.dual_start {
        return run_branch(event, config, model, &grid, &nominal, Branch::PlusStart);
    }
    let (plus, minus) = rayon::join(
        || run_branch(event, config, model, &grid, &nominal, Branch::PlusStart),
        || run_branch(event, config, model, &grid, &nominal, Branch::MinusStart),
    );
    select_branch(plus, minus)
}

fn select_branch(
    plus: Result<ScvxReport, ScvxError>,
    minus: Result<ScvxReport, ScvxError>,
) -> Result<ScvxReport, ScvxError> {
    let rank = |r: &ScvxReport| match r.status {
        ScvxStatus::Converged => 0,
        ScvxStatus::MaxIterations => 1,
        ScvxStatus::Infeasible => 2,
    };
    match (plus, minus) {
        (Ok(mut p), Ok(mut m)) => {
            let take_minus = (rank(&m), m.plan.total_dv) < (rank(&p), p.plan.total_dv);
            if take_minus {
                m.other_branch = Some(p.summary());
                Ok(m)
            } else {
                p.other_branch = Some(m.summary());
                Ok(p)
            }
        }
        (Ok(p), Err(_)) => Ok(p),
        (Err(_), Ok(m)) => Ok(m),
        (Err(e), Err(_)) => Err(e),
    }
}

fn run_branch(
    event: &ConjunctionEvent,
    config: &ScvxConfig,
    model: &GravityModel,
    grid: &TimeGrid,
    nominal: &Linearization,
    branch: Branch,
) -> Result<ScvxReport, ScvxError> {
    let n = grid.n;
    let mut plan = ManeuverPlan::zeros(grid);
    let mut x_prev = DVector::<f64>::zeros(4 * n);
    let mut trace = Vec::new();
    let mut minors = Vec::new();
    let mut status = ScvxStatus::MaxIterations;
    let mut predicted = (nominal.dr_b_ref, nominal.tca_ref);
    let mut last_metric = nominal.c_b_ref;

    for major in 1..=config.max_major {
        let owned;
        let lin = if major == 1 {
            nominal
        } else {
            owned = linearize_reference(event, grid, &plan, model, config)?;
            &owned
        };
        let threshold = constraint_threshold(&config.constraint, &lin.dr_b_ref, &lin.c_b_ref, event.radius)?
            .ok_or_else(|| ScvxError::InvalidConfig("constraint cannot be active".into()))?;
        last_metric = threshold.c_eff;
        let conv = Convexified::new(lin, &x_prev)?;
        let mut dr_k = if major == 1 { lin.dr_b_ref * branch.sign() } else { lin.dr_b_ref };
        let mut x = x_prev.clone();
        let mut count = 0;
        for minor in 1..=config.max_minor {
            count = minor;
            let z = project_to_ellipse(&dr_k, &threshold.c_eff, threshold.d2_bar)?;
            let program = conv.half_plane_program(&z, &threshold.c_eff, config)?;
            let sol = solve(&program, &config.solver);
            match sol.status {
                Status::PrimalInfeasible => {
                    minors.push(count);
                    return infeasible_report(event, config, model, grid, branch, major, minors, trace);
                }
                _ if !sol.is_usable(1e-6) => return Err(ScvxError::Solver(sol.status)),
                _ => {}
            }
            x = sol.x;
            let (dr_new, tca_new) = conv.predict(&x);
            predicted = (dr_new, tca_new);
            trace.push(TraceEntry {
                major,
                minor,
                dr_b: dr_new,
                z_point: z,
                total_dv: x.rows(3 * n, n).iter().map(|v| v.max(0.0)).sum::<f64>() * 1e-3,
                tca_shift: tca_new - event.primary.epoch,
            });
            let moved = (dr_new - dr_k).norm();
            dr_k = dr_new;
            if moved <= config.tol_minor {
                break;
            }
        }
        minors.push(count);
        let change = (&x - &x_prev).amax() * 1e-3;
        x_prev = x;
        plan = ManeuverPlan::from_decision(grid, &x_prev);
        if change <= config.tol_major {
            status = ScvxStatus::Converged;
            break;
        }
    }

    let outcome = evaluate_plan(event, grid, &plan, model, config)?;
    let predicted_d2 = mahalanobis_sq(&predicted.0, &last_metric)?;
    let final_metrics = outcome.metrics(predicted_d2, predicted.1 - event.primary.epoch);
    Ok(ScvxReport {
        status,
        plan,
        grid: grid.clone(),
        major_iterations: minors.len(),
        minor_iterations_per_major: minors,
        trace,
        final_metrics,
        branch,
        other_branch: None,
    })
}

#[allow(clippy::too_many_arguments)]
fn infeasible_report(
    event: &ConjunctionEvent,
    config: &ScvxConfig,
    model: &GravityModel,
    grid: &TimeGrid,
    branch: Branch,
    major: usize,
    minors: Vec<usize>,
    trace: Vec<TraceEntry>,
) -> Result<ScvxReport, ScvxError> {
    let plan = ManeuverPlan::zeros(grid);
    let outcome = evaluate_plan(event, grid, &plan, model, config)?;
    let final_metrics = outcome.metrics(outcome.constraint_d2, 0.0);
    Ok(ScvxReport {
        status: ScvxStatus::Infeasible,
        plan,
        grid: grid.clone(),
        major_iterations: major,
        minor_iterations_per_major: minors,
        trace,
        final_metrics,
        branch,
        other_branch: None,
    })
}

#[cfg(test)]
mod tests;
