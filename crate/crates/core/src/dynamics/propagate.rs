use nalgebra::{Matrix6, SVector, Vector6};
use ode_solvers::dop_shared::IntegrationError;
use ode_solvers::{Dop853, OutputType, System};
use serde::{Deserialize, Serialize};

use super::{acceleration, acceleration_jacobian, DynamicsError, GravityModel, StateVector};

/// Tolerances for the adaptive Dormand–Prince 8(5,3) integrator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorSettings {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_steps: u32,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        Self {
            rel_tol: 1e-13,
            abs_tol: 1e-12,
            max_steps: 200_000,
        }
    }
}

/// First-order map of deviations across one time segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentMap {
    /// Maps (δr, δv) at `t_start` to (δr, δv) at `t_end`.
    pub stm: Matrix6<f64>,
    pub t_start: f64,
    pub t_end: f64,
    pub reference_end_state: StateVector,
}

type State6 = SVector<f64, 6>;
type State42 = SVector<f64, 42>;

struct Ballistic<'a> {
    model: &'a GravityModel,
}

impl System<f64, State6> for Ballistic<'_> {
    fn system(&self, _t: f64, y: &State6, dy: &mut State6) {
        let r = y.fixed_rows::<3>(0).into_owned();
        let a = acceleration(&r, self.model);
        dy[0] = y[3];
        dy[1] = y[4];
        dy[2] = y[5];
        dy[3] = a.x;
        dy[4] = a.y;
        dy[5] = a.z;
    }
}

/// State plus the column-major 6×6 transition matrix.
struct Variational<'a> {
    model: &'a GravityModel,
}

impl System<f64, State42> for Variational<'_> {
    fn system(&self, _t: f64, y: &State42, dy: &mut State42) {
        let r = y.fixed_rows::<3>(0).into_owned();
        let a = acceleration(&r, self.model);
        let jac = acceleration_jacobian(&r, self.model);
        dy[0] = y[3];
        dy[1] = y[4];
        dy[2] = y[5];
        dy[3] = a.x;
        dy[4] = a.y;
        dy[5] = a.z;
        // d(Phi)/dt = [[0, I], [J, 0]] * Phi, column by column.
        for col in 0..6 {
            let base = 6 + 6 * col;
            for i in 0..3 {
                dy[base + i] = y[base + 3 + i];
            }
            for i in 0..3 {
                dy[base + 3 + i] = jac[(i, 0)] * y[base]
                    + jac[(i, 1)] * y[base + 1]
                    + jac[(i, 2)] * y[base + 2];
            }
        }
    }
}

fn map_error(err: IntegrationError) -> DynamicsError {
    match err {
        IntegrationError::StepSizeUnderflow { x } => DynamicsError::StepSizeUnderflow { t: x },
        IntegrationError::MaxNumStepReached { x, .. } => DynamicsError::MaxSteps { t: x },
        IntegrationError::StiffnessDetected { x } => DynamicsError::StepSizeUnderflow { t: x },
    }
}

fn check_inputs(state: &StateVector, t_target: f64, model: &GravityModel) -> Result<(), DynamicsError> {
    if !t_target.is_finite() {
        return Err(DynamicsError::NonFinite("target epoch"));
    }
    if !model.is_valid() {
        return Err(DynamicsError::NonFinite("gravity model"));
    }
    if !state.is_finite() {
        return Err(DynamicsError::NonFinite("initial state"));
    }
    if state.position.norm() == 0.0 {
        return Err(DynamicsError::NonFinite("position magnitude"));
    }
    Ok(())
}

/// Integrates the state to `t_target`, forwards or backwards in time.
pub fn propagate(
    state: &StateVector,
    t_target: f64,
    model: &GravityModel,
    settings: &IntegratorSettings,
) -> Result<StateVector, DynamicsError> {
    check_inputs(state, t_target, model)?;
    if t_target == state.epoch {
        return Ok(*state);
    }
    let y0 = state.to_vector6();
    let mut solver = Dop853::new(
        Ballistic { model },
        state.epoch,
        t_target,
        t_target - state.epoch,
        y0,
        settings.rel_tol,
        settings.abs_tol,
    );
    solver.set_output(OutputType::Sparse);
    solver.integrate().map_err(map_error)?;
    let y = *solver.y_out().last().ok_or(DynamicsError::NonFinite("integrator output"))?;
    let out = StateVector::from_vector6(&Vector6::from_column_slice(y.as_slice()), t_target);
    if !out.is_finite() {
        return Err(DynamicsError::NonFinite("propagated state"));
    }
    Ok(out)
}

/// Integrates the state together with its variational equations.
pub fn propagate_with_stm(
    state: &StateVector,
    t_target: f64,
    model: &GravityModel,
    settings: &IntegratorSettings,
) -> Result<(StateVector, SegmentMap), DynamicsError> {
    check_inputs(state, t_target, model)?;
    if t_target == state.epoch {
        return Ok((
            *state,
            SegmentMap {
                stm: Matrix6::identity(),
                t_start: state.epoch,
                t_end: t_target,
                reference_end_state: *state,
            },
        ));
    }
    let mut y0 = State42::zeros();
    y0.fixed_rows_mut::<6>(0).copy_from(&state.to_vector6());
    for i in 0..6 {
        y0[6 + 7 * i] = 1.0;
    }
    let mut solver = Dop853::new(
        Variational { model },
        state.epoch,
        t_target,
        t_target - state.epoch,
        y0,
        settings.rel_tol,
        settings.abs_tol,
    );
    solver.set_output(OutputType::Sparse);
    solver.integrate().map_err(map_error)?;
    let y = *solver.y_out().last().ok_or(DynamicsError::NonFinite("integrator output"))?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(DynamicsError::NonFinite("variational state"));
    }
    let end = StateVector::from_vector6(&Vector6::from_column_slice(&y.as_slice()[..6]), t_target);
    let stm = Matrix6::from_column_slice(&y.as_slice()[6..42]);
    Ok((
        end,
        SegmentMap {
            stm,
            t_start: state.epoch,
            t_end: t_target,
            reference_end_state: end,
        },
    ))
}

/// Keplerian period of the osculating orbit (s), or `None` for open orbits.
pub fn osculating_period(state: &StateVector, mu: f64) -> Option<f64> {
    let r = state.position.norm();
    let v2 = state.velocity.norm_squared();
    let inv_a = 2.0 / r - v2 / mu;
    if inv_a <= 0.0 {
        return None;
    }
    let a = 1.0 / inv_a;
    Some(2.0 * std::f64::consts::PI * (a * a * a / mu).sqrt())
}
