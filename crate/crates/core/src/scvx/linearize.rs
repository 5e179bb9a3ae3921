use nalgebra::{DMatrix, Matrix2, Matrix2x6, Matrix6, RowVector6, Vector2};

use super::{constraint_threshold, FinalMetrics, ManeuverPlan, ScvxConfig, ScvxError, TimeGrid, VERIFY_TOLERANCE};
use crate::conjunction::{
    bplane_encounter, combined_bplane_covariance_at, encounter_geometry, encounter_sensitivities, mahalanobis_sq,
    BPlaneEncounter, ConjunctionEvent, EncounterGeometry,
};
use crate::dynamics::{propagate, propagate_with_stm, GravityModel, SegmentMap, StateVector};

/// First-order model of the encounter about a maneuvered reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearization {
    /// One map per impulse segment, then the coast to closest approach.
    pub segments: Vec<SegmentMap>,
    /// 6 × 4N map from [Δv (km/s); σ] to the primary state deviation at the
    /// nominal closest-approach epoch. The σ columns are zero.
    pub a_big: DMatrix<f64>,
    pub b_row: RowVector6<f64>,
    pub c_mat: Matrix2x6<f64>,
    pub dr_b_ref: Vector2<f64>,
    /// Closest approach of the reference (s).
    pub tca_ref: f64,
    /// Combined covariance projected on the reference encounter plane.
    pub c_b_ref: Matrix2<f64>,
    pub encounter: BPlaneEncounter,
}

fn fly(
    event: &ConjunctionEvent,
    grid: &TimeGrid,
    plan: &ManeuverPlan,
    model: &GravityModel,
    config: &ScvxConfig,
    mut segment: impl FnMut(&StateVector, f64) -> Result<StateVector, ScvxError>,
) -> Result<StateVector, ScvxError> {
    if plan.impulses.len() != grid.n {
        return Err(ScvxError::DimensionMismatch(format!(
            "plan has {} impulses for {} nodes",
            plan.impulses.len(),
            grid.n
        )));
    }
    let mut x = propagate(&event.primary, grid.t0(), model, &config.integrator)?;
    for (i, dv) in plan.impulses.iter().enumerate() {
        x.velocity += dv;
        x = segment(&x, grid.node_times[i + 1])?;
    }
    segment(&x, grid.t_ca)
}

/// Linearizes the encounter about the trajectory flown with `plan`.
pub fn linearize_reference(
    event: &ConjunctionEvent,
    grid: &TimeGrid,
    plan: &ManeuverPlan,
    model: &GravityModel,
    config: &ScvxConfig,
) -> Result<Linearization, ScvxError> {
    let mut segments = Vec::with_capacity(grid.n + 1);
    let at_tca = fly(event, grid, plan, model, config, |x, t| {
        let (end, map) = propagate_with_stm(x, t, model, &config.integrator)?;
        segments.push(map);
        Ok(end)
    })?;

    let n = grid.n;
    let mut a_big = DMatrix::zeros(6, 4 * n);
    let mut m: Matrix6<f64> = segments[n].stm;
    for i in (0..n).rev() {
        m *= segments[i].stm;
        a_big.view_mut((0, 3 * i), (6, 3)).copy_from(&m.fixed_view::<6, 3>(0, 3));
    }

    let encounter = bplane_encounter(&at_tca, &event.secondary, model, &config.integrator, &config.tca)?;
    let sens = encounter_sensitivities(&at_tca, &event.secondary, model, &config.integrator)?;
    let c_b_ref = combined_bplane_covariance_at(
        &encounter.tca.primary,
        &encounter.tca.secondary,
        &event.cov_primary_rtn,
        &event.cov_secondary_rtn,
        &encounter.frame,
        config.covariance_frame,
    )?;
    Ok(Linearization {
        segments,
        a_big,
        b_row: sens.b_row,
        c_mat: sens.c_mat,
        dr_b_ref: encounter.dr_b,
        tca_ref: encounter.tca.t_ca,
        c_b_ref,
        encounter,
    })
}

/// Encounter reached by flying a plan on the full dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub encounter: BPlaneEncounter,
    pub geometry: EncounterGeometry,
    /// Squared distance in the constraint's own metric.
    pub constraint_d2: f64,
    /// Threshold re-derived at this encounter.
    pub d2_bar: f64,
    pub tca_shift: f64,
}

/// Propagates the maneuvered primary, refines closest approach and
/// evaluates the encounter metrics with the covariance carried along.
pub fn evaluate_plan(
    event: &ConjunctionEvent,
    grid: &TimeGrid,
    plan: &ManeuverPlan,
    model: &GravityModel,
    config: &ScvxConfig,
) -> Result<PlanOutcome, ScvxError> {
    let at_tca = fly(event, grid, plan, model, config, |x, t| {
        Ok(propagate(x, t, model, &config.integrator)?)
    })?;
    let encounter = bplane_encounter(&at_tca, &event.secondary, model, &config.integrator, &config.tca)?;
    let c_b = combined_bplane_covariance_at(
        &encounter.tca.primary,
        &encounter.tca.secondary,
        &event.cov_primary_rtn,
        &event.cov_secondary_rtn,
        &encounter.frame,
        config.covariance_frame,
    )?;
    let geometry = encounter_geometry(&encounter.dr_b, &c_b, event.radius)?;
    let (constraint_d2, d2_bar) = match constraint_threshold(&config.constraint, &encounter.dr_b, &c_b, event.radius)? {
        Some(t) => (mahalanobis_sq(&encounter.dr_b, &t.c_eff)?, t.d2_bar),
        None => (geometry.d2, 0.0),
    };
    Ok(PlanOutcome {
        tca_shift: encounter.tca.t_ca - event.primary.epoch,
        encounter,
        geometry,
        constraint_d2,
        d2_bar,
    })
}

impl PlanOutcome {
    pub(crate) fn metrics(&self, predicted_d2: f64, predicted_tca_shift: f64) -> FinalMetrics {
        FinalMetrics {
            d2: self.geometry.d2,
            pc_approx: self.geometry.pc_approx,
            pc_max: self.geometry.pc_max,
            miss_distance: self.geometry.dr_b.norm(),
            tca_shift: self.tca_shift,
            d2_bar: self.d2_bar,
            constraint_d2: self.constraint_d2,
            predicted_d2,
            predicted_tca_shift,
            verified: self.constraint_d2 >= (1.0 - VERIFY_TOLERANCE) * self.d2_bar,
        }
    }
}
