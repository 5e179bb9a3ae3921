use std::time::Instant;

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EventRecord, SCHEMA_VERSION};
use crate::conjunction::{rtn_to_eci, threshold_to_mahalanobis, ConjunctionEvent, Constraint};
use crate::dynamics::{propagate, GravityModel};
use crate::scvx::{
    evaluate_plan, orbital_period, solve_cam, ManeuverPlan, ScvxConfig, ScvxError, ScvxReport, ScvxStatus,
};

/// Run parameters shared by every event of a batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    /// Template configuration; lead time and node cap are set per event.
    pub config: ScvxConfig,
    /// Window start before closest approach, in orbital periods.
    pub lead_orbits: f64,
    /// Window length in orbital periods.
    pub window_orbits: f64,
    pub model: GravityModel,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            config: ScvxConfig::default(),
            lead_orbits: 8.0,
            window_orbits: 2.0,
            model: GravityModel::earth(),
        }
    }
}

impl RunSettings {
    /// Configuration with the orbit window converted using the event's period.
    pub fn config_for(&self, event: &ConjunctionEvent) -> Result<ScvxConfig, ScvxError> {
        let period = orbital_period(event, &self.model)?;
        Ok(self.config.with_orbit_window(period, self.lead_orbits, self.window_orbits))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryStatus {
    Converged,
    Infeasible,
    MaxIterations,
    /// The run stopped with an error.
    Failed,
}

impl From<ScvxStatus> for EntryStatus {
    fn from(s: ScvxStatus) -> Self {
        match s {
            ScvxStatus::Converged => EntryStatus::Converged,
            ScvxStatus::Infeasible => EntryStatus::Infeasible,
            ScvxStatus::MaxIterations => EntryStatus::MaxIterations,
        }
    }
}

/// Encounter metrics of a trajectory flown on the full dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Achieved {
    pub d2: f64,
    pub pc_approx: f64,
    pub pc_max: Option<f64>,
    pub miss_distance_km: f64,
    pub tca_shift_s: f64,
    pub constraint_d2: f64,
    pub d2_bar: f64,
    pub verified: bool,
}

/// One impulse of a schedule; velocities in m/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpulseRow {
    pub node: usize,
    /// Time to nominal closest approach (s).
    pub time_to_ca: f64,
    pub dv_rtn: [f64; 3],
    pub dv_eci: [f64; 3],
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub id: String,
    pub status: EntryStatus,
    pub error: Option<String>,
    pub total_dv_mps: f64,
    pub active_impulses: usize,
    pub major_iterations: usize,
    pub minor_iterations: Vec<usize>,
    pub nominal: Option<Achieved>,
    pub achieved: Option<Achieved>,
    pub schedule: Vec<ImpulseRow>,
    /// Keep-out ellipse at the nominal encounter, (ξ, ζ) in km.
    pub contour: Vec<[f64; 2]>,
    pub report: Option<ScvxReport>,
    pub solve_seconds: f64,
}

impl RunEntry {
    fn failed(id: &str, error: String, solve_seconds: f64) -> Self {
        Self {
            id: id.to_string(),
            status: EntryStatus::Failed,
            error: Some(error),
            total_dv_mps: 0.0,
            active_impulses: 0,
            major_iterations: 0,
            minor_iterations: Vec::new(),
            nominal: None,
            achieved: None,
            schedule: Vec::new(),
            contour: Vec::new(),
            report: None,
            solve_seconds,
        }
    }
}

const CONTOUR_POINTS: usize = 181;

fn achieved(event: &ConjunctionEvent, plan: &ManeuverPlan, report: &ScvxReport, config: &ScvxConfig, model: &GravityModel) -> Result<Achieved, ScvxError> {
    let o = evaluate_plan(event, &report.grid, plan, model, config)?;
    Ok(Achieved {
        d2: o.geometry.d2,
        pc_approx: o.geometry.pc_approx,
        pc_max: o.geometry.pc_max,
        miss_distance_km: o.geometry.dr_b.norm(),
        tca_shift_s: o.tca_shift,
        constraint_d2: o.constraint_d2,
        d2_bar: o.d2_bar,
        verified: o.constraint_d2 >= (1.0 - crate::scvx::VERIFY_TOLERANCE) * o.d2_bar,
    })
}

fn schedule(event: &ConjunctionEvent, report: &ScvxReport, config: &ScvxConfig, model: &GravityModel) -> Result<Vec<ImpulseRow>, ScvxError> {
    let grid = &report.grid;
    let plan = &report.plan;
    let mut x = propagate(&event.primary, grid.t0(), model, &config.integrator)?;
    let mut rows = Vec::with_capacity(grid.n);
    for (i, dv) in plan.impulses.iter().enumerate() {
        let rot = rtn_to_eci(&x.position, &x.velocity)?;
        let rtn = rot.transpose() * dv * 1e3;
        let eci = dv * 1e3;
        rows.push(ImpulseRow {
            node: i,
            time_to_ca: grid.t_ca - grid.node_times[i],
            dv_rtn: [rtn.x, rtn.y, rtn.z],
            dv_eci: [eci.x, eci.y, eci.z],
            magnitude: plan.magnitudes[i] * 1e3,
        });
        x.velocity += dv;
        x = propagate(&x, grid.node_times[i + 1], model, &config.integrator)?;
    }
    Ok(rows)
}

fn contour(event: &ConjunctionEvent, config: &ScvxConfig) -> Vec<[f64; 2]> {
    let Ok(g) = event.geometry(config.covariance_frame) else {
        return Vec::new();
    };
    let Ok(t) = threshold_to_mahalanobis(&config.constraint, &g.dr_b, &g.c_b, event.radius) else {
        return Vec::new();
    };
    let Some(chol) = t.c_eff.cholesky() else {
        return Vec::new();
    };
    let l = chol.l() * t.d2_bar.max(0.0).sqrt();
    (0..CONTOUR_POINTS)
        .map(|i| {
            let th = std::f64::consts::TAU * i as f64 / (CONTOUR_POINTS - 1) as f64;
            let p = l * Vector2::new(th.cos(), th.sin());
            [p.x, p.y]
        })
        .collect()
}

/// Plans a maneuver for one event and re-verifies it on the full dynamics.
pub fn run_single(record: &EventRecord, settings: &RunSettings) -> RunEntry {
    let start = Instant::now();
    let attempt = || -> Result<RunEntry, ScvxError> {
        let config = settings.config_for(&record.event)?;
        let report = solve_cam(&record.event, &config, &settings.model)?;
        let zero = ManeuverPlan::zeros(&report.grid);
        let nominal = achieved(&record.event, &zero, &report, &config, &settings.model)?;
        let achieved = achieved(&record.event, &report.plan, &report, &config, &settings.model)?;
        Ok(RunEntry {
            id: record.id.clone(),
            status: report.status.into(),
            error: None,
            total_dv_mps: report.plan.total_dv * 1e3,
            active_impulses: report.plan.active_count,
            major_iterations: report.major_iterations,
            minor_iterations: report.minor_iterations_per_major.clone(),
            nominal: Some(nominal),
            achieved: Some(achieved),
            schedule: schedule(&record.event, &report, &config, &settings.model)?,
            contour: contour(&record.event, &config),
            report: Some(report),
            solve_seconds: 0.0,
        })
    };
    match attempt() {
        Ok(mut e) => {
            e.solve_seconds = start.elapsed().as_secs_f64();
            e
        }
        Err(err) => RunEntry::failed(&record.id, err.to_string(), start.elapsed().as_secs_f64()),
    }
}

/// Order statistics of a sample.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub min: f64,
    pub p5: f64,
    pub median: f64,
    pub p95: f64,
    pub max: f64,
    pub mean: f64,
}

/// Linear-interpolation percentile of sorted data, q in [0, 100].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = (q / 100.0).clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let mut v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self::default();
        }
        v.sort_by(f64::total_cmp);
        Self {
            count: v.len(),
            min: v[0],
            p5: percentile(&v, 5.0),
            median: percentile(&v, 50.0),
            p95: percentile(&v, 95.0),
            max: v[v.len() - 1],
            mean: v.iter().sum::<f64>() / v.len() as f64,
        }
    }
}

/// Dataset statistics over the converged entries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub events: usize,
    pub converged: usize,
    pub infeasible: usize,
    pub max_iterations: usize,
    pub failed: usize,
    pub total_dv_mps: Summary,
    pub active_impulses: Summary,
    pub major_iterations: Summary,
    pub minor_iterations: Summary,
}

impl Aggregates {
    pub fn of(entries: &[RunEntry]) -> Self {
        let count = |s: EntryStatus| entries.iter().filter(|e| e.status == s).count();
        let ok: Vec<&RunEntry> = entries.iter().filter(|e| e.status == EntryStatus::Converged).collect();
        Self {
            events: entries.len(),
            converged: ok.len(),
            infeasible: count(EntryStatus::Infeasible),
            max_iterations: count(EntryStatus::MaxIterations),
            failed: count(EntryStatus::Failed),
            total_dv_mps: Summary::of(ok.iter().map(|e| e.total_dv_mps)),
            active_impulses: Summary::of(ok.iter().map(|e| e.active_impulses as f64)),
            major_iterations: Summary::of(ok.iter().map(|e| e.major_iterations as f64)),
            minor_iterations: Summary::of(ok.iter().flat_map(|e| e.minor_iterations.iter().map(|&m| m as f64))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub schema_version: u32,
    pub settings: RunSettings,
    pub entries: Vec<RunEntry>,
    pub aggregates: Aggregates,
}

/// Runs every record on a pool of `parallelism` threads. Entries keep the
/// input order, so the aggregates do not depend on scheduling.
pub fn run_batch(records: &[EventRecord], settings: &RunSettings, parallelism: usize) -> BatchReport {
    let work = || records.par_iter().map(|r| run_single(r, settings)).collect::<Vec<_>>();
    let entries = match rayon::ThreadPoolBuilder::new().num_threads(parallelism.max(1)).build() {
        Ok(pool) => pool.install(work),
        Err(_) => records.iter().map(|r| run_single(r, settings)).collect(),
    };
    BatchReport {
        schema_version: SCHEMA_VERSION,
        settings: *settings,
        aggregates: Aggregates::of(&entries),
        entries,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    /// Constraint value of the configured kind.
    Threshold,
    /// Window start in orbital periods before closest approach.
    LeadTime,
    /// Per-impulse cap (m/s).
    DvMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub status: EntryStatus,
    pub total_dv_mps: f64,
    pub active_impulses: usize,
    pub major_iterations: usize,
    pub verified: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema_version: u32,
    pub id: String,
    pub kind: SweepKind,
    pub settings: RunSettings,
    pub rows: Vec<SweepRow>,
}

/// Solves the event once per value of the swept parameter.
pub fn run_sweep(record: &EventRecord, settings: &RunSettings, kind: SweepKind, values: &[f64]) -> SweepReport {
    let rows = values
        .par_iter()
        .map(|&value| {
            let mut s = *settings;
            match kind {
                SweepKind::Threshold => {
                    s.config.constraint = match s.config.constraint {
                        Constraint::PcApprox(_) => Constraint::PcApprox(value),
                        Constraint::PcMax(_) => Constraint::PcMax(value),
                        Constraint::MissDistance(_) => Constraint::MissDistance(value),
                    }
                }
                SweepKind::LeadTime => s.lead_orbits = value,
                SweepKind::DvMax => s.config.dv_max = value * 1e-3,
            }
            let e = run_single(record, &s);
            SweepRow {
                value,
                status: e.status,
                total_dv_mps: e.total_dv_mps,
                active_impulses: e.active_impulses,
                major_iterations: e.major_iterations,
                verified: e.achieved.map(|a| a.verified),
                error: e.error,
            }
        })
        .collect();
    SweepReport {
        schema_version: SCHEMA_VERSION,
        id: record.id.clone(),
        kind,
        settings: *settings,
        rows,
    }
}
