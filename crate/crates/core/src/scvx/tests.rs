use std::sync::OnceLock;

use nalgebra::{DMatrix, Matrix3, RowDVector, Vector2, Vector3, Vector6};
use proptest::prelude::*;

use super::sweep::minima_of;
use super::*;
use crate::conjunction::refine_tca;
use crate::dynamics::{propagate, propagate_with_stm, StateVector};
use crate::socp::{Cone, ConeProgram, ConeSpec, Settings};

fn reference_event() -> ConjunctionEvent {
    ConjunctionEvent {
        primary: StateVector::new(
            Vector3::new(2.33052185175137, -1103.70451050201, 7105.88764299718),
            Vector3::new(-7.44286282871773, -6.13734743652660e-4, 3.95136139293349e-3),
            0.0,
        ),
        secondary: StateVector::new(
            Vector3::new(2.333465506263321, -1103.671212478364, 7105.914958099038),
            Vector3::new(7.353740487126315, -1.142814049765362, -1.982472259113771e-1),
            0.0,
        ),
        cov_primary_rtn: Matrix3::new(
            9.31700905887535e-05, -2.623398113500550e-04, 2.360382173935300e-05,
            -2.623398113500550e-04, 1.77796454279511e-02, -9.331225387386501e-05,
            2.360382173935300e-05, -9.331225387386501e-05, 1.917372231880040e-05,
        ),
        cov_secondary_rtn: Matrix3::new(
            6.346570910720371e-04, -1.962292216245289e-03, 7.077413655227660e-05,
            -1.962292216245289e-03, 8.199899363150306e-01, 1.139823810584350e-03,
            7.077413655227660e-05, 1.139823810584350e-03, 2.510340829074070e-04,
        ),
        radius: 0.02971,
    }
}

fn window_config(lead_orbits: f64) -> ScvxConfig {
    let model = GravityModel::earth();
    let period = orbital_period(&reference_event(), &model).unwrap();
    ScvxConfig::default().with_orbit_window(period, lead_orbits, 2.0)
}

fn reference_report() -> &'static ScvxReport {
    static REPORT: OnceLock<ScvxReport> = OnceLock::new();
    REPORT.get_or_init(|| solve_cam(&reference_event(), &window_config(8.0), &GravityModel::earth()).unwrap())
}

fn config_with_lead(steps: f64, n_max: usize) -> ScvxConfig {
    ScvxConfig {
        lead_time: steps * 60.0,
        n_max,
        ..ScvxConfig::default()
    }
}

#[test]
fn grid_exact_multiple() {
    let g = build_grid(&reference_event(), &config_with_lead(10.0, 200)).unwrap();
    assert_eq!(g.n, 10);
    assert_eq!(g.node_times.len(), 11);
    assert_eq!(g.node_times[10], g.t_ca);
    assert_eq!(g.t0(), -600.0);
    assert!(g.node_times.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn grid_takes_floor() {
    let g = build_grid(&reference_event(), &config_with_lead(10.5, 200)).unwrap();
    assert_eq!(g.n, 10);
    assert_eq!(g.node_times[10], 0.0);
}

#[test]
fn grid_node_cap() {
    let g = build_grid(&reference_event(), &config_with_lead(1000.0, 170)).unwrap();
    assert_eq!(g.n, 170);
    assert_eq!(g.t0(), -60_000.0);
    assert_eq!(g.coast(), 830.0 * 60.0);
}

#[test]
fn grid_too_short() {
    let cfg = config_with_lead(0.5, 200);
    assert!(matches!(
        build_grid(&reference_event(), &cfg),
        Err(ScvxError::GridTooShort { .. })
    ));
    assert!(cfg.validate().is_err());
}

#[test]
fn circle_projection_is_radial() {
    let z = project_to_ellipse(&Vector2::new(0.5, 0.0), &Matrix2::identity(), 1.0).unwrap();
    assert!((z - Vector2::new(1.0, 0.0)).norm() < 1e-15);
    let z = project_to_ellipse(&Vector2::new(-3.0, 4.0), &Matrix2::identity(), 4.0).unwrap();
    assert!((z - Vector2::new(-1.2, 1.6)).norm() < 1e-14);
}

#[test]
fn direct_impact_goes_to_minor_axis() {
    let d2 = 9.0;
    let z = project_to_ellipse(&Vector2::zeros(), &Matrix2::new(0.25, 0.0, 0.0, 4.0), d2).unwrap();
    assert!((z - Vector2::new(1.5, 0.0)).norm() < 1e-14, "{z}");
    let z = project_to_ellipse(&Vector2::zeros(), &Matrix2::new(4.0, 0.0, 0.0, 0.25), d2).unwrap();
    assert!((z - Vector2::new(0.0, 1.5)).norm() < 1e-14, "{z}");
    let z = project_to_ellipse(&Vector2::zeros(), &Matrix2::identity(), d2).unwrap();
    assert!((z - Vector2::new(3.0, 0.0)).norm() < 1e-14, "{z}");
}

#[test]
fn projection_rejects_bad_input() {
    assert!(project_to_ellipse(&Vector2::zeros(), &Matrix2::identity(), 0.0).is_err());
    assert!(project_to_ellipse(&Vector2::zeros(), &Matrix2::new(1.0, 2.0, 2.0, 1.0), 1.0).is_err());
    assert!(project_to_ellipse(&Vector2::new(f64::NAN, 0.0), &Matrix2::identity(), 1.0).is_err());
}

fn sampled_distance(p: &Vector2<f64>, c: &Matrix2<f64>, d2: f64, samples: usize) -> f64 {
    let l = c.cholesky().unwrap().l() * d2.sqrt();
    (0..samples)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / samples as f64;
            (p - l * Vector2::new(t.cos(), t.sin())).norm()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Closest point of the filled ellipse to p as a cone program in (t, z).
fn projection_by_cone_program(p: &Vector2<f64>, c: &Matrix2<f64>, d2: f64) -> Vector2<f64> {
    let l_inv = c.cholesky().unwrap().l().try_inverse().unwrap();
    let mut g = DMatrix::zeros(6, 3);
    g[(0, 0)] = -1.0;
    g[(1, 1)] = 1.0;
    g[(2, 2)] = 1.0;
    for i in 0..2 {
        for j in 0..2 {
            g[(4 + i, 1 + j)] = -l_inv[(i, j)];
        }
    }
    let h = DVector::from_column_slice(&[0.0, p[0], p[1], d2.sqrt(), 0.0, 0.0]);
    let prog = ConeProgram::new(
        DVector::from_column_slice(&[1.0, 0.0, 0.0]),
        g,
        h,
        ConeSpec::new(vec![Cone::SecondOrder(3), Cone::SecondOrder(3)]),
    )
    .unwrap();
    let sol = crate::socp::solve(&prog, &Settings::default());
    assert_eq!(sol.status, crate::socp::Status::Optimal);
    Vector2::new(sol.x[1], sol.x[2])
}

fn random_metric() -> impl Strategy<Value = Matrix2<f64>> {
    (0.05f64..5.0, 0.05f64..5.0, 0.0f64..std::f64::consts::PI).prop_map(|(a, b, th)| {
        let r = Matrix2::new(th.cos(), -th.sin(), th.sin(), th.cos());
        r * Matrix2::new(a * a, 0.0, 0.0, b * b) * r.transpose()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn projection_beats_dense_sampling(c in random_metric(), d2 in 0.1f64..20.0, px in -12.0f64..12.0, py in -12.0f64..12.0) {
        let p = Vector2::new(px, py);
        let z = project_to_ellipse(&p, &c, d2).unwrap();
        let level = z.dot(&(c.cholesky().unwrap().solve(&z)));
        prop_assert!((level - d2).abs() <= 1e-10 * d2, "not on boundary: {} vs {}", level, d2);
        let best = sampled_distance(&p, &c, d2, 100_000);
        prop_assert!((p - z).norm() <= best + 1e-10, "{} > {}", (p - z).norm(), best);
    }

    #[test]
    fn outside_projection_matches_cone_program(c in random_metric(), d2 in 0.1f64..20.0, th in 0.0f64..std::f64::consts::TAU, scale in 1.2f64..4.0) {
        let l = c.cholesky().unwrap().l() * d2.sqrt();
        let p = l * Vector2::new(th.cos(), th.sin()) * scale;
        let z = project_to_ellipse(&p, &c, d2).unwrap();
        let zc = projection_by_cone_program(&p, &c, d2);
        prop_assert!((z - zc).norm() <= 1e-6 * (1.0 + p.norm()), "{} vs {}", z, zc);
    }

    #[test]
    fn plan_totals_are_consistent(raw in prop::collection::vec(-2.0f64..2.0, 20)) {
        let cfg = config_with_lead(5.0, 5);
        let grid = build_grid(&reference_event(), &cfg).unwrap();
        let x = DVector::from_vec(raw);
        let plan = ManeuverPlan::from_decision(&grid, &x);
        let sum: f64 = plan.magnitudes.iter().sum();
        prop_assert_eq!(plan.total_dv, sum);
        prop_assert!(plan.magnitudes.iter().all(|&m| m >= 0.0));
        prop_assert_eq!(plan.active_count, plan.magnitudes.iter().filter(|&&m| m > ACTIVE_THRESHOLD).count());
    }
}

#[test]
fn cyclic_minima_wrap_around() {
    assert_eq!(minima_of(&[3.0, 1.0, 2.0, 5.0, 0.5, 4.0]), vec![1, 4]);
    assert_eq!(minima_of(&[1.0, 2.0, 3.0, 2.5]), vec![0]);
    assert_eq!(minima_of(&[2.0, 2.0, 2.0]), Vec::<usize>::new());
}

fn nominal_linearization(cfg: &ScvxConfig) -> (TimeGrid, Linearization) {
    let ev = reference_event();
    let grid = build_grid(&ev, cfg).unwrap();
    let lin = linearize_reference(&ev, &grid, &ManeuverPlan::zeros(&grid), &GravityModel::earth(), cfg).unwrap();
    (grid, lin)
}

#[test]
fn ballistic_reference_matches_nominal_encounter() {
    let ev = reference_event();
    let (_, lin) = nominal_linearization(&config_with_lead(30.0, 200));
    let nominal = ev.geometry(CovarianceFrame::PerObject).unwrap();
    assert!((lin.dr_b_ref - nominal.dr_b).norm() < 1e-8, "{} vs {}", lin.dr_b_ref, nominal.dr_b);
    assert!(lin.tca_ref.abs() < 1e-6);
    assert!((lin.c_b_ref - nominal.c_b).amax() < 1e-9 * nominal.c_b.amax());
    assert!(lin.a_big.columns(3 * 30, 30).iter().all(|&v| v == 0.0));
}

#[test]
fn segment_maps_compose() {
    let ev = reference_event();
    let model = GravityModel::earth();
    let cfg = config_with_lead(30.0, 200);
    let (grid, lin) = nominal_linearization(&cfg);
    let start = propagate(&ev.primary, grid.node_times[4], &model, &cfg.integrator).unwrap();
    let (_, span) = propagate_with_stm(&start, grid.node_times[6], &model, &cfg.integrator).unwrap();
    let composed = lin.segments[5].stm * lin.segments[4].stm;
    assert!((composed - span.stm).amax() <= 1e-8 * span.stm.amax());
}

fn fly_impulses(ev: &ConjunctionEvent, grid: &TimeGrid, plan: &ManeuverPlan, cfg: &ScvxConfig) -> Vector6<f64> {
    let model = GravityModel::earth();
    let mut x = propagate(&ev.primary, grid.t0(), &model, &cfg.integrator).unwrap();
    for (i, dv) in plan.impulses.iter().enumerate() {
        x.velocity += dv;
        x = propagate(&x, grid.node_times[i + 1], &model, &cfg.integrator).unwrap();
    }
    propagate(&x, grid.t_ca, &model, &cfg.integrator).unwrap().to_vector6()
}

#[test]
fn linear_map_predicts_nonlinear_deviation() {
    use rand::{Rng, SeedableRng};
    let ev = reference_event();
    let cfg = window_config(8.0);
    let (grid, lin) = nominal_linearization(&cfg);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let mut x = DVector::zeros(4 * grid.n);
    for i in 0..grid.n {
        for k in 0..3 {
            x[3 * i + k] = rng.gen_range(-1.0..1.0) * 3.5e-6;
        }
        x[3 * grid.n + i] = x.fixed_rows::<3>(3 * i).norm();
    }
    let plan = ManeuverPlan {
        node_times: grid.node_times[..grid.n].to_vec(),
        impulses: (0..grid.n).map(|i| x.fixed_rows::<3>(3 * i).into_owned()).collect(),
        magnitudes: vec![0.0; grid.n],
        total_dv: 0.0,
        active_count: 0,
    };
    let base = fly_impulses(&ev, &grid, &ManeuverPlan::zeros(&grid), &cfg);
    let nonlinear = fly_impulses(&ev, &grid, &plan, &cfg) - base;
    let linear = &lin.a_big * &x;
    let err = (Vector6::from_iterator(linear.iter().copied()) - nonlinear).norm();
    assert!(err <= 1e-3 * nonlinear.norm(), "{err} vs {}", nonlinear.norm());
}

#[test]
fn subproblem_structure() {
    let cfg = config_with_lead(12.0, 200);
    let (grid, lin) = nominal_linearization(&cfg);
    let z = Vector2::new(1.0, 0.5);
    let plan = ManeuverPlan::zeros(&grid);
    let prog = assemble_subproblem(&lin, &plan, &z, &Matrix2::identity(), &cfg).unwrap();
    let cones = &prog.cones().blocks;
    assert_eq!(prog.num_vars(), 4 * grid.n);
    assert_eq!(cones.iter().filter(|c| matches!(c, Cone::SecondOrder(_))).count(), grid.n + 1);
    assert_eq!(cones[0], Cone::NonNegative(2 * grid.n + 1));
    assert_eq!(cones.last(), Some(&Cone::SecondOrder(3)));
}

#[test]
fn half_plane_row_at_reference_is_tangent_form() {
    let cfg = config_with_lead(12.0, 200);
    let (grid, lin) = nominal_linearization(&cfg);
    let c_eff = Matrix2::new(2.0, 0.3, 0.3, 0.5);
    let z = Vector2::new(0.4, -1.1);
    let mut x_prev = DVector::zeros(4 * grid.n);
    x_prev[4] = 2e-3;
    x_prev[3 * grid.n + 1] = 2e-3;
    let conv = Convexified::new(&lin, &x_prev).unwrap();
    let prog = conv.half_plane_program(&z, &c_eff, &cfg).unwrap();
    let row = 2 * grid.n;
    let slack = prog.h()[row] - prog.g_mul(&x_prev)[row];
    let grad = c_eff.cholesky().unwrap().solve(&z) * 2.0;
    let expected = grad.dot(&(lin.dr_b_ref - z)) / grad.norm();
    assert!((slack - expected).abs() < 1e-12, "{slack} vs {expected}");
    assert!((conv.predict(&x_prev).0 - lin.dr_b_ref).norm() < 1e-15);
}

#[test]
fn single_impulse_matches_closed_form() {
    let cfg = ScvxConfig {
        lead_time: 90.0,
        dv_max: 1.0,
        bplane_deviation_cap: 1e3,
        ..ScvxConfig::default()
    };
    let (grid, lin) = nominal_linearization(&cfg);
    assert_eq!(grid.n, 1);
    let c_eff = Matrix2::new(0.8, 0.1, 0.1, 0.3);
    let z = project_to_ellipse(&lin.dr_b_ref, &c_eff, 25.0).unwrap();
    let conv = Convexified::new(&lin, &DVector::zeros(4)).unwrap();
    let sol = crate::socp::solve(&conv.half_plane_program(&z, &c_eff, &cfg).unwrap(), &Settings::default());
    assert_eq!(sol.status, crate::socp::Status::Optimal);

    // min |v| subject to aᵀv ≥ b has v = a b / |a|².
    let grad = c_eff.cholesky().unwrap().solve(&z);
    let g = grad / grad.norm();
    let a: RowDVector<f64> = conv.ca.row(0) * g[0] + conv.ca.row(1) * g[1];
    let b = g.dot(&(z - lin.dr_b_ref));
    let v = a.transpose() * (b / a.norm_squared());
    assert!((sol.x[3] - b / a.norm()).abs() <= 1e-7 * sol.x[3], "{} vs {}", sol.x[3], b / a.norm());
    assert!((sol.x.rows(0, 3) - &v).norm() <= 1e-7 * v.norm());
}

#[test]
fn isotropic_toy_profile_is_constant() {
    let conv = Convexified {
        n: 1,
        ca: DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
        ba: RowDVector::zeros(3),
        x_prev: DVector::zeros(4),
        dr_offset: Vector2::zeros(),
        tca_offset: 0.0,
    };
    let cfg = ScvxConfig {
        dv_max: 1.0,
        ..ScvxConfig::default()
    };
    let costs: Vec<f64> = (0..24)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / 24.0;
            let target = Vector2::new(t.cos(), t.sin()) * 3.0;
            let sol = crate::socp::solve(&conv.terminal_program(&target, &cfg).unwrap(), &Settings::default());
            assert_eq!(sol.status, crate::socp::Status::Optimal);
            sol.x[3]
        })
        .collect();
    for c in &costs {
        assert!((c - 3.0).abs() < 1e-5, "{costs:?}");
    }
}

#[test]
fn reference_maneuver() {
    let r = reference_report();
    assert_eq!(r.status, ScvxStatus::Converged);
    assert!((r.plan.total_dv * 1e3 - 0.2042).abs() <= 0.03 * 0.2042, "{}", r.plan.total_dv * 1e3);
    assert!(r.plan.active_count.abs_diff(34) <= 5);
    assert!(r.major_iterations <= 3);
    let other = r.other_branch.unwrap();
    assert!((other.total_dv * 1e3 - 0.2139).abs() <= 0.03 * 0.2139);
    assert!(r.plan.total_dv <= other.total_dv);
    assert_eq!(r.minor_iterations_per_major.len(), r.major_iterations);
    assert_eq!(r.trace.len(), r.minor_iterations_per_major.iter().sum::<usize>());
}

#[test]
fn reference_plan_is_lossless() {
    let r = reference_report();
    let cfg = window_config(8.0);
    for (dv, &m) in r.plan.impulses.iter().zip(&r.plan.magnitudes) {
        assert!(m <= cfg.dv_max + 1e-9);
        assert!(dv.norm() <= m + 1e-9);
        if m > ACTIVE_THRESHOLD {
            assert!((dv.norm() - m).abs() <= 1e-7 * m, "{} vs {m}", dv.norm());
        }
    }
}

#[test]
fn reference_plan_survives_full_dynamics() {
    let f = reference_report().final_metrics;
    assert!(f.verified);
    assert!(f.constraint_d2 >= 0.98 * f.d2_bar);
    assert!(f.predicted_d2 >= f.d2_bar * (1.0 - 1e-6));
    assert!(f.pc_max.unwrap() <= 1e-4 * 1.05);
}

#[test]
fn predicted_tca_shift_matches_refinement() {
    let r = reference_report();
    let ev = reference_event();
    let cfg = window_config(8.0);
    let model = GravityModel::earth();
    let end = fly_impulses(&ev, &r.grid, &r.plan, &cfg);
    let primary = StateVector::from_vector6(&end, r.grid.t_ca);
    let tca = refine_tca(&primary, &ev.secondary, r.grid.t_ca, &model, &cfg.integrator, &cfg.tca).unwrap();
    assert!((tca.t_ca - r.final_metrics.predicted_tca_shift).abs() <= 0.05);
    assert!((tca.t_ca - r.final_metrics.tca_shift).abs() <= 1e-6);
    assert!(r.final_metrics.tca_shift.abs() > 0.5);
}

#[test]
fn safe_event_needs_no_maneuver() {
    let cfg = ScvxConfig {
        constraint: Constraint::PcMax(0.5),
        ..window_config(2.0)
    };
    let r = solve_cam(&reference_event(), &cfg, &GravityModel::earth()).unwrap();
    assert_eq!(r.status, ScvxStatus::Converged);
    assert_eq!(r.major_iterations, 0);
    assert_eq!(r.plan.total_dv, 0.0);
    assert_eq!(r.plan.active_count, 0);
}

#[test]
fn tiny_impulse_cap_is_infeasible() {
    let cfg = ScvxConfig {
        dv_max: 1e-12,
        ..window_config(2.0)
    };
    let r = solve_cam(&reference_event(), &cfg, &GravityModel::earth()).unwrap();
    assert_eq!(r.status, ScvxStatus::Infeasible);
    assert_eq!(r.plan.total_dv, 0.0);
}

#[test]
fn invalid_configs_are_rejected() {
    let ev = reference_event();
    let model = GravityModel::earth();
    for cfg in [
        ScvxConfig { delta_t: 0.0, ..ScvxConfig::default() },
        ScvxConfig { dv_max: -1.0, ..ScvxConfig::default() },
        ScvxConfig { tol_minor: f64::NAN, ..ScvxConfig::default() },
        ScvxConfig { max_major: 0, ..ScvxConfig::default() },
    ] {
        assert!(matches!(solve_cam(&ev, &cfg, &model), Err(ScvxError::InvalidConfig(_))));
    }
}
