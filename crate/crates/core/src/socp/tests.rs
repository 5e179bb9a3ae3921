use super::cone::{layout, max_step, Scaling};
use super::kkt::{Csr, NormalSolver, Structure};
use super::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn lp(c: &[f64], g: DMatrix<f64>, h: &[f64]) -> ConeProgram {
    let m = h.len();
    ConeProgram::new(
        DVector::from_column_slice(c),
        g,
        DVector::from_column_slice(h),
        ConeSpec::new(vec![Cone::NonNegative(m)]),
    )
    .unwrap()
}

fn in_cone(blocks: &[Cone], v: &DVector<f64>, tol: f64) -> bool {
    let mut k = 0;
    for b in blocks {
        match *b {
            Cone::NonNegative(d) => {
                if (k..k + d).any(|i| v[i] < -tol) {
                    return false;
                }
                k += d;
            }
            Cone::SecondOrder(d) => {
                if v[k] + tol < v.rows(k + 1, d - 1).norm() {
                    return false;
                }
                k += d;
            }
        }
    }
    true
}

fn assert_optimal_invariants(p: &ConeProgram, sol: &ConeSolution) {
    assert_eq!(sol.status, Status::Optimal);
    assert!(sol.residuals.primal < 1e-8 && sol.residuals.dual < 1e-8 && sol.residuals.gap < 1e-8);
    assert!(in_cone(&p.cones().blocks, &sol.s, 1e-9));
    assert!(in_cone(&p.cones().blocks, &sol.y, 1e-9));
    let scale = 1.0 + sol.obj_primal.abs();
    assert!(sol.obj_dual <= sol.obj_primal + 1e-8 * scale, "{} > {}", sol.obj_dual, sol.obj_primal);
    assert!(sol.s.dot(&sol.y) / p.num_rows() as f64 <= 1e-8 * scale);
}

#[test]
fn one_dimensional_lp() {
    let p = lp(&[1.0], DMatrix::from_element(1, 1, -1.0), &[-1.0]);
    let sol = solve(&p, &Settings::default());
    assert_optimal_invariants(&p, &sol);
    assert!((sol.x[0] - 1.0).abs() < 1e-8);
}

#[test]
fn soc_distance_to_point() {
    let (p1, p2) = (0.7, -2.5);
    let g = DMatrix::from_row_slice(3, 3, &[-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    let prog = ConeProgram::new(
        DVector::from_column_slice(&[1.0, 0.0, 0.0]),
        g,
        DVector::from_column_slice(&[0.0, p1, p2]),
        ConeSpec::new(vec![Cone::SecondOrder(3)]),
    )
    .unwrap();
    let sol = solve(&prog, &Settings::default());
    assert_eq!(sol.status, Status::Optimal);
    assert!(sol.x[0].abs() < 1e-7);
    assert!((sol.x[1] - p1).abs() < 1e-7 && (sol.x[2] - p2).abs() < 1e-7);
}

#[test]
fn primal_infeasible_lp() {
    // x ≥ 1 and −x ≥ 0
    let p = lp(&[1.0], DMatrix::from_column_slice(2, 1, &[-1.0, 1.0]), &[-1.0, 0.0]);
    let sol = solve(&p, &Settings::default());
    assert_eq!(sol.status, Status::PrimalInfeasible);
    // Certificate: Gᵀy = 0, y ≥ 0, hᵀy = −1.
    assert!(p.g_tmul(&sol.y).norm() < 1e-7);
    assert!(sol.y.iter().all(|&v| v >= -1e-12));
    assert!((p.h().dot(&sol.y) + 1.0).abs() < 1e-12);
}

#[test]
fn unbounded_lp_is_dual_infeasible() {
    // min −x s.t. x ≥ 0
    let p = lp(&[-1.0], DMatrix::from_element(1, 1, -1.0), &[0.0]);
    let sol = solve(&p, &Settings::default());
    assert_eq!(sol.status, Status::DualInfeasible);
}

#[test]
fn malformed_programs_are_rejected() {
    let bad = ConeProgram::new(
        DVector::from_element(2, 1.0),
        DMatrix::zeros(3, 2),
        DVector::zeros(3),
        ConeSpec::new(vec![Cone::SecondOrder(1), Cone::NonNegative(2)]),
    );
    assert!(bad.is_err());
    let bad = ConeProgram::new(
        DVector::from_element(2, 1.0),
        DMatrix::zeros(3, 2),
        DVector::zeros(3),
        ConeSpec::new(vec![Cone::NonNegative(2)]),
    );
    assert!(bad.is_err());
}

/// Bounded random LP: x_i ≥ −10, Σx ≤ 10 n, plus a few cuts through a
/// neighbourhood of the origin. Returns (c, A, b) for A x ≤ b.
fn random_lp(rng: &mut ChaCha8Rng) -> (Vec<f64>, DMatrix<f64>, Vec<f64>) {
    let n = rng.gen_range(1..=10);
    let k = rng.gen_range(0..=4);
    let m = n + 1 + k;
    let mut a = DMatrix::zeros(m, n);
    let mut b = vec![0.0; m];
    for i in 0..n {
        a[(i, i)] = -1.0;
        b[i] = 10.0;
    }
    for j in 0..n {
        a[(n, j)] = 1.0;
    }
    b[n] = 10.0 * n as f64;
    for i in n + 1..m {
        for j in 0..n {
            a[(i, j)] = rng.gen_range(-1.0..1.0);
        }
        b[i] = rng.gen_range(0.5..5.0);
    }
    let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (c, a, b)
}

/// Exhaustive oracle: best objective over every basic feasible solution.
fn vertex_enumeration(c: &[f64], a: &DMatrix<f64>, b: &[f64]) -> f64 {
    let (m, n) = a.shape();
    let mut best = f64::INFINITY;
    let mut idx: Vec<usize> = (0..n).collect();
    loop {
        let sub = DMatrix::from_fn(n, n, |i, j| a[(idx[i], j)]);
        let rhs = DVector::from_fn(n, |i, _| b[idx[i]]);
        let svd = sub.clone().svd(false, false);
        if svd.singular_values.min() > 1e-9 * svd.singular_values.max() {
            if let Some(x) = sub.lu().solve(&rhs) {
                let feasible = (0..m).all(|i| (a.row(i) * &x)[0] <= b[i] + 1e-9 * (1.0 + b[i].abs()));
                if feasible {
                    best = best.min(x.iter().zip(c).map(|(xi, ci)| xi * ci).sum());
                }
            }
        }
        // Next n-combination of 0..m.
        let mut i = n;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if idx[i] < m - n + i {
                idx[i] += 1;
                for j in i + 1..n {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

#[test]
fn random_lps_match_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..200 {
        let (c, a, b) = random_lp(&mut rng);
        let oracle = vertex_enumeration(&c, &a, &b);
        let p = lp(&c, a.clone(), &b);
        let sol = solve(&p, &Settings::default());
        assert_optimal_invariants(&p, &sol);
        assert!(
            (sol.obj_primal - oracle).abs() <= 1e-7 * oracle.abs().max(1.0),
            "case {case}: {} vs {oracle}",
            sol.obj_primal
        );
    }
}

/// Analytic Euclidean projection onto the second-order cone.
fn soc_projection(p: &DVector<f64>) -> DVector<f64> {
    let t = p[0];
    let u = p.rows(1, p.len() - 1);
    let nu = u.norm();
    if nu <= t {
        p.clone()
    } else if nu <= -t {
        DVector::zeros(p.len())
    } else {
        let a = 0.5 * (t + nu);
        let mut out = DVector::zeros(p.len());
        out[0] = a;
        out.rows_mut(1, p.len() - 1).copy_from(&(u * (a / nu)));
        out
    }
}

/// min t  s.t.  ‖x − p‖ ≤ t,  x ∈ SOC(d).  Variables (x, t).
fn projection_program(p: &DVector<f64>) -> ConeProgram {
    let d = p.len();
    let n = d + 1;
    let mut trip = vec![(0, d, -1.0)];
    let mut h = DVector::zeros(2 * d + 1);
    for i in 0..d {
        trip.push((1 + i, i, 1.0));
        h[1 + i] = p[i];
        trip.push((d + 1 + i, i, -1.0));
    }
    let mut c = DVector::zeros(n);
    c[d] = 1.0;
    ConeProgram::from_triplets(
        c,
        2 * d + 1,
        &trip,
        h,
        ConeSpec::new(vec![Cone::SecondOrder(d + 1), Cone::SecondOrder(d)]),
    )
    .unwrap()
}

#[test]
fn random_soc_projections_match_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..200 {
        let d = rng.gen_range(2..=8);
        let p = DVector::from_fn(d, |_, _| rng.gen_range(-3.0..3.0));
        let prog = projection_program(&p);
        let sol = solve(&prog, &Settings::default());
        assert_optimal_invariants(&prog, &sol);
        let x = sol.x.rows(0, d).into_owned();
        let exact = soc_projection(&p);
        assert!((&x - &exact).amax() < 1e-8, "case {case}: {x} vs {exact}");
    }
}

#[test]
fn objective_scaling_preserves_argmin() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let (c, a, b) = random_lp(&mut rng);
        let p = lp(&c, a, &b);
        let x1 = solve(&p, &Settings::default()).x;
        for k in [1e-3, 7.0, 1e3] {
            let x2 = solve(&p.with_scaled_objective(k), &Settings::default()).x;
            assert!((&x1 - &x2).amax() < 1e-7, "k = {k}");
        }
    }
}

#[test]
fn solve_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (c, a, b) = random_lp(&mut rng);
    let p = lp(&c, a, &b);
    let s1 = solve(&p, &Settings::default());
    let s2 = solve(&p, &Settings::default());
    assert_eq!(s1, s2);
}

#[test]
fn nt_scaling_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cones = vec![Cone::SecondOrder(4), Cone::NonNegative(3), Cone::SecondOrder(2)];
    let blocks = layout(&cones);
    let interior = |rng: &mut ChaCha8Rng| {
        let mut v: DVector<f64> = DVector::from_fn(9, |_, _| rng.gen_range(-1.0..1.0));
        v[0] = v.rows(1, 3).norm() + rng.gen_range(0.01..1.0);
        for i in 4..7 {
            v[i] = rng.gen_range(0.01..2.0);
        }
        v[7] = f64::abs(v[8]) + rng.gen_range(0.01..1.0);
        v
    };
    for _ in 0..50 {
        let s = interior(&mut rng);
        let z = interior(&mut rng);
        let sc = Scaling::new(&blocks, &s, &z).unwrap();
        let wz = sc.apply_w(&z);
        let winv_s = sc.apply_winv(&s);
        assert!((&wz - &winv_s).amax() < 1e-12 * (1.0 + wz.amax()));
        let v = DVector::from_fn(9, |_, _| rng.gen_range(-1.0..1.0));
        assert!((sc.apply_winv(&sc.apply_w(&v)) - &v).amax() < 1e-12);
        assert!((sc.apply_w2(&v) - sc.apply_w(&sc.apply_w(&v))).amax() < 1e-12 * (1.0 + sc.apply_w2(&v).amax()));
        assert!((sc.apply_winv2(&sc.apply_w2(&v)) - &v).amax() < 1e-10);
        // Boundary search lands exactly on the cone boundary.
        let d = DVector::from_fn(9, |_, _| rng.gen_range(-1.0..1.0));
        let a = max_step(&blocks, &s, &d);
        if a.is_finite() {
            let edge = &s + &d * a;
            assert!(super::cone::min_eigenvalue(&blocks, &edge).abs() < 1e-10);
        }
    }
}

/// KKT solve through the structured normal equations against a dense LU of
/// the full saddle-point system.
#[test]
fn structured_kkt_matches_dense_saddle_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    // 30 four-variable SOC blocks, bounds on each σ, and two dense rows.
    let nb = 30;
    let n = 4 * nb;
    let mut cones = Vec::new();
    let mut trip = Vec::new();
    let mut row = 0;
    for i in 0..nb {
        trip.push((row, 3 * nb + i, -1.0));
        for k in 0..3 {
            trip.push((row + 1 + k, 3 * i + k, -1.0));
        }
        row += 4;
        cones.push(Cone::SecondOrder(4));
    }
    for i in 0..nb {
        trip.push((row, 3 * nb + i, -1.0));
        trip.push((row + 1, 3 * nb + i, 1.0));
        row += 2;
    }
    cones.push(Cone::NonNegative(2 * nb));
    for j in 0..3 * nb {
        trip.push((row, j, rng.gen_range(-1.0..1.0)));
    }
    row += 1;
    cones.push(Cone::NonNegative(1));
    for r in 0..2 {
        for j in 0..3 * nb {
            trip.push((row + 1 + r, j, rng.gen_range(-1.0..1.0)));
        }
    }
    row += 3;
    cones.push(Cone::SecondOrder(3));
    let m = row;
    let g = Csr::from_triplets(m, n, &trip);
    let blocks = layout(&cones);
    let structure = Structure::analyse(&g, &blocks);
    let e = super::cone::identity(&blocks, m);
    let mut s = &e * 1.0;
    let mut z = &e * 1.0;
    for v in s.iter_mut().chain(z.iter_mut()) {
        *v += rng.gen_range(0.0..0.3);
    }
    let sc = Scaling::new(&blocks, &s, &z).unwrap();
    let solver = NormalSolver::factor(&g, &structure, &sc, 1e-10).unwrap();
    let r1 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let r2 = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
    let (x, zz) = solver.solve_kkt(&r1, &r2, 3);

    let gd = g.to_dense();
    let mut w2 = DMatrix::zeros(m, m);
    for j in 0..m {
        let mut ej = DVector::zeros(m);
        ej[j] = 1.0;
        w2.set_column(j, &sc.apply_w2(&ej));
    }
    let mut k = DMatrix::zeros(n + m, n + m);
    k.view_mut((0, n), (n, m)).copy_from(&gd.transpose());
    k.view_mut((n, 0), (m, n)).copy_from(&gd);
    k.view_mut((n, n), (m, m)).copy_from(&(-w2));
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(&r1);
    rhs.rows_mut(n, m).copy_from(&r2);
    let sol = k.lu().solve(&rhs).unwrap();
    assert!((sol.rows(0, n) - &x).amax() < 1e-8);
    assert!((sol.rows(n, m) - &zz).amax() < 1e-8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn box_lp_has_closed_form(c in proptest::collection::vec(-2.0f64..2.0, 1..8), lo in -3.0f64..0.0, width in 0.5f64..4.0) {
        // min cᵀx with lo ≤ x ≤ lo + width: each coordinate sits at the bound opposite c's sign.
        let n = c.len();
        let mut g = DMatrix::zeros(2 * n, n);
        let mut h = vec![0.0; 2 * n];
        for i in 0..n {
            g[(2 * i, i)] = -1.0;
            h[2 * i] = -lo;
            g[(2 * i + 1, i)] = 1.0;
            h[2 * i + 1] = lo + width;
        }
        let p = lp(&c, g, &h);
        let sol = solve(&p, &Settings::default());
        prop_assert_eq!(sol.status, Status::Optimal);
        let expected: f64 = c.iter().map(|&ci| if ci > 0.0 { ci * lo } else { ci * (lo + width) }).sum();
        prop_assert!((sol.obj_primal - expected).abs() < 1e-7 * (1.0 + expected.abs()));
        prop_assert!(sol.obj_dual <= sol.obj_primal + 1e-8 * (1.0 + expected.abs()));
    }
}
