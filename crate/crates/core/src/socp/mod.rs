//! Interior-point solver for linear objectives over products of
//! nonnegative orthants and second-order cones:
//!
//! ```text
//! minimize  cᵀx   subject to  G x + s = h,  s ∈ K
//! ```
//!
//! The iteration is a path-following primal-dual method on the homogeneous
//! self-dual embedding with Nesterov–Todd scaling and a Mehrotra
//! predictor-corrector. Infeasibility is certified from the embedding's rays.

mod cone;
mod kkt;
mod polish;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use cone::{degree, identity, jordan_divide, jordan_product, layout, max_step, min_eigenvalue, Block, Scaling};
use kkt::{Csr, NormalSolver, Structure};
use polish::{Point, Polisher, POLISH_MAX_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cone {
    NonNegative(usize),
    /// (t, u) with t ≥ ‖u‖; the dimension counts t.
    SecondOrder(usize),
}

impl Cone {
    pub fn dim(&self) -> usize {
        match *self {
            Cone::NonNegative(d) | Cone::SecondOrder(d) => d,
        }
    }
}

/// Ordered cone blocks; block k covers the next `dim` slack rows.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConeSpec {
    pub blocks: Vec<Cone>,
}

impl ConeSpec {
    pub fn new(blocks: Vec<Cone>) -> Self {
        Self { blocks }
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(Cone::dim).sum()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SocpError {
    #[error("malformed cone program: {0}")]
    InvalidProgram(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConeProgram {
    c: DVector<f64>,
    g: Csr,
    h: DVector<f64>,
    cones: ConeSpec,
}

impl ConeProgram {
    pub fn new(c: DVector<f64>, g: DMatrix<f64>, h: DVector<f64>, cones: ConeSpec) -> Result<Self, SocpError> {
        if g.ncols() != c.len() || g.nrows() != h.len() {
            return Err(SocpError::InvalidProgram(format!(
                "G is {}x{}, c has {} entries, h has {}",
                g.nrows(),
                g.ncols(),
                c.len(),
                h.len()
            )));
        }
        let csr = Csr::from_dense(&g);
        Self::from_csr(c, csr, h, cones)
    }

    /// Builds G from (row, column, value) triplets; duplicates are summed.
    pub fn from_triplets(
        c: DVector<f64>,
        m: usize,
        triplets: &[(usize, usize, f64)],
        h: DVector<f64>,
        cones: ConeSpec,
    ) -> Result<Self, SocpError> {
        let n = c.len();
        if let Some(&(i, j, _)) = triplets.iter().find(|&&(i, j, _)| i >= m || j >= n) {
            return Err(SocpError::InvalidProgram(format!("entry ({i},{j}) outside {m}x{n}")));
        }
        if h.len() != m {
            return Err(SocpError::InvalidProgram(format!("h has {} entries, expected {m}", h.len())));
        }
        Self::from_csr(c, Csr::from_triplets(m, n, triplets), h, cones)
    }

    fn from_csr(c: DVector<f64>, g: Csr, h: DVector<f64>, cones: ConeSpec) -> Result<Self, SocpError> {
        for b in &cones.blocks {
            match *b {
                Cone::NonNegative(0) => return Err(SocpError::InvalidProgram("empty nonnegative block".into())),
                Cone::SecondOrder(d) if d < 2 => {
                    return Err(SocpError::InvalidProgram(format!("second-order block of dimension {d}")))
                }
                _ => {}
            }
        }
        if cones.dim() != h.len() {
            return Err(SocpError::InvalidProgram(format!(
                "cones cover {} rows but h has {}",
                cones.dim(),
                h.len()
            )));
        }
        if c.iter().chain(h.iter()).chain(g.val.iter()).any(|v| !v.is_finite()) {
            return Err(SocpError::InvalidProgram("non-finite data".into()));
        }
        Ok(Self { c, g, h, cones })
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn num_rows(&self) -> usize {
        self.h.len()
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn h(&self) -> &DVector<f64> {
        &self.h
    }

    pub fn cones(&self) -> &ConeSpec {
        &self.cones
    }

    pub fn g_dense(&self) -> DMatrix<f64> {
        self.g.to_dense()
    }

    pub fn g_mul(&self, x: &DVector<f64>) -> DVector<f64> {
        self.g.mul(x)
    }

    pub fn g_tmul(&self, z: &DVector<f64>) -> DVector<f64> {
        self.g.tmul(z)
    }

    /// Same program with the objective multiplied by `k`.
    pub fn with_scaled_objective(&self, k: f64) -> Self {
        Self {
            c: &self.c * k,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub tol: f64,
    pub max_iter: usize,
    pub step_fraction: f64,
    pub regularization: f64,
    pub refinement_steps: usize,
    /// Finish optimal solves of small programs with uncentred Newton steps.
    pub polish: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            step_fraction: 0.99,
            regularization: 1e-10,
            refinement_steps: 3,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIterations,
    NumericalFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// ‖Gx + s − h‖ / (1 + ‖h‖)
    pub primal: f64,
    /// ‖Gᵀy + c‖ / (1 + ‖c‖)
    pub dual: f64,
    /// sᵀy / max(1, min(|cᵀx|, |hᵀy|))
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConeSolution {
    pub status: Status,
    pub x: DVector<f64>,
    pub s: DVector<f64>,
    /// Dual variable of the cone constraint.
    pub y: DVector<f64>,
    pub obj_primal: f64,
    pub obj_dual: f64,
    pub iterations: usize,
    pub residuals: Residuals,
}

impl ConeSolution {
    /// Optimal, or stopped early at a point meeting a looser tolerance.
    pub fn is_usable(&self, loose_tol: f64) -> bool {
        match self.status {
            Status::Optimal => true,
            Status::MaxIterations | Status::NumericalFailure => {
                self.residuals.primal < loose_tol && self.residuals.dual < loose_tol && self.residuals.gap < loose_tol
            }
            _ => false,
        }
    }
}

struct Iterate {
    x: DVector<f64>,
    s: DVector<f64>,
    z: DVector<f64>,
    tau: f64,
    kappa: f64,
}

struct Direction {
    dx: DVector<f64>,
    ds: DVector<f64>,
    dz: DVector<f64>,
    dtau: f64,
    dkappa: f64,
}

fn shift_into_cone(blocks: &[Block], v: &mut DVector<f64>, e: &DVector<f64>) {
    let lo = min_eigenvalue(blocks, v);
    if lo <= 0.0 || !lo.is_finite() {
        let shift = 1.0 + if lo.is_finite() { -lo } else { 0.0 };
        *v += e * shift;
    }
}

struct Solver<'p> {
    prog: &'p ConeProgram,
    blocks: Vec<Block>,
    structure: Structure,
    e: DVector<f64>,
    settings: Settings,
    hnorm: f64,
    cnorm: f64,
}

impl<'p> Solver<'p> {
    fn initial_point(&self) -> Option<Iterate> {
        let m = self.prog.num_rows();
        let n = self.prog.num_vars();
        let unit = Scaling::new(&self.blocks, &self.e, &self.e)?;
        let kkt = NormalSolver::factor(&self.prog.g, &self.structure, &unit, self.settings.regularization)?;
        // Least-squares primal point: min ‖G x − h‖, s = h − G x.
        let (x, zp) = kkt.solve_kkt(&DVector::zeros(n), &self.prog.h, self.settings.refinement_steps);
        let mut s = -zp;
        // Dual point: min ‖z‖ subject to Gᵀ z = −c.
        let (_, mut z) = kkt.solve_kkt(&(-&self.prog.c), &DVector::zeros(m), self.settings.refinement_steps);
        shift_into_cone(&self.blocks, &mut s, &self.e);
        shift_into_cone(&self.blocks, &mut z, &self.e);
        Some(Iterate {
            x,
            s,
            z,
            tau: 1.0,
            kappa: 1.0,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn direction(
        &self,
        kkt: &NormalSolver,
        scaling: &Scaling,
        it: &Iterate,
        x1: &DVector<f64>,
        z1: &DVector<f64>,
        eta: f64,
        r: (&DVector<f64>, &DVector<f64>, f64),
        ds_target: &DVector<f64>,
        dkappa_target: f64,
    ) -> Direction {
        let (rx, rz, rtau) = r;
        let u = jordan_divide(&self.blocks, &scaling.lambda, ds_target);
        let wu = scaling.apply_w(&u);
        let (x2, z2) = kkt.solve_kkt(&(-rx * eta), &(-rz * eta - &wu), self.settings.refinement_steps);
        let c = &self.prog.c;
        let h = &self.prog.h;
        let den = c.dot(x1) + h.dot(z1) - it.kappa / it.tau;
        let dtau = (-eta * rtau - dkappa_target / it.tau - c.dot(&x2) - h.dot(&z2)) / den;
        let dx = x2 + x1 * dtau;
        let dz = z2 + z1 * dtau;
        let ds = scaling.apply_w(&(u - scaling.apply_w(&dz)));
        let dkappa = (dkappa_target - it.kappa * dtau) / it.tau;
        Direction {
            dx,
            ds,
            dz,
            dtau,
            dkappa,
        }
    }

    fn step_length(&self, it: &Iterate, d: &Direction) -> f64 {
        let mut a = max_step(&self.blocks, &it.s, &d.ds).min(max_step(&self.blocks, &it.z, &d.dz));
        if d.dtau < 0.0 {
            a = a.min(-it.tau / d.dtau);
        }
        if d.dkappa < 0.0 {
            a = a.min(-it.kappa / d.dkappa);
        }
        a
    }

    fn solution(&self, it: &Iterate, status: Status, iterations: usize, res: Residuals) -> ConeSolution {
        let (x, s, y) = match status {
            Status::PrimalInfeasible => {
                let k = -self.prog.h.dot(&it.z);
                (DVector::zeros(it.x.len()), DVector::zeros(it.s.len()), &it.z / k)
            }
            Status::DualInfeasible => {
                let k = -self.prog.c.dot(&it.x);
                (&it.x / k, &it.s / k, DVector::zeros(it.z.len()))
            }
            _ => (&it.x / it.tau, &it.s / it.tau, &it.z / it.tau),
        };
        ConeSolution {
            status,
            obj_primal: self.prog.c.dot(&x),
            obj_dual: -self.prog.h.dot(&y),
            x,
            s,
            y,
            iterations,
            residuals: res,
        }
    }

    fn finish_optimal(&self, it: &Iterate, iterations: usize, res: Residuals) -> ConeSolution {
        let small = self.prog.num_vars() + self.prog.num_rows() <= POLISH_MAX_DIM;
        if !(self.settings.polish && small) {
            return self.solution(it, Status::Optimal, iterations, res);
        }
        let polisher = Polisher {
            g: &self.prog.g,
            c: &self.prog.c,
            h: &self.prog.h,
            blocks: &self.blocks,
        };
        let p = polisher.polish(Point {
            x: &it.x / it.tau,
            s: &it.s / it.tau,
            z: &it.z / it.tau,
        });
        let done = Iterate {
            x: p.x,
            s: p.s,
            z: p.z,
            tau: 1.0,
            kappa: 0.0,
        };
        let (_, _, _, polished) = self.residuals(&done);
        let tol = self.settings.tol;
        if polished.primal < tol && polished.dual < tol && polished.gap < tol {
            self.solution(&done, Status::Optimal, iterations, polished)
        } else {
            self.solution(it, Status::Optimal, iterations, res)
        }
    }

    fn residuals(&self, it: &Iterate) -> (DVector<f64>, DVector<f64>, f64, Residuals) {
        let gx = self.prog.g.mul(&it.x);
        let gtz = self.prog.g.tmul(&it.z);
        let c = &self.prog.c;
        let h = &self.prog.h;
        let rx = &gtz + c * it.tau;
        let rz = &gx + &it.s - h * it.tau;
        let rtau = it.kappa + c.dot(&it.x) + h.dot(&it.z);
        let pcost = c.dot(&it.x) / it.tau;
        let dcost = -h.dot(&it.z) / it.tau;
        let gap = it.s.dot(&it.z) / (it.tau * it.tau);
        let res = Residuals {
            primal: rz.norm() / it.tau / (1.0 + self.hnorm),
            dual: rx.norm() / it.tau / (1.0 + self.cnorm),
            gap: gap.abs() / pcost.abs().min(dcost.abs()).max(1.0),
        };
        (rx, rz, rtau, res)
    }

    fn run(&self) -> ConeSolution {
        let m = self.prog.num_rows();
        let nan_res = Residuals {
            primal: f64::NAN,
            dual: f64::NAN,
            gap: f64::NAN,
        };
        let Some(mut it) = self.initial_point() else {
            let empty = Iterate {
                x: DVector::zeros(self.prog.num_vars()),
                s: DVector::zeros(m),
                z: DVector::zeros(m),
                tau: 1.0,
                kappa: 1.0,
            };
            return self.solution(&empty, Status::NumericalFailure, 0, nan_res);
        };
        let deg = degree(&self.blocks) as f64;
        let tol = self.settings.tol;
        let mut last_res = nan_res;
        for iter in 0..=self.settings.max_iter {
            let (rx, rz, rtau, res) = self.residuals(&it);
            if !(res.primal.is_finite() && res.dual.is_finite() && res.gap.is_finite()) {
                return self.solution(&it, Status::NumericalFailure, iter, last_res);
            }
            last_res = res;
            if res.primal < tol && res.dual < tol && res.gap < tol {
                return self.finish_optimal(&it, iter, res);
            }
            let hz = self.prog.h.dot(&it.z);
            if hz < 0.0 && self.prog.g.tmul(&it.z).norm() / (-hz) < tol {
                return self.solution(&it, Status::PrimalInfeasible, iter, res);
            }
            let cx = self.prog.c.dot(&it.x);
            if cx < 0.0 && (self.prog.g.mul(&it.x) + &it.s).norm() / (-cx) < tol {
                return self.solution(&it, Status::DualInfeasible, iter, res);
            }
            if iter == self.settings.max_iter {
                break;
            }

            let Some(scaling) = Scaling::new(&self.blocks, &it.s, &it.z) else {
                return self.solution(&it, Status::NumericalFailure, iter, res);
            };
            let Some(kkt) = NormalSolver::factor(&self.prog.g, &self.structure, &scaling, self.settings.regularization)
            else {
                return self.solution(&it, Status::NumericalFailure, iter, res);
            };
            let (x1, z1) = kkt.solve_kkt(&(-&self.prog.c), &self.prog.h, self.settings.refinement_steps);
            let mu = (it.s.dot(&it.z) + it.tau * it.kappa) / (deg + 1.0);
            let lam = &scaling.lambda;
            let lam_sq = jordan_product(&self.blocks, lam, lam);

            // Predictor.
            let aff = self.direction(
                &kkt,
                &scaling,
                &it,
                &x1,
                &z1,
                1.0,
                (&rx, &rz, rtau),
                &(-&lam_sq),
                -it.tau * it.kappa,
            );
            let alpha_aff = self.step_length(&it, &aff).min(1.0);
            let sigma = (1.0 - alpha_aff).powi(3).clamp(0.0, 1.0);

            // Corrector with second-order term.
            let w_dz = scaling.apply_w(&aff.dz);
            let winv_ds = scaling.apply_winv(&aff.ds);
            let ds_target = -&lam_sq - jordan_product(&self.blocks, &winv_ds, &w_dz) + &self.e * (sigma * mu);
            let dk_target = -it.tau * it.kappa - aff.dtau * aff.dkappa + sigma * mu;
            let d = self.direction(
                &kkt,
                &scaling,
                &it,
                &x1,
                &z1,
                1.0 - sigma,
                (&rx, &rz, rtau),
                &ds_target,
                dk_target,
            );
            let alpha = (self.settings.step_fraction * self.step_length(&it, &d)).min(1.0);
            if !(alpha > 1e-14) || !d.dx.iter().all(|v| v.is_finite()) {
                return self.solution(&it, Status::NumericalFailure, iter, res);
            }
            it.x += &d.dx * alpha;
            it.s += &d.ds * alpha;
            it.z += &d.dz * alpha;
            it.tau += alpha * d.dtau;
            it.kappa += alpha * d.dkappa;
        }
        self.solution(&it, Status::MaxIterations, self.settings.max_iter, last_res)
    }
}

/// Solves the cone program. Never panics on a program accepted by the
/// constructors; failures are reported through [`Status`].
pub fn solve(program: &ConeProgram, settings: &Settings) -> ConeSolution {
    let blocks = layout(&program.cones.blocks);
    let structure = Structure::analyse(&program.g, &blocks);
    let solver = Solver {
        prog: program,
        e: identity(&blocks, program.num_rows()),
        blocks,
        structure,
        settings: *settings,
        hnorm: program.h.norm(),
        cnorm: program.c.norm(),
    };
    solver.run()
}

#[cfg(test)]
mod tests;

