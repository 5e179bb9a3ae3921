use nalgebra::{DMatrix, DVector, Matrix2, RowDVector, Vector2};

use super::{Linearization, ManeuverPlan, ScvxConfig, ScvxError};
use crate::socp::{Cone, ConeProgram, ConeSpec};

/// Half-width of the slab used to pose an equality on the b-plane point (km).
pub(crate) const TERMINAL_SLAB: f64 = 1e-6;

/// Affine encounter model of one major iteration.
///
/// Decision vectors are [Δv_0..Δv_{N−1}; σ_0..σ_{N−1}] in m/s, which keeps
/// the cone program well scaled.
#[derive(Debug, Clone, PartialEq)]
pub struct Convexified {
    pub n: usize,
    /// b-plane displacement per unit Δv (km per m/s), 2 × 3N.
    pub ca: DMatrix<f64>,
    /// Closest-approach shift per unit Δv (s per m/s), 1 × 3N.
    pub ba: RowDVector<f64>,
    /// Decision vector of the reference trajectory.
    pub x_prev: DVector<f64>,
    pub(crate) dr_offset: Vector2<f64>,
    pub(crate) tca_offset: f64,
}

enum Terminal<'a> {
    HalfPlane { z: &'a Vector2<f64>, c_eff: &'a Matrix2<f64> },
    Point(&'a Vector2<f64>),
}

impl Convexified {
    pub fn new(lin: &Linearization, x_prev: &DVector<f64>) -> Result<Self, ScvxError> {
        let n = lin.a_big.ncols() / 4;
        if lin.a_big.nrows() != 6 || lin.a_big.ncols() != 4 * n || x_prev.len() != 4 * n {
            return Err(ScvxError::DimensionMismatch(format!(
                "map is {}x{}, reference decision has {} entries",
                lin.a_big.nrows(),
                lin.a_big.ncols(),
                x_prev.len()
            )));
        }
        let a_dv = lin.a_big.columns(0, 3 * n);
        let c = DMatrix::from_column_slice(2, 6, lin.c_mat.as_slice());
        let b = RowDVector::from_row_slice(lin.b_row.as_slice());
        let ca = &c * a_dv * 1e-3;
        let ba = &b * a_dv * 1e-3;
        let dv_prev = x_prev.rows(0, 3 * n);
        let cx = &ca * dv_prev;
        let dr_offset = lin.dr_b_ref - Vector2::new(cx[0], cx[1]);
        let tca_offset = lin.tca_ref - (&ba * dv_prev)[0];
        Ok(Self {
            n,
            ca,
            ba,
            x_prev: x_prev.clone(),
            dr_offset,
            tca_offset,
        })
    }

    /// Predicted b-plane position (km) and closest-approach epoch (s).
    pub fn predict(&self, x: &DVector<f64>) -> (Vector2<f64>, f64) {
        let dv = x.rows(0, 3 * self.n);
        let cx = &self.ca * dv;
        (
            Vector2::new(cx[0], cx[1]) + self.dr_offset,
            (&self.ba * dv)[0] + self.tca_offset,
        )
    }

    /// Subproblem with the keep-out ellipse replaced by its tangent
    /// half-plane at `z`.
    pub fn half_plane_program(
        &self,
        z: &Vector2<f64>,
        c_eff: &Matrix2<f64>,
        config: &ScvxConfig,
    ) -> Result<ConeProgram, ScvxError> {
        self.program(Terminal::HalfPlane { z, c_eff }, config)
    }

    /// Subproblem that steers the linear model onto `target`.
    pub fn terminal_program(&self, target: &Vector2<f64>, config: &ScvxConfig) -> Result<ConeProgram, ScvxError> {
        self.program(Terminal::Point(target), config)
    }

    fn program(&self, terminal: Terminal<'_>, config: &ScvxConfig) -> Result<ConeProgram, ScvxError> {
        let n = self.n;
        let nv = 4 * n;
        let sigma = |i: usize| 3 * n + i;
        let dv_max = config.dv_max * 1e3;
        let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(12 * n + 16 * n);
        let mut h = Vec::new();
        let mut row = 0;

        // 0 ≤ σ_i ≤ Δv̄
        for i in 0..n {
            trip.push((row, sigma(i), -1.0));
            h.push(0.0);
            row += 1;
        }
        for i in 0..n {
            trip.push((row, sigma(i), 1.0));
            h.push(dv_max);
            row += 1;
        }
        let push_dense = |row: usize, coeff: &RowDVector<f64>, trip: &mut Vec<(usize, usize, f64)>| {
            for (j, &v) in coeff.iter().enumerate() {
                if v != 0.0 {
                    trip.push((row, j, v));
                }
            }
        };
        let tangent_rows = match terminal {
            Terminal::HalfPlane { z, c_eff } => {
                // ∇d²(z)·(C𝔸x + offset − z) ≥ 0 with the gradient normalised.
                let chol = c_eff.cholesky().ok_or(ScvxError::InvalidConfig(
                    "ellipse metric must be positive definite".into(),
                ))?;
                let grad = chol.solve(z) * 2.0;
                let gn = grad.norm();
                if !(gn > 0.0 && gn.is_finite()) {
                    return Err(ScvxError::InvalidConfig("projection point at the ellipse centre".into()));
                }
                let g = grad / gn;
                let coeff = self.ca.row(0) * g[0] + self.ca.row(1) * g[1];
                push_dense(row, &(-&coeff), &mut trip);
                h.push(g.dot(&(self.dr_offset - z)));
                row += 1;
                1
            }
            Terminal::Point(target) => {
                // |C𝔸x + offset − target| ≤ slab, coordinate-wise.
                let gap = self.dr_offset - target;
                for k in 0..2 {
                    let r = self.ca.row(k).into_owned();
                    push_dense(row, &r, &mut trip);
                    h.push(TERMINAL_SLAB - gap[k]);
                    row += 1;
                    push_dense(row, &(-&r), &mut trip);
                    h.push(TERMINAL_SLAB + gap[k]);
                    row += 1;
                }
                4
            }
        };

        // (σ_i, Δv_i) ∈ SOC(4)
        for i in 0..n {
            trip.push((row, sigma(i), -1.0));
            h.push(0.0);
            for k in 0..3 {
                trip.push((row + 1 + k, 3 * i + k, -1.0));
                h.push(0.0);
            }
            row += 4;
        }

        // |C𝔸(x − x_prev)| ≤ cap
        h.push(config.bplane_deviation_cap);
        row += 1;
        let shift = &self.ca * self.x_prev.rows(0, 3 * n);
        for k in 0..2 {
            let r = self.ca.row(k).into_owned();
            push_dense(row, &(-&r), &mut trip);
            h.push(-shift[k]);
            row += 1;
        }

        let mut cones = vec![Cone::NonNegative(2 * n + tangent_rows)];
        cones.extend(std::iter::repeat_n(Cone::SecondOrder(4), n));
        cones.push(Cone::SecondOrder(3));
        let mut c = DVector::zeros(nv);
        c.rows_mut(3 * n, n).fill(1.0);
        ConeProgram::from_triplets(c, row, &trip, DVector::from_vec(h), ConeSpec::new(cones))
            .map_err(|e| ScvxError::DimensionMismatch(e.to_string()))
    }
}

/// Cone program of one minor iteration: linear model about `lin` with
/// reference decision from `plan_prev`, half-plane tangent at `z`.
pub fn assemble_subproblem(
    lin: &Linearization,
    plan_prev: &ManeuverPlan,
    z: &Vector2<f64>,
    c_eff: &Matrix2<f64>,
    config: &ScvxConfig,
) -> Result<ConeProgram, ScvxError> {
    Convexified::new(lin, &plan_prev.decision())?.half_plane_program(z, c_eff, config)
}
