use nalgebra::{DMatrix, DVector};

use super::cone::{jordan_product, min_eigenvalue, Block};
use super::kkt::Csr;
use super::Cone;

/// Largest n + m for which the dense polish system is formed.
pub(crate) const POLISH_MAX_DIM: usize = 400;

const POLISH_STEPS: usize = 4;

pub(crate) struct Point {
    pub x: DVector<f64>,
    pub s: DVector<f64>,
    pub z: DVector<f64>,
}

pub(crate) struct Polisher<'a> {
    pub g: &'a Csr,
    pub c: &'a DVector<f64>,
    pub h: &'a DVector<f64>,
    pub blocks: &'a [Block],
}

/// Dense matrix of v ∘ (·).
fn arrow(blocks: &[Block], v: &DVector<f64>) -> DMatrix<f64> {
    let m = v.len();
    let mut a = DMatrix::zeros(m, m);
    for b in blocks {
        let (s, d) = (b.start, b.dim);
        match b.cone {
            Cone::NonNegative(_) => {
                for i in s..s + d {
                    a[(i, i)] = v[i];
                }
            }
            Cone::SecondOrder(_) => {
                for i in s..s + d {
                    a[(s, i)] = v[i];
                    a[(i, s)] = v[i];
                    a[(i, i)] = v[s];
                }
            }
        }
    }
    a
}

impl Polisher<'_> {
    /// Worst of the scaled residuals, complementarity and cone violations.
    fn merit(&self, p: &Point) -> f64 {
        let rp = (self.g.mul(&p.x) + &p.s - self.h).norm() / (1.0 + self.h.norm());
        let rd = (self.g.tmul(&p.z) + self.c).norm() / (1.0 + self.c.norm());
        let scale = 1.0 + self.c.dot(&p.x).abs();
        let comp = jordan_product(self.blocks, &p.s, &p.z).amax() / scale;
        let vs = (-min_eigenvalue(self.blocks, &p.s)).max(0.0);
        let vz = (-min_eigenvalue(self.blocks, &p.z)).max(0.0);
        rp.max(rd).max(comp).max(vs).max(vz)
    }

    /// Newton steps on Gᵀz + c = 0, Gx + s = h, s ∘ z = 0 without centring.
    /// Near a strictly complementary solution this converges quadratically,
    /// removing the drift along the cone boundary that path following leaves.
    pub fn polish(&self, start: Point) -> Point {
        let n = start.x.len();
        let m = start.s.len();
        let gd = self.g.to_dense();
        let mut best_merit = self.merit(&start);
        let mut cur = Point {
            x: start.x.clone(),
            s: start.s.clone(),
            z: start.z.clone(),
        };
        let mut best = start;
        // The first step may raise the merit through its quadratic
        // complementarity term, so every step is taken and the best kept.
        for _ in 0..POLISH_STEPS {
            let rd = self.g.tmul(&cur.z) + self.c;
            let rp = self.g.mul(&cur.x) + &cur.s - self.h;
            let rc = jordan_product(self.blocks, &cur.s, &cur.z);
            let lz = arrow(self.blocks, &cur.z);
            let ls = arrow(self.blocks, &cur.s);
            // Unknowns (dx, dz) with ds = −rp − G dx eliminated.
            let mut k = DMatrix::zeros(n + m, n + m);
            k.view_mut((0, n), (n, m)).copy_from(&gd.transpose());
            k.view_mut((n, 0), (m, n)).copy_from(&(-(&lz * &gd)));
            k.view_mut((n, n), (m, m)).copy_from(&ls);
            let mut rhs = DVector::zeros(n + m);
            rhs.rows_mut(0, n).copy_from(&(-&rd));
            rhs.rows_mut(n, m).copy_from(&(&lz * &rp - &rc));
            let Some(sol) = k.lu().solve(&rhs) else { break };
            if !sol.iter().all(|v| v.is_finite()) {
                break;
            }
            let dx = sol.rows(0, n).into_owned();
            let dz = sol.rows(n, m).into_owned();
            let ds = -&rp - &gd * &dx;
            cur = Point {
                x: &cur.x + dx,
                s: &cur.s + ds,
                z: &cur.z + dz,
            };
            let mt = self.merit(&cur);
            if mt < best_merit {
                best_merit = mt;
                best = Point {
                    x: cur.x.clone(),
                    s: cur.s.clone(),
                    z: cur.z.clone(),
                };
            }
        }
        best
    }
}
