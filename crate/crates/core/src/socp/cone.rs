use nalgebra::{DMatrix, DVector};

use super::Cone;

/// A cone block located in the stacked slack vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Block {
    pub cone: Cone,
    pub start: usize,
    pub dim: usize,
}

pub(crate) fn layout(cones: &[Cone]) -> Vec<Block> {
    let mut start = 0;
    cones
        .iter()
        .map(|&cone| {
            let dim = cone.dim();
            let b = Block { cone, start, dim };
            start += dim;
            b
        })
        .collect()
}

/// Barrier degree: one per nonnegative coordinate, one per second-order block.
pub(crate) fn degree(blocks: &[Block]) -> usize {
    blocks
        .iter()
        .map(|b| match b.cone {
            Cone::NonNegative(d) => d,
            Cone::SecondOrder(_) => 1,
        })
        .sum()
}

pub(crate) fn identity(blocks: &[Block], m: usize) -> DVector<f64> {
    let mut e = DVector::zeros(m);
    for b in blocks {
        match b.cone {
            Cone::NonNegative(_) => e.rows_mut(b.start, b.dim).fill(1.0),
            Cone::SecondOrder(_) => e[b.start] = 1.0,
        }
    }
    e
}

fn tail_norm(v: &DVector<f64>, b: &Block) -> f64 {
    v.rows(b.start + 1, b.dim - 1).norm()
}

/// Smallest spectral value of x over all blocks.
pub(crate) fn min_eigenvalue(blocks: &[Block], x: &DVector<f64>) -> f64 {
    let mut lo = f64::INFINITY;
    for b in blocks {
        match b.cone {
            Cone::NonNegative(_) => {
                for i in b.start..b.start + b.dim {
                    lo = lo.min(x[i]);
                }
            }
            Cone::SecondOrder(_) => lo = lo.min(x[b.start] - tail_norm(x, b)),
        }
    }
    lo
}

pub(crate) fn jordan_product(blocks: &[Block], u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let mut w = DVector::zeros(u.len());
    for b in blocks {
        let (s, d) = (b.start, b.dim);
        match b.cone {
            Cone::NonNegative(_) => {
                for i in s..s + d {
                    w[i] = u[i] * v[i];
                }
            }
            Cone::SecondOrder(_) => {
                w[s] = u.rows(s, d).dot(&v.rows(s, d));
                for i in s + 1..s + d {
                    w[i] = u[s] * v[i] + v[s] * u[i];
                }
            }
        }
    }
    w
}

/// Solves λ ∘ w = d for w.
pub(crate) fn jordan_divide(blocks: &[Block], lam: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
    let mut w = DVector::zeros(lam.len());
    for b in blocks {
        let (s, n) = (b.start, b.dim);
        match b.cone {
            Cone::NonNegative(_) => {
                for i in s..s + n {
                    w[i] = d[i] / lam[i];
                }
            }
            Cone::SecondOrder(_) => {
                let l0 = lam[s];
                let l1 = lam.rows(s + 1, n - 1);
                let d1 = d.rows(s + 1, n - 1);
                let det = (l0 - l1.norm()) * (l0 + l1.norm());
                let w0 = (l0 * d[s] - l1.dot(&d1)) / det;
                w[s] = w0;
                for i in 1..n {
                    w[s + i] = (d[s + i] - w0 * lam[s + i]) / l0;
                }
            }
        }
    }
    w
}

/// Largest α with x + α·dx in the cone, for x strictly inside.
pub(crate) fn max_step(blocks: &[Block], x: &DVector<f64>, dx: &DVector<f64>) -> f64 {
    let mut alpha = f64::INFINITY;
    for b in blocks {
        let (s, n) = (b.start, b.dim);
        match b.cone {
            Cone::NonNegative(_) => {
                for i in s..s + n {
                    if dx[i] < 0.0 {
                        alpha = alpha.min(-x[i] / dx[i]);
                    }
                }
            }
            Cone::SecondOrder(_) => {
                // Map x to the identity with a hyperbolic rotation, where the
                // step bound is explicit.
                let x1n = tail_norm(x, b);
                let nx = ((x[s] - x1n) * (x[s] + x1n)).max(0.0).sqrt();
                if nx == 0.0 {
                    return 0.0;
                }
                let x0 = x[s] / nx;
                let d0 = dx[s] / nx;
                let mut rho0 = x0 * d0;
                for i in 1..n {
                    rho0 -= (x[s + i] / nx) * (dx[s + i] / nx);
                }
                let c = (rho0 + d0) / (x0 + 1.0);
                let mut rho1 = 0.0;
                for i in 1..n {
                    let r = dx[s + i] / nx - c * x[s + i] / nx;
                    rho1 += r * r;
                }
                let t = rho1.sqrt() - rho0;
                if t > 0.0 {
                    alpha = alpha.min(1.0 / t);
                }
            }
        }
    }
    alpha
}

/// Nesterov–Todd scaling of one block.
#[derive(Debug, Clone)]
pub(crate) enum BlockScaling {
    NonNeg(DVector<f64>),
    Soc { eta: f64, w: DVector<f64> },
}

/// W with W·z = W⁻¹·s = λ for every block.
#[derive(Debug, Clone)]
pub(crate) struct Scaling {
    pub blocks: Vec<Block>,
    pub parts: Vec<BlockScaling>,
    pub lambda: DVector<f64>,
}

fn j_norm(v: &DVector<f64>, b: &Block) -> f64 {
    let t = tail_norm(v, b);
    let q = (v[b.start] - t) * (v[b.start] + t);
    if q > 0.0 {
        q.sqrt()
    } else {
        0.0
    }
}

impl Scaling {
    pub fn new(blocks: &[Block], s: &DVector<f64>, z: &DVector<f64>) -> Option<Self> {
        let mut parts = Vec::with_capacity(blocks.len());
        for b in blocks {
            let (st, n) = (b.start, b.dim);
            match b.cone {
                Cone::NonNegative(_) => {
                    let mut w = DVector::zeros(n);
                    for i in 0..n {
                        let (si, zi) = (s[st + i], z[st + i]);
                        if !(si > 0.0 && zi > 0.0) {
                            return None;
                        }
                        w[i] = (si / zi).sqrt();
                    }
                    parts.push(BlockScaling::NonNeg(w));
                }
                Cone::SecondOrder(_) => {
                    let ns = j_norm(s, b);
                    let nz = j_norm(z, b);
                    if !(ns > 0.0 && nz > 0.0) {
                        return None;
                    }
                    let sb = s.rows(st, n) / ns;
                    let zb = z.rows(st, n) / nz;
                    let gamma = ((1.0 + sb.dot(&zb)) / 2.0).sqrt();
                    let mut w = DVector::zeros(n);
                    w[0] = (sb[0] + zb[0]) / (2.0 * gamma);
                    for i in 1..n {
                        w[i] = (sb[i] - zb[i]) / (2.0 * gamma);
                    }
                    // Re-normalise so that w lies exactly on the unit hyperboloid.
                    let t = w.rows(1, n - 1).norm();
                    w[0] = (1.0 + t * t).sqrt();
                    parts.push(BlockScaling::Soc {
                        eta: (ns / nz).sqrt(),
                        w,
                    });
                }
            }
        }
        let mut sc = Scaling {
            blocks: blocks.to_vec(),
            parts,
            lambda: DVector::zeros(s.len()),
        };
        sc.lambda = sc.apply_w(z);
        Some(sc)
    }

    fn apply(&self, v: &DVector<f64>, power: i32) -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        for (b, p) in self.blocks.iter().zip(&self.parts) {
            let (s, n) = (b.start, b.dim);
            match p {
                BlockScaling::NonNeg(w) => {
                    for i in 0..n {
                        out[s + i] = w[i].powi(power) * v[s + i];
                    }
                }
                BlockScaling::Soc { eta, w } => {
                    let x = v.rows(s, n);
                    let mut o = out.rows_mut(s, n);
                    soc_apply(eta, w, &x.into_owned(), power, &mut o);
                }
            }
        }
        out
    }

    pub fn apply_w(&self, v: &DVector<f64>) -> DVector<f64> {
        self.apply(v, 1)
    }
    pub fn apply_winv(&self, v: &DVector<f64>) -> DVector<f64> {
        self.apply(v, -1)
    }
    pub fn apply_w2(&self, v: &DVector<f64>) -> DVector<f64> {
        self.apply(v, 2)
    }
    pub fn apply_winv2(&self, v: &DVector<f64>) -> DVector<f64> {
        self.apply(v, -2)
    }

    /// Dense p×p matrix of W^power restricted to one block.
    pub fn block_matrix(&self, k: usize, power: i32) -> DMatrix<f64> {
        let n = self.blocks[k].dim;
        match &self.parts[k] {
            BlockScaling::NonNeg(w) => DMatrix::from_diagonal(&w.map(|x| x.powi(power))),
            BlockScaling::Soc { eta, w } => {
                let mut m = DMatrix::zeros(n, n);
                for j in 0..n {
                    let mut e = DVector::zeros(n);
                    e[j] = 1.0;
                    let mut col = m.column_mut(j);
                    soc_apply(eta, w, &e, power, &mut col);
                }
                m
            }
        }
    }

    /// W^power for a single nonnegative coordinate `i` of block `k`.
    pub fn nonneg_entry(&self, k: usize, i: usize, power: i32) -> f64 {
        match &self.parts[k] {
            BlockScaling::NonNeg(w) => w[i].powi(power),
            BlockScaling::Soc { .. } => unreachable!("second-order block has no scalar scaling"),
        }
    }
}

fn soc_apply<S>(eta: &f64, w: &DVector<f64>, x: &DVector<f64>, power: i32, out: &mut nalgebra::Matrix<f64, nalgebra::Dyn, nalgebra::U1, S>)
where
    S: nalgebra::StorageMut<f64, nalgebra::Dyn, nalgebra::U1>,
{
    let n = w.len();
    let w0 = w[0];
    let w1x: f64 = (1..n).map(|i| w[i] * x[i]).sum();
    match power {
        1 | -1 => {
            // W = η [w0 w1ᵀ; w1 I + w1w1ᵀ/(1+w0)], W⁻¹ flips the sign of w1.
            let sg = power as f64;
            let scale = if power == 1 { *eta } else { 1.0 / eta };
            out[0] = scale * (w0 * x[0] + sg * w1x);
            let c = sg * x[0] + w1x / (1.0 + w0);
            for i in 1..n {
                out[i] = scale * (x[i] + c * w[i]);
            }
        }
        2 => {
            // η² (2 w wᵀ − J)
            let e2 = eta * eta;
            let wx = w0 * x[0] + w1x;
            out[0] = e2 * (2.0 * w0 * wx - x[0]);
            for i in 1..n {
                out[i] = e2 * (2.0 * w[i] * wx + x[i]);
            }
        }
        -2 => {
            // η⁻² (2 J w wᵀ J − J)
            let e2 = 1.0 / (eta * eta);
            let wjx = w0 * x[0] - w1x;
            out[0] = e2 * (2.0 * w0 * wjx - x[0]);
            for i in 1..n {
                out[i] = e2 * (-2.0 * w[i] * wjx + x[i]);
            }
        }
        _ => unreachable!("unsupported scaling power"),
    }
}
