//! Reduced KKT solves through the normal equations H = Gᵀ W⁻² G.
//!
//! Cone blocks with small column support are assembled into a block-diagonal
//! matrix whose diagonal blocks are the connected components of variables.
//! Blocks touching many columns enter as a low-rank Woodbury update.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::cone::{Block, Scaling};
use super::Cone;

/// Row-compressed constraint matrix.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Csr {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col: Vec<usize>,
    pub val: Vec<f64>,
}

impl Csr {
    pub fn from_dense(g: &DMatrix<f64>) -> Self {
        let mut row_ptr = vec![0];
        let mut col = Vec::new();
        let mut val = Vec::new();
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let v = g[(i, j)];
                if v != 0.0 {
                    col.push(j);
                    val.push(v);
                }
            }
            row_ptr.push(col.len());
        }
        Self {
            nrows: g.nrows(),
            ncols: g.ncols(),
            row_ptr,
            col,
            val,
        }
    }

    /// Builds from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
        for &(i, j, v) in triplets {
            rows[i].push((j, v));
        }
        let mut row_ptr = vec![0];
        let mut col = Vec::new();
        let mut val = Vec::new();
        for mut r in rows {
            r.sort_by_key(|e| e.0);
            let mut k = 0;
            while k < r.len() {
                let j = r[k].0;
                let mut v = 0.0;
                while k < r.len() && r[k].0 == j {
                    v += r[k].1;
                    k += 1;
                }
                if v != 0.0 {
                    col.push(j);
                    val.push(v);
                }
            }
            row_ptr.push(col.len());
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col,
            val,
        }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col[r.clone()].iter().copied().zip(self.val[r].iter().copied())
    }

    pub fn mul(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.nrows, |i, _| self.row(i).map(|(j, v)| v * x[j]).sum())
    }

    pub fn tmul(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.ncols);
        for i in 0..self.nrows {
            let zi = z[i];
            if zi != 0.0 {
                for (j, v) in self.row(i) {
                    out[j] += v * zi;
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                g[(i, j)] = v;
            }
        }
        g
    }
}

/// A group of rows that scale together: one nonnegative row or one
/// second-order block.
#[derive(Debug, Clone)]
struct Unit {
    block: usize,
    /// Offset of the unit's first row inside its block.
    offset: usize,
    rows: std::ops::Range<usize>,
    support: Vec<usize>,
}

/// Static structure shared by every iteration of one solve.
#[derive(Debug, Clone)]
pub(crate) struct Structure {
    sparse: Vec<Unit>,
    dense: Vec<Unit>,
    /// Variables of each component, sorted.
    components: Vec<Vec<usize>>,
    /// (component, local index) for each variable.
    position: Vec<(usize, usize)>,
    full_dense: bool,
}

fn find(parent: &mut [usize], mut a: usize) -> usize {
    while parent[a] != a {
        parent[a] = parent[parent[a]];
        a = parent[a];
    }
    a
}

impl Structure {
    pub fn analyse(g: &Csr, blocks: &[Block]) -> Self {
        let n = g.ncols;
        let dense_cut = 16usize.max(n / 10);
        let mut sparse = Vec::new();
        let mut dense = Vec::new();
        for (k, b) in blocks.iter().enumerate() {
            let groups: Vec<(usize, std::ops::Range<usize>)> = match b.cone {
                Cone::NonNegative(_) => (0..b.dim).map(|i| (i, b.start + i..b.start + i + 1)).collect(),
                Cone::SecondOrder(_) => vec![(0, b.start..b.start + b.dim)],
            };
            for (offset, rows) in groups {
                let mut support: Vec<usize> = rows.clone().flat_map(|i| g.row(i).map(|(j, _)| j)).collect();
                support.sort_unstable();
                support.dedup();
                if support.is_empty() {
                    continue;
                }
                let unit = Unit {
                    block: k,
                    offset,
                    rows,
                    support,
                };
                if unit.support.len() > dense_cut {
                    dense.push(unit);
                } else {
                    sparse.push(unit);
                }
            }
        }

        let mut parent: Vec<usize> = (0..n).collect();
        let mut covered = vec![false; n];
        for u in &sparse {
            let r0 = find(&mut parent, u.support[0]);
            for &j in &u.support {
                covered[j] = true;
                let rj = find(&mut parent, j);
                if rj != r0 {
                    parent[rj] = r0;
                }
            }
        }
        let mut comp_of_root = vec![usize::MAX; n];
        let mut components: Vec<Vec<usize>> = Vec::new();
        let mut position = vec![(0, 0); n];
        for j in 0..n {
            let r = find(&mut parent, j);
            if comp_of_root[r] == usize::MAX {
                comp_of_root[r] = components.len();
                components.push(Vec::new());
            }
            let c = comp_of_root[r];
            position[j] = (c, components[c].len());
            components[c].push(j);
        }
        let largest = components.iter().map(Vec::len).max().unwrap_or(0);
        let full_dense = covered.iter().any(|c| !c) && !dense.is_empty()
            || (largest > 400 && largest * 2 > n)
            || dense.iter().map(|u| u.rows.len()).sum::<usize>() > n / 2;
        Self {
            sparse,
            dense,
            components,
            position,
            full_dense,
        }
    }
}

/// Factorization of the regularized normal matrix at one scaling.
pub(crate) struct NormalSolver<'a> {
    g: &'a Csr,
    scaling: &'a Scaling,
    kind: Factor,
}

enum Factor {
    Full(Cholesky<f64, Dyn>),
    Structured {
        comps: Vec<Cholesky<f64, Dyn>>,
        components: Vec<Vec<usize>>,
        dense: Option<DenseRows>,
    },
}

/// Rows of dense units, kept in augmented form: U = G_dᵀ, Y = H_s⁻¹ U and
/// the Cholesky factor of W_d² + Uᵀ Y. Their duals are solved for directly
/// rather than recovered through W_d⁻², which is unbounded as the slack of
/// an active row vanishes.
struct DenseRows {
    rows: Vec<usize>,
    u: DMatrix<f64>,
    y: DMatrix<f64>,
    schur: Cholesky<f64, Dyn>,
}

fn local_rows(g: &Csr, rows: &std::ops::Range<usize>, support: &[usize]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows.len(), support.len());
    for (li, i) in rows.clone().enumerate() {
        for (j, v) in g.row(i) {
            let lj = support.binary_search(&j).expect("support covers row");
            m[(li, lj)] = v;
        }
    }
    m
}

fn unit_scaling(scaling: &Scaling, u: &Unit, power: i32) -> DMatrix<f64> {
    match scaling.blocks[u.block].cone {
        Cone::NonNegative(_) => DMatrix::from_element(1, 1, scaling.nonneg_entry(u.block, u.offset, power)),
        Cone::SecondOrder(_) => scaling.block_matrix(u.block, power),
    }
}

fn cholesky_with_shift(mut m: DMatrix<f64>, reg: f64) -> Option<Cholesky<f64, Dyn>> {
    let scale = m.diagonal().amax().max(1.0);
    let mut shift = reg;
    for i in 0..m.nrows() {
        m[(i, i)] += shift;
    }
    for _ in 0..8 {
        if let Some(c) = Cholesky::new(m.clone()) {
            return Some(c);
        }
        let bump = shift * 99.0 + 1e-14 * scale;
        for i in 0..m.nrows() {
            m[(i, i)] += bump;
        }
        shift += bump;
    }
    None
}

impl<'a> NormalSolver<'a> {
    pub fn factor(g: &'a Csr, structure: &Structure, scaling: &'a Scaling, reg: f64) -> Option<Self> {
        let n = g.ncols;
        let all_units = structure.sparse.iter().chain(structure.dense.iter());
        if structure.full_dense {
            let mut h = DMatrix::zeros(n, n);
            for u in all_units {
                add_unit(&mut h, g, scaling, u, |j| j);
            }
            let chol = cholesky_with_shift(h, reg)?;
            return Some(Self {
                g,
                scaling,
                kind: Factor::Full(chol),
            });
        }
        let mut mats: Vec<DMatrix<f64>> = structure
            .components
            .iter()
            .map(|c| DMatrix::zeros(c.len(), c.len()))
            .collect();
        for u in &structure.sparse {
            let (c, _) = structure.position[u.support[0]];
            let pos = &structure.position;
            add_unit(&mut mats[c], g, scaling, u, |j| pos[j].1);
        }
        let mut comps = Vec::with_capacity(mats.len());
        for m in mats {
            comps.push(cholesky_with_shift(m, reg)?);
        }
        let mut solver = Self {
            g,
            scaling,
            kind: Factor::Structured {
                comps,
                components: structure.components.clone(),
                dense: None,
            },
        };
        if !structure.dense.is_empty() {
            let k: usize = structure.dense.iter().map(|u| u.rows.len()).sum();
            let mut big_u = DMatrix::zeros(n, k);
            let mut w2 = DMatrix::zeros(k, k);
            let mut rows = Vec::with_capacity(k);
            let mut off = 0;
            for u in &structure.dense {
                let p = u.rows.len();
                rows.extend(u.rows.clone());
                for (li, i) in u.rows.clone().enumerate() {
                    for (j, v) in g.row(i) {
                        big_u[(j, off + li)] = v;
                    }
                }
                w2.view_mut((off, off), (p, p)).copy_from(&unit_scaling(scaling, u, 2));
                off += p;
            }
            let mut y = DMatrix::zeros(n, k);
            for col in 0..k {
                let r = big_u.column(col).into_owned();
                y.set_column(col, &solver.solve_sparse(&r));
            }
            let s = w2 + big_u.transpose() * &y;
            let s = 0.5 * (&s + s.transpose());
            let schur = cholesky_with_shift(s, 0.0)?;
            if let Factor::Structured { dense, .. } = &mut solver.kind {
                *dense = Some(DenseRows {
                    rows,
                    u: big_u,
                    y,
                    schur,
                });
            }
        }
        Some(solver)
    }

    fn solve_sparse(&self, r: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            Factor::Full(c) => c.solve(r),
            Factor::Structured {
                comps, components, ..
            } => {
                let mut out = DVector::zeros(r.len());
                for (c, vars) in comps.iter().zip(components) {
                    let local = DVector::from_iterator(vars.len(), vars.iter().map(|&j| r[j]));
                    let sol = c.solve(&local);
                    for (l, &j) in vars.iter().enumerate() {
                        out[j] = sol[l];
                    }
                }
                out
            }
        }
    }

    /// Solves H x = r with H = Gᵀ W⁻² G + regularization.
    pub fn solve_normal(&self, r: &DVector<f64>) -> DVector<f64> {
        let y0 = self.solve_sparse(r);
        match &self.kind {
            Factor::Structured { dense: Some(d), .. } => {
                let t = d.u.transpose() * &y0;
                let w = d.schur.solve(&t);
                y0 - &d.y * w
            }
            _ => y0,
        }
    }

    /// Solves [0 Gᵀ; G −W²] [x; z] = [r1; r2] with iterative refinement.
    pub fn solve_kkt(&self, r1: &DVector<f64>, r2: &DVector<f64>, refine: usize) -> (DVector<f64>, DVector<f64>) {
        let (mut x, mut z) = self.reduced(r1, r2);
        for _ in 0..refine {
            let e1 = r1 - self.g.tmul(&z);
            let e2 = r2 - (self.g.mul(&x) - self.scaling.apply_w2(&z));
            let err = e1.amax().max(e2.amax());
            if err <= 1e-15 * (1.0 + r1.amax().max(r2.amax())) {
                break;
            }
            let (dx, dz) = self.reduced(&e1, &e2);
            x += dx;
            z += dz;
        }
        (x, z)
    }

    fn reduced(&self, r1: &DVector<f64>, r2: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let Factor::Structured { dense: Some(d), .. } = &self.kind else {
            let rhs = r1 + self.g.tmul(&self.scaling.apply_winv2(r2));
            let x = self.solve_normal(&rhs);
            let z = self.scaling.apply_winv2(&(self.g.mul(&x) - r2));
            return (x, z);
        };
        // Sparse rows are eliminated through W_s⁻²; dense duals z_d come
        // from (W_d² + Uᵀ H_s⁻¹ U) z_d = Uᵀ H_s⁻¹ rhs_s − r2_d.
        let mut r2_sparse = r2.clone();
        for &i in &d.rows {
            r2_sparse[i] = 0.0;
        }
        let mut w_r2 = self.scaling.apply_winv2(&r2_sparse);
        for &i in &d.rows {
            w_r2[i] = 0.0;
        }
        let rhs = r1 + self.g.tmul(&w_r2);
        let y0 = self.solve_sparse(&rhs);
        let r2_dense = DVector::from_iterator(d.rows.len(), d.rows.iter().map(|&i| r2[i]));
        let z_dense = d.schur.solve(&(d.u.transpose() * &y0 - r2_dense));
        let x = y0 - &d.y * &z_dense;
        let mut resid = self.g.mul(&x) - r2;
        for &i in &d.rows {
            resid[i] = 0.0;
        }
        let mut z = self.scaling.apply_winv2(&resid);
        for (l, &i) in d.rows.iter().enumerate() {
            z[i] = z_dense[l];
        }
        (x, z)
    }
}

fn add_unit(h: &mut DMatrix<f64>, g: &Csr, scaling: &Scaling, u: &Unit, index: impl Fn(usize) -> usize) {
    let gl = local_rows(g, &u.rows, &u.support);
    let winv2 = unit_scaling(scaling, u, -2);
    let contrib = gl.transpose() * winv2 * &gl;
    for (a, &ja) in u.support.iter().enumerate() {
        for (b, &jb) in u.support.iter().enumerate() {
            h[(index(ja), index(jb))] += contrib[(a, b)];
        }
    }
}
