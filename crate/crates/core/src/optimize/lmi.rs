//! Affine matrix expressions and an LMI problem builder on top of [`SdpProblem`].

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::sdp::{solve_sdp_with, LmiBlock, SdpOptions, SdpProblem, SdpSolution};
use super::OptimizeError;

/// Matrix-valued affine function of the decision vector:
/// `constant + Σ_i x_i · terms[i]`.
#[derive(Clone, Debug)]
pub struct Affine {
    pub rows: usize,
    pub cols: usize,
    pub constant: DMatrix<f64>,
    pub terms: BTreeMap<usize, DMatrix<f64>>,
}

impl Affine {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(DMatrix::zeros(rows, cols))
    }

    pub fn constant(m: DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            constant: m,
            terms: BTreeMap::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(DMatrix::identity(n, n))
    }

    pub fn value(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut v = self.constant.clone();
        for (i, t) in &self.terms {
            v += t * x[*i];
        }
        v
    }

    fn map(&self, f: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> Self {
        let constant = f(&self.constant);
        Self {
            rows: constant.nrows(),
            cols: constant.ncols(),
            terms: self.terms.iter().map(|(i, t)| (*i, f(t))).collect(),
            constant,
        }
    }

    pub fn add(&self, other: &Affine) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "affine shape mismatch");
        let mut out = self.clone();
        out.constant += &other.constant;
        for (i, t) in &other.terms {
            out.terms
                .entry(*i)
                .and_modify(|m| *m += t)
                .or_insert_with(|| t.clone());
        }
        out
    }

    pub fn sub(&self, other: &Affine) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|m| m * s)
    }

    /// `m · self`.
    pub fn lmul(&self, m: &DMatrix<f64>) -> Self {
        self.map(|t| m * t)
    }

    /// `self · m`.
    pub fn rmul(&self, m: &DMatrix<f64>) -> Self {
        self.map(|t| t * m)
    }

    pub fn transpose(&self) -> Self {
        self.map(|t| t.transpose())
    }

    /// `self + selfᵀ`.
    pub fn sym(&self) -> Self {
        self.add(&self.transpose())
    }

    /// Assemble a block matrix from a grid of expressions.
    pub fn blocks(grid: &[Vec<Affine>]) -> Self {
        let rows: Vec<usize> = grid.iter().map(|r| r[0].rows).collect();
        let cols: Vec<usize> = grid[0].iter().map(|e| e.cols).collect();
        let (nr, nc) = (rows.iter().sum(), cols.iter().sum());
        let mut out = Affine::zeros(nr, nc);
        let mut r0 = 0;
        for (bi, row) in grid.iter().enumerate() {
            let mut c0 = 0;
            for (bj, e) in row.iter().enumerate() {
                assert_eq!((e.rows, e.cols), (rows[bi], cols[bj]), "block grid shape mismatch");
                out.constant.view_mut((r0, c0), (e.rows, e.cols)).copy_from(&e.constant);
                for (i, t) in &e.terms {
                    out.terms
                        .entry(*i)
                        .or_insert_with(|| DMatrix::zeros(nr, nc))
                        .view_mut((r0, c0), (e.rows, e.cols))
                        .copy_from(t);
                }
                c0 += cols[bj];
            }
            r0 += rows[bi];
        }
        out
    }
}

/// Handle to a matrix variable registered with an [`LmiBuilder`].
#[derive(Clone, Debug)]
pub struct MatVar {
    pub expr: Affine,
    pub offset: usize,
    pub count: usize,
}

#[derive(Default)]
pub struct LmiBuilder {
    n_vars: usize,
    blocks: Vec<Affine>,
    eqs: Vec<(Affine, f64)>,
    objective: Option<Affine>,
}

impl LmiBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn scalar(&mut self) -> MatVar {
        self.matrix(1, 1)
    }

    /// General `rows × cols` matrix variable.
    pub fn matrix(&mut self, rows: usize, cols: usize) -> MatVar {
        let offset = self.n_vars;
        let mut expr = Affine::zeros(rows, cols);
        for j in 0..cols {
            for i in 0..rows {
                let mut e = DMatrix::zeros(rows, cols);
                e[(i, j)] = 1.0;
                expr.terms.insert(self.n_vars, e);
                self.n_vars += 1;
            }
        }
        MatVar {
            expr,
            offset,
            count: rows * cols,
        }
    }

    /// Symmetric `n × n` matrix variable.
    pub fn symmetric(&mut self, n: usize) -> MatVar {
        let offset = self.n_vars;
        let mut expr = Affine::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                let mut e = DMatrix::zeros(n, n);
                e[(i, j)] = 1.0;
                e[(j, i)] = 1.0;
                expr.terms.insert(self.n_vars, e);
                self.n_vars += 1;
            }
        }
        MatVar {
            expr,
            offset,
            count: n * (n + 1) / 2,
        }
    }

    /// `e ⪰ 0`.
    pub fn psd(&mut self, e: &Affine) {
        assert_eq!(e.rows, e.cols, "LMI block must be square");
        self.blocks.push(e.clone());
    }

    /// `e ⪰ δ I`.
    pub fn psd_margin(&mut self, e: &Affine, delta: f64) {
        self.psd(&e.sub(&Affine::identity(e.rows).scale(delta)));
    }

    /// `e ⪯ −δ I`.
    pub fn nsd_margin(&mut self, e: &Affine, delta: f64) {
        self.psd_margin(&e.scale(-1.0), delta);
    }

    /// Scalar equality `e = value` for a `1 × 1` expression.
    pub fn equal(&mut self, e: &Affine, value: f64) {
        assert_eq!((e.rows, e.cols), (1, 1));
        self.eqs.push((e.clone(), value));
    }

    pub fn minimize(&mut self, e: &Affine) {
        assert_eq!((e.rows, e.cols), (1, 1), "objective must be scalar");
        self.objective = Some(e.clone());
    }

    pub fn build(&self) -> SdpProblem {
        let mut p = SdpProblem::new(self.n_vars);
        if let Some(obj) = &self.objective {
            for (i, t) in &obj.terms {
                p.objective[*i] = t[(0, 0)];
            }
        }
        for b in &self.blocks {
            let symm = |m: &DMatrix<f64>| (m + m.transpose()) * 0.5;
            p.blocks.push(LmiBlock {
                dim: b.rows,
                constant: symm(&b.constant),
                coeffs: b
                    .terms
                    .iter()
                    .filter(|(_, t)| t.amax() > 0.0)
                    .map(|(i, t)| (*i, symm(t)))
                    .collect(),
            });
        }
        let q = self.eqs.len();
        p.eq_a = DMatrix::zeros(q, self.n_vars);
        p.eq_b = DVector::zeros(q);
        for (r, (e, v)) in self.eqs.iter().enumerate() {
            for (i, t) in &e.terms {
                p.eq_a[(r, *i)] = t[(0, 0)];
            }
            p.eq_b[r] = v - e.constant[(0, 0)];
        }
        p
    }

    pub fn solve(&self) -> Result<SdpSolution, OptimizeError> {
        self.solve_with(&SdpOptions::default())
    }

    pub fn solve_with(&self, opts: &SdpOptions) -> Result<SdpSolution, OptimizeError> {
        solve_sdp_with(&self.build(), opts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_assembly_places_terms() {
        let mut b = LmiBuilder::new();
        let x = b.scalar();
        let e = Affine::blocks(&[
            vec![x.expr.clone(), Affine::zeros(1, 1)],
            vec![Affine::zeros(1, 1), Affine::identity(1)],
        ]);
        let v = e.value(&DVector::from_vec(vec![3.0]));
        assert_eq!(v, DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]));
    }

    #[test]
    fn lyapunov_stable_system_is_feasible() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]);
        let mut b = LmiBuilder::new();
        let p = b.symmetric(2);
        b.psd_margin(&p.expr, 1e-6);
        let lyap = p.expr.lmul(&a.transpose()).add(&p.expr.rmul(&a));
        b.nsd_margin(&lyap, 1e-6);
        let mut tr = Affine::zeros(1, 1);
        for k in 0..2 {
            let sel = DMatrix::from_fn(1, 2, |_, j| if j == k { 1.0 } else { 0.0 });
            tr = tr.add(&p.expr.lmul(&sel).rmul(&sel.transpose()));
        }
        b.minimize(&tr);
        assert!(b.solve().is_ok());
    }

    #[test]
    fn lyapunov_unstable_system_is_infeasible() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]);
        let mut b = LmiBuilder::new();
        let p = b.symmetric(2);
        b.psd_margin(&p.expr, 1e-6);
        let lyap = p.expr.lmul(&a.transpose()).add(&p.expr.rmul(&a));
        b.nsd_margin(&lyap, 1e-6);
        let r = b.solve();
        assert!(matches!(r, Err(OptimizeError::SdpInfeasible { .. })));
    }
}
