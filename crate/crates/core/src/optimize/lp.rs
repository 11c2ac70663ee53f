//! Dense revised simplex for `min cᵀx  s.t.  A x = b, 0 ≤ x (≤ u)`.
//!
//! Two-phase method with artificial variables. Pricing is Dantzig's rule
//! (most negative reduced cost, lowest index on ties); after a degenerate
//! pivot the solver switches to Bland's rule until it makes progress again.
//! The basis is refactored from scratch every iteration, which is cheap for
//! the problem sizes produced by the shape controller.

use nalgebra::{DMatrix, DVector};

use super::OptimizeError;

/// Nonnegative linear program.
#[derive(Clone, Debug)]
pub struct NonnegLp {
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub cost: DVector<f64>,
    /// Optional componentwise upper bounds (`f64::INFINITY` allowed).
    pub upper: Option<DVector<f64>>,
}

impl NonnegLp {
    pub fn new(a_eq: DMatrix<f64>, b_eq: DVector<f64>, cost: DVector<f64>) -> Self {
        Self {
            a_eq,
            b_eq,
            cost,
            upper: None,
        }
    }

    pub fn with_upper(mut self, upper: DVector<f64>) -> Self {
        self.upper = Some(upper);
        self
    }
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// `‖A x − b‖∞` at the returned point.
    pub residual: f64,
}

const MAX_ITER_FACTOR: usize = 50;

struct Tableau {
    a: DMatrix<f64>,
    b: DVector<f64>,
    basis: Vec<usize>,
    rows: Vec<usize>,
    iterations: usize,
    max_iter: usize,
}

/// Solve the LP. Returns the optimal basic feasible solution.
pub fn solve_nonneg_lp(problem: &NonnegLp) -> Result<LpSolution, OptimizeError> {
    let (m0, n0) = problem.a_eq.shape();
    if problem.b_eq.len() != m0 || problem.cost.len() != n0 {
        return Err(OptimizeError::Dimension(format!(
            "A is {m0}x{n0}, b has {}, c has {}",
            problem.b_eq.len(),
            problem.cost.len()
        )));
    }
    if let Some(u) = &problem.upper {
        if u.len() != n0 {
            return Err(OptimizeError::Dimension("upper bound length".into()));
        }
        if u.iter().any(|v| *v < 0.0 || v.is_nan()) {
            return Err(OptimizeError::Infeasible {
                residual: f64::INFINITY,
            });
        }
    }
    if problem.a_eq.iter().chain(problem.b_eq.iter()).chain(problem.cost.iter()).any(|v| !v.is_finite()) {
        return Err(OptimizeError::Dimension("non-finite problem data".into()));
    }

    // Finite upper bounds become rows x_j + s_j = u_j.
    let bounded: Vec<(usize, f64)> = problem
        .upper
        .as_ref()
        .map(|u| {
            u.iter()
                .enumerate()
                .filter(|(_, v)| v.is_finite())
                .map(|(j, v)| (j, *v))
                .collect()
        })
        .unwrap_or_default();
    let m = m0 + bounded.len();
    let n = n0 + bounded.len();
    let mut a = DMatrix::zeros(m, n);
    let mut b = DVector::zeros(m);
    let mut c = DVector::zeros(n);
    a.view_mut((0, 0), (m0, n0)).copy_from(&problem.a_eq);
    b.rows_mut(0, m0).copy_from(&problem.b_eq);
    c.rows_mut(0, n0).copy_from(&problem.cost);
    for (k, (j, u)) in bounded.iter().enumerate() {
        a[(m0 + k, *j)] = 1.0;
        a[(m0 + k, n0 + k)] = 1.0;
        b[m0 + k] = *u;
    }

    // Phase 1: artificial column per row, rows flipped so b ≥ 0.
    for i in 0..m {
        if b[i] < 0.0 {
            b[i] = -b[i];
            for j in 0..n {
                a[(i, j)] = -a[(i, j)];
            }
        }
    }
    let mut full = DMatrix::zeros(m, n + m);
    full.view_mut((0, 0), (m, n)).copy_from(&a);
    for i in 0..m {
        full[(i, n + i)] = 1.0;
    }
    let mut tab = Tableau {
        a: full,
        b: b.clone(),
        basis: (n..n + m).collect(),
        rows: (0..m).collect(),
        iterations: 0,
        max_iter: MAX_ITER_FACTOR * (n + m + 10),
    };
    let scale = 1.0 + b.amax();
    let mut c1 = DVector::zeros(n + m);
    for i in 0..m {
        c1[n + i] = 1.0;
    }
    run_simplex(&mut tab, &c1, n + m)?;
    let xb = basic_values(&tab)?;
    let infeas: f64 = tab
        .basis
        .iter()
        .zip(xb.iter())
        .filter(|(j, _)| **j >= n)
        .map(|(_, v)| v.abs())
        .sum();
    if infeas > 1e-9 * scale {
        return Err(OptimizeError::Infeasible { residual: infeas });
    }
    drive_out_artificials(&mut tab, n)?;

    // Phase 2 on the original columns.
    let mut c2 = DVector::zeros(n + m);
    c2.rows_mut(0, n).copy_from(&c);
    run_simplex(&mut tab, &c2, n)?;

    let mut xb = basic_values(&tab)?;
    refine(&tab, &mut xb);
    let mut x_full = DVector::zeros(n);
    for (k, &j) in tab.basis.iter().enumerate() {
        if j < n {
            x_full[j] = xb[k].max(0.0);
        }
    }
    let x = x_full.rows(0, n0).into_owned();
    let residual = (&problem.a_eq * &x - &problem.b_eq).amax();
    let objective = problem.cost.dot(&x);
    Ok(LpSolution {
        x,
        objective,
        iterations: tab.iterations,
        residual,
    })
}

fn basis_matrix(tab: &Tableau) -> DMatrix<f64> {
    let m = tab.rows.len();
    let mut bm = DMatrix::zeros(m, m);
    for (k, &j) in tab.basis.iter().enumerate() {
        for (r, &i) in tab.rows.iter().enumerate() {
            bm[(r, k)] = tab.a[(i, j)];
        }
    }
    bm
}

fn active_b(tab: &Tableau) -> DVector<f64> {
    DVector::from_iterator(tab.rows.len(), tab.rows.iter().map(|&i| tab.b[i]))
}

fn column(tab: &Tableau, j: usize) -> DVector<f64> {
    DVector::from_iterator(tab.rows.len(), tab.rows.iter().map(|&i| tab.a[(i, j)]))
}

fn basic_values(tab: &Tableau) -> Result<DVector<f64>, OptimizeError> {
    if tab.rows.is_empty() {
        return Ok(DVector::zeros(0));
    }
    basis_matrix(tab)
        .lu()
        .solve(&active_b(tab))
        .ok_or(OptimizeError::IllConditioned("singular simplex basis".into()))
}

fn refine(tab: &Tableau, xb: &mut DVector<f64>) {
    if tab.rows.is_empty() {
        return;
    }
    let bm = basis_matrix(tab);
    let lu = bm.clone().lu();
    for _ in 0..2 {
        let r = active_b(tab) - &bm * &*xb;
        if let Some(dx) = lu.solve(&r) {
            *xb += dx;
        }
    }
}

/// Simplex iterations; columns `>= n_enter` never enter the basis.
fn run_simplex(tab: &mut Tableau, c: &DVector<f64>, n_enter: usize) -> Result<(), OptimizeError> {
    let m = tab.rows.len();
    if m == 0 {
        return Ok(());
    }
    let cscale = 1.0 + c.amax();
    let mut bland = false;
    loop {
        if tab.iterations >= tab.max_iter {
            return Err(OptimizeError::MaxIterations(tab.iterations));
        }
        let bm = basis_matrix(tab);
        let lu = bm.clone().lu();
        let xb = lu
            .solve(&active_b(tab))
            .ok_or(OptimizeError::IllConditioned("singular simplex basis".into()))?;
        let cb = DVector::from_iterator(m, tab.basis.iter().map(|&j| c[j]));
        let y = bm
            .transpose()
            .lu()
            .solve(&cb)
            .ok_or(OptimizeError::IllConditioned("singular simplex basis".into()))?;

        let mut in_basis = vec![false; tab.a.ncols()];
        for &j in &tab.basis {
            in_basis[j] = true;
        }
        let tol = 1e-11 * cscale;
        let mut entering = None;
        let mut best = 0.0;
        for j in 0..n_enter {
            if in_basis[j] {
                continue;
            }
            let col = column(tab, j);
            let d = c[j] - y.dot(&col);
            let thresh = -tol * (1.0 + col.amax() * y.amax());
            if d < thresh {
                if bland {
                    entering = Some(j);
                    break;
                }
                if d < best {
                    best = d;
                    entering = Some(j);
                }
            }
        }
        let Some(q) = entering else {
            return Ok(());
        };
        let aq = column(tab, q);
        let dir = lu
            .solve(&aq)
            .ok_or(OptimizeError::IllConditioned("singular simplex basis".into()))?;
        let ptol = 1e-10 * (1.0 + dir.amax());
        let mut leave: Option<usize> = None;
        let mut tmin = f64::INFINITY;
        for k in 0..m {
            if dir[k] > ptol {
                let t = xb[k].max(0.0) / dir[k];
                let better = match leave {
                    None => true,
                    Some(l) => {
                        if t < tmin - 1e-13 * (1.0 + tmin.abs()) {
                            true
                        } else if t <= tmin + 1e-13 * (1.0 + tmin.abs()) {
                            tab.basis[k] < tab.basis[l]
                        } else {
                            false
                        }
                    }
                };
                if better {
                    tmin = t.min(tmin);
                    leave = Some(k);
                }
            }
        }
        let Some(r) = leave else {
            return Err(OptimizeError::Unbounded);
        };
        bland = tmin <= 1e-12 * (1.0 + xb.amax());
        tab.basis[r] = q;
        tab.iterations += 1;
    }
}

/// After phase 1, pivot zero-level artificials out of the basis; rows whose
/// artificial cannot leave are linearly dependent and are dropped.
fn drive_out_artificials(tab: &mut Tableau, n: usize) -> Result<(), OptimizeError> {
    loop {
        let pos = tab.basis.iter().position(|&j| j >= n);
        let Some(r) = pos else {
            return Ok(());
        };
        let bm = basis_matrix(tab);
        let lu = bm.lu();
        let mut in_basis = vec![false; tab.a.ncols()];
        for &j in &tab.basis {
            in_basis[j] = true;
        }
        let mut replaced = false;
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if in_basis[j] {
                continue;
            }
            let dir = lu
                .solve(&column(tab, j))
                .ok_or(OptimizeError::IllConditioned("singular simplex basis".into()))?;
            let v = dir[r].abs();
            if v > 1e-9 * (1.0 + dir.amax()) && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((j, v));
            }
        }
        if let Some((j, _)) = best {
            tab.basis[r] = j;
            tab.iterations += 1;
            replaced = true;
        }
        if !replaced {
            tab.basis.remove(r);
            tab.rows.remove(r);
        }
    }
}
