//! Small dense semidefinite programming.
//!
//! Problems are posed in LMI form
//!
//! ```text
//! minimize cᵀx  subject to  F_j(x) = F_j0 + Σ_i x_i F_ji ⪰ 0  (each block j),
//!                           E x = f.
//! ```
//!
//! The solver is a primal-dual interior-point method on the homogeneous
//! self-dual embedding with Nesterov–Todd scaling and a Mehrotra
//! predictor-corrector step. Infeasibility is reported with a dual
//! certificate. Every returned point is re-verified by computing the
//! eigenvalues of all blocks from scratch.

use std::fmt::Write as _;

use nalgebra::{Cholesky, DMatrix, DVector};

use super::OptimizeError;

/// One affine LMI block `F0 + Σ x_i F_i ⪰ 0`.
#[derive(Clone, Debug)]
pub struct LmiBlock {
    pub dim: usize,
    pub constant: DMatrix<f64>,
    pub coeffs: Vec<(usize, DMatrix<f64>)>,
}

impl LmiBlock {
    pub fn value(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut v = self.constant.clone();
        for (i, f) in &self.coeffs {
            v += f * x[*i];
        }
        v
    }

    fn linear(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut v = DMatrix::zeros(self.dim, self.dim);
        for (i, f) in &self.coeffs {
            v += f * x[*i];
        }
        v
    }
}

#[derive(Clone, Debug)]
pub struct SdpProblem {
    pub n_vars: usize,
    pub objective: DVector<f64>,
    pub blocks: Vec<LmiBlock>,
    pub eq_a: DMatrix<f64>,
    pub eq_b: DVector<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct SdpOptions {
    pub max_iter: usize,
    pub feastol: f64,
    pub abstol: f64,
    pub reltol: f64,
    /// Tolerance on normalized infeasibility certificates.
    pub infeastol: f64,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self {
            max_iter: 120,
            feastol: 1e-9,
            abstol: 1e-10,
            reltol: 1e-9,
            infeastol: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SdpSolution {
    pub x: DVector<f64>,
    /// Multipliers of the equality rows.
    pub y: DVector<f64>,
    /// Dual matrices, one per block.
    pub z: Vec<DMatrix<f64>>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
    /// Smallest eigenvalue of each block at `x`, recomputed independently.
    pub min_eigs: Vec<f64>,
}

impl SdpSolution {
    pub fn relative_gap(&self) -> f64 {
        (self.primal_objective - self.dual_objective).abs()
            / (1.0 + self.primal_objective.abs().min(self.dual_objective.abs()))
    }
}

impl SdpProblem {
    pub fn new(n_vars: usize) -> Self {
        Self {
            n_vars,
            objective: DVector::zeros(n_vars),
            blocks: Vec::new(),
            eq_a: DMatrix::zeros(0, n_vars),
            eq_b: DVector::zeros(0),
        }
    }

    pub fn degree(&self) -> usize {
        self.blocks.iter().map(|b| b.dim).sum()
    }

    /// Smallest eigenvalue of every block at `x`, together with the block norm.
    pub fn block_eigen_margins(&self, x: &DVector<f64>) -> Vec<(f64, f64)> {
        self.blocks
            .iter()
            .map(|b| {
                let v = b.value(x);
                let v = (&v + v.transpose()) * 0.5;
                let eig = v.symmetric_eigenvalues();
                let min = eig.min();
                let norm = eig.iter().fold(0.0f64, |a, e| a.max(e.abs()));
                (min, norm)
            })
            .collect()
    }

    /// Human-readable dump of the problem data for debugging.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "sdp vars {} blocks {} eq {}", self.n_vars, self.blocks.len(), self.eq_a.nrows());
        let _ = writeln!(out, "objective {:?}", self.objective.as_slice());
        for (j, b) in self.blocks.iter().enumerate() {
            let _ = writeln!(out, "block {j} dim {}", b.dim);
            let _ = writeln!(out, "  F0 {:?}", b.constant.as_slice());
            for (i, f) in &b.coeffs {
                let _ = writeln!(out, "  x{i} {:?}", f.as_slice());
            }
        }
        for r in 0..self.eq_a.nrows() {
            let _ = writeln!(out, "eq {:?} = {}", self.eq_a.row(r).iter().collect::<Vec<_>>(), self.eq_b[r]);
        }
        out
    }

    fn validate(&self) -> Result<(), OptimizeError> {
        if self.objective.len() != self.n_vars || self.eq_a.ncols() != self.n_vars || self.eq_a.nrows() != self.eq_b.len() {
            return Err(OptimizeError::Dimension("sdp objective/equality sizes".into()));
        }
        for b in &self.blocks {
            if b.constant.shape() != (b.dim, b.dim) {
                return Err(OptimizeError::Dimension("sdp block constant size".into()));
            }
            for (i, f) in &b.coeffs {
                if *i >= self.n_vars || f.shape() != (b.dim, b.dim) {
                    return Err(OptimizeError::Dimension("sdp block coefficient".into()));
                }
            }
        }
        Ok(())
    }

    // G x with G = −F (linear part).
    fn g_apply(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        self.blocks.iter().map(|b| -b.linear(x)).collect()
    }

    fn g_adjoint(&self, z: &[DMatrix<f64>]) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_vars);
        for (b, zj) in self.blocks.iter().zip(z) {
            for (i, f) in &b.coeffs {
                out[*i] -= f.dot(zj);
            }
        }
        out
    }

    fn h_dot(&self, z: &[DMatrix<f64>]) -> f64 {
        self.blocks.iter().zip(z).map(|(b, zj)| b.constant.dot(zj)).sum()
    }
}

type Blocks = Vec<DMatrix<f64>>;

fn bnorm(v: &[DMatrix<f64>]) -> f64 {
    v.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt()
}

fn bdot(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn badd(a: &[DMatrix<f64>], b: &[DMatrix<f64>], t: f64) -> Blocks {
    a.iter().zip(b).map(|(x, y)| x + y * t).collect()
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// NT scaling of one block: `W(z) = rᵀ z r = λ = r⁻¹ s r⁻ᵀ`.
struct BlockScaling {
    r: DMatrix<f64>,
    rinv: DMatrix<f64>,
    lambda: DVector<f64>,
}

impl BlockScaling {
    fn identity(n: usize) -> Self {
        Self {
            r: DMatrix::identity(n, n),
            rinv: DMatrix::identity(n, n),
            lambda: DVector::from_element(n, 1.0),
        }
    }

    fn nt(s: &DMatrix<f64>, z: &DMatrix<f64>) -> Option<Self> {
        let ls = Cholesky::new(sym(s))?.l();
        let lz = Cholesky::new(sym(z))?.l();
        let m = lz.transpose() * &ls;
        let svd = m.svd(true, true);
        let u = svd.u?;
        let vt = svd.v_t?;
        let lambda = svd.singular_values;
        if lambda.iter().any(|l| *l <= 0.0 || !l.is_finite()) {
            return None;
        }
        let isq = DVector::from_iterator(lambda.len(), lambda.iter().map(|l| 1.0 / l.sqrt()));
        let r = ls * vt.transpose() * DMatrix::from_diagonal(&isq);
        let rinv = DMatrix::from_diagonal(&isq) * u.transpose() * lz.transpose();
        Some(Self { r, rinv, lambda })
    }

    /// `W(z) = rᵀ z r`.
    fn w(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        self.r.transpose() * z * &self.r
    }

    /// `Wᵀ(u) = r u rᵀ`.
    fn wt(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        &self.r * u * self.r.transpose()
    }

    /// `(WᵀW)⁻¹ v = r⁻ᵀ r⁻¹ v r⁻ᵀ r⁻¹`.
    fn wtw_inv(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let inner = &self.rinv * v * self.rinv.transpose();
        self.rinv.transpose() * inner * &self.rinv
    }

    /// Solve `λ ∘ u = d` for symmetric `u`.
    fn lambda_div(&self, d: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.lambda.len();
        DMatrix::from_fn(n, n, |k, l| 2.0 * d[(k, l)] / (self.lambda[k] + self.lambda[l]))
    }
}

fn jordan(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    (a * b + b * a) * 0.5
}

/// Largest `α ≤ cap` with `λ + α u ⪰ 0`.
fn max_step_block(lambda: &DVector<f64>, u: &DMatrix<f64>) -> f64 {
    let n = lambda.len();
    let m = DMatrix::from_fn(n, n, |k, l| u[(k, l)] / (lambda[k] * lambda[l]).sqrt());
    let e = sym(&m).symmetric_eigenvalues().min();
    if e < 0.0 {
        -1.0 / e
    } else {
        f64::INFINITY
    }
}

struct Kkt<'a> {
    p: &'a SdpProblem,
    scal: &'a [BlockScaling],
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl<'a> Kkt<'a> {
    fn factor(p: &'a SdpProblem, scal: &'a [BlockScaling]) -> Result<Self, OptimizeError> {
        let n = p.n_vars;
        let q = p.eq_a.nrows();
        let mut h = DMatrix::zeros(n, n);
        for (b, sc) in p.blocks.iter().zip(scal) {
            let scaled: Vec<(usize, DMatrix<f64>)> = b
                .coeffs
                .iter()
                .map(|(i, f)| (*i, &sc.rinv * f * sc.rinv.transpose()))
                .collect();
            for (a_idx, (ia, pa)) in scaled.iter().enumerate() {
                for (ib, pb) in scaled.iter().skip(a_idx) {
                    let v = pa.dot(pb);
                    h[(*ia, *ib)] += v;
                    if ia != ib {
                        h[(*ib, *ia)] += v;
                    }
                }
            }
        }
        let mut k = DMatrix::zeros(n + q, n + q);
        k.view_mut((0, 0), (n, n)).copy_from(&h);
        if q > 0 {
            k.view_mut((0, n), (n, q)).copy_from(&p.eq_a.transpose());
            k.view_mut((n, 0), (q, n)).copy_from(&p.eq_a);
        }
        let lu = k.lu();
        if !lu.is_invertible() {
            return Err(OptimizeError::IllConditioned("singular SDP Newton system".into()));
        }
        Ok(Self { p, scal, lu })
    }

    fn solve_once(&self, bx: &DVector<f64>, by: &DVector<f64>, bz: &[DMatrix<f64>]) -> Option<(DVector<f64>, DVector<f64>, Blocks)> {
        let n = self.p.n_vars;
        let q = self.p.eq_a.nrows();
        let wb: Blocks = self.scal.iter().zip(bz).map(|(s, v)| s.wtw_inv(v)).collect();
        let rhs1 = bx + self.p.g_adjoint(&wb);
        let mut rhs = DVector::zeros(n + q);
        rhs.rows_mut(0, n).copy_from(&rhs1);
        rhs.rows_mut(n, q).copy_from(by);
        let sol = self.lu.solve(&rhs)?;
        let ux = sol.rows(0, n).into_owned();
        let uy = sol.rows(n, q).into_owned();
        let gx = self.p.g_apply(&ux);
        let uz: Blocks = self
            .scal
            .iter()
            .zip(gx.iter().zip(bz))
            .map(|(s, (g, b))| sym(&s.wtw_inv(&(g - b))))
            .collect();
        if ux.iter().chain(uy.iter()).any(|v| !v.is_finite()) {
            return None;
        }
        Some((ux, uy, uz))
    }

    /// Solve the scaled KKT system with two rounds of iterative refinement.
    fn solve(&self, bx: &DVector<f64>, by: &DVector<f64>, bz: &[DMatrix<f64>]) -> Result<(DVector<f64>, DVector<f64>, Blocks), OptimizeError> {
        let err = || OptimizeError::IllConditioned("SDP Newton solve failed".into());
        let (mut ux, mut uy, mut uz) = self.solve_once(bx, by, bz).ok_or_else(err)?;
        for _ in 0..2 {
            let rx = bx - (self.p.g_adjoint(&uz) + self.p.eq_a.transpose() * &uy);
            let ry = by - &self.p.eq_a * &ux;
            let gx = self.p.g_apply(&ux);
            let rz: Blocks = gx
                .iter()
                .zip(bz)
                .zip(self.scal.iter().zip(&uz))
                .map(|((g, b), (s, z))| b - (g - s.wt(&s.w(z))))
                .collect();
            let (dx, dy, dz) = self.solve_once(&rx, &ry, &rz).ok_or_else(err)?;
            ux += dx;
            uy += dy;
            uz = badd(&uz, &dz, 1.0);
        }
        Ok((ux, uy, uz))
    }
}

/// Solve the semidefinite program.
pub fn solve_sdp(p: &SdpProblem) -> Result<SdpSolution, OptimizeError> {
    solve_sdp_with(p, &SdpOptions::default())
}

pub fn solve_sdp_with(p: &SdpProblem, opts: &SdpOptions) -> Result<SdpSolution, OptimizeError> {
    p.validate()?;
    let n = p.n_vars;
    let c = &p.objective;
    let a = &p.eq_a;
    let b = &p.eq_b;
    let h: Blocks = p.blocks.iter().map(|bl| sym(&bl.constant)).collect();
    let deg = p.degree() as f64;
    let resx0 = c.norm().max(1.0);
    let resy0 = b.norm().max(1.0);
    let resz0 = bnorm(&h).max(1.0);

    if p.blocks.is_empty() {
        return Err(OptimizeError::Dimension("sdp without LMI blocks".into()));
    }

    // Starting point from two least-squares problems with identity scaling.
    let ident: Vec<BlockScaling> = p.blocks.iter().map(|bl| BlockScaling::identity(bl.dim)).collect();
    let kkt0 = Kkt::factor(p, &ident)?;
    let (mut x, _, zp) = kkt0.solve(&DVector::zeros(n), b, &h)?;
    let mut s: Blocks = zp.iter().map(|m| -m).collect();
    let zeros_b: Blocks = p.blocks.iter().map(|bl| DMatrix::zeros(bl.dim, bl.dim)).collect();
    let (_, mut y, mut z) = kkt0.solve(&(-c), &DVector::zeros(a.nrows()), &zeros_b)?;
    let shift = |v: &mut Blocks| {
        let alpha = v
            .iter()
            .map(|m| -sym(m).symmetric_eigenvalues().min())
            .fold(f64::NEG_INFINITY, f64::max);
        if alpha >= -1e-8 {
            for m in v.iter_mut() {
                let d = m.nrows();
                *m += DMatrix::identity(d, d) * (1.0 + alpha.max(0.0));
            }
        }
    };
    shift(&mut s);
    shift(&mut z);
    let mut tau = 1.0;
    let mut kappa = 1.0;

    for iter in 0..=opts.max_iter {
        let gx = p.g_apply(&x);
        let gtz = p.g_adjoint(&z);
        let aty = a.transpose() * &y;
        let ax = a * &x;
        let r1 = &aty + &gtz + c * tau;
        let r2 = -&ax + b * tau;
        let r3: Blocks = s.iter().zip(&gx).zip(&h).map(|((si, gi), hi)| si + gi - hi * tau).collect();
        let cx = c.dot(&x);
        let by_ = b.dot(&y);
        let hz = p.h_dot(&z);
        let r4 = kappa + cx + by_ + hz;

        let pres = (r2.norm() / resy0).max(bnorm(&r3) / resz0) / tau;
        let dres = r1.norm() / resx0 / tau;
        let pcost = cx / tau;
        let dcost = -(by_ + hz) / tau;
        let gap = bdot(&s, &z) / (tau * tau);
        let relgap = if pcost < 0.0 {
            Some(gap / -pcost)
        } else if dcost > 0.0 {
            Some(gap / dcost)
        } else {
            None
        };

        if pres <= opts.feastol && dres <= opts.feastol && (gap <= opts.abstol || relgap.is_some_and(|r| r <= opts.reltol)) {
            let xs = &x / tau;
            let margins = p.block_eigen_margins(&xs);
            let min_eigs: Vec<f64> = margins.iter().map(|m| m.0).collect();
            if margins.iter().any(|(e, nrm)| *e < -1e-8 * (1.0 + nrm)) {
                return Err(OptimizeError::IllConditioned(format!("verification failed: block eigenvalues {min_eigs:?}")));
            }
            return Ok(SdpSolution {
                x: xs,
                y: &y / tau,
                z: z.iter().map(|m| m / tau).collect(),
                primal_objective: pcost,
                dual_objective: dcost,
                iterations: iter,
                min_eigs,
            });
        }
        let pinf = (hz + by_ < 0.0).then(|| (&aty + &gtz).norm() / resx0 / (-(hz + by_)));
        let dinf = (cx < 0.0).then(|| {
            let gxs: Blocks = s.iter().zip(&gx).map(|(si, gi)| si + gi).collect();
            (ax.norm() / resy0).max(bnorm(&gxs) / resz0) / (-cx)
        });
        let certificate = || OptimizeError::SdpInfeasible {
            certificate: z.iter().map(|m| m / -(hz + by_)).collect(),
        };
        if pinf.is_some_and(|v| v <= opts.infeastol) {
            return Err(certificate());
        }
        if dinf.is_some_and(|v| v <= opts.infeastol) {
            return Err(OptimizeError::Unbounded);
        }
        // Numerical breakdown after tau has collapsed is reported as the
        // certificate the iterates were converging to.
        let breakdown = |msg: &str| {
            if tau < 1e-3 * kappa {
                if pinf.is_some_and(|v| v <= 1e3 * opts.infeastol) {
                    return certificate();
                }
                if dinf.is_some_and(|v| v <= 1e3 * opts.infeastol) {
                    return OptimizeError::Unbounded;
                }
            }
            OptimizeError::IllConditioned(msg.into())
        };
        if iter == opts.max_iter {
            break;
        }

        let scal: Vec<BlockScaling> = s
            .iter()
            .zip(&z)
            .map(|(si, zi)| BlockScaling::nt(si, zi))
            .collect::<Option<_>>()
            .ok_or_else(|| breakdown("lost positive definiteness"))?;
        let mu = (bdot(&s, &z) + tau * kappa) / (deg + 1.0);
        let kkt = Kkt::factor(p, &scal).map_err(|_| breakdown("singular KKT system"))?;
        let (x1, y1, z1) = kkt.solve(&(-c), b, &h).map_err(|_| breakdown("singular KKT system"))?;
        let denom1 = c.dot(&x1) + b.dot(&y1) + p.h_dot(&z1) - kappa / tau;

        struct Dir {
            dx: DVector<f64>,
            dy: DVector<f64>,
            dz: Blocks,
            ds: Blocks,
            us: Blocks,
            uz: Blocks,
            dtau: f64,
            dkappa: f64,
        }
        let direction = |sigma: f64, ds_rhs: &Blocks, dk_rhs: f64| -> Result<Dir, OptimizeError> {
            let f = 1.0 - sigma;
            let bx = &r1 * (-f);
            let by = &r2 * f;
            let ld: Blocks = scal.iter().zip(ds_rhs).map(|(sc, d)| sc.lambda_div(d)).collect();
            let bz: Blocks = r3
                .iter()
                .zip(scal.iter().zip(&ld))
                .map(|(r, (sc, l))| -r * f - sc.wt(l))
                .collect();
            let (x0, y0, z0) = kkt.solve(&bx, &by, &bz)?;
            let num = -f * r4 - dk_rhs / tau - (c.dot(&x0) + b.dot(&y0) + p.h_dot(&z0));
            let dtau = num / denom1;
            let dx = x0 + &x1 * dtau;
            let dy = y0 + &y1 * dtau;
            let dz = badd(&z0, &z1, dtau);
            let dkappa = (dk_rhs - kappa * dtau) / tau;
            let uz: Blocks = scal.iter().zip(&dz).map(|(sc, d)| sym(&sc.w(d))).collect();
            let us: Blocks = ld.iter().zip(&uz).map(|(l, u)| l - u).collect();
            let ds: Blocks = scal.iter().zip(&us).map(|(sc, u)| sym(&sc.wt(u))).collect();
            Ok(Dir { dx, dy, dz, ds, us, uz, dtau, dkappa })
        };
        let max_step = |d: &Dir| -> f64 {
            let mut a = f64::INFINITY;
            for (sc, (us, uz)) in scal.iter().zip(d.us.iter().zip(&d.uz)) {
                a = a.min(max_step_block(&sc.lambda, us)).min(max_step_block(&sc.lambda, uz));
            }
            if d.dtau < 0.0 {
                a = a.min(-tau / d.dtau);
            }
            if d.dkappa < 0.0 {
                a = a.min(-kappa / d.dkappa);
            }
            a
        };

        let lam2: Blocks = scal
            .iter()
            .map(|sc| DMatrix::from_diagonal(&sc.lambda.map(|l| -l * l)))
            .collect();
        let aff = direction(0.0, &lam2, -tau * kappa).map_err(|_| breakdown("singular KKT system"))?;
        let alpha_aff = max_step(&aff).min(1.0);
        let sigma = (1.0 - alpha_aff).powi(3);
        let ds_rhs: Blocks = scal
            .iter()
            .zip(aff.us.iter().zip(&aff.uz))
            .map(|(sc, (us, uz))| {
                let n = sc.lambda.len();
                DMatrix::identity(n, n) * (sigma * mu) - DMatrix::from_diagonal(&sc.lambda.map(|l| l * l)) - jordan(us, uz)
            })
            .collect();
        let dk = sigma * mu - tau * kappa - aff.dtau * aff.dkappa;
        let d = direction(sigma, &ds_rhs, dk).map_err(|_| breakdown("singular KKT system"))?;
        let alpha = (0.99 * max_step(&d)).min(1.0);

        x += &d.dx * alpha;
        y += &d.dy * alpha;
        z = badd(&z, &d.dz, alpha).iter().map(sym).collect();
        s = badd(&s, &d.ds, alpha).iter().map(sym).collect();
        tau += alpha * d.dtau;
        kappa += alpha * d.dkappa;
        if !tau.is_finite() || tau <= 0.0 || !x.iter().all(|v| v.is_finite()) {
            return Err(OptimizeError::IllConditioned("interior-point iterate diverged".into()));
        }
    }
    Err(OptimizeError::MaxIterations(opts.max_iter))
}
