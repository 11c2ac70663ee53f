//! LMI syntheses of the regulator gain `G = [−Θ −Ψ]` for the closed loop
//! `ẋ = (A_p + B_p G) x + B_cl w`, `y = C x`, with `x = [e; ė]`.

mod empirical;
mod slemma;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optimize::{Affine, LmiBuilder, MatVar, OptimizeError, SdpSolution};

pub use empirical::{empirical_gains, DisturbanceRecord, EmpiricalGains};
pub use slemma::{bar_length_bound, BarLengthBound};

#[derive(Debug, Error)]
pub enum GainError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("no gain satisfies the {0:?} conditions")]
    Infeasible(BoundKind),
    #[error(transparent)]
    Solver(#[from] OptimizeError),
    #[error("disturbance record has zero size")]
    ZeroDisturbance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    EnergyToPeak,
    EnergyToEnergy,
    ImpulseToEnergy,
    Covariance,
    Stabilizing,
}

/// Bound on a quadratic output `y_i = C_i x` whose peak is kept below
/// `peak` (the S-lemma bound `ε̄` of a bar).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PeakOutputBound {
    pub c: DMatrix<f64>,
    pub peak: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GainProblem {
    pub a_p: DMatrix<f64>,
    pub b_p: DMatrix<f64>,
    pub b_cl: DMatrix<f64>,
    pub c: DMatrix<f64>,
    /// Noise intensity for the covariance bound.
    pub noise: Option<DMatrix<f64>>,
    pub kind: BoundKind,
    /// Bound `u_max` on the feedback effort, `G X Gᵀ ⪯ u_max² I` with `X`
    /// the certificate matrix. Keeps minimum-bound problems bounded.
    pub effort: Option<f64>,
    pub peak_outputs: Vec<PeakOutputBound>,
}

impl GainProblem {
    /// Double-integrator error dynamics `ë = u + B_d w` on `k` coordinates
    /// with the position error as output.
    pub fn double_integrator(b_d: &DMatrix<f64>, kind: BoundKind) -> Self {
        let k = b_d.nrows();
        let mut a_p = DMatrix::zeros(2 * k, 2 * k);
        a_p.view_mut((0, k), (k, k)).fill_with_identity();
        let mut b_p = DMatrix::zeros(2 * k, k);
        b_p.view_mut((k, 0), (k, k)).fill_with_identity();
        let mut b_cl = DMatrix::zeros(2 * k, b_d.ncols());
        b_cl.view_mut((k, 0), (k, b_d.ncols())).copy_from(b_d);
        let mut c = DMatrix::zeros(k, 2 * k);
        c.view_mut((0, 0), (k, k)).fill_with_identity();
        Self {
            a_p,
            b_p,
            b_cl,
            c,
            noise: None,
            kind,
            effort: None,
            peak_outputs: Vec::new(),
        }
    }

    pub fn with_effort(mut self, u_max: f64) -> Self {
        self.effort = Some(u_max);
        self
    }

    fn states(&self) -> usize {
        self.a_p.nrows()
    }

    fn check(&self) -> Result<(), GainError> {
        let n = self.states();
        let ok = self.a_p.shape() == (n, n)
            && self.b_p.nrows() == n
            && self.b_cl.nrows() == n
            && self.c.ncols() == n
            && self.noise.as_ref().is_none_or(|w| w.shape() == (self.b_cl.ncols(), self.b_cl.ncols()))
            && self.peak_outputs.iter().all(|p| p.c.ncols() == n && p.peak > 0.0)
            && self.effort.is_none_or(|u| u > 0.0);
        if ok {
            Ok(())
        } else {
            Err(GainError::Dimension("closed-loop matrices are inconsistent".into()))
        }
    }

    /// Strictness margin for `≺ 0` conditions.
    fn delta(&self) -> f64 {
        1e-8 * (1.0 + (&self.b_cl * self.b_cl.transpose()).amax() + self.a_p.amax())
    }

    /// `A_p + B_p G`.
    pub fn closed_loop(&self, g: &DMatrix<f64>) -> DMatrix<f64> {
        &self.a_p + &self.b_p * g
    }
}

/// Square factor `F` with `F Fᵀ = M` for symmetric `M ⪰ 0`.
pub fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let mut f = eig.eigenvectors.clone();
    for (j, l) in eig.eigenvalues.iter().enumerate() {
        let s = l.max(0.0).sqrt();
        f.column_mut(j).scale_mut(s);
    }
    f
}

/// Largest real part of the eigenvalues.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Solves `A X + X Aᵀ + Q = 0`.
pub fn lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let op = eye.kronecker(a) + a.kronecker(&eye);
    let rhs = -nalgebra::DVector::from_column_slice(q.as_slice());
    let x = op.lu().solve(&rhs)?;
    let x = DMatrix::from_column_slice(n, n, x.as_slice());
    Some((&x + x.transpose()) * 0.5)
}

/// One re-substituted inequality: `min_eig ≥ −1e−7 · scale` passes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertificateCheck {
    pub name: String,
    pub min_eig: f64,
    pub scale: f64,
}

impl CertificateCheck {
    fn psd(name: &str, m: &DMatrix<f64>) -> Self {
        let m = (m + m.transpose()) * 0.5;
        let eig = m.symmetric_eigenvalues();
        Self {
            name: name.into(),
            min_eig: eig.min(),
            scale: 1.0 + eig.amax(),
        }
    }

    pub fn passes(&self) -> bool {
        self.min_eig >= -1e-7 * self.scale
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GainResult {
    pub kind: BoundKind,
    pub g: DMatrix<f64>,
    pub theta: DMatrix<f64>,
    pub psi: DMatrix<f64>,
    pub theta_sym: DMatrix<f64>,
    pub psi_sym: DMatrix<f64>,
    /// Certified bound on the disturbance gain (or `None` when the lemma
    /// only certifies stability or a covariance bound).
    pub epsilon: Option<f64>,
    /// Certificate matrix (`Q`, `Y` or `X`).
    pub certificate: DMatrix<f64>,
    pub checks: Vec<CertificateCheck>,
    pub spectral_abscissa: f64,
    pub iterations: usize,
}

impl GainResult {
    pub fn certified(&self) -> bool {
        self.checks.iter().all(CertificateCheck::passes) && self.spectral_abscissa < 0.0
    }

    /// Smallest scaled margin over all re-substituted inequalities.
    pub fn worst_margin(&self) -> f64 {
        self.checks.iter().map(|c| c.min_eig / c.scale).fold(f64::INFINITY, f64::min)
    }
}

fn scaled_identity(v: &MatVar, n: usize) -> Affine {
    let mut a = Affine::zeros(n, n);
    a.terms.insert(v.offset, DMatrix::identity(n, n));
    a
}

fn constant(m: &DMatrix<f64>) -> Affine {
    Affine::constant(m.clone())
}

fn scalar_value(v: &MatVar, sol: &SdpSolution) -> f64 {
    sol.x[v.offset]
}

struct Lmi {
    builder: LmiBuilder,
    x: MatVar,
    r: MatVar,
}

impl Lmi {
    /// Certificate `X ⪰ δ I`, gain variable `R = G X` and the effort bound.
    fn new(p: &GainProblem) -> Self {
        let n = p.states();
        let mut builder = LmiBuilder::new();
        let x = builder.symmetric(n);
        let r = builder.matrix(p.b_p.ncols(), n);
        builder.psd_margin(&x.expr, p.delta());
        if let Some(u) = p.effort {
            let m = p.b_p.ncols();
            builder.psd(&Affine::blocks(&[
                vec![Affine::identity(m).scale(u * u), r.expr.clone()],
                vec![r.expr.transpose(), x.expr.clone()],
            ]));
        }
        Self { builder, x, r }
    }

    /// `sym(A_p X + B_p R)`.
    fn lyap(&self, p: &GainProblem) -> Affine {
        self.x.expr.lmul(&p.a_p).add(&self.r.expr.lmul(&p.b_p)).sym()
    }

    fn solve(&self, kind: BoundKind) -> Result<(SdpSolution, DMatrix<f64>, DMatrix<f64>), GainError> {
        let sol = self.builder.solve().map_err(|e| match e {
            OptimizeError::SdpInfeasible { .. } => GainError::Infeasible(kind),
            other => GainError::Solver(other),
        })?;
        let x = self.x.expr.value(&sol.x);
        let r = self.r.expr.value(&sol.x);
        Ok((sol, x, r))
    }
}

fn gain_from(r: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<DMatrix<f64>, GainError> {
    let chol = x
        .clone()
        .cholesky()
        .ok_or_else(|| GainError::Solver(OptimizeError::IllConditioned("certificate matrix is not positive definite".into())))?;
    Ok(chol.solve(&r.transpose()).transpose())
}

fn finish(
    p: &GainProblem,
    g: DMatrix<f64>,
    epsilon: Option<f64>,
    certificate: DMatrix<f64>,
    mut checks: Vec<CertificateCheck>,
    iterations: usize,
) -> GainResult {
    let k = p.b_p.ncols();
    let a_cl = p.closed_loop(&g);
    if let Some(u) = p.effort {
        let eye = DMatrix::identity(k, k) * (u * u);
        checks.push(CertificateCheck::psd("effort", &(eye - &g * &certificate * g.transpose())));
    }
    let split = g.ncols() == 2 * k;
    let (theta, psi) = if split {
        (-g.columns(0, k).into_owned(), -g.columns(k, k).into_owned())
    } else {
        (DMatrix::zeros(0, 0), DMatrix::zeros(0, 0))
    };
    GainResult {
        kind: p.kind,
        theta_sym: (&theta + theta.transpose()) * 0.5,
        psi_sym: (&psi + psi.transpose()) * 0.5,
        theta,
        psi,
        epsilon,
        spectral_abscissa: spectral_abscissa(&a_cl),
        g,
        certificate,
        checks,
        iterations,
    }
}

/// `B_cl` replaced by a square factor of `B_cl W Bᵀ_cl`.
fn compressed_input(p: &GainProblem, noise: Option<&DMatrix<f64>>) -> DMatrix<f64> {
    let bb = match noise {
        Some(w) => &p.b_cl * w * p.b_cl.transpose(),
        None => &p.b_cl * p.b_cl.transpose(),
    };
    psd_factor(&bb)
}

/// Energy-to-peak (generalized H₂) bound. The LMIs bound `‖C Q Cᵀ‖ < ε`,
/// so the certified gain is `√ε`.
pub fn synth_energy_to_peak(p: &GainProblem) -> Result<GainResult, GainError> {
    p.check()?;
    let (n, ny) = (p.states(), p.c.nrows());
    let delta = p.delta();
    let f = compressed_input(p, None);
    let mut lmi = Lmi::new(p);
    let eps = lmi.builder.scalar();
    let q = lmi.x.expr.clone();
    let cq = q.lmul(&p.c);
    lmi.builder.psd_margin(&Affine::blocks(&[vec![scaled_identity(&eps, ny), cq.clone()], vec![cq.transpose(), q.clone()]]), delta);
    let lyap = lmi.lyap(p);
    lmi.builder.nsd_margin(
        &Affine::blocks(&[vec![lyap, constant(&f)], vec![constant(&f.transpose()), Affine::identity(n).scale(-1.0)]]),
        delta,
    );
    for out in &p.peak_outputs {
        let cq = q.lmul(&out.c);
        lmi.builder.psd(&Affine::blocks(&[
            vec![Affine::identity(out.c.nrows()).scale(out.peak), cq.clone()],
            vec![cq.transpose(), q.clone()],
        ]));
    }
    lmi.builder.minimize(&eps.expr);
    let (sol, q, r) = lmi.solve(BoundKind::EnergyToPeak)?;
    let e = scalar_value(&eps, &sol);
    let g = gain_from(&r, &q)?;
    let a_cl = p.closed_loop(&g);
    let bb = &p.b_cl * p.b_cl.transpose();
    let mut checks = vec![
        CertificateCheck::psd("Q", &q),
        CertificateCheck::psd("eps I - C Q C'", &(DMatrix::identity(ny, ny) * e - &p.c * &q * p.c.transpose())),
        CertificateCheck::psd("-(A Q + Q A' + B B')", &(-(&a_cl * &q + &q * a_cl.transpose() + bb))),
    ];
    for (i, out) in p.peak_outputs.iter().enumerate() {
        let m = DMatrix::identity(out.c.nrows(), out.c.nrows()) * out.peak - &out.c * &q * out.c.transpose();
        checks.push(CertificateCheck::psd(&format!("peak output {i}"), &m));
    }
    Ok(finish(p, g, Some(e.max(0.0).sqrt()), q, checks, sol.iterations))
}

fn energy_to_energy_lmi(p: &GainProblem, rho: Option<f64>) -> (Lmi, Option<MatVar>) {
    let ny = p.c.nrows();
    let delta = p.delta();
    let f = compressed_input(p, None);
    let m = f.ncols();
    let mut lmi = Lmi::new(p);
    let (r_block, var) = match rho {
        Some(r) => (Affine::identity(m).scale(-r), None),
        None => {
            let v = lmi.builder.scalar();
            (scaled_identity(&v, m).scale(-1.0), Some(v))
        }
    };
    let y = lmi.x.expr.clone();
    let yc = y.rmul(&p.c.transpose());
    let lyap = lmi.lyap(p);
    let block = Affine::blocks(&[
        vec![lyap, constant(&f), yc.clone()],
        vec![constant(&f.transpose()), r_block, Affine::zeros(m, ny)],
        vec![yc.transpose(), Affine::zeros(ny, m), Affine::identity(ny).scale(-1.0)],
    ]);
    lmi.builder.nsd_margin(&block, delta);
    if let Some(v) = &var {
        lmi.builder.minimize(&v.expr);
    }
    (lmi, var)
}

fn energy_to_energy_result(p: &GainProblem, sol: &SdpSolution, y: DMatrix<f64>, r: &DMatrix<f64>, eps: f64) -> Result<GainResult, GainError> {
    let g = gain_from(r, &y)?;
    let a_cl = p.closed_loop(&g);
    // Bounded real lemma with P = Y⁻¹, scaled by Y on both sides.
    let m = &a_cl * &y + &y * a_cl.transpose() + &p.b_cl * p.b_cl.transpose() / (eps * eps) + &y * p.c.transpose() * &p.c * &y;
    let checks = vec![CertificateCheck::psd("Y", &y), CertificateCheck::psd("-(bounded real)", &(-m))];
    Ok(finish(p, g, Some(eps), y, checks, sol.iterations))
}

/// Energy-to-energy (H∞) bound at a given `ε` (`R = ε² I`).
pub fn synth_energy_to_energy(p: &GainProblem, epsilon: f64) -> Result<GainResult, GainError> {
    p.check()?;
    if !(epsilon > 0.0) {
        return Err(GainError::Dimension(format!("bound {epsilon} must be positive")));
    }
    let (lmi, _) = energy_to_energy_lmi(p, Some(epsilon * epsilon));
    let (sol, y, r) = lmi.solve(BoundKind::EnergyToEnergy)?;
    energy_to_energy_result(p, &sol, y, &r, epsilon)
}

/// Smallest H∞ bound by bisection on `ε` to `tol` relative.
pub fn minimize_energy_to_energy(p: &GainProblem, tol: f64) -> Result<GainResult, GainError> {
    p.check()?;
    let feasible = |e: f64| match synth_energy_to_energy(p, e) {
        Ok(r) => Ok(Some(r)),
        Err(GainError::Infeasible(_)) => Ok(None),
        Err(other) => Err(other),
    };
    let mut hi = 1.0;
    let mut best = None;
    for _ in 0..60 {
        if let Some(r) = feasible(hi)? {
            best = Some(r);
            break;
        }
        hi *= 4.0;
    }
    let mut best = best.ok_or(GainError::Infeasible(BoundKind::EnergyToEnergy))?;
    let mut lo = hi / 4.0;
    while lo > 1e-12 {
        match feasible(lo)? {
            Some(r) => {
                hi = lo;
                best = r;
                lo /= 4.0;
            }
            None => break,
        }
    }
    while hi - lo > tol * hi {
        let mid = (lo * hi).sqrt();
        match feasible(mid)? {
            Some(r) => {
                hi = mid;
                best = r;
            }
            None => lo = mid,
        }
    }
    Ok(best)
}

/// H∞ bound with `ρ = ε²` as a decision variable, minimized directly.
pub fn synth_energy_to_energy_direct(p: &GainProblem) -> Result<GainResult, GainError> {
    p.check()?;
    let (lmi, var) = energy_to_energy_lmi(p, None);
    let (sol, y, r) = lmi.solve(BoundKind::EnergyToEnergy)?;
    let rho = scalar_value(&var.expect("rho variable"), &sol);
    energy_to_energy_result(p, &sol, y, &r, rho.max(0.0).sqrt())
}

/// Impulse-to-energy (LQR-type) bound. The LMIs bound
/// `‖B_clᵀ Y⁻¹ B_cl‖ < ε`, so the certified gain is `√ε`.
pub fn synth_impulse_to_energy(p: &GainProblem) -> Result<GainResult, GainError> {
    p.check()?;
    let ny = p.c.nrows();
    let delta = p.delta();
    let f = compressed_input(p, None);
    let m = f.ncols();
    let mut lmi = Lmi::new(p);
    let eps = lmi.builder.scalar();
    let y = lmi.x.expr.clone();
    lmi.builder.psd_margin(
        &Affine::blocks(&[vec![scaled_identity(&eps, m), constant(&f.transpose())], vec![constant(&f), y.clone()]]),
        delta,
    );
    let yc = y.rmul(&p.c.transpose());
    let lyap = lmi.lyap(p);
    lmi.builder.nsd_margin(
        &Affine::blocks(&[vec![lyap, yc.clone()], vec![yc.transpose(), Affine::identity(ny).scale(-1.0)]]),
        delta,
    );
    lmi.builder.minimize(&eps.expr);
    let (sol, y, r) = lmi.solve(BoundKind::ImpulseToEnergy)?;
    let e = scalar_value(&eps, &sol);
    let g = gain_from(&r, &y)?;
    let a_cl = p.closed_loop(&g);
    let pm = y.clone().try_inverse().ok_or_else(|| GainError::Solver(OptimizeError::IllConditioned("singular Y".into())))?;
    let mbb = p.b_cl.transpose() * &pm * &p.b_cl;
    let nb = mbb.nrows();
    let checks = vec![
        CertificateCheck::psd("Y", &y),
        CertificateCheck::psd("eps I - B' P B", &(DMatrix::identity(nb, nb) * e - mbb)),
        CertificateCheck::psd("-(P A + A' P + C' C)", &(-(&pm * &a_cl + a_cl.transpose() * &pm + p.c.transpose() * &p.c))),
    ];
    Ok(finish(p, g, Some(e.max(0.0).sqrt()), y, checks, sol.iterations))
}

/// Output covariance bound `C X Cᵀ ≺ Ȳ` under white noise of intensity 𝕎.
pub fn synth_covariance(p: &GainProblem, y_bar: &DMatrix<f64>) -> Result<GainResult, GainError> {
    p.check()?;
    let ny = p.c.nrows();
    if y_bar.shape() != (ny, ny) {
        return Err(GainError::Dimension(format!("covariance bound must be {ny}x{ny}")));
    }
    let noise = p
        .noise
        .clone()
        .ok_or_else(|| GainError::Dimension("covariance bound needs a noise intensity".into()))?;
    let n = p.states();
    let delta = p.delta();
    let f = compressed_input(p, Some(&noise));
    let mut lmi = Lmi::new(p);
    let x = lmi.x.expr.clone();
    let cx = x.lmul(&p.c);
    lmi.builder.psd_margin(&Affine::blocks(&[vec![constant(y_bar), cx.clone()], vec![cx.transpose(), x.clone()]]), delta);
    let lyap = lmi.lyap(p);
    lmi.builder.nsd_margin(
        &Affine::blocks(&[vec![lyap, constant(&f)], vec![constant(&f.transpose()), Affine::identity(n).scale(-1.0)]]),
        delta,
    );
    let (sol, x, r) = lmi.solve(BoundKind::Covariance)?;
    let g = gain_from(&r, &x)?;
    let a_cl = p.closed_loop(&g);
    let checks = vec![
        CertificateCheck::psd("X", &x),
        CertificateCheck::psd("Ybar - C X C'", &(y_bar - &p.c * &x * p.c.transpose())),
        CertificateCheck::psd("-(A X + X A' + B W B')", &(-(&a_cl * &x + &x * a_cl.transpose() + &p.b_cl * &noise * p.b_cl.transpose()))),
    ];
    Ok(finish(p, g, None, x, checks, sol.iterations))
}

/// Any gain making `A_p + B_p G` Hurwitz, certified by
/// `(A_p X + B_p R) + (·)ᵀ ≺ 0` with `X ⪰ I`.
pub fn synth_stabilizing(p: &GainProblem) -> Result<GainResult, GainError> {
    p.check()?;
    let n = p.states();
    let delta = p.delta();
    let mut lmi = Lmi::new(p);
    lmi.builder.psd(&lmi.x.expr.sub(&Affine::identity(n)));
    let lyap = lmi.lyap(p);
    lmi.builder.nsd_margin(&lyap, delta);
    let (sol, x, r) = lmi.solve(BoundKind::Stabilizing)?;
    let g = gain_from(&r, &x)?;
    let a_cl = p.closed_loop(&g);
    let checks = vec![
        CertificateCheck::psd("X", &x),
        CertificateCheck::psd("-(A X + X A')", &(-(&a_cl * &x + &x * a_cl.transpose()))),
    ];
    Ok(finish(p, g, None, x, checks, sol.iterations))
}

/// Dispatches on `p.kind`. `bound` is the fixed H∞ level (bisection when
/// `None`) or the covariance bound `Ȳ` as a multiple of the identity.
pub fn synthesize(p: &GainProblem, bound: Option<f64>) -> Result<GainResult, GainError> {
    match p.kind {
        BoundKind::EnergyToPeak => synth_energy_to_peak(p),
        BoundKind::EnergyToEnergy => match bound {
            Some(e) => synth_energy_to_energy(p, e),
            None => minimize_energy_to_energy(p, 1e-4),
        },
        BoundKind::ImpulseToEnergy => synth_impulse_to_energy(p),
        BoundKind::Covariance => {
            let ny = p.c.nrows();
            let level = bound.ok_or_else(|| GainError::Dimension("covariance bound needs a level".into()))?;
            synth_covariance(p, &(DMatrix::identity(ny, ny) * level))
        }
        BoundKind::Stabilizing => synth_stabilizing(p),
    }
}
