use nalgebra::{DMatrix, DVector};

use super::{lambda_affine_map, ControlError, ControlSystem};
use crate::dynamics::{kron_eye3, vectorize, Model, StructureState, Wrench};

/// `ℒ` selecting stacked coordinates `(node, axis)`.
pub fn coordinate_selector(n_nodes: usize, coords: &[(usize, usize)]) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(coords.len(), 3 * n_nodes);
    for (row, (node, axis)) in coords.iter().enumerate() {
        l[(row, axis * n_nodes + node)] = 1.0;
    }
    l
}

/// Error dynamics `ë + Ψ ė + Θ e = 0` on `e = ℒ n − n̄`.
#[derive(Clone, Debug)]
pub struct CoordinateObjective {
    pub selector: DMatrix<f64>,
    pub target: DVector<f64>,
    pub theta: DMatrix<f64>,
    pub psi: DMatrix<f64>,
}

impl CoordinateObjective {
    pub fn new(selector: DMatrix<f64>, target: DVector<f64>, theta: DMatrix<f64>, psi: DMatrix<f64>) -> Result<Self, ControlError> {
        let k = selector.nrows();
        if target.len() != k || theta.shape() != (k, k) || psi.shape() != (k, k) {
            return Err(ControlError::Dimension(format!("{k} selected coordinates with inconsistent target or gains")));
        }
        Ok(Self {
            selector,
            target,
            theta,
            psi,
        })
    }

    /// Same objective with `Θ = θ I`, `Ψ = ψ I`.
    pub fn with_scalar_gains(selector: DMatrix<f64>, target: DVector<f64>, theta: f64, psi: f64) -> Result<Self, ControlError> {
        let k = selector.nrows();
        Self::new(selector, target, DMatrix::identity(k, k) * theta, DMatrix::identity(k, k) * psi)
    }

    pub fn error(&self, n: &DMatrix<f64>) -> DVector<f64> {
        &self.selector * vectorize(n) - &self.target
    }

    pub fn error_rate(&self, n_dot: &DMatrix<f64>) -> DVector<f64> {
        &self.selector * vectorize(n_dot)
    }

    /// `ë + Ψ ė + Θ e` for given accelerations.
    pub fn residual(&self, state: &StructureState, n_ddot: &DMatrix<f64>) -> DVector<f64> {
        &self.selector * vectorize(n_ddot) + &self.psi * self.error_rate(&state.n_dot) + &self.theta * self.error(&state.n)
    }

    /// State feedback gain `[−Θ −Ψ]`.
    pub fn gain(&self) -> DMatrix<f64> {
        let k = self.theta.nrows();
        let mut g = DMatrix::zeros(k, 2 * k);
        g.columns_mut(0, k).copy_from(&(-&self.theta));
        g.columns_mut(k, k).copy_from(&(-&self.psi));
        g
    }
}

/// Reduced-order control equations `(𝔸 − 𝔹 Λ) γ = 𝔹 τ + ℂ + Υ ω_w`.
#[derive(Clone, Debug)]
pub struct ReducedController {
    /// `𝔸 − 𝔹 Λ`.
    pub aeq: DMatrix<f64>,
    /// `𝔹 τ + ℂ`.
    pub beq: DVector<f64>,
    /// Wheel-speed channel.
    pub wheel: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
    /// `B₁ = ℒ ℳ_sn`, the disturbance input with bar forces held fixed.
    pub b1: DMatrix<f64>,
    /// Disturbance input of the closed loop `ë + Ψ ė + Θ e = B_d w_d` with
    /// the bar force response to `w_d` included.
    pub disturbance: DMatrix<f64>,
    /// `[−Θ −Ψ]`.
    pub gain: DMatrix<f64>,
    pub e: DVector<f64>,
    pub e_dot: DVector<f64>,
}

impl ReducedController {
    pub fn system(&self) -> ControlSystem {
        ControlSystem {
            gamma: self.aeq.clone(),
            mu: self.beq.clone(),
            upsilon: self.wheel.clone(),
        }
    }
}

/// `𝟙₃ ⊗ I_k`.
fn ones_kron_eye(k: usize) -> DMatrix<f64> {
    DMatrix::from_element(3, 1, 1.0).kronecker(&DMatrix::<f64>::identity(k, k))
}

pub fn reduced_controller(model: &Model, state: &StructureState, wrench: &Wrench, objective: &CoordinateObjective) -> Result<ReducedController, ControlError> {
    let t = &model.topology;
    let nn = model.n_nodes();
    if objective.selector.ncols() != 3 * nn {
        return Err(ControlError::Dimension(format!(
            "selector acts on {} coordinates, structure has {}",
            objective.selector.ncols(),
            3 * nn
        )));
    }
    let b1 = &objective.selector * &model.m_sn;
    let s = vectorize(&state.string_vectors(t));
    let b = vectorize(&state.bar_vectors(t));
    let a_mat = &b1 * kron_eye3(&t.c_s.transpose()) * DMatrix::from_diagonal(&s) * ones_kron_eye(t.alpha);
    let b_mat = &b1 * kron_eye3(&t.c_b.transpose()) * DMatrix::from_diagonal(&b) * ones_kron_eye(t.beta);
    let map = lambda_affine_map(model, state, wrench, None)?;
    let e = objective.error(&state.n);
    let e_dot = objective.error_rate(&state.n_dot);
    let disturbance = &objective.selector * model.force_response(&state.n)?;
    let c = &b1 * vectorize(&wrench.w) + &objective.psi * &e_dot + &objective.theta * &e;
    let wheel = &b1 * model.wheel_force_columns(state) + &b_mat * &map.wheel;
    Ok(ReducedController {
        aeq: &a_mat - &b_mat * &map.lambda,
        beq: &b_mat * &map.tau + &c,
        wheel,
        a: a_mat,
        b: b_mat,
        c,
        b1,
        disturbance,
        gain: objective.gain(),
        e,
        e_dot,
    })
}
