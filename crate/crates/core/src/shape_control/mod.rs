//! Linear-in-γ shape control systems and the force density command.

mod reduced;
mod solve;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dynamics::{devectorize, vectorize, DynamicsError, LambdaMap, Model, StructureState, Wrench};

pub use reduced::{coordinate_selector, reduced_controller, CoordinateObjective, ReducedController};
pub use solve::{compute_control, ControlCommand, ControlPolicy, WheelPolicy};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("no nonnegative force densities satisfy the control equations (least-squares residual {residual:e})")]
    Infeasible { residual: f64, fallback: Box<ControlCommand> },
    #[error("solver failure: {0}")]
    Solver(String),
}

/// Position regulation `Ë + Ė Ψ + E Θ = 0` on `E = L N R − Ȳ`, with
/// optional velocity and acceleration blocks.
#[derive(Clone, Debug)]
pub struct ShapeObjective {
    /// `n_l × 3` coordinate selector.
    pub l: DMatrix<f64>,
    /// `n × n_r` node selector.
    pub r: DMatrix<f64>,
    /// `n_l × n_r` target positions.
    pub y_bar: DMatrix<f64>,
    /// `n_r × n_r` position gain.
    pub theta: DMatrix<f64>,
    /// `n_r × n_r` velocity gain.
    pub psi: DMatrix<f64>,
    pub velocity: Option<VelocityObjective>,
    pub acceleration: Option<AccelerationObjective>,
}

/// Velocity regulation `Ė_v + E_v Ψ_v = 0` on `E_v = L_v Ṅ R_v − Ẏ_v`.
#[derive(Clone, Debug)]
pub struct VelocityObjective {
    pub l: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub y_dot_bar: DMatrix<f64>,
    pub psi: DMatrix<f64>,
}

/// Acceleration tracking `L_a N̈ R_a = Ÿ_a`.
#[derive(Clone, Debug)]
pub struct AccelerationObjective {
    pub l: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub y_ddot_bar: DMatrix<f64>,
}

fn is_selector(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| *v == 0.0 || *v == 1.0)
}

impl ShapeObjective {
    pub fn new(l: DMatrix<f64>, r: DMatrix<f64>, y_bar: DMatrix<f64>, theta: DMatrix<f64>, psi: DMatrix<f64>) -> Result<Self, ControlError> {
        let obj = Self {
            l,
            r,
            y_bar,
            theta,
            psi,
            velocity: None,
            acceleration: None,
        };
        obj.check()?;
        Ok(obj)
    }

    fn check(&self) -> Result<(), ControlError> {
        let (nl, nr) = (self.l.nrows(), self.r.ncols());
        let ok = self.l.ncols() == 3
            && self.y_bar.shape() == (nl, nr)
            && self.theta.shape() == (nr, nr)
            && self.psi.shape() == (nr, nr)
            && is_selector(&self.l)
            && is_selector(&self.r);
        if ok {
            Ok(())
        } else {
            Err(ControlError::Dimension("objective selectors, target or gains are inconsistent".into()))
        }
    }

    /// `E = L N R − Ȳ`.
    pub fn error(&self, n: &DMatrix<f64>) -> DMatrix<f64> {
        &self.l * n * &self.r - &self.y_bar
    }

    /// `Ė = L Ṅ R`.
    pub fn error_rate(&self, n_dot: &DMatrix<f64>) -> DMatrix<f64> {
        &self.l * n_dot * &self.r
    }

    /// `Ë + Ė Ψ + E Θ` for given accelerations.
    pub fn residual(&self, state: &StructureState, n_ddot: &DMatrix<f64>) -> DMatrix<f64> {
        &self.l * n_ddot * &self.r + self.error_rate(&state.n_dot) * &self.psi + self.error(&state.n) * &self.theta
    }
}

/// `Γ γ = μ + Υ ω_w`, rows stacked block by block.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSystem {
    pub gamma: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub upsilon: DMatrix<f64>,
}

impl ControlSystem {
    pub fn rows(&self) -> usize {
        self.mu.len()
    }

    /// `Γ γ − μ − Υ ω_w`.
    pub fn residual(&self, gamma: &DVector<f64>, omega_w: &DVector<f64>) -> DVector<f64> {
        &self.gamma * gamma - &self.mu - &self.upsilon * omega_w
    }
}

/// Vertical concatenation of control systems.
pub fn stack(systems: &[ControlSystem]) -> Result<ControlSystem, ControlError> {
    let Some(first) = systems.first() else {
        return Err(ControlError::Dimension("nothing to stack".into()));
    };
    let (alpha, beta) = (first.gamma.ncols(), first.upsilon.ncols());
    if systems.iter().any(|s| s.gamma.ncols() != alpha || s.upsilon.ncols() != beta) {
        return Err(ControlError::Dimension("stacked systems have different column counts".into()));
    }
    let rows: usize = systems.iter().map(ControlSystem::rows).sum();
    let mut out = ControlSystem {
        gamma: DMatrix::zeros(rows, alpha),
        mu: DVector::zeros(rows),
        upsilon: DMatrix::zeros(rows, beta),
    };
    let mut r = 0;
    for s in systems {
        let k = s.rows();
        out.gamma.rows_mut(r, k).copy_from(&s.gamma);
        out.mu.rows_mut(r, k).copy_from(&s.mu);
        out.upsilon.rows_mut(r, k).copy_from(&s.upsilon);
        r += k;
    }
    Ok(out)
}

/// Forces the controller accounts for: the known external load `W`.
fn known_forces(wrench: &Wrench) -> DMatrix<f64> {
    wrench.w.clone()
}

/// `λ = Λ γ + τ (+ Ξ ω_w)` at the current state. Disturbances are not part
/// of the map. Without `lagrange` the constraint forces are eliminated
/// exactly.
pub fn lambda_affine_map(model: &Model, state: &StructureState, wrench: &Wrench, lagrange: Option<&DVector<f64>>) -> Result<LambdaMap, ControlError> {
    Ok(model.lambda_map_for(state, &known_forces(wrench), lagrange)?)
}

/// Node accelerations as an affine function of the commands:
/// `n̈ = 𝒢 γ + 𝒰 ω_w + h` with constraint forces eliminated.
#[derive(Clone, Debug)]
pub struct AccelerationMap {
    pub gamma: DMatrix<f64>,
    pub wheel: DMatrix<f64>,
    pub offset: DVector<f64>,
}

pub fn acceleration_map(model: &Model, state: &StructureState, wrench: &Wrench) -> Result<AccelerationMap, ControlError> {
    let map = lambda_affine_map(model, state, wrench, None)?;
    let fl_cols = model.bar_force_columns(&state.n);
    let fg = model.string_force_columns(&state.n);
    let gw = model.wheel_force_columns(state);
    let f0 = vectorize(&known_forces(wrench));
    Ok(AccelerationMap {
        gamma: &model.m_sn * (fg + &fl_cols * &map.lambda),
        wheel: &model.m_sn * (gw + &fl_cols * &map.wheel),
        offset: &model.m_sn * (f0 + &fl_cols * &map.tau),
    })
}

/// Rows of `L N̈ R`, column by column of `R`, as a `n_l n_r × 3n` matrix.
fn stacked_selector(l: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
    let (nl, nr, nn) = (l.nrows(), r.ncols(), r.nrows());
    DMatrix::from_fn(nl * nr, 3 * nn, |row, col| {
        let (i, a) = (row / nl, row % nl);
        let (ax, j) = (col / nn, col % nn);
        l[(a, ax)] * r[(j, i)]
    })
}

fn stack_columns(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Control equations forcing `L N̈ R = T`.
fn block(
    model: &Model,
    state: &StructureState,
    wrench: &Wrench,
    lagrange: Option<&DVector<f64>>,
    l: &DMatrix<f64>,
    r: &DMatrix<f64>,
    target: &DMatrix<f64>,
) -> Result<ControlSystem, ControlError> {
    let nn = model.n_nodes();
    if l.ncols() != 3 || r.nrows() != nn || target.shape() != (l.nrows(), r.ncols()) {
        return Err(ControlError::Dimension(format!(
            "selectors {}x{} and {}x{} with target {:?} on {nn} nodes",
            l.nrows(),
            l.ncols(),
            r.nrows(),
            r.ncols(),
            target.shape()
        )));
    }
    if lagrange.is_none() && model.constraints.rank() > 0 {
        let map = acceleration_map(model, state, wrench)?;
        let sel = stacked_selector(l, r);
        return Ok(ControlSystem {
            gamma: -(&sel * &map.gamma),
            mu: &sel * &map.offset - stack_columns(target),
            upsilon: &sel * &map.wheel,
        });
    }
    matrix_block(model, state, wrench, lagrange, l, r, target)
}

/// Column-by-column matrix form
/// `Γ_i = L S diag(C_s M⁻¹ R e_i) − L B diag(C_b M⁻¹ R e_i) Λ`.
fn matrix_block(
    model: &Model,
    state: &StructureState,
    wrench: &Wrench,
    lagrange: Option<&DVector<f64>>,
    l: &DMatrix<f64>,
    r: &DMatrix<f64>,
    target: &DMatrix<f64>,
) -> Result<ControlSystem, ControlError> {
    let t = &model.topology;
    let map = lambda_affine_map(model, state, wrench, lagrange)?;
    let s = state.string_vectors(t);
    let b = state.bar_vectors(t);
    let bd = state.n_dot.clone() * t.c_b.transpose();
    let ja = model.material.wheel_inertia();
    let gyro = DMatrix::from_fn(3, t.beta, |ax, k| {
        let c = b.column(k).cross(&bd.column(k));
        c[ax] * ja[k] / model.material.bar_length[k]
    });
    let mut w = known_forces(wrench);
    if let Some(omega) = lagrange {
        w += devectorize(&(model.constraints.a.transpose() * omega), model.n_nodes());
    }
    let (nl, nr) = (l.nrows(), r.ncols());
    let mut out = ControlSystem {
        gamma: DMatrix::zeros(nl * nr, t.alpha),
        mu: DVector::zeros(nl * nr),
        upsilon: DMatrix::zeros(nl * nr, t.beta),
    };
    let ls = l * &s;
    let lb = l * &b;
    for i in 0..nr {
        let ri = &model.ms_inv * r.column(i);
        let cs = &t.c_s * &ri;
        let cb = &t.c_b * &ri;
        let lb_cb = &lb * DMatrix::from_diagonal(&cb);
        let g = &ls * DMatrix::from_diagonal(&cs) - &lb_cb * &map.lambda;
        let mu = l * &w * &ri + &lb_cb * &map.tau - target.column(i);
        let ups = l * &gyro * DMatrix::from_diagonal(&cb) + &lb_cb * &map.wheel;
        out.gamma.rows_mut(i * nl, nl).copy_from(&g);
        out.mu.rows_mut(i * nl, nl).copy_from(&mu);
        out.upsilon.rows_mut(i * nl, nl).copy_from(&ups);
    }
    Ok(out)
}

/// Position regulation equations. Uses the matrix form when the structure is
/// unconstrained or `lagrange` is given, the exact constrained form otherwise.
pub fn position_control_system(
    model: &Model,
    state: &StructureState,
    objective: &ShapeObjective,
    wrench: &Wrench,
    lagrange: Option<&DVector<f64>>,
) -> Result<ControlSystem, ControlError> {
    objective.check()?;
    let target = -(objective.error_rate(&state.n_dot) * &objective.psi + objective.error(&state.n) * &objective.theta);
    block(model, state, wrench, lagrange, &objective.l, &objective.r, &target)
}

pub fn velocity_control_system(
    model: &Model,
    state: &StructureState,
    objective: &VelocityObjective,
    wrench: &Wrench,
    lagrange: Option<&DVector<f64>>,
) -> Result<ControlSystem, ControlError> {
    if objective.psi.shape() != (objective.r.ncols(), objective.r.ncols()) || objective.y_dot_bar.shape() != (objective.l.nrows(), objective.r.ncols()) {
        return Err(ControlError::Dimension("velocity objective is inconsistent".into()));
    }
    let e_v = &objective.l * &state.n_dot * &objective.r - &objective.y_dot_bar;
    let target = -(e_v * &objective.psi);
    block(model, state, wrench, lagrange, &objective.l, &objective.r, &target)
}

pub fn acceleration_control_system(
    model: &Model,
    state: &StructureState,
    objective: &AccelerationObjective,
    wrench: &Wrench,
    lagrange: Option<&DVector<f64>>,
) -> Result<ControlSystem, ControlError> {
    block(model, state, wrench, lagrange, &objective.l, &objective.r, &objective.y_ddot_bar)
}

/// Position block stacked with the optional velocity and acceleration blocks.
pub fn combined_control_system(
    model: &Model,
    state: &StructureState,
    objective: &ShapeObjective,
    wrench: &Wrench,
    lagrange: Option<&DVector<f64>>,
) -> Result<ControlSystem, ControlError> {
    let mut systems = vec![position_control_system(model, state, objective, wrench, lagrange)?];
    if let Some(v) = &objective.velocity {
        systems.push(velocity_control_system(model, state, v, wrench, lagrange)?);
    }
    if let Some(a) = &objective.acceleration {
        systems.push(acceleration_control_system(model, state, a, wrench, lagrange)?);
    }
    stack(&systems)
}
