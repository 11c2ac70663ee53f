use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ControlError, ControlSystem};
use crate::optimize::{solve_nnls, solve_nonneg_lp, NonnegLp, OptimizeError};

/// How wheel speeds enter the control equations.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum WheelPolicy {
    /// Wheel speeds are given and moved to the right-hand side.
    #[default]
    Prescribed,
    /// Wheel speeds are decision variables `ω = ω⁺ − ω⁻` with cost
    /// `cost · Σ (ω⁺ + ω⁻)`.
    Free { cost: f64, max_speed: Option<f64> },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlPolicy {
    /// Optional upper bound on every string force density.
    pub gamma_max: Option<f64>,
    #[serde(default)]
    pub wheels: WheelPolicy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlCommand {
    pub gamma: DVector<f64>,
    /// Wheel speeds used in the equations (prescribed or solved).
    pub omega_w: DVector<f64>,
    /// Whether the equations hold exactly with `γ ≥ 0`.
    pub feasible: bool,
    /// `‖Γ γ − μ − Υ ω_w‖∞`.
    pub residual: f64,
}

/// Minimum total force density `Σ γ` with `γ ≥ 0` solving the control
/// equations. Falls back to nonnegative least squares when no exact
/// solution exists; the fallback is returned inside the error.
pub fn compute_control(system: &ControlSystem, omega_w: &DVector<f64>, policy: &ControlPolicy) -> Result<ControlCommand, ControlError> {
    let alpha = system.gamma.ncols();
    let beta = system.upsilon.ncols();
    if omega_w.len() != beta {
        return Err(ControlError::Dimension(format!("{} wheel speeds for {beta} bars", omega_w.len())));
    }
    let (a, b, cost, upper) = match &policy.wheels {
        WheelPolicy::Prescribed => {
            let upper = policy.gamma_max.map(|g| DVector::from_element(alpha, g));
            (system.gamma.clone(), &system.mu + &system.upsilon * omega_w, DVector::from_element(alpha, 1.0), upper)
        }
        WheelPolicy::Free { cost, max_speed } => {
            let rows = system.rows();
            let mut a = DMatrix::zeros(rows, alpha + 2 * beta);
            a.columns_mut(0, alpha).copy_from(&system.gamma);
            a.columns_mut(alpha, beta).copy_from(&(-&system.upsilon));
            a.columns_mut(alpha + beta, beta).copy_from(&system.upsilon);
            let mut c = DVector::from_element(alpha + 2 * beta, *cost);
            c.rows_mut(0, alpha).fill(1.0);
            let upper = if policy.gamma_max.is_some() || max_speed.is_some() {
                let mut u = DVector::from_element(alpha + 2 * beta, max_speed.unwrap_or(f64::INFINITY));
                u.rows_mut(0, alpha).fill(policy.gamma_max.unwrap_or(f64::INFINITY));
                Some(u)
            } else {
                None
            };
            (a, system.mu.clone(), c, upper)
        }
    };
    let split = |x: &DVector<f64>| -> (DVector<f64>, DVector<f64>) {
        let gamma = x.rows(0, alpha).into_owned();
        let omega = match policy.wheels {
            WheelPolicy::Prescribed => omega_w.clone(),
            WheelPolicy::Free { .. } => x.rows(alpha, beta) - x.rows(alpha + beta, beta),
        };
        (gamma, omega)
    };
    let mut lp = NonnegLp::new(a.clone(), b.clone(), cost);
    if let Some(u) = upper {
        lp = lp.with_upper(u);
    }
    let scale = 1.0 + b.amax();
    let lp_error = match solve_nonneg_lp(&lp) {
        Ok(sol) => {
            let (gamma, omega) = split(&sol.x);
            let residual = system.residual(&gamma, &omega).amax();
            return Ok(ControlCommand {
                gamma,
                omega_w: omega,
                feasible: true,
                residual,
            });
        }
        Err(e) => e,
    };
    let nnls = solve_nnls(&a, &b).map_err(|e| ControlError::Solver(e.to_string()))?;
    let (gamma, omega) = split(&nnls.x);
    let residual = system.residual(&gamma, &omega).amax();
    let command = ControlCommand {
        gamma,
        omega_w: omega,
        feasible: false,
        residual,
    };
    match lp_error {
        OptimizeError::Infeasible { .. } => Err(ControlError::Infeasible {
            residual,
            fallback: Box::new(command),
        }),
        _ if residual <= 1e-9 * scale => Ok(ControlCommand {
            feasible: true,
            ..command
        }),
        other => Err(ControlError::Solver(other.to_string())),
    }
}
