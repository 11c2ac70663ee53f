//! Matrix-form dynamics of (gyroscopic) class-k tensegrity structures.

mod constraints;
mod integrate;
mod model;
mod vectorize;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{Structure, Topology};

pub use constraints::{ConstraintSet, RANK_TOL};
pub use integrate::{LagrangeIntegrator, ReducedIntegrator, ReducedSystem};
pub use model::{assemble_ks, assemble_ms, Accelerations, LambdaMap, Model};
pub use vectorize::{devectorize, kron_eye3, vectorize};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("invalid material: {0}")]
    Material(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("constraints are inconsistent (residual {residual:e})")]
    InconsistentConstraints { residual: f64 },
    #[error("degenerate constraint coupling: {0}")]
    ConstraintDegeneracy(String),
    #[error("state became non-finite at t = {t}")]
    NonFinite { t: f64 },
}

/// Bar, wheel and string material data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialSpec {
    /// Bar masses (kg).
    pub bar_mass: Vec<f64>,
    /// Bar lengths (m).
    pub bar_length: Vec<f64>,
    /// Wheel radii (m); zero for bars without a wheel.
    pub wheel_radius: Vec<f64>,
    /// Point masses at string-only nodes (kg).
    pub node_mass: Vec<f64>,
    /// Axial string stiffness `EA` (N), used for the rest-length conversion.
    pub string_stiffness: Vec<f64>,
    /// Optional `[min, max]` admissible rest lengths per string (m).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rest_length_bounds: Option<Vec<[f64; 2]>>,
}

impl MaterialSpec {
    /// Same bar mass, node mass, wheel radius and stiffness everywhere, with
    /// bar lengths taken from the nominal geometry.
    pub fn uniform(s: &Structure, bar_mass: f64, node_mass: f64, wheel_radius: f64, stiffness: f64) -> Self {
        let t = &s.topology;
        Self {
            bar_mass: vec![bar_mass; t.beta],
            bar_length: s.bar_lengths(),
            wheel_radius: vec![wheel_radius; t.beta],
            node_mass: vec![node_mass; t.sigma],
            string_stiffness: vec![stiffness; t.alpha],
            rest_length_bounds: None,
        }
    }

    /// Transverse inertia coefficients `m_b / 12`.
    pub fn inertia(&self) -> Vec<f64> {
        self.bar_mass.iter().map(|m| m / 12.0).collect()
    }

    /// Wheel inertia coefficients `m_b / 12 + m_b r_b² / l²`.
    pub fn wheel_inertia(&self) -> Vec<f64> {
        self.bar_mass
            .iter()
            .zip(&self.wheel_radius)
            .zip(&self.bar_length)
            .map(|((m, r), l)| m / 12.0 + m * r * r / (l * l))
            .collect()
    }

    pub fn validate(&self, t: &Topology) -> Result<(), DynamicsError> {
        let counts = [
            ("bar_mass", self.bar_mass.len(), t.beta),
            ("bar_length", self.bar_length.len(), t.beta),
            ("wheel_radius", self.wheel_radius.len(), t.beta),
            ("node_mass", self.node_mass.len(), t.sigma),
            ("string_stiffness", self.string_stiffness.len(), t.alpha),
        ];
        for (name, got, expected) in counts {
            if got != expected {
                return Err(DynamicsError::Material(format!("{name} has {got} entries, expected {expected}")));
            }
        }
        let positive = |name: &str, v: &[f64]| -> Result<(), DynamicsError> {
            match v.iter().position(|x| !(x.is_finite() && *x > 0.0)) {
                Some(i) => Err(DynamicsError::Material(format!("{name}[{i}] = {} must be positive", v[i]))),
                None => Ok(()),
            }
        };
        positive("bar_mass", &self.bar_mass)?;
        positive("bar_length", &self.bar_length)?;
        positive("node_mass", &self.node_mass)?;
        positive("string_stiffness", &self.string_stiffness)?;
        if let Some(i) = self.wheel_radius.iter().position(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(DynamicsError::Material(format!("wheel_radius[{i}] must be non-negative")));
        }
        if let Some(bounds) = &self.rest_length_bounds {
            if bounds.len() != t.alpha {
                return Err(DynamicsError::Material(format!(
                    "rest_length_bounds has {} entries, expected {}",
                    bounds.len(),
                    t.alpha
                )));
            }
            if let Some(i) = bounds.iter().position(|[lo, hi]| !(*lo >= 0.0 && lo <= hi)) {
                return Err(DynamicsError::Material(format!("rest_length_bounds[{i}] is not an interval")));
            }
        }
        Ok(())
    }

    /// Hookean rest lengths `ℓ k / (k + γ ℓ)` for force densities `gamma`
    /// at current string lengths `lengths`.
    pub fn rest_lengths(&self, gamma: &DVector<f64>, lengths: &[f64]) -> Vec<f64> {
        gamma
            .iter()
            .zip(lengths)
            .zip(&self.string_stiffness)
            .map(|((g, l), k)| l * k / (k + g * l))
            .collect()
    }
}

/// Positions, velocities, time and wheel speeds.
#[derive(Clone, Debug, PartialEq)]
pub struct StructureState {
    /// `3 × n` node positions.
    pub n: DMatrix<f64>,
    /// `3 × n` node velocities.
    pub n_dot: DMatrix<f64>,
    pub t: f64,
    /// Wheel speeds (rad/s).
    pub omega_w: DVector<f64>,
}

impl StructureState {
    pub fn at_rest(n: DMatrix<f64>, beta: usize) -> Self {
        let n_dot = DMatrix::zeros(n.nrows(), n.ncols());
        Self {
            n,
            n_dot,
            t: 0.0,
            omega_w: DVector::zeros(beta),
        }
    }

    pub fn bar_vectors(&self, t: &Topology) -> DMatrix<f64> {
        &self.n * t.c_b.transpose()
    }

    pub fn string_vectors(&self, t: &Topology) -> DMatrix<f64> {
        &self.n * t.c_s.transpose()
    }

    pub fn is_finite(&self) -> bool {
        self.n.iter().chain(self.n_dot.iter()).chain(self.omega_w.iter()).all(|v| v.is_finite())
    }
}

/// External loads, disturbances and wheel drive.
#[derive(Clone, Debug, PartialEq)]
pub struct Wrench {
    /// `3 × n` external nodal forces.
    pub w: DMatrix<f64>,
    /// `3 × n` disturbance forces.
    pub w_d: DMatrix<f64>,
    /// Axial wheel drive torques.
    pub tau_b: DVector<f64>,
    /// Optional `3 × β` transverse torques applied to the bars.
    pub torque: Option<DMatrix<f64>>,
}

impl Wrench {
    pub fn zero(n_nodes: usize, beta: usize) -> Self {
        Self {
            w: DMatrix::zeros(3, n_nodes),
            w_d: DMatrix::zeros(3, n_nodes),
            tau_b: DVector::zeros(beta),
            torque: None,
        }
    }

    /// Uniform gravity `g` (m/s², along −z) on the given mass matrix.
    pub fn gravity(ms: &DMatrix<f64>, beta: usize, g: f64) -> Self {
        let n = ms.nrows();
        let mut out = Self::zero(n, beta);
        let lumped = ms * DVector::from_element(n, 1.0);
        for j in 0..n {
            out.w[(2, j)] = -g * lumped[j];
        }
        out
    }

    /// Wheel accelerations produced by the drive torques: `τ_B / (J_a l²)`.
    pub fn omega_w_dot(&self, material: &MaterialSpec) -> DVector<f64> {
        let ja = material.wheel_inertia();
        DVector::from_fn(self.tau_b.len(), |i, _| self.tau_b[i] / (ja[i] * material.bar_length[i].powi(2)))
    }
}
