//! Scenario files and the simulation, synthesis, sweep and verification
//! drivers behind the command-line front end.

mod presets;
mod setup;
mod sim;
mod sweep;
mod verify;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::DynamicsError;
use crate::gain_synthesis::{BoundKind, GainError};
use crate::shape_control::{ControlError, ControlPolicy};
use crate::topology::{Dimension, Pin, StructureDoc, TopologyError};

pub use presets::{preset, PRESETS};
pub use setup::{prepare, select_coordinates, structure_of, tangent_basis, Setup};
pub use sim::{simulate, write_trace_csv, SimOutput, Summary, TraceRow};
pub use sweep::{sweep, sweep_targets, SweepRow, SweepTarget};
pub use verify::{check_lambda_equivalence, check_lp_oracle, check_lyapunov_oracle, check_momentum, check_reduced_vs_full, run_verify, CheckReport, VerifyOptions};

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Gain(#[from] GainError),
}

impl ScenarioError {
    /// Whether the failure is a configuration problem rather than a
    /// numerical or feasibility one.
    pub fn is_config(&self) -> bool {
        matches!(self, Self::Parse(_) | Self::Invalid(_) | Self::Topology(_))
    }

    pub fn is_infeasible(&self) -> bool {
        matches!(self, Self::Gain(GainError::Infeasible(_)) | Self::Control(ControlError::Infeasible { .. }))
    }
}

/// A controlled (or open-loop) simulation experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub format_version: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub structure: StructureSpec,
    #[serde(default)]
    pub material: MaterialDefaults,
    /// Pins on structure points in addition to those of the builder.
    #[serde(default)]
    pub pins: Vec<Pin>,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub target: TargetSpec,
    #[serde(default)]
    pub objective: ObjectiveSpec,
    pub gains: GainSource,
    #[serde(default)]
    pub disturbance: DisturbanceSpec,
    #[serde(default)]
    pub control: ControlSpec,
    pub integration: IntegrationSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub outputs: OutputSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "builder", rename_all = "snake_case", deny_unknown_fields)]
pub enum StructureSpec {
    Dbar {
        angle_d_deg: f64,
        length: f64,
        #[serde(default)]
        dimension: Dimension,
    },
    Tbar {
        angle_t_deg: f64,
        length: f64,
        #[serde(default)]
        dimension: Dimension,
    },
    Tnd1 {
        angles_t_deg: Vec<f64>,
        angle_d_deg: f64,
        length: f64,
        #[serde(default)]
        dimension: Dimension,
        /// Ground anchors at `(0, 0, ±offset)` strung to the first T-bar
        /// stem tips and pinned.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        anchor_offset: Option<f64>,
    },
    /// Explicit member list.
    Document { document: StructureDoc },
}

/// Uniform material data applied to every member.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialDefaults {
    pub bar_mass: f64,
    pub node_mass: f64,
    /// Wheel radius on every bar; zero disables the wheels.
    pub wheel_radius: f64,
    pub string_stiffness: f64,
}

impl Default for MaterialDefaults {
    fn default() -> Self {
        Self {
            bar_mass: 1.0,
            node_mass: 1.0,
            wheel_radius: 0.0,
            string_stiffness: 1e4,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    /// Starts with `ė = rate · e` on the controlled coordinates, lifted to a
    /// velocity that keeps bar lengths and constraints.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_rate: Option<f64>,
    /// Initial speed of every wheel (rad/s).
    #[serde(default)]
    pub omega_w: f64,
}

/// Target shape: the builder geometry with its D-bars opened to a new
/// angle (bar lengths kept), then rotated about the origin.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle_d_deg: Option<f64>,
    /// Overall length to reach, as an alternative to `angle_d_deg`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reach: Option<f64>,
    #[serde(default)]
    pub rotate_x_deg: f64,
    #[serde(default)]
    pub rotate_y_deg: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symmetry {
    #[default]
    None,
    /// Coordinates are chosen in pairs closed under `z → −z`.
    MirrorZ,
}

/// Candidate coordinates; an independent subset is controlled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSpec {
    /// Candidate points (all points when absent).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<usize>>,
    /// Candidate axes in priority order.
    pub axes: String,
    #[serde(default)]
    pub symmetry: Symmetry,
}

impl Default for ObjectiveSpec {
    fn default() -> Self {
        Self {
            points: None,
            axes: "xzy".into(),
            symmetry: Symmetry::None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum GainSource {
    /// `Θ = θ I`, `Ψ = ψ I`.
    Explicit { theta: f64, psi: f64 },
    /// Gains from the LMI conditions on the initial linearization.
    Synthesized {
        kind: BoundKind,
        /// Feedback effort bound `u_max`.
        effort: f64,
        /// Fixed H∞ level or covariance bound level.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        level: Option<f64>,
        /// Noise intensity for the covariance bound.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        noise_intensity: Option<f64>,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DisturbanceSpec {
    #[default]
    None,
    /// `sin²(π t / T)` pulse on a random direction over all nodes,
    /// scaled to the given L₂ norm.
    Pulse { duration: f64, energy: f64 },
    /// Velocity jump from `w₀ δ(t)` with `‖w₀‖ = magnitude`.
    Impulse { magnitude: f64 },
    /// Zero-order-hold white noise of the given intensity.
    WhiteNoise { intensity: f64 },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlSpec {
    /// Holds the force densities of the first step instead of feeding back.
    #[serde(default)]
    pub open_loop: bool,
    #[serde(default, flatten)]
    pub policy: ControlPolicy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationSpec {
    pub dt: f64,
    pub steps: usize,
    /// Relative error level that counts as settled.
    #[serde(default = "default_settle_tol")]
    pub settle_tol: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_settle_tol() -> f64 {
    1e-3
}

/// Targets `(reach, rotation about y)` on a polar grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub reaches: Vec<f64>,
    pub angles_deg: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Every how many steps a trace row is written.
    pub trace_every: usize,
    /// Include node positions in the trace.
    pub nodes: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { trace_every: 1, nodes: true }
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let s: Self = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String, ScenarioError> {
        toml::to_string(self).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    /// Checks that do not need the structure to be built.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |msg: String| Err(ScenarioError::Invalid(msg));
        if self.format_version != SCENARIO_VERSION {
            return bad(format!("unsupported format version {} (expected {SCENARIO_VERSION})", self.format_version));
        }
        let i = &self.integration;
        if !(i.dt > 0.0 && i.dt.is_finite()) {
            return bad(format!("integration.dt = {} must be positive", i.dt));
        }
        if !(i.settle_tol > 0.0) {
            return bad("integration.settle_tol must be positive".into());
        }
        if self.outputs.trace_every == 0 {
            return bad("outputs.trace_every must be at least 1".into());
        }
        if self.target.angle_d_deg.is_some() && self.target.reach.is_some() {
            return bad("target sets both angle_d_deg and reach".into());
        }
        if self.objective.axes.is_empty() || self.objective.axes.chars().any(|c| !"xyz".contains(c)) {
            return bad(format!("objective.axes = {:?} must use x, y, z", self.objective.axes));
        }
        match &self.gains {
            GainSource::Explicit { theta, psi } if !(*theta >= 0.0 && *psi >= 0.0) => return bad("explicit gains must be non-negative".into()),
            GainSource::Synthesized { effort, .. } if !(*effort > 0.0) => return bad("synthesized gains need a positive effort bound".into()),
            GainSource::Synthesized {
                kind: BoundKind::Covariance,
                level,
                noise_intensity,
                ..
            } if level.is_none() || noise_intensity.is_none() => return bad("covariance synthesis needs level and noise_intensity".into()),
            _ => {}
        }
        match self.disturbance {
            DisturbanceSpec::Pulse { duration, energy } if !(duration > 0.0 && energy > 0.0) => {
                return bad("pulse duration and energy must be positive".into())
            }
            DisturbanceSpec::Impulse { magnitude } if !(magnitude > 0.0) => return bad("impulse magnitude must be positive".into()),
            DisturbanceSpec::WhiteNoise { intensity } if !(intensity > 0.0) => return bad("noise intensity must be positive".into()),
            _ => {}
        }
        if let Some(sw) = &self.sweep {
            if sw.reaches.iter().any(|r| !(*r > 0.0)) {
                return bad("sweep reaches must be positive".into());
            }
        }
        Ok(())
    }
}
