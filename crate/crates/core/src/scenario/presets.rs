use super::{Scenario, ScenarioError};

/// Bundled scenarios by name.
pub const PRESETS: &[(&str, &str)] = &[
    ("t2d1-extension", include_str!("../../scenarios/t2d1-extension.toml")),
    ("t2d1-tip-motion", include_str!("../../scenarios/t2d1-tip-motion.toml")),
    ("dbar-gyro-rotation", include_str!("../../scenarios/dbar-gyro-rotation.toml")),
    ("t2d1-sweep", include_str!("../../scenarios/t2d1-sweep.toml")),
    ("t1d1-disturbance", include_str!("../../scenarios/t1d1-disturbance.toml")),
];

pub fn preset(name: &str) -> Result<Scenario, ScenarioError> {
    let text = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| ScenarioError::Invalid(format!("unknown preset {name:?}")))?;
    Scenario::from_toml(text)
}
