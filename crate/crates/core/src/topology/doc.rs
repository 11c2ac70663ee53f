use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{Frame, Structure, TopologyError};
use crate::dynamics::MaterialSpec;

pub const FORMAT_VERSION: u32 = 1;

/// Fixes the listed axes (`"x"`, `"xz"`, `"xyz"`, ...) of a point at its
/// nominal coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pin {
    pub point: usize,
    pub axes: String,
}

impl Pin {
    pub fn new(point: usize, axes: &str) -> Self {
        Self {
            point,
            axes: axes.to_string(),
        }
    }

    pub fn axis_indices(&self) -> Result<Vec<usize>, TopologyError> {
        self.axes
            .chars()
            .map(|c| match c {
                'x' => Ok(0),
                'y' => Ok(1),
                'z' => Ok(2),
                other => Err(TopologyError::Document(format!("unknown axis '{other}' in pin"))),
            })
            .collect()
    }
}

/// Versioned text form of a structure: points, members by point index,
/// pins and optional materials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureDoc {
    pub format_version: u32,
    #[serde(default)]
    pub planar: bool,
    pub points: Vec<[f64; 3]>,
    pub bars: Vec<[usize; 2]>,
    pub strings: Vec<[usize; 2]>,
    #[serde(default)]
    pub pins: Vec<Pin>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub materials: Option<MaterialSpec>,
}

impl StructureDoc {
    pub fn from_structure(s: &Structure, pins: Vec<Pin>, materials: Option<MaterialSpec>) -> Self {
        let np = &s.node_point;
        Self {
            format_version: FORMAT_VERSION,
            planar: s.planar,
            points: s.points.iter().map(|p| [p.x, p.y, p.z]).collect(),
            bars: (0..s.topology.beta).map(|i| [np[2 * i], np[2 * i + 1]]).collect(),
            strings: s.topology.string_ends().iter().map(|[a, b]| [np[*a], np[*b]]).collect(),
            pins,
            materials,
        }
    }

    pub fn frame(&self) -> Result<Frame, TopologyError> {
        if self.format_version != FORMAT_VERSION {
            return Err(TopologyError::Document(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        for pin in &self.pins {
            if pin.point >= self.points.len() {
                return Err(TopologyError::PointIndex(pin.point));
            }
            pin.axis_indices()?;
        }
        Ok(Frame {
            points: self.points.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect(),
            bars: self.bars.clone(),
            strings: self.strings.clone(),
            planar: self.planar,
        })
    }

    pub fn structure(&self) -> Result<Structure, TopologyError> {
        self.frame()?.build()
    }

    pub fn to_toml(&self) -> Result<String, TopologyError> {
        toml::to_string(self).map_err(|e| TopologyError::Document(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self, TopologyError> {
        toml::from_str(text).map_err(|e| TopologyError::Document(e.to_string()))
    }
}
