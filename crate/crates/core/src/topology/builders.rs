use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use super::{Structure, Topology, TopologyError};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    /// Embedded in the `y = 0` plane.
    #[default]
    Planar,
    Spatial,
}

/// Point-based member list. Each bar gets its own pair of nodes when built,
/// so points shared by several bars become class-k joints.
#[derive(Clone, Debug, Default)]
pub struct Frame {
    pub points: Vec<Vector3<f64>>,
    pub bars: Vec<[usize; 2]>,
    pub strings: Vec<[usize; 2]>,
    pub planar: bool,
}

impl Frame {
    pub fn new(dim: Dimension) -> Self {
        Self {
            planar: dim == Dimension::Planar,
            ..Self::default()
        }
    }

    /// Index of the point at `p`, adding it if no existing point coincides.
    pub fn point(&mut self, p: Vector3<f64>) -> usize {
        let tol = 1e-9 * (1.0 + p.norm());
        if let Some(i) = self.points.iter().position(|q| (q - p).norm() < tol) {
            return i;
        }
        self.points.push(p);
        self.points.len() - 1
    }

    pub fn bar(&mut self, a: usize, b: usize) {
        self.bars.push([a, b]);
    }

    pub fn string(&mut self, a: usize, b: usize) {
        self.strings.push([a, b]);
    }

    pub fn build(&self) -> Result<Structure, TopologyError> {
        for m in self.bars.iter().chain(&self.strings) {
            for p in m {
                if *p >= self.points.len() {
                    return Err(TopologyError::PointIndex(*p));
                }
            }
            if m[0] == m[1] {
                return Err(TopologyError::SelfLoop(*m));
            }
        }
        let beta = self.bars.len();
        let mut node_point: Vec<usize> = self.bars.iter().flat_map(|b| [b[0], b[1]]).collect();
        let mut on_bar = vec![false; self.points.len()];
        for p in &node_point {
            on_bar[*p] = true;
        }
        let string_points: Vec<usize> = (0..self.points.len())
            .filter(|p| !on_bar[*p] && self.strings.iter().any(|s| s.contains(p)))
            .collect();
        node_point.extend(&string_points);
        let rep = |p: usize| node_point.iter().position(|q| *q == p).expect("point has a node");
        let strings: Vec<[usize; 2]> = self.strings.iter().map(|s| [rep(s[0]), rep(s[1])]).collect();
        let topology = Topology::new(beta, string_points.len(), &strings);
        let violations = topology.validate();
        if !violations.is_empty() {
            return Err(TopologyError::Invalid(violations));
        }

        let mut nodes = DMatrix::zeros(3, node_point.len());
        for (j, p) in node_point.iter().enumerate() {
            nodes.set_column(j, &self.points[*p]);
        }
        let mut joints = Vec::new();
        for p in 0..self.points.len() {
            let group: Vec<usize> = (0..node_point.len()).filter(|j| node_point[*j] == p).collect();
            if group.len() > 1 {
                joints.push(group);
            }
        }
        Ok(Structure {
            topology,
            nodes,
            node_point,
            points: self.points.clone(),
            joints,
            planar: self.planar,
        })
    }
}

fn check_angle(angle: f64) -> Result<(), TopologyError> {
    if angle > 0.0 && angle < FRAC_PI_2 && angle.is_finite() {
        Ok(())
    } else {
        Err(TopologyError::Angle(angle))
    }
}

fn check_length(length: f64) -> Result<(), TopologyError> {
    if length > 0.0 && length.is_finite() {
        Ok(())
    } else {
        Err(TopologyError::Length(length))
    }
}

/// Unit vectors `(v, w)` spanning the plane normal to `u`; `v` lies in the
/// x-z plane whenever `u` does.
fn normal_frame(u: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let v = Vector3::new(-u.z, 0.0, u.x);
    let v = if v.norm() > 1e-12 {
        v.normalize()
    } else {
        Vector3::new(1.0, 0.0, 0.0)
    };
    (v, u.cross(&v))
}

/// Radial directions around the axis `p → q`: up/down in the plane for
/// planar structures, `count` evenly spaced directions otherwise.
fn radial_dirs(p: &Vector3<f64>, q: &Vector3<f64>, dim: Dimension, count: usize) -> Vec<Vector3<f64>> {
    let u = (q - p).normalize();
    let (v, w) = normal_frame(&u);
    match dim {
        Dimension::Planar => vec![v, -v],
        Dimension::Spatial => (0..count)
            .map(|k| {
                let th = 2.0 * PI * k as f64 / count as f64;
                v * th.cos() + w * th.sin()
            })
            .collect(),
    }
}

/// Adds a D-bar between the points `p` and `q`.
fn add_dbar(frame: &mut Frame, p: Vector3<f64>, q: Vector3<f64>, angle: f64, dim: Dimension) {
    let ip = frame.point(p);
    let iq = frame.point(q);
    let mid = (p + q) / 2.0;
    let h = (q - p).norm() / 2.0 * angle.tan();
    let dirs = radial_dirs(&p, &q, dim, 3);
    let apex: Vec<usize> = dirs.iter().map(|d| frame.point(mid + d * h)).collect();
    for a in &apex {
        frame.bar(ip, *a);
        frame.bar(*a, iq);
    }
    match dim {
        Dimension::Planar => frame.string(apex[0], apex[1]),
        Dimension::Spatial => {
            for k in 0..3 {
                frame.string(apex[k], apex[(k + 1) % 3]);
            }
        }
    }
    frame.string(ip, iq);
}

/// Adds the T-bar stems and peripheral strings around `p → q` and returns
/// the center point.
fn add_tbar_stems(frame: &mut Frame, p: Vector3<f64>, q: Vector3<f64>, angle: f64, dim: Dimension) -> usize {
    let ip = frame.point(p);
    let iq = frame.point(q);
    let mid = (p + q) / 2.0;
    let io = frame.point(mid);
    let h = (q - p).norm() / 2.0 * angle.tan();
    let dirs = radial_dirs(&p, &q, dim, 4);
    let tips: Vec<usize> = dirs.iter().map(|d| frame.point(mid + d * h)).collect();
    for t in &tips {
        frame.bar(io, *t);
    }
    match dim {
        Dimension::Planar => {
            frame.string(ip, tips[0]);
            frame.string(tips[0], iq);
            frame.string(iq, tips[1]);
            frame.string(tips[1], ip);
        }
        Dimension::Spatial => {
            for t in &tips {
                frame.string(ip, *t);
                frame.string(*t, iq);
            }
            for k in 0..4 {
                frame.string(tips[k], tips[(k + 1) % 4]);
            }
        }
    }
    io
}

fn axis(length: f64) -> (Vector3<f64>, Vector3<f64>) {
    (Vector3::zeros(), Vector3::new(length, 0.0, 0.0))
}

/// D-bar with apexes at the origin and `(length, 0, 0)`.
pub fn dbar_frame(angle_d: f64, length: f64, dim: Dimension) -> Result<Frame, TopologyError> {
    check_angle(angle_d)?;
    check_length(length)?;
    let mut frame = Frame::new(dim);
    let (p, q) = axis(length);
    add_dbar(&mut frame, p, q, angle_d, dim);
    Ok(frame)
}

/// T-bar spanning the origin to `(length, 0, 0)` with a center joint.
pub fn tbar_frame(angle_t: f64, length: f64, dim: Dimension) -> Result<Frame, TopologyError> {
    check_angle(angle_t)?;
    check_length(length)?;
    let mut frame = Frame::new(dim);
    let (p, q) = axis(length);
    let ip = frame.point(p);
    let iq = frame.point(q);
    let io = frame.point((p + q) / 2.0);
    frame.bar(ip, io);
    frame.bar(io, iq);
    add_tbar_stems(&mut frame, p, q, angle_t, dim);
    Ok(frame)
}

/// `n` levels of T-bar substitution terminated by D-bars.
pub fn tnd1_frame(n: usize, angles_t: &[f64], angle_d: f64, length: f64, dim: Dimension) -> Result<Frame, TopologyError> {
    if n == 0 {
        return Err(TopologyError::Complexity);
    }
    if angles_t.len() != n {
        return Err(TopologyError::AngleCount {
            expected: n,
            got: angles_t.len(),
        });
    }
    for a in angles_t {
        check_angle(*a)?;
    }
    check_angle(angle_d)?;
    check_length(length)?;
    let mut frame = Frame::new(dim);
    let (p, q) = axis(length);
    substitute(&mut frame, p, q, 0, angles_t, angle_d, dim);
    Ok(frame)
}

fn substitute(frame: &mut Frame, p: Vector3<f64>, q: Vector3<f64>, level: usize, angles_t: &[f64], angle_d: f64, dim: Dimension) {
    if level < angles_t.len() {
        let mid = (p + q) / 2.0;
        add_tbar_stems(frame, p, q, angles_t[level], dim);
        substitute(frame, p, mid, level + 1, angles_t, angle_d, dim);
        substitute(frame, mid, q, level + 1, angles_t, angle_d, dim);
    } else {
        add_dbar(frame, p, q, angle_d, dim);
    }
}

pub fn build_dbar(angle_d: f64, length: f64, dim: Dimension) -> Result<Structure, TopologyError> {
    dbar_frame(angle_d, length, dim)?.build()
}

pub fn build_tbar(angle_t: f64, length: f64, dim: Dimension) -> Result<Structure, TopologyError> {
    tbar_frame(angle_t, length, dim)?.build()
}

pub fn build_tnd1(n: usize, angles_t: &[f64], angle_d: f64, length: f64, dim: Dimension) -> Result<Structure, TopologyError> {
    tnd1_frame(n, angles_t, angle_d, length, dim)?.build()
}

/// Overall length and T-bar angles of the same `TnD1` arm (identical bar
/// lengths) after its D-bars are opened to `new_angle_d`.
pub fn reconfigure_tnd1(angles_t: &[f64], angle_d: f64, length: f64, new_angle_d: f64) -> Result<(f64, Vec<f64>), TopologyError> {
    check_angle(angle_d)?;
    check_angle(new_angle_d)?;
    check_length(length)?;
    let n = angles_t.len() as i32;
    let scale = 2f64.powi(n);
    let l_d = (length / scale / 2.0) / angle_d.cos();
    let new_length = scale * 2.0 * l_d * new_angle_d.cos();
    let new_angles = angles_t
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let level = 2f64.powi(k as i32);
            let h = length / level / 2.0 * a.tan();
            (h / (new_length / level / 2.0)).atan()
        })
        .collect();
    Ok((new_length, new_angles))
}
