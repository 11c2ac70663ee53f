use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector, Rotation3, Vector3};

use super::{GainSource, Scenario, ScenarioError, StructureSpec, Symmetry};
use crate::dynamics::{devectorize, vectorize, ConstraintSet, MaterialSpec, Model, StructureState, Wrench};
use crate::gain_synthesis::{synthesize, BoundKind, GainProblem, GainResult};
use crate::shape_control::{coordinate_selector, reduced_controller, CoordinateObjective};
use crate::topology::{dbar_frame, reconfigure_tnd1, tbar_frame, tnd1_frame, Frame, Pin, Structure};

/// Everything needed to run a scenario.
#[derive(Clone, Debug)]
pub struct Setup {
    pub structure: Structure,
    pub pins: Vec<Pin>,
    pub model: Model,
    /// Controlled `(node, axis)` coordinates.
    pub coordinates: Vec<(usize, usize)>,
    /// Independent motions of the structure at the initial shape.
    pub dof: usize,
    /// `3 × n` target node positions.
    pub target: DMatrix<f64>,
    pub objective: CoordinateObjective,
    pub initial: StructureState,
    pub synthesis: Option<GainResult>,
    /// Disturbance input `B_d` at the initial state.
    pub disturbance_input: DMatrix<f64>,
}

const GEOMETRY_TOL: f64 = 1e-9;

/// Builder frame with its automatic pins, optionally with the D-bars opened
/// to `angle_d` (radians) at constant bar lengths.
fn frame_for(spec: &StructureSpec, angle_d: Option<f64>) -> Result<(Frame, Vec<Pin>), ScenarioError> {
    match spec {
        StructureSpec::Dbar {
            angle_d_deg,
            length,
            dimension,
        } => {
            let a0 = angle_d_deg.to_radians();
            let (a, l) = match angle_d {
                Some(a1) => (a1, reconfigure_tnd1(&[], a0, *length, a1)?.0),
                None => (a0, *length),
            };
            Ok((dbar_frame(a, l, *dimension)?, Vec::new()))
        }
        StructureSpec::Tbar {
            angle_t_deg,
            length,
            dimension,
        } => {
            if angle_d.is_some() {
                return Err(ScenarioError::Invalid("a T-bar has no D-bar angle to change".into()));
            }
            Ok((tbar_frame(angle_t_deg.to_radians(), *length, *dimension)?, Vec::new()))
        }
        StructureSpec::Tnd1 {
            angles_t_deg,
            angle_d_deg,
            length,
            dimension,
            anchor_offset,
        } => {
            let at0: Vec<f64> = angles_t_deg.iter().map(|a| a.to_radians()).collect();
            let a0 = angle_d_deg.to_radians();
            let (at, a, l) = match angle_d {
                Some(a1) => {
                    let (l1, at1) = reconfigure_tnd1(&at0, a0, *length, a1)?;
                    (at1, a1, l1)
                }
                None => (at0, a0, *length),
            };
            let mut frame = tnd1_frame(at.len(), &at, a, l, *dimension)?;
            let mut pins = Vec::new();
            if let Some(h) = anchor_offset {
                if !(*h > 0.0) {
                    return Err(ScenarioError::Invalid("anchor_offset must be positive".into()));
                }
                let tips: Vec<usize> = (0..frame.points.len())
                    .filter(|&p| (frame.points[p].x - l / 2.0).abs() <= GEOMETRY_TOL * l && frame.points[p].z.abs() > GEOMETRY_TOL * l)
                    .collect();
                let by_z = |p: &&usize| frame.points[**p].z;
                let top = *tips.iter().max_by(|a, b| by_z(a).total_cmp(&by_z(b))).expect("T-bar stem tips exist");
                let bottom = *tips.iter().min_by(|a, b| by_z(a).total_cmp(&by_z(b))).expect("T-bar stem tips exist");
                let up = frame.point(Vector3::new(0.0, 0.0, *h));
                let down = frame.point(Vector3::new(0.0, 0.0, -*h));
                frame.string(up, top);
                frame.string(down, bottom);
                pins.push(Pin::new(up, "xyz"));
                pins.push(Pin::new(down, "xyz"));
            }
            Ok((frame, pins))
        }
        StructureSpec::Document { document } => {
            if angle_d.is_some() {
                return Err(ScenarioError::Invalid("explicit structures cannot be reconfigured".into()));
            }
            Ok((document.frame()?, document.pins.clone()))
        }
    }
}

/// D-bar angle (radians) at which the structure spans `reach`.
fn angle_for_reach(spec: &StructureSpec, reach: f64) -> Result<f64, ScenarioError> {
    let (levels, angle_d_deg, length) = match spec {
        StructureSpec::Dbar { angle_d_deg, length, .. } => (0, *angle_d_deg, *length),
        StructureSpec::Tnd1 {
            angles_t_deg,
            angle_d_deg,
            length,
            ..
        } => (angles_t_deg.len() as i32, *angle_d_deg, *length),
        _ => return Err(ScenarioError::Invalid("reach targets need a D-bar or TnD1 builder".into())),
    };
    let scale = 2f64.powi(levels);
    let l_d = length / scale / 2.0 / angle_d_deg.to_radians().cos();
    let c = reach / (scale * 2.0 * l_d);
    if !(c > 0.0 && c < 1.0) {
        return Err(ScenarioError::Invalid(format!("reach {reach} is outside (0, {})", scale * 2.0 * l_d)));
    }
    Ok(c.acos())
}

/// Orthonormal basis (columns) of node velocities that keep bar lengths
/// and constraints at `n`.
pub fn tangent_basis(model: &Model, n: &DMatrix<f64>) -> DMatrix<f64> {
    let nn = model.n_nodes();
    let beta = model.topology.beta;
    let mut jac = DMatrix::zeros(beta, 3 * nn);
    for (i, [a, b]) in model.bars().iter().enumerate() {
        for ax in 0..3 {
            let d = n[(ax, *b)] - n[(ax, *a)];
            jac[(i, ax * nn + b)] = d;
            jac[(i, ax * nn + a)] = -d;
        }
    }
    let v2 = &model.constraints.v2;
    let m = &jac * v2;
    let cols = m.ncols();
    if cols == 0 {
        return DMatrix::zeros(3 * nn, 0);
    }
    let mut padded = DMatrix::zeros(m.nrows().max(cols), cols);
    padded.view_mut((0, 0), m.shape()).copy_from(&m);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let smax = svd.singular_values.max().max(1e-300);
    let free: Vec<usize> = (0..cols).filter(|&k| svd.singular_values[k] <= 1e-9 * smax).collect();
    let null = DMatrix::from_fn(cols, free.len(), |i, j| v_t[(free[j], i)]);
    v2 * null
}

/// Smallest row component, orthogonal to the rows already selected, that
/// counts as a new independent coordinate.
const SELECTION_TOL: f64 = 1e-3;

/// Point mirrored by `z → −z`.
fn mirror_point(s: &Structure, p: usize) -> Option<usize> {
    let q = s.points[p].component_mul(&Vector3::new(1.0, 1.0, -1.0));
    s.points.iter().position(|r| (r - q).norm() <= GEOMETRY_TOL * (1.0 + q.norm()))
}

/// Greedy independent subset of the candidate coordinates: each `(point,
/// axis)` (or mirror pair) is kept when it adds to the rank of the selected
/// rows of the tangent basis at every configuration in `configurations`.
/// Returns `(node, axis)` pairs.
pub fn select_coordinates(
    model: &Model,
    s: &Structure,
    configurations: &[&DMatrix<f64>],
    points: &[usize],
    axes: &[usize],
    symmetry: Symmetry,
) -> Result<Vec<(usize, usize)>, ScenarioError> {
    let nn = model.n_nodes();
    let tangents: Vec<DMatrix<f64>> = configurations.iter().map(|n| tangent_basis(model, n)).collect();
    let dof = tangents.iter().map(|t| t.ncols()).min().unwrap_or(0);
    let mut bases: Vec<Vec<DVector<f64>>> = vec![Vec::new(); tangents.len()];
    let mut chosen = Vec::new();
    let mut seen = BTreeSet::new();
    for &p in points {
        for &ax in axes {
            if chosen.len() == dof {
                return Ok(chosen);
            }
            let mut orbit = vec![p];
            if symmetry == Symmetry::MirrorZ {
                let q = mirror_point(s, p).ok_or_else(|| ScenarioError::Invalid(format!("point {p} has no mirror image")))?;
                if q != p {
                    orbit.push(q);
                }
            }
            orbit.sort_unstable();
            if !seen.insert((orbit.clone(), ax)) {
                continue;
            }
            let nodes: Vec<usize> = orbit.iter().filter_map(|pt| s.point_node(*pt)).collect();
            if nodes.len() != orbit.len() {
                continue;
            }
            let mut trials = bases.clone();
            let independent = tangents.iter().zip(trials.iter_mut()).all(|(tangent, trial)| {
                nodes.iter().all(|node| {
                    let mut r = tangent.row(ax * nn + node).transpose();
                    for _ in 0..2 {
                        for b in trial.iter() {
                            r -= b * b.dot(&r);
                        }
                    }
                    let norm = r.norm();
                    if norm > SELECTION_TOL {
                        trial.push(r / norm);
                        true
                    } else {
                        false
                    }
                })
            });
            if independent {
                bases = trials;
                chosen.extend(nodes.iter().map(|node| (*node, ax)));
            }
        }
    }
    Ok(chosen)
}

fn axis_indices(axes: &str) -> Vec<usize> {
    axes.chars().map(|c| "xyz".find(c).expect("validated axis")).collect()
}

/// Structure and pins of a scenario at its initial geometry.
pub fn structure_of(scenario: &Scenario) -> Result<(Structure, Vec<Pin>), ScenarioError> {
    let (frame, mut pins) = frame_for(&scenario.structure, None)?;
    pins.extend(scenario.pins.iter().cloned());
    Ok((frame.build()?, pins))
}

pub fn prepare(scenario: &Scenario) -> Result<Setup, ScenarioError> {
    scenario.validate()?;
    let (frame, mut pins) = frame_for(&scenario.structure, None)?;
    pins.extend(scenario.pins.iter().cloned());
    let structure = frame.build()?;
    let t = &structure.topology;
    let mat = &scenario.material;
    let mut material = MaterialSpec::uniform(&structure, mat.bar_mass, mat.node_mass, mat.wheel_radius, mat.string_stiffness);
    if let StructureSpec::Document { document } = &scenario.structure {
        if let Some(m) = &document.materials {
            material = m.clone();
        }
    }
    let constraints = ConstraintSet::for_structure(&structure, &pins)?;
    let model = Model::new(&structure, material, constraints)?;
    let nn = t.n_nodes();

    let tg = &scenario.target;
    let new_angle = match (tg.angle_d_deg, tg.reach) {
        (Some(a), _) => Some(a.to_radians()),
        (None, Some(r)) => Some(angle_for_reach(&scenario.structure, r)?),
        (None, None) => None,
    };
    let target_frame = match new_angle {
        Some(a) => frame_for(&scenario.structure, Some(a))?.0,
        None => frame.clone(),
    };
    if target_frame.points.len() != frame.points.len() || target_frame.bars != frame.bars || target_frame.strings != frame.strings {
        return Err(ScenarioError::Invalid("target geometry changes the member layout".into()));
    }
    let rot = Rotation3::from_axis_angle(&Vector3::y_axis(), tg.rotate_y_deg.to_radians())
        * Rotation3::from_axis_angle(&Vector3::x_axis(), tg.rotate_x_deg.to_radians());
    let target_points: Vec<Vector3<f64>> = target_frame.points.iter().map(|p| rot * p).collect();
    let target = structure.nodes_at(&target_points);

    let points = match &scenario.objective.points {
        Some(p) => {
            if let Some(bad) = p.iter().find(|p| **p >= structure.points.len()) {
                return Err(ScenarioError::Invalid(format!("objective point {bad} does not exist")));
            }
            p.clone()
        }
        None => (0..structure.points.len()).collect(),
    };
    let coordinates = select_coordinates(&model, &structure, &[&structure.nodes, &target], &points, &axis_indices(&scenario.objective.axes), scenario.objective.symmetry)?;
    if coordinates.is_empty() {
        return Err(ScenarioError::Invalid("no controllable coordinate among the candidates".into()));
    }
    let dof = tangent_basis(&model, &structure.nodes).ncols();
    let selector = coordinate_selector(nn, &coordinates);
    let target_vec = &selector * vectorize(&target);

    let mut initial = StructureState::at_rest(structure.nodes.clone(), t.beta);
    initial.omega_w.fill(scenario.initial.omega_w);
    if let Some(rate) = scenario.initial.error_rate {
        let tangent = tangent_basis(&model, &structure.nodes);
        let e0 = &selector * vectorize(&initial.n) - &target_vec;
        let lt = &selector * &tangent;
        let a = lt.svd(true, true).solve(&(e0 * rate), 1e-12).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        initial.n_dot = devectorize(&(&tangent * a), nn);
    }

    let probe = CoordinateObjective::with_scalar_gains(selector.clone(), target_vec.clone(), 0.0, 0.0)?;
    let disturbance_input = reduced_controller(&model, &initial, &Wrench::zero(nn, t.beta), &probe)?.disturbance;
    let (objective, synthesis) = match &scenario.gains {
        GainSource::Explicit { theta, psi } => (CoordinateObjective::with_scalar_gains(selector, target_vec, *theta, *psi)?, None),
        GainSource::Synthesized {
            kind,
            effort,
            level,
            noise_intensity,
        } => {
            let mut problem = GainProblem::double_integrator(&disturbance_input, *kind).with_effort(*effort);
            if *kind == BoundKind::Covariance {
                let w = noise_intensity.unwrap_or(1.0);
                problem.noise = Some(DMatrix::identity(3 * nn, 3 * nn) * w);
            }
            let result = synthesize(&problem, *level)?;
            let objective = CoordinateObjective::new(selector, target_vec, result.theta.clone(), result.psi.clone())?;
            (objective, Some(result))
        }
    };
    Ok(Setup {
        structure,
        pins,
        model,
        coordinates,
        dof,
        target,
        objective,
        initial,
        synthesis,
        disturbance_input,
    })
}
