mod common;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensegrity_core::dynamics::{vectorize, ConstraintSet, MaterialSpec, Model, StructureState, Wrench};
use tensegrity_core::shape_control::{
    acceleration_control_system, acceleration_map, compute_control, coordinate_selector, lambda_affine_map, position_control_system,
    reduced_controller, stack, velocity_control_system, AccelerationObjective, ControlError, ControlPolicy, ControlSystem,
    CoordinateObjective, ShapeObjective, VelocityObjective,
};
use tensegrity_core::topology::{build_tbar, Dimension, Pin, Topology};

fn pinned_tbar() -> Model {
    let s = build_tbar(0.5, 2.0, Dimension::Planar).unwrap();
    let c = ConstraintSet::for_structure(&s, &[Pin::new(0, "xyz")]).unwrap();
    Model::new(&s, MaterialSpec::uniform(&s, 1.0, 0.2, 0.0, 1e3), c).unwrap()
}

fn pinned_tbar_state(model: &Model, rng: &mut ChaCha8Rng) -> StructureState {
    let s = build_tbar(0.5, 2.0, Dimension::Planar).unwrap();
    let mut state = StructureState::at_rest(s.nodes.clone(), model.topology.beta);
    state.n_dot = common::tangent_velocity(model, &s.nodes, rng, 0.5);
    state
}

fn node_selector(nn: usize, node: usize) -> DMatrix<f64> {
    DMatrix::from_fn(nn, 1, |i, _| f64::from(u8::from(i == node)))
}

/// Objective whose control equations are solved by `gamma0`.
fn reachable_objective(model: &Model, state: &StructureState, wrench: &Wrench, gamma0: &DVector<f64>, l: DMatrix<f64>, node: usize) -> ShapeObjective {
    let r = node_selector(model.n_nodes(), node);
    let k = r.ncols();
    let theta = DMatrix::identity(k, k) * 30.0;
    let psi = DMatrix::identity(k, k) * 20.0;
    let acc = model.accelerations(state, wrench, gamma0).unwrap();
    let e = -(&l * &acc.n_ddot * &r + &l * &state.n_dot * &r * &psi) / 30.0;
    let y_bar = &l * &state.n * &r - e;
    ShapeObjective::new(l, r, y_bar, theta, psi).unwrap()
}

fn scale(system: &ControlSystem) -> f64 {
    1.0 + system.mu.amax() + system.gamma.amax()
}

#[test]
fn lambda_map_matches_compute_lambda() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let mut case = common::random_class1(&mut rng, 5, 10);
        case.state.omega_w = DVector::from_fn(case.model.topology.beta, |_, _| rng.random_range(-20.0..20.0));
        let map = lambda_affine_map(&case.model, &case.state, &case.wrench, None).unwrap();
        let direct = case.model.compute_lambda(&case.state, &case.wrench, &case.gamma, None).unwrap();
        let affine = map.evaluate(&case.gamma, &case.state.omega_w);
        assert!((&direct - &affine).amax() <= 1e-10 * (1.0 + direct.amax()));
    }
}

#[test]
fn lambda_entry_of_bar_and_string() {
    let t = Topology::new(1, 1, &[[1, 2]]);
    let material = MaterialSpec {
        bar_mass: vec![1.5],
        bar_length: vec![2.0],
        wheel_radius: vec![0.0],
        node_mass: vec![0.4],
        string_stiffness: vec![50.0],
        rest_length_bounds: None,
    };
    let model = Model::from_topology(t, material, ConstraintSet::none(3)).unwrap();
    let n = DMatrix::from_column_slice(3, 3, &[0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 3.0, 0.0, 1.5]);
    let state = StructureState::at_rest(n.clone(), 1);
    let map = lambda_affine_map(&model, &state, &Wrench::zero(3, 1), None).unwrap();
    let b = n.column(1) - n.column(0);
    let s = n.column(2) - n.column(1);
    // The string pulls the end node along +b, which stretches the bar.
    let expected = -b.dot(&s) / (2.0 * b.norm_squared());
    assert!((map.lambda[(0, 0)] - expected).abs() < 1e-14);
    assert_eq!(map.tau[0], 0.0);
}

#[test]
fn tau_vanishes_at_rest_without_loads() {
    let model = pinned_tbar();
    let s = build_tbar(0.5, 2.0, Dimension::Planar).unwrap();
    let state = StructureState::at_rest(s.nodes, model.topology.beta);
    let map = lambda_affine_map(&model, &state, &Wrench::zero(model.n_nodes(), model.topology.beta), None).unwrap();
    assert!(map.tau.amax() < 1e-14);
}

#[test]
fn solved_gamma_zeroes_unconstrained_residual() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut solved = 0;
    for _ in 0..40 {
        let case = common::random_class1(&mut rng, 4, 8);
        let node = rng.random_range(0..case.model.n_nodes());
        let obj = reachable_objective(&case.model, &case.state, &case.wrench, &case.gamma, DMatrix::identity(3, 3), node);
        let system = position_control_system(&case.model, &case.state, &obj, &case.wrench, None).unwrap();
        assert!(system.residual(&case.gamma, &case.state.omega_w).amax() < 1e-9 * scale(&system));
        let cmd = compute_control(&system, &case.state.omega_w, &ControlPolicy::default()).unwrap();
        assert!(cmd.gamma.iter().all(|g| *g >= 0.0));
        assert!(cmd.gamma.sum() <= case.gamma.sum() + 1e-9);
        let acc = case.model.accelerations(&case.state, &case.wrench, &cmd.gamma).unwrap();
        let res = obj.residual(&case.state, &acc.n_ddot);
        assert!(res.amax() < 1e-8 * scale(&system), "residual {:e}", res.amax());
        solved += 1;
    }
    assert_eq!(solved, 40);
}

#[test]
fn solved_gamma_zeroes_constrained_residual() {
    let model = pinned_tbar();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let w = Wrench::gravity(&model.ms, model.topology.beta, 9.81);
    let l = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    for trial in 0..10 {
        let state = pinned_tbar_state(&model, &mut rng);
        let gamma0 = DVector::from_fn(model.topology.alpha, |_, _| rng.random_range(0.5..5.0));
        let node = 2 + 2 * (trial % 3);
        let obj = reachable_objective(&model, &state, &w, &gamma0, l.clone(), node);
        let system = position_control_system(&model, &state, &obj, &w, None).unwrap();
        let cmd = compute_control(&system, &state.omega_w, &ControlPolicy::default()).unwrap();
        let acc = model.accelerations(&state, &w, &cmd.gamma).unwrap();
        assert!(obj.residual(&state, &acc.n_ddot).amax() < 1e-8 * scale(&system));
    }
}

#[test]
fn matrix_form_matches_acceleration_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..30 {
        let mut case = common::random_class1(&mut rng, 4, 8);
        case.state.omega_w = DVector::from_fn(case.model.topology.beta, |_, _| rng.random_range(-5.0..5.0));
        let nn = case.model.n_nodes();
        let node = rng.random_range(0..nn);
        let obj = reachable_objective(&case.model, &case.state, &case.wrench, &case.gamma, DMatrix::identity(3, 3), node);
        let system = position_control_system(&case.model, &case.state, &obj, &case.wrench, None).unwrap();
        let map = acceleration_map(&case.model, &case.state, &case.wrench).unwrap();
        let sel = coordinate_selector(nn, &[(node, 0), (node, 1), (node, 2)]);
        let tol = 1e-10 * scale(&system);
        assert!((&system.gamma + &sel * &map.gamma).amax() < tol);
        assert!((&system.upsilon - &sel * &map.wheel).amax() < tol);
        let target = -(obj.error_rate(&case.state.n_dot) * &obj.psi + obj.error(&case.state.n) * &obj.theta);
        let mu = &sel * &map.offset - DVector::from_column_slice(target.as_slice());
        assert!((&system.mu - mu).amax() < tol);
    }
}

#[test]
fn given_multipliers_reproduce_exact_form() {
    let model = pinned_tbar();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let state = pinned_tbar_state(&model, &mut rng);
    let w = Wrench::gravity(&model.ms, model.topology.beta, 9.81);
    let gamma0 = DVector::from_vec(vec![2.0, 1.0, 4.0, 3.0]);
    let obj = reachable_objective(&model, &state, &w, &gamma0, DMatrix::identity(3, 3), 3);
    let acc = model.accelerations(&state, &w, &gamma0).unwrap();
    let exact = position_control_system(&model, &state, &obj, &w, None).unwrap();
    let with_multipliers = position_control_system(&model, &state, &obj, &w, Some(&acc.lagrange)).unwrap();
    let tol = 1e-9 * scale(&exact);
    assert!(exact.residual(&gamma0, &state.omega_w).amax() < tol);
    assert!(with_multipliers.residual(&gamma0, &state.omega_w).amax() < tol);
}

#[test]
fn zero_wheel_speed_removes_wheel_channel() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let case = common::random_class1(&mut rng, 3, 6);
    let obj = reachable_objective(&case.model, &case.state, &case.wrench, &case.gamma, DMatrix::identity(3, 3), 0);
    let system = position_control_system(&case.model, &case.state, &obj, &case.wrench, None).unwrap();
    let omega = DVector::zeros(case.model.topology.beta);
    assert_eq!(system.residual(&case.gamma, &omega), &system.gamma * &case.gamma - &system.mu);
}

#[test]
fn reduced_controller_matches_position_system() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let constrained = pinned_tbar();
    for k in 0..12 {
        let (model, state, wrench) = if k % 2 == 0 {
            let case = common::random_class1(&mut rng, 4, 8);
            (case.model, case.state, case.wrench)
        } else {
            let state = pinned_tbar_state(&constrained, &mut rng);
            let w = Wrench::gravity(&constrained.ms, constrained.topology.beta, 9.81);
            (constrained.clone(), state, w)
        };
        let nn = model.n_nodes();
        let node = rng.random_range(0..nn);
        let target = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let coords = [(node, 0), (node, 1), (node, 2)];
        let reduced_obj = CoordinateObjective::with_scalar_gains(coordinate_selector(nn, &coords), target.clone(), 30.0, 20.0).unwrap();
        let shape_obj = ShapeObjective::new(
            DMatrix::identity(3, 3),
            node_selector(nn, node),
            DMatrix::from_column_slice(3, 1, target.as_slice()),
            DMatrix::identity(1, 1) * 30.0,
            DMatrix::identity(1, 1) * 20.0,
        )
        .unwrap();
        let reduced = reduced_controller(&model, &state, &wrench, &reduced_obj).unwrap().system();
        let full = position_control_system(&model, &state, &shape_obj, &wrench, None).unwrap();
        let tol = 1e-10 * scale(&full);
        assert!((&reduced.gamma - &full.gamma).amax() < tol);
        assert!((&reduced.mu - &full.mu).amax() < tol);
        assert!((&reduced.upsilon - &full.upsilon).amax() < tol);
    }
}

#[test]
fn disturbance_enters_through_exact_input() {
    let model = pinned_tbar();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let state = pinned_tbar_state(&model, &mut rng);
    let nn = model.n_nodes();
    let w = Wrench::gravity(&model.ms, model.topology.beta, 9.81);
    let gamma0 = DVector::from_vec(vec![3.0, 2.0, 2.5, 1.0]);
    let coords = [(3, 0), (3, 2), (5, 2)];
    let sel = coordinate_selector(nn, &coords);
    let acc = model.accelerations(&state, &w, &gamma0).unwrap();
    let e = -(&sel * vectorize(&acc.n_ddot) + &sel * vectorize(&state.n_dot) * 20.0) / 30.0;
    let target = &sel * vectorize(&state.n) - e;
    let obj = CoordinateObjective::with_scalar_gains(sel, target, 30.0, 20.0).unwrap();
    let ctrl = reduced_controller(&model, &state, &w, &obj).unwrap();
    let cmd = compute_control(&ctrl.system(), &state.omega_w, &ControlPolicy::default()).unwrap();
    let mut disturbed = w.clone();
    disturbed.w_d = DMatrix::from_fn(3, nn, |ax, _| if ax == 1 { 0.0 } else { rng.random_range(-1.0..1.0) });
    let acc = model.accelerations(&state, &disturbed, &cmd.gamma).unwrap();
    let res = obj.residual(&state, &acc.n_ddot);
    let expected = &ctrl.disturbance * vectorize(&disturbed.w_d);
    assert!((&res - &expected).amax() < 1e-8, "{:e}", (&res - &expected).amax());
    assert!(expected.amax() > 1e-3);
}

#[test]
fn velocity_block_drives_velocity_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..20 {
        let case = common::random_class1(&mut rng, 4, 8);
        let nn = case.model.n_nodes();
        let node = rng.random_range(0..nn);
        let l = DMatrix::identity(3, 3);
        let r = node_selector(nn, node);
        let psi = DMatrix::identity(1, 1) * 5.0;
        let acc = case.model.accelerations(&case.state, &case.wrench, &case.gamma).unwrap();
        let y_dot_bar = &l * &case.state.n_dot * &r + &l * &acc.n_ddot * &r / 5.0;
        let obj = VelocityObjective { l, r, y_dot_bar, psi };
        let system = velocity_control_system(&case.model, &case.state, &obj, &case.wrench, None).unwrap();
        let cmd = compute_control(&system, &case.state.omega_w, &ControlPolicy::default()).unwrap();
        let acc = case.model.accelerations(&case.state, &case.wrench, &cmd.gamma).unwrap();
        let e_v = &obj.l * &case.state.n_dot * &obj.r - &obj.y_dot_bar;
        let res = &obj.l * &acc.n_ddot * &obj.r + e_v * &obj.psi;
        assert!(res.amax() < 1e-8 * scale(&system));
    }
}

#[test]
fn free_fall_acceleration_needs_no_tension() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let mut case = common::random_class1(&mut rng, 3, 6);
    case.state.n_dot.fill(0.0);
    let nn = case.model.n_nodes();
    let w = Wrench::gravity(&case.model.ms, case.model.topology.beta, 9.81);
    let obj = AccelerationObjective {
        l: DMatrix::identity(3, 3),
        r: node_selector(nn, 0),
        y_ddot_bar: DMatrix::from_column_slice(3, 1, &[0.0, 0.0, -9.81]),
    };
    let system = acceleration_control_system(&case.model, &case.state, &obj, &w, None).unwrap();
    let cmd = compute_control(&system, &case.state.omega_w, &ControlPolicy::default()).unwrap();
    assert!(cmd.gamma.sum() < 1e-9);
}

#[test]
fn excessive_acceleration_is_infeasible() {
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    let case = common::random_class1(&mut rng, 3, 6);
    let nn = case.model.n_nodes();
    let obj = AccelerationObjective {
        l: DMatrix::identity(3, 3),
        r: node_selector(nn, 0),
        y_ddot_bar: DMatrix::from_column_slice(3, 1, &[1e6, 1e6, 1e6]),
    };
    let system = acceleration_control_system(&case.model, &case.state, &obj, &case.wrench, None).unwrap();
    let policy = ControlPolicy {
        gamma_max: Some(1.0),
        ..ControlPolicy::default()
    };
    match compute_control(&system, &case.state.omega_w, &policy) {
        Err(ControlError::Infeasible { residual, fallback }) => {
            assert!(residual > 1.0);
            assert!(fallback.gamma.iter().all(|g| *g >= 0.0));
        }
        other => panic!("expected infeasible, got {other:?}"),
    }
}

#[test]
fn stacking_keeps_block_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    let case = common::random_class1(&mut rng, 3, 6);
    let p = position_control_system(
        &case.model,
        &case.state,
        &reachable_objective(&case.model, &case.state, &case.wrench, &case.gamma, DMatrix::identity(3, 3), 0),
        &case.wrench,
        None,
    )
    .unwrap();
    let a = acceleration_control_system(
        &case.model,
        &case.state,
        &AccelerationObjective {
            l: DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]),
            r: node_selector(case.model.n_nodes(), 1),
            y_ddot_bar: DMatrix::from_element(1, 1, 0.3),
        },
        &case.wrench,
        None,
    )
    .unwrap();
    assert_eq!(stack(std::slice::from_ref(&p)).unwrap(), p);
    let pa = stack(&[p.clone(), a.clone()]).unwrap();
    let ap = stack(&[a.clone(), p.clone()]).unwrap();
    assert_eq!(pa.rows(), 4);
    assert_eq!(pa.gamma.rows(0, 3), p.gamma);
    assert_eq!(pa.gamma.rows(3, 1), a.gamma);
    assert_eq!(ap.gamma.rows(0, 1), a.gamma);
    assert_eq!(ap.mu.rows(1, 3), p.mu);
    // A solution of the stacked system solves each block.
    if let Ok(cmd) = compute_control(&pa, &case.state.omega_w, &ControlPolicy::default()) {
        assert!(p.residual(&cmd.gamma, &cmd.omega_w).amax() < 1e-8 * scale(&pa));
        assert!(a.residual(&cmd.gamma, &cmd.omega_w).amax() < 1e-8 * scale(&pa));
    }
}

#[test]
fn command_matches_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(59);
    let mut checked = 0;
    for _ in 0..200 {
        let alpha = rng.random_range(2..=6);
        let rows = rng.random_range(1..=alpha.min(4));
        let gamma = DMatrix::from_fn(rows, alpha, |_, _| rng.random_range(-1.0..1.0));
        let x0 = DVector::from_fn(alpha, |_, _| if rng.random_bool(0.5) { rng.random_range(0.0..2.0) } else { 0.0 });
        let system = ControlSystem {
            mu: &gamma * x0,
            gamma,
            upsilon: DMatrix::zeros(rows, 0),
        };
        let cost = DVector::from_element(alpha, 1.0);
        let oracle = common::vertex_enumeration(&system.gamma, &system.mu, &cost).expect("feasible by construction");
        let cmd = compute_control(&system, &DVector::zeros(0), &ControlPolicy::default()).unwrap();
        assert!((cmd.gamma.sum() - oracle).abs() < 1e-9, "{} vs {oracle}", cmd.gamma.sum());
        checked += 1;
    }
    assert_eq!(checked, 200);
}
