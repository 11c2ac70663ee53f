mod common;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tensegrity_core::dynamics::{
    assemble_ks, vectorize, ConstraintSet, LagrangeIntegrator, MaterialSpec, Model, ReducedIntegrator, ReducedSystem, StructureState, Wrench,
};
use tensegrity_core::topology::{build_dbar, build_tbar, Dimension, Pin, Structure, Topology};

fn pinned_tbar() -> (Structure, Model) {
    let s = build_tbar(0.5, 2.0, Dimension::Planar).unwrap();
    let c = ConstraintSet::for_structure(&s, &[Pin::new(0, "xyz")]).unwrap();
    let m = MaterialSpec::uniform(&s, 1.0, 0.2, 0.0, 1e3);
    let model = Model::new(&s, m, c).unwrap();
    (s, model)
}

#[test]
fn free_fall_under_gravity() {
    let s = build_dbar(0.6, 2.0, Dimension::Spatial).unwrap();
    let c = ConstraintSet::for_structure(&s, &[]).unwrap();
    let model = Model::new(&s, MaterialSpec::uniform(&s, 1.0, 0.3, 0.0, 1e3), c).unwrap();
    let state = StructureState::at_rest(s.nodes.clone(), s.topology.beta);
    let w = Wrench::gravity(&model.ms, s.topology.beta, 9.81);
    let a = model.accelerations(&state, &w, &DVector::zeros(s.topology.alpha)).unwrap();
    for col in a.n_ddot.column_iter() {
        assert!((col - Vector3::new(0.0, 0.0, -9.81)).amax() < 1e-12);
    }
}

#[test]
fn constraint_factors_are_orthonormal() {
    let (s, model) = pinned_tbar();
    let c = &model.constraints;
    assert!((c.v1.transpose() * &c.v2).amax() < 1e-12);
    let mut v = DMatrix::zeros(c.v1.nrows(), c.v1.ncols() + c.v2.ncols());
    v.columns_mut(0, c.v1.ncols()).copy_from(&c.v1);
    v.columns_mut(c.v1.ncols(), c.v2.ncols()).copy_from(&c.v2);
    assert!((v.transpose() * &v - DMatrix::identity(v.ncols(), v.ncols())).amax() < 1e-12);
    assert!(c.residual(&vectorize(&s.nodes)) < 1e-14);
    // The pruned rows keep full row rank.
    assert_eq!(c.a.clone().svd(false, false).rank(1e-10), c.rank());
}

#[test]
fn no_constraints_leave_full_space() {
    let c = ConstraintSet::none(4);
    assert_eq!(c.v2, DMatrix::identity(12, 12));
    let m = DMatrix::from_fn(12, 12, |i, j| if i == j { 2.0 } else { 0.0 });
    let k = DMatrix::from_fn(12, 12, |i, j| (i + j) as f64);
    let r = ReducedSystem::new(&c, &m, &k);
    assert_eq!(r.m2, m);
    assert_eq!(r.k2, k);
}

#[test]
fn fully_pinned_structure_has_no_free_coordinates() {
    let s = build_dbar(0.6, 2.0, Dimension::Planar).unwrap();
    let pins: Vec<Pin> = (0..s.points.len()).map(|p| Pin::new(p, "xyz")).collect();
    let c = ConstraintSet::for_structure(&s, &pins).unwrap();
    assert_eq!(c.dof(), 0);
}

#[test]
fn pinned_and_joint_accelerations() {
    let (s, model) = pinned_tbar();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut state = StructureState::at_rest(s.nodes.clone(), s.topology.beta);
    state.n_dot = common::tangent_velocity(&model, &s.nodes, &mut rng, 0.5);
    let gamma = DVector::from_vec(vec![3.0, 1.0, 2.0, 4.0]);
    let w = Wrench::gravity(&model.ms, s.topology.beta, 9.81);
    let a = model.accelerations(&state, &w, &gamma).unwrap();
    let nd = vectorize(&a.n_ddot);
    assert!((&model.constraints.a * &nd).amax() < 1e-10);
    let pinned = s.point_node(0).unwrap();
    assert!(a.n_ddot.column(pinned).amax() < 1e-12);
    for group in &s.joints {
        for k in &group[1..] {
            assert!((a.n_ddot.column(group[0]) - a.n_ddot.column(*k)).amax() < 1e-12);
        }
    }
    // Bars stay rigid to second order: bᵀb̈ + ḃᵀḃ = 0.
    for i in 0..s.topology.beta {
        let b = state.n.column(2 * i + 1) - state.n.column(2 * i);
        let bd = state.n_dot.column(2 * i + 1) - state.n_dot.column(2 * i);
        let bdd = a.n_ddot.column(2 * i + 1) - a.n_ddot.column(2 * i);
        assert!((b.dot(&bdd) + bd.dot(&bd)).abs() < 1e-10);
    }
}

#[test]
fn joint_solve_matches_eliminated_solve() {
    let (s, model) = pinned_tbar();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut state = StructureState::at_rest(s.nodes.clone(), s.topology.beta);
    state.n_dot = common::tangent_velocity(&model, &s.nodes, &mut rng, 1.0);
    let gamma = DVector::from_vec(vec![2.0, 5.0, 1.0, 3.0]);
    let w = Wrench::gravity(&model.ms, s.topology.beta, 9.81);
    let a = model.accelerations(&state, &w, &gamma).unwrap();
    let b = model.accelerations_lagrange(&state, &w, &gamma).unwrap();
    assert!((&a.n_ddot - &b.n_ddot).amax() < 1e-10);
    assert!((&a.lambda - &b.lambda).amax() < 1e-10);
    assert!((&a.lagrange - &b.lagrange).amax() < 1e-9);
    let with_multipliers = model.compute_lambda(&state, &w, &gamma, Some(&b.lagrange)).unwrap();
    assert!((&with_multipliers - &a.lambda).amax() < 1e-10);
}

#[test]
fn stiffness_reproduces_member_forces() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let case = common::random_class1(&mut rng, 4, 8);
        let t = &case.model.topology;
        let lambda = DVector::from_fn(t.beta, |i, _| (i as f64) - 1.5);
        let k = assemble_ks(t, &case.gamma, &lambda).unwrap();
        let nk = &case.state.n * k;
        let mut net = DMatrix::zeros(3, t.n_nodes());
        for (j, [a, b]) in t.string_ends().iter().enumerate() {
            let f = (case.state.n.column(*b) - case.state.n.column(*a)) * case.gamma[j];
            for ax in 0..3 {
                net[(ax, *a)] += f[ax];
                net[(ax, *b)] -= f[ax];
            }
        }
        for (i, [a, b]) in t.bar_ends().iter().enumerate() {
            let f = (case.state.n.column(*b) - case.state.n.column(*a)) * lambda[i];
            for ax in 0..3 {
                net[(ax, *a)] -= f[ax];
                net[(ax, *b)] += f[ax];
            }
        }
        assert!((nk + net).amax() < 1e-12);
    }
}

#[test]
fn gyroscopic_forces() {
    let t = Topology::new(1, 0, &[]);
    let material = MaterialSpec {
        bar_mass: vec![2.0],
        bar_length: vec![2.0],
        wheel_radius: vec![0.3],
        node_mass: vec![],
        string_stiffness: vec![],
        rest_length_bounds: None,
    };
    let ja = material.wheel_inertia()[0];
    let model = Model::from_topology(t, material, ConstraintSet::none(2)).unwrap();
    let n = DMatrix::from_column_slice(3, 2, &[-1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    let mut state = StructureState::at_rest(n, 1);
    let w = Wrench::zero(2, 1);
    state.omega_w[0] = 50.0;
    assert_eq!(model.gyro_wrench(&state, &w).amax(), 0.0);

    let v = 0.7;
    state.n_dot = DMatrix::from_column_slice(3, 2, &[0.0, -v / 2.0, 0.0, 0.0, v / 2.0, 0.0]);
    let f = model.gyro_wrench(&state, &w);
    let f_end = f.column(1);
    assert!((f.column(0) + f_end).amax() < 1e-15);
    assert!((f_end.norm() - ja * 50.0 * v).abs() < 1e-12);
    assert!(f_end[0].abs() < 1e-15 && f_end[1].abs() < 1e-15);

    state.omega_w[0] = 0.0;
    assert_eq!(model.gyro_wrench(&state, &w).amax(), 0.0);
}

#[test]
fn equilibrium_is_stationary() {
    let (s, model) = pinned_tbar();
    let state = StructureState::at_rest(s.nodes.clone(), s.topology.beta);
    let gamma = DVector::from_element(4, 7.0);
    let w = Wrench::zero(s.topology.n_nodes(), s.topology.beta);
    let mut x = state.clone();
    for _ in 0..100 {
        let next = model.step(&x, &gamma, &w, 1e-3).unwrap();
        assert!((&next.n - &x.n).amax() < 1e-10);
        x = next;
    }
}

#[test]
fn reduced_and_full_order_agree() {
    let (s, model) = pinned_tbar();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut state = StructureState::at_rest(s.nodes.clone(), s.topology.beta);
    state.n_dot = common::tangent_velocity(&model, &s.nodes, &mut rng, 0.3);
    let gamma = DVector::from_element(4, 7.0);
    let w = Wrench::zero(s.topology.n_nodes(), s.topology.beta);
    let full = LagrangeIntegrator { model: &model };
    let reduced = ReducedIntegrator::new(&model).unwrap();
    let (mut a, mut b) = (state.clone(), state);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        a = full.step(&a, &gamma, &w, 2e-3).unwrap();
        b = reduced.step(&b, &gamma, &w, 2e-3).unwrap();
        worst = worst.max((&a.n - &b.n).amax());
        assert!(model.constraint_residual(&a.n) < 1e-8);
    }
    assert!(worst < 1e-8, "deviation {worst:e}");
}
