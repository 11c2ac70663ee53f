#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tensegrity_core::dynamics::{ConstraintSet, MaterialSpec, Model, StructureState, Wrench};
use tensegrity_core::topology::Topology;

/// Random class-1 structure with random geometry, materials and velocities.
pub struct RandomCase {
    pub model: Model,
    pub state: StructureState,
    pub wrench: Wrench,
    pub gamma: DVector<f64>,
}

pub fn random_class1(rng: &mut ChaCha8Rng, max_bars: usize, max_strings: usize) -> RandomCase {
    let beta = rng.random_range(1..=max_bars);
    let sigma = rng.random_range(usize::from(beta == 1)..=2);
    let nn = 2 * beta + sigma;
    let mut pairs = Vec::new();
    for a in 0..nn {
        for b in a + 1..nn {
            let same_bar = b < 2 * beta && a / 2 == b / 2;
            if !same_bar {
                pairs.push([a, b]);
            }
        }
    }
    let alpha = rng.random_range(1..=max_strings.min(pairs.len()));
    let mut strings = Vec::new();
    while strings.len() < alpha {
        let k = rng.random_range(0..pairs.len());
        strings.push(pairs.swap_remove(k));
    }
    let topology = Topology::new(beta, sigma, &strings);
    let n = DMatrix::from_fn(3, nn, |_, _| rng.random_range(-2.0..2.0));
    let n_dot = DMatrix::from_fn(3, nn, |_, _| rng.random_range(-1.0..1.0));
    let lengths: Vec<f64> = (0..beta).map(|i| (n.column(2 * i + 1) - n.column(2 * i)).norm()).collect();
    let material = MaterialSpec {
        bar_mass: (0..beta).map(|_| rng.random_range(0.5..3.0)).collect(),
        bar_length: lengths,
        wheel_radius: vec![0.0; beta],
        node_mass: (0..sigma).map(|_| rng.random_range(0.1..1.0)).collect(),
        string_stiffness: vec![100.0; alpha],
        rest_length_bounds: None,
    };
    let model = Model::from_topology(topology, material, ConstraintSet::none(nn)).expect("valid random model");
    let mut wrench = Wrench::zero(nn, beta);
    wrench.w = DMatrix::from_fn(3, nn, |_, _| rng.random_range(-5.0..5.0));
    let gamma = DVector::from_fn(alpha, |_, _| rng.random_range(0.0..10.0));
    let state = StructureState {
        n,
        n_dot,
        t: 0.0,
        omega_w: DVector::zeros(beta),
    };
    RandomCase {
        model,
        state,
        wrench,
        gamma,
    }
}

/// Orthonormal basis of the null space of `m` (columns).
pub fn null_space(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    let mut padded = DMatrix::zeros(rows.max(cols), cols);
    padded.view_mut((0, 0), (rows, cols)).copy_from(m);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.unwrap();
    let smax = svd.singular_values.max();
    let idx: Vec<usize> = (0..cols).filter(|&k| svd.singular_values[k] <= tol * smax.max(1.0)).collect();
    DMatrix::from_fn(cols, idx.len(), |i, j| v_t[(idx[j], i)])
}

/// Velocities that keep bar lengths and constraints, drawn at random.
pub fn tangent_velocity(model: &Model, n: &DMatrix<f64>, rng: &mut ChaCha8Rng, scale: f64) -> DMatrix<f64> {
    let nn = model.n_nodes();
    let beta = model.topology.beta;
    let a = &model.constraints.a;
    let mut jac = DMatrix::zeros(a.nrows() + beta, 3 * nn);
    jac.view_mut((0, 0), a.shape()).copy_from(a);
    for i in 0..beta {
        for ax in 0..3 {
            let b = n[(ax, 2 * i + 1)] - n[(ax, 2 * i)];
            jac[(a.nrows() + i, ax * nn + 2 * i + 1)] = b;
            jac[(a.nrows() + i, ax * nn + 2 * i)] = -b;
        }
    }
    let t = null_space(&jac, 1e-10);
    let c = DVector::from_fn(t.ncols(), |_, _| rng.random_range(-scale..scale));
    DMatrix::from_row_slice(3, nn, (t * c).as_slice())
}

/// Optimal value of `min cᵀx, A x = b, x ≥ 0` by enumerating basic
/// solutions. `None` when no basic solution is feasible.
pub fn vertex_enumeration(a: &DMatrix<f64>, b: &DVector<f64>, c: &DVector<f64>) -> Option<f64> {
    let (m, n) = a.shape();
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << n) {
        let cols: Vec<usize> = (0..n).filter(|j| mask & (1 << j) != 0).collect();
        if cols.len() > m {
            continue;
        }
        let sub = DMatrix::from_fn(m, cols.len(), |i, k| a[(i, cols[k])]);
        let x = if cols.is_empty() {
            DVector::zeros(0)
        } else {
            let svd = sub.clone().svd(true, true);
            if svd.rank(1e-10 * svd.singular_values.max().max(1.0)) < cols.len() {
                continue;
            }
            svd.solve(b, 1e-14).expect("svd solve")
        };
        if (&sub * &x - b).amax() > 1e-9 * (1.0 + b.amax()) || x.iter().any(|v| *v < -1e-10) {
            continue;
        }
        let value: f64 = cols.iter().zip(x.iter()).map(|(j, v)| c[*j] * v).sum();
        best = Some(best.map_or(value, |b: f64| b.min(value)));
    }
    best
}
