use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dynamics::{ConstraintSet, LagrangeIntegrator, LambdaMap, MaterialSpec, Model, ReducedIntegrator, StructureState, Wrench};
use crate::gain_synthesis::spectral_abscissa;
use crate::optimize::{solve_nonneg_lp, Affine, LmiBuilder, NonnegLp};
use crate::topology::{build_tbar, Dimension, Pin, Topology};

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Multiplies every tolerance; values below one tighten the suite.
    pub tolerance_factor: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            tolerance_factor: 1.0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl CheckReport {
    fn new(name: &str, measured: f64, tolerance: f64, detail: String) -> Self {
        Self {
            name: name.into(),
            measured,
            tolerance,
            passed: measured <= tolerance,
            detail,
        }
    }

    /// Ratio of the tolerance to the measured value.
    pub fn margin(&self) -> f64 {
        self.tolerance / self.measured.max(f64::MIN_POSITIVE)
    }
}

/// Runs every invariant check.
pub fn run_verify(opts: &VerifyOptions) -> Vec<CheckReport> {
    let f = opts.tolerance_factor;
    vec![
        check_lambda_equivalence(100, opts.seed, 1e-10 * f, |_| {}),
        check_reduced_vs_full(1000, 1e-8 * f),
        check_momentum(10_000, 1e-9 * f),
        check_lp_oracle(200, opts.seed, 1e-9 * f),
        check_lyapunov_oracle(50, opts.seed, f),
    ]
}

/// Random class-1 structure with random geometry, loads and velocities.
fn random_case(rng: &mut ChaCha8Rng) -> (Model, StructureState, Wrench, DVector<f64>) {
    let beta = rng.random_range(1..=5);
    let sigma = rng.random_range(usize::from(beta == 1)..=2);
    let nn = 2 * beta + sigma;
    let mut pairs: Vec<[usize; 2]> = (0..nn)
        .flat_map(|a| (a + 1..nn).map(move |b| [a, b]))
        .filter(|[a, b]| !(*b < 2 * beta && a / 2 == b / 2))
        .collect();
    let alpha = rng.random_range(1..=10usize.min(pairs.len()));
    let strings: Vec<[usize; 2]> = (0..alpha).map(|_| pairs.swap_remove(rng.random_range(0..pairs.len()))).collect();
    let topology = Topology::new(beta, sigma, &strings);
    let n = DMatrix::from_fn(3, nn, |_, _| rng.random_range(-2.0..2.0));
    let material = MaterialSpec {
        bar_mass: (0..beta).map(|_| rng.random_range(0.5..3.0)).collect(),
        bar_length: (0..beta).map(|i| (n.column(2 * i + 1) - n.column(2 * i)).norm()).collect(),
        wheel_radius: (0..beta).map(|_| rng.random_range(0.0..0.2)).collect(),
        node_mass: (0..sigma).map(|_| rng.random_range(0.1..1.0)).collect(),
        string_stiffness: vec![100.0; alpha],
        rest_length_bounds: None,
    };
    let model = Model::from_topology(topology, material, ConstraintSet::none(nn)).expect("random model is valid");
    let state = StructureState {
        n_dot: DMatrix::from_fn(3, nn, |_, _| rng.random_range(-1.0..1.0)),
        n,
        t: 0.0,
        omega_w: DVector::from_fn(beta, |_, _| rng.random_range(-5.0..5.0)),
    };
    let mut wrench = Wrench::zero(nn, beta);
    wrench.w = DMatrix::from_fn(3, nn, |_, _| rng.random_range(-5.0..5.0));
    let gamma = DVector::from_fn(alpha, |_, _| rng.random_range(0.0..10.0));
    (model, state, wrench, gamma)
}

/// `λ` from the dynamics against `Λ γ + τ + Ξ ω_w`; `mutate` alters the
/// map before comparison.
pub fn check_lambda_equivalence(cases: usize, seed: u64, tol: f64, mutate: impl Fn(&mut LambdaMap)) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (model, state, wrench, gamma) = random_case(&mut rng);
        let direct = model.compute_lambda(&state, &wrench, &gamma, None);
        let map = model.lambda_map(&state, &wrench);
        let (Ok(direct), Ok(mut map)) = (direct, map) else {
            worst = f64::INFINITY;
            continue;
        };
        mutate(&mut map);
        let via_map = map.evaluate(&gamma, &state.omega_w);
        worst = worst.max((&direct - via_map).amax() / (1.0 + direct.amax()));
    }
    CheckReport::new("lambda_equivalence", worst, tol, format!("{cases} random class-1 structures, max relative error"))
}

/// Reduced-coordinate and full-order multiplier integration of a pinned,
/// prestressed T-bar.
pub fn check_reduced_vs_full(steps: usize, tol: f64) -> CheckReport {
    let run = || -> Result<f64, String> {
        let s = build_tbar(0.5, 2.0, Dimension::Planar).map_err(|e| e.to_string())?;
        let material = MaterialSpec::uniform(&s, 1.0, 0.2, 0.0, 1e3);
        let constraints = ConstraintSet::for_structure(&s, &[Pin::new(0, "xyz")]).map_err(|e| e.to_string())?;
        let model = Model::new(&s, material, constraints).map_err(|e| e.to_string())?;
        let gamma = DVector::from_fn(s.topology.alpha, |k, _| 1.0 + 0.5 * k as f64);
        let wrench = Wrench::zero(model.n_nodes(), s.topology.beta);
        let reduced = ReducedIntegrator::new(&model).map_err(|e| e.to_string())?;
        let full = LagrangeIntegrator { model: &model };
        let mut a = StructureState::at_rest(s.nodes.clone(), s.topology.beta);
        let mut b = a.clone();
        let mut worst = 0.0f64;
        for _ in 0..steps {
            a = reduced.step(&a, &gamma, &wrench, 1e-3).map_err(|e| e.to_string())?;
            b = full.step(&b, &gamma, &wrench, 1e-3).map_err(|e| e.to_string())?;
            worst = worst.max((&a.n - &b.n).amax()).max(model.constraint_residual(&b.n));
        }
        Ok(worst)
    };
    let measured = run().unwrap_or(f64::INFINITY);
    CheckReport::new("reduced_vs_full", measured, tol, format!("{steps} RK4 steps, max node deviation or constraint residual"))
}

/// Linear and angular momentum of a spinning, translating free bar.
pub fn check_momentum(steps: usize, tol: f64) -> CheckReport {
    let topology = Topology::new(1, 0, &[]);
    let material = MaterialSpec {
        bar_mass: vec![2.0],
        bar_length: vec![2.0],
        wheel_radius: vec![0.0],
        node_mass: Vec::new(),
        string_stiffness: Vec::new(),
        rest_length_bounds: None,
    };
    let Ok(model) = Model::from_topology(topology, material, ConstraintSet::none(2)) else {
        return CheckReport::new("momentum", f64::INFINITY, tol, "model construction failed".into());
    };
    let n = DMatrix::from_column_slice(3, 2, &[-1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    let spin = Vector3::new(0.3, 0.2, 1.5);
    let v = Vector3::new(0.4, -0.1, 0.2);
    let mut n_dot = DMatrix::zeros(3, 2);
    for j in 0..2 {
        let r = Vector3::new(n[(0, j)], n[(1, j)], n[(2, j)]);
        n_dot.set_column(j, &(v + spin.cross(&r)));
    }
    let momenta = |s: &StructureState| -> (Vector3<f64>, Vector3<f64>) {
        let p = &s.n_dot * &model.ms * DVector::from_element(2, 1.0);
        let mut l = Vector3::zeros();
        for i in 0..2 {
            for j in 0..2 {
                let ni = Vector3::new(s.n[(0, i)], s.n[(1, i)], s.n[(2, i)]);
                let vj = Vector3::new(s.n_dot[(0, j)], s.n_dot[(1, j)], s.n_dot[(2, j)]);
                l += ni.cross(&vj) * model.ms[(i, j)];
            }
        }
        (Vector3::new(p[0], p[1], p[2]), l)
    };
    let mut state = StructureState {
        n,
        n_dot,
        t: 0.0,
        omega_w: DVector::zeros(1),
    };
    let (p0, l0) = momenta(&state);
    let wrench = Wrench::zero(2, 1);
    let gamma = DVector::zeros(0);
    let mut worst = 0.0f64;
    for _ in 0..steps {
        match model.step(&state, &gamma, &wrench, 1e-3) {
            Ok(s) => state = s,
            Err(_) => {
                worst = f64::INFINITY;
                break;
            }
        }
        let (p, l) = momenta(&state);
        worst = worst.max((p - p0).norm() / p0.norm()).max((l - l0).norm() / l0.norm());
    }
    CheckReport::new("momentum", worst, tol, format!("{steps} steps of a free bar, max relative drift"))
}

/// Minimum of `cᵀ x` over basic feasible solutions of `A x = b, x ≥ 0`.
fn vertex_optimum(a: &DMatrix<f64>, b: &DVector<f64>, c: &DVector<f64>) -> Option<f64> {
    let (m, n) = a.shape();
    let mut best: Option<f64> = None;
    for mask in 1u32..(1 << n) {
        let cols: Vec<usize> = (0..n).filter(|j| mask & (1 << j) != 0).collect();
        if cols.len() > m {
            continue;
        }
        let sub = DMatrix::from_fn(m, cols.len(), |i, j| a[(i, cols[j])]);
        let svd = sub.clone().svd(true, true);
        if svd.rank(1e-10 * svd.singular_values.max().max(1.0)) < cols.len() {
            continue;
        }
        let Ok(x) = svd.solve(b, 1e-12) else { continue };
        if (&sub * &x - b).amax() > 1e-9 * (1.0 + b.amax()) || x.iter().any(|v| *v < -1e-10) {
            continue;
        }
        let value: f64 = cols.iter().zip(x.iter()).map(|(j, v)| c[*j] * v).sum();
        best = Some(best.map_or(value, |b: f64| b.min(value)));
    }
    best
}

/// Simplex optimum against vertex enumeration on random LPs with at most
/// six variables.
pub fn check_lp_oracle(cases: usize, seed: u64, tol: f64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5151);
    let mut worst = 0.0f64;
    let mut disagreements = 0;
    for _ in 0..cases {
        let n = rng.random_range(1..=6);
        let m = rng.random_range(1..=n.min(3));
        let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-2.0..2.0));
        let b = DVector::from_fn(m, |_, _| rng.random_range(-2.0..2.0));
        let c = DVector::from_fn(n, |_, _| rng.random_range(0.1..2.0));
        let oracle = vertex_optimum(&a, &b, &c);
        match (solve_nonneg_lp(&NonnegLp::new(a, b, c)), oracle) {
            (Ok(sol), Some(v)) => worst = worst.max((sol.objective - v).abs() / (1.0 + v.abs())),
            (Err(e), None) if e.is_infeasible() => {}
            _ => disagreements += 1,
        }
    }
    let measured = if disagreements > 0 { f64::INFINITY } else { worst };
    CheckReport::new("lp_vertex_oracle", measured, tol, format!("{cases} random LPs, {disagreements} status disagreements"))
}

/// Lyapunov LMI feasibility against the sign of the spectral abscissa.
pub fn check_lyapunov_oracle(cases: usize, seed: u64, factor: f64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1a9);
    let delta = 1e-6;
    let (mut tested, mut wrong) = (0, 0);
    while tested < cases {
        let k = rng.random_range(2..=4);
        let a = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
        let abscissa = spectral_abscissa(&a);
        if abscissa.abs() < 1e-2 {
            continue;
        }
        tested += 1;
        let mut lmi = LmiBuilder::new();
        let p = lmi.symmetric(k);
        lmi.psd(&p.expr.sub(&Affine::identity(k)));
        lmi.nsd_margin(&p.expr.lmul(&a.transpose()).add(&p.expr.rmul(&a)), delta);
        let feasible = lmi.solve().is_ok();
        if feasible != (abscissa < 0.0) {
            wrong += 1;
        }
    }
    CheckReport::new(
        "lyapunov_oracle",
        f64::from(wrong),
        0.0 * factor,
        format!("{cases} random systems, misclassified count"),
    )
}
