//! Acceptance criteria. Runs as a plain binary and prints one line per
//! criterion; exits non-zero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::vertex_enumeration;
use nalgebra::{DMatrix, DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensegrity_core::dynamics::{ConstraintSet, LagrangeIntegrator, MaterialSpec, Model, ReducedIntegrator, StructureState, Wrench};
use tensegrity_core::gain_synthesis::{bar_length_bound, spectral_abscissa, BoundKind};
use tensegrity_core::optimize::{solve_nonneg_lp, Affine, LmiBuilder, NonnegLp};
use tensegrity_core::scenario::{check_lambda_equivalence, check_momentum, preset, prepare, simulate, sweep, DisturbanceSpec, GainSource, Scenario};
use tensegrity_core::shape_control::{compute_control, reduced_controller, ControlError, ControlPolicy, WheelPolicy};
use tensegrity_core::topology::{build_tbar, Dimension, Pin};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg)
    }
}

fn within_budget(start: Instant, budget: Duration) -> Result<(), String> {
    ensure(start.elapsed() <= budget, format!("runtime {:.1?} over budget {budget:?}", start.elapsed()))
}

fn pinned_tbar() -> (Model, DMatrix<f64>, DVector<f64>) {
    let s = build_tbar(0.5, 2.0, Dimension::Planar).unwrap();
    let material = MaterialSpec::uniform(&s, 1.0, 0.2, 0.0, 1e3);
    let constraints = ConstraintSet::for_structure(&s, &[Pin::new(0, "xyz")]).unwrap();
    let model = Model::new(&s, material, constraints).unwrap();
    let gamma = DVector::from_fn(s.topology.alpha, |k, _| 1.0 + 0.5 * k as f64);
    (model, s.nodes, gamma)
}

fn lambda_map_equivalence() -> Outcome {
    let start = Instant::now();
    let report = check_lambda_equivalence(100, 2024, 1e-10, |_| {});
    within_budget(start, Duration::from_secs(10))?;
    ensure(report.passed, format!("max relative error {:.3e}", report.measured))?;
    Ok(format!("max relative error {:.3e} over 100 structures in {:.2?}", report.measured, start.elapsed()))
}

fn reduced_order_fidelity() -> Outcome {
    let start = Instant::now();
    let (model, nodes, gamma) = pinned_tbar();
    let wrench = Wrench::zero(model.n_nodes(), model.topology.beta);
    let reduced = ReducedIntegrator::new(&model).map_err(|e| e.to_string())?;
    let full = LagrangeIntegrator { model: &model };
    let mut a = StructureState::at_rest(nodes, model.topology.beta);
    let mut b = a.clone();
    let (mut deviation, mut residual, mut travel) = (0.0f64, 0.0f64, 0.0f64);
    let n0 = a.n.clone();
    for _ in 0..1000 {
        a = reduced.step(&a, &gamma, &wrench, 1e-3).map_err(|e| e.to_string())?;
        b = full.step(&b, &gamma, &wrench, 1e-3).map_err(|e| e.to_string())?;
        deviation = deviation.max((&a.n - &b.n).amax());
        residual = residual.max(model.constraint_residual(&a.n)).max(model.constraint_residual(&b.n));
        travel = travel.max((&b.n - &n0).amax());
    }
    within_budget(start, Duration::from_secs(30))?;
    ensure(travel > 1e-3, format!("structure barely moved ({travel:.2e})"))?;
    ensure(deviation < 1e-8, format!("node deviation {deviation:.3e}"))?;
    ensure(residual < 1e-8, format!("constraint residual {residual:.3e}"))?;
    Ok(format!("node deviation {deviation:.3e}, constraint residual {residual:.3e}, travel {travel:.3}"))
}

fn conservation_and_order() -> Outcome {
    let momentum = check_momentum(10_000, 1e-9);
    ensure(momentum.passed, format!("momentum drift {:.3e}", momentum.measured))?;

    let (model, nodes, gamma) = pinned_tbar();
    let wrench = Wrench::zero(model.n_nodes(), model.topology.beta);
    let run = |dt: f64| -> Result<DMatrix<f64>, String> {
        let mut s = StructureState::at_rest(nodes.clone(), model.topology.beta);
        for _ in 0..(0.5 / dt).round() as usize {
            s = model.step(&s, &gamma, &wrench, dt).map_err(|e| e.to_string())?;
        }
        Ok(s.n)
    };
    let reference = run(0.5 / 640.0)?;
    let coarse = (run(0.5 / 20.0)? - &reference).amax();
    let fine = (run(0.5 / 40.0)? - &reference).amax();
    let ratio = coarse / fine;
    ensure((12.0..=20.0).contains(&ratio), format!("error ratio {ratio:.2} on dt halving"))?;
    Ok(format!("momentum drift {:.3e}, RK4 error ratio {ratio:.2}", momentum.measured))
}

fn closed_loop_regulation() -> Outcome {
    let start = Instant::now();
    let scenario = preset("t2d1-extension").map_err(|e| e.to_string())?;
    let setup = prepare(&scenario).map_err(|e| e.to_string())?;
    let out = simulate(&setup, &scenario, false).map_err(|e| e.to_string())?;
    let s = &out.summary;
    within_budget(start, Duration::from_secs(120))?;
    ensure(s.infeasible_steps.is_empty(), format!("{} infeasible steps", s.infeasible_steps.len()))?;
    let settle = s.settling_step.ok_or("error never settled")?;
    ensure(settle <= 4000, format!("settled at step {settle}"))?;
    ensure(s.max_closed_loop_residual < 1e-8, format!("closed-loop residual {:.3e}", s.max_closed_loop_residual))?;
    Ok(format!(
        "settled below 1e-3 of initial at step {settle}, closed-loop residual {:.3e}",
        s.max_closed_loop_residual
    ))
}

fn gyroscopic_reachability() -> Outcome {
    let scenario = preset("dbar-gyro-rotation").map_err(|e| e.to_string())?;
    let setup = prepare(&scenario).map_err(|e| e.to_string())?;
    let model = &setup.model;
    let calm = Wrench::zero(model.n_nodes(), model.topology.beta);
    let rc = reduced_controller(model, &setup.initial, &calm, &setup.objective).map_err(|e| e.to_string())?;
    let fixed = ControlPolicy {
        wheels: WheelPolicy::Prescribed,
        ..scenario.control.policy.clone()
    };
    let still = DVector::zeros(model.topology.beta);
    let residual = match compute_control(&rc.system(), &still, &fixed) {
        Err(ControlError::Infeasible { residual, .. }) => residual,
        Ok(_) => return Err("position LP feasible with wheels at rest".into()),
        Err(e) => return Err(e.to_string()),
    };
    let out = simulate(&setup, &scenario, false).map_err(|e| e.to_string())?;
    let s = &out.summary;
    ensure(s.infeasible_steps.is_empty(), format!("{} infeasible steps with free wheels", s.infeasible_steps.len()))?;
    let settle = s.settling_step.ok_or("error never settled")?;
    ensure(settle <= 5000, format!("settled at step {settle}"))?;
    ensure(s.max_wheel_speed > 0.0, "wheels never spun".into())?;
    Ok(format!(
        "wheels at rest: infeasible (residual {residual:.3}); free wheels: settled at step {settle}, peak wheel speed {:.1}",
        s.max_wheel_speed
    ))
}

fn gain_certificates() -> Outcome {
    let start = Instant::now();
    let base = preset("t1d1-disturbance").map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    for kind in [BoundKind::EnergyToPeak, BoundKind::EnergyToEnergy, BoundKind::ImpulseToEnergy] {
        let mut scenario: Scenario = base.clone();
        if let GainSource::Synthesized { kind: k, .. } = &mut scenario.gains {
            *k = kind;
        }
        if kind == BoundKind::ImpulseToEnergy {
            scenario.disturbance = DisturbanceSpec::Impulse { magnitude: 1.0 };
        }
        let setup = prepare(&scenario).map_err(|e| format!("{kind:?}: {e}"))?;
        let gains = setup.synthesis.as_ref().ok_or("no synthesized gains")?;
        ensure(gains.certified(), format!("{kind:?}: certificate margin {:.3e}", gains.worst_margin()))?;
        let eps = gains.epsilon.ok_or("no certified bound")?;
        let mut worst = 0.0f64;
        for seed in 1..=20 {
            scenario.integration.seed = seed;
            let out = simulate(&setup, &scenario, false).map_err(|e| e.to_string())?;
            let emp = out.summary.empirical.ok_or("no empirical gains")?;
            let measured = match kind {
                BoundKind::EnergyToPeak => emp.energy_to_peak,
                BoundKind::EnergyToEnergy => emp.energy_to_energy,
                _ => emp.impulse_to_energy,
            }
            .ok_or("measured gain missing")?;
            worst = worst.max(measured);
        }
        ensure(worst < eps, format!("{kind:?}: measured {worst:.3e} exceeds certified {eps:.3e}"))?;
        lines.push(format!("{kind:?} {worst:.3e} <= {eps:.3e}"));
    }
    within_budget(start, Duration::from_secs(300))?;
    Ok(lines.join(", "))
}

fn solver_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut tested, mut wrong) = (0, 0);
    while tested < 50 {
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
        lmi.nsd_margin(&p.expr.lmul(&a.transpose()).add(&p.expr.rmul(&a)), 1e-6);
        if lmi.solve().is_ok() != (abscissa < 0.0) {
            wrong += 1;
        }
    }
    ensure(wrong == 0, format!("{wrong} Lyapunov misclassifications"))?;

    let mut eig_err = 0.0f64;
    for _ in 0..20 {
        let k = rng.random_range(2..=5);
        let r = DMatrix::from_fn(k, k, |_, _| rng.random_range(-2.0..2.0));
        let s = (&r + r.transpose()) * 0.5;
        let mut lmi = LmiBuilder::new();
        let t = lmi.scalar();
        let mut bound = Affine::constant(-s.clone());
        for i in 0..k {
            let mut e = DMatrix::zeros(k, 1);
            e[(i, 0)] = 1.0;
            bound = bound.add(&t.expr.lmul(&e).rmul(&e.transpose()));
        }
        lmi.psd(&bound);
        lmi.minimize(&t.expr);
        let sol = lmi.solve().map_err(|e| e.to_string())?;
        eig_err = eig_err.max((sol.primal_objective - s.symmetric_eigenvalues().max()).abs());
    }
    ensure(eig_err <= 1e-7, format!("min-bound error {eig_err:.3e}"))?;

    let mut lp_err = 0.0f64;
    for _ in 0..500 {
        let n = rng.random_range(1..=6);
        let m = rng.random_range(1..=n.min(4));
        let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-2.0..2.0));
        let b = DVector::from_fn(m, |_, _| rng.random_range(-2.0..2.0));
        let c = DVector::from_fn(n, |_, _| rng.random_range(0.1..2.0));
        let oracle = vertex_enumeration(&a, &b, &c);
        match (solve_nonneg_lp(&NonnegLp::new(a, b, c)), oracle) {
            (Ok(sol), Some(v)) => lp_err = lp_err.max((sol.objective - v).abs() / (1.0 + v.abs())),
            (Err(e), None) if e.is_infeasible() => {}
            (got, want) => return Err(format!("LP status mismatch: solver {:?}, enumeration {want:?}", got.map(|s| s.objective))),
        }
    }
    ensure(lp_err <= 1e-9, format!("LP objective error {lp_err:.3e}"))?;
    Ok(format!("Lyapunov 50/50, min-bound error {eig_err:.2e}, LP error {lp_err:.2e} over 500 instances"))
}

/// Largest `yᵀy + 2 b̄ᵀy` over a polar grid of the disk `yᵀy ≤ ε̄`.
fn grid_peak(b_bar: &Vector2<f64>, eps_bar: f64) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    for i in 0..=200 {
        let r = eps_bar.max(0.0).sqrt() * i as f64 / 200.0;
        for j in 0..720 {
            let th = 2.0 * std::f64::consts::PI * j as f64 / 720.0;
            let y = Vector2::new(r * th.cos(), r * th.sin());
            peak = peak.max(y.dot(&y) + 2.0 * b_bar.dot(&y));
        }
    }
    peak
}

fn s_lemma_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut slack = f64::INFINITY;
    for _ in 0..20 {
        let b_bar = Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let eps_b = rng.random_range(0.01..0.5);
        let r = bar_length_bound(&DVector::from_column_slice(b_bar.as_slice()), eps_b).map_err(|e| e.to_string())?;
        ensure(r.kappa >= -1e-9 && r.check.passes(), format!("certificate fails: kappa {}", r.kappa))?;
        let peak = grid_peak(&b_bar, r.eps_bar);
        ensure(peak <= eps_b + 1e-7, format!("implication violated: {peak} > {eps_b}"))?;
        ensure(grid_peak(&b_bar, r.eps_bar * 1.01) > eps_b, "bound is not tight".into())?;
        slack = slack.min(eps_b - peak);
    }
    let b_bar = DVector::from_vec(vec![0.6, -0.3]);
    let mut last = 0.0;
    for k in 1..=10 {
        let eps_bar = bar_length_bound(&b_bar, 0.05 * k as f64).map_err(|e| e.to_string())?.eps_bar;
        ensure(eps_bar >= last, format!("bound decreased at step {k}"))?;
        last = eps_bar;
    }
    Ok(format!("implication holds on the grid for 20 pairs (min slack {slack:.2e}), monotone over 10 levels"))
}

fn sweep_symmetry() -> Outcome {
    let scenario = preset("t2d1-sweep").map_err(|e| e.to_string())?;
    let rows = sweep(&scenario, None).map_err(|e| e.to_string())?;
    if let Some(bad) = rows.iter().find(|r| !r.success) {
        return Err(format!("target {} failed: {:?}", bad.id, bad.failure));
    }
    let avg = |reach: f64, angle: f64| {
        rows.iter()
            .find(|r| r.reach == reach && r.angle_deg == angle)
            .and_then(|r| r.avg_gamma)
            .expect("grid target")
    };
    let sw = scenario.sweep.as_ref().ok_or("no sweep grid")?;
    let mut asym = 0.0f64;
    for &reach in &sw.reaches {
        for &angle in sw.angles_deg.iter().filter(|a| **a > 0.0) {
            asym = asym.max((avg(reach, angle) - avg(reach, -angle)).abs());
        }
    }
    ensure(asym <= 1e-6, format!("mirror targets differ by {asym:.3e}"))?;
    let extension: Vec<f64> = sw.reaches.iter().map(|r| avg(*r, 0.0)).collect();
    ensure(extension.windows(2).all(|w| w[1] >= w[0]), format!("avg gamma not monotone in reach: {extension:?}"))?;
    Ok(format!("mirror difference {asym:.2e}, pure-extension avg gamma {extension:.4?}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("lambda-map equivalence", lambda_map_equivalence),
        ("reduced-order fidelity", reduced_order_fidelity),
        ("conservation and RK4 order", conservation_and_order),
        ("closed-loop regulation", closed_loop_regulation),
        ("gyroscopic reachability", gyroscopic_reachability),
        ("gain certificates", gain_certificates),
        ("SDP/LP solver oracles", solver_oracles),
        ("S-lemma bar-length bound", s_lemma_bound),
        ("sweep symmetry and monotonicity", sweep_symmetry),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        match outcome {
            Ok(detail) => println!("criterion {} PASS {name}: {detail} [{elapsed:.1?}]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} FAIL {name}: {detail} [{elapsed:.1?}]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
