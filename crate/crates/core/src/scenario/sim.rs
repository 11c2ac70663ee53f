use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::{DisturbanceSpec, Scenario, ScenarioError, Setup};
use crate::dynamics::{devectorize, vectorize, Wrench};
use crate::gain_synthesis::{empirical_gains, DisturbanceRecord, EmpiricalGains};
use crate::shape_control::{compute_control, reduced_controller, ControlError, WheelPolicy};

/// State and command at the start of one step.
#[derive(Clone, Debug)]
pub struct TraceRow {
    pub step: usize,
    pub t: f64,
    pub error: DVector<f64>,
    pub gamma: DVector<f64>,
    pub omega_w: DVector<f64>,
    pub feasible: bool,
    /// `‖Ë + Ė Ψ + E Θ‖` from the model accelerations under the command
    /// (`NaN` when not evaluated).
    pub closed_loop_residual: f64,
    /// Bar force densities under the applied loads.
    pub lambda: DVector<f64>,
    /// Norm of the constraint multipliers under the applied loads.
    pub lagrange_norm: f64,
    pub nodes: Option<DMatrix<f64>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub steps: usize,
    pub dt: f64,
    pub duration: f64,
    pub coordinates: usize,
    pub dof: usize,
    pub open_loop: bool,
    pub initial_error: f64,
    pub final_error: f64,
    pub peak_error: f64,
    /// First step after which `‖e‖` stays below `settle_tol` times the
    /// initial error (the peak error when the run starts on target).
    pub settling_step: Option<usize>,
    pub settling_time: Option<f64>,
    /// Mean over steps of `Σ γ`.
    pub avg_gamma: f64,
    pub infeasible_steps: Vec<usize>,
    pub max_closed_loop_residual: f64,
    pub max_bar_length_drift: f64,
    pub max_constraint_residual: f64,
    pub max_wheel_speed: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certified_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certified: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub empirical: Option<EmpiricalGains>,
}

#[derive(Clone, Debug)]
pub struct SimOutput {
    pub summary: Summary,
    pub trace: Vec<TraceRow>,
    pub times: Vec<f64>,
    /// Error at every step including the final state.
    pub errors: Vec<DVector<f64>>,
}

/// Disturbance force at each step and the impulse at `t = 0`.
struct DisturbanceSignal {
    forces: Vec<DMatrix<f64>>,
    impulse: Option<DVector<f64>>,
}

fn random_direction(rng: &mut ChaCha8Rng, nn: usize) -> DMatrix<f64> {
    DMatrix::from_fn(3, nn, |_, _| StandardNormal.sample(rng))
}

impl DisturbanceSignal {
    fn new(spec: &DisturbanceSpec, nn: usize, dt: f64, steps: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let zero = || vec![DMatrix::zeros(3, nn); steps];
        match *spec {
            DisturbanceSpec::None => Self { forces: zero(), impulse: None },
            DisturbanceSpec::Pulse { duration, energy } => {
                let d = random_direction(&mut rng, nn);
                let shape: Vec<f64> = (0..steps)
                    .map(|k| {
                        let t = k as f64 * dt;
                        if t < duration {
                            (std::f64::consts::PI * t / duration).sin().powi(2)
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let norm = (d.norm_squared() * dt * shape.iter().map(|s| s * s).sum::<f64>()).sqrt();
                let scale = if norm > 0.0 { energy / norm } else { 0.0 };
                Self {
                    forces: shape.iter().map(|s| &d * (s * scale)).collect(),
                    impulse: None,
                }
            }
            DisturbanceSpec::Impulse { magnitude } => {
                let d = vectorize(&random_direction(&mut rng, nn));
                Self {
                    forces: zero(),
                    impulse: Some(&d * (magnitude / d.norm())),
                }
            }
            DisturbanceSpec::WhiteNoise { intensity } => {
                let sd = (intensity / dt).sqrt();
                Self {
                    forces: (0..steps).map(|_| random_direction(&mut rng, nn) * sd).collect(),
                    impulse: None,
                }
            }
        }
    }
}

/// Runs the closed-loop (or open-loop) simulation. The controller sees the
/// external loads only; disturbances act on the model.
pub fn simulate(setup: &Setup, scenario: &Scenario, record_trace: bool) -> Result<SimOutput, ScenarioError> {
    let model = &setup.model;
    let objective = &setup.objective;
    let nn = model.n_nodes();
    let beta = model.topology.beta;
    let integ = &scenario.integration;
    let (dt, steps) = (integ.dt, integ.steps);
    let policy = &scenario.control.policy;
    let open_loop = scenario.control.open_loop;
    let every = scenario.outputs.trace_every;
    let signal = DisturbanceSignal::new(&scenario.disturbance, nn, dt, steps, integ.seed);
    let calm = Wrench::zero(nn, beta);

    let mut state = setup.initial.clone();
    if let Some(w0) = &signal.impulse {
        let jump = model.force_response(&state.n)? * w0;
        state.n_dot += devectorize(&jump, nn);
    }
    let mut trace = Vec::new();
    let mut times = Vec::with_capacity(steps + 1);
    let mut errors = Vec::with_capacity(steps + 1);
    let mut infeasible_steps = Vec::new();
    let mut held: Option<DVector<f64>> = None;
    let (mut gamma_total, mut max_cl, mut max_drift, mut max_cons, mut max_wheel) = (0.0, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for k in 0..=steps {
        errors.push(objective.error(&state.n));
        times.push(state.t);
        max_drift = max_drift.max(model.bar_length_error(&state.n));
        max_cons = max_cons.max(model.constraint_residual(&state.n));
        if k == steps {
            break;
        }
        let (gamma, feasible, cl) = match &held {
            Some(g) => (g.clone(), true, f64::NAN),
            None => {
                let rc = reduced_controller(model, &state, &calm, objective)?;
                let (cmd, feasible) = match compute_control(&rc.system(), &state.omega_w, policy) {
                    Ok(c) => (c, true),
                    Err(ControlError::Infeasible { residual, fallback }) => {
                        log::warn!("step {k}: force densities cannot meet the control law (residual {residual:.3e}), applying the least-squares command");
                        (*fallback, false)
                    }
                    Err(e) => return Err(e.into()),
                };
                if matches!(policy.wheels, WheelPolicy::Free { .. }) {
                    state.omega_w = cmd.omega_w.clone();
                }
                let cl = if feasible {
                    let acc = model.accelerations(&state, &calm, &cmd.gamma)?;
                    objective.residual(&state, &acc.n_ddot).norm()
                } else {
                    f64::NAN
                };
                if open_loop {
                    held = Some(cmd.gamma.clone());
                }
                (cmd.gamma, feasible, cl)
            }
        };
        if !feasible {
            infeasible_steps.push(k);
        } else if cl.is_finite() {
            max_cl = max_cl.max(cl);
        }
        gamma_total += gamma.sum();
        max_wheel = max_wheel.max(state.omega_w.amax());
        let mut wrench = calm.clone();
        wrench.w_d = signal.forces[k].clone();
        if record_trace && k % every == 0 {
            let applied = model.accelerations(&state, &wrench, &gamma)?;
            trace.push(TraceRow {
                step: k,
                t: state.t,
                error: errors[k].clone(),
                gamma: gamma.clone(),
                omega_w: state.omega_w.clone(),
                feasible,
                closed_loop_residual: cl,
                lambda: applied.lambda,
                lagrange_norm: applied.lagrange.norm(),
                nodes: scenario.outputs.nodes.then(|| state.n.clone()),
            });
        }
        state = model.step(&state, &gamma, &wrench, dt)?;
    }

    let norms: Vec<f64> = errors.iter().map(|e| e.norm()).collect();
    let initial_error = norms[0];
    let peak_error = norms.iter().fold(0.0f64, |a, v| a.max(*v));
    let reference = if initial_error > 0.0 { initial_error } else { peak_error };
    let level = integ.settle_tol * reference;
    let settling_step = if reference == 0.0 {
        Some(0)
    } else {
        match norms.iter().rposition(|v| *v >= level) {
            None => Some(0),
            Some(last) if last + 1 < norms.len() => Some(last + 1),
            Some(_) => None,
        }
    };
    let empirical = match (&scenario.disturbance, &signal.impulse) {
        (DisturbanceSpec::Pulse { .. }, _) => {
            let samples = signal.forces.iter().map(vectorize).collect();
            Some(empirical_gains(&times, &errors, &DisturbanceRecord::Energy { samples, dt })?)
        }
        (DisturbanceSpec::Impulse { .. }, Some(w0)) => Some(empirical_gains(&times, &errors, &DisturbanceRecord::Impulse { w0: w0.clone() })?),
        _ => None,
    };
    let summary = Summary {
        scenario: scenario.name.clone(),
        steps,
        dt,
        duration: steps as f64 * dt,
        coordinates: setup.coordinates.len(),
        dof: setup.dof,
        open_loop,
        initial_error,
        final_error: *norms.last().expect("at least one sample"),
        peak_error,
        settling_step,
        settling_time: settling_step.map(|s| s as f64 * dt),
        avg_gamma: if steps > 0 { gamma_total / steps as f64 } else { 0.0 },
        infeasible_steps,
        max_closed_loop_residual: max_cl,
        max_bar_length_drift: max_drift,
        max_constraint_residual: max_cons,
        max_wheel_speed: max_wheel,
        certified_bound: setup.synthesis.as_ref().and_then(|r| r.epsilon),
        certified: setup.synthesis.as_ref().map(|r| r.certified()),
        empirical,
    };
    Ok(SimOutput {
        summary,
        trace,
        times,
        errors,
    })
}

const FIXED_COLUMNS: [&str; 7] = ["step", "t", "error_norm", "gamma_sum", "feasible", "closed_loop_residual", "lagrange_norm"];

/// Writes the trace as CSV with one row per recorded step.
pub fn write_trace_csv<W: Write>(out: &SimOutput, mut w: W) -> io::Result<()> {
    let Some(first) = out.trace.first() else {
        return writeln!(w, "{}", FIXED_COLUMNS.join(","));
    };
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|c| c.to_string()).collect();
    header.extend((0..first.error.len()).map(|i| format!("e{i}")));
    header.extend((0..first.gamma.len()).map(|i| format!("gamma{i}")));
    header.extend((0..first.lambda.len()).map(|i| format!("lambda{i}")));
    header.extend((0..first.omega_w.len()).map(|i| format!("omega{i}")));
    if let Some(n) = &first.nodes {
        for j in 0..n.ncols() {
            for ax in ["x", "y", "z"] {
                header.push(format!("n{j}_{ax}"));
            }
        }
    }
    writeln!(w, "{}", header.join(","))?;
    for row in &out.trace {
        let mut fields = vec![
            row.step.to_string(),
            row.t.to_string(),
            row.error.norm().to_string(),
            row.gamma.sum().to_string(),
            u8::from(row.feasible).to_string(),
            row.closed_loop_residual.to_string(),
            row.lagrange_norm.to_string(),
        ];
        fields.extend(row.error.iter().map(f64::to_string));
        fields.extend(row.gamma.iter().map(f64::to_string));
        fields.extend(row.lambda.iter().map(f64::to_string));
        fields.extend(row.omega_w.iter().map(f64::to_string));
        if let Some(n) = &row.nodes {
            for col in n.column_iter() {
                fields.extend(col.iter().map(f64::to_string));
            }
        }
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}
