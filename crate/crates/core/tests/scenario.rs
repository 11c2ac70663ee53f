use tensegrity_core::scenario::{preset, prepare, simulate, sweep_targets, write_trace_csv, DisturbanceSpec, Scenario, ScenarioError, PRESETS};

fn short(name: &str, steps: usize) -> Scenario {
    let mut s = preset(name).unwrap();
    s.integration.steps = steps;
    s
}

fn csv(s: &Scenario) -> Vec<u8> {
    let setup = prepare(s).unwrap();
    let out = simulate(&setup, s, true).unwrap();
    let mut buf = Vec::new();
    write_trace_csv(&out, &mut buf).unwrap();
    buf
}

#[test]
fn presets_prepare() {
    for (name, _) in PRESETS {
        let s = preset(name).unwrap();
        let setup = prepare(&s).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(setup.coordinates.len(), setup.dof, "{name}");
        assert!(setup.model.constraint_residual(&setup.initial.n) < 1e-12, "{name}");
    }
}

#[test]
fn traces_are_reproducible() {
    let mut s = short("t1d1-disturbance", 200);
    s.disturbance = DisturbanceSpec::WhiteNoise { intensity: 0.01 };
    s.integration.seed = 9;
    let a = csv(&s);
    assert_eq!(a, csv(&s));
    s.integration.seed = 10;
    assert_ne!(a, csv(&s));
}

#[test]
fn force_densities_stay_nonnegative() {
    let s = short("t2d1-extension", 300);
    let setup = prepare(&s).unwrap();
    let out = simulate(&setup, &s, true).unwrap();
    assert_eq!(out.trace.len(), 300);
    for row in &out.trace {
        assert!(row.feasible);
        assert!(row.gamma.iter().all(|g| *g >= 0.0), "step {}", row.step);
    }
    assert!(out.summary.max_bar_length_drift < 1e-10);
    assert!(out.summary.max_constraint_residual < 1e-10);
}

#[test]
fn open_loop_holds_first_command() {
    let mut s = short("t2d1-extension", 100);
    s.control.open_loop = true;
    let setup = prepare(&s).unwrap();
    let out = simulate(&setup, &s, true).unwrap();
    let first = &out.trace[0].gamma;
    assert!(out.trace.iter().all(|r| &r.gamma == first));
    assert!(out.summary.final_error > 1e-3 * out.summary.initial_error);
}

#[test]
fn trace_decimation_and_columns() {
    let mut s = short("t2d1-extension", 50);
    s.outputs.trace_every = 10;
    s.outputs.nodes = false;
    let text = String::from_utf8(csv(&s)).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 6);
    let header: Vec<&str> = lines[0].split(',').collect();
    assert_eq!(&header[..6], ["step", "t", "error_norm", "gamma_sum", "feasible", "closed_loop_residual"]);
    assert!(!header.iter().any(|h| h.starts_with('n')));
    assert!(lines[1..].iter().all(|l| l.split(',').count() == header.len()));
}

#[test]
fn impulse_starts_motion() {
    let mut s = short("t1d1-disturbance", 400);
    s.disturbance = DisturbanceSpec::Impulse { magnitude: 1.0 };
    let setup = prepare(&s).unwrap();
    let out = simulate(&setup, &s, false).unwrap();
    assert_eq!(out.summary.initial_error, 0.0);
    assert!(out.summary.peak_error > 0.0);
    let emp = out.summary.empirical.unwrap();
    assert!(emp.impulse_to_energy.unwrap() > 0.0);
}

#[test]
fn sweep_grid_is_reach_major() {
    let s = preset("t2d1-sweep").unwrap();
    let targets = sweep_targets(&s);
    assert_eq!(targets.len(), 9);
    assert_eq!((targets[0].reach, targets[0].angle_deg), (5.0, -15.0));
    assert_eq!((targets[3].reach, targets[3].angle_deg), (6.0, -15.0));
    assert!(targets.iter().enumerate().all(|(i, t)| t.id == i));
}

#[test]
fn config_errors_are_reported() {
    let text = PRESETS[0].1;
    let unknown = text.replacen("[integration]", "[integration]\nbogus = 1", 1);
    assert!(matches!(Scenario::from_toml(&unknown), Err(ScenarioError::Parse(_))));

    let version = text.replacen("format_version = 1", "format_version = 7", 1);
    assert!(matches!(Scenario::from_toml(&version), Err(ScenarioError::Invalid(_))));

    let mut s = preset("t2d1-extension").unwrap();
    s.integration.dt = 0.0;
    assert!(s.validate().unwrap_err().is_config());

    let mut s = preset("t2d1-extension").unwrap();
    s.target.reach = Some(5.0);
    assert!(s.validate().is_err());

    let mut s = preset("t2d1-extension").unwrap();
    s.objective.axes = "xw".into();
    assert!(s.validate().is_err());

    let mut s = preset("t2d1-extension").unwrap();
    s.objective.points = Some(vec![10_000]);
    assert!(prepare(&s).unwrap_err().is_config());

    assert!(preset("no-such-preset").is_err());
}

#[test]
fn unreachable_reach_is_rejected() {
    let mut s = preset("t2d1-sweep").unwrap();
    s.target.reach = Some(1e3);
    assert!(prepare(&s).unwrap_err().is_config());
}
