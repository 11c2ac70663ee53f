use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use tensegrity_core::dynamics::{ConstraintSet, MaterialSpec, Model};
use tensegrity_core::scenario::{
    prepare, run_verify, simulate, structure_of, sweep, tangent_basis, write_trace_csv, Scenario, ScenarioError, SimOutput, VerifyOptions, PRESETS,
};
use tensegrity_core::topology::StructureDoc;

#[derive(Parser, Debug)]
#[command(name = "tensegrity", version, about = "Gyroscopic tensegrity simulation, shape control and gain synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a controlled (or open-loop) simulation; writes trace.csv,
    /// summary.json and plots.json.
    Simulate(RunArgs),
    /// Synthesize gains for the scenario's bound; writes gains.json.
    Synth(RunArgs),
    /// One simulation per grid target; writes sweep.csv and sweep.json.
    Sweep(RunArgs),
    /// Run the invariant and solver cross-checks.
    Verify(VerifyArgs),
    /// Describe the scenario's structure; writes structure.toml.
    Topo(RunArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Scenario file, or the name of a bundled preset.
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the integration time step.
    #[arg(long)]
    dt: Option<f64>,
    /// Overrides the number of steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Overrides the disturbance seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for sweeps (all cores by default).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Multiplies every tolerance; values below one tighten the checks.
    #[arg(long, default_value_t = 1.0)]
    tolerance_factor: f64,
}

enum Failure {
    Config(String),
    Infeasible(String),
    Numerical(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Infeasible(_) => 3,
            Self::Numerical(_) => 4,
            Self::Io(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Config(m) | Self::Infeasible(m) | Self::Numerical(m) | Self::Io(m) => m,
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        if e.is_config() {
            Self::Config(e.to_string())
        } else if e.is_infeasible() {
            Self::Infeasible(e.to_string())
        } else {
            Self::Numerical(e.to_string())
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

fn load(args: &RunArgs) -> Result<Scenario, Failure> {
    let path = Path::new(&args.scenario);
    let mut scenario = if path.is_file() {
        let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        Scenario::from_toml(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
    } else if let Some((_, text)) = PRESETS.iter().find(|(name, _)| *name == args.scenario) {
        Scenario::from_toml(text)?
    } else {
        let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
        return Err(Failure::Config(format!(
            "{:?} is neither a scenario file nor a preset ({})",
            args.scenario,
            names.join(", ")
        )));
    };
    if let Some(dt) = args.dt {
        scenario.integration.dt = dt;
    }
    if let Some(steps) = args.steps {
        scenario.integration.steps = steps;
    }
    if let Some(seed) = args.seed {
        scenario.integration.seed = seed;
    }
    scenario.validate()?;
    Ok(scenario)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<fs::File>, Failure> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(fs::File::create(dir.join(name))?))
}

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> Result<(), Failure> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Failure::Io(e.to_string()))?;
    writeln!(w)?;
    Ok(())
}

fn plot_manifest(out: &SimOutput) -> serde_json::Value {
    let Some(first) = out.trace.first() else {
        return json!({ "trace": "trace.csv", "plots": [] });
    };
    let columns = |prefix: &str, n: usize| (0..n).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>();
    let mut plots = vec![
        json!({ "title": "Error norm", "x": "t", "y": ["error_norm"], "log_y": true }),
        json!({ "title": "Error coordinates", "x": "t", "y": columns("e", first.error.len()) }),
        json!({ "title": "String force densities", "x": "t", "y": columns("gamma", first.gamma.len()) }),
        json!({ "title": "Bar force densities", "x": "t", "y": columns("lambda", first.lambda.len()) }),
    ];
    if out.summary.max_wheel_speed > 0.0 {
        plots.push(json!({ "title": "Wheel speeds", "x": "t", "y": columns("omega", first.omega_w.len()) }));
    }
    json!({ "trace": "trace.csv", "plots": plots })
}

fn cmd_simulate(args: &RunArgs) -> Result<(), Failure> {
    let scenario = load(args)?;
    let setup = prepare(&scenario)?;
    let out = simulate(&setup, &scenario, true)?;
    write_trace_csv(&out, create(&args.out, "trace.csv")?)?;
    write_json(&args.out, "summary.json", &out.summary)?;
    write_json(&args.out, "plots.json", &plot_manifest(&out))?;
    let s = &out.summary;
    println!("scenario        {}", s.scenario);
    println!("steps           {} (dt {}, {} s)", s.steps, s.dt, s.duration);
    println!("error           {:.3e} -> {:.3e} (peak {:.3e})", s.initial_error, s.final_error, s.peak_error);
    match (s.settling_step, s.settling_time) {
        (Some(k), Some(t)) => println!("settled         step {k} ({t:.3} s)"),
        _ => println!("settled         no"),
    }
    println!("avg gamma       {:.6}", s.avg_gamma);
    println!("bar drift       {:.3e}", s.max_bar_length_drift);
    println!("outputs         {}", args.out.display());
    if let Some(first) = s.infeasible_steps.first() {
        return Err(Failure::Infeasible(format!(
            "{} infeasible steps (first at step {first})",
            s.infeasible_steps.len()
        )));
    }
    Ok(())
}

fn cmd_synth(args: &RunArgs) -> Result<(), Failure> {
    let scenario = load(args)?;
    let setup = prepare(&scenario)?;
    let gains = setup
        .synthesis
        .ok_or_else(|| Failure::Config("scenario uses explicit gains; set [gains] source = \"synthesized\"".into()))?;
    write_json(&args.out, "gains.json", &gains)?;
    println!("bound kind      {:?}", gains.kind);
    match gains.epsilon {
        Some(eps) => println!("certified bound {eps:.6e}"),
        None => println!("certified bound none"),
    }
    println!("abscissa        {:.6e}", gains.spectral_abscissa);
    for check in &gains.checks {
        let status = if check.passes() { "ok" } else { "FAIL" };
        println!("check           {status} {} (min eigenvalue {:.3e}, scale {:.3e})", check.name, check.min_eig, check.scale);
    }
    println!("outputs         {}", args.out.join("gains.json").display());
    if !gains.certified() {
        return Err(Failure::Numerical(format!("certificate re-substitution failed (margin {:.3e})", gains.worst_margin())));
    }
    Ok(())
}

fn cmd_sweep(args: &RunArgs) -> Result<(), Failure> {
    let scenario = load(args)?;
    let rows = sweep(&scenario, args.jobs)?;
    let mut w = create(&args.out, "sweep.csv")?;
    writeln!(w, "id,reach,angle_deg,success,avg_gamma,settling_step,infeasible_steps,final_relative_error,failure")?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    println!("{:>4} {:>10} {:>10} {:>8} {:>14} {:>8} {:>10}", "id", "reach", "angle", "success", "avg gamma", "settle", "infeasible");
    for r in &rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.id,
            r.reach,
            r.angle_deg,
            r.success,
            opt(r.avg_gamma),
            r.settling_step.map(|s| s.to_string()).unwrap_or_default(),
            r.infeasible_steps,
            opt(r.final_relative_error),
            r.failure.as_deref().unwrap_or("").replace(',', ";"),
        )?;
        println!(
            "{:>4} {:>10} {:>10} {:>8} {:>14} {:>8} {:>10}",
            r.id,
            r.reach,
            r.angle_deg,
            r.success,
            r.avg_gamma.map(|g| format!("{g:.6}")).unwrap_or_else(|| "-".into()),
            r.settling_step.map(|s| s.to_string()).unwrap_or_else(|| "-".into()),
            r.infeasible_steps,
        );
        if let Some(f) = &r.failure {
            log::error!("target {}: {f}", r.id);
        }
    }
    w.flush()?;
    write_json(&args.out, "sweep.json", &rows)?;
    if rows.iter().any(|r| r.failure.is_some()) {
        return Err(Failure::Numerical("some sweep targets failed".into()));
    }
    if rows.iter().any(|r| r.infeasible_steps > 0) {
        return Err(Failure::Infeasible("some sweep targets hit infeasible steps".into()));
    }
    Ok(())
}

fn cmd_verify(args: &VerifyArgs) -> Result<(), Failure> {
    if !(args.tolerance_factor > 0.0) {
        return Err(Failure::Config("--tolerance-factor must be positive".into()));
    }
    let reports = run_verify(&VerifyOptions {
        seed: args.seed,
        tolerance_factor: args.tolerance_factor,
    });
    for r in &reports {
        let status = if r.passed { "PASS" } else { "FAIL" };
        println!(
            "{status} {:<20} measured {:.3e}  tolerance {:.3e}  margin {:.2e}  {}",
            r.name,
            r.measured,
            r.tolerance,
            r.margin(),
            r.detail
        );
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(Failure::Numerical(format!("{failed} of {} checks failed", reports.len())));
    }
    Ok(())
}

fn cmd_topo(args: &RunArgs) -> Result<(), Failure> {
    let scenario = load(args)?;
    let (structure, pins) = structure_of(&scenario)?;
    let t = &structure.topology;
    let constraints = ConstraintSet::for_structure(&structure, &pins).map_err(|e| Failure::Config(e.to_string()))?;
    let m = &scenario.material;
    let material = MaterialSpec::uniform(&structure, m.bar_mass, m.node_mass, m.wheel_radius, m.string_stiffness);
    let model = Model::new(&structure, material, constraints).map_err(|e| Failure::Numerical(e.to_string()))?;
    let dof = tangent_basis(&model, &structure.nodes).ncols();
    let doc = StructureDoc::from_structure(&structure, pins, None);
    let text = doc.to_toml().map_err(|e| Failure::Io(e.to_string()))?;
    let mut w = create(&args.out, "structure.toml")?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    println!("bars            {}", t.beta);
    println!("strings         {}", t.alpha);
    println!("string nodes    {}", t.sigma);
    println!("nodes           {}", t.n_nodes());
    println!("points          {}", structure.points.len());
    println!("joints          {}", structure.joints.len());
    println!("constraints     {}", model.constraints.rank());
    println!("free dof        {dof}");
    println!("planar          {}", structure.planar);
    println!("outputs         {}", args.out.join("structure.toml").display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Topo(a) => cmd_topo(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
