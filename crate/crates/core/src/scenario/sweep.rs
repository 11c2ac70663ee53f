use rayon::prelude::*;
use serde::Serialize;

use super::{prepare, simulate, Scenario, ScenarioError};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepTarget {
    pub id: usize,
    pub reach: f64,
    pub angle_deg: f64,
}

/// Outcome of one target; failures are recorded instead of aborting.
#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub id: usize,
    pub reach: f64,
    pub angle_deg: f64,
    pub success: bool,
    pub avg_gamma: Option<f64>,
    pub settling_step: Option<usize>,
    pub infeasible_steps: usize,
    pub final_relative_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Grid targets in reach-major order.
pub fn sweep_targets(scenario: &Scenario) -> Vec<SweepTarget> {
    let Some(sw) = &scenario.sweep else {
        return Vec::new();
    };
    sw.reaches
        .iter()
        .flat_map(|r| sw.angles_deg.iter().map(move |a| (*r, *a)))
        .enumerate()
        .map(|(id, (reach, angle_deg))| SweepTarget { id, reach, angle_deg })
        .collect()
}

fn run_target(scenario: &Scenario, target: &SweepTarget) -> Result<SweepRow, ScenarioError> {
    let mut s = scenario.clone();
    s.target.angle_d_deg = None;
    s.target.reach = Some(target.reach);
    s.target.rotate_y_deg = target.angle_deg;
    let setup = prepare(&s)?;
    let out = simulate(&setup, &s, false)?;
    let sm = &out.summary;
    Ok(SweepRow {
        id: target.id,
        reach: target.reach,
        angle_deg: target.angle_deg,
        success: sm.settling_step.is_some() && sm.infeasible_steps.is_empty(),
        avg_gamma: Some(sm.avg_gamma),
        settling_step: sm.settling_step,
        infeasible_steps: sm.infeasible_steps.len(),
        final_relative_error: Some(sm.final_error / sm.initial_error.max(f64::MIN_POSITIVE)),
        failure: None,
    })
}

/// One simulation per grid target on `jobs` worker threads (all cores when
/// `None`), sorted by target id.
pub fn sweep(scenario: &Scenario, jobs: Option<usize>) -> Result<Vec<SweepRow>, ScenarioError> {
    scenario.validate()?;
    let targets = sweep_targets(scenario);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
    let mut rows: Vec<SweepRow> = pool.install(|| {
        targets
            .par_iter()
            .map(|t| {
                run_target(scenario, t).unwrap_or_else(|e| SweepRow {
                    id: t.id,
                    reach: t.reach,
                    angle_deg: t.angle_deg,
                    success: false,
                    avg_gamma: None,
                    settling_step: None,
                    infeasible_steps: 0,
                    final_relative_error: None,
                    failure: Some(e.to_string()),
                })
            })
            .collect()
    });
    rows.sort_by_key(|r| r.id);
    Ok(rows)
}
