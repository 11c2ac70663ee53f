use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::GainError;

/// Disturbance that produced a trace.
#[derive(Clone, Debug)]
pub enum DisturbanceRecord {
    /// Force held constant over each step of length `dt`.
    Energy { samples: Vec<DVector<f64>>, dt: f64 },
    /// Impulse `w₀ δ(t)` at the start of the trace.
    Impulse { w0: DVector<f64> },
}

impl DisturbanceRecord {
    /// `‖w‖_L₂` for energy disturbances, `‖w₀‖` for impulses.
    pub fn size(&self) -> f64 {
        match self {
            Self::Energy { samples, dt } => (samples.iter().map(|w| w.norm_squared()).sum::<f64>() * dt).sqrt(),
            Self::Impulse { w0 } => w0.norm(),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EmpiricalGains {
    /// `‖y‖_L∞ / ‖w‖_L₂`.
    pub energy_to_peak: Option<f64>,
    /// `‖y‖_L₂ / ‖w‖_L₂`.
    pub energy_to_energy: Option<f64>,
    /// `‖y‖_L₂ / ‖w₀‖`.
    pub impulse_to_energy: Option<f64>,
    pub peak: f64,
    pub energy: f64,
}

/// Measured disturbance gains of an output trace `y(t_k)` sampled on
/// uniform times starting at the disturbance onset. `‖y‖_L₂` uses the
/// trapezoidal rule.
pub fn empirical_gains(times: &[f64], outputs: &[DVector<f64>], disturbance: &DisturbanceRecord) -> Result<EmpiricalGains, GainError> {
    if times.len() != outputs.len() || times.len() < 2 {
        return Err(GainError::Dimension(format!("{} times for {} outputs", times.len(), outputs.len())));
    }
    let size = disturbance.size();
    if !(size > 0.0) {
        return Err(GainError::ZeroDisturbance);
    }
    let sq: Vec<f64> = outputs.iter().map(|y| y.norm_squared()).collect();
    let peak = sq.iter().fold(0.0f64, |a, v| a.max(*v)).sqrt();
    let energy = times
        .windows(2)
        .zip(sq.windows(2))
        .map(|(t, s)| (t[1] - t[0]) * (s[0] + s[1]) / 2.0)
        .sum::<f64>()
        .sqrt();
    Ok(match disturbance {
        DisturbanceRecord::Energy { .. } => EmpiricalGains {
            energy_to_peak: Some(peak / size),
            energy_to_energy: Some(energy / size),
            impulse_to_energy: None,
            peak,
            energy,
        },
        DisturbanceRecord::Impulse { .. } => EmpiricalGains {
            energy_to_peak: None,
            energy_to_energy: None,
            impulse_to_energy: Some(energy / size),
            peak,
            energy,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lag_trace(w0: f64, a: f64, dt: f64, steps: usize) -> (Vec<f64>, Vec<DVector<f64>>) {
        let times: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
        let ys = times.iter().map(|t| DVector::from_element(1, w0 * (-a * t).exp())).collect();
        (times, ys)
    }

    #[test]
    fn impulse_on_first_order_lag_matches_closed_form() {
        // ẏ = −a y + w₀ δ(t): ‖y‖_L₂ = w₀ / √(2a).
        let (a, w0) = (2.0, 0.7);
        let (times, ys) = lag_trace(w0, a, 1e-3, 10_000);
        let g = empirical_gains(&times, &ys, &DisturbanceRecord::Impulse { w0: DVector::from_element(1, w0) }).unwrap();
        assert!((g.impulse_to_energy.unwrap() - 1.0 / (2.0 * a).sqrt()).abs() < 1e-6);
    }

    #[test]
    fn gains_are_scale_invariant() {
        let (times, ys) = lag_trace(1.0, 1.0, 1e-2, 500);
        let w = DisturbanceRecord::Energy {
            samples: vec![DVector::from_element(2, 0.5); 10],
            dt: 1e-2,
        };
        let g1 = empirical_gains(&times, &ys, &w).unwrap();
        let ys3: Vec<_> = ys.iter().map(|y| y * 3.0).collect();
        let w3 = DisturbanceRecord::Energy {
            samples: vec![DVector::from_element(2, 1.5); 10],
            dt: 1e-2,
        };
        let g3 = empirical_gains(&times, &ys3, &w3).unwrap();
        assert!((g1.energy_to_peak.unwrap() - g3.energy_to_peak.unwrap()).abs() < 1e-12);
        assert!((g1.energy_to_energy.unwrap() - g3.energy_to_energy.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn zero_disturbance_is_rejected() {
        let (times, ys) = lag_trace(1.0, 1.0, 1e-2, 10);
        let w = DisturbanceRecord::Impulse { w0: DVector::zeros(2) };
        assert!(matches!(empirical_gains(&times, &ys, &w), Err(GainError::ZeroDisturbance)));
    }
}
