use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{CertificateCheck, GainError};
use crate::optimize::{Affine, LmiBuilder, OptimizeError};

/// Largest `ε̄` with `yᵀy ≤ ε̄ ⇒ yᵀy + 2 b̄ᵀy ≤ ε_b`, and its multiplier.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BarLengthBound {
    pub kappa: f64,
    pub eps_bar: f64,
    pub check: CertificateCheck,
}

/// `[(1 − κ) I, −κ b̄; −κ b̄ᵀ, κ ε_b − ε̄]` at the given values.
pub fn bar_length_lmi(b_bar: &DVector<f64>, eps_b: f64, kappa: f64, eps_bar: f64) -> DMatrix<f64> {
    let d = b_bar.len();
    let mut m = DMatrix::zeros(d + 1, d + 1);
    m.view_mut((0, 0), (d, d)).fill_diagonal(1.0 - kappa);
    for i in 0..d {
        m[(i, d)] = -kappa * b_bar[i];
        m[(d, i)] = -kappa * b_bar[i];
    }
    m[(d, d)] = kappa * eps_b - eps_bar;
    m
}

/// Maximizes `ε̄` over `κ ≥ 0` subject to the S-lemma inequality.
pub fn bar_length_bound(b_bar: &DVector<f64>, eps_b: f64) -> Result<BarLengthBound, GainError> {
    if !(eps_b > 0.0) || b_bar.is_empty() {
        return Err(GainError::Dimension(format!("bar length bound {eps_b} on a {}-vector", b_bar.len())));
    }
    let d = b_bar.len();
    let mut b = LmiBuilder::new();
    let kappa = b.scalar();
    let eps_bar = b.scalar();
    b.psd(&kappa.expr);
    let mut block = Affine::constant(bar_length_lmi(b_bar, eps_b, 0.0, 0.0));
    block.terms.insert(kappa.offset, bar_length_lmi(b_bar, eps_b, 1.0, 0.0) - bar_length_lmi(b_bar, eps_b, 0.0, 0.0));
    let mut e = DMatrix::zeros(d + 1, d + 1);
    e[(d, d)] = -1.0;
    block.terms.insert(eps_bar.offset, e);
    b.psd(&block);
    b.minimize(&eps_bar.expr.scale(-1.0));
    let sol = b.solve().map_err(|e| match e {
        OptimizeError::SdpInfeasible { .. } => GainError::Infeasible(super::BoundKind::EnergyToPeak),
        other => GainError::Solver(other),
    })?;
    let (k, eb) = (sol.x[kappa.offset], sol.x[eps_bar.offset]);
    Ok(BarLengthBound {
        kappa: k,
        eps_bar: eb,
        check: CertificateCheck::psd("bar length S-lemma", &bar_length_lmi(b_bar, eps_b, k, eb)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_nominal_bar_keeps_bound() {
        let r = bar_length_bound(&DVector::zeros(3), 0.2).unwrap();
        assert!((r.eps_bar - 0.2).abs() < 1e-7);
        assert!((r.kappa - 1.0).abs() < 1e-6);
        assert!(r.check.passes());
    }

    #[test]
    fn matches_closed_form() {
        let b = DVector::from_vec(vec![0.3, -0.4]);
        let r = bar_length_bound(&b, 0.1).unwrap();
        let n = b.norm();
        let exact = ((n * n + 0.1).sqrt() - n).powi(2);
        assert!((r.eps_bar - exact).abs() < 1e-7, "{} vs {exact}", r.eps_bar);
    }
}
