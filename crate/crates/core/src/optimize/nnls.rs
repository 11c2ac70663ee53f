//! Lawson–Hanson active-set nonnegative least squares.

use nalgebra::{DMatrix, DVector};

use super::OptimizeError;

#[derive(Clone, Debug)]
pub struct NnlsSolution {
    pub x: DVector<f64>,
    /// `‖A x − b‖₂`.
    pub residual_norm: f64,
    pub iterations: usize,
}

/// Minimize `‖A x − b‖₂` subject to `x ≥ 0`.
pub fn solve_nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<NnlsSolution, OptimizeError> {
    let (m, n) = a.shape();
    if b.len() != m {
        return Err(OptimizeError::Dimension(format!("A is {m}x{n}, b has {}", b.len())));
    }
    let scale = 1.0 + a.amax() * (1.0 + b.amax());
    let tol = 1e-12 * scale * (m.max(n) as f64);
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let mut blocked = vec![false; n];
    let max_iter = 3 * n + 30;
    let mut iterations = 0;

    loop {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..n)
            .filter(|&j| !passive[j] && !blocked[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else {
            break;
        };
        passive[j] = true;
        let mut first = true;

        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(OptimizeError::MaxIterations(iterations));
            }
            let s = passive_lstsq(a, b, &passive)?;
            if first && s[j] <= 0.0 {
                // Rounding made the entering gradient look positive.
                passive[j] = false;
                blocked[j] = true;
                break;
            }
            first = false;
            blocked.fill(false);
            let min_passive = (0..n).filter(|&i| passive[i]).map(|i| s[i]).fold(f64::INFINITY, f64::min);
            if min_passive > 0.0 {
                x = s;
                break;
            }
            let mut alpha = f64::INFINITY;
            for i in 0..n {
                if passive[i] && s[i] <= 0.0 {
                    let denom = x[i] - s[i];
                    if denom > 0.0 {
                        alpha = alpha.min(x[i] / denom);
                    } else {
                        alpha = alpha.min(0.0);
                    }
                }
            }
            let alpha = if alpha.is_finite() { alpha } else { 0.0 };
            x += (s - &x) * alpha;
            for i in 0..n {
                if passive[i] && x[i] <= tol {
                    passive[i] = false;
                    x[i] = 0.0;
                }
            }
            if !passive.iter().any(|p| *p) {
                break;
            }
        }
    }
    let residual_norm = (a * &x - b).norm();
    Ok(NnlsSolution {
        x,
        residual_norm,
        iterations,
    })
}

fn passive_lstsq(a: &DMatrix<f64>, b: &DVector<f64>, passive: &[bool]) -> Result<DVector<f64>, OptimizeError> {
    let idx: Vec<usize> = (0..passive.len()).filter(|&i| passive[i]).collect();
    let sub = a.select_columns(&idx);
    let svd = sub.svd(true, true);
    let eps = 1e-13 * svd.singular_values.amax().max(1e-300) * (a.nrows().max(idx.len()) as f64);
    let z = svd
        .solve(b, eps)
        .map_err(|e| OptimizeError::IllConditioned(e.to_string()))?;
    let mut s = DVector::zeros(passive.len());
    for (k, &i) in idx.iter().enumerate() {
        s[i] = z[k];
    }
    Ok(s)
}

/// Returns the largest KKT violation of a candidate NNLS solution:
/// negativity of `x`, negativity of the gradient `Aᵀ(Ax − b)`, and
/// complementary slackness `x ∘ Aᵀ(Ax − b)`.
pub fn nnls_kkt_violation(a: &DMatrix<f64>, b: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let g = a.transpose() * (a * x - b);
    let mut v: f64 = 0.0;
    for i in 0..x.len() {
        v = v.max(-x[i]).max(-g[i]).max((x[i] * g[i]).abs());
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamped_coordinate() {
        let a = DMatrix::identity(2, 2);
        let b = DVector::from_vec(vec![-1.0, 2.0]);
        let s = solve_nnls(&a, &b).unwrap();
        assert_eq!(s.x[0], 0.0);
        assert!((s.x[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn exact_nonnegative_solution() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0]);
        let x0 = DVector::from_vec(vec![0.5, 1.0, 2.0]);
        let b = &a * &x0;
        let s = solve_nnls(&a, &b).unwrap();
        assert!((&s.x - x0).amax() < 1e-12);
        assert!(nnls_kkt_violation(&a, &b, &s.x) < 1e-9);
    }
}
