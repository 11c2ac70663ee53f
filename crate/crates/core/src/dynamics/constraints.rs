use nalgebra::{DMatrix, DVector};

use super::DynamicsError;
use crate::topology::{Pin, Structure};

/// Linear constraints `A n = d` on the stacked coordinates with their SVD
/// split into constrained (`V₁`) and free (`V₂`) directions.
#[derive(Clone, Debug)]
pub struct ConstraintSet {
    /// `n × c` node-level constraints `N P = D` (joints and full pins).
    pub p: DMatrix<f64>,
    /// `3 × c` targets of the node-level constraints.
    pub d: DMatrix<f64>,
    /// All constraint rows before pruning.
    pub a_raw: DMatrix<f64>,
    pub d_raw: DVector<f64>,
    /// Pruned full-row-rank rows `Σ₁ V₁ᵀ`.
    pub a: DMatrix<f64>,
    /// Pruned targets `U₁ᵀ d`.
    pub rhs: DVector<f64>,
    pub u1: DMatrix<f64>,
    pub sigma1: DVector<f64>,
    pub v1: DMatrix<f64>,
    pub v2: DMatrix<f64>,
    /// Fixed coordinates `Σ₁⁻¹ U₁ᵀ d`.
    pub eta1: DVector<f64>,
}

/// Relative singular-value cutoff used to decide the numerical rank of `A`.
pub const RANK_TOL: f64 = 1e-10;

impl ConstraintSet {
    pub fn none(n_nodes: usize) -> Self {
        let m = 3 * n_nodes;
        Self {
            p: DMatrix::zeros(n_nodes, 0),
            d: DMatrix::zeros(3, 0),
            a_raw: DMatrix::zeros(0, m),
            d_raw: DVector::zeros(0),
            a: DMatrix::zeros(0, m),
            rhs: DVector::zeros(0),
            u1: DMatrix::zeros(0, 0),
            sigma1: DVector::zeros(0),
            v1: DMatrix::zeros(m, 0),
            v2: DMatrix::identity(m, m),
            eta1: DVector::zeros(0),
        }
    }

    /// Builds the set from raw rows, pruning redundant ones.
    pub fn from_rows(a_raw: DMatrix<f64>, d_raw: DVector<f64>) -> Result<Self, DynamicsError> {
        let (rows, m) = a_raw.shape();
        if d_raw.len() != rows || m % 3 != 0 {
            return Err(DynamicsError::Dimension(format!("constraint rows {rows}x{m} with {} targets", d_raw.len())));
        }
        let n_nodes = m / 3;
        let mut out = Self::none(n_nodes);
        if rows == 0 {
            return Ok(out);
        }
        // Pad to square so the SVD returns a full V.
        let size = rows.max(m);
        let mut padded = DMatrix::zeros(size, m);
        padded.view_mut((0, 0), (rows, m)).copy_from(&a_raw);
        let svd = padded.svd(true, true);
        let u = svd.u.expect("svd computed with u");
        let v_t = svd.v_t.expect("svd computed with v");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
        let smax = svd.singular_values[order[0]];
        let rank = order.iter().filter(|&&k| svd.singular_values[k] > RANK_TOL * smax).count();

        let sigma1 = DVector::from_iterator(rank, order[..rank].iter().map(|&k| svd.singular_values[k]));
        let v1 = DMatrix::from_fn(m, rank, |i, j| v_t[(order[j], i)]);
        let v2 = DMatrix::from_fn(m, m - rank, |i, j| v_t[(order[rank + j], i)]);
        let u1 = DMatrix::from_fn(rows, rank, |i, j| u[(i, order[j])]);
        let rhs = u1.transpose() * &d_raw;
        let eta1 = rhs.component_div(&sigma1);
        let a = DMatrix::from_diagonal(&sigma1) * v1.transpose();

        let consistency = (&a_raw * (&v1 * &eta1) - &d_raw).amax();
        if consistency > 1e-9 * (1.0 + d_raw.amax()) {
            return Err(DynamicsError::InconsistentConstraints { residual: consistency });
        }
        out.a_raw = a_raw;
        out.d_raw = d_raw;
        out.a = a;
        out.rhs = rhs;
        out.u1 = u1;
        out.sigma1 = sigma1;
        out.v1 = v1;
        out.v2 = v2;
        out.eta1 = eta1;
        Ok(out)
    }

    /// Joint coincidence, pins at nominal coordinates and, for planar
    /// structures, `y = 0` on every node.
    pub fn for_structure(s: &Structure, pins: &[Pin]) -> Result<Self, DynamicsError> {
        let n = s.topology.n_nodes();
        let mut p_cols: Vec<DVector<f64>> = Vec::new();
        let mut d_cols: Vec<[f64; 3]> = Vec::new();
        for group in &s.joints {
            for k in &group[1..] {
                let mut col = DVector::zeros(n);
                col[group[0]] = 1.0;
                col[*k] = -1.0;
                p_cols.push(col);
                d_cols.push([0.0; 3]);
            }
        }
        let mut axis_rows: Vec<(usize, usize, f64)> = Vec::new();
        for pin in pins {
            let node = s
                .point_node(pin.point)
                .ok_or_else(|| DynamicsError::Dimension(format!("pin on unused point {}", pin.point)))?;
            let axes = pin.axis_indices().map_err(|e| DynamicsError::Dimension(e.to_string()))?;
            let pos = s.points[pin.point];
            if axes.len() == 3 {
                let mut col = DVector::zeros(n);
                col[node] = 1.0;
                p_cols.push(col);
                d_cols.push([pos.x, pos.y, pos.z]);
            } else {
                for ax in axes {
                    axis_rows.push((node, ax, pos[ax]));
                }
            }
        }
        if s.planar {
            for node in 0..n {
                axis_rows.push((node, 1, 0.0));
            }
        }

        let c = p_cols.len();
        let p = DMatrix::from_fn(n, c, |i, j| p_cols[j][i]);
        let d = DMatrix::from_fn(3, c, |i, j| d_cols[j][i]);
        let rows = 3 * c + axis_rows.len();
        let mut a_raw = DMatrix::zeros(rows, 3 * n);
        let mut d_raw = DVector::zeros(rows);
        let mut r = 0;
        for j in 0..c {
            for ax in 0..3 {
                for i in 0..n {
                    a_raw[(r, ax * n + i)] = p[(i, j)];
                }
                d_raw[r] = d[(ax, j)];
                r += 1;
            }
        }
        for (node, ax, value) in axis_rows {
            a_raw[(r, ax * n + node)] = 1.0;
            d_raw[r] = value;
            r += 1;
        }
        let mut set = Self::from_rows(a_raw, d_raw)?;
        set.p = p;
        set.d = d;
        Ok(set)
    }

    /// Number of independent constraints.
    pub fn rank(&self) -> usize {
        self.sigma1.len()
    }

    /// Free coordinates `dim(η₂)`.
    pub fn dof(&self) -> usize {
        self.v2.ncols()
    }

    /// `‖A n − d‖∞` over the raw rows.
    pub fn residual(&self, n: &DVector<f64>) -> f64 {
        if self.a_raw.nrows() == 0 {
            return 0.0;
        }
        (&self.a_raw * n - &self.d_raw).amax()
    }

    /// Lagrange multipliers `ω` with `Aᵀ ω = f_c` for a force in the range of `Aᵀ`.
    pub fn multipliers(&self, f_c: &DVector<f64>) -> DVector<f64> {
        (self.v1.transpose() * f_c).component_div(&self.sigma1)
    }
}
