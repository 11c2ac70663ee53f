use nalgebra::{DMatrix, DVector};

/// Stacks the rows of a `3 × n` matrix: `[x-row; y-row; z-row]`.
pub fn vectorize(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.transpose().as_slice())
}

/// Inverse of [`vectorize`] for `3 × n_nodes` matrices.
pub fn devectorize(v: &DVector<f64>, n_nodes: usize) -> DMatrix<f64> {
    assert_eq!(v.len(), 3 * n_nodes, "vector length is not 3 * n_nodes");
    DMatrix::from_row_slice(3, n_nodes, v.as_slice())
}

/// `I₃ ⊗ m`.
pub fn kron_eye3(m: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::<f64>::identity(3, 3).kronecker(m)
}
