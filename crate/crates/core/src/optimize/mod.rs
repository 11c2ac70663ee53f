//! In-house solvers: nonnegative LP (revised simplex), NNLS (Lawson–Hanson)
//! and a small dense SDP interior-point method.

pub mod lmi;
pub mod lp;
pub mod nnls;
pub mod sdp;

use nalgebra::DMatrix;
use thiserror::Error;

pub use lmi::{Affine, LmiBuilder, MatVar};
pub use lp::{solve_nonneg_lp, LpSolution, NonnegLp};
pub use nnls::{nnls_kkt_violation, solve_nnls, NnlsSolution};
pub use sdp::{solve_sdp, solve_sdp_with, LmiBlock, SdpOptions, SdpProblem, SdpSolution};

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("problem is infeasible (residual {residual:.3e})")]
    Infeasible { residual: f64 },
    #[error("semidefinite program is infeasible")]
    SdpInfeasible { certificate: Vec<DMatrix<f64>> },
    #[error("problem is unbounded")]
    Unbounded,
    #[error("iteration limit reached after {0} iterations")]
    MaxIterations(usize),
    #[error("ill-conditioned: {0}")]
    IllConditioned(String),
}

impl OptimizeError {
    pub fn is_infeasible(&self) -> bool {
        matches!(self, Self::Infeasible { .. } | Self::SdpInfeasible { .. })
    }
}
