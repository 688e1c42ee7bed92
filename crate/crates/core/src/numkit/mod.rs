//! Dense numerical kernels: linear programming, strictly convex quadratic
//! programming, numerical rank, and minimum-norm least squares.
//!
//! Everything here is deterministic: fixed pivot rules, fixed tie-breaking,
//! no randomized preconditioning. Two calls with identical inputs produce
//! bit-identical outputs.

mod linalg;
mod lp;
mod qp;
mod support;

pub use linalg::{min_norm_solve, numeric_rank, NumError};
pub use lp::{solve_lp, solve_lp_certified, LpCertificate, LpProblem};
pub use qp::{solve_qp, QpProblem};
pub use support::{chebyshev_center, support_function, Chebyshev, SupportOutcome};

use nalgebra::DVector;

/// Primal feasibility tolerance shared by the LP and QP paths.
pub const FEAS_TOL: f64 = 1e-8;

/// Stationarity / complementary-slackness tolerance for optimality checks.
pub const KKT_TOL: f64 = 1e-6;

/// Outcome of an LP or QP solve. A solution is carried only by `Optimal`.
#[derive(Debug, Clone, PartialEq)]
pub enum SolveStatus {
    Optimal {
        solution: DVector<f64>,
        objective: f64,
    },
    Infeasible,
    Unbounded,
    NumericalFailure,
}

impl SolveStatus {
    pub fn is_optimal(&self) -> bool {
        matches!(self, SolveStatus::Optimal { .. })
    }

    /// The optimal point, if the solve succeeded.
    pub fn solution(&self) -> Option<&DVector<f64>> {
        match self {
            SolveStatus::Optimal { solution, .. } => Some(solution),
            _ => None,
        }
    }

    pub fn objective(&self) -> Option<f64> {
        match self {
            SolveStatus::Optimal { objective, .. } => Some(*objective),
            _ => None,
        }
    }

    pub fn kind_str(&self) -> &'static str {
        match self {
            SolveStatus::Optimal { .. } => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::NumericalFailure => "numerical_failure",
        }
    }
}
