//! Backward reachability for the extended dynamics and the maximal
//! control-invariant subset of a constraint polytope.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::model::DataDrivenModel;

use super::polytope::{GeomError, Polytope};
use super::SUBSET_TOL;

/// One-step backward set: all extended states from which some admissible
/// input lands the successor inside `target`, intersected with `ambient`.
///
/// The lifted system `{(xi, u) : H A_e xi + H B_e u <= c, H_u u <= c_u}` is
/// projected onto the state block by eliminating the input coordinates
/// highest-index first, pruning redundant rows after every elimination.
pub fn pre_set(
    target: &Polytope,
    model: &DataDrivenModel,
    u_set: &Polytope,
    ambient: &Polytope,
    tol: f64,
) -> Result<Polytope, GeomError> {
    let n = model.dim();
    let m = model.m();
    if target.dim() != n || ambient.dim() != n {
        return Err(GeomError::ShapeMismatch(format!(
            "state sets must have dim {n}, got target {} and ambient {}",
            target.dim(),
            ambient.dim()
        )));
    }
    if u_set.dim() != m {
        return Err(GeomError::ShapeMismatch(format!(
            "input set must have dim {m}, got {}",
            u_set.dim()
        )));
    }
    if target.is_empty_set() || u_set.is_empty_set() || ambient.is_empty_set() {
        return Ok(Polytope::empty_set(n));
    }

    let tr = target.n_rows();
    let ur = u_set.n_rows();
    let mut lhs = DMatrix::zeros(tr + ur, n + m);
    let mut rhs = DVector::zeros(tr + ur);
    let ha = target.lhs() * model.a_e();
    let hb = target.lhs() * model.b_e();
    lhs.view_mut((0, 0), (tr, n)).copy_from(&ha);
    lhs.view_mut((0, n), (tr, m)).copy_from(&hb);
    rhs.rows_mut(0, tr).copy_from(target.rhs());
    lhs.view_mut((tr, n), (ur, m)).copy_from(u_set.lhs());
    rhs.rows_mut(tr, ur).copy_from(u_set.rhs());

    let mut lifted = Polytope::from_rows(lhs, rhs)?;
    for coord in (n..n + m).rev() {
        lifted = lifted.eliminate_variable(coord, tol)?;
    }
    lifted.intersect(ambient, tol)
}

/// Outcome of the invariant-set fixpoint iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvariantSetReport {
    /// Row-normalized halfspace description of the final set.
    pub set: Polytope,
    /// Iterations actually performed.
    pub iterations: usize,
    /// Whether the last two iterates agreed to within the subset tolerance.
    pub converged: bool,
    /// Row count per iterate, starting with the pruned seed set.
    pub row_counts: Vec<usize>,
}

/// Maximal control-invariant subset of `xi_set` under the extended
/// dynamics, by iterating `S <- pre(S) /\ S` to a fixpoint.
///
/// Errors with [`GeomError::EmptyResult`] when an iterate empties out: the
/// constraint set then admits no invariant subset reachable this way. A
/// clean `max_iter` exhaustion is not an error; the report says
/// `converged: false` and carries the last iterate.
pub fn invariant_set(
    model: &DataDrivenModel,
    u_set: &Polytope,
    xi_set: &Polytope,
    max_iter: usize,
    tol: f64,
) -> Result<InvariantSetReport, GeomError> {
    let mut current = xi_set.remove_redundancy(tol)?;
    if current.is_empty_set() {
        return Err(GeomError::EmptyResult);
    }
    let mut row_counts = vec![current.n_rows()];
    for iteration in 1..=max_iter {
        let next = pre_set(&current, model, u_set, &current, tol)?;
        if next.is_empty_set() {
            return Err(GeomError::EmptyResult);
        }
        row_counts.push(next.n_rows());
        // next <= current holds by construction; the reverse inclusion is
        // the fixpoint test. Both directions are checked to keep the
        // certificate independent of that reasoning.
        let fixed =
            next.is_subset(&current, SUBSET_TOL)? && current.is_subset(&next, SUBSET_TOL)?;
        if fixed {
            return Ok(InvariantSetReport {
                set: next.normalize_rows()?,
                iterations: iteration,
                converged: true,
                row_counts,
            });
        }
        current = next;
    }
    Ok(InvariantSetReport {
        set: current.normalize_rows()?,
        iterations: max_iter,
        converged: false,
        row_counts,
    })
}
