use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("least-squares residual {relative:.3e} exceeds bound {bound:.3e}")]
    ResidualTooLarge { relative: f64, bound: f64 },
}

/// Relative residual bound accepted by [`min_norm_solve`].
pub const MIN_NORM_REL_TOL: f64 = 1e-9;

/// Number of singular values above `tol`.
///
/// With `tol = None` the usual default is used: `max(nrows, ncols) * eps *
/// sigma_max`. The zero matrix has rank 0 under any tolerance.
pub fn numeric_rank(m: &DMatrix<f64>, tol: Option<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let sigma_max = sv.max();
    let tol = tol.unwrap_or_else(|| m.nrows().max(m.ncols()) as f64 * f64::EPSILON * sigma_max);
    sv.iter().filter(|&&s| s > tol).count()
}

/// Minimum-Frobenius-norm solution `r` of `r * w = target`.
///
/// Computed through the pseudoinverse, so `r = target * pinv(w)`; among all
/// exact solutions this is the one of smallest Frobenius norm. Errors with
/// [`NumError::ResidualTooLarge`] when no `r` reproduces `target` to within
/// `MIN_NORM_REL_TOL * ||target||_F`, which happens when `target` has
/// components outside the row space of `w`.
pub fn min_norm_solve(w: &DMatrix<f64>, target: &DMatrix<f64>) -> Result<DMatrix<f64>, NumError> {
    if w.ncols() != target.ncols() {
        return Err(NumError::ShapeMismatch(format!(
            "w has {} columns, target has {}",
            w.ncols(),
            target.ncols()
        )));
    }
    let svd = w.clone().svd(true, true);
    let sigma_max = if svd.singular_values.is_empty() {
        0.0
    } else {
        svd.singular_values.max()
    };
    let cut = w.nrows().max(w.ncols()) as f64 * f64::EPSILON * sigma_max;
    let pinv = svd
        .pseudo_inverse(cut)
        .map_err(|e| NumError::ShapeMismatch(e.to_string()))?;
    let r = target * pinv;

    let target_norm = target.norm();
    let residual = (&r * w - target).norm();
    let bound = MIN_NORM_REL_TOL * target_norm;
    if residual > bound {
        return Err(NumError::ResidualTooLarge {
            relative: if target_norm > 0.0 {
                residual / target_norm
            } else {
                residual
            },
            bound: MIN_NORM_REL_TOL,
        });
    }
    Ok(r)
}
