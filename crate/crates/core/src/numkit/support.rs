//! Support functions `max d'x  s.t.  H x <= c` solved through the LP dual.
//!
//! Polytope work produces exactly this shape over and over: a handful of
//! dimensions, hundreds or thousands of rows. The dual
//! `min c'y  s.t.  H'y = d, y >= 0` has one equality row per dimension, so
//! the tableau stays `dim x rows` no matter how many half-spaces pile up.
//! The maximizer is recovered from the equality multipliers at the optimum.

use nalgebra::{DMatrix, DVector};

const RC_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub enum SupportOutcome {
    /// Finite support value together with a maximizing point.
    Bounded { value: f64, point: DVector<f64> },
    /// The objective grows without bound over the feasible set.
    ///
    /// Reported when the dual is infeasible, which for a nonempty primal
    /// means unbounded. Callers must establish nonemptiness separately.
    Unbounded,
    /// The constraint system has no feasible point.
    Empty,
}

/// Maximize `dir' x` over `{x : lhs x <= rhs}`.
pub fn support_function(
    lhs: &DMatrix<f64>,
    rhs: &DVector<f64>,
    dir: &DVector<f64>,
) -> SupportOutcome {
    let n = dir.len();
    let m = lhs.nrows();
    assert_eq!(lhs.ncols(), n, "direction length must match columns");
    assert_eq!(rhs.len(), m, "rhs length must match rows");

    // Dual tableau: n equality rows, columns = m duals + n artificials + rhs.
    let total = m + n;
    let mut rows = vec![vec![0.0; total + 1]; n];
    let mut basis = vec![0usize; n];
    for i in 0..n {
        let flip = if dir[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..m {
            rows[i][j] = flip * lhs[(j, i)];
        }
        rows[i][m + i] = 1.0;
        rows[i][total] = flip * dir[i];
        basis[i] = m + i;
    }

    // Phase 1: drive out the artificials.
    let art_cost = |j: usize| if j >= m { 1.0 } else { 0.0 };
    if run(&mut rows, &mut basis, total, n, &art_cost, total).is_none() {
        return SupportOutcome::Unbounded; // phase 1 cannot be unbounded; treated as failure below
    }
    let resid: f64 = (0..n)
        .filter(|&i| basis[i] >= m)
        .map(|i| rows[i][total])
        .sum();
    if resid > 1e-8 * (1.0 + dir.amax()) {
        // Dual infeasible: `dir` is outside the cone spanned by the rows.
        return SupportOutcome::Unbounded;
    }
    // Basic artificials stuck at zero are pivoted out when possible; a row
    // with no eligible pivot is a dependent equality and stays parked.
    for i in 0..n {
        if basis[i] >= m {
            if let Some(pc) = (0..m).find(|&j| rows[i][j].abs() > PIVOT_TOL) {
                pivot(&mut rows, &mut basis, total, i, pc);
            }
        }
    }

    // Phase 2: minimize c'y, artificial columns banned.
    let cost = |j: usize| if j < m { rhs[j] } else { 0.0 };
    match run(&mut rows, &mut basis, total, n, &cost, m) {
        Some(()) => {}
        None => return SupportOutcome::Empty, // dual unbounded below => primal infeasible
    }

    // Optimal: value from the dual objective, maximizer from the equality
    // multipliers, solved against the original (unflipped) columns.
    let value: f64 = (0..n)
        .filter(|&i| basis[i] < m)
        .map(|i| rhs[basis[i]] * rows[i][total])
        .sum();
    let mut bt = DMatrix::<f64>::zeros(n, n);
    let mut cb = DVector::<f64>::zeros(n);
    for (a, &bcol) in basis.iter().enumerate() {
        cb[a] = cost(bcol);
        for r in 0..n {
            bt[(a, r)] = if bcol < m { lhs[(bcol, r)] } else { 0.0 };
        }
        if bcol >= m {
            // Parked artificial of a dependent equality: its unit column.
            bt[(a, bcol - m)] = 1.0;
        }
    }
    match bt.lu().solve(&cb) {
        Some(point) => SupportOutcome::Bounded { value, point },
        None => SupportOutcome::Unbounded,
    }
}

/// Bland-rule simplex loop for the dual tableau. Returns `None` on an
/// unbounded phase objective or iteration overrun.
fn run(
    rows: &mut [Vec<f64>],
    basis: &mut [usize],
    total: usize,
    n: usize,
    cost: &dyn Fn(usize) -> f64,
    allowed: usize,
) -> Option<()> {
    let mut rc: Vec<f64> = (0..total).map(cost).collect();
    for i in 0..n {
        let cb = cost(basis[i]);
        if cb != 0.0 {
            for (r, &v) in rc.iter_mut().zip(&rows[i]) {
                *r -= cb * v;
            }
        }
    }
    let max_iter = 200 + 40 * (n + total);
    for _ in 0..max_iter {
        let Some(pc) = (0..allowed).find(|&j| rc[j] < -RC_TOL) else {
            return Some(());
        };
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            let coef = rows[i][pc];
            if coef > PIVOT_TOL {
                let ratio = rows[i][total] / coef;
                let cand = (ratio, basis[i], i);
                best = match best {
                    None => Some(cand),
                    Some(cur) => {
                        if ratio < cur.0 - 1e-12 || (ratio < cur.0 + 1e-12 && cand.1 < cur.1) {
                            Some(cand)
                        } else {
                            Some(cur)
                        }
                    }
                };
            }
        }
        let (_, _, pr) = best?;
        let factor = rc[pc];
        pivot(rows, basis, total, pr, pc);
        for (r, &v) in rc.iter_mut().zip(&rows[pr]) {
            *r -= factor * v;
        }
        rc[pc] = 0.0;
    }
    None
}

fn pivot(rows: &mut [Vec<f64>], basis: &mut [usize], total: usize, pr: usize, pc: usize) {
    let inv = 1.0 / rows[pr][pc];
    for v in &mut rows[pr][..=total] {
        *v *= inv;
    }
    let pivot_row = rows[pr][..=total].to_vec();
    for (i, row) in rows.iter_mut().enumerate() {
        if i == pr {
            continue;
        }
        let f = row[pc];
        if f != 0.0 {
            for (v, &p) in row.iter_mut().zip(&pivot_row) {
                *v -= f * p;
            }
        }
    }
    basis[pr] = pc;
}

/// Largest inscribed ball of `{x : lhs x <= rhs}`.
#[derive(Debug, Clone)]
pub enum Chebyshev {
    Center { center: DVector<f64>, radius: f64 },
    Empty,
}

/// Radius cap making the Chebyshev program bounded even for cones and slabs.
const RADIUS_CAP: f64 = 1e7;

/// Chebyshev center via one support-function call in `(x, r)` space.
///
/// Rows of zero norm are screened first: a negative right-hand side on one
/// is an explicit contradiction. For unbounded sets the reported radius
/// saturates at `RADIUS_CAP`; the center is still a valid interior point.
pub fn chebyshev_center(lhs: &DMatrix<f64>, rhs: &DVector<f64>) -> Chebyshev {
    let n = lhs.ncols();
    let m = lhs.nrows();
    let mut keep: Vec<usize> = Vec::with_capacity(m);
    for i in 0..m {
        let norm = lhs.row(i).norm();
        if norm <= 1e-12 {
            if rhs[i] < -1e-9 {
                return Chebyshev::Empty;
            }
        } else {
            keep.push(i);
        }
    }

    // Lifted rows [h_i, |h_i|] (x, r) <= c_i, plus |x_j| <= CAP and r <= CAP.
    let total_rows = keep.len() + 2 * n + 1;
    let mut a = DMatrix::<f64>::zeros(total_rows, n + 1);
    let mut b = DVector::<f64>::zeros(total_rows);
    for (k, &i) in keep.iter().enumerate() {
        for j in 0..n {
            a[(k, j)] = lhs[(i, j)];
        }
        a[(k, n)] = lhs.row(i).norm();
        b[k] = rhs[i];
    }
    for j in 0..n {
        a[(keep.len() + 2 * j, j)] = 1.0;
        b[keep.len() + 2 * j] = RADIUS_CAP;
        a[(keep.len() + 2 * j + 1, j)] = -1.0;
        b[keep.len() + 2 * j + 1] = RADIUS_CAP;
    }
    a[(total_rows - 1, n)] = 1.0;
    b[total_rows - 1] = RADIUS_CAP;

    let mut dir = DVector::<f64>::zeros(n + 1);
    dir[n] = 1.0;
    match support_function(&a, &b, &dir) {
        SupportOutcome::Bounded { point, .. } => {
            let radius = point[n];
            if radius < -1e-9 {
                Chebyshev::Empty
            } else {
                Chebyshev::Center {
                    center: point.rows(0, n).into_owned(),
                    radius,
                }
            }
        }
        // The lifted system always admits (0, r) for r negative enough, and
        // the cap bounds it above; anything else is numerical failure, which
        // we surface as emptiness only if the screen above missed nothing.
        SupportOutcome::Unbounded | SupportOutcome::Empty => Chebyshev::Empty,
    }
}
