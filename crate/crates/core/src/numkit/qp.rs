//! Primal active-set method for strictly convex quadratic programs.
//!
//! `min 0.5 z'Qz + q'z  s.t.  A z <= b` with Q positive definite on the
//! feasible affine hull. The starting point is the Chebyshev center of the
//! constraint system, so infeasibility is detected before any QP iteration
//! runs. Blocking constraints are added one at a time; a constraint leaves
//! the working set when its multiplier goes negative. Deterministic
//! tie-breaking throughout (lowest row index wins).

use nalgebra::{DMatrix, DVector};

use super::support::{chebyshev_center, Chebyshev};
use super::SolveStatus;

const STEP_TOL: f64 = 1e-12;
const ACT_TOL: f64 = 1e-9;
const MULT_TOL: f64 = 1e-9;
/// Dependence gates, all relative to the candidate row's norm, ordered
/// `ADOPT_REL > BLOCK_REL > DEFECT_REL`. Initial adoption is pickiest: two
/// near-parallel rows in the working set make the multipliers meaningless.
/// A blocking row only enters when its directional derivative clears
/// `BLOCK_REL`, which lower-bounds its residual against the working span,
/// so anything adopted mid-iteration survives the `DEFECT_REL` gate in the
/// step computation by a factor of ten. Breaking this ordering reopens an
/// adopt-defect cycle. `BLOCK_REL` also caps feasibility drift: a skipped
/// row can be crossed by at most the gate times the path length, and a
/// controller resolving on the returned points ratchets that error
/// outward, so the gate stays at rounding scale.
const ADOPT_REL: f64 = 1e-7;
const BLOCK_REL: f64 = 1e-12;
const DEFECT_REL: f64 = 1e-13;
/// Ceiling on `multiplier * slack` per working row at termination,
/// relative to the objective scale. Start-tolerance adoption can hold a
/// row the iterate never touched; its multiplier certifies nothing.
const COMP_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct QpProblem {
    /// Symmetric PSD quadratic term of `0.5 z' quad z + lin' z`.
    pub quad: DMatrix<f64>,
    pub lin: DVector<f64>,
    /// Rows of `ineq_lhs * z <= ineq_rhs`.
    pub ineq_lhs: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
    /// Optional `(lower, upper)` per variable; infinities mark absent sides.
    pub bounds: Option<Vec<(f64, f64)>>,
}

impl QpProblem {
    pub fn new(
        quad: DMatrix<f64>,
        lin: DVector<f64>,
        ineq_lhs: DMatrix<f64>,
        ineq_rhs: DVector<f64>,
    ) -> Self {
        Self {
            quad,
            lin,
            ineq_lhs,
            ineq_rhs,
            bounds: None,
        }
    }

    pub fn with_bounds(mut self, bounds: Vec<(f64, f64)>) -> Self {
        self.bounds = Some(bounds);
        self
    }

    fn check_shapes(&self) {
        let n = self.lin.len();
        assert_eq!(self.quad.nrows(), n, "quadratic term must be n x n");
        assert_eq!(self.quad.ncols(), n, "quadratic term must be n x n");
        assert_eq!(
            self.ineq_lhs.ncols(),
            n,
            "constraint columns must match variables"
        );
        assert_eq!(
            self.ineq_lhs.nrows(),
            self.ineq_rhs.len(),
            "rows must match rhs"
        );
        if let Some(b) = &self.bounds {
            assert_eq!(b.len(), n, "one bound pair per variable");
        }
    }

    fn canonical_rows(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.lin.len();
        let mut extra: Vec<(usize, f64, f64)> = Vec::new();
        if let Some(bounds) = &self.bounds {
            for (j, &(lo, hi)) in bounds.iter().enumerate() {
                if hi.is_finite() {
                    extra.push((j, 1.0, hi));
                }
                if lo.is_finite() {
                    extra.push((j, -1.0, -lo));
                }
            }
        }
        let m0 = self.ineq_lhs.nrows();
        let mut lhs = DMatrix::<f64>::zeros(m0 + extra.len(), n);
        let mut rhs = DVector::<f64>::zeros(m0 + extra.len());
        lhs.view_mut((0, 0), (m0, n)).copy_from(&self.ineq_lhs);
        rhs.rows_mut(0, m0).copy_from(&self.ineq_rhs);
        for (k, &(j, sign, r)) in extra.iter().enumerate() {
            lhs[(m0 + k, j)] = sign;
            rhs[m0 + k] = r;
        }
        (lhs, rhs)
    }
}

pub fn solve_qp(p: &QpProblem) -> SolveStatus {
    p.check_shapes();
    let n = p.lin.len();
    // Guard against mild asymmetry from accumulated arithmetic.
    let q = (&p.quad + p.quad.transpose()) * 0.5;
    let (a, b) = p.canonical_rows();
    let m = a.nrows();

    let mut z = match feasible_start(&a, &b, n) {
        Some(z0) => z0,
        None => return SolveStatus::Infeasible,
    };

    // Working set: active, linearly independent rows at the start point.
    // Activity is a distance test (residual per unit row norm), so rows
    // whose coefficients are numerical dust are never treated as active no
    // matter how small their slack looks.
    let mut working: Vec<usize> = Vec::new();
    for i in 0..m {
        if working.len() == n {
            break;
        }
        let resid = b[i] - (a.row(i) * &z)[0];
        let scale = a.row(i).norm() + b[i].abs();
        if resid.abs() <= ACT_TOL * scale && independent(&a, &working, i) {
            working.push(i);
        }
    }

    let max_iter = 100 + 10 * (m + n);
    for _ in 0..max_iter {
        // Equality-constrained step on the current working set, computed in
        // the set's null space. A saddle-system solve is not an option here:
        // with badly scaled quadratics its rounding noise in `d` exceeds any
        // sensible stationarity tolerance, while the null-space step is
        // exactly zero once the working set pins every variable.
        let grad = &q * &z + &p.lin;
        let (d, mu) = match working_step(&q, &grad, &a, &working) {
            WorkingStep::Step { d, mu } => (d, mu),
            // A working row collapsed into the span of the others; drop it
            // and recompute. Dropping is always legal here and the row can
            // only re-enter through a strictly positive blocking step.
            WorkingStep::Defect { position } => {
                working.remove(position);
                continue;
            }
            WorkingStep::Failed => return SolveStatus::NumericalFailure,
        };

        if d.amax() <= STEP_TOL * (1.0 + z.amax()) {
            // Stationary on the working set; check multiplier signs.
            let mut drop_idx: Option<usize> = None;
            let mut most_negative = -MULT_TOL;
            for (r, &row) in working.iter().enumerate() {
                if mu[r] < most_negative {
                    most_negative = mu[r];
                    drop_idx = Some(r);
                } else if drop_idx.is_some()
                    && mu[r] == most_negative
                    && row < working[drop_idx.unwrap()]
                {
                    drop_idx = Some(r);
                }
            }
            match drop_idx {
                None => {
                    let objective = 0.5 * (&q * &z).dot(&z) + p.lin.dot(&z);
                    // Complementarity repair: a start-tolerance row the
                    // iterate never landed on has positive slack, and its
                    // multiplier certifies nothing there. Shed the worst
                    // offender and keep going; rows re-entering through a
                    // blocking step land on their boundary, so each can
                    // fire at most once.
                    let mut shed: Option<(usize, f64)> = None;
                    for (r, &row) in working.iter().enumerate() {
                        let slack = (b[row] - (a.row(row) * &z)[0]).max(0.0);
                        let gap = mu[r].max(0.0) * slack;
                        if gap > COMP_TOL * (1.0 + objective.abs())
                            && shed.is_none_or(|(_, g)| gap > g)
                        {
                            shed = Some((r, gap));
                        }
                    }
                    match shed {
                        Some((r, _)) => {
                            working.remove(r);
                        }
                        None => {
                            return SolveStatus::Optimal {
                                solution: z,
                                objective,
                            }
                        }
                    }
                }
                Some(r) => {
                    working.remove(r);
                }
            }
        } else {
            // Step until the first blocking constraint outside the set. The
            // ratio test ignores rows nearly dependent on the working span
            // (directional derivative below the gate): they cannot block a
            // direction that is tangent to them up to noise, and skipping
            // them caps any crossing at gate level while keeping them
            // adoptable the moment they become genuinely independent.
            let d_norm = d.norm();
            let mut alpha = 1.0f64;
            let mut blocker: Option<usize> = None;
            for i in 0..m {
                if working.contains(&i) {
                    continue;
                }
                let gd = (a.row(i) * &d)[0];
                if gd > BLOCK_REL * a.row(i).norm() * d_norm {
                    let slack = (b[i] - (a.row(i) * &z)[0]).max(0.0);
                    let step = slack / gd;
                    if step < alpha - 1e-15 {
                        alpha = step;
                        blocker = Some(i);
                    }
                }
            }
            z += &d * alpha;
            if let Some(i) = blocker {
                // Clearing the ratio gate lower-bounds the blocker's
                // residual against the working span, so it both extends the
                // span and survives the step factorization.
                working.push(i);
                working.sort_unstable();
            }
        }
    }
    SolveStatus::NumericalFailure
}

enum WorkingStep {
    Step {
        d: DVector<f64>,
        mu: DVector<f64>,
    },
    /// Working row at this position is (numerically) in the span of its
    /// predecessors and must be dropped.
    Defect {
        position: usize,
    },
    Failed,
}

/// Direction and multipliers for the equality-constrained subproblem on the
/// working rows. The rows are orthonormalized and the basis completed with
/// coordinate vectors; the step solves the reduced Hessian system on the
/// complement, so `a_w d = 0` holds to machine precision regardless of the
/// quadratic's scaling. Multipliers come from back-substitution on the
/// triangle of the same orthonormalization, never from the gram matrix:
/// the gram squares the conditioning of a barely independent pair, and its
/// factorization can fail (or worse, succeed with garbage) exactly when the
/// multipliers matter most.
fn working_step(
    q: &DMatrix<f64>,
    grad: &DVector<f64>,
    a: &DMatrix<f64>,
    working: &[usize],
) -> WorkingStep {
    let n = grad.len();
    let k = working.len();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(n);
    // Triangle of the factorization: column `i` holds the coefficients of
    // working row `i` in the orthonormal vectors built before it, with the
    // leftover norm on the diagonal.
    let mut tri = DMatrix::<f64>::zeros(k, k);
    for (position, &i) in working.iter().enumerate() {
        let mut v = a.row(i).transpose();
        for _ in 0..2 {
            for (j, b) in basis.iter().enumerate() {
                let c = b.dot(&v);
                v -= b * c;
                tri[(j, position)] += c;
            }
        }
        let norm = v.norm();
        if norm <= DEFECT_REL * a.row(i).norm() {
            return WorkingStep::Defect { position };
        }
        tri[(position, position)] = norm;
        basis.push(v / norm);
    }
    let mut complement: Vec<DVector<f64>> = Vec::with_capacity(n - k);
    for j in 0..n {
        if basis.len() == n {
            break;
        }
        let mut v = DVector::<f64>::zeros(n);
        v[j] = 1.0;
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&v);
                v -= b * c;
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            let unit = v / norm;
            basis.push(unit.clone());
            complement.push(unit);
        }
    }
    if basis.len() != n {
        return WorkingStep::Failed;
    }
    let d = if complement.is_empty() {
        DVector::zeros(n)
    } else {
        let zmat = DMatrix::from_columns(&complement);
        let reduced = zmat.transpose() * q * &zmat;
        let rhs = -(zmat.transpose() * grad);
        let solved = match reduced.clone().cholesky() {
            Some(chol) => Some(chol.solve(&rhs)),
            None => reduced.full_piv_lu().solve(&rhs),
        };
        let Some(w) = solved else {
            return WorkingStep::Failed;
        };
        &zmat * w
    };
    // Least-squares multipliers for `a_w' mu = -(grad + q d)` via the
    // triangle; its diagonal is bounded below by the defect gate, so this
    // cannot break down.
    let mu = if k == 0 {
        DVector::zeros(0)
    } else {
        let target = -(grad + q * &d);
        let mut mu = DVector::<f64>::zeros(k);
        for j in (0..k).rev() {
            let mut s = basis[j].dot(&target);
            for i in j + 1..k {
                s -= tri[(j, i)] * mu[i];
            }
            mu[j] = s / tri[(j, j)];
        }
        mu
    };
    WorkingStep::Step { d, mu }
}

/// Interior-ish start from the Chebyshev center.
fn feasible_start(a: &DMatrix<f64>, b: &DVector<f64>, n: usize) -> Option<DVector<f64>> {
    if a.nrows() == 0 {
        return Some(DVector::zeros(n));
    }
    match chebyshev_center(a, b) {
        Chebyshev::Center { center, .. } => {
            // The center can sit on the boundary for degenerate systems;
            // nudge residual violations inside tolerance.
            let viol = (a * &center - b).max();
            if viol > super::FEAS_TOL {
                None
            } else {
                Some(center)
            }
        }
        Chebyshev::Empty => None,
    }
}

fn independent(a: &DMatrix<f64>, working: &[usize], candidate: usize) -> bool {
    // Same two-pass orthogonalization as `working_step` but with the
    // pickier `ADOPT_REL` gate, so anything adopted here clears the defect
    // gate there by three orders of magnitude. The check covers the
    // candidate alone as well: a (near-)zero row must never enter the
    // working set.
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(working.len() + 1);
    for &i in working.iter().chain(std::iter::once(&candidate)) {
        let mut v = a.row(i).transpose();
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&v);
                v -= b * c;
            }
        }
        let norm = v.norm();
        if norm <= ADOPT_REL * a.row(i).norm() {
            return false;
        }
        basis.push(v / norm);
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn scalar_parabola_clipped_by_upper_bound() {
        // min (z - 3)^2 s.t. z <= 1: quad 2, lin -6.
        let p = QpProblem::new(dmatrix![2.0], dvector![-6.0], dmatrix![1.0], dvector![1.0]);
        match solve_qp(&p) {
            SolveStatus::Optimal { solution, .. } => assert!((solution[0] - 1.0).abs() < 1e-8),
            other => panic!("expected optimal, got {other:?}"),
        }
    }

    #[test]
    fn unconstrained_minimum_inside_the_box_is_untouched() {
        // min ||z - (0.2, -0.3)||^2 over the unit box.
        let p = QpProblem::new(
            DMatrix::identity(2, 2) * 2.0,
            dvector![-0.4, 0.6],
            dmatrix![1.0, 0.0; -1.0, 0.0; 0.0, 1.0; 0.0, -1.0],
            dvector![1.0, 1.0, 1.0, 1.0],
        );
        match solve_qp(&p) {
            SolveStatus::Optimal { solution, .. } => {
                assert!((solution[0] - 0.2).abs() < 1e-9);
                assert!((solution[1] + 0.3).abs() < 1e-9);
            }
            other => panic!("expected optimal, got {other:?}"),
        }
    }

    #[test]
    fn projection_onto_a_corner() {
        // Target (2, 2) projects onto the box corner (1, 1).
        let p = QpProblem::new(
            DMatrix::identity(2, 2) * 2.0,
            dvector![-4.0, -4.0],
            dmatrix![1.0, 0.0; -1.0, 0.0; 0.0, 1.0; 0.0, -1.0],
            dvector![1.0, 1.0, 1.0, 1.0],
        );
        match solve_qp(&p) {
            SolveStatus::Optimal { solution, .. } => {
                assert!((solution - dvector![1.0, 1.0]).amax() < 1e-8);
            }
            other => panic!("expected optimal, got {other:?}"),
        }
    }

    #[test]
    fn inconsistent_rows_are_infeasible() {
        let p = QpProblem::new(
            dmatrix![2.0],
            dvector![0.0],
            dmatrix![1.0; -1.0],
            dvector![-1.0, 0.0],
        );
        assert_eq!(solve_qp(&p), SolveStatus::Infeasible);
    }

    #[test]
    fn equality_pinned_variable() {
        // z <= 1 and -z <= -1 pin z = 1; minimize (z + 1)^2 anyway.
        let p = QpProblem::new(
            dmatrix![2.0],
            dvector![2.0],
            dmatrix![1.0; -1.0],
            dvector![1.0, -1.0],
        );
        match solve_qp(&p) {
            SolveStatus::Optimal { solution, .. } => assert!((solution[0] - 1.0).abs() < 1e-8),
            other => panic!("expected optimal, got {other:?}"),
        }
    }

    #[test]
    fn bounds_and_rows_combine() {
        // min (x+2)^2 + (y-5)^2 with x in [0, 4], y in [0, 4], x + y <= 6.
        let p = QpProblem::new(
            DMatrix::identity(2, 2) * 2.0,
            dvector![4.0, -10.0],
            dmatrix![1.0, 1.0],
            dvector![6.0],
        )
        .with_bounds(vec![(0.0, 4.0), (0.0, 4.0)]);
        match solve_qp(&p) {
            SolveStatus::Optimal { solution, .. } => {
                assert!((solution[0] - 0.0).abs() < 1e-8);
                assert!((solution[1] - 4.0).abs() < 1e-8);
            }
            other => panic!("expected optimal, got {other:?}"),
        }
    }

    #[test]
    fn zero_rows_are_ignored_not_adopted() {
        // A vacuous row active at the start point must stay out of the
        // working set; it used to make the first KKT system singular.
        let p = QpProblem::new(
            dmatrix![2.0],
            dvector![-6.0],
            dmatrix![0.0; 1.0; -1.0],
            dvector![0.0, 1.0, 1.0],
        );
        match solve_qp(&p) {
            SolveStatus::Optimal { solution, .. } => assert!((solution[0] - 1.0).abs() < 1e-8),
            other => panic!("expected optimal, got {other:?}"),
        }
        // Same geometry with an impossible vacuous row.
        let bad = QpProblem::new(
            dmatrix![2.0],
            dvector![-6.0],
            dmatrix![0.0; 1.0; -1.0],
            dvector![-0.5, 1.0, 1.0],
        );
        assert_eq!(solve_qp(&bad), SolveStatus::Infeasible);
    }

    #[test]
    fn dust_rows_and_sliver_gaps_solve_cleanly() {
        // Badly scaled projection QP from a boundary state: one row is
        // numerical dust with a small right-hand side (tiny residual, huge
        // geometric distance), and two near-parallel rows pin the first
        // variable into a 7e-14 sliver. The dust row used to pass the
        // residual activity test, get adopted, and poison the step basis.
        let quad = dmatrix![2.0, 0.0; 0.0, 2.0e6];
        let lin = dvector![2.6, 0.0];
        let lhs = dmatrix![
            0.0, -5.0e-15;
            8.07241902058899e-3, -5.0e-15;
            -1.0, -5.0e-15;
            0.0, 1.0;
            0.0, -1.0
        ];
        let rhs = dvector![9.55e-10, -8.072419020588445e-3, 1.0 - 5.0e-15, 1.0, -0.1];
        match solve_qp(&QpProblem::new(quad, lin, lhs, rhs)) {
            SolveStatus::Optimal { solution, .. } => {
                assert!(solution[0] <= -0.9999999999999 && solution[0] >= -1.0 - 1e-12);
                assert!((solution[1] - 0.1).abs() < 1e-9);
            }
            other => panic!("expected optimal, got {other:?}"),
        }
    }

    #[test]
    fn near_parallel_active_pair_converges_to_the_true_minimum() {
        // Boundary-riding projection QP: the Chebyshev start sits within
        // activity tolerance of two rows that are antiparallel up to a
        // relative angle of ~4e-9. Adopting both used to make the gram
        // matrix numerically singular, and on the slightly luckier path a
        // gram solve returns multipliers that certify the start point as
        // optimal with the second variable parked at its upper wall
        // (objective ~1e6). The true minimum sits at the lower wall.
        let h = 3.583600083345573e-11;
        let quad = dmatrix![2.0, 0.0; 0.0, 2.0e6];
        let lin = dvector![1.3274834343101265, 0.0];
        let lhs = dmatrix![
            1.0, -h;
            -1.0069278126654339e-2, -h;
            0.0, 1.0;
            0.0, -1.0
        ];
        let rhs = dvector![0.99999999996416, -1.0069278124404751e-2, 1.0, -0.1];
        match solve_qp(&QpProblem::new(quad, lin, lhs, rhs)) {
            SolveStatus::Optimal {
                solution,
                objective,
            } => {
                assert!((solution[0] - 0.999999999420694).abs() < 1e-10);
                assert!((solution[1] - 0.1).abs() < 1e-9);
                assert!(objective < 2.0e4);
            }
            other => panic!("expected optimal, got {other:?}"),
        }
    }

    #[test]
    fn repeated_solves_are_bit_identical() {
        let p = QpProblem::new(
            dmatrix![2.0, 0.3; 0.3, 4.0],
            dvector![-1.0, 0.7],
            dmatrix![1.0, 2.0; -1.0, 0.5; 0.3, -1.0],
            dvector![1.0, 0.8, 0.6],
        );
        let (s1, s2) = (solve_qp(&p), solve_qp(&p));
        let (z1, z2) = (s1.solution().unwrap(), s2.solution().unwrap());
        for (a, b) in z1.iter().zip(z2.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
