//! Dense two-phase simplex for small linear programs.
//!
//! Problems arrive as `min c'z  s.t.  A z <= b` with optional box bounds.
//! Internally every variable is split into a nonnegative pair and each row
//! gets a slack, giving the standard form `min c'x, Ax = b, x >= 0` solved
//! with a full tableau. Bland's rule picks both the entering and the leaving
//! variable, so the method cannot cycle and is fully deterministic.

use nalgebra::{DMatrix, DVector};

use super::SolveStatus;

/// Reduced costs larger than `-RC_TOL` count as nonnegative.
const RC_TOL: f64 = 1e-9;
/// Smallest acceptable pivot element.
const PIVOT_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct LpProblem {
    /// Cost vector of `min objective' * z`.
    pub objective: DVector<f64>,
    /// Rows of `ineq_lhs * z <= ineq_rhs`.
    pub ineq_lhs: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
    /// Optional `(lower, upper)` per variable; infinities mark absent sides.
    pub bounds: Option<Vec<(f64, f64)>>,
}

impl LpProblem {
    pub fn new(objective: DVector<f64>, ineq_lhs: DMatrix<f64>, ineq_rhs: DVector<f64>) -> Self {
        Self {
            objective,
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
        assert_eq!(
            self.objective.len(),
            self.ineq_lhs.ncols(),
            "objective length must match constraint columns"
        );
        assert_eq!(
            self.ineq_lhs.nrows(),
            self.ineq_rhs.len(),
            "constraint rows must match rhs length"
        );
        if let Some(b) = &self.bounds {
            assert_eq!(b.len(), self.objective.len(), "one bound pair per variable");
        }
    }

    /// Bounds folded in as plain rows, in a fixed order: the original rows,
    /// then per variable the finite upper bound, then the finite lower bound.
    fn canonical_rows(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.objective.len();
        let mut extra: Vec<(usize, f64, f64)> = Vec::new(); // (var, sign, rhs)
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

/// Solve outcome plus, when available, the dual vector of the inequality
/// rows (nonnegative multipliers in `c + A' mu = 0` at the optimum).
#[derive(Debug, Clone)]
pub struct LpCertificate {
    pub status: SolveStatus,
    pub row_duals: Option<DVector<f64>>,
}

pub fn solve_lp(p: &LpProblem) -> SolveStatus {
    solve_lp_certified(p).status
}

/// Like [`solve_lp`] but also extracts the dual multipliers of the rows.
/// Duals are reported for the row system only, so the problem must not
/// carry separate bounds.
pub fn solve_lp_certified(p: &LpProblem) -> LpCertificate {
    p.check_shapes();
    let (a, b) = p.canonical_rows();
    let mut tab = Tableau::new(&a, &b, &p.objective);

    match tab.phase_one() {
        PhaseOutcome::Proceed => {}
        PhaseOutcome::Infeasible => {
            return LpCertificate {
                status: SolveStatus::Infeasible,
                row_duals: None,
            }
        }
        PhaseOutcome::Failure => {
            return LpCertificate {
                status: SolveStatus::NumericalFailure,
                row_duals: None,
            }
        }
    }
    match tab.phase_two() {
        PhaseOutcome::Proceed => {}
        PhaseOutcome::Infeasible => {
            return LpCertificate {
                status: SolveStatus::Unbounded,
                row_duals: None,
            }
        }
        PhaseOutcome::Failure => {
            return LpCertificate {
                status: SolveStatus::NumericalFailure,
                row_duals: None,
            }
        }
    }

    let z = tab.extract_solution();
    let objective = p.objective.dot(&z);
    let row_duals = if p.bounds.is_none() {
        tab.extract_duals()
            .map(|mu| mu.rows(0, p.ineq_lhs.nrows()).into_owned())
    } else {
        None
    };
    LpCertificate {
        status: SolveStatus::Optimal {
            solution: z,
            objective,
        },
        row_duals,
    }
}

enum PhaseOutcome {
    Proceed,
    /// Phase 1: problem infeasible. Phase 2: problem unbounded.
    Infeasible,
    Failure,
}

/// Full simplex tableau over the split standard form.
///
/// Column layout: `x+ (n) | x- (n) | slack (m) | artificial (k)`.
struct Tableau {
    n: usize,
    m: usize,
    n_art: usize,
    /// `m` constraint rows, each `total_cols + 1` wide (rhs last).
    rows: Vec<Vec<f64>>,
    live: Vec<bool>,
    basis: Vec<usize>,
    cost: DVector<f64>,
    /// Unflipped equality columns for dual recovery: structural then slack.
    eq: DMatrix<f64>,
}

impl Tableau {
    fn new(a: &DMatrix<f64>, b: &DVector<f64>, c: &DVector<f64>) -> Self {
        let m = a.nrows();
        let n = a.ncols();
        let negatives = b.iter().filter(|&&v| v < 0.0).count();
        let total = 2 * n + m + negatives;

        let mut rows = vec![vec![0.0; total + 1]; m];
        let mut basis = vec![0usize; m];
        let mut art = 0usize;
        for i in 0..m {
            let flip = if b[i] < 0.0 { -1.0 } else { 1.0 };
            for j in 0..n {
                rows[i][j] = flip * a[(i, j)];
                rows[i][n + j] = -flip * a[(i, j)];
            }
            rows[i][2 * n + i] = flip;
            rows[i][total] = flip * b[i];
            if flip < 0.0 {
                let col = 2 * n + m + art;
                rows[i][col] = 1.0;
                basis[i] = col;
                art += 1;
            } else {
                basis[i] = 2 * n + i;
            }
        }

        let mut eq = DMatrix::<f64>::zeros(m, 2 * n + m);
        eq.view_mut((0, 0), (m, n)).copy_from(a);
        eq.view_mut((0, n), (m, n)).copy_from(&(-a));
        for i in 0..m {
            eq[(i, 2 * n + i)] = 1.0;
        }

        Self {
            n,
            m,
            n_art: art,
            rows,
            live: vec![true; m],
            basis,
            cost: c.clone(),
            eq,
        }
    }

    fn total_cols(&self) -> usize {
        2 * self.n + self.m + self.n_art
    }

    fn phase_cost(&self, j: usize, phase_one: bool) -> f64 {
        if phase_one {
            if j >= 2 * self.n + self.m {
                1.0
            } else {
                0.0
            }
        } else if j < self.n {
            self.cost[j]
        } else if j < 2 * self.n {
            -self.cost[j - self.n]
        } else {
            0.0
        }
    }

    /// Reduced-cost row priced out against the current basis.
    fn reduced_costs(&self, phase_one: bool) -> Vec<f64> {
        let total = self.total_cols();
        let mut rc: Vec<f64> = (0..total).map(|j| self.phase_cost(j, phase_one)).collect();
        for i in 0..self.m {
            if !self.live[i] {
                continue;
            }
            let cb = self.phase_cost(self.basis[i], phase_one);
            if cb != 0.0 {
                for (r, &v) in rc.iter_mut().zip(&self.rows[i]) {
                    *r -= cb * v;
                }
            }
        }
        rc
    }

    fn objective_value(&self, phase_one: bool) -> f64 {
        let total = self.total_cols();
        (0..self.m)
            .filter(|&i| self.live[i])
            .map(|i| self.phase_cost(self.basis[i], phase_one) * self.rows[i][total])
            .sum()
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let total = self.total_cols();
        let inv = 1.0 / self.rows[pr][pc];
        for j in 0..=total {
            self.rows[pr][j] *= inv;
        }
        for i in 0..self.m {
            if i == pr || !self.live[i] {
                continue;
            }
            let f = self.rows[i][pc];
            if f != 0.0 {
                for j in 0..=total {
                    self.rows[i][j] -= f * self.rows[pr][j];
                }
            }
        }
        self.basis[pr] = pc;
    }

    /// Bland's rule iteration on the current phase objective. `allow`
    /// restricts entering columns.
    fn iterate(&mut self, phase_one: bool, mut rc: Vec<f64>) -> PhaseOutcome {
        let total = self.total_cols();
        let max_iter = 200 + 40 * (self.m + total);
        for _ in 0..max_iter {
            // Entering: smallest column index with negative reduced cost.
            let banned_from = if phase_one {
                total
            } else {
                2 * self.n + self.m
            };
            let entering = (0..banned_from).find(|&j| rc[j] < -RC_TOL);
            let Some(pc) = entering else {
                return PhaseOutcome::Proceed;
            };

            // Ratio test; ties broken by the smallest basis index (Bland).
            let mut best: Option<(f64, usize, usize)> = None; // (ratio, basis idx, row)
            for i in 0..self.m {
                if !self.live[i] {
                    continue;
                }
                let coef = self.rows[i][pc];
                if coef > PIVOT_TOL {
                    let ratio = self.rows[i][total] / coef;
                    let candidate = (ratio, self.basis[i], i);
                    best = match best {
                        None => Some(candidate),
                        Some(cur) => {
                            if ratio < cur.0 - 1e-12
                                || (ratio < cur.0 + 1e-12 && candidate.1 < cur.1)
                            {
                                Some(candidate)
                            } else {
                                Some(cur)
                            }
                        }
                    };
                }
            }
            let Some((_, _, pr)) = best else {
                // No positive coefficient: phase-2 unbounded. Phase 1 is
                // bounded below by zero, so this signals numerical trouble.
                return if phase_one {
                    PhaseOutcome::Failure
                } else {
                    PhaseOutcome::Infeasible
                };
            };

            // Update reduced costs by the same elimination as the tableau;
            // the pivot row is already normalized after `pivot`.
            let factor = rc[pc];
            self.pivot(pr, pc);
            for (r, &v) in rc.iter_mut().zip(&self.rows[pr]) {
                *r -= factor * v;
            }
            rc[pc] = 0.0;
        }
        PhaseOutcome::Failure
    }

    fn phase_one(&mut self) -> PhaseOutcome {
        if self.n_art > 0 {
            let rc = self.reduced_costs(true);
            match self.iterate(true, rc) {
                PhaseOutcome::Proceed => {}
                other => return other,
            }
            let scale = 1.0
                + self
                    .rows
                    .iter()
                    .map(|r| r[self.total_cols()].abs())
                    .fold(0.0, f64::max);
            if self.objective_value(true) > 1e-8 * scale {
                return PhaseOutcome::Infeasible;
            }
            self.evict_artificials();
        }
        PhaseOutcome::Proceed
    }

    /// Pivot basic artificials out, or drop their rows as redundant.
    fn evict_artificials(&mut self) {
        let art_start = 2 * self.n + self.m;
        let total = self.total_cols();
        for i in 0..self.m {
            if !self.live[i] || self.basis[i] < art_start {
                continue;
            }
            let col = (0..art_start).find(|&j| self.rows[i][j].abs() > PIVOT_TOL);
            match col {
                Some(pc) => self.pivot(i, pc),
                None => {
                    self.live[i] = false;
                    debug_assert!(self.rows[i][total].abs() < 1e-6);
                }
            }
        }
    }

    fn phase_two(&mut self) -> PhaseOutcome {
        let rc = self.reduced_costs(false);
        self.iterate(false, rc)
    }

    fn extract_solution(&self) -> DVector<f64> {
        let total = self.total_cols();
        let mut z = DVector::<f64>::zeros(self.n);
        for i in 0..self.m {
            if !self.live[i] {
                continue;
            }
            let b = self.basis[i];
            let v = self.rows[i][total];
            if b < self.n {
                z[b] += v;
            } else if b < 2 * self.n {
                z[b - self.n] -= v;
            }
        }
        z
    }

    /// Duals of the inequality rows, from `B' y = c_B` over the unflipped
    /// equality system; `mu = -y` is nonnegative at the optimum. Dropped
    /// (redundant) rows get a zero multiplier. Returns `None` when an
    /// artificial lingers in the basis.
    fn extract_duals(&self) -> Option<DVector<f64>> {
        let art_start = 2 * self.n + self.m;
        let live_rows: Vec<usize> = (0..self.m).filter(|&i| self.live[i]).collect();
        let k = live_rows.len();
        let mut bt = DMatrix::<f64>::zeros(k, k);
        let mut cb = DVector::<f64>::zeros(k);
        for (a, &i) in live_rows.iter().enumerate() {
            let col = self.basis[i];
            if col >= art_start {
                return None;
            }
            cb[a] = self.phase_cost(col, false);
            for (b, &r) in live_rows.iter().enumerate() {
                bt[(a, b)] = self.eq[(r, col)]; // transposed: row a <- column entries
            }
        }
        let y = bt.lu().solve(&cb)?;
        let mut mu = DVector::<f64>::zeros(self.m);
        for (a, &i) in live_rows.iter().enumerate() {
            mu[i] = -y[a];
        }
        Some(mu)
    }
}
