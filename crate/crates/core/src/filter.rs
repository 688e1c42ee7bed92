//! Barrier evaluation and the input-certifying safety filters.
//!
//! The barrier of a halfspace set `{xi : H xi <= c}` is the smallest slack
//! `h(xi) = min(c - H xi)`: positive inside, zero on the boundary, negative
//! outside. A nominal input is certified by solving a small QP that keeps
//! the successor's barrier above `(1 - lambda) h(xi)`, with the decay rate
//! `lambda` itself a decision variable penalized toward its floor. The
//! value of `h` (and the filter's path for decay rates below one) depends
//! on the row scaling of the set description; callers normalize rows first.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Polytope;
use crate::model::{DataDrivenModel, ExtendedState};
use crate::numkit::{solve_qp, QpProblem, SolveStatus};

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("no certified input exists from this state (barrier value {h_before})")]
    Infeasible { h_before: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bad configuration: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Numerical(String),
}

/// Settings for the certifying QP.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Floor of the decay-rate interval `[lambda_min, 1]`.
    pub lambda_min: f64,
    /// Weight on the decay rate; large values make the filter pick the
    /// smallest feasible rate before matching the nominal input.
    pub beta: f64,
    /// Admissible inputs, kept explicitly in the QP.
    pub u_set: Polytope,
    /// Certification slack used when checking returned solutions.
    pub qp_tol: f64,
}

impl FilterConfig {
    pub fn new(lambda_min: f64, u_set: Polytope) -> Self {
        Self {
            lambda_min,
            beta: 1e6,
            u_set,
            qp_tol: 1e-7,
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    fn validate(&self) -> Result<(), FilterError> {
        if !(self.lambda_min > 0.0 && self.lambda_min <= 1.0) {
            return Err(FilterError::Config(format!(
                "lambda_min must lie in (0, 1], got {}",
                self.lambda_min
            )));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(FilterError::Config(format!(
                "beta must be finite positive, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

mod dvec_serde {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

/// A certified input together with the barrier bookkeeping of the solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterResult {
    #[serde(with = "dvec_serde")]
    pub u_safe: DVector<f64>,
    /// Realized decay rate; fixed at 1 for the pure invariance filter.
    pub lambda: f64,
    pub h_before: f64,
    pub h_after_predicted: f64,
    /// Kind of the underlying solve, "optimal" on success.
    pub status: String,
    /// Value of the objective actually solved.
    pub objective: f64,
}

/// Smallest constraint slack `min(c - H xi)`. Positive strictly inside,
/// zero on the boundary, negative outside. A row-free set yields positive
/// infinity, the explicit empty set negative infinity.
pub fn h_value(safe_set: &Polytope, xi: &ExtendedState) -> Result<f64, FilterError> {
    if safe_set.dim() != xi.dim() {
        return Err(FilterError::ShapeMismatch(format!(
            "set dim {} vs state dim {}",
            safe_set.dim(),
            xi.dim()
        )));
    }
    if safe_set.is_empty_set() {
        return Ok(f64::NEG_INFINITY);
    }
    if safe_set.n_rows() == 0 {
        return Ok(f64::INFINITY);
    }
    Ok((safe_set.rhs() - safe_set.lhs() * xi.as_vector()).min())
}

/// The input slab certified at decay rate one: every `u` with
/// `(H b_e) u <= c - (H a_e) xi` sends the state back into the set.
pub fn safe_input_hyperplane(
    model: &DataDrivenModel,
    safe_set: &Polytope,
    xi: &ExtendedState,
) -> Result<(DMatrix<f64>, DVector<f64>), FilterError> {
    if safe_set.dim() != model.dim() || xi.dim() != model.dim() {
        return Err(FilterError::ShapeMismatch(format!(
            "set dim {}, state dim {}, model dim {}",
            safe_set.dim(),
            xi.dim(),
            model.dim()
        )));
    }
    let lhs = safe_set.lhs() * model.b_e();
    let rhs = safe_set.rhs() - safe_set.lhs() * (model.a_e() * xi.as_vector());
    Ok((lhs, rhs))
}

/// Certify a nominal input against the barrier of `safe_set`.
///
/// Solves `min |u - u_nominal|^2 + beta lambda^2` over admissible `u` and
/// `lambda in [lambda_min, 1]`, subject to the decay condition
/// `H(a_e xi + b_e u) <= c - (1 - lambda) h(xi) 1`. With `lambda_min = 1`
/// the rate is pinned and the problem reduces to projecting the nominal
/// input onto the certified slab; the reported objective is then plain
/// `|u - u_nominal|^2`.
///
/// Infeasibility means no input certifies this state; it is reported,
/// never clamped away.
pub fn cbf_filter(
    model: &DataDrivenModel,
    safe_set: &Polytope,
    cfg: &FilterConfig,
    xi: &ExtendedState,
    u_nominal: &DVector<f64>,
) -> Result<FilterResult, FilterError> {
    cfg.validate()?;
    let m = model.m();
    if safe_set.dim() != model.dim() || xi.dim() != model.dim() {
        return Err(FilterError::ShapeMismatch(format!(
            "set dim {}, state dim {}, model dim {}",
            safe_set.dim(),
            xi.dim(),
            model.dim()
        )));
    }
    if u_nominal.len() != m || cfg.u_set.dim() != m {
        return Err(FilterError::ShapeMismatch(format!(
            "nominal input len {} and input set dim {} must equal {m}",
            u_nominal.len(),
            cfg.u_set.dim()
        )));
    }
    let h_before = h_value(safe_set, xi)?;
    if safe_set.is_empty_set() {
        return Err(FilterError::Infeasible { h_before });
    }

    let (hb, slab_rhs) = safe_input_hyperplane(model, safe_set, xi)?;
    let rows_s = hb.nrows();
    let rows_u = cfg.u_set.n_rows();

    let status = if cfg.lambda_min == 1.0 {
        // Decay rate pinned at one: the slab constraint loses its lambda
        // term entirely.
        let mut g = DMatrix::zeros(rows_s + rows_u, m);
        let mut b = DVector::zeros(rows_s + rows_u);
        g.view_mut((0, 0), (rows_s, m)).copy_from(&hb);
        b.rows_mut(0, rows_s).copy_from(&slab_rhs);
        g.view_mut((rows_s, 0), (rows_u, m))
            .copy_from(cfg.u_set.lhs());
        b.rows_mut(rows_s, rows_u).copy_from(cfg.u_set.rhs());
        let quad = DMatrix::identity(m, m) * 2.0;
        let lin = -2.0 * u_nominal;
        solve_qp(&QpProblem::new(quad, lin, g, b))
    } else {
        // Joint decision (u, lambda). Decay is demanded relative to
        // max(h, 0): negative barrier values are rounding territory, and
        // coupling them into the rows both weakens the requirement to
        // "keep shrinking" and hands the start-point solver rows of norm
        // |h| that it cannot resolve. Clamped, an escaped state is simply
        // asked to come straight back, the same demand the pinned-rate
        // filter makes.
        let h_qp = h_before.max(0.0);
        let n_z = m + 1;
        let mut g = DMatrix::zeros(rows_s + rows_u + 2, n_z);
        let mut b = DVector::zeros(rows_s + rows_u + 2);
        g.view_mut((0, 0), (rows_s, m)).copy_from(&hb);
        for i in 0..rows_s {
            g[(i, m)] = -h_qp;
            b[i] = slab_rhs[i] - h_qp;
        }
        g.view_mut((rows_s, 0), (rows_u, m))
            .copy_from(cfg.u_set.lhs());
        b.rows_mut(rows_s, rows_u).copy_from(cfg.u_set.rhs());
        g[(rows_s + rows_u, m)] = 1.0;
        b[rows_s + rows_u] = 1.0;
        g[(rows_s + rows_u + 1, m)] = -1.0;
        b[rows_s + rows_u + 1] = -cfg.lambda_min;
        let mut quad = DMatrix::identity(n_z, n_z) * 2.0;
        quad[(m, m)] = 2.0 * cfg.beta;
        let mut lin = DVector::zeros(n_z);
        for j in 0..m {
            lin[j] = -2.0 * u_nominal[j];
        }
        solve_qp(&QpProblem::new(quad, lin, g, b))
    };

    match status {
        SolveStatus::Optimal { solution, .. } => {
            let u_safe = DVector::from_fn(m, |j, _| solution[j]);
            let lambda = if cfg.lambda_min == 1.0 {
                1.0
            } else {
                solution[m].clamp(cfg.lambda_min, 1.0)
            };
            let successor = model.a_e() * xi.as_vector() + model.b_e() * &u_safe;
            let h_after_predicted = (safe_set.rhs() - safe_set.lhs() * successor).min();
            let deviation = (&u_safe - u_nominal).norm_squared();
            let objective = if cfg.lambda_min == 1.0 {
                deviation
            } else {
                deviation + cfg.beta * lambda * lambda
            };
            Ok(FilterResult {
                u_safe,
                lambda,
                h_before,
                h_after_predicted,
                status: "optimal".into(),
                objective,
            })
        }
        SolveStatus::Infeasible => Err(FilterError::Infeasible { h_before }),
        other => Err(FilterError::Numerical(format!(
            "certifying QP ended {}",
            other.kind_str()
        ))),
    }
}

/// Predictive safety filter: nearest first input whose backup trajectory
/// stays in `ambient` and parks in `terminal` after `horizon` steps.
///
/// Only the first input is costed; the rest of the plan carries a 1e-9
/// ridge so the QP stays strictly convex. Barrier bookkeeping in the
/// result is relative to `terminal`, and the reported decay rate is fixed
/// at one. With `horizon = 1` and `terminal` equal to the invariant set,
/// this is the same problem the pinned-rate filter solves.
pub fn mpsf(
    model: &DataDrivenModel,
    ambient: &Polytope,
    u_set: &Polytope,
    terminal: &Polytope,
    horizon: usize,
    xi: &ExtendedState,
    u_nominal: &DVector<f64>,
) -> Result<FilterResult, FilterError> {
    const RIDGE: f64 = 1e-9;
    let m = model.m();
    let n = model.dim();
    if horizon == 0 {
        return Err(FilterError::Config("horizon must be at least 1".into()));
    }
    if ambient.dim() != n || terminal.dim() != n || xi.dim() != n {
        return Err(FilterError::ShapeMismatch(format!(
            "ambient {}, terminal {}, state {} must all have dim {n}",
            ambient.dim(),
            terminal.dim(),
            xi.dim()
        )));
    }
    if u_set.dim() != m || u_nominal.len() != m {
        return Err(FilterError::ShapeMismatch(format!(
            "input set dim {} and nominal len {} must equal {m}",
            u_set.dim(),
            u_nominal.len()
        )));
    }
    let h_before = h_value(terminal, xi)?;
    if terminal.is_empty_set() || ambient.is_empty_set() || u_set.is_empty_set() {
        return Err(FilterError::Infeasible { h_before });
    }
    // The current state is a constant; its stage constraint is a data
    // check, not a QP row.
    if !ambient.contains(xi.as_vector(), 1e-9) {
        return Err(FilterError::Infeasible { h_before });
    }

    // Powers of the state matrix: reach[k] = a_e^k.
    let mut reach: Vec<DMatrix<f64>> = Vec::with_capacity(horizon + 1);
    reach.push(DMatrix::identity(n, n));
    for _ in 0..horizon {
        let next = &reach[reach.len() - 1] * model.a_e();
        reach.push(next);
    }

    // xi_k = reach[k] xi_0 + sum_j reach[k-1-j] b_e u_j.
    let stage_rows: usize = (horizon - 1) * ambient.n_rows();
    let rows_total = stage_rows + terminal.n_rows() + horizon * u_set.n_rows();
    let n_z = horizon * m;
    let mut g = DMatrix::zeros(rows_total, n_z);
    let mut b = DVector::zeros(rows_total);
    let mut at = 0usize;
    let add_state_rows =
        |g: &mut DMatrix<f64>, b: &mut DVector<f64>, at: &mut usize, set: &Polytope, k: usize| {
            let rows = set.n_rows();
            for j in 0..k {
                let block = set.lhs() * (&reach[k - 1 - j] * model.b_e());
                g.view_mut((*at, j * m), (rows, m)).copy_from(&block);
            }
            let constant = set.lhs() * (&reach[k] * xi.as_vector());
            for i in 0..rows {
                b[*at + i] = set.rhs()[i] - constant[i];
            }
            *at += rows;
        };
    for k in 1..horizon {
        add_state_rows(&mut g, &mut b, &mut at, ambient, k);
    }
    add_state_rows(&mut g, &mut b, &mut at, terminal, horizon);
    for k in 0..horizon {
        g.view_mut((at, k * m), (u_set.n_rows(), m))
            .copy_from(u_set.lhs());
        b.rows_mut(at, u_set.n_rows()).copy_from(u_set.rhs());
        at += u_set.n_rows();
    }

    let mut quad = DMatrix::identity(n_z, n_z) * (2.0 * RIDGE);
    let mut lin = DVector::zeros(n_z);
    for j in 0..m {
        quad[(j, j)] = 2.0;
        lin[j] = -2.0 * u_nominal[j];
    }

    match solve_qp(&QpProblem::new(quad, lin, g, b)) {
        SolveStatus::Optimal { solution, .. } => {
            let u_safe = DVector::from_fn(m, |j, _| solution[j]);
            let successor = model.a_e() * xi.as_vector() + model.b_e() * &u_safe;
            let h_after_predicted = (terminal.rhs() - terminal.lhs() * successor).min();
            let objective = (&u_safe - u_nominal).norm_squared();
            Ok(FilterResult {
                u_safe,
                lambda: 1.0,
                h_before,
                h_after_predicted,
                status: "optimal".into(),
                objective,
            })
        }
        SolveStatus::Infeasible => Err(FilterError::Infeasible { h_before }),
        other => Err(FilterError::Numerical(format!(
            "backup-trajectory QP ended {}",
            other.kind_str()
        ))),
    }
}
