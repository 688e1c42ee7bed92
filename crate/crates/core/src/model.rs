//! One-step output predictor fitted from Hankel data and its wrapping into
//! an extended-state linear model.
//!
//! The extended state stacks the last `t_ini` inputs and outputs, oldest
//! first, inputs before outputs. Advancing it is linear: shift both blocks,
//! write the applied input into the newest input slot, and fill the newest
//! output slot with the predictor value.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::HankelPartition;
use crate::numkit::{min_norm_solve, NumError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("predictor fit residual {relative:.3e} exceeds {bound:.3e}; data inconsistent")]
    InconsistentData { relative: f64, bound: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Num(#[from] NumError),
}

/// Relative residual above which a predictor fit is rejected.
pub const FIT_RESIDUAL_TOL: f64 = 1e-9;

/// Stacked window `[u_{t-T}..u_{t-1}; y_{t-T}..y_{t-1}]`, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedState {
    m: usize,
    p: usize,
    t_ini: usize,
    value: DVector<f64>,
}

impl ExtendedState {
    pub fn zeros(m: usize, p: usize, t_ini: usize) -> Self {
        Self {
            m,
            p,
            t_ini,
            value: DVector::zeros((m + p) * t_ini),
        }
    }

    pub fn new(m: usize, p: usize, t_ini: usize, value: DVector<f64>) -> Result<Self, ModelError> {
        if value.len() != (m + p) * t_ini {
            return Err(ModelError::ShapeMismatch(format!(
                "extended state needs length {}, got {}",
                (m + p) * t_ini,
                value.len()
            )));
        }
        Ok(Self { m, p, t_ini, value })
    }

    /// Last `t_ini` pairs of a recorded history, newest sample last.
    pub fn from_history(
        inputs: &[DVector<f64>],
        outputs: &[DVector<f64>],
        t_ini: usize,
    ) -> Result<Self, ModelError> {
        if inputs.len() < t_ini || outputs.len() < t_ini {
            return Err(ModelError::ShapeMismatch(format!(
                "need at least {t_ini} recorded pairs, got {} inputs / {} outputs",
                inputs.len(),
                outputs.len()
            )));
        }
        if t_ini == 0 {
            return Err(ModelError::ShapeMismatch("t_ini must be positive".into()));
        }
        let m = inputs[0].len();
        let p = outputs[0].len();
        let mut value = DVector::zeros((m + p) * t_ini);
        for k in 0..t_ini {
            let u = &inputs[inputs.len() - t_ini + k];
            let y = &outputs[outputs.len() - t_ini + k];
            if u.len() != m || y.len() != p {
                return Err(ModelError::ShapeMismatch("ragged history".into()));
            }
            value.rows_mut(k * m, m).copy_from(u);
            value.rows_mut(m * t_ini + k * p, p).copy_from(y);
        }
        Ok(Self { m, p, t_ini, value })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn t_ini(&self) -> usize {
        self.t_ini
    }

    pub fn dim(&self) -> usize {
        self.value.len()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.value
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.value
    }

    /// Shift in one measured pair, discarding the oldest.
    pub fn push_pair(&mut self, u: &DVector<f64>, y: &DVector<f64>) {
        assert_eq!(u.len(), self.m);
        assert_eq!(y.len(), self.p);
        let (m, p, t) = (self.m, self.p, self.t_ini);
        for k in 0..t.saturating_sub(1) {
            let next = self.value.rows((k + 1) * m, m).into_owned();
            self.value.rows_mut(k * m, m).copy_from(&next);
            let next = self.value.rows(m * t + (k + 1) * p, p).into_owned();
            self.value.rows_mut(m * t + k * p, p).copy_from(&next);
        }
        self.value.rows_mut((t - 1) * m, m).copy_from(u);
        self.value.rows_mut(m * t + (t - 1) * p, p).copy_from(y);
    }
}

/// Predictor row `r`, the extended dynamics built from it, and the fit
/// residual it was accepted with.
#[derive(Debug, Clone)]
pub struct DataDrivenModel {
    m: usize,
    p: usize,
    t_ini: usize,
    r: DMatrix<f64>,
    a_e: DMatrix<f64>,
    b_e: DMatrix<f64>,
    residual: f64,
}

impl DataDrivenModel {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn t_ini(&self) -> usize {
        self.t_ini
    }

    /// Extended-state dimension `(m + p) * t_ini`.
    pub fn dim(&self) -> usize {
        (self.m + self.p) * self.t_ini
    }

    pub fn predictor(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn a_e(&self) -> &DMatrix<f64> {
        &self.a_e
    }

    pub fn b_e(&self) -> &DMatrix<f64> {
        &self.b_e
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// Escape hatch for hand-built dynamics (toy fixtures, reduced models).
    /// Shapes are checked; the canonical shift structure is not imposed.
    pub fn from_parts(
        m: usize,
        p: usize,
        t_ini: usize,
        r: DMatrix<f64>,
        a_e: DMatrix<f64>,
        b_e: DMatrix<f64>,
        residual: f64,
    ) -> Result<Self, ModelError> {
        let dim = (m + p) * t_ini;
        if r.nrows() != p || r.ncols() != dim {
            return Err(ModelError::ShapeMismatch(format!(
                "predictor must be {p} x {dim}, got {} x {}",
                r.nrows(),
                r.ncols()
            )));
        }
        if a_e.nrows() != dim || a_e.ncols() != dim || b_e.nrows() != dim || b_e.ncols() != m {
            return Err(ModelError::ShapeMismatch("extended dynamics shape".into()));
        }
        Ok(Self {
            m,
            p,
            t_ini,
            r,
            a_e,
            b_e,
            residual,
        })
    }
}

/// Fit the one-step predictor `r` from a Hankel partition: the minimum-norm
/// solution of `r * [u_past; y_past] = y_future`.
///
/// Returns the predictor and its relative residual
/// `||r W - y_future||_F / max(1, ||y_future||_F)`; fits worse than
/// [`FIT_RESIDUAL_TOL`] are rejected as inconsistent data.
pub fn fit_predictor(part: &HankelPartition) -> Result<(DMatrix<f64>, f64), ModelError> {
    let w = part.regressors();
    let r = match min_norm_solve(&w, &part.y_future) {
        Ok(r) => r,
        Err(NumError::ResidualTooLarge { relative, .. }) => {
            return Err(ModelError::InconsistentData {
                relative,
                bound: FIT_RESIDUAL_TOL,
            })
        }
        Err(e) => return Err(e.into()),
    };
    let scale = part.y_future.norm().max(1.0);
    let relative = (&r * &w - &part.y_future).norm() / scale;
    if relative > FIT_RESIDUAL_TOL {
        return Err(ModelError::InconsistentData {
            relative,
            bound: FIT_RESIDUAL_TOL,
        });
    }
    Ok((r, relative))
}

/// Wrap a predictor row into the shift-structured extended dynamics
/// `xi+ = a_e xi + b_e u`.
pub fn build_extended_dynamics(
    r: DMatrix<f64>,
    m: usize,
    p: usize,
    t_ini: usize,
    residual: f64,
) -> Result<DataDrivenModel, ModelError> {
    let dim = (m + p) * t_ini;
    if t_ini == 0 || m == 0 || p == 0 {
        return Err(ModelError::ShapeMismatch(
            "m, p, t_ini must all be positive".into(),
        ));
    }
    if r.nrows() != p || r.ncols() != dim {
        return Err(ModelError::ShapeMismatch(format!(
            "predictor must be {p} x {dim}, got {} x {}",
            r.nrows(),
            r.ncols()
        )));
    }
    let mut a_e = DMatrix::<f64>::zeros(dim, dim);
    // Input block shift: slot k takes slot k+1.
    for k in 0..t_ini.saturating_sub(1) {
        for i in 0..m {
            a_e[(k * m + i, (k + 1) * m + i)] = 1.0;
        }
    }
    // Output block shift.
    for k in 0..t_ini.saturating_sub(1) {
        for i in 0..p {
            a_e[(m * t_ini + k * p + i, m * t_ini + (k + 1) * p + i)] = 1.0;
        }
    }
    // Newest output slot: the predictor row.
    a_e.view_mut((m * t_ini + (t_ini - 1) * p, 0), (p, dim))
        .copy_from(&r);
    // Newest input slot comes from the applied input.
    let mut b_e = DMatrix::<f64>::zeros(dim, m);
    for i in 0..m {
        b_e[((t_ini - 1) * m + i, i)] = 1.0;
    }
    Ok(DataDrivenModel {
        m,
        p,
        t_ini,
        r,
        a_e,
        b_e,
        residual,
    })
}

/// Convenience: fit and wrap in one call.
pub fn fit_model(part: &HankelPartition) -> Result<DataDrivenModel, ModelError> {
    let (r, residual) = fit_predictor(part)?;
    build_extended_dynamics(r, part.m, part.p, part.t_ini, residual)
}

/// One step of the extended dynamics.
pub fn step_extended(
    model: &DataDrivenModel,
    xi: &ExtendedState,
    u: &DVector<f64>,
) -> ExtendedState {
    assert_eq!(xi.dim(), model.dim(), "state dimension mismatch");
    assert_eq!(u.len(), model.m, "input dimension mismatch");
    let value = &model.a_e * xi.as_vector() + &model.b_e * u;
    ExtendedState {
        m: model.m,
        p: model.p,
        t_ini: model.t_ini,
        value,
    }
}

/// Predicted current output `r * xi`.
pub fn predict_output(model: &DataDrivenModel, xi: &ExtendedState) -> DVector<f64> {
    assert_eq!(xi.dim(), model.dim(), "state dimension mismatch");
    &model.r * xi.as_vector()
}

/// Serialized form: the predictor and sizes only; the shift structure of
/// `a_e`/`b_e` is canonical and rebuilt on load.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    m: usize,
    p: usize,
    t_ini: usize,
    /// Row-major predictor entries.
    r: Vec<f64>,
    residual: f64,
}

impl Serialize for DataDrivenModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut r = Vec::with_capacity(self.r.nrows() * self.r.ncols());
        for i in 0..self.r.nrows() {
            for j in 0..self.r.ncols() {
                r.push(self.r[(i, j)]);
            }
        }
        ModelFile {
            m: self.m,
            p: self.p,
            t_ini: self.t_ini,
            r,
            residual: self.residual,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DataDrivenModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let f = ModelFile::deserialize(d)?;
        let dim = (f.m + f.p) * f.t_ini;
        if f.r.len() != f.p * dim {
            return Err(serde::de::Error::custom(format!(
                "predictor needs {} entries, got {}",
                f.p * dim,
                f.r.len()
            )));
        }
        let r = DMatrix::from_row_slice(f.p, dim, &f.r);
        build_extended_dynamics(r, f.m, f.p, f.t_ini, f.residual).map_err(serde::de::Error::custom)
    }
}
