//! Trajectory recording, Hankel matrices, and the excitation-rank check
//! that decides whether a dataset pins down the system behavior.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use thiserror::Error;

use crate::numkit::numeric_rank;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("hankel depth {depth} exceeds series length {len}")]
    DepthTooLarge { depth: usize, len: usize },
    #[error("dataset of length {len} is too short for t_ini {t_ini}")]
    InsufficientData { len: usize, t_ini: usize },
    #[error("malformed dataset file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One recorded input-output trajectory, inputs `m x N`, outputs `p x N`,
/// column `t` holding the sample at step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub u: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

impl TrajectoryDataset {
    pub fn new(u: DMatrix<f64>, y: DMatrix<f64>) -> Self {
        assert_eq!(
            u.ncols(),
            y.ncols(),
            "inputs and outputs must cover the same steps"
        );
        Self { u, y }
    }

    pub fn len(&self) -> usize {
        self.u.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn m(&self) -> usize {
        self.u.nrows()
    }

    pub fn p(&self) -> usize {
        self.y.nrows()
    }

    /// Plain CSV with header `t, u_0..u_{m-1}, y_0..y_{p-1}`.
    pub fn write_csv(&self, path: &Path) -> Result<(), DataError> {
        let mut out = String::new();
        out.push('t');
        for i in 0..self.m() {
            out.push_str(&format!(",u_{i}"));
        }
        for i in 0..self.p() {
            out.push_str(&format!(",y_{i}"));
        }
        out.push('\n');
        for t in 0..self.len() {
            out.push_str(&t.to_string());
            for i in 0..self.m() {
                out.push_str(&format!(",{}", self.u[(i, t)]));
            }
            for i in 0..self.p() {
                out.push_str(&format!(",{}", self.y[(i, t)]));
            }
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self, DataError> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| DataError::Parse("empty file".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"t") {
            return Err(DataError::Parse("first column must be t".into()));
        }
        let m = cols.iter().filter(|c| c.starts_with("u_")).count();
        let p = cols.iter().filter(|c| c.starts_with("y_")).count();
        if m == 0 || p == 0 || cols.len() != 1 + m + p {
            return Err(DataError::Parse(format!("unexpected header {header:?}")));
        }
        let mut u_rows: Vec<Vec<f64>> = vec![Vec::new(); m];
        let mut y_rows: Vec<Vec<f64>> = vec![Vec::new(); p];
        for (ln, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != cols.len() {
                return Err(DataError::Parse(format!(
                    "line {}: wrong field count",
                    ln + 2
                )));
            }
            for i in 0..m {
                let v = fields[1 + i]
                    .parse::<f64>()
                    .map_err(|e| DataError::Parse(format!("line {}: {e}", ln + 2)))?;
                u_rows[i].push(v);
            }
            for i in 0..p {
                let v = fields[1 + m + i]
                    .parse::<f64>()
                    .map_err(|e| DataError::Parse(format!("line {}: {e}", ln + 2)))?;
                y_rows[i].push(v);
            }
        }
        let n = u_rows[0].len();
        let u = DMatrix::from_fn(m, n, |i, j| u_rows[i][j]);
        let y = DMatrix::from_fn(p, n, |i, j| y_rows[i][j]);
        Ok(Self::new(u, y))
    }
}

/// Block-Hankel matrix of depth `depth`: column `j` stacks the samples
/// `series[:, j..j+depth]` oldest first, giving `q*depth` rows and
/// `N - depth + 1` columns.
pub fn build_hankel(series: &DMatrix<f64>, depth: usize) -> Result<DMatrix<f64>, DataError> {
    let q = series.nrows();
    let n = series.ncols();
    if depth == 0 || depth > n {
        return Err(DataError::DepthTooLarge { depth, len: n });
    }
    let cols = n - depth + 1;
    Ok(DMatrix::from_fn(q * depth, cols, |r, j| {
        let block = r / q;
        let row = r % q;
        series[(row, j + block)]
    }))
}

/// Depth `t_ini + 1` Hankel matrices of a dataset split into past
/// (first `t_ini` block rows) and future (last block row) parts.
#[derive(Debug, Clone)]
pub struct HankelPartition {
    pub u_past: DMatrix<f64>,
    pub u_future: DMatrix<f64>,
    pub y_past: DMatrix<f64>,
    pub y_future: DMatrix<f64>,
    pub m: usize,
    pub p: usize,
    pub t_ini: usize,
    pub n_cols: usize,
}

pub fn partition(ds: &TrajectoryDataset, t_ini: usize) -> Result<HankelPartition, DataError> {
    let depth = t_ini + 1;
    if t_ini == 0 || depth > ds.len() {
        return Err(DataError::InsufficientData {
            len: ds.len(),
            t_ini,
        });
    }
    let hu = build_hankel(&ds.u, depth)?;
    let hy = build_hankel(&ds.y, depth)?;
    let (m, p) = (ds.m(), ds.p());
    let n_cols = ds.len() - t_ini;
    debug_assert_eq!(hu.ncols(), n_cols);
    Ok(HankelPartition {
        u_past: hu.view((0, 0), (m * t_ini, n_cols)).into_owned(),
        u_future: hu.view((m * t_ini, 0), (m, n_cols)).into_owned(),
        y_past: hy.view((0, 0), (p * t_ini, n_cols)).into_owned(),
        y_future: hy.view((p * t_ini, 0), (p, n_cols)).into_owned(),
        m,
        p,
        t_ini,
        n_cols,
    })
}

impl HankelPartition {
    /// Stacked past data `[u_past; y_past]`, the regressor block for the
    /// one-step predictor.
    pub fn regressors(&self) -> DMatrix<f64> {
        let rows = self.u_past.nrows() + self.y_past.nrows();
        let mut w = DMatrix::zeros(rows, self.n_cols);
        w.view_mut((0, 0), (self.u_past.nrows(), self.n_cols))
            .copy_from(&self.u_past);
        w.view_mut((self.u_past.nrows(), 0), (self.y_past.nrows(), self.n_cols))
            .copy_from(&self.y_past);
        w
    }
}

/// Excitation diagnostics at depth `t_ini + 1`.
///
/// `satisfied` reports the input-side rank condition
/// `rank(H_u) == m * (t_ini + 1)`; `stacked_rank` is the rank of
/// `[H_u; H_y]`, which for exact data of an order-`n` system tops out at
/// `m * (t_ini + 1) + n`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PeReport {
    pub stacked_rank: usize,
    pub required_order: usize,
    pub input_hankel_rank: usize,
    pub satisfied: bool,
}

pub fn check_pe(ds: &TrajectoryDataset, t_ini: usize) -> Result<PeReport, DataError> {
    let depth = t_ini + 1;
    if t_ini == 0 || depth > ds.len() {
        return Err(DataError::InsufficientData {
            len: ds.len(),
            t_ini,
        });
    }
    let hu = build_hankel(&ds.u, depth)?;
    let hy = build_hankel(&ds.y, depth)?;
    let mut stacked = DMatrix::zeros(hu.nrows() + hy.nrows(), hu.ncols());
    stacked
        .view_mut((0, 0), (hu.nrows(), hu.ncols()))
        .copy_from(&hu);
    stacked
        .view_mut((hu.nrows(), 0), (hy.nrows(), hy.ncols()))
        .copy_from(&hy);

    let input_hankel_rank = numeric_rank(&hu, None);
    let required_order = ds.m() * depth;
    Ok(PeReport {
        stacked_rank: numeric_rank(&stacked, None),
        required_order,
        input_hankel_rank,
        satisfied: input_hankel_rank == required_order,
    })
}

/// Zero-mean unit-variance normal excitation, `m x len`, reproducible from
/// the seed.
pub fn excitation(m: usize, len: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(m, len, |_, _| StandardNormal.sample(&mut rng))
}

/// Excitation scaled to a given standard deviation.
pub fn excitation_scaled(m: usize, len: usize, seed: u64, std_dev: f64) -> DMatrix<f64> {
    excitation(m, len, seed) * std_dev
}
