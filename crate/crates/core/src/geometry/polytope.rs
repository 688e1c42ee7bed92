//! The halfspace-form polytope `{x : lhs x <= rhs}` and its operations.
//!
//! Emptiness is an explicit flag, never an implicit contradiction row: a
//! zero row with negative right-hand side is normalized away at
//! construction. Operations that need feasibility information (subset
//! tests, redundancy removal) run one small LP per row through the dual
//! support solver, so cost scales with row count, not dimension blowup.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numkit::{chebyshev_center, support_function, Chebyshev, SupportOutcome};

use super::REDUNDANCY_TOL;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("bad bounds: {0}")]
    BadBounds(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("row {0} has zero norm and cannot be normalized")]
    ZeroRow(usize),
    #[error("support LP failed: {0}")]
    Lp(String),
    #[error("result is the empty set")]
    EmptyResult,
    #[error("sampling failed: {0}")]
    Sampling(String),
}

/// Rows with norm at or below this are constant constraints: dropped when
/// trivially true, empty-flagging when contradictory.
const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    dim: usize,
    lhs: DMatrix<f64>,
    rhs: DVector<f64>,
    normalized: bool,
    empty: bool,
}

impl Polytope {
    /// Whole space: no constraints at all.
    pub fn whole_space(dim: usize) -> Self {
        Self {
            dim,
            lhs: DMatrix::zeros(0, dim),
            rhs: DVector::zeros(0),
            normalized: true,
            empty: false,
        }
    }

    /// The explicitly empty set.
    pub fn empty_set(dim: usize) -> Self {
        Self {
            dim,
            lhs: DMatrix::zeros(0, dim),
            rhs: DVector::zeros(0),
            normalized: true,
            empty: true,
        }
    }

    /// Build from rows, screening constant rows: a zero row with negative
    /// right-hand side makes the set explicitly empty, others are dropped.
    pub fn from_rows(lhs: DMatrix<f64>, rhs: DVector<f64>) -> Result<Self, GeomError> {
        if lhs.nrows() != rhs.len() {
            return Err(GeomError::ShapeMismatch(format!(
                "{} rows vs {} right-hand sides",
                lhs.nrows(),
                rhs.len()
            )));
        }
        let dim = lhs.ncols();
        let mut keep = Vec::with_capacity(lhs.nrows());
        for i in 0..lhs.nrows() {
            if lhs.row(i).norm() <= NORM_FLOOR {
                if rhs[i] < -1e-9 {
                    return Ok(Self::empty_set(dim));
                }
            } else {
                keep.push(i);
            }
        }
        let kept_lhs = DMatrix::from_fn(keep.len(), dim, |r, c| lhs[(keep[r], c)]);
        let kept_rhs = DVector::from_fn(keep.len(), |r, _| rhs[keep[r]]);
        Ok(Self {
            dim,
            lhs: kept_lhs,
            rhs: kept_rhs,
            normalized: false,
            empty: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_rows(&self) -> usize {
        self.lhs.nrows()
    }

    pub fn lhs(&self) -> &DMatrix<f64> {
        &self.lhs
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.rhs
    }

    pub fn is_empty_set(&self) -> bool {
        self.empty
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Membership within an absolute tolerance. The empty set contains
    /// nothing, a row-free polytope everything.
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        assert_eq!(x.len(), self.dim, "point dimension mismatch");
        if self.empty {
            return false;
        }
        if self.lhs.nrows() == 0 {
            return true;
        }
        (&self.lhs * x - &self.rhs).max() <= tol
    }

    /// Every row scaled to unit norm. Zero rows cannot appear here (they are
    /// screened at construction), but a defensive error remains.
    pub fn normalize_rows(&self) -> Result<Self, GeomError> {
        if self.empty || self.normalized {
            let mut out = self.clone();
            out.normalized = true;
            return Ok(out);
        }
        let mut lhs = self.lhs.clone();
        let mut rhs = self.rhs.clone();
        for i in 0..lhs.nrows() {
            let norm = lhs.row(i).norm();
            if norm <= NORM_FLOOR {
                return Err(GeomError::ZeroRow(i));
            }
            lhs.row_mut(i).scale_mut(1.0 / norm);
            rhs[i] /= norm;
        }
        Ok(Self {
            dim: self.dim,
            lhs,
            rhs,
            normalized: true,
            empty: false,
        })
    }

    /// Chebyshev data: largest inscribed ball center and radius.
    /// `None` for an empty set.
    pub fn chebyshev(&self) -> Option<(DVector<f64>, f64)> {
        if self.empty {
            return None;
        }
        match chebyshev_center(&self.lhs, &self.rhs) {
            Chebyshev::Center { center, radius } => Some((center, radius)),
            Chebyshev::Empty => None,
        }
    }

    /// Support value `max d'x` over the set. `None` when unbounded in that
    /// direction; must not be called on an empty set.
    pub fn support(&self, dir: &DVector<f64>) -> Result<Option<(f64, DVector<f64>)>, GeomError> {
        assert!(!self.empty, "support of the empty set is undefined");
        match support_function(&self.lhs, &self.rhs, dir) {
            SupportOutcome::Bounded { value, point } => Ok(Some((value, point))),
            SupportOutcome::Unbounded => Ok(None),
            SupportOutcome::Empty => {
                Err(GeomError::Lp("set believed nonempty reported empty".into()))
            }
        }
    }

    /// Intersection, with redundant rows pruned from the stacked system.
    pub fn intersect(&self, other: &Polytope, tol: f64) -> Result<Polytope, GeomError> {
        if self.dim != other.dim {
            return Err(GeomError::ShapeMismatch(format!(
                "intersecting dim {} with dim {}",
                self.dim, other.dim
            )));
        }
        if self.empty || other.empty {
            return Ok(Polytope::empty_set(self.dim));
        }
        let rows = self.lhs.nrows() + other.lhs.nrows();
        let mut lhs = DMatrix::zeros(rows, self.dim);
        let mut rhs = DVector::zeros(rows);
        lhs.view_mut((0, 0), (self.lhs.nrows(), self.dim))
            .copy_from(&self.lhs);
        lhs.view_mut((self.lhs.nrows(), 0), (other.lhs.nrows(), self.dim))
            .copy_from(&other.lhs);
        rhs.rows_mut(0, self.rhs.len()).copy_from(&self.rhs);
        rhs.rows_mut(self.rhs.len(), other.rhs.len())
            .copy_from(&other.rhs);
        Polytope::from_rows(lhs, rhs)?.remove_redundancy(tol)
    }

    /// Does every point of `self` satisfy all rows of `other`?
    ///
    /// One support LP per row of `other`: the set fits iff each support
    /// value stays below the row's bound plus `tol`. The empty set is a
    /// subset of everything.
    pub fn is_subset(&self, other: &Polytope, tol: f64) -> Result<bool, GeomError> {
        if self.dim != other.dim {
            return Err(GeomError::ShapeMismatch(format!(
                "subset test between dim {} and dim {}",
                self.dim, other.dim
            )));
        }
        if self.empty {
            return Ok(true);
        }
        if other.empty {
            return Ok(false);
        }
        // Compare in normalized units so `tol` means geometric distance.
        let q = other.normalize_rows()?;
        for i in 0..q.lhs.nrows() {
            let dir = q.lhs.row(i).transpose();
            match support_function(&self.lhs, &self.rhs, &dir) {
                SupportOutcome::Bounded { value, .. } => {
                    if value > q.rhs[i] + tol {
                        return Ok(false);
                    }
                }
                SupportOutcome::Unbounded => return Ok(false),
                SupportOutcome::Empty => return Ok(true), // self was empty after all
            }
        }
        Ok(true)
    }

    /// Minimal sub-representation: drops every row whose removal leaves the
    /// set unchanged, certified by one LP per row. Detects emptiness first
    /// and returns the explicit empty set in that case.
    ///
    /// Rows are processed in order, each tested against all other rows still
    /// present; removing a redundant row never changes later answers, and
    /// retained rows stay irredundant as the system shrinks, so a single
    /// pass produces an irredundant representation.
    pub fn remove_redundancy(&self, tol: f64) -> Result<Polytope, GeomError> {
        if self.empty {
            return Ok(self.clone());
        }
        let base = self.normalize_rows()?;
        if base.chebyshev().is_none() {
            return Ok(Polytope::empty_set(self.dim));
        }
        let m = base.lhs.nrows();

        // Cheap pass: exact duplicates and parallel dominated rows.
        let mut alive: Vec<bool> = vec![true; m];
        for i in 0..m {
            if !alive[i] {
                continue;
            }
            for j in (i + 1)..m {
                if !alive[j] {
                    continue;
                }
                let same_dir = (base.lhs.row(i) - base.lhs.row(j)).norm() <= 1e-12;
                if same_dir {
                    // Keep whichever bound is tighter.
                    if base.rhs[j] < base.rhs[i] {
                        alive[i] = false;
                        break;
                    } else {
                        alive[j] = false;
                    }
                }
            }
        }

        // LP pass.
        for i in 0..m {
            if !alive[i] {
                continue;
            }
            let others: Vec<usize> = (0..m).filter(|&k| k != i && alive[k]).collect();
            if others.is_empty() {
                continue; // a single halfspace is never redundant
            }
            let sub_lhs = DMatrix::from_fn(others.len(), self.dim, |r, c| base.lhs[(others[r], c)]);
            let sub_rhs = DVector::from_fn(others.len(), |r, _| base.rhs[others[r]]);
            let dir = base.lhs.row(i).transpose();
            match support_function(&sub_lhs, &sub_rhs, &dir) {
                SupportOutcome::Bounded { value, .. } => {
                    if value <= base.rhs[i] + tol {
                        alive[i] = false;
                    }
                }
                SupportOutcome::Unbounded => {}
                SupportOutcome::Empty => {
                    return Err(GeomError::Lp(
                        "feasible system reported empty during redundancy pass".into(),
                    ))
                }
            }
        }

        let keep: Vec<usize> = (0..m).filter(|&i| alive[i]).collect();
        let lhs = DMatrix::from_fn(keep.len(), self.dim, |r, c| base.lhs[(keep[r], c)]);
        let rhs = DVector::from_fn(keep.len(), |r, _| base.rhs[keep[r]]);
        Ok(Polytope {
            dim: self.dim,
            lhs,
            rhs,
            normalized: true,
            empty: false,
        })
    }

    /// Fourier-Motzkin elimination of one coordinate, followed by redundancy
    /// removal. The result lives in dimension `dim - 1` with the eliminated
    /// column removed and later coordinates shifted down.
    pub fn eliminate_variable(&self, index: usize, tol: f64) -> Result<Polytope, GeomError> {
        if index >= self.dim {
            return Err(GeomError::ShapeMismatch(format!(
                "eliminating coordinate {index} of a dim-{} polytope",
                self.dim
            )));
        }
        let new_dim = self.dim - 1;
        if self.empty {
            return Ok(Polytope::empty_set(new_dim));
        }
        let strip = |row: usize| -> Vec<f64> {
            (0..self.dim)
                .filter(|&c| c != index)
                .map(|c| self.lhs[(row, c)])
                .collect()
        };

        let mut zero_rows: Vec<(Vec<f64>, f64)> = Vec::new();
        let mut pos: Vec<usize> = Vec::new();
        let mut neg: Vec<usize> = Vec::new();
        // Classification threshold scales with the row to keep the pairing
        // stable under row scaling.
        for i in 0..self.lhs.nrows() {
            let a = self.lhs[(i, index)];
            let scale = self.lhs.row(i).amax().max(1e-30);
            if a.abs() <= 1e-11 * scale {
                zero_rows.push((strip(i), self.rhs[i]));
            } else if a > 0.0 {
                pos.push(i);
            } else {
                neg.push(i);
            }
        }

        let mut rows: Vec<(Vec<f64>, f64)> = zero_rows;
        for &ip in &pos {
            let ap = self.lhs[(ip, index)];
            for &inn in &neg {
                let an = self.lhs[(inn, index)];
                // (-an) * row_p + ap * row_n cancels the eliminated column.
                let sp = strip(ip);
                let sn = strip(inn);
                let combo: Vec<f64> = sp
                    .iter()
                    .zip(&sn)
                    .map(|(p, n)| (-an) * p + ap * n)
                    .collect();
                let rhs = (-an) * self.rhs[ip] + ap * self.rhs[inn];
                rows.push((combo, rhs));
            }
        }

        let lhs = DMatrix::from_fn(rows.len(), new_dim, |r, c| rows[r].0[c]);
        let rhs = DVector::from_fn(rows.len(), |r, _| rows[r].1);
        Polytope::from_rows(lhs, rhs)?.remove_redundancy(tol)
    }

    /// Orthogonal projection onto the coordinates in `dims`, in the order
    /// given. All other coordinates are eliminated highest-index first.
    pub fn project(&self, dims: &[usize]) -> Result<Polytope, GeomError> {
        if dims.is_empty() || dims.len() > self.dim {
            return Err(GeomError::ShapeMismatch(
                "projection needs 1..=dim coordinates".into(),
            ));
        }
        let mut seen = vec![false; self.dim];
        for &d in dims {
            if d >= self.dim {
                return Err(GeomError::ShapeMismatch(format!(
                    "projection coordinate {d} out of range for dim {}",
                    self.dim
                )));
            }
            if seen[d] {
                return Err(GeomError::ShapeMismatch(
                    "duplicate projection coordinate".into(),
                ));
            }
            seen[d] = true;
        }
        let mut drop: Vec<usize> = (0..self.dim).filter(|&d| !seen[d]).collect();
        drop.sort_unstable();
        let mut cur = self.clone();
        // Track where each kept coordinate lands as columns vanish.
        let mut position: Vec<usize> = (0..self.dim).collect();
        for &d in drop.iter().rev() {
            cur = cur.eliminate_variable(position[d], REDUNDANCY_TOL)?;
            for p in position.iter_mut() {
                if *p > d {
                    *p -= 1;
                }
            }
        }
        // Reorder the surviving columns to match the requested order.
        let lhs = DMatrix::from_fn(cur.lhs.nrows(), dims.len(), |r, c| {
            cur.lhs[(r, position[dims[c]])]
        });
        Ok(Polytope {
            dim: dims.len(),
            lhs,
            rhs: cur.rhs.clone(),
            normalized: cur.normalized,
            empty: cur.empty,
        })
    }
}

/// Axis-aligned box `lower <= x <= upper`. Degenerate (equal) bounds are
/// valid; crossed or non-finite bounds are not.
pub fn box_polytope(lower: &[f64], upper: &[f64]) -> Result<Polytope, GeomError> {
    if lower.len() != upper.len() || lower.is_empty() {
        return Err(GeomError::BadBounds(
            "bound arrays must match and be nonempty".into(),
        ));
    }
    let n = lower.len();
    for j in 0..n {
        if !lower[j].is_finite() || !upper[j].is_finite() {
            return Err(GeomError::BadBounds(format!("bound {j} is not finite")));
        }
        if lower[j] > upper[j] {
            return Err(GeomError::BadBounds(format!(
                "lower {} exceeds upper {} at coordinate {j}",
                lower[j], upper[j]
            )));
        }
    }
    let mut lhs = DMatrix::zeros(2 * n, n);
    let mut rhs = DVector::zeros(2 * n);
    for j in 0..n {
        lhs[(2 * j, j)] = 1.0;
        rhs[2 * j] = upper[j];
        lhs[(2 * j + 1, j)] = -1.0;
        rhs[2 * j + 1] = -lower[j];
    }
    Polytope::from_rows(lhs, rhs)
}

/// Constraint polytope for the extended state: `t_ini` copies of the input
/// set over the input slots, then `t_ini` copies of the output set.
pub fn extended_constraints(
    u_set: &Polytope,
    y_set: &Polytope,
    t_ini: usize,
) -> Result<Polytope, GeomError> {
    if t_ini == 0 {
        return Err(GeomError::ShapeMismatch("t_ini must be positive".into()));
    }
    let m = u_set.dim();
    let p = y_set.dim();
    let dim = (m + p) * t_ini;
    if u_set.is_empty_set() || y_set.is_empty_set() {
        return Ok(Polytope::empty_set(dim));
    }
    let rows = t_ini * (u_set.n_rows() + y_set.n_rows());
    let mut lhs = DMatrix::zeros(rows, dim);
    let mut rhs = DVector::zeros(rows);
    let mut at = 0usize;
    for k in 0..t_ini {
        for i in 0..u_set.n_rows() {
            for j in 0..m {
                lhs[(at, k * m + j)] = u_set.lhs()[(i, j)];
            }
            rhs[at] = u_set.rhs()[i];
            at += 1;
        }
    }
    for k in 0..t_ini {
        for i in 0..y_set.n_rows() {
            for j in 0..p {
                lhs[(at, m * t_ini + k * p + j)] = y_set.lhs()[(i, j)];
            }
            rhs[at] = y_set.rhs()[i];
            at += 1;
        }
    }
    Polytope::from_rows(lhs, rhs)
}

/// All vertices of a (small) polytope by exhaustive basis enumeration:
/// every choice of `dim` rows is solved and kept when feasible. Points
/// closer than `merge_tol` are merged. Exponential in row count; intended
/// for low-dimensional plots and test oracles.
pub fn enumerate_vertices(p: &Polytope, merge_tol: f64) -> Vec<DVector<f64>> {
    let n = p.dim();
    let m = p.n_rows();
    if p.is_empty_set() || m < n || n == 0 {
        return Vec::new();
    }
    let mut verts: Vec<DVector<f64>> = Vec::new();
    let mut combo: Vec<usize> = (0..n).collect();
    loop {
        let a = DMatrix::from_fn(n, n, |r, c| p.lhs()[(combo[r], c)]);
        let b = DVector::from_fn(n, |r, _| p.rhs()[combo[r]]);
        if let Some(x) = a.clone().lu().solve(&b) {
            // Guard against ill-conditioned pseudo-solutions.
            let residual = (&a * &x - &b).amax();
            if residual < 1e-7 && p.contains(&x, 1e-7) {
                let dup = verts.iter().any(|v| (v - &x).amax() < merge_tol);
                if !dup {
                    verts.push(x);
                }
            }
        }
        // Advance the combination lexicographically.
        let mut i = n;
        loop {
            if i == 0 {
                return verts;
            }
            i -= 1;
            if combo[i] + (n - i) < m {
                combo[i] += 1;
                for j in i + 1..n {
                    combo[j] = combo[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Wire format mirroring the published JSON schema.
#[derive(Serialize, Deserialize)]
struct PolytopeFile {
    dim: usize,
    /// Each row is `[h_0, .., h_{dim-1}, c]`.
    rows: Vec<Vec<f64>>,
    normalized: bool,
    empty: bool,
}

impl Serialize for Polytope {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let rows = (0..self.lhs.nrows())
            .map(|i| {
                let mut row: Vec<f64> = (0..self.dim).map(|j| self.lhs[(i, j)]).collect();
                row.push(self.rhs[i]);
                row
            })
            .collect();
        PolytopeFile {
            dim: self.dim,
            rows,
            normalized: self.normalized,
            empty: self.empty,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Polytope {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let f = PolytopeFile::deserialize(d)?;
        if f.empty {
            return Ok(Polytope::empty_set(f.dim));
        }
        let mut lhs = DMatrix::zeros(f.rows.len(), f.dim);
        let mut rhs = DVector::zeros(f.rows.len());
        for (i, row) in f.rows.iter().enumerate() {
            if row.len() != f.dim + 1 {
                return Err(serde::de::Error::custom(format!(
                    "row {i} needs {} entries, got {}",
                    f.dim + 1,
                    row.len()
                )));
            }
            for j in 0..f.dim {
                lhs[(i, j)] = row[j];
            }
            rhs[i] = row[f.dim];
        }
        let mut p = Polytope::from_rows(lhs, rhs).map_err(serde::de::Error::custom)?;
        p.normalized = f.normalized;
        Ok(p)
    }
}
