//! Shared fixture and independent oracles for the acceptance suite.
//!
//! The oracles deliberately avoid the library's own geometry and solver
//! paths: vertices come from brute-force row-triple intersection, QP minima
//! from exhaustive active-subset enumeration, and the reference predictor
//! from the closed-form difference equation of the benchmark plant.

// Compiled into every test binary; not all of them use every helper.
#![allow(dead_code)]

use std::sync::OnceLock;

use nalgebra::{dmatrix, DMatrix, DVector};

use dcbf::data::{excitation, partition, TrajectoryDataset};
use dcbf::geometry::{box_polytope, extended_constraints, invariant_set, Polytope};
use dcbf::model::{fit_model, DataDrivenModel};
use dcbf::sim::{plant_step, StateSpacePlant};

/// Second-order lag with a two-step input delay; the benchmark plant for
/// the whole suite.
pub fn time_delay_plant() -> StateSpacePlant {
    StateSpacePlant::new(
        dmatrix![1.0, 0.1; 0.0, 1.0],
        dmatrix![0.0; 0.1],
        dmatrix![1.0, 0.0],
        2,
    )
    .unwrap()
}

/// Closed-form one-step prediction for the benchmark plant, eliminating the
/// internal state: y_t = 2 y_{t-1} - y_{t-2} + 0.01 u_{t-4}.
pub fn arx_next(y1: f64, y2: f64, u4: f64) -> f64 {
    2.0 * y1 - y2 + 0.01 * u4
}

/// Feed an input matrix column by column, collecting outputs.
pub fn drive(plant: &mut StateSpacePlant, u: &DMatrix<f64>) -> DMatrix<f64> {
    let cols: Vec<DVector<f64>> = (0..u.ncols())
        .map(|t| plant_step(plant, &u.column(t).into_owned()))
        .collect();
    DMatrix::from_fn(plant.p(), cols.len(), |i, t| cols[t][i])
}

pub const HISTORY: usize = 5;
pub const DATASET_LEN: usize = 17;
pub const EXCITATION_SEED: u64 = 0;

pub struct TimeDelayFixture {
    pub dataset: TrajectoryDataset,
    pub model: DataDrivenModel,
    pub u_box: Polytope,
    pub ambient: Polytope,
    pub set: Polytope,
    pub iterations: usize,
    pub converged: bool,
}

static FIXTURE: OnceLock<TimeDelayFixture> = OnceLock::new();

/// Identification dataset, fitted model, and certified set for the
/// benchmark plant, built once per test binary.
pub fn time_delay() -> &'static TimeDelayFixture {
    FIXTURE.get_or_init(|| {
        let mut plant = time_delay_plant();
        let u = excitation(1, DATASET_LEN, EXCITATION_SEED);
        let y = drive(&mut plant, &u);
        let dataset = TrajectoryDataset::new(u, y);
        let model = fit_model(&partition(&dataset, HISTORY).unwrap()).unwrap();
        let u_box = box_polytope(&[-1.0], &[1.0]).unwrap();
        let y_box = box_polytope(&[-1.0], &[1.0]).unwrap();
        let ambient = extended_constraints(&u_box, &y_box, HISTORY).unwrap();
        let report = invariant_set(&model, &u_box, &ambient, 60, 1e-9).unwrap();
        TimeDelayFixture {
            dataset,
            model,
            u_box,
            ambient,
            set: report.set,
            iterations: report.iterations,
            converged: report.converged,
        }
    })
}

fn combinations(m: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut pick = vec![0usize; k];
    fn recurse(
        m: usize,
        k: usize,
        start: usize,
        depth: usize,
        pick: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if depth == k {
            out.push(pick.clone());
            return;
        }
        for i in start..m {
            pick[depth] = i;
            recurse(m, k, i + 1, depth + 1, pick, out);
        }
    }
    recurse(m, k, 0, 0, &mut pick, &mut out);
    out
}

/// Every vertex of `{x : lhs x <= rhs}` by intersecting all choices of
/// `dim` rows and keeping the feasible intersection points. Quadratic in
/// nothing it should be: this is the slow, obviously-correct reference.
pub fn brute_force_vertices(lhs: &DMatrix<f64>, rhs: &DVector<f64>, tol: f64) -> Vec<DVector<f64>> {
    let n = lhs.ncols();
    let m = lhs.nrows();
    let mut verts: Vec<DVector<f64>> = Vec::new();
    for combo in combinations(m, n) {
        let a = DMatrix::from_fn(n, n, |r, c| lhs[(combo[r], c)]);
        let b = DVector::from_fn(n, |r, _| rhs[combo[r]]);
        let Some(x) = a.clone().full_piv_lu().solve(&b) else {
            continue;
        };
        if (&a * &x - &b).amax() > 1e-9 {
            continue;
        }
        if (lhs * &x - rhs).max() > tol {
            continue;
        }
        if verts.iter().all(|v| (v - &x).amax() > 1e-7) {
            verts.push(x);
        }
    }
    verts
}

/// Global minimum of `0.5 z' q z + lin' z` over `{z : lhs z <= rhs}` by
/// solving the equality-constrained problem on every subset of rows of
/// size at most `dim` and taking the best feasible candidate. Valid for
/// strictly convex objectives over nonempty bounded feasible sets.
pub fn subset_qp_minimum(
    q: &DMatrix<f64>,
    lin: &DVector<f64>,
    lhs: &DMatrix<f64>,
    rhs: &DVector<f64>,
) -> Option<(DVector<f64>, f64)> {
    let n = lin.len();
    let m = lhs.nrows();
    let mut best: Option<(DVector<f64>, f64)> = None;
    for k in 0..=n.min(m) {
        for combo in combinations(m, k) {
            let mut kkt = DMatrix::<f64>::zeros(n + k, n + k);
            kkt.view_mut((0, 0), (n, n)).copy_from(q);
            for (r, &i) in combo.iter().enumerate() {
                for c in 0..n {
                    kkt[(n + r, c)] = lhs[(i, c)];
                    kkt[(c, n + r)] = lhs[(i, c)];
                }
            }
            let mut target = DVector::<f64>::zeros(n + k);
            for j in 0..n {
                target[j] = -lin[j];
            }
            for (r, &i) in combo.iter().enumerate() {
                target[n + r] = rhs[i];
            }
            let Some(sol) = kkt.clone().full_piv_lu().solve(&target) else {
                continue;
            };
            if (&kkt * &sol - &target).amax() > 1e-7 {
                continue;
            }
            let z = DVector::from_fn(n, |j, _| sol[j]);
            if (lhs * &z - rhs).max() > 1e-8 {
                continue;
            }
            let objective = 0.5 * (q * &z).dot(&z) + lin.dot(&z);
            if best.as_ref().is_none_or(|(_, f)| objective < *f) {
                best = Some((z, objective));
            }
        }
    }
    best
}
