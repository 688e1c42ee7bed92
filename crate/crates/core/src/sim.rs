//! Ground-truth plant simulation and the closed-loop harness.
//!
//! The plant is an explicit state-space system with an input queue
//! realizing a pure delay; the harness never shows its state to the
//! filter, which works purely from the logged input-output history. Every
//! run is deterministic given the schedule seeds.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::{cbf_filter, h_value, FilterConfig, FilterError};
use crate::geometry::Polytope;
use crate::model::{predict_output, DataDrivenModel, ExtendedState};

/// Disagreement between the model's one-step prediction and the measured
/// output above this aborts a run: the fitted model does not describe the
/// plant driving the loop.
const HISTORY_TOL: f64 = 1e-6;
/// Measured extended states whose barrier falls below this abort the run
/// as a safety violation.
const BARRIER_FLOOR: f64 = -1e-8;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("bad schedule: {0}")]
    Schedule(String),
    #[error("filter reported an uncertifiable state at step {step}")]
    FilterInfeasible { step: usize, log: SimLog },
    #[error("filter failed at step {step}: {message}")]
    Filter { step: usize, message: String },
    #[error("model prediction missed the measured output by {deviation:.3e} at step {step}")]
    HistoryMismatch {
        step: usize,
        deviation: f64,
        log: SimLog,
    },
    #[error("measured state left the certified set at step {step} (h = {h:.3e})")]
    SafetyViolation { step: usize, h: f64, log: SimLog },
}

/// Discrete-time LTI plant with a pure input delay realized as a queue.
#[derive(Debug, Clone)]
pub struct StateSpacePlant {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c_out: DMatrix<f64>,
    input_delay: usize,
    state: DVector<f64>,
    pending: VecDeque<DVector<f64>>,
}

impl StateSpacePlant {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c_out: DMatrix<f64>,
        input_delay: usize,
    ) -> Result<Self, SimError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(SimError::Shape("state matrix must be square".into()));
        }
        if b.nrows() != n || c_out.ncols() != n {
            return Err(SimError::Shape(format!(
                "input matrix has {} rows and output matrix {} columns; state dim is {n}",
                b.nrows(),
                c_out.ncols()
            )));
        }
        let m = b.ncols();
        let pending = (0..input_delay).map(|_| DVector::zeros(m)).collect();
        Ok(Self {
            a,
            b,
            c_out,
            input_delay,
            state: DVector::zeros(n),
            pending,
        })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn p(&self) -> usize {
        self.c_out.nrows()
    }

    pub fn input_delay(&self) -> usize {
        self.input_delay
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.state
    }

    /// Back to the origin with an all-zero delay queue.
    pub fn reset(&mut self) {
        self.state.fill(0.0);
        for slot in &mut self.pending {
            slot.fill(0.0);
        }
    }
}

/// Advance one tick: observe `y = c x` first (the plant is strictly
/// proper), then apply the input that entered the queue `input_delay`
/// ticks ago.
pub fn plant_step(plant: &mut StateSpacePlant, u: &DVector<f64>) -> DVector<f64> {
    assert_eq!(u.len(), plant.m(), "input dimension mismatch");
    let y = &plant.c_out * &plant.state;
    plant.pending.push_back(u.clone());
    let effective = plant
        .pending
        .pop_front()
        .expect("queue holds at least the new input");
    plant.state = &plant.a * &plant.state + &plant.b * &effective;
    y
}

/// Drive the plant open-loop and pack the last `t_ini` measured pairs
/// into an extended state.
pub fn warmup_history(
    plant: &mut StateSpacePlant,
    inputs: &[DVector<f64>],
    t_ini: usize,
) -> Result<ExtendedState, SimError> {
    if inputs.len() < t_ini {
        return Err(SimError::Shape(format!(
            "warm-up needs at least {t_ini} inputs, got {}",
            inputs.len()
        )));
    }
    let outputs: Vec<DVector<f64>> = inputs.iter().map(|u| plant_step(plant, u)).collect();
    ExtendedState::from_history(inputs, &outputs, t_ini).map_err(|e| SimError::Shape(e.to_string()))
}

mod mat_serde {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(serde::de::Error::custom("ragged feedback gain"));
        }
        Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
    }
}

/// One way of producing the nominal input stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    /// Uniform draws on `[-amplitude, amplitude]`, each held for
    /// `hold_steps` ticks. Deterministic in the seed.
    PiecewiseRandom {
        hold_steps: usize,
        amplitude: f64,
        seed: u64,
    },
    /// Linear feedback on the extended state, `u = -gain xi`.
    StaticFeedback {
        #[serde(with = "mat_serde")]
        gain: DMatrix<f64>,
    },
    /// A fixed vector every tick.
    Constant { value: Vec<f64> },
}

impl Generator {
    fn evaluate(&self, offset: usize, xi: &ExtendedState) -> Result<DVector<f64>, SimError> {
        match self {
            Generator::PiecewiseRandom {
                hold_steps,
                amplitude,
                seed,
            } => {
                if *hold_steps == 0 {
                    return Err(SimError::Schedule("hold_steps must be positive".into()));
                }
                let block = (offset / hold_steps) as u64;
                let mut rng =
                    ChaCha8Rng::seed_from_u64(seed ^ block.wrapping_mul(0x9e37_79b9_7f4a_7c15));
                Ok(DVector::from_fn(xi.m(), |_, _| {
                    rng.random_range(-*amplitude..=*amplitude)
                }))
            }
            Generator::StaticFeedback { gain } => {
                if gain.ncols() != xi.dim() {
                    return Err(SimError::Shape(format!(
                        "feedback gain has {} columns, state dim is {}",
                        gain.ncols(),
                        xi.dim()
                    )));
                }
                Ok(-(gain * xi.as_vector()))
            }
            Generator::Constant { value } => Ok(DVector::from_vec(value.clone())),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Segment {
    /// First step this segment covers.
    pub start: usize,
    /// One past the last covered step.
    pub end: usize,
    pub generator: Generator,
}

/// Piecewise nominal-input plan. Segments tile `[0, end)` with no gaps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NominalSchedule {
    segments: Vec<Segment>,
}

impl NominalSchedule {
    pub fn new(segments: Vec<Segment>) -> Result<Self, SimError> {
        let mut expected_start = 0usize;
        for (i, seg) in segments.iter().enumerate() {
            if seg.start != expected_start {
                return Err(SimError::Schedule(format!(
                    "segment {i} starts at {} but the previous one ends at {expected_start}",
                    seg.start
                )));
            }
            if seg.end <= seg.start {
                return Err(SimError::Schedule(format!(
                    "segment {i} is empty or reversed"
                )));
            }
            expected_start = seg.end;
        }
        Ok(Self { segments })
    }

    /// A single generator covering `[0, end)`.
    pub fn single(end: usize, generator: Generator) -> Result<Self, SimError> {
        Self::new(vec![Segment {
            start: 0,
            end,
            generator,
        }])
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Last covered step plus one.
    pub fn horizon(&self) -> usize {
        self.segments.last().map_or(0, |s| s.end)
    }

    pub fn evaluate(&self, step: usize, xi: &ExtendedState) -> Result<DVector<f64>, SimError> {
        let seg = self
            .segments
            .iter()
            .find(|s| s.start <= step && step < s.end)
            .ok_or_else(|| {
                SimError::Schedule(format!("step {step} is outside the scheduled range"))
            })?;
        seg.generator.evaluate(step - seg.start, xi)
    }
}

/// Provenance stamped into a log's header.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: u64,
    pub config_hash: String,
    pub sample_time_s: f64,
}

impl Default for RunMeta {
    fn default() -> Self {
        Self {
            seed: 0,
            config_hash: String::new(),
            sample_time_s: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRow {
    pub step: usize,
    pub time_s: f64,
    pub u_nominal: Vec<f64>,
    pub u_applied: Vec<f64>,
    pub y: Vec<f64>,
    /// Barrier value of the state the filter certified against.
    pub h: f64,
    pub lambda: f64,
    pub qp_status: String,
}

/// Closed-loop trace, one row per completed step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimLog {
    pub meta: RunMeta,
    pub m: usize,
    pub p: usize,
    pub rows: Vec<SimRow>,
}

impl SimLog {
    fn new(meta: RunMeta, m: usize, p: usize) -> Self {
        Self {
            meta,
            m,
            p,
            rows: Vec::new(),
        }
    }

    pub fn min_h(&self) -> f64 {
        self.rows.iter().map(|r| r.h).fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs_input(&self) -> f64 {
        self.rows
            .iter()
            .flat_map(|r| r.u_applied.iter())
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    pub fn max_abs_output(&self) -> f64 {
        self.rows
            .iter()
            .flat_map(|r| r.y.iter())
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    /// First step at which the applied input differs from the nominal by
    /// more than `tol`; `None` when the filter never intervened.
    pub fn first_intervention(&self, tol: f64) -> Option<usize> {
        self.rows
            .iter()
            .find(|r| {
                r.u_nominal
                    .iter()
                    .zip(&r.u_applied)
                    .any(|(a, b)| (a - b).abs() > tol)
            })
            .map(|r| r.step)
    }

    /// The full log as CSV text, header comments first. Formatting is
    /// canonical so identical runs produce identical bytes.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# seed = {}", self.meta.seed);
        let _ = writeln!(out, "# config_hash = {}", self.meta.config_hash);
        let _ = writeln!(out, "# sample_time_s = {}", self.meta.sample_time_s);
        out.push_str("step,time_s");
        for j in 0..self.m {
            let _ = write!(out, ",u_nominal_{j}");
        }
        for j in 0..self.m {
            let _ = write!(out, ",u_applied_{j}");
        }
        for j in 0..self.p {
            let _ = write!(out, ",y_{j}");
        }
        out.push_str(",h,lambda,qp_status\n");
        for r in &self.rows {
            let _ = write!(out, "{},{}", r.step, r.time_s);
            for v in &r.u_nominal {
                let _ = write!(out, ",{v}");
            }
            for v in &r.u_applied {
                let _ = write!(out, ",{v}");
            }
            for v in &r.y {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{},{},{}", r.h, r.lambda, r.qp_status);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_csv_string())
    }
}

/// Run the certified loop for `steps` ticks.
///
/// Each tick: the schedule proposes a nominal, the filter certifies it
/// against `safe_set`, the plant applies the certified input, and the
/// extended state is rebuilt from measured data only. A model whose
/// one-step prediction drifts from the measurements, an uncertifiable
/// state, or a measured barrier below the floor aborts the run; the error
/// carries the partial log, whose last row is the offending step.
#[allow(clippy::too_many_arguments)]
pub fn run_closed_loop(
    plant: &mut StateSpacePlant,
    model: &DataDrivenModel,
    safe_set: &Polytope,
    cfg: &FilterConfig,
    schedule: &NominalSchedule,
    steps: usize,
    xi_init: ExtendedState,
    meta: RunMeta,
) -> Result<SimLog, SimError> {
    if plant.m() != model.m() || plant.p() != model.p() {
        return Err(SimError::Shape(format!(
            "plant is {}-in {}-out, model is {}-in {}-out",
            plant.m(),
            plant.p(),
            model.m(),
            model.p()
        )));
    }
    if xi_init.dim() != model.dim() {
        return Err(SimError::Shape(format!(
            "initial state dim {} vs model dim {}",
            xi_init.dim(),
            model.dim()
        )));
    }
    if steps > 0 && schedule.horizon() < steps {
        return Err(SimError::Schedule(format!(
            "schedule covers {} steps, run wants {steps}",
            schedule.horizon()
        )));
    }
    let sample_time = meta.sample_time_s;
    let mut log = SimLog::new(meta, model.m(), model.p());
    let mut xi = xi_init;
    for step in 0..steps {
        let u_nominal = schedule.evaluate(step, &xi)?;
        let result = match cbf_filter(model, safe_set, cfg, &xi, &u_nominal) {
            Ok(r) => r,
            Err(FilterError::Infeasible { .. }) => {
                return Err(SimError::FilterInfeasible { step, log })
            }
            Err(e) => {
                return Err(SimError::Filter {
                    step,
                    message: e.to_string(),
                })
            }
        };
        let predicted = predict_output(model, &xi);
        let y = plant_step(plant, &result.u_safe);
        let deviation = (&predicted - &y).amax();
        log.rows.push(SimRow {
            step,
            time_s: step as f64 * sample_time,
            u_nominal: u_nominal.as_slice().to_vec(),
            u_applied: result.u_safe.as_slice().to_vec(),
            y: y.as_slice().to_vec(),
            h: result.h_before,
            lambda: result.lambda,
            qp_status: result.status.clone(),
        });
        if deviation > HISTORY_TOL {
            return Err(SimError::HistoryMismatch {
                step,
                deviation,
                log,
            });
        }
        xi.push_pair(&result.u_safe, &y);
        let h_next = h_value(safe_set, &xi).map_err(|e| SimError::Shape(e.to_string()))?;
        if h_next < BARRIER_FLOOR {
            return Err(SimError::SafetyViolation {
                step,
                h: h_next,
                log,
            });
        }
    }
    Ok(log)
}
