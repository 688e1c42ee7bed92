//! The five pipeline stages. Every artifact embeds the config hash; every
//! stage is deterministic given the config file and the seed flag.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use dcbf::data::{check_pe, excitation, partition, PeReport, TrajectoryDataset};
use dcbf::filter::{cbf_filter, h_value, mpsf, safe_input_hyperplane, FilterConfig};
use dcbf::geometry::{boundary_points, exterior_points, interior_points};
use dcbf::geometry::{
    box_polytope, enumerate_vertices, extended_constraints, invariant_set, GeomError, Polytope,
};
use dcbf::model::{fit_model, DataDrivenModel, ExtendedState, ModelError};
use dcbf::sim::{
    plant_step, run_closed_loop, Generator, NominalSchedule, RunMeta, Segment, SimError,
};

use crate::config::Config;
use crate::CliError;

const DATASET_FILE: &str = "dataset.csv";
const PE_FILE: &str = "pe_report.json";
const MODEL_FILE: &str = "model.json";
const SET_FILE: &str = "invariant_set.json";
const ITERATION_FILE: &str = "invariant_report.json";
const PROJECTION_2D_FILE: &str = "projection_2d.csv";
const PROJECTION_3D_FILE: &str = "projection_3d.csv";
const SIMLOG_FILE: &str = "simlog.csv";
const SUMMARY_FILE: &str = "sim_summary.json";
const VERIFY_FILE: &str = "verify_report.json";

const SEED_MIX: u64 = 0x9e37_79b9_7f4a_7c15;

pub struct Ctx {
    pub cfg: Config,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn u_box(&self) -> Result<Polytope, CliError> {
        box_polytope(&self.cfg.bounds.u_min, &self.cfg.bounds.u_max)
            .map_err(|e| CliError::Validation(format!("input bounds: {e}")))
    }

    fn y_box(&self) -> Result<Polytope, CliError> {
        box_polytope(&self.cfg.bounds.y_min, &self.cfg.bounds.y_max)
            .map_err(|e| CliError::Validation(format!("output bounds: {e}")))
    }

    fn ambient(&self) -> Result<Polytope, CliError> {
        extended_constraints(&self.u_box()?, &self.y_box()?, self.cfg.t_ini)
            .map_err(|e| CliError::Validation(e.to_string()))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Validation(format!("serialize {}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text)
        .map_err(|e| CliError::Validation(format!("write {}: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Validation(format!("bad artifact {}: {e}", path.display())))
}

fn stale_warning(kind: &str, artifact_hash: &str, current: &str) {
    if artifact_hash != current {
        eprintln!("warning: {kind} was produced under a different config (hash mismatch)");
    }
}

#[derive(Serialize, Deserialize)]
struct PeArtifact {
    config_hash: String,
    seed: u64,
    #[serde(flatten)]
    report: PeReport,
}

#[derive(Serialize, Deserialize)]
struct ModelArtifact {
    config_hash: String,
    model: DataDrivenModel,
}

#[derive(Serialize, Deserialize)]
struct SetArtifact {
    config_hash: String,
    set: Polytope,
}

#[derive(Serialize, Deserialize)]
struct IterationArtifact {
    config_hash: String,
    iterations: usize,
    converged: bool,
    row_counts: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
pub struct SimSummary {
    pub config_hash: String,
    pub seed: u64,
    pub lambda_min: f64,
    pub steps_completed: usize,
    pub max_abs_u: f64,
    pub max_abs_y: f64,
    pub min_h: Option<f64>,
    pub infeasible_count: usize,
    pub first_intervention: Option<usize>,
    pub failed_at_step: Option<usize>,
}

#[derive(Serialize, Deserialize)]
pub struct PropertyResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Serialize, Deserialize)]
pub struct VerifyArtifact {
    pub config_hash: String,
    pub seed: u64,
    pub all_pass: bool,
    pub properties: Vec<PropertyResult>,
}

pub fn generate_data(ctx: &Ctx) -> Result<(), CliError> {
    let seed = ctx.seed.unwrap_or(ctx.cfg.excitation_seed);
    let mut plant = ctx.cfg.plant.build()?;
    let u = excitation(plant.m(), ctx.cfg.dataset_length, seed);
    let outputs: Vec<DVector<f64>> = (0..u.ncols())
        .map(|t| plant_step(&mut plant, &u.column(t).into_owned()))
        .collect();
    let y = DMatrix::from_fn(plant.p(), outputs.len(), |i, t| outputs[t][i]);
    let ds = TrajectoryDataset::new(u, y);
    ds.write_csv(&ctx.path(DATASET_FILE))
        .map_err(|e| CliError::Validation(e.to_string()))?;

    let report = check_pe(&ds, ctx.cfg.t_ini).map_err(|e| CliError::Validation(e.to_string()))?;
    write_json(
        &ctx.path(PE_FILE),
        &PeArtifact {
            config_hash: ctx.config_hash.clone(),
            seed,
            report: report.clone(),
        },
    )?;
    println!(
        "dataset: {} samples, stacked rank {}, input hankel rank {} of {}",
        ds.len(),
        report.stacked_rank,
        report.input_hankel_rank,
        report.required_order
    );
    if !report.satisfied {
        return Err(CliError::Numerical(
            "excitation is not persistently exciting; see pe_report.json".into(),
        ));
    }
    Ok(())
}

pub fn build_model(ctx: &Ctx, dataset: Option<PathBuf>) -> Result<(), CliError> {
    let path = dataset.unwrap_or_else(|| ctx.path(DATASET_FILE));
    let ds = TrajectoryDataset::read_csv(&path).map_err(|e| CliError::Validation(e.to_string()))?;
    let part = partition(&ds, ctx.cfg.t_ini).map_err(|e| CliError::Validation(e.to_string()))?;
    let model = match fit_model(&part) {
        Ok(m) => m,
        Err(e @ ModelError::InconsistentData { .. }) => {
            return Err(CliError::Numerical(e.to_string()))
        }
        Err(e) => return Err(CliError::Validation(e.to_string())),
    };
    println!(
        "model: {} -> {} over {} past steps, fit residual {:.3e}",
        model.m(),
        model.p(),
        model.t_ini(),
        model.residual()
    );
    write_json(
        &ctx.path(MODEL_FILE),
        &ModelArtifact {
            config_hash: ctx.config_hash.clone(),
            model,
        },
    )
}

fn load_model(ctx: &Ctx, path: Option<PathBuf>) -> Result<DataDrivenModel, CliError> {
    let path = path.unwrap_or_else(|| ctx.path(MODEL_FILE));
    let artifact: ModelArtifact = read_json(&path)?;
    stale_warning("model", &artifact.config_hash, &ctx.config_hash);
    let model = artifact.model;
    if model.m() != ctx.cfg.bounds.u_min.len() || model.p() != ctx.cfg.bounds.y_min.len() {
        return Err(CliError::Validation(format!(
            "model is {}-in {}-out but the config bounds are {}-in {}-out",
            model.m(),
            model.p(),
            ctx.cfg.bounds.u_min.len(),
            ctx.cfg.bounds.y_min.len()
        )));
    }
    Ok(model)
}

fn load_set(ctx: &Ctx, path: Option<PathBuf>, dim: usize) -> Result<Polytope, CliError> {
    let path = path.unwrap_or_else(|| ctx.path(SET_FILE));
    let artifact: SetArtifact = read_json(&path)?;
    stale_warning("certified set", &artifact.config_hash, &ctx.config_hash);
    if artifact.set.dim() != dim {
        return Err(CliError::Validation(format!(
            "certified set lives in dimension {} but the model needs {dim}",
            artifact.set.dim()
        )));
    }
    Ok(artifact.set)
}

fn write_vertex_csv(path: &Path, header: &[&str], verts: &[DVector<f64>]) -> Result<(), CliError> {
    let mut text = header.join(",");
    text.push('\n');
    for v in verts {
        let row: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    std::fs::write(path, text)
        .map_err(|e| CliError::Validation(format!("write {}: {e}", path.display())))
}

/// Counterclockwise vertex order for a plot-ready 2-D polygon.
fn sort_polygon(mut verts: Vec<DVector<f64>>) -> Vec<DVector<f64>> {
    if verts.is_empty() {
        return verts;
    }
    let n = verts.len() as f64;
    let cx = verts.iter().map(|v| v[0]).sum::<f64>() / n;
    let cy = verts.iter().map(|v| v[1]).sum::<f64>() / n;
    verts.sort_by(|a, b| {
        let ta = (a[1] - cy).atan2(a[0] - cx);
        let tb = (b[1] - cy).atan2(b[0] - cx);
        ta.total_cmp(&tb)
    });
    verts
}

pub fn invariant_set_cmd(ctx: &Ctx, model_path: Option<PathBuf>) -> Result<(), CliError> {
    let model = load_model(ctx, model_path)?;
    let u_set = ctx.u_box()?;
    let ambient = ctx.ambient()?;
    let report = match invariant_set(
        &model,
        &u_set,
        &ambient,
        ctx.cfg.invariant_set.max_iter,
        ctx.cfg.invariant_set.tol,
    ) {
        Ok(r) => r,
        Err(GeomError::EmptyResult) => {
            return Err(CliError::Numerical(
                "no certifiable region: the backward iteration emptied out".into(),
            ))
        }
        Err(e) => return Err(CliError::Numerical(e.to_string())),
    };

    write_json(
        &ctx.path(SET_FILE),
        &SetArtifact {
            config_hash: ctx.config_hash.clone(),
            set: report.set.clone(),
        },
    )?;
    write_json(
        &ctx.path(ITERATION_FILE),
        &IterationArtifact {
            config_hash: ctx.config_hash.clone(),
            iterations: report.iterations,
            converged: report.converged,
            row_counts: report.row_counts.clone(),
        },
    )?;

    let set = &report.set;
    let dim = set.dim();
    let (m, p, t_ini) = (model.m(), model.p(), model.t_ini());
    let (i, j, labels) = if p * t_ini >= 2 {
        (dim - 1, dim - 2, ["y_t_minus_1", "y_t_minus_2"])
    } else {
        (m * t_ini - 1, dim - 1, ["u_t_minus_1", "y_t_minus_1"])
    };
    let flat = set
        .project(&[i, j])
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    let verts = sort_polygon(enumerate_vertices(&flat, 1e-7));
    write_vertex_csv(&ctx.path(PROJECTION_2D_FILE), &labels, &verts)?;
    if dim >= 3 && p * t_ini >= 2 {
        let solid = set
            .project(&[m * t_ini - 1, dim - 1, dim - 2])
            .map_err(|e| CliError::Numerical(e.to_string()))?;
        let mut v3 = enumerate_vertices(&solid, 1e-7);
        v3.sort_by(|a, b| {
            a.iter()
                .zip(b.iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        write_vertex_csv(
            &ctx.path(PROJECTION_3D_FILE),
            &["u_t_minus_1", "y_t_minus_1", "y_t_minus_2"],
            &v3,
        )?;
    }

    println!(
        "certified set: {} rows in R^{dim}, {} iterations, converged: {}",
        set.n_rows(),
        report.iterations,
        report.converged
    );
    if !report.converged {
        return Err(CliError::NonConvergence(format!(
            "iteration budget {} exhausted before mutual containment",
            ctx.cfg.invariant_set.max_iter
        )));
    }
    Ok(())
}

/// Run seeds perturb every random segment so one config can fan out into
/// independent closed-loop realizations.
fn reseeded_schedule(segments: &[Segment], run_seed: u64) -> Result<NominalSchedule, CliError> {
    let mixed: Vec<Segment> = segments
        .iter()
        .map(|s| {
            let generator = match &s.generator {
                Generator::PiecewiseRandom {
                    hold_steps,
                    amplitude,
                    seed,
                } => Generator::PiecewiseRandom {
                    hold_steps: *hold_steps,
                    amplitude: *amplitude,
                    seed: seed.wrapping_add(run_seed.wrapping_mul(SEED_MIX)),
                },
                other => other.clone(),
            };
            Segment {
                start: s.start,
                end: s.end,
                generator,
            }
        })
        .collect();
    NominalSchedule::new(mixed).map_err(|e| CliError::Validation(e.to_string()))
}

pub fn simulate(
    ctx: &Ctx,
    model_path: Option<PathBuf>,
    set_path: Option<PathBuf>,
) -> Result<(), CliError> {
    let model = load_model(ctx, model_path)?;
    let set = load_set(ctx, set_path, model.dim())?;
    let mut plant = ctx.cfg.plant.build()?;
    if plant.m() != model.m() || plant.p() != model.p() {
        return Err(CliError::Validation(
            "plant and model dimensions disagree".into(),
        ));
    }
    let run_seed = ctx.seed.unwrap_or(ctx.cfg.scenario.seed);
    let schedule = reseeded_schedule(&ctx.cfg.scenario.schedule, run_seed)?;
    let filter_cfg =
        FilterConfig::new(ctx.cfg.filter.lambda_min, ctx.u_box()?).with_beta(ctx.cfg.filter.beta);
    let xi0 = ExtendedState::zeros(model.m(), model.p(), model.t_ini());
    let meta = RunMeta {
        seed: run_seed,
        config_hash: ctx.config_hash.clone(),
        sample_time_s: ctx.cfg.scenario.sample_time_s,
    };

    let outcome = run_closed_loop(
        &mut plant,
        &model,
        &set,
        &filter_cfg,
        &schedule,
        ctx.cfg.scenario.steps,
        xi0,
        meta,
    );
    let (log, failure, infeasible) = match outcome {
        Ok(log) => (log, None, 0),
        Err(SimError::FilterInfeasible { step, log }) => (log, Some(step), 1),
        Err(SimError::HistoryMismatch {
            step,
            deviation,
            log,
        }) => {
            log.write_csv(&ctx.path(SIMLOG_FILE))
                .map_err(|e| CliError::Validation(e.to_string()))?;
            return Err(CliError::Numerical(format!(
                "model and plant disagree by {deviation:.3e} at step {step}; partial log written"
            )));
        }
        Err(SimError::SafetyViolation { step, h, log }) => {
            log.write_csv(&ctx.path(SIMLOG_FILE))
                .map_err(|e| CliError::Validation(e.to_string()))?;
            return Err(CliError::Numerical(format!(
                "measured state left the certified set at step {step} (h = {h:.3e}); partial log written"
            )));
        }
        Err(e @ (SimError::Shape(_) | SimError::Schedule(_))) => {
            return Err(CliError::Validation(e.to_string()))
        }
        Err(e) => return Err(CliError::Numerical(e.to_string())),
    };

    log.write_csv(&ctx.path(SIMLOG_FILE))
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let summary = SimSummary {
        config_hash: ctx.config_hash.clone(),
        seed: run_seed,
        lambda_min: ctx.cfg.filter.lambda_min,
        steps_completed: log.rows.len(),
        max_abs_u: log.max_abs_input(),
        max_abs_y: log.max_abs_output(),
        min_h: (!log.rows.is_empty()).then(|| log.min_h()),
        infeasible_count: infeasible,
        first_intervention: log.first_intervention(1e-9),
        failed_at_step: failure,
    };
    write_json(&ctx.path(SUMMARY_FILE), &summary)?;
    println!(
        "simulated {} steps: max |u| = {:.6}, max |y| = {:.6}, min h = {}",
        summary.steps_completed,
        summary.max_abs_u,
        summary.max_abs_y,
        summary.min_h.map_or("n/a".into(), |h| format!("{h:.3e}")),
    );
    if let Some(step) = failure {
        return Err(CliError::Numerical(format!(
            "filter found no certifiable input at step {step}; partial log written"
        )));
    }
    Ok(())
}

pub fn verify(
    ctx: &Ctx,
    model_path: Option<PathBuf>,
    set_path: Option<PathBuf>,
) -> Result<(), CliError> {
    let model = load_model(ctx, model_path)?;
    let set = load_set(ctx, set_path, model.dim())?;
    let u_set = ctx.u_box()?;
    let ambient = ctx.ambient()?;
    let seed = ctx.seed.unwrap_or(ctx.cfg.scenario.seed);
    let mut properties = Vec::new();

    let interior = interior_points(&set, 1000, seed)
        .map_err(|e| CliError::Numerical(format!("interior sampling: {e}")))?;

    // Invariance: every sampled state admits an input keeping the loop in
    // the set, checked as nonemptiness of the safe-input region.
    let mut certified = 0usize;
    for point in &interior {
        let xi = ExtendedState::new(model.m(), model.p(), model.t_ini(), point.clone())
            .map_err(|e| CliError::Validation(e.to_string()))?;
        let (mut lhs, mut rhs) = safe_input_hyperplane(&model, &set, &xi)
            .map_err(|e| CliError::Numerical(e.to_string()))?;
        let extra = u_set.n_rows();
        let offset = lhs.nrows();
        lhs = lhs.insert_rows(offset, extra, 0.0);
        rhs = rhs.insert_rows(offset, extra, 0.0);
        lhs.view_mut((offset, 0), (extra, model.m()))
            .copy_from(u_set.lhs());
        rhs.rows_mut(offset, extra).copy_from(u_set.rhs());
        let region =
            Polytope::from_rows(lhs, rhs).map_err(|e| CliError::Numerical(e.to_string()))?;
        if region.chebyshev().is_some() {
            certified += 1;
        }
    }
    properties.push(PropertyResult {
        name: "sampled_invariance".into(),
        pass: certified == interior.len(),
        detail: format!(
            "{certified}/{} states admit a certified input",
            interior.len()
        ),
    });

    let h_of = |v: &DVector<f64>| -> Result<f64, CliError> {
        let xi = ExtendedState::new(model.m(), model.p(), model.t_ini(), v.clone())
            .map_err(|e| CliError::Validation(e.to_string()))?;
        h_value(&set, &xi).map_err(|e| CliError::Numerical(e.to_string()))
    };

    let mut interior_ok = 0usize;
    for v in &interior {
        if h_of(v)? > 0.0 {
            interior_ok += 1;
        }
    }
    properties.push(PropertyResult {
        name: "barrier_positive_interior".into(),
        pass: interior_ok == interior.len(),
        detail: format!(
            "{interior_ok}/{} interior samples have h > 0",
            interior.len()
        ),
    });

    let boundary = boundary_points(&set, 100, seed ^ 0xb0)
        .map_err(|e| CliError::Numerical(format!("boundary sampling: {e}")))?;
    let mut boundary_ok = 0usize;
    for v in &boundary {
        if h_of(v)?.abs() <= 1e-9 {
            boundary_ok += 1;
        }
    }
    properties.push(PropertyResult {
        name: "barrier_zero_boundary".into(),
        pass: boundary_ok == boundary.len(),
        detail: format!(
            "{boundary_ok}/{} boundary samples have |h| <= 1e-9",
            boundary.len()
        ),
    });

    let exterior = exterior_points(&set, 1000, seed ^ 0xe0)
        .map_err(|e| CliError::Numerical(format!("exterior sampling: {e}")))?;
    let mut exterior_ok = 0usize;
    for v in &exterior {
        if h_of(v)? < 0.0 {
            exterior_ok += 1;
        }
    }
    properties.push(PropertyResult {
        name: "barrier_negative_exterior".into(),
        pass: exterior_ok == exterior.len(),
        detail: format!(
            "{exterior_ok}/{} exterior samples have h < 0",
            exterior.len()
        ),
    });

    // The one-step planner and the fully decaying filter must pick the
    // same input from every certified state. Nominals range over twice the
    // input box so both saturated and interior projections get exercised.
    let projection_cfg = FilterConfig::new(1.0, u_set.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5d);
    let mut max_dev = 0.0f64;
    let mut battery_failures = 0usize;
    for point in interior.iter().take(100) {
        let xi = ExtendedState::new(model.m(), model.p(), model.t_ini(), point.clone())
            .map_err(|e| CliError::Validation(e.to_string()))?;
        let u_l = DVector::from_fn(model.m(), |i, _| {
            rng.random_range(2.0 * ctx.cfg.bounds.u_min[i]..=2.0 * ctx.cfg.bounds.u_max[i])
        });
        let a = cbf_filter(&model, &set, &projection_cfg, &xi, &u_l);
        let b = mpsf(&model, &ambient, &u_set, &set, 1, &xi, &u_l);
        match (a, b) {
            (Ok(fa), Ok(fb)) => {
                max_dev = max_dev.max((&fa.u_safe - &fb.u_safe).amax());
            }
            _ => battery_failures += 1,
        }
    }
    properties.push(PropertyResult {
        name: "filter_mpsf_equivalence".into(),
        pass: battery_failures == 0 && max_dev <= 1e-6,
        detail: format!(
            "max input deviation {max_dev:.3e} over {} states, {battery_failures} solver failures",
            interior.len().min(100)
        ),
    });

    let all_pass = properties.iter().all(|p| p.pass);
    for p in &properties {
        println!(
            "{} {}: {}",
            if p.pass { "PASS" } else { "FAIL" },
            p.name,
            p.detail
        );
    }
    write_json(
        &ctx.path(VERIFY_FILE),
        &VerifyArtifact {
            config_hash: ctx.config_hash.clone(),
            seed,
            all_pass,
            properties,
        },
    )?;
    if !all_pass {
        return Err(CliError::Numerical(
            "verification failed; see verify_report.json".into(),
        ));
    }
    Ok(())
}
