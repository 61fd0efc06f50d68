//! Scenario setup, experiment execution, summaries and comparisons.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::controllers::{
    cem_trajopt, CemController, Controller, GaussianSearch, LinearFeaturePolicy, MppiController,
    Objective, Pi2Controller, PolicyKind, PolicyParams,
};
use crate::error::{Error, Result};
use crate::harness::log::{LogRow, TrajectoryLog};
use crate::harness::sim::{run_closed_loop, PlantNoise};
use crate::harness::spec::{ControllerKind, ExperimentSpec, Scenario, TrackKind};
use crate::models::{
    lq_analytic_oracle, wrap_angle, Bicycle, CartPole, CartPoleCost, LqCost, LqParams,
    ObstacleSet, ScalarIntegrator, Track, TrackingTask,
};
use crate::noise::derive_seed;
use crate::system::{ControlCostForm, CostModel, Dynamics};
use crate::weights::SamplingDiagnostics;

/// Version of the JSON summary layout.
pub const SUMMARY_VERSION: u32 = 1;

/// Per-run metrics written as the JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub label: String,
    pub scenario: Scenario,
    pub controller: ControllerKind,
    pub seed: u64,
    pub steps: usize,
    pub completed_steps: usize,
    pub duration: f64,
    pub success: bool,
    /// Set when the run stopped early.
    pub failure: Option<String>,
    pub accumulated_cost: f64,
    /// Largest tracking error: cross-track (bicycle), `|theta|` (cart-pole),
    /// `|x|` (LQ); absent for the synthetic quadratic.
    pub max_tracking_error: Option<f64>,
    /// Mean `|u_j - u_{j-1}|` over consecutive steps.
    pub mean_abs_du: Option<f64>,
    pub mean_plan_ms: f64,
    pub p95_plan_ms: f64,
    pub min_ess: Option<f64>,
    pub mean_ess: Option<f64>,
    pub final_state: Vec<f64>,
    pub metrics: BTreeMap<String, f64>,
}

/// Log plus summary of one run.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub log: TrajectoryLog,
    pub summary: Summary,
}

impl ExperimentOutcome {
    /// Writes `<label>.csv` and `<label>.summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir)?;
        let csv = dir.join(format!("{}.csv", self.summary.label));
        let json = dir.join(format!("{}.summary.json", self.summary.label));
        self.log.save(&csv)?;
        fs::write(&json, serde_json::to_string_pretty(&self.summary)? + "\n")?;
        Ok((csv, json))
    }
}

/// Model, task cost and start state of a dynamic scenario.
pub struct ScenarioSetup {
    pub model: Arc<dyn Dynamics>,
    pub cost: CostModel,
    pub x0: Vec<f64>,
    pub track: Option<Track>,
    pub obstacles: Option<ObstacleSet>,
}

fn lq_params(spec: &ExperimentSpec) -> LqParams {
    LqParams {
        state_weight: spec.lq.state_weight,
        control_weight: spec.lq.control_weight,
        terminal_weight: spec.lq.terminal_weight,
    }
}

/// Builds the track of the bicycle scenario.
pub fn build_track(spec: &ExperimentSpec) -> Result<Track> {
    let t = &spec.bicycle.track;
    match t.kind {
        TrackKind::Stadium => Track::stadium(t.straight, t.radius, t.spacing, t.half_width),
        TrackKind::Csv => {
            let path = t
                .path
                .as_ref()
                .ok_or_else(|| Error::config("bicycle.track.path is required"))?;
            Track::from_csv(Path::new(path), t.closed, t.half_width)
        }
    }
}

/// Model and cost for a dynamic scenario; `None` for the synthetic quadratic.
pub fn build_scenario(spec: &ExperimentSpec) -> Result<Option<ScenarioSetup>> {
    let setup = match spec.experiment.scenario {
        Scenario::CartpoleSwingup => {
            let c = &spec.cartpole;
            let model = Arc::new(CartPole::new(c.physics.clone()));
            let cost = CostModel::new(
                Arc::new(CartPoleCost {
                    weights: c.weights.clone(),
                }),
                1,
            )
            .with_diagonal_weight(&[c.control_weight]);
            ScenarioSetup {
                model,
                cost,
                x0: c.initial_state.clone(),
                track: None,
                obstacles: None,
            }
        }
        Scenario::BicycleTrack => {
            let b = &spec.bicycle;
            let track = build_track(spec)?;
            let obstacles = ObstacleSet::new(b.obstacles.clone())?;
            let x0 = match &b.initial_state {
                Some(x) => x.clone(),
                None => {
                    let p = track.points()[0];
                    let heading = track.project(p).heading;
                    vec![p[0], p[1], heading]
                }
            };
            let task = TrackingTask {
                track: track.clone(),
                obstacles: obstacles.clone(),
                weights: b.weights.clone(),
                terminal_scale: b.terminal_scale,
            };
            let cost = CostModel::new(Arc::new(task), 2)
                .with_diagonal_weight(&b.control_weight)
                .with_control_reference(vec![b.reference_speed, 0.0]);
            ScenarioSetup {
                model: Arc::new(Bicycle::new(b.model.clone())),
                cost,
                x0,
                track: Some(track),
                obstacles: Some(obstacles),
            }
        }
        Scenario::LqScalar => {
            let params = lq_params(spec);
            let cost = CostModel::new(Arc::new(LqCost { params }), 1)
                .with_diagonal_weight(&[spec.lq.control_weight]);
            ScenarioSetup {
                model: Arc::new(ScalarIntegrator),
                cost,
                x0: vec![spec.lq.x0],
                track: None,
                obstacles: None,
            }
        }
        Scenario::CemQuadratic => return Ok(None),
    };
    Ok(Some(setup))
}

fn build_controller(spec: &ExperimentSpec, setup: &ScenarioSetup) -> Result<Box<dyn Controller>> {
    let seed = derive_seed(spec.experiment.seed, &[0x706c_616e]);
    let kind = spec.experiment.controller;
    Ok(match kind {
        ControllerKind::Mppi | ControllerKind::SmoothMppi | ControllerKind::LogMppi => {
            let mut cost = setup.cost.clone();
            if spec.experiment.scenario == Scenario::LqScalar {
                cost = cost.with_control_cost_form(ControlCostForm::PathIntegral);
            }
            Box::new(
                MppiController::new(
                    setup.model.clone(),
                    cost,
                    spec.mppi.config_for(kind),
                    None,
                    seed,
                )?
                .with_label(kind.as_str()),
            )
        }
        ControllerKind::Cem => Box::new(CemController::new(
            setup.model.clone(),
            setup.cost.clone(),
            spec.cem.clone(),
            seed,
        )?),
        ControllerKind::Pi2Cma => {
            let policy = Arc::new(LinearFeaturePolicy::state_feedback(1, 1));
            let initial = PolicyParams::isotropic(
                policy,
                PolicyKind::LinearFeature,
                vec![spec.lq.policy_initial_gain],
                spec.lq.policy_initial_std,
            )?;
            Box::new(Pi2Controller::train(
                setup.model.clone(),
                &setup.cost,
                &initial,
                &spec.pi2,
                seed,
            )?)
        }
    })
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn timing_stats(log: &TrajectoryLog) -> (f64, f64) {
    let mut t: Vec<f64> = log.rows().iter().map(|r| r.plan_ms).collect();
    if t.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = t.iter().sum::<f64>() / t.len() as f64;
    t.sort_by(f64::total_cmp);
    (mean, percentile(&t, 0.95))
}

fn ess_stats(log: &TrajectoryLog) -> (Option<f64>, Option<f64>) {
    let ess: Vec<f64> = log
        .rows()
        .iter()
        .filter_map(|r| r.diagnostics.as_ref().map(|d| d.ess))
        .collect();
    if ess.is_empty() {
        return (None, None);
    }
    let min = ess.iter().copied().fold(f64::INFINITY, f64::min);
    (Some(min), Some(ess.iter().sum::<f64>() / ess.len() as f64))
}

/// Mean Euclidean norm of consecutive control differences.
pub fn mean_abs_control_change(log: &TrajectoryLog) -> Option<f64> {
    let rows = log.rows();
    if rows.len() < 2 || log.control_dim() == 0 {
        return None;
    }
    let total: f64 = rows
        .windows(2)
        .map(|w| {
            w[1].control
                .iter()
                .zip(&w[0].control)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Some(total / (rows.len() - 1) as f64)
}

/// Cart-pole success: `|wrap(theta)| < tolerance` at every logged state with
/// `time >= duration - window`, and at the final state.
pub fn cartpole_holds_upright(
    log: &TrajectoryLog,
    final_state: &[f64],
    duration: f64,
    window: f64,
    tolerance: f64,
) -> (bool, f64) {
    let start = duration - window - 1e-9;
    let angles = log
        .rows()
        .iter()
        .filter(|r| r.time >= start)
        .map(|r| wrap_angle(r.state[2]).abs())
        .chain(std::iter::once(wrap_angle(final_state[2]).abs()));
    let worst = angles.fold(0.0, f64::max);
    (worst < tolerance, worst)
}

/// Track progress and safety of a bicycle log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingReport {
    /// Signed arc length travelled along the track.
    pub progress: f64,
    pub max_cross_track: f64,
    /// Steps with a center distance at or below an obstacle radius.
    pub collisions: usize,
    /// Smallest `distance - radius` over the run.
    pub min_clearance: f64,
}

pub fn tracking_report(
    log: &TrajectoryLog,
    final_state: &[f64],
    track: &Track,
    obstacles: &ObstacleSet,
    dt: f64,
) -> TrackingReport {
    let length = track.length();
    let mut states: Vec<(f64, &[f64])> = log.rows().iter().map(|r| (r.time, &r.state[..])).collect();
    let t_end = log.rows().last().map_or(0.0, |r| r.time + dt);
    states.push((t_end, final_state));
    let mut progress = 0.0;
    let mut prev_s: Option<f64> = None;
    let mut max_ct: f64 = 0.0;
    let mut collisions = 0;
    let mut min_clearance = f64::INFINITY;
    for (t, x) in states {
        let p = [x[0], x[1]];
        let proj = track.project(p);
        max_ct = max_ct.max(proj.cross_track.abs());
        if let Some(s0) = prev_s {
            let mut ds = proj.arc_length - s0;
            if track.is_closed() {
                if ds > length / 2.0 {
                    ds -= length;
                } else if ds < -length / 2.0 {
                    ds += length;
                }
            }
            progress += ds;
        }
        prev_s = Some(proj.arc_length);
        let c = obstacles.clearance(t, p);
        min_clearance = min_clearance.min(c);
        if c <= 0.0 {
            collisions += 1;
        }
    }
    TrackingReport {
        progress,
        max_cross_track: max_ct,
        collisions,
        min_clearance,
    }
}

/// Logged cost over the first `horizon` steps plus the terminal cost there.
fn closed_loop_cost(setup: &ScenarioSetup, log: &TrajectoryLog, final_state: &[f64], horizon: usize) -> f64 {
    let rows = log.rows();
    let running: f64 = rows.iter().take(horizon).map(|r| r.stage_cost).sum();
    let end = rows.get(horizon).map_or(final_state, |r| &r.state[..]);
    running + setup.cost.terminal_cost(end)
}

fn run_quadratic(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    struct Quadratic<'a>(&'a [f64]);
    impl Objective for Quadratic<'_> {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn evaluate(&self, p: &[f64]) -> f64 {
            p.iter().zip(self.0).map(|(a, b)| (a - b) * (a - b)).sum()
        }
    }
    let q = &spec.quadratic;
    let objective = Quadratic(&q.target);
    let init = GaussianSearch::isotropic(q.initial_mean.clone(), q.initial_std);
    let started = Instant::now();
    let mut cfg = spec.cem.clone();
    // The log needs every iteration's costs, so iterate one step at a time.
    cfg.max_iters = 1;
    let mut search = init;
    let mut log = TrajectoryLog::new(q.target.len(), 0);
    let mut converged = false;
    for it in 0..spec.cem.max_iters {
        let seed = if spec.cem.common_random_numbers {
            spec.experiment.seed
        } else {
            derive_seed(spec.experiment.seed, &[it as u64])
        };
        let res = cem_trajopt(&objective, &search, &cfg, seed)?;
        let diagnostics = SamplingDiagnostics::from_costs(&res.final_costs, spec.cem.temperature)?;
        let change = res.history[0].mean_change;
        search = res.search;
        let elapsed = started.elapsed().as_secs_f64() * 1e3;
        log.push(LogRow {
            step: it,
            time: it as f64,
            state: search.mean.as_slice().to_vec(),
            control: vec![],
            stage_cost: res.history[0].threshold,
            cost_to_go: diagnostics.free_energy,
            diagnostics: Some(diagnostics),
            plan_ms: elapsed,
        })?;
        if change < spec.cem.tolerance {
            converged = true;
            break;
        }
    }
    let mean = search.mean.as_slice().to_vec();
    let err = mean
        .iter()
        .zip(&q.target)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let mut metrics = BTreeMap::new();
    metrics.insert("mean_error".into(), err);
    metrics.insert("iterations".into(), log.len() as f64);
    metrics.insert("converged".into(), if converged { 1.0 } else { 0.0 });
    let (min_ess, mean_ess) = ess_stats(&log);
    let (mean_ms, p95_ms) = timing_stats(&log);
    let summary = Summary {
        schema_version: SUMMARY_VERSION,
        label: spec.label(),
        scenario: spec.experiment.scenario,
        controller: spec.experiment.controller,
        seed: spec.experiment.seed,
        steps: spec.cem.max_iters,
        completed_steps: log.len(),
        duration: spec.experiment.duration,
        success: err < q.tolerance,
        failure: None,
        accumulated_cost: objective.evaluate(&mean),
        max_tracking_error: None,
        mean_abs_du: None,
        mean_plan_ms: mean_ms,
        p95_plan_ms: p95_ms,
        min_ess,
        mean_ess,
        final_state: mean,
        metrics,
    };
    Ok(ExperimentOutcome { log, summary })
}

/// Runs `spec` and, when `experiment.out_dir` is set, writes its log and
/// summary there. A planning failure yields a failed summary over the
/// partial log instead of an error.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let outcome = match build_scenario(spec)? {
        None => run_quadratic(spec)?,
        Some(setup) => run_dynamic(spec, &setup)?,
    };
    if let Some(dir) = &spec.experiment.out_dir {
        outcome.write(Path::new(dir))?;
    }
    Ok(outcome)
}

fn run_dynamic(spec: &ExperimentSpec, setup: &ScenarioSetup) -> Result<ExperimentOutcome> {
    let dt = spec.control_dt();
    let steps = spec.sim_steps();
    let mut controller = build_controller(spec, setup)?;
    let plant_noise = if spec.experiment.plant_noise {
        PlantNoise::On {
            config: spec.mppi.noise.clone(),
            seed: derive_seed(spec.experiment.seed, &[0x0070_6c61_6e74]),
        }
    } else {
        PlantNoise::Off
    };
    // Logged stage costs use the task cost without planner-only terms.
    let run = run_closed_loop(
        controller.as_mut(),
        setup.model.as_ref(),
        &setup.cost,
        &setup.x0,
        0.0,
        dt,
        steps,
        &plant_noise,
    );
    let log = run.log;
    let final_state = run.final_state;
    let failure = run.error.map(|e| e.to_string());
    let accumulated_cost: f64 = log.rows().iter().map(|r| r.stage_cost).sum::<f64>()
        + setup.cost.terminal_cost(&final_state);
    let (mean_ms, p95_ms) = timing_stats(&log);
    let (min_ess, mean_ess) = ess_stats(&log);
    let mut metrics = BTreeMap::new();
    let (criterion, tracking) = match spec.experiment.scenario {
        Scenario::CartpoleSwingup => {
            let c = &spec.cartpole;
            let (ok, worst) = cartpole_holds_upright(
                &log,
                &final_state,
                spec.experiment.duration,
                c.hold_window,
                c.angle_tolerance,
            );
            metrics.insert("hold_window_max_abs_angle".into(), worst);
            metrics.insert("final_abs_angle".into(), wrap_angle(final_state[2]).abs());
            let max_angle = log
                .rows()
                .iter()
                .map(|r| wrap_angle(r.state[2]).abs())
                .fold(0.0, f64::max);
            (ok, Some(max_angle))
        }
        Scenario::BicycleTrack => {
            let b = &spec.bicycle;
            let track = setup.track.as_ref().expect("bicycle setup has a track");
            let obstacles = setup.obstacles.as_ref().expect("bicycle setup has obstacles");
            let rep = tracking_report(&log, &final_state, track, obstacles, dt);
            let needed = if track.is_closed() {
                b.laps * track.length()
            } else {
                track.length() - 1e-6
            };
            metrics.insert("progress".into(), rep.progress);
            metrics.insert("required_progress".into(), needed);
            metrics.insert("collisions".into(), rep.collisions as f64);
            metrics.insert("min_clearance".into(), rep.min_clearance);
            let ok = rep.progress >= needed
                && rep.collisions == 0
                && rep.max_cross_track < b.cross_track_limit;
            (ok, Some(rep.max_cross_track))
        }
        Scenario::LqScalar => {
            let params = lq_params(spec);
            let horizon = match spec.experiment.controller {
                ControllerKind::Cem => spec.cem.horizon,
                ControllerKind::Pi2Cma => spec.pi2.horizon,
                _ => spec.mppi.horizon,
            };
            let sol = lq_analytic_oracle(&params, horizon, dt);
            let x0 = spec.lq.x0;
            let optimal_cost = sol.optimal_cost(x0);
            metrics.insert("optimal_cost".into(), optimal_cost);
            let ok = if spec.experiment.controller == ControllerKind::Pi2Cma {
                let policy_cost = closed_loop_cost(setup, &log, &final_state, horizon);
                let rel = (policy_cost - optimal_cost) / optimal_cost;
                metrics.insert("policy_cost".into(), policy_cost);
                metrics.insert("policy_cost_rel_excess".into(), rel);
                rel < spec.lq.cost_tolerance
            } else {
                let oracle = sol.first_control(x0);
                let first = log.rows().first().map_or(f64::NAN, |r| r.control[0]);
                let rel = ((first - oracle) / oracle).abs();
                metrics.insert("first_control".into(), first);
                metrics.insert("oracle_first_control".into(), oracle);
                metrics.insert("first_control_rel_error".into(), rel);
                rel < spec.lq.control_tolerance
            };
            let max_x = log
                .rows()
                .iter()
                .map(|r| r.state[0].abs())
                .chain(std::iter::once(final_state[0].abs()))
                .fold(0.0, f64::max);
            (ok, Some(max_x))
        }
        Scenario::CemQuadratic => unreachable!("handled separately"),
    };
    let summary = Summary {
        schema_version: SUMMARY_VERSION,
        label: spec.label(),
        scenario: spec.experiment.scenario,
        controller: spec.experiment.controller,
        seed: spec.experiment.seed,
        steps,
        completed_steps: log.len(),
        duration: spec.experiment.duration,
        success: failure.is_none() && criterion,
        failure,
        accumulated_cost,
        max_tracking_error: tracking,
        mean_abs_du: mean_abs_control_change(&log),
        mean_plan_ms: mean_ms,
        p95_plan_ms: p95_ms,
        min_ess,
        mean_ess,
        final_state,
        metrics,
    };
    Ok(ExperimentOutcome { log, summary })
}

/// Column order of comparison tables.
pub const COMPARISON_COLUMNS: [&str; 10] = [
    "label",
    "controller",
    "seed",
    "success",
    "accumulated_cost",
    "max_tracking_error",
    "mean_abs_du",
    "mean_plan_ms",
    "p95_plan_ms",
    "completed_steps",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub controller: String,
    /// Empty for aggregate rows.
    pub seed: Option<u64>,
    /// 1 or 0 per run; the success fraction in aggregate rows.
    pub success: f64,
    pub accumulated_cost: f64,
    pub max_tracking_error: f64,
    pub mean_abs_du: f64,
    pub mean_plan_ms: f64,
    pub p95_plan_ms: f64,
    pub completed_steps: f64,
}

impl ComparisonRow {
    pub fn from_summary(s: &Summary) -> Self {
        ComparisonRow {
            label: s.label.clone(),
            controller: s.controller.to_string(),
            seed: Some(s.seed),
            success: if s.success { 1.0 } else { 0.0 },
            accumulated_cost: s.accumulated_cost,
            max_tracking_error: s.max_tracking_error.unwrap_or(f64::NAN),
            mean_abs_du: s.mean_abs_du.unwrap_or(f64::NAN),
            mean_plan_ms: s.mean_plan_ms,
            p95_plan_ms: s.p95_plan_ms,
            completed_steps: s.completed_steps as f64,
        }
    }

    fn numbers(&self) -> [f64; 7] {
        [
            self.success,
            self.accumulated_cost,
            self.max_tracking_error,
            self.mean_abs_du,
            self.mean_plan_ms,
            self.p95_plan_ms,
            self.completed_steps,
        ]
    }

    /// Column-wise mean of `rows`, labelled `label`.
    pub fn aggregate(label: &str, controller: &str, rows: &[ComparisonRow]) -> Self {
        let n = rows.len() as f64;
        let mut acc = [0.0; 7];
        for r in rows {
            for (a, v) in acc.iter_mut().zip(r.numbers()) {
                *a += v;
            }
        }
        let mean = acc.map(|v| v / n);
        ComparisonRow {
            label: label.to_string(),
            controller: controller.to_string(),
            seed: None,
            success: mean[0],
            accumulated_cost: mean[1],
            max_tracking_error: mean[2],
            mean_abs_du: mean[3],
            mean_plan_ms: mean[4],
            p95_plan_ms: mean[5],
            completed_steps: mean[6],
        }
    }

    fn cells(&self) -> Vec<String> {
        let f = |v: f64| if v.is_nan() { String::new() } else { format!("{v}") };
        let mut c = vec![
            self.label.clone(),
            self.controller.clone(),
            self.seed.map_or(String::new(), |s| s.to_string()),
        ];
        c.extend(self.numbers().iter().map(|v| f(*v)));
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub scenario: Scenario,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(COMPARISON_COLUMNS)?;
        for r in &self.rows {
            w.write_record(r.cells())?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::MalformedLog(e.to_string()))
    }

    /// Fixed-width text rendering.
    pub fn to_text(&self) -> String {
        let short = |v: &str| match v.parse::<f64>() {
            Ok(x) if v.contains('.') || v.contains('e') => format!("{x:.4}"),
            _ => v.to_string(),
        };
        let mut table: Vec<Vec<String>> = vec![COMPARISON_COLUMNS.iter().map(|s| s.to_string()).collect()];
        for r in &self.rows {
            table.push(r.cells().iter().map(|c| short(c)).collect());
        }
        let widths: Vec<usize> = (0..COMPARISON_COLUMNS.len())
            .map(|j| table.iter().map(|row| row[j].len()).max().unwrap_or(0))
            .collect();
        let mut out = format!("scenario: {}\n", self.scenario);
        for row in table {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        out
    }
}

/// Runs every spec and tabulates one row per run. When a label occurs with
/// more than one seed, a mean row follows that label's runs.
pub fn compare_controllers(specs: &[ExperimentSpec]) -> Result<(ComparisonTable, Vec<ExperimentOutcome>)> {
    if specs.len() < 2 {
        return Err(Error::config("comparison needs at least two experiments"));
    }
    let scenario = specs[0].experiment.scenario;
    if let Some(other) = specs.iter().find(|s| s.experiment.scenario != scenario) {
        return Err(Error::config(format!(
            "cannot compare scenario '{}' with '{}'",
            scenario, other.experiment.scenario
        )));
    }
    for s in specs {
        s.validate()?;
    }
    let mut outcomes = Vec::with_capacity(specs.len());
    for s in specs {
        outcomes.push(run_experiment(s)?);
    }
    Ok((tabulate(scenario, specs, &outcomes), outcomes))
}

/// Groups rows by `group` key (the spec label stem) and adds mean rows.
fn tabulate(scenario: Scenario, specs: &[ExperimentSpec], outcomes: &[ExperimentOutcome]) -> ComparisonTable {
    let mut groups: Vec<(String, String, Vec<ComparisonRow>)> = Vec::new();
    for (spec, out) in specs.iter().zip(outcomes) {
        let key = group_key(spec);
        let row = ComparisonRow::from_summary(&out.summary);
        match groups.iter_mut().find(|g| g.0 == key) {
            Some(g) => g.2.push(row),
            None => groups.push((key, spec.experiment.controller.to_string(), vec![row])),
        }
    }
    let mut rows = Vec::new();
    for (key, controller, g) in groups {
        let seeds: std::collections::BTreeSet<_> = g.iter().map(|r| r.seed).collect();
        let aggregate = (seeds.len() > 1).then(|| ComparisonRow::aggregate(&format!("{key}_mean"), &controller, &g));
        rows.extend(g);
        rows.extend(aggregate);
    }
    ComparisonTable { scenario, rows }
}

fn group_key(spec: &ExperimentSpec) -> String {
    match &spec.experiment.label {
        Some(l) => match l.rsplit_once("_s") {
            Some((stem, seed)) if !seed.is_empty() && seed.bytes().all(|b| b.is_ascii_digit()) => stem.to_string(),
            _ => l.clone(),
        },
        None => format!("{}_{}", spec.experiment.scenario, spec.experiment.controller),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log_with_angles(angles: &[f64], dt: f64) -> TrajectoryLog {
        let mut log = TrajectoryLog::new(4, 1);
        for (j, a) in angles.iter().enumerate() {
            log.push(LogRow {
                step: j,
                time: j as f64 * dt,
                state: vec![0.0, 0.0, *a, 0.0],
                control: vec![0.0],
                stage_cost: 0.0,
                cost_to_go: f64::NAN,
                diagnostics: None,
                plan_ms: 0.0,
            })
            .unwrap();
        }
        log
    }

    #[test]
    fn hold_window_semantics() {
        // 10 s at dt = 1: rows at t = 0..9, window covers t >= 8 plus the final state.
        let mut angles = vec![3.0; 8];
        angles.extend([0.05, -0.05]);
        let log = log_with_angles(&angles, 1.0);
        assert!(cartpole_holds_upright(&log, &[0.0, 0.0, 0.02, 0.0], 10.0, 2.0, 0.1).0);
        assert!(!cartpole_holds_upright(&log, &[0.0, 0.0, 0.2, 0.0], 10.0, 2.0, 0.1).0);
        let mut late = angles.clone();
        late[8] = 0.15;
        let log = log_with_angles(&late, 1.0);
        assert!(!cartpole_holds_upright(&log, &[0.0; 4], 10.0, 2.0, 0.1).0);
        // wrapped: 2 pi is upright
        let log = log_with_angles(&[2.0 * std::f64::consts::PI; 10], 1.0);
        assert!(cartpole_holds_upright(&log, &[0.0; 4], 10.0, 2.0, 0.1).0);
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.95), 19.0);
        assert_eq!(percentile(&[4.0], 0.95), 4.0);
    }

    #[test]
    fn aggregate_is_columnwise_mean() {
        let mk = |seed, cost| ComparisonRow {
            label: format!("x_s{seed}"),
            controller: "mppi".into(),
            seed: Some(seed),
            success: if seed == 1 { 1.0 } else { 0.0 },
            accumulated_cost: cost,
            max_tracking_error: 1.0,
            mean_abs_du: 0.5,
            mean_plan_ms: 2.0,
            p95_plan_ms: 3.0,
            completed_steps: 10.0,
        };
        let agg = ComparisonRow::aggregate("x_mean", "mppi", &[mk(1, 2.0), mk(2, 4.0)]);
        assert_eq!(agg.success, 0.5);
        assert_eq!(agg.accumulated_cost, 3.0);
        assert_eq!(agg.seed, None);
    }

    #[test]
    fn quadratic_scenario_succeeds() {
        let spec = ExperimentSpec::preset(Scenario::CemQuadratic);
        let out = run_experiment(&spec).unwrap();
        assert!(out.summary.success, "{:?}", out.summary.metrics);
        assert_eq!(out.log.control_dim(), 0);
    }
}
