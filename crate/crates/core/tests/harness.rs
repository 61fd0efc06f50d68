use std::fs;
use std::sync::Arc;

use pic_core::controllers::{mppi_plan_step, Controller, MppiConfig, StepOutput};
use pic_core::harness::{
    cartpole_holds_upright, compare_controllers, run_closed_loop, run_experiment, strip_timing,
    ControllerKind, ExperimentSpec, LogRow, PlantNoise, Scenario, TrajectoryLog, COMPARISON_COLUMNS,
};
use pic_core::models::{LqCost, LqParams, ScalarIntegrator};
use pic_core::noise::derive_seed;
use pic_core::{shift_receding_horizon, ControlSequence, CostModel, Error, NoiseConfig, Result};

fn short(scenario: Scenario, controller: ControllerKind, duration: f64) -> ExperimentSpec {
    let mut spec = ExperimentSpec::preset(scenario);
    spec.experiment.controller = controller;
    spec.experiment.duration = duration;
    spec
}

#[test]
fn same_spec_writes_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = short(Scenario::CartpoleSwingup, ControllerKind::Mppi, 0.4);
    spec.mppi.num_samples = 128;
    let mut texts = Vec::new();
    for sub in ["a", "b"] {
        spec.experiment.out_dir = Some(dir.path().join(sub).to_string_lossy().into_owned());
        let out = run_experiment(&spec).unwrap();
        let base = dir.path().join(sub).join(out.summary.label.clone());
        let csv = fs::read_to_string(base.with_extension("csv")).unwrap();
        assert!(base.with_extension("summary.json").exists());
        texts.push(strip_timing(&csv));
    }
    assert_eq!(texts[0], texts[1]);
    assert!(texts[0].lines().count() > 10);
}

#[test]
fn log_header_and_summary_keys() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = short(Scenario::LqScalar, ControllerKind::Mppi, 0.2);
    spec.mppi.num_samples = 200;
    spec.experiment.out_dir = Some(dir.path().to_string_lossy().into_owned());
    spec.experiment.label = Some("lq".into());
    run_experiment(&spec).unwrap();

    let csv = fs::read_to_string(dir.path().join("lq.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("# pic-log v1"));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(
        header,
        [
            "step", "time", "x0", "u0", "stage_cost", "cost_to_go", "ess", "weight_entropy",
            "max_weight", "free_energy", "cost_mean", "cost_min", "cost_std", "num_samples",
            "temperature", "plan_ms"
        ]
    );
    assert_eq!(lines.count(), 4);

    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("lq.summary.json")).unwrap()).unwrap();
    let keys: Vec<&str> = json.as_object().unwrap().keys().map(String::as_str).collect();
    for k in [
        "schema_version", "label", "scenario", "controller", "seed", "steps", "completed_steps",
        "duration", "success", "failure", "accumulated_cost", "max_tracking_error", "mean_abs_du",
        "mean_plan_ms", "p95_plan_ms", "min_ess", "mean_ess", "final_state", "metrics",
    ] {
        assert!(keys.contains(&k), "missing {k}");
    }
    assert_eq!(json["scenario"], "lq_scalar");
    assert_eq!(json["controller"], "mppi");
    assert_eq!(json["schema_version"], 1);
}

/// MPPI that keeps the rollout costs of every plan.
struct Recorder {
    config: MppiConfig,
    cost: CostModel,
    nominal: ControlSequence,
    costs: Vec<Vec<f64>>,
}

impl Controller for Recorder {
    fn name(&self) -> &str {
        "recorder"
    }

    fn step(&mut self, t: f64, x: &[f64]) -> Result<StepOutput> {
        let seed = derive_seed(5, &[self.costs.len() as u64]);
        let plan = mppi_plan_step(&ScalarIntegrator, &self.cost, &self.nominal, x, t, &self.config, seed, None)?;
        self.costs.push(plan.initial_costs.clone());
        self.nominal = shift_receding_horizon(&plan.controls);
        Ok(StepOutput {
            control: plan.controls.first().to_vec(),
            diagnostics: Some(plan.diagnostics),
        })
    }
}

#[test]
fn logged_cost_to_go_is_free_energy_of_the_batch() {
    let cost = CostModel::new(
        Arc::new(LqCost {
            params: LqParams::default(),
        }),
        1,
    );
    let config = MppiConfig {
        num_samples: 300,
        horizon: 20,
        dt: 0.05,
        temperature: 0.8,
        noise: NoiseConfig::gaussian(vec![1.0]),
        ..Default::default()
    };
    let mut rec = Recorder {
        nominal: ControlSequence::zeros(20, 1, 0.05).unwrap(),
        config: config.clone(),
        cost: cost.clone(),
        costs: Vec::new(),
    };
    let run = run_closed_loop(&mut rec, &ScalarIntegrator, &cost, &[1.5], 0.0, 0.05, 6, &PlantNoise::Off);
    assert!(run.error.is_none());
    let lambda = config.temperature;
    for (row, g) in run.log.rows().iter().zip(&rec.costs) {
        let mean = g.iter().map(|c| (-c / lambda).exp()).sum::<f64>() / g.len() as f64;
        let direct = -lambda * mean.ln();
        assert!((row.cost_to_go - direct).abs() < 1e-9, "{} vs {direct}", row.cost_to_go);
        let d = row.diagnostics.as_ref().unwrap();
        assert_eq!(row.cost_to_go, d.free_energy);
        assert_eq!(d.num_samples, 300);
    }
}

#[test]
fn csv_round_trip_keeps_every_value() {
    let mut spec = short(Scenario::CartpoleSwingup, ControllerKind::LogMppi, 0.2);
    spec.mppi.num_samples = 64;
    let out = run_experiment(&spec).unwrap();
    let text = out.log.to_csv_string().unwrap();
    let back = TrajectoryLog::parse(&text).unwrap();
    assert_eq!(back, out.log);
}

#[test]
fn truncated_log_is_rejected() {
    let mut log = TrajectoryLog::new(1, 1);
    log.push(LogRow {
        step: 0,
        time: 0.0,
        state: vec![1.0],
        control: vec![0.5],
        stage_cost: 0.1,
        cost_to_go: f64::NAN,
        diagnostics: None,
        plan_ms: 0.0,
    })
    .unwrap();
    let text = log.to_csv_string().unwrap();
    let cut = text.trim_end().rsplit_once(',').unwrap().0;
    assert!(matches!(TrajectoryLog::parse(cut), Err(Error::MalformedLog(_))));
    assert!(matches!(
        TrajectoryLog::parse(&text.replace("# pic-log v1", "# other")),
        Err(Error::MalformedLog(_))
    ));
}

#[test]
fn lq_first_control_within_tolerance() {
    let mut spec = short(Scenario::LqScalar, ControllerKind::Mppi, 0.05);
    spec.experiment.seed = 7;
    let out = run_experiment(&spec).unwrap();
    let rel = out.summary.metrics["first_control_rel_error"];
    assert!(rel < 0.10, "relative error {rel}");
    assert!(out.summary.success);
}

#[test]
fn planning_failure_gives_failed_summary() {
    let mut spec = short(Scenario::LqScalar, ControllerKind::Mppi, 0.5);
    spec.mppi.num_samples = 50;
    spec.lq.x0 = 1e200;
    let out = run_experiment(&spec).unwrap();
    assert!(!out.summary.success);
    assert_eq!(out.summary.completed_steps, out.log.len());
    assert!(out.summary.completed_steps < out.summary.steps);
    let failure = out.summary.failure.unwrap();
    assert!(failure.contains("step 0"), "{failure}");
}

#[test]
fn compare_identical_specs_gives_identical_rows() {
    let mut spec = short(Scenario::CartpoleSwingup, ControllerKind::Mppi, 0.3);
    spec.mppi.num_samples = 64;
    let mut a = spec.clone();
    a.experiment.label = Some("first".into());
    let mut b = spec;
    b.experiment.label = Some("second".into());
    let (table, _) = compare_controllers(&[a, b]).unwrap();
    assert_eq!(table.rows.len(), 2);
    let (r0, r1) = (&table.rows[0], &table.rows[1]);
    assert_eq!(r0.accumulated_cost, r1.accumulated_cost);
    assert_eq!(r0.max_tracking_error, r1.max_tracking_error);
    assert_eq!(r0.mean_abs_du, r1.mean_abs_du);
    assert_eq!(r0.success, r1.success);
    let csv = table.to_csv().unwrap();
    assert_eq!(csv.lines().next().unwrap(), COMPARISON_COLUMNS.join(","));
}

#[test]
fn compare_seed_sweep_adds_mean_row() {
    let mut specs = Vec::new();
    for seed in 1..=3 {
        let mut s = short(Scenario::CemQuadratic, ControllerKind::Cem, 1.0);
        s.experiment.seed = seed;
        s.experiment.label = Some(format!("cem_s{seed}"));
        specs.push(s);
    }
    let (table, _) = compare_controllers(&specs).unwrap();
    assert_eq!(table.rows.len(), 4);
    let mean = &table.rows[3];
    assert_eq!(mean.label, "cem_mean");
    assert_eq!(mean.seed, None);
    let expect = table.rows[..3].iter().map(|r| r.accumulated_cost).sum::<f64>() / 3.0;
    assert!((mean.accumulated_cost - expect).abs() < 1e-12 * (1.0 + expect.abs()));
}

#[test]
fn compare_rejects_mixed_scenarios() {
    let a = short(Scenario::LqScalar, ControllerKind::Mppi, 0.1);
    let b = short(Scenario::CartpoleSwingup, ControllerKind::Mppi, 0.1);
    assert!(matches!(compare_controllers(&[a, b]), Err(Error::Config(_))));
}

fn angle_log(angles: &[f64], dt: f64) -> TrajectoryLog {
    let mut log = TrajectoryLog::new(4, 1);
    for (j, th) in angles.iter().enumerate() {
        log.push(LogRow {
            step: j,
            time: j as f64 * dt,
            state: vec![0.0, 0.0, *th, 0.0],
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
fn cartpole_success_looks_only_at_the_final_window() {
    let tau = std::f64::consts::TAU;
    // 10 steps of 0.1 s; the window covers t >= 0.7.
    let mut angles = vec![3.0; 7];
    angles.extend([0.05, tau + 0.02, -0.04]);
    let log = angle_log(&angles, 0.1);
    let (ok, worst) = cartpole_holds_upright(&log, &[0.0, 0.0, 0.01, 0.0], 1.0, 0.3, 0.1);
    assert!(ok);
    assert!((worst - 0.05).abs() < 1e-12);

    let (ok, _) = cartpole_holds_upright(&log, &[0.0, 0.0, 0.2, 0.0], 1.0, 0.3, 0.1);
    assert!(!ok, "final state outside tolerance");
    angles[8] = 0.15;
    let (ok, _) = cartpole_holds_upright(&angle_log(&angles, 0.1), &[0.0; 4], 1.0, 0.3, 0.1);
    assert!(!ok);
}
