//! Experiment specifications and per-scenario presets.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::controllers::{CemConfig, MppiConfig, Pi2Config, WeightingMode};
use crate::error::{Error, Result};
use crate::models::{
    BicycleParams, CartPoleCostWeights, CartPoleParams, MovingObstacle, TrackingWeights,
};
use crate::noise::{NoiseConfig, NoiseKind};
use crate::rollout::DEFAULT_DIVERGENCE_COST;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    #[default]
    CartpoleSwingup,
    BicycleTrack,
    LqScalar,
    CemQuadratic,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::CartpoleSwingup,
        Scenario::BicycleTrack,
        Scenario::LqScalar,
        Scenario::CemQuadratic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::CartpoleSwingup => "cartpole_swingup",
            Scenario::BicycleTrack => "bicycle_track",
            Scenario::LqScalar => "lq_scalar",
            Scenario::CemQuadratic => "cem_quadratic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    #[default]
    Mppi,
    SmoothMppi,
    LogMppi,
    Cem,
    Pi2Cma,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 5] = [
        ControllerKind::Mppi,
        ControllerKind::SmoothMppi,
        ControllerKind::LogMppi,
        ControllerKind::Cem,
        ControllerKind::Pi2Cma,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ControllerKind::Mppi => "mppi",
            ControllerKind::SmoothMppi => "smooth_mppi",
            ControllerKind::LogMppi => "log_mppi",
            ControllerKind::Cem => "cem",
            ControllerKind::Pi2Cma => "pi2_cma",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s)
    }

    pub fn is_mppi(self) -> bool {
        matches!(
            self,
            ControllerKind::Mppi | ControllerKind::SmoothMppi | ControllerKind::LogMppi
        )
    }

    /// Whether this controller can drive `scenario`.
    pub fn supports(self, scenario: Scenario) -> bool {
        match self {
            ControllerKind::Mppi | ControllerKind::SmoothMppi | ControllerKind::LogMppi => {
                scenario != Scenario::CemQuadratic
            }
            ControllerKind::Cem => true,
            ControllerKind::Pi2Cma => scenario == Scenario::LqScalar,
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub scenario: Scenario,
    pub controller: ControllerKind,
    pub seed: u64,
    /// Simulated time in seconds.
    pub duration: f64,
    /// Where the log and summary are written; nothing is written when unset.
    pub out_dir: Option<String>,
    /// Add control-channel process noise to the simulated plant.
    pub plant_noise: bool,
    /// File stem of the outputs; defaults to `<scenario>_<controller>_s<seed>`.
    pub label: Option<String>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            scenario: Scenario::CartpoleSwingup,
            controller: ControllerKind::Mppi,
            seed: 0,
            duration: 10.0,
            out_dir: None,
            plant_noise: false,
            label: None,
        }
    }
}

/// MPPI settings shared by the plain, smooth and log-sampled variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MppiSection {
    pub num_samples: usize,
    pub horizon: usize,
    pub dt: f64,
    pub temperature: f64,
    pub noise: NoiseConfig,
    /// Action-rate weight of plain and log-sampled MPPI.
    pub action_rate_weight: f64,
    /// Action-rate weight used by `smooth_mppi`.
    pub smooth_action_rate_weight: f64,
    pub divergence_cost: f64,
    pub weighting: WeightingMode,
}

impl Default for MppiSection {
    fn default() -> Self {
        let base = MppiConfig::default();
        MppiSection {
            num_samples: base.num_samples,
            horizon: base.horizon,
            dt: base.dt,
            temperature: base.temperature,
            noise: base.noise,
            action_rate_weight: 0.0,
            smooth_action_rate_weight: 1.0,
            divergence_cost: base.divergence_cost,
            weighting: base.weighting,
        }
    }
}

impl MppiSection {
    /// Planner configuration for one of the MPPI variants.
    pub fn config_for(&self, kind: ControllerKind) -> MppiConfig {
        let mut noise = self.noise.clone();
        let mut action_rate_weight = self.action_rate_weight;
        match kind {
            ControllerKind::SmoothMppi => action_rate_weight = self.smooth_action_rate_weight,
            ControllerKind::LogMppi => noise.kind = NoiseKind::NormalLogNormal,
            _ => {}
        }
        MppiConfig {
            num_samples: self.num_samples,
            horizon: self.horizon,
            dt: self.dt,
            temperature: self.temperature,
            noise,
            action_rate_weight,
            divergence_cost: self.divergence_cost,
            weighting: self.weighting,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CartPoleSection {
    pub physics: CartPoleParams,
    pub weights: CartPoleCostWeights,
    /// Diagonal control weight `R`.
    pub control_weight: f64,
    pub initial_state: Vec<f64>,
    /// Success needs `|theta| < angle_tolerance` over the last `hold_window` seconds.
    pub hold_window: f64,
    pub angle_tolerance: f64,
}

impl Default for CartPoleSection {
    fn default() -> Self {
        CartPoleSection {
            physics: CartPoleParams::default(),
            weights: CartPoleCostWeights::default(),
            control_weight: 0.01,
            initial_state: vec![0.0, 0.0, std::f64::consts::PI, 0.0],
            hold_window: 2.0,
            angle_tolerance: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrackKind {
    #[default]
    Stadium,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackSection {
    pub kind: TrackKind,
    pub straight: f64,
    pub radius: f64,
    pub spacing: f64,
    pub half_width: f64,
    /// Waypoint file for `kind = "csv"`.
    pub path: Option<String>,
    pub closed: bool,
}

impl Default for TrackSection {
    fn default() -> Self {
        TrackSection {
            kind: TrackKind::Stadium,
            straight: 12.0,
            radius: 4.0,
            spacing: 0.5,
            half_width: 1.0,
            path: None,
            closed: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BicycleSection {
    pub model: BicycleParams,
    pub weights: TrackingWeights,
    pub terminal_scale: f64,
    /// Forward speed the control cost pulls toward.
    pub reference_speed: f64,
    /// Diagonal control weight on `(v - v_ref, turn)`.
    pub control_weight: Vec<f64>,
    pub track: TrackSection,
    pub obstacles: Vec<MovingObstacle>,
    /// Start state; defaults to the first track point, aligned with the track.
    pub initial_state: Option<Vec<f64>>,
    /// Success needs the max cross-track error below this.
    pub cross_track_limit: f64,
    /// Success needs at least this many laps (or the full length of an open track).
    pub laps: f64,
}

/// Two obstacles sweeping across the straights of the default stadium.
pub fn default_obstacles() -> Vec<MovingObstacle> {
    vec![
        MovingObstacle {
            radius: 0.4,
            waypoints: vec![[0.0, 3.0, -6.5], [5.0, 3.0, -1.5], [10.0, 3.0, -6.5]],
            cyclic: true,
        },
        MovingObstacle {
            radius: 0.4,
            waypoints: vec![[0.0, -2.0, 6.5], [6.0, -2.0, 1.5], [12.0, -2.0, 6.5]],
            cyclic: true,
        },
    ]
}

impl Default for BicycleSection {
    fn default() -> Self {
        BicycleSection {
            model: BicycleParams::default(),
            weights: TrackingWeights::default(),
            terminal_scale: 1.0,
            reference_speed: 1.6,
            control_weight: vec![2.0, 0.2],
            track: TrackSection::default(),
            obstacles: default_obstacles(),
            initial_state: None,
            cross_track_limit: 0.5,
            laps: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LqSection {
    pub state_weight: f64,
    pub control_weight: f64,
    pub terminal_weight: f64,
    pub x0: f64,
    /// Initial feedback gain of the PI²-CMA policy `u = theta x`.
    pub policy_initial_gain: f64,
    pub policy_initial_std: f64,
    /// Success: first-control relative error below this (planners).
    pub control_tolerance: f64,
    /// Success: closed-loop cost within this fraction of optimal (pi2_cma).
    pub cost_tolerance: f64,
}

impl Default for LqSection {
    fn default() -> Self {
        LqSection {
            state_weight: 1.0,
            control_weight: 1.0,
            terminal_weight: 0.0,
            x0: 1.0,
            policy_initial_gain: 0.0,
            policy_initial_std: 1.0,
            control_tolerance: 0.1,
            cost_tolerance: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadraticSection {
    pub target: Vec<f64>,
    pub initial_mean: Vec<f64>,
    pub initial_std: f64,
    /// Success: `max |mean - target|` below this.
    pub tolerance: f64,
}

impl Default for QuadraticSection {
    fn default() -> Self {
        QuadraticSection {
            target: vec![0.7, -1.3],
            initial_mean: vec![0.0, 0.0],
            initial_std: 2.0,
            tolerance: 1e-2,
        }
    }
}

/// Everything needed to run one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub experiment: ExperimentSection,
    pub mppi: MppiSection,
    pub cem: CemConfig,
    pub pi2: Pi2Config,
    pub cartpole: CartPoleSection,
    pub bicycle: BicycleSection,
    pub lq: LqSection,
    pub quadratic: QuadraticSection,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self::preset(Scenario::CartpoleSwingup)
    }
}

impl ExperimentSpec {
    /// Tuned defaults for `scenario` with MPPI as the controller.
    pub fn preset(scenario: Scenario) -> Self {
        let mut spec = ExperimentSpec {
            experiment: ExperimentSection {
                scenario,
                ..Default::default()
            },
            mppi: MppiSection::default(),
            cem: CemConfig::default(),
            pi2: Pi2Config::default(),
            cartpole: CartPoleSection::default(),
            bicycle: BicycleSection::default(),
            lq: LqSection::default(),
            quadratic: QuadraticSection::default(),
        };
        match scenario {
            Scenario::CartpoleSwingup => {
                spec.experiment.duration = 10.0;
                spec.mppi = MppiSection {
                    num_samples: 1024,
                    horizon: 50,
                    dt: 0.02,
                    temperature: 1.0,
                    noise: NoiseConfig::gaussian(vec![2.0]),
                    action_rate_weight: 0.0,
                    smooth_action_rate_weight: 0.05,
                    divergence_cost: DEFAULT_DIVERGENCE_COST,
                    weighting: WeightingMode::PerTimestep,
                };
                spec.cem = CemConfig {
                    num_samples: 256,
                    elite_count: 26,
                    max_iters: 4,
                    tolerance: 0.0,
                    diagonal_covariance: true,
                    horizon: 50,
                    dt: 0.02,
                    initial_std: vec![6.0],
                    ..Default::default()
                };
            }
            Scenario::BicycleTrack => {
                spec.experiment.duration = 60.0;
                spec.mppi = MppiSection {
                    num_samples: 512,
                    horizon: 30,
                    dt: 0.1,
                    temperature: 1.0,
                    noise: NoiseConfig::gaussian(vec![0.3, 0.5]),
                    action_rate_weight: 0.0,
                    smooth_action_rate_weight: 0.15,
                    divergence_cost: DEFAULT_DIVERGENCE_COST,
                    weighting: WeightingMode::PerTimestep,
                };
                spec.cem = CemConfig {
                    num_samples: 256,
                    elite_count: 26,
                    max_iters: 4,
                    tolerance: 0.0,
                    diagonal_covariance: true,
                    horizon: 30,
                    dt: 0.1,
                    initial_std: vec![0.5, 0.8],
                    ..Default::default()
                };
            }
            Scenario::LqScalar => {
                spec.experiment.duration = 2.0;
                spec.mppi = MppiSection {
                    num_samples: 10_000,
                    horizon: 40,
                    dt: 0.05,
                    temperature: 1.0,
                    noise: NoiseConfig::gaussian(vec![1.0]),
                    action_rate_weight: 0.0,
                    smooth_action_rate_weight: 0.1,
                    divergence_cost: DEFAULT_DIVERGENCE_COST,
                    weighting: WeightingMode::PerTimestep,
                };
                spec.cem = CemConfig {
                    num_samples: 400,
                    elite_count: 40,
                    max_iters: 40,
                    tolerance: 1e-4,
                    diagonal_covariance: true,
                    horizon: 40,
                    dt: 0.05,
                    initial_std: vec![1.0],
                    ..Default::default()
                };
                spec.pi2 = Pi2Config {
                    num_samples: 20,
                    horizon: 40,
                    dt: 0.05,
                    iterations: 100,
                    initial_state: vec![1.0],
                    initial_state_spread: vec![0.0],
                    ..Default::default()
                };
            }
            Scenario::CemQuadratic => {
                spec.experiment.controller = ControllerKind::Cem;
                spec.experiment.duration = 1.0;
                spec.cem = CemConfig {
                    num_samples: 64,
                    elite_count: 8,
                    max_iters: 50,
                    tolerance: 1e-6,
                    ..Default::default()
                };
            }
        }
        spec
    }

    /// Controller sample period.
    pub fn control_dt(&self) -> f64 {
        match self.experiment.controller {
            ControllerKind::Mppi | ControllerKind::SmoothMppi | ControllerKind::LogMppi => {
                self.mppi.dt
            }
            ControllerKind::Cem => self.cem.dt,
            ControllerKind::Pi2Cma => self.pi2.dt,
        }
    }

    /// Number of closed-loop steps, `round(duration / dt)`.
    pub fn sim_steps(&self) -> usize {
        ((self.experiment.duration / self.control_dt()).round() as usize).max(1)
    }

    pub fn label(&self) -> String {
        self.experiment.label.clone().unwrap_or_else(|| {
            format!(
                "{}_{}_s{}",
                self.experiment.scenario, self.experiment.controller, self.experiment.seed
            )
        })
    }

    /// Checks the sections the chosen scenario and controller use.
    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if !e.controller.supports(e.scenario) {
            return Err(Error::config(format!(
                "experiment.controller '{}' cannot run scenario '{}'",
                e.controller, e.scenario
            )));
        }
        if !(e.duration > 0.0 && e.duration.is_finite()) {
            return Err(Error::config(format!(
                "experiment.duration must be positive, got {}",
                e.duration
            )));
        }
        if let Some(label) = &e.label {
            if label.is_empty() || label.contains(['/', '\\']) {
                return Err(Error::config("experiment.label must be a plain file stem"));
            }
        }
        let m = match e.scenario {
            Scenario::CartpoleSwingup => {
                let c = &self.cartpole;
                c.physics.validate().map_err(Error::Config)?;
                if c.initial_state.len() != 4 {
                    return Err(Error::config("cartpole.initial_state needs 4 entries"));
                }
                if !(c.control_weight >= 0.0) || !(c.hold_window > 0.0) || !(c.angle_tolerance > 0.0) {
                    return Err(Error::config(
                        "cartpole.control_weight must be >= 0, hold_window and angle_tolerance > 0",
                    ));
                }
                let w = &c.weights;
                if [w.position, w.velocity, w.angle, w.angular_velocity, w.terminal_scale]
                    .iter()
                    .any(|v| !(*v >= 0.0))
                {
                    return Err(Error::config("cartpole.weights must be >= 0"));
                }
                1
            }
            Scenario::BicycleTrack => {
                let b = &self.bicycle;
                b.model.validate().map_err(Error::Config)?;
                if b.control_weight.len() != 2 || b.control_weight.iter().any(|v| !(*v >= 0.0)) {
                    return Err(Error::config("bicycle.control_weight needs 2 entries >= 0"));
                }
                if let Some(x0) = &b.initial_state {
                    if x0.len() != 3 {
                        return Err(Error::config("bicycle.initial_state needs 3 entries"));
                    }
                }
                if b.track.kind == TrackKind::Csv && b.track.path.is_none() {
                    return Err(Error::config("bicycle.track.path is required for kind = \"csv\""));
                }
                if !(b.cross_track_limit > 0.0) || !(b.laps > 0.0) || !(b.terminal_scale >= 0.0) {
                    return Err(Error::config(
                        "bicycle.cross_track_limit and bicycle.laps must be positive",
                    ));
                }
                for o in &b.obstacles {
                    o.validate()?;
                }
                2
            }
            Scenario::LqScalar => {
                let l = &self.lq;
                if !(l.state_weight >= 0.0 && l.control_weight > 0.0 && l.terminal_weight >= 0.0) {
                    return Err(Error::config(
                        "lq weights need state_weight >= 0, control_weight > 0, terminal_weight >= 0",
                    ));
                }
                if !l.x0.is_finite() || !(l.policy_initial_std > 0.0) {
                    return Err(Error::config("lq.x0 must be finite and lq.policy_initial_std positive"));
                }
                1
            }
            Scenario::CemQuadratic => {
                let q = &self.quadratic;
                if q.target.is_empty() || q.target.len() != q.initial_mean.len() {
                    return Err(Error::config(
                        "quadratic.target and quadratic.initial_mean need the same nonzero length",
                    ));
                }
                if !(q.initial_std > 0.0) || !(q.tolerance > 0.0) {
                    return Err(Error::config("quadratic.initial_std and tolerance must be positive"));
                }
                0
            }
        };
        match e.controller {
            ControllerKind::Mppi | ControllerKind::SmoothMppi | ControllerKind::LogMppi => {
                if !(self.mppi.smooth_action_rate_weight >= 0.0) {
                    return Err(Error::config("mppi.smooth_action_rate_weight must be >= 0"));
                }
                self.mppi.config_for(e.controller).validate(m)
            }
            ControllerKind::Cem => {
                self.cem.validate()?;
                if m > 0 {
                    if self.cem.horizon == 0 || !(self.cem.dt > 0.0) {
                        return Err(Error::config("cem.horizon must be >= 1 and cem.dt positive"));
                    }
                    if self.cem.initial_std.len() != m || self.cem.initial_std.iter().any(|s| !(*s > 0.0)) {
                        return Err(Error::config(format!(
                            "cem.initial_std needs {m} positive entries"
                        )));
                    }
                }
                Ok(())
            }
            ControllerKind::Pi2Cma => self.pi2.validate(1),
        }
    }
}
