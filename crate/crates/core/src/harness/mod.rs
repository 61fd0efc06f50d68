//! Seeded experiment runner, logs and comparisons.

pub mod log;
pub mod run;
pub mod sim;
pub mod spec;

pub use log::{strip_timing, LogRow, TrajectoryLog, DIAGNOSTIC_COLUMNS, LOG_VERSION_LINE, TIMING_COLUMN};
pub use run::{
    build_scenario, build_track, cartpole_holds_upright, compare_controllers,
    mean_abs_control_change, run_experiment, tracking_report, ComparisonRow, ComparisonTable,
    ExperimentOutcome, ScenarioSetup, Summary, TrackingReport, COMPARISON_COLUMNS,
    SUMMARY_VERSION,
};
pub use sim::{run_closed_loop, simulate, ClosedLoopRun, PlantNoise};
pub use spec::{
    default_obstacles, BicycleSection, CartPoleSection, ControllerKind, ExperimentSection,
    ExperimentSpec, LqSection, MppiSection, QuadraticSection, Scenario, TrackKind, TrackSection,
};
