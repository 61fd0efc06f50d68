//! Benchmark systems and task costs.

pub mod bicycle;
pub mod cartpole;
pub mod lq;

pub use bicycle::{
    tracking_cost, Bicycle, BicycleParams, BicycleVariant, MovingObstacle, ObstacleSet,
    Projection, Track, TrackingTask, TrackingWeights,
};
pub use cartpole::{wrap_angle, CartPole, CartPoleCost, CartPoleCostWeights, CartPoleParams};
pub use lq::{lq_analytic_oracle, lq_stationary_gain, LqCost, LqParams, LqSolution, ScalarIntegrator};
