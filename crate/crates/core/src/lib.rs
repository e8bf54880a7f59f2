pub mod budget;
pub mod episode;
pub mod experiment;
pub mod error;
pub mod fmt;
pub mod geometry;
pub mod kinematics;
pub mod metrics;
pub mod path;
pub mod planner;
pub mod predict;
pub mod report;
pub mod rng;
pub mod rvo;
pub mod scenario;
pub mod stats;
pub mod world;

pub use error::{Error, Result};
pub use budget::{Budget, BudgetMode};
pub use episode::{run_episode, EpisodeLog, TickConfig};
pub use experiment::{run_experiment, ExperimentConfig, RunOptions};
pub use geometry::{OrientedBox, Pose2D, Vec2};
pub use kinematics::{AgentKind, AgentState};
pub use metrics::{MetricRow, SafetyMode};
pub use planner::{Decision, Planner};
pub use predict::{PredictionSet, Predictor};
pub use report::{emit_report, ResultRow};
pub use scenario::{generate_scenario, MapTemplate, Scenario};
pub use stats::CorrelationReport;
pub use world::{SimConfig, World};
