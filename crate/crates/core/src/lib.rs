//! Local planning for a disc robot in 2D grid worlds: a conditional
//! diffusion model proposes clamped cubic B-spline control points, and a
//! geometric critic scores the decoded curves against a signed distance
//! field built from the current range scan.
//!
//! The crate is organized bottom-up: [`spline`] and [`repr`] handle curve
//! representations, [`world`] and [`esdf`] the environment, [`expert`]
//! demonstrations, [`diffusion`] the policy, [`critic`] and [`planner`] the
//! receding-horizon loop, and [`experiments`] the benchmarks.

pub mod config;
pub mod critic;
pub mod diffusion;
pub mod esdf;
pub mod experiments;
pub mod expert;
pub mod geom;
pub mod planner;
pub mod plot;
pub mod repr;
pub mod seed;
pub mod selftest;
pub mod spline;
pub mod trajectory;
pub mod world;

pub use config::Config;
pub use critic::{CostBreakdown, CriticConfig};
pub use diffusion::{DiffusionConfig, DiffusionPolicy, SamplerMode};
pub use esdf::{build_esdf, EsdfGrid, SignedDistance};
pub use experiments::{BenchmarkResult, EpisodeRecord, Suite};
pub use expert::{DataConfig, Dataset};
pub use geom::{Pose2, Vec2, Vec3};
pub use planner::{PlannerConfig, PlanStep};
pub use repr::{AnchorSet, RepresentationKind};
pub use spline::{ControlPointSet, SplineSpec};
pub use trajectory::Trajectory;
pub use world::{OccupancyGrid, World, WorldParams};
