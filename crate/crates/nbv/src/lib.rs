//! Search-based next-best-view baseline: voxel occupancy map, information-gain
//! scoring of sampled shell views, open-loop jumps.

pub mod map;
pub mod planner;

pub use map::{VoxelMap, VoxelState};
pub use planner::{
    evaluate_baseline, plan_next_view, run_baseline_episode, BaselinePlanner, CandidateView,
    NbvConfig,
};

#[derive(Debug, thiserror::Error)]
pub enum NbvError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Core(#[from] viewplan_core::Error),
}

pub type Result<T, E = NbvError> = std::result::Result<T, E>;
