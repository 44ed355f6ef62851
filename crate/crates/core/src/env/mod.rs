//! Seedable replica of the obstructed-maze gridworld family with egocentric
//! partial observations and the three held-out task variants.

mod observe;
mod snapshot;
mod types;
mod world;

pub use observe::{render_observation, Observation, AGENT_VIEW, FRONT_VIEW, VIEW, VIEW_CELLS};
pub use snapshot::SNAPSHOT_VERSION;
pub use types::*;
pub use world::{Layout, Relocation, StepInfo, StepResult, WorldState};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("world generation failed: {0}")]
    Generation(String),
    #[error("task id {0} is not one of 0..=3")]
    BadTask(u8),
    #[error("invalid action code {0}")]
    InvalidAction(usize),
    #[error("step called after the episode ended")]
    EpisodeDone,
    #[error("position {0:?} is a wall, not a room or door cell")]
    NotInRoom(Pos),
    #[error("bad snapshot: {0}")]
    Snapshot(String),
}
