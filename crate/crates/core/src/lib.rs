//! Single track road game: environment, equilibrium baselines, a smoothed
//! human action model and a socially blended MDP planner.

pub mod agents;
pub mod episode;
pub mod equilibrium;
pub mod error;
pub mod game;
pub mod harness;
pub mod human_model;
pub mod planner;
pub mod sarl;

pub use agents::{ActionDist, AgentPolicy};
pub use episode::{Episode, EpisodeRecorder, StepRecord, Survey};
pub use error::{Error, Result};
pub use game::{
    Action, GameState, GridConfig, PlayerPos, Positions, Seat, StepOutcome, VelocityState,
};
pub use human_model::{HumanModel, Representation, StateKey};
pub use planner::{PlannedAgent, PlannerConfig};
pub use sarl::{BetaReport, ScorePair};
