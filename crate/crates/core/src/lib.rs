//! Collaborative vehicle routing as an n-player coalitional bargaining game.
//!
//! - [`instance`]: random routing instances and geometry
//! - [`routing`]: exact single- and multi-depot solvers
//! - [`coalition`]: characteristic function and optimal coalitions
//! - [`bargaining`]: the random-proposer alternating-offers environment
//! - [`agents`]: heuristic, random and oracle bots
//! - [`learner`]: independent PPO agents
//! - [`eval`]: accuracy, optimality gaps and matchup statistics

pub mod agents;
pub mod bargaining;
pub mod coalition;
pub mod error;
pub mod eval;
pub mod instance;
pub mod learner;
pub mod routing;

pub use coalition::{CharacteristicTable, Coalition};
pub use error::{Error, Result};
pub use instance::{GenerationConfig, Location, ProblemInstance};
