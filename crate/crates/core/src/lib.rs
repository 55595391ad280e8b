//! Tabular two-player zero-sum Markov games with revealed opponent policies.

pub mod cover;
pub mod error;
pub mod estimation;
pub mod game;
pub mod guard;
pub mod harness;
pub mod learners;
pub mod nash;
pub mod opponents;
pub mod ope;
pub mod policy;
pub mod reductions;
pub mod rng;
pub mod testkit;
pub mod trajectory;
pub mod value;
pub mod verify;

pub use error::{Error, Result};
pub use game::{validate_game, GameDims, JointAction, MarkovGame};
pub use guard::Guards;
pub use policy::{GeneralPolicy, MarkovPolicy, MixedWeights, PolicyId, Side};
pub use trajectory::{sample_episode, Trajectory};
