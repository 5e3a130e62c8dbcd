//! Exhaustive-assignment actor-critic.
//!
//! Busy robots always serve. Idle robots are assigned destinations one at a
//! time, in ascending index, from a categorical over queues scored by a
//! robot token against queue tokens, with occupied and already-chosen
//! queues masked out. A separate critic pools the tokens into a state value.
//! Training is PPO with GAE on the negative holding cost.

pub mod audit;
pub mod error;
pub mod features;
pub mod model;
pub mod net;
pub mod ppo;

pub use error::{EaacError, Result};
pub use features::{build_features, FeatureContext, Features};
pub use model::{DecodedAssignment, EaacModel, EaacPolicy, Mode};
pub use ppo::{
    collect_rollouts, compute_gae, normalize_advantages, ppo_update, train, CurveRow,
    RolloutBuffer, TrainConfig, TrainOutcome, UpdateStats,
};
