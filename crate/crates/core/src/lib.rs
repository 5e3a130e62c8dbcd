//! Discrete-time scheduling of mobile robots over spatially distributed task
//! queues with one-slot switching delays.
//!
//! The crate holds the slot dynamics, the baseline controllers, an exact
//! value-iteration solver for small instances, arrival-rate generation and
//! the replicated evaluation harness. Learned controllers live elsewhere and
//! plug in through [`Policy`].

pub mod audit;
pub mod baseline;
pub mod dp;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod rng;
pub mod scenario;

pub use baseline::{
    esl_decide, exhaustive_wrap, random_feasible_decide, AssignmentDecider, EslDecider, Exhaustive,
    Policy, RandomDecider, StayPutDecider,
};
pub use dynamics::{
    feasible_robot_actions, holding_cost, idle_busy_partition, sample_arrivals, step,
    ArrivalVector, JointAction, OccupancyConvention, Reservations, RobotAction, ScenarioConfig,
    StepOutcome, SystemState,
};
pub use error::{Error, Result};
pub use rng::{Domain, EpisodeStreams, SimRng};
