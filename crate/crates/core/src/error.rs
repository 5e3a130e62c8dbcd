use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("arrival rate {rate} for queue {queue} is outside [0, 1]")]
    Rate { queue: usize, rate: f64 },

    #[error("robot index {robot} out of range for {robots} robots")]
    RobotIndex { robot: usize, robots: usize },

    #[error("infeasible action for robot {robot}: {reason}")]
    Infeasible { robot: usize, reason: String },

    #[error("robots {a} and {b} would share queue {queue}")]
    CoLocation { a: usize, b: usize, queue: usize },

    #[error("decider contract violated: {0}")]
    Contract(String),

    #[error("instance too large: {states} states exceeds the limit of {limit}")]
    TooLarge { states: u64, limit: u64 },

    #[error("rate generation: {0}")]
    Generation(String),

    #[error("value table: {0}")]
    Table(String),

    #[error("report: {0}")]
    Report(String),

    #[error("policy failure: {0}")]
    Policy(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
