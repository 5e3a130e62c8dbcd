//! Slot dynamics.
//!
//! At the start of slot `t` every robot picks an action from the state
//! `(s(t); x(t))`. A serving robot removes one task from its queue; a
//! switching robot spends the slot travelling and occupies its target from
//! `t + 1`. Arrivals join at the end of the slot. Queues are clamped at
//! `queue_cap` and clamped arrivals are reported as cap hits.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::rng::SimRng;
use crate::{Error, Result};

/// Which switch targets count as free.
///
/// `Conservative` requires the target to be unoccupied at the decision
/// slot. `Loose` only requires that nobody occupies it in the next slot, so
/// a queue being vacated this slot may be entered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OccupancyConvention {
    #[default]
    Conservative,
    Loose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub num_robots: usize,
    pub num_queues: usize,
    pub arrival_rates: Vec<f64>,
    pub beta: f64,
    pub queue_cap: u32,
    pub horizon: usize,
    pub convention: OccupancyConvention,
}

impl ScenarioConfig {
    /// Scenario with the simulation defaults (`beta = 0.99`, cap 100, horizon 1000).
    pub fn new(name: &str, num_robots: usize, arrival_rates: Vec<f64>) -> Result<Self> {
        let cfg = ScenarioConfig {
            name: name.to_string(),
            num_robots,
            num_queues: arrival_rates.len(),
            arrival_rates,
            beta: 0.99,
            queue_cap: 100,
            horizon: 1000,
            convention: OccupancyConvention::Conservative,
        };
        cfg.check()?;
        Ok(cfg)
    }

    /// Hard invariants; see [`crate::scenario::validate_scenario`] for the
    /// full report including warnings.
    pub fn check(&self) -> Result<()> {
        let report = crate::scenario::validate_scenario(self);
        if report.errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Scenario(report.errors.join("; ")))
        }
    }

    pub fn max_rate(&self) -> f64 {
        self.arrival_rates.iter().copied().fold(0.0, f64::max)
    }

    /// Stable 64-bit digest of every field that affects dynamics.
    pub fn hash(&self) -> u64 {
        let mut h = Sha256::new();
        h.update((self.num_robots as u64).to_le_bytes());
        h.update((self.num_queues as u64).to_le_bytes());
        for p in &self.arrival_rates {
            h.update(p.to_bits().to_le_bytes());
        }
        h.update(self.beta.to_bits().to_le_bytes());
        h.update(self.queue_cap.to_le_bytes());
        h.update((self.horizon as u64).to_le_bytes());
        h.update([self.convention as u8]);
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }
}

/// Robot locations and queue lengths at a slot boundary.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SystemState {
    pub locations: Vec<usize>,
    pub queues: Vec<u32>,
}

impl SystemState {
    /// All queues empty, robot `r` parked at queue `r`.
    pub fn empty(cfg: &ScenarioConfig) -> Self {
        SystemState {
            locations: (0..cfg.num_robots).collect(),
            queues: vec![0; cfg.num_queues],
        }
    }

    pub fn new(locations: Vec<usize>, queues: Vec<u32>, cfg: &ScenarioConfig) -> Result<Self> {
        let s = SystemState { locations, queues };
        s.validate(cfg)?;
        Ok(s)
    }

    pub fn validate(&self, cfg: &ScenarioConfig) -> Result<()> {
        if self.locations.len() != cfg.num_robots || self.queues.len() != cfg.num_queues {
            return Err(Error::State(format!(
                "expected {} robots and {} queues, got {} and {}",
                cfg.num_robots,
                cfg.num_queues,
                self.locations.len(),
                self.queues.len()
            )));
        }
        for (r, &loc) in self.locations.iter().enumerate() {
            if loc >= cfg.num_queues {
                return Err(Error::State(format!("robot {r} at queue {loc} out of range")));
            }
            if let Some(other) = self.locations[..r].iter().position(|&l| l == loc) {
                return Err(Error::CoLocation { a: other, b: r, queue: loc });
            }
        }
        if let Some(i) = self.queues.iter().position(|&x| x > cfg.queue_cap) {
            return Err(Error::State(format!(
                "queue {i} holds {} > cap {}",
                self.queues[i], cfg.queue_cap
            )));
        }
        Ok(())
    }

    pub fn is_busy(&self, robot: usize) -> bool {
        self.queues[self.locations[robot]] > 0
    }

    pub fn occupant(&self, queue: usize) -> Option<usize> {
        self.locations.iter().position(|&l| l == queue)
    }

    pub fn occupied(&self) -> Vec<bool> {
        let mut occ = vec![false; self.queues.len()];
        for &l in &self.locations {
            occ[l] = true;
        }
        occ
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RobotAction {
    Serve,
    Idle,
    Switch(usize),
}

impl RobotAction {
    /// Location the robot holds in the next slot.
    pub fn destination(self, current: usize) -> usize {
        match self {
            RobotAction::Serve | RobotAction::Idle => current,
            RobotAction::Switch(j) => j,
        }
    }

    /// Action that takes a robot at `current` to `dest`, given whether its
    /// queue is nonempty (staying at a nonempty queue means serving).
    pub fn toward(current: usize, dest: usize, busy: bool) -> RobotAction {
        match (dest == current, busy) {
            (true, true) => RobotAction::Serve,
            (true, false) => RobotAction::Idle,
            (false, _) => RobotAction::Switch(dest),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct JointAction {
    pub actions: Vec<RobotAction>,
}

impl JointAction {
    pub fn new(actions: Vec<RobotAction>) -> Self {
        JointAction { actions }
    }

    pub fn all_serve(m: usize) -> Self {
        JointAction::new(vec![RobotAction::Serve; m])
    }

    pub fn destinations(&self, state: &SystemState) -> Vec<usize> {
        self.actions
            .iter()
            .zip(&state.locations)
            .map(|(a, &l)| a.destination(l))
            .collect()
    }

    /// Checks admissibility (not the exhaustive restriction).
    pub fn check(&self, state: &SystemState, cfg: &ScenarioConfig) -> Result<()> {
        if self.actions.len() != cfg.num_robots {
            return Err(Error::Infeasible {
                robot: self.actions.len(),
                reason: format!("{} actions for {} robots", self.actions.len(), cfg.num_robots),
            });
        }
        let occupied = state.occupied();
        for (r, (&a, &loc)) in self.actions.iter().zip(&state.locations).enumerate() {
            match a {
                RobotAction::Serve if state.queues[loc] == 0 => {
                    return Err(Error::Infeasible {
                        robot: r,
                        reason: format!("serve at empty queue {loc}"),
                    })
                }
                RobotAction::Switch(j) if j >= cfg.num_queues => {
                    return Err(Error::Infeasible {
                        robot: r,
                        reason: format!("switch target {j} out of range"),
                    })
                }
                RobotAction::Switch(j) if j == loc => {
                    return Err(Error::Infeasible {
                        robot: r,
                        reason: "switch to own location".into(),
                    })
                }
                RobotAction::Switch(j)
                    if cfg.convention == OccupancyConvention::Conservative && occupied[j] =>
                {
                    return Err(Error::Infeasible {
                        robot: r,
                        reason: format!("switch target {j} is occupied"),
                    })
                }
                _ => {}
            }
        }
        let dest = self.destinations(state);
        for b in 0..dest.len() {
            if let Some(a) = dest[..b].iter().position(|&d| d == dest[b]) {
                return Err(Error::CoLocation { a, b, queue: dest[b] });
            }
        }
        Ok(())
    }

    /// Every robot at a nonempty queue serves.
    pub fn is_exhaustive(&self, state: &SystemState) -> bool {
        self.actions
            .iter()
            .zip(&state.locations)
            .all(|(&a, &l)| state.queues[l] == 0 || a == RobotAction::Serve)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArrivalVector(pub Vec<bool>);

fn check_rates(rates: &[f64]) -> Result<()> {
    match rates.iter().position(|p| !(0.0..=1.0).contains(p)) {
        Some(queue) => Err(Error::Rate {
            queue,
            rate: rates[queue],
        }),
        None => Ok(()),
    }
}

/// Independent Bernoulli arrivals, one uniform draw per queue in index order.
pub fn sample_arrivals<R: Rng + ?Sized>(rates: &[f64], rng: &mut R) -> Result<ArrivalVector> {
    check_rates(rates)?;
    Ok(ArrivalVector(
        rates.iter().map(|&p| rng.random::<f64>() < p).collect(),
    ))
}

/// Same as [`sample_arrivals`] with a dedicated stream per queue.
pub fn sample_arrivals_streams(rates: &[f64], streams: &mut [SimRng]) -> Result<ArrivalVector> {
    check_rates(rates)?;
    if streams.len() != rates.len() {
        return Err(Error::State(format!(
            "{} arrival streams for {} queues",
            streams.len(),
            rates.len()
        )));
    }
    Ok(ArrivalVector(
        rates
            .iter()
            .zip(streams.iter_mut())
            .map(|(&p, rng)| rng.random::<f64>() < p)
            .collect(),
    ))
}

/// Destinations already claimed by robots decided earlier in the same slot,
/// and locations those robots are leaving.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reservations {
    pub claimed: Vec<bool>,
    pub vacated: Vec<bool>,
}

impl Reservations {
    pub fn new(num_queues: usize) -> Self {
        Reservations {
            claimed: vec![false; num_queues],
            vacated: vec![false; num_queues],
        }
    }

    pub fn record(&mut self, from: usize, to: usize) {
        self.claimed[to] = true;
        if from != to {
            self.vacated[from] = true;
        }
    }
}

/// Actions open to robot `r` under the exhaustive restriction.
///
/// A robot at a nonempty queue can only serve. Otherwise it may idle, or
/// switch to any queue that is free under the scenario's convention and
/// not already claimed.
pub fn feasible_robot_actions(
    state: &SystemState,
    r: usize,
    reserved: &Reservations,
    cfg: &ScenarioConfig,
) -> Result<Vec<RobotAction>> {
    if r >= cfg.num_robots {
        return Err(Error::RobotIndex {
            robot: r,
            robots: cfg.num_robots,
        });
    }
    let loc = state.locations[r];
    if state.queues[loc] > 0 {
        return Ok(vec![RobotAction::Serve]);
    }
    let occupied = state.occupied();
    let mut out = vec![RobotAction::Idle];
    for j in (0..cfg.num_queues).filter(|&j| j != loc) {
        if reserved.claimed[j] {
            continue;
        }
        let free = match cfg.convention {
            OccupancyConvention::Conservative => !occupied[j],
            OccupancyConvention::Loose => !occupied[j] || reserved.vacated[j],
        };
        if free {
            out.push(RobotAction::Switch(j));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepOutcome {
    pub state: SystemState,
    pub departures: Vec<bool>,
    /// Queues whose arrival was dropped at the cap.
    pub cap_hits: Vec<bool>,
}

impl StepOutcome {
    pub fn any_cap_hit(&self) -> bool {
        self.cap_hits.iter().any(|&c| c)
    }
}

/// One slot transition.
pub fn step(
    state: &SystemState,
    u: &JointAction,
    a: &ArrivalVector,
    cfg: &ScenarioConfig,
) -> Result<StepOutcome> {
    u.check(state, cfg)?;
    if a.0.len() != cfg.num_queues {
        return Err(Error::State(format!(
            "{} arrivals for {} queues",
            a.0.len(),
            cfg.num_queues
        )));
    }
    let mut departures = vec![false; cfg.num_queues];
    for (&act, &loc) in u.actions.iter().zip(&state.locations) {
        if act == RobotAction::Serve {
            departures[loc] = true;
        }
    }
    let mut queues = Vec::with_capacity(cfg.num_queues);
    let mut cap_hits = vec![false; cfg.num_queues];
    for i in 0..cfg.num_queues {
        let next = state.queues[i] - departures[i] as u32 + a.0[i] as u32;
        if next > cfg.queue_cap {
            cap_hits[i] = true;
            queues.push(cfg.queue_cap);
        } else {
            queues.push(next);
        }
    }
    Ok(StepOutcome {
        state: SystemState {
            locations: u.destinations(state),
            queues,
        },
        departures,
        cap_hits,
    })
}

pub fn holding_cost(state: &SystemState) -> u64 {
    state.queues.iter().map(|&x| x as u64).sum()
}

/// `(busy, idle)` robot indices, each ascending.
pub fn idle_busy_partition(state: &SystemState) -> (Vec<usize>, Vec<usize>) {
    (0..state.locations.len()).partition(|&r| state.is_busy(r))
}
