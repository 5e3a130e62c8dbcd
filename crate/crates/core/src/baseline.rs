//! Controllers built from idle-robot assignment rules.

use rand::Rng;

use crate::dynamics::{
    feasible_robot_actions, idle_busy_partition, JointAction, Reservations, RobotAction,
    ScenarioConfig, SystemState,
};
use crate::rng::SimRng;
use crate::{Error, Result};

/// Maps a state to a joint action. `rng` is the episode's policy stream;
/// deterministic policies ignore it.
pub trait Policy {
    fn name(&self) -> &str;
    fn decide(&self, state: &SystemState, cfg: &ScenarioConfig, rng: &mut SimRng) -> Result<JointAction>;
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn decide(&self, state: &SystemState, cfg: &ScenarioConfig, rng: &mut SimRng) -> Result<JointAction> {
        (**self).decide(state, cfg, rng)
    }
}

/// Chooses a destination for each idle robot (its own location means Idle).
///
/// `idle` is ascending; the result is aligned with it.
pub trait AssignmentDecider {
    fn name(&self) -> &str;
    fn assign(
        &self,
        state: &SystemState,
        idle: &[usize],
        cfg: &ScenarioConfig,
        rng: &mut SimRng,
    ) -> Result<Vec<usize>>;
}

/// Busy robots serve; idle robots follow the wrapped decider.
#[derive(Debug, Clone)]
pub struct Exhaustive<D> {
    pub decider: D,
}

pub fn exhaustive_wrap<D: AssignmentDecider>(decider: D) -> Exhaustive<D> {
    Exhaustive { decider }
}

impl<D: AssignmentDecider> Policy for Exhaustive<D> {
    fn name(&self) -> &str {
        self.decider.name()
    }

    fn decide(&self, state: &SystemState, cfg: &ScenarioConfig, rng: &mut SimRng) -> Result<JointAction> {
        let (_, idle) = idle_busy_partition(state);
        let mut actions = vec![RobotAction::Serve; cfg.num_robots];
        if idle.is_empty() {
            return Ok(JointAction::new(actions));
        }
        let dest = self.decider.assign(state, &idle, cfg, rng)?;
        if dest.len() != idle.len() {
            return Err(Error::Contract(format!(
                "`{}` returned {} destinations for {} idle robots",
                self.name(),
                dest.len(),
                idle.len()
            )));
        }
        let mut reserved = Reservations::new(cfg.num_queues);
        for (&r, &j) in idle.iter().zip(&dest) {
            let loc = state.locations[r];
            let act = RobotAction::toward(loc, j, false);
            if !feasible_robot_actions(state, r, &reserved, cfg)?.contains(&act) {
                return Err(Error::Contract(format!(
                    "`{}` sent robot {r} to infeasible queue {j}",
                    self.name()
                )));
            }
            reserved.record(loc, j);
            actions[r] = act;
        }
        let u = JointAction::new(actions);
        u.check(state, cfg)
            .map_err(|e| Error::Contract(format!("`{}`: {e}", self.name())))?;
        Ok(u)
    }
}

/// Destinations open to robot `r` given earlier reservations, own location first.
pub fn feasible_destinations(
    state: &SystemState,
    r: usize,
    reserved: &Reservations,
    cfg: &ScenarioConfig,
) -> Result<Vec<usize>> {
    let loc = state.locations[r];
    Ok(feasible_robot_actions(state, r, reserved, cfg)?
        .into_iter()
        .map(|a| a.destination(loc))
        .collect())
}

/// Exhaustive-serve-longest: each idle robot, in ascending order, takes the
/// longest unoccupied, unreserved, nonempty queue; ties by higher rate, then
/// lower index. With no such queue the robot idles.
#[derive(Debug, Clone, Copy, Default)]
pub struct EslDecider;

impl AssignmentDecider for EslDecider {
    fn name(&self) -> &str {
        "esl"
    }

    fn assign(
        &self,
        state: &SystemState,
        idle: &[usize],
        cfg: &ScenarioConfig,
        _rng: &mut SimRng,
    ) -> Result<Vec<usize>> {
        let occupied = state.occupied();
        let mut reserved = vec![false; cfg.num_queues];
        let mut out = Vec::with_capacity(idle.len());
        for &r in idle {
            let mut best: Option<usize> = None;
            for j in 0..cfg.num_queues {
                if occupied[j] || reserved[j] || state.queues[j] == 0 {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some(b) => {
                        let (xj, xb) = (state.queues[j], state.queues[b]);
                        xj > xb || (xj == xb && cfg.arrival_rates[j] > cfg.arrival_rates[b])
                    }
                };
                if better {
                    best = Some(j);
                }
            }
            match best {
                Some(j) => {
                    reserved[j] = true;
                    out.push(j);
                }
                None => out.push(state.locations[r]),
            }
        }
        Ok(out)
    }
}

pub fn esl_decide(state: &SystemState, cfg: &ScenarioConfig) -> JointAction {
    let mut unused = crate::rng::substream(0, crate::rng::Domain::Test, 0, 0);
    exhaustive_wrap(EslDecider)
        .decide(state, cfg, &mut unused)
        .expect("ESL only targets unoccupied nonempty queues")
}

/// Each idle robot in turn picks uniformly among its feasible destinations.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomDecider;

impl AssignmentDecider for RandomDecider {
    fn name(&self) -> &str {
        "random"
    }

    fn assign(
        &self,
        state: &SystemState,
        idle: &[usize],
        cfg: &ScenarioConfig,
        rng: &mut SimRng,
    ) -> Result<Vec<usize>> {
        let mut reserved = Reservations::new(cfg.num_queues);
        let mut out = Vec::with_capacity(idle.len());
        for &r in idle {
            let options = feasible_destinations(state, r, &reserved, cfg)?;
            let j = options[rng.random_range(0..options.len())];
            reserved.record(state.locations[r], j);
            out.push(j);
        }
        Ok(out)
    }
}

pub fn random_feasible_decide(
    state: &SystemState,
    cfg: &ScenarioConfig,
    rng: &mut SimRng,
) -> Result<JointAction> {
    exhaustive_wrap(RandomDecider).decide(state, cfg, rng)
}

/// Idle robots never move.
#[derive(Debug, Clone, Copy, Default)]
pub struct StayPutDecider;

impl AssignmentDecider for StayPutDecider {
    fn name(&self) -> &str {
        "stay"
    }

    fn assign(
        &self,
        state: &SystemState,
        idle: &[usize],
        _cfg: &ScenarioConfig,
        _rng: &mut SimRng,
    ) -> Result<Vec<usize>> {
        Ok(idle.iter().map(|&r| state.locations[r]).collect())
    }
}
