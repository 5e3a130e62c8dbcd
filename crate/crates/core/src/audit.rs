//! Transition invariants and a long randomized sweep that checks them.

use rand::Rng;

use crate::baseline::{exhaustive_wrap, EslDecider, Policy, RandomDecider, StayPutDecider};
use crate::dynamics::{
    feasible_robot_actions, sample_arrivals_streams, step, ArrivalVector, JointAction,
    OccupancyConvention, Reservations, RobotAction, ScenarioConfig, StepOutcome, SystemState,
};
use crate::rng::{substream, Domain, EpisodeStreams};
use crate::Result;

/// Violations found in one transition; empty when every invariant holds.
pub fn check_transition(
    state: &SystemState,
    u: &JointAction,
    arrivals: &ArrivalVector,
    out: &StepOutcome,
    cfg: &ScenarioConfig,
) -> Vec<String> {
    let mut v = Vec::new();
    let (m, n) = (cfg.num_robots, cfg.num_queues);
    let next = &out.state;

    if next.locations.len() != m || next.queues.len() != n {
        v.push(format!("next state has shape ({}, {})", next.locations.len(), next.queues.len()));
        return v;
    }
    let mut seen = vec![false; n];
    for &l in &next.locations {
        if l >= n {
            v.push(format!("location {l} out of range"));
        } else if std::mem::replace(&mut seen[l], true) {
            v.push(format!("two robots share queue {l}"));
        }
    }

    if !u.is_exhaustive(state) {
        v.push("a robot at a nonempty queue did not serve".into());
    }
    let occupied = state.occupied();
    for (r, (&a, &loc)) in u.actions.iter().zip(&state.locations).enumerate() {
        match a {
            RobotAction::Serve if state.queues[loc] == 0 => {
                v.push(format!("robot {r} served an empty queue"))
            }
            RobotAction::Switch(j)
                if cfg.convention == OccupancyConvention::Conservative && occupied[j] =>
            {
                v.push(format!("robot {r} switched into occupied queue {j}"))
            }
            _ => {}
        }
        if next.locations[r] != a.destination(loc) {
            v.push(format!("robot {r} did not reach its destination"));
        }
        let mut reserved = Reservations::new(n);
        for q in 0..r {
            reserved.record(state.locations[q], u.actions[q].destination(state.locations[q]));
        }
        match feasible_robot_actions(state, r, &reserved, cfg) {
            Ok(acts) if acts.is_empty() => v.push(format!("robot {r} has no feasible action")),
            Err(e) => v.push(format!("robot {r}: {e}")),
            _ => {}
        }
    }

    for i in 0..n {
        let served = u
            .actions
            .iter()
            .zip(&state.locations)
            .filter(|&(&a, &l)| a == RobotAction::Serve && l == i)
            .count() as u32;
        if served > 1 {
            v.push(format!("queue {i} served {served} times"));
        }
        if out.departures[i] != (served == 1) {
            v.push(format!("departure flag of queue {i} is wrong"));
        }
        let raw = state.queues[i] + arrivals.0[i] as u32 - served.min(state.queues[i]);
        let expected = raw.min(cfg.queue_cap);
        if next.queues[i] != expected {
            v.push(format!(
                "queue {i}: {} -> {} with d={served} a={}, expected {expected}",
                state.queues[i], next.queues[i], arrivals.0[i] as u8
            ));
        }
        if out.cap_hits[i] != (raw > cfg.queue_cap) {
            v.push(format!("cap-hit flag of queue {i} is wrong"));
        }
    }
    v
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SweepReport {
    pub slots: u64,
    pub episodes: u64,
    pub cap_hits: u64,
    /// First few violations, each prefixed by episode and slot.
    pub violations: Vec<String>,
    pub violation_count: u64,
}

impl SweepReport {
    pub fn ok(&self) -> bool {
        self.violation_count == 0
    }
}

const KEPT_VIOLATIONS: usize = 20;

/// Scenario with 1 to 3 robots, up to 8 queues, rates on the 0.05 grid, a
/// small cap (so clamping happens) and a random occupancy convention.
pub fn random_scenario<R: Rng>(rng: &mut R, horizon: usize) -> ScenarioConfig {
    let m = rng.random_range(1..=3);
    let n = rng.random_range(m.max(2)..=8);
    let mut rates: Vec<f64> = (0..n).map(|_| rng.random_range(0..=14) as f64 * 0.05).collect();
    if rates.iter().all(|&p| p == 0.0) {
        rates[0] = 0.05;
    }
    let mut cfg = ScenarioConfig::new("sweep", m, rates).expect("generated scenario is valid");
    cfg.queue_cap = rng.random_range(2..=12);
    cfg.horizon = horizon;
    if rng.random_bool(0.5) {
        cfg.convention = OccupancyConvention::Loose;
    }
    cfg
}

/// Runs episodes over random scenarios, cycling random, ESL and stay-put
/// controllers, until at least `min_slots` transitions have been checked.
pub fn invariant_sweep(min_slots: u64, seed: u64) -> Result<SweepReport> {
    let policies: [Box<dyn Policy>; 3] = [
        Box::new(exhaustive_wrap(RandomDecider)),
        Box::new(exhaustive_wrap(EslDecider)),
        Box::new(exhaustive_wrap(StayPutDecider)),
    ];
    let mut rep = SweepReport::default();
    while rep.slots < min_slots {
        let e = rep.episodes;
        let mut rng = substream(seed, Domain::Test, e, 0);
        let cfg = random_scenario(&mut rng, 500);
        let policy = &policies[(e % 3) as usize];
        let mut streams = EpisodeStreams::new(rng.random(), Domain::Test, e, cfg.num_queues);
        let mut state = SystemState::empty(&cfg);
        let mut t = 0u64;
        while t < cfg.horizon as u64 {
            let u = policy.decide(&state, &cfg, &mut streams.policy)?;
            let a = sample_arrivals_streams(&cfg.arrival_rates, &mut streams.arrivals)?;
            let out = step(&state, &u, &a, &cfg)?;
            rep.cap_hits += out.any_cap_hit() as u64;
            for msg in check_transition(&state, &u, &a, &out, &cfg) {
                rep.violation_count += 1;
                if rep.violations.len() < KEPT_VIOLATIONS {
                    rep.violations.push(format!("episode {e} slot {t}: {msg}"));
                }
            }
            state = out.state;
            t += 1;
        }
        rep.slots += t;
        rep.episodes += 1;
    }
    Ok(rep)
}
