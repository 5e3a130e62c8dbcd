//! Parameters bound to a scenario, masked sequential decoding and the
//! evaluation-time policy.

use std::io::{Read, Write};
use std::path::Path;

use mrq_core::{
    idle_busy_partition, JointAction, Policy, RobotAction, ScenarioConfig, SimRng, SystemState,
};
use mrq_nn::{read_checkpoint, write_checkpoint, Checkpoint, MaskedCategorical, ParameterStore, Real, Tape};
use rand::Rng;

use crate::features::{build_features, FeatureContext, Features};
use crate::net::{self, Bound, Decisions, Inputs};
use crate::{EaacError, Result};

/// How idle-robot destinations are chosen.
pub enum Mode<'r> {
    /// One policy stream per batch entry.
    Sample(&'r mut [SimRng]),
    Greedy,
}

/// Idle-robot decisions of one state, in decoding order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecodedAssignment {
    pub robots: Vec<usize>,
    pub destinations: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub log_prob: f64,
    pub entropy: f64,
}

impl DecodedAssignment {
    pub fn joint_action(&self, state: &SystemState) -> JointAction {
        let mut actions = vec![RobotAction::Serve; state.locations.len()];
        for (&r, &j) in self.robots.iter().zip(&self.destinations) {
            actions[r] = RobotAction::toward(state.locations[r], j, false);
        }
        JointAction::new(actions)
    }
}

/// Feasibility of each queue for an idle robot at `own`: its own location,
/// or a queue neither occupied at slot start nor already chosen this slot.
pub fn decision_mask(own: usize, occupied: &[bool], reserved: &[bool]) -> Vec<bool> {
    (0..occupied.len())
        .map(|j| j == own || (!occupied[j] && !reserved[j]))
        .collect()
}

/// Actor and critic parameters for one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct EaacModel<T> {
    pub params: ParameterStore<T>,
    pub ctx: FeatureContext,
    pub num_robots: usize,
    pub num_queues: usize,
    pub scenario_hash: u64,
    /// Critic outputs are in units of `1 / (1 - beta)`.
    pub value_scale: f64,
}

impl<T: Real> EaacModel<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Self {
        Self::with_params(cfg, net::init_params(cfg.num_queues, rng))
    }

    fn with_params(cfg: &ScenarioConfig, params: ParameterStore<T>) -> Self {
        EaacModel {
            params,
            ctx: FeatureContext::new(cfg),
            num_robots: cfg.num_robots,
            num_queues: cfg.num_queues,
            scenario_hash: cfg.hash(),
            value_scale: 1.0 / (1.0 - cfg.beta),
        }
    }

    pub fn cast<U: Real>(&self) -> EaacModel<U> {
        EaacModel {
            params: self.params.cast(),
            ctx: self.ctx.clone(),
            num_robots: self.num_robots,
            num_queues: self.num_queues,
            scenario_hash: self.scenario_hash,
            value_scale: self.value_scale,
        }
    }

    pub fn features(&self, state: &SystemState) -> Features {
        build_features(state, &self.ctx)
    }

    pub fn inputs(&self, states: &[&SystemState]) -> Inputs<T> {
        let f: Vec<Features> = states.iter().map(|s| self.features(s)).collect();
        Inputs::new(&f.iter().collect::<Vec<_>>())
    }

    fn check_state(&self, state: &SystemState) -> Result<()> {
        if state.locations.len() != self.num_robots || state.queues.len() != self.num_queues {
            return Err(EaacError::Length(format!(
                "state with {} robots and {} queues for a model of {} and {}",
                state.locations.len(),
                state.queues.len(),
                self.num_robots,
                self.num_queues
            )));
        }
        Ok(())
    }

    /// Decodes every state of the batch. Token computation is shared.
    pub fn act_batch(
        &self,
        states: &[&SystemState],
        inputs: &Inputs<T>,
        mut mode: Mode<'_>,
    ) -> Result<Vec<DecodedAssignment>> {
        if let Mode::Sample(rngs) = &mode {
            if rngs.len() != states.len() {
                return Err(EaacError::Length(format!(
                    "{} policy streams for {} states",
                    rngs.len(),
                    states.len()
                )));
            }
        }
        let m = self.num_robots;
        let mut rows = Vec::new();
        let mut idle_sets = Vec::with_capacity(states.len());
        for (b, s) in states.iter().enumerate() {
            self.check_state(s)?;
            let (_, idle) = idle_busy_partition(s);
            rows.extend(idle.iter().map(|&r| b * m + r));
            idle_sets.push(idle);
        }
        let logits = net::actor_logits(&self.params, inputs, &rows);
        let mut next = 0;
        let mut out = Vec::with_capacity(states.len());
        for (b, (s, idle)) in states.iter().zip(idle_sets).enumerate() {
            let occupied = s.occupied();
            let mut reserved = vec![false; self.num_queues];
            let mut dec = DecodedAssignment::default();
            for r in idle {
                let own = s.locations[r];
                let mask = decision_mask(own, &occupied, &reserved);
                let dist = MaskedCategorical::new(&logits[next], &mask)?;
                next += 1;
                let j = match &mut mode {
                    Mode::Greedy => dist.greedy(),
                    Mode::Sample(rngs) => dist.sample(&mut rngs[b]),
                };
                let lp = dist.log_prob(j)?.as_f64();
                reserved[j] = true;
                dec.robots.push(r);
                dec.destinations.push(j);
                dec.log_probs.push(lp);
                dec.log_prob += lp;
                dec.entropy += dist.entropy().as_f64();
            }
            out.push(dec);
        }
        Ok(out)
    }

    pub fn act(&self, state: &SystemState, mode: Mode<'_>) -> Result<(JointAction, DecodedAssignment)> {
        let inputs = self.inputs(&[state]);
        let dec = self.act_batch(&[state], &inputs, mode)?.pop().expect("one state");
        Ok((dec.joint_action(state), dec))
    }

    /// Evaluates given idle-robot destinations (aligned with the ascending
    /// idle robots) without building a tape.
    pub fn score(&self, state: &SystemState, destinations: &[usize]) -> Result<DecodedAssignment> {
        self.check_state(state)?;
        let (_, idle) = idle_busy_partition(state);
        let dec = decisions(&[state], &[destinations], self.num_queues)?;
        let inputs = self.inputs(&[state]);
        let logits = net::actor_logits(&self.params, &inputs, &dec.robot_row);
        let n = self.num_queues;
        let mut out = DecodedAssignment::default();
        for (k, &r) in idle.iter().enumerate() {
            let dist = MaskedCategorical::new(&logits[k], &dec.mask[k * n..(k + 1) * n])?;
            let lp = dist.log_prob(dec.choice[k])?.as_f64();
            out.robots.push(r);
            out.destinations.push(dec.choice[k]);
            out.log_probs.push(lp);
            out.log_prob += lp;
            out.entropy += dist.entropy().as_f64();
        }
        Ok(out)
    }

    /// Critic estimates of the discounted reward (negative cost) from each state.
    pub fn values(&self, inputs: &Inputs<T>) -> Vec<f64> {
        net::critic_values(&self.params, inputs)
            .into_iter()
            .map(|v| v.as_f64() * self.value_scale)
            .collect()
    }

    pub fn value(&self, state: &SystemState) -> Result<f64> {
        self.check_state(state)?;
        Ok(self.values(&self.inputs(&[state]))[0])
    }

    /// Differentiable per-sample total log-probabilities of given actions.
    pub fn score_tape<'a>(
        &'a self,
        tape: &mut Tape<'a, T>,
        bound: &Bound,
        inputs: &Inputs<T>,
        dec: &Decisions,
    ) -> Result<(mrq_nn::Var, mrq_nn::Var)> {
        net::actor_score_tape(tape, bound, inputs, dec)
    }
}

/// Decisions and masks for states paired with given idle-robot destinations.
/// Errors if any destination is infeasible at its decoding position.
pub fn decisions(states: &[&SystemState], destinations: &[&[usize]], num_queues: usize) -> Result<Decisions> {
    let mut dec = Decisions::default();
    for (b, (s, dests)) in states.iter().zip(destinations).enumerate() {
        let m = s.locations.len();
        let (_, idle) = idle_busy_partition(s);
        if idle.len() != dests.len() {
            return Err(EaacError::Infeasible(format!(
                "{} destinations for {} idle robots",
                dests.len(),
                idle.len()
            )));
        }
        let occupied = s.occupied();
        let mut reserved = vec![false; num_queues];
        for (&r, &j) in idle.iter().zip(dests.iter()) {
            let mask = decision_mask(s.locations[r], &occupied, &reserved);
            if !mask.get(j).copied().unwrap_or(false) {
                return Err(EaacError::Infeasible(format!("robot {r} cannot move to queue {j}")));
            }
            reserved[j] = true;
            dec.sample.push(b);
            dec.robot_row.push(b * m + r);
            dec.mask.extend(mask);
            dec.choice.push(j);
        }
    }
    Ok(dec)
}

impl EaacModel<f32> {
    pub fn snapshot(&self, iteration: u64) -> Checkpoint {
        Checkpoint {
            scenario_hash: self.scenario_hash,
            iteration,
            params: self.params.clone(),
        }
    }

    /// Rebuilds a model from a checkpoint, checking parameter shapes against
    /// the scenario and then the scenario hash.
    pub fn restore(ckpt: Checkpoint, cfg: &ScenarioConfig) -> Result<Self> {
        let expected = net::expected_shapes(cfg.num_queues);
        let found: Vec<_> = ckpt.params.iter().map(|(n, v)| (n.to_string(), v.shape())).collect();
        if found != expected {
            let detail = expected
                .iter()
                .find(|e| !found.contains(e))
                .map(|(n, s)| format!("expected `{n}` with shape {s:?}"))
                .unwrap_or_else(|| "unexpected parameter set".into());
            return Err(EaacError::Checkpoint(format!(
                "parameters do not fit {} queues: {detail}",
                cfg.num_queues
            )));
        }
        if ckpt.scenario_hash != cfg.hash() {
            return Err(EaacError::Checkpoint(format!(
                "trained for scenario hash {:016x}, not {:016x}",
                ckpt.scenario_hash,
                cfg.hash()
            )));
        }
        Ok(Self::with_params(cfg, ckpt.params))
    }

    pub fn write<W: Write>(&self, w: W, iteration: u64) -> Result<()> {
        Ok(write_checkpoint(w, &self.snapshot(iteration))?)
    }

    pub fn read<R: Read>(r: R, cfg: &ScenarioConfig) -> Result<Self> {
        Self::restore(read_checkpoint(r)?, cfg)
    }

    pub fn save(&self, path: &Path, iteration: u64) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(f, iteration)
    }

    pub fn load(path: &Path, cfg: &ScenarioConfig) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read(f, cfg)
    }
}

/// Greedy decoding as a [`Policy`].
#[derive(Debug, Clone)]
pub struct EaacPolicy {
    pub model: EaacModel<f32>,
}

impl EaacPolicy {
    pub fn new(model: EaacModel<f32>) -> Self {
        EaacPolicy { model }
    }
}

impl Policy for EaacPolicy {
    fn name(&self) -> &str {
        "eaac"
    }

    fn decide(&self, state: &SystemState, cfg: &ScenarioConfig, _rng: &mut SimRng) -> mrq_core::Result<JointAction> {
        if cfg.num_queues != self.model.num_queues || cfg.num_robots != self.model.num_robots {
            return Err(mrq_core::Error::Policy(format!(
                "model built for {} robots and {} queues",
                self.model.num_robots, self.model.num_queues
            )));
        }
        if state.locations.iter().all(|&l| state.queues[l] > 0) {
            return Ok(JointAction::all_serve(cfg.num_robots));
        }
        let (u, _) = self
            .model
            .act(state, Mode::Greedy)
            .map_err(|e| mrq_core::Error::Policy(e.to_string()))?;
        Ok(u)
    }
}
