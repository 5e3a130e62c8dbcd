//! PPO with generalized advantage estimation.
//!
//! Each iteration runs a fixed number of episodes in lockstep from the empty
//! state, sampling from the actor, then makes several passes of clipped
//! surrogate updates over shuffled minibatches. The reward of a slot is the
//! negative holding cost of the state in which the action was chosen; the
//! last state of an episode is bootstrapped with the critic.

use std::path::{Path, PathBuf};

use mrq_core::rng::{substream, SHUFFLE_LANE};
use mrq_core::{
    holding_cost, step, Domain, EpisodeStreams, ScenarioConfig, SystemState,
};
use mrq_core::dynamics::sample_arrivals_streams;
use mrq_nn::{clip_global_norm, AdamConfig, DenseArray, GradMap, Shape, Tape};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::model::{decisions, EaacModel, Mode};
use crate::net::{critic_tape, Bound};
use crate::{EaacError, Result};

/// Lane of the parameter-initialization stream.
pub const INIT_LANE: u32 = 0xFFFD;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub grad_clip: f64,
    pub gae_lambda: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub episodes: usize,
    /// Rollout length; the scenario horizon when unset.
    pub horizon: Option<usize>,
    pub iterations: usize,
    pub seed: u64,
    /// Write a checkpoint every this many iterations (0 disables).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 7e-4,
            clip: 0.2,
            value_coef: 0.5,
            entropy_coef: 1e-3,
            grad_clip: 0.5,
            gae_lambda: 0.95,
            epochs: 4,
            minibatch: 256,
            episodes: 8,
            horizon: None,
            iterations: 100,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("value_coef", self.value_coef),
            ("entropy_coef", self.entropy_coef),
            ("grad_clip", self.grad_clip),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(EaacError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(EaacError::Config(format!("clip must lie in (0, 1), got {}", self.clip)));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(EaacError::Config(format!(
                "gae_lambda must lie in [0, 1], got {}",
                self.gae_lambda
            )));
        }
        for (name, v) in [
            ("epochs", self.epochs),
            ("minibatch", self.minibatch),
            ("episodes", self.episodes),
        ] {
            if v == 0 {
                return Err(EaacError::Config(format!("{name} must be at least 1")));
            }
        }
        if self.horizon == Some(0) {
            return Err(EaacError::Config("horizon must be at least 1".into()));
        }
        Ok(())
    }

    pub fn horizon_for(&self, cfg: &ScenarioConfig) -> usize {
        self.horizon.unwrap_or(cfg.horizon)
    }
}

/// Transitions of one iteration, episode-major (`index = e T + t`).
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    pub episodes: usize,
    pub horizon: usize,
    pub states: Vec<SystemState>,
    /// Idle-robot destinations in ascending robot order.
    pub destinations: Vec<Vec<usize>>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    /// Critic value of each episode's final state.
    pub bootstrap: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub idle_counts: Vec<usize>,
    /// Discounted holding cost of each episode.
    pub episode_costs: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn mean_cost(&self) -> f64 {
        self.episode_costs.iter().sum::<f64>() / self.episode_costs.len() as f64
    }

    /// Fills advantages and return targets episode by episode.
    pub fn compute_advantages(&mut self, beta: f64, lambda: f64) -> Result<()> {
        let t = self.horizon;
        self.advantages.clear();
        self.returns.clear();
        for e in 0..self.episodes {
            let span = e * t..(e + 1) * t;
            let (adv, ret) = compute_gae(
                &self.rewards[span.clone()],
                &self.values[span],
                self.bootstrap[e],
                beta,
                lambda,
            )?;
            self.advantages.extend(adv);
            self.returns.extend(ret);
        }
        if let Some(bad) = self.advantages.iter().position(|a| !a.is_finite()) {
            return Err(EaacError::NonFinite(format!("advantage at transition {bad}")));
        }
        Ok(())
    }
}

/// Runs `tc.episodes` episodes in lockstep with sampled actions.
///
/// Episode `e` of iteration `k` draws from training stream `k E + e`, so the
/// buffer is a pure function of the parameters, the seed and `k`.
pub fn collect_rollouts(
    cfg: &ScenarioConfig,
    model: &EaacModel<f32>,
    tc: &TrainConfig,
    iteration: u64,
) -> Result<RolloutBuffer> {
    let e_count = tc.episodes;
    let horizon = tc.horizon_for(cfg);
    let mut streams: Vec<EpisodeStreams> = (0..e_count)
        .map(|e| {
            EpisodeStreams::new(tc.seed, Domain::Train, iteration * e_count as u64 + e as u64, cfg.num_queues)
        })
        .collect();
    let mut states = vec![SystemState::empty(cfg); e_count];
    let total = e_count * horizon;
    let mut slot_states: Vec<Option<SystemState>> = vec![None; total];
    let mut destinations = vec![Vec::new(); total];
    let mut log_probs = vec![0.0; total];
    let mut rewards = vec![0.0; total];
    let mut values = vec![0.0; total];
    let mut idle_counts = vec![0; total];
    let mut episode_costs = vec![0.0; e_count];
    let mut discount = 1.0;
    for t in 0..horizon {
        let refs: Vec<&SystemState> = states.iter().collect();
        let inputs = model.inputs(&refs);
        let v = model.values(&inputs);
        let mut policy_rngs: Vec<_> = streams.iter().map(|s| s.policy.clone()).collect();
        let decoded = model.act_batch(&refs, &inputs, Mode::Sample(&mut policy_rngs))?;
        for (s, rng) in streams.iter_mut().zip(policy_rngs) {
            s.policy = rng;
        }
        for (e, dec) in decoded.into_iter().enumerate() {
            let i = e * horizon + t;
            let state = &states[e];
            let cost = holding_cost(state) as f64;
            episode_costs[e] += discount * cost;
            let u = dec.joint_action(state);
            let a = sample_arrivals_streams(&cfg.arrival_rates, &mut streams[e].arrivals)?;
            let next = step(state, &u, &a, cfg)?.state;
            rewards[i] = -cost;
            values[i] = v[e];
            log_probs[i] = dec.log_prob;
            idle_counts[i] = dec.robots.len();
            destinations[i] = dec.destinations;
            slot_states[i] = Some(std::mem::replace(&mut states[e], next));
        }
        discount *= cfg.beta;
    }
    let refs: Vec<&SystemState> = states.iter().collect();
    let bootstrap = model.values(&model.inputs(&refs));
    let mut buf = RolloutBuffer {
        episodes: e_count,
        horizon,
        states: slot_states.into_iter().map(|s| s.expect("every slot filled")).collect(),
        destinations,
        log_probs,
        rewards,
        values,
        bootstrap,
        advantages: Vec::new(),
        returns: Vec::new(),
        idle_counts,
        episode_costs,
    };
    buf.compute_advantages(cfg.beta, tc.gae_lambda)?;
    Ok(buf)
}

/// Generalized advantage estimates and return targets for one episode.
///
/// `delta_t = r_t + beta V_{t+1} - V_t` with `V_T = bootstrap`;
/// `A_t = sum_l (beta lambda)^l delta_{t+l}`; `R_t = A_t + V_t`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    bootstrap: f64,
    beta: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if rewards.len() != values.len() {
        return Err(EaacError::Length(format!(
            "{} rewards and {} values",
            rewards.len(),
            values.len()
        )));
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    let mut next_value = bootstrap;
    for t in (0..n).rev() {
        let delta = rewards[t] + beta * next_value - values[t];
        acc = delta + beta * lambda * acc;
        adv[t] = acc;
        next_value = values[t];
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

/// Zero mean, unit (population) variance. A single sample, or a constant
/// batch, is only centered.
pub fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd > 1e-12 {
        adv.iter().map(|a| (a - mean) / sd).collect()
    } else {
        adv.iter().map(|a| a - mean).collect()
    }
}

/// Per-sample clipped surrogate `min(r A, clip(r, 1 - eps, 1 + eps) A)`.
pub fn clipped_objective(ratio: f64, adv: f64, eps: f64) -> f64 {
    (ratio * adv).min(ratio.clamp(1.0 - eps, 1.0 + eps) * adv)
}

/// Means over all minibatches of one update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub actor_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Fraction of samples whose ratio left `[1 - eps, 1 + eps]`.
    pub clip_fraction: f64,
    /// Mean of `(r - 1) - ln r`, a nonnegative divergence estimate.
    pub approx_kl: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    pub minibatches: usize,
    /// Actor loss of the very first minibatch, before any step.
    pub first_actor_loss: f64,
    /// Largest `|r - 1|` in the first minibatch.
    pub first_ratio_error: f64,
}

struct MinibatchOut {
    grads: GradMap<f32>,
    actor_loss: f64,
    value_loss: f64,
    entropy: f64,
    clipped: usize,
    kl_sum: f64,
    max_ratio_error: f64,
}

fn minibatch(
    model: &EaacModel<f32>,
    buf: &RolloutBuffer,
    adv: &[f64],
    idx: &[usize],
    tc: &TrainConfig,
) -> Result<MinibatchOut> {
    let b = idx.len();
    let states: Vec<&SystemState> = idx.iter().map(|&i| &buf.states[i]).collect();
    let dests: Vec<&[usize]> = idx.iter().map(|&i| buf.destinations[i].as_slice()).collect();
    let inputs = model.inputs(&states);
    let dec = decisions(&states, &dests, model.num_queues)?;
    let old: Vec<f32> = idx.iter().map(|&i| buf.log_probs[i] as f32).collect();
    let a: Vec<f32> = idx.iter().map(|&i| adv[i] as f32).collect();
    let scale = model.value_scale;
    let targets: Vec<f32> = idx.iter().map(|&i| (buf.returns[i] / scale) as f32).collect();

    let mut tape = Tape::new();
    let bound = Bound::new(&mut tape, &model.params)?;
    let (logp, ent) = if dec.is_empty() {
        let z = DenseArray::zeros(Shape::Vector(b));
        (tape.constant(z.clone())?, tape.constant(z)?)
    } else {
        model.score_tape(&mut tape, &bound, &inputs, &dec)?
    };
    let surr = tape.clipped_surrogate(logp, &old, &a, tc.clip as f32)?;
    let surr = tape.mean(surr)?;
    let actor = tape.scale(surr, -1.0)?;
    let v = critic_tape(&mut tape, &bound, &inputs)?;
    let se = tape.squared_error(v, &targets)?;
    let vloss = tape.mean(se)?;
    let ent_mean = tape.mean(ent)?;
    let weighted_v = tape.scale(vloss, tc.value_coef as f32)?;
    let bonus = tape.scale(ent_mean, -tc.entropy_coef as f32)?;
    let loss = tape.add(actor, weighted_v)?;
    let loss = tape.add(loss, bonus)?;

    let actor_loss = tape.value(actor).scalar_value() as f64;
    let value_loss = tape.value(vloss).scalar_value() as f64;
    let entropy = tape.value(ent_mean).scalar_value() as f64;
    let total = tape.value(loss).scalar_value();
    if !total.is_finite() {
        return Err(EaacError::NonFinite(format!(
            "loss {total} (actor {actor_loss}, value {value_loss}, entropy {entropy})"
        )));
    }
    let mut clipped = 0;
    let mut kl_sum = 0.0;
    let mut max_ratio_error: f64 = 0.0;
    for (&new, &o) in tape.value(logp).data().iter().zip(&old) {
        let lr = (new - o) as f64;
        let r = lr.exp();
        clipped += ((r - 1.0).abs() > tc.clip) as usize;
        kl_sum += (r - 1.0) - lr;
        max_ratio_error = max_ratio_error.max((r - 1.0).abs());
    }
    let mut g = tape.backward(loss)?;
    let grads = bound.collect(&mut g, &model.params);
    Ok(MinibatchOut {
        grads,
        actor_loss,
        value_loss,
        entropy,
        clipped,
        kl_sum,
        max_ratio_error,
    })
}

/// `tc.epochs` passes of clipped PPO steps over shuffled minibatches.
pub fn ppo_update(
    buf: &RolloutBuffer,
    model: &mut EaacModel<f32>,
    tc: &TrainConfig,
    iteration: u64,
) -> Result<UpdateStats> {
    if buf.advantages.len() != buf.len() || buf.returns.len() != buf.len() {
        return Err(EaacError::Length("buffer advantages are missing".into()));
    }
    let adv = normalize_advantages(&buf.advantages);
    let adam = AdamConfig {
        lr: tc.lr,
        ..AdamConfig::default()
    };
    let mut rng = substream(tc.seed, Domain::Train, iteration, SHUFFLE_LANE);
    let mut order: Vec<usize> = (0..buf.len()).collect();
    let mut stats = UpdateStats::default();
    let mut samples = 0usize;
    let mut clipped = 0usize;
    let mut kl = 0.0;
    for _ in 0..tc.epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(tc.minibatch) {
            let mut out = minibatch(model, buf, &adv, idx, tc)?;
            if stats.minibatches == 0 {
                stats.first_actor_loss = out.actor_loss;
                stats.first_ratio_error = out.max_ratio_error;
            }
            stats.grad_norm += clip_global_norm(&mut out.grads, tc.grad_clip);
            model.params.adam_step(&out.grads, &adam)?;
            stats.actor_loss += out.actor_loss;
            stats.value_loss += out.value_loss;
            stats.entropy += out.entropy;
            stats.minibatches += 1;
            samples += idx.len();
            clipped += out.clipped;
            kl += out.kl_sum;
        }
    }
    let k = stats.minibatches as f64;
    stats.actor_loss /= k;
    stats.value_loss /= k;
    stats.entropy /= k;
    stats.grad_norm /= k;
    stats.clip_fraction = clipped as f64 / samples as f64;
    stats.approx_kl = kl / samples as f64;
    Ok(stats)
}

/// One line of the training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub iteration: usize,
    /// Mean discounted holding cost of the iteration's sampled episodes.
    pub mean_cost: f64,
    pub actor_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: EaacModel<f32>,
    pub curve: Vec<CurveRow>,
    pub checkpoints: Vec<PathBuf>,
}

pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const CURVE_FILE: &str = "curve.csv";

pub fn checkpoint_name(iteration: usize) -> String {
    format!("iter_{iteration:06}.ckpt")
}

pub fn initial_model(cfg: &ScenarioConfig, seed: u64) -> EaacModel<f32> {
    let mut rng = substream(seed, Domain::Train, 0, INIT_LANE);
    EaacModel::new(cfg, &mut rng)
}

/// Alternates rollouts and updates for `tc.iterations` iterations.
///
/// With `out` set, writes the curve CSV, periodic checkpoints and a final
/// checkpoint there. `progress` sees every curve row as it is produced.
pub fn train(
    cfg: &ScenarioConfig,
    tc: &TrainConfig,
    out: Option<&Path>,
    mut progress: impl FnMut(&CurveRow),
) -> Result<TrainOutcome> {
    tc.check()?;
    cfg.check()?;
    let mut model = initial_model(cfg, tc.seed);
    let mut curve = Vec::with_capacity(tc.iterations);
    let mut checkpoints = Vec::new();
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    for k in 0..tc.iterations {
        let buf = collect_rollouts(cfg, &model, tc, k as u64)?;
        let stats = ppo_update(&buf, &mut model, tc, k as u64)?;
        let row = CurveRow {
            iteration: k,
            mean_cost: buf.mean_cost(),
            actor_loss: stats.actor_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            clip_fraction: stats.clip_fraction,
        };
        progress(&row);
        curve.push(row);
        if let Some(dir) = out {
            if tc.checkpoint_every > 0 && (k + 1) % tc.checkpoint_every == 0 {
                let p = dir.join(checkpoint_name(k + 1));
                model.save(&p, (k + 1) as u64)?;
                checkpoints.push(p);
            }
        }
    }
    if let Some(dir) = out {
        let p = dir.join(FINAL_CHECKPOINT);
        model.save(&p, tc.iterations as u64)?;
        checkpoints.push(p);
        write_curve(&dir.join(CURVE_FILE), &curve)?;
    }
    Ok(TrainOutcome {
        model,
        curve,
        checkpoints,
    })
}

pub fn write_curve(path: &Path, curve: &[CurveRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in curve {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
