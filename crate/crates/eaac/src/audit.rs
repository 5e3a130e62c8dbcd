//! Numerical audits shared by the test suites: central finite differences
//! of the plain forward pass against the tape, in 64-bit.

use mrq_core::rng::{substream, Domain};
use mrq_core::{idle_busy_partition, ScenarioConfig, SimRng, SystemState};
use mrq_nn::{GradMap, Real, Tape};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::model::decisions;
use crate::net::{self, Bound};
use crate::{EaacModel, Mode};

pub const FD_STEP: f64 = 1e-6;
/// States whose ReLU inputs come closer than this to 0 are redrawn.
pub const KINK_MARGIN: f64 = 1e-5;
pub const COORDS_PER_STATE: usize = 24;

/// Distinct random locations; each queue empty with probability one half,
/// otherwise uniform on `1..=cap`.
pub fn random_state(cfg: &ScenarioConfig, rng: &mut SimRng) -> SystemState {
    let mut q: Vec<usize> = (0..cfg.num_queues).collect();
    q.shuffle(rng);
    let locations = q[..cfg.num_robots].to_vec();
    let queues = (0..cfg.num_queues)
        .map(|_| if rng.random_bool(0.5) { 0 } else { rng.random_range(1..=cfg.queue_cap) })
        .collect();
    SystemState::new(locations, queues, cfg).expect("distinct locations")
}

/// Fresh parameters with random biases as well, so no unit starts at a kink.
pub fn random_model<T: Real>(cfg: &ScenarioConfig, rng: &mut SimRng) -> EaacModel<T> {
    let mut model = EaacModel::<T>::new(cfg, rng);
    let names: Vec<String> = model.params.names().map(str::to_string).collect();
    for n in names {
        if n.ends_with(".b") || n.ends_with("bias") {
            for v in model.params.value_mut(&n).expect("listed name").data_mut() {
                *v = T::of(rng.random_range(-0.2..0.2));
            }
        }
    }
    model
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// Total log-probability of a sampled assignment.
    LogProb,
    Value,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub states: usize,
    /// States redrawn for lack of idle robots or for a near-kink.
    pub redrawn: usize,
    /// Largest `|a - fd| / max(|a|, |fd|)` over the sampled coordinate
    /// vectors, absolute when both are below `1e-9`.
    pub worst: f64,
}

fn analytic(model: &EaacModel<f64>, state: &SystemState, dests: &[usize], target: Target) -> Option<GradMap<f64>> {
    let inputs = model.inputs(&[state]);
    let mut tape = Tape::new();
    let bound = Bound::new(&mut tape, &model.params).ok()?;
    let out = match target {
        Target::LogProb => {
            let dec = decisions(&[state], &[dests], model.num_queues).ok()?;
            model.score_tape(&mut tape, &bound, &inputs, &dec).ok()?.0
        }
        Target::Value => net::critic_tape(&mut tape, &bound, &inputs).ok()?,
    };
    let loss = tape.mean(out).ok()?;
    if tape.min_abs_relu_input()? < KINK_MARGIN {
        return None;
    }
    let mut g = tape.backward(loss).ok()?;
    Some(bound.collect(&mut g, &model.params))
}

fn plain(model: &EaacModel<f64>, state: &SystemState, dests: &[usize], target: Target) -> f64 {
    match target {
        Target::LogProb => model.score(state, dests).expect("sampled action is feasible").log_prob,
        Target::Value => net::critic_values(&model.params, &model.inputs(&[state]))[0],
    }
}

/// Checks `target` on `states` random (scenario, parameters, state) draws
/// with up to three robots and six queues.
pub fn gradient_check(target: Target, states: usize, seed: u64) -> GradCheck {
    let mut rng = substream(seed, Domain::Test, 0, 0);
    let prefix = match target {
        Target::LogProb => "actor.",
        Target::Value => "critic.",
    };
    let mut out = GradCheck { states: 0, redrawn: 0, worst: 0.0 };
    while out.states < states {
        let m = rng.random_range(1..=3);
        let n = rng.random_range(m.max(2)..=6);
        let rates: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.6)).collect();
        let cfg = ScenarioConfig::new("audit", m, rates).expect("valid audit scenario");
        let mut model = random_model::<f64>(&cfg, &mut rng);
        let state = random_state(&cfg, &mut rng);
        let dests = if target == Target::LogProb {
            if idle_busy_partition(&state).1.is_empty() {
                out.redrawn += 1;
                continue;
            }
            let mut streams = [rng.clone()];
            let (_, dec) = model.act(&state, Mode::Sample(&mut streams)).expect("valid state");
            rng = streams[0].clone();
            dec.destinations
        } else {
            Vec::new()
        };
        let Some(grads) = analytic(&model, &state, &dests, target) else {
            out.redrawn += 1;
            continue;
        };
        let names: Vec<String> = model.params.names().filter(|n| n.starts_with(prefix)).map(str::to_string).collect();
        let (mut diff, mut na, mut nf) = (0.0, 0.0, 0.0);
        for _ in 0..COORDS_PER_STATE {
            let name = &names[rng.random_range(0..names.len())];
            let k = rng.random_range(0..grads[name].len());
            let x0 = model.params.get(name).expect("listed").data()[k];
            let mut at = |x: f64| {
                model.params.value_mut(name).expect("listed").data_mut()[k] = x;
                plain(&model, &state, &dests, target)
            };
            let fd = (at(x0 + FD_STEP) - at(x0 - FD_STEP)) / (2.0 * FD_STEP);
            at(x0);
            let a = grads[name].data()[k];
            diff += (a - fd) * (a - fd);
            na += a * a;
            nf += fd * fd;
        }
        let scale = f64::max(na, nf).sqrt();
        let err = if scale < 1e-9 { diff.sqrt() } else { diff.sqrt() / scale };
        out.worst = out.worst.max(err);
        out.states += 1;
    }
    out
}
