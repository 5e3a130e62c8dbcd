#![allow(dead_code)]

use mrq_core::rng::{substream, Domain};
use mrq_core::{ScenarioConfig, SimRng, SystemState};
use mrq_eaac::{audit, EaacModel};
use mrq_nn::Real;

pub fn rng(seed: u64) -> SimRng {
    substream(seed, Domain::Test, 0, 0)
}

pub fn scenario(m: usize, rates: &[f64]) -> ScenarioConfig {
    ScenarioConfig::new("test", m, rates.to_vec()).unwrap()
}

pub fn random_state(cfg: &ScenarioConfig, rng: &mut SimRng) -> SystemState {
    audit::random_state(cfg, rng)
}

pub fn random_model<T: Real>(cfg: &ScenarioConfig, seed: u64) -> EaacModel<T> {
    audit::random_model(cfg, &mut rng(seed))
}
