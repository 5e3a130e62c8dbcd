//! State features shared by the actor and the critic.

use mrq_core::{ScenarioConfig, SystemState};

pub const QUEUE_FEATURES: usize = 4;
/// Numeric part of a robot feature; the location embedding is prepended.
pub const ROBOT_NUMERIC: usize = 3;
pub const GLOBAL_FEATURES: usize = 4;

/// Per-scenario constants: `1 / Qmax` and rates normalized by the largest rate.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureContext {
    pub inv_qmax: f64,
    pub rel_rates: Vec<f64>,
}

impl FeatureContext {
    pub fn new(cfg: &ScenarioConfig) -> Self {
        let max = cfg.max_rate();
        assert!(max > 0.0, "scenario validation rejects all-zero rates");
        FeatureContext {
            inv_qmax: 1.0 / cfg.queue_cap as f64,
            rel_rates: cfg.arrival_rates.iter().map(|p| p / max).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    /// `[x/Qmax, p/max p, o, 1 - o]` per queue.
    pub queue: Vec<[f64; QUEUE_FEATURES]>,
    /// `[x/Qmax, p/max p, busy]` at each robot's location.
    pub robot: Vec<[f64; ROBOT_NUMERIC]>,
    pub locations: Vec<usize>,
    /// Total, max and mean normalized backlog, and the idle fraction.
    pub global: [f64; GLOBAL_FEATURES],
}

pub fn build_features(state: &SystemState, ctx: &FeatureContext) -> Features {
    let n = state.queues.len();
    let m = state.locations.len();
    let occupied = state.occupied();
    let xbar: Vec<f64> = state.queues.iter().map(|&x| x as f64 * ctx.inv_qmax).collect();
    let queue = (0..n)
        .map(|i| {
            let o = occupied[i] as u8 as f64;
            [xbar[i], ctx.rel_rates[i], o, 1.0 - o]
        })
        .collect();
    let robot = state
        .locations
        .iter()
        .map(|&l| [xbar[l], ctx.rel_rates[l], (state.queues[l] > 0) as u8 as f64])
        .collect();
    let total: f64 = xbar.iter().sum();
    let max = xbar.iter().copied().fold(0.0, f64::max);
    let idle = state.locations.iter().filter(|&&l| state.queues[l] == 0).count();
    Features {
        queue,
        robot,
        locations: state.locations.clone(),
        global: [total, max, total / n as f64, idle as f64 / m as f64],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let cfg = mrq_core::scenario::builtin("s1").unwrap();
        let ctx = FeatureContext::new(&cfg);
        let f = build_features(&SystemState::empty(&cfg), &ctx);
        assert_eq!(f.global, [0.0, 0.0, 0.0, 1.0]);
        assert!(f.queue.iter().all(|q| q[0] == 0.0));

        let s = SystemState { locations: vec![0], queues: vec![0, 5, 9] };
        let f = build_features(&s, &ctx);
        let rel: Vec<f64> = f.queue.iter().map(|q| q[1]).collect();
        assert!((rel[0] - 2.0 / 9.0).abs() < 1e-12 && (rel[1] - 5.0 / 9.0).abs() < 1e-12 && rel[2] == 1.0);
        let xbar: Vec<f64> = f.queue.iter().map(|q| q[0]).collect();
        assert_eq!(xbar, vec![0.0, 0.05, 0.09]);
        assert!((f.global[0] - 0.14).abs() < 1e-12);
        assert!((f.global[1] - 0.09).abs() < 1e-12);
        assert!((f.global[2] - 0.14 / 3.0).abs() < 1e-12);
        assert_eq!(f.global[3], 1.0);
        assert_eq!(f.queue[0][2..], [1.0, 0.0]);
        assert_eq!(f.queue[1][2..], [0.0, 1.0]);
        assert_eq!((f.robot[0][0], f.robot[0][2]), (0.0, 0.0));
        assert!((f.robot[0][1] - 2.0 / 9.0).abs() < 1e-12);

        let full = SystemState { locations: vec![1], queues: vec![100; 3] };
        let f = build_features(&full, &ctx);
        assert_eq!(f.global, [3.0, 1.0, 1.0, 0.0]);
    }
}
