mod common;

use mrq_core::{JointAction, RobotAction, SystemState};
use mrq_eaac::model::decision_mask;
use mrq_eaac::net::{self, HIDDEN};
use mrq_eaac::{EaacError, EaacModel, EaacPolicy, Mode};
use mrq_core::Policy;
use mrq_nn::{DenseArray, MaskedCategorical};
use proptest::prelude::*;

fn arb_case() -> impl Strategy<Value = (usize, usize, u64)> {
    (1usize..=3)
        .prop_flat_map(|m| (Just(m), m.max(2)..=6, any::<u64>()))
}

fn setup(m: usize, n: usize, seed: u64) -> (mrq_core::ScenarioConfig, EaacModel<f64>, SystemState) {
    let rates: Vec<f64> = (0..n).map(|i| 0.05 + 0.1 * ((i * 7 + seed as usize) % 5) as f64).collect();
    let cfg = common::scenario(m, &rates);
    let model = common::random_model::<f64>(&cfg, seed);
    let state = common::random_state(&cfg, &mut common::rng(seed ^ 0x5a5a));
    (cfg, model, state)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn decoded_actions_are_exhaustive_and_distinct((m, n, seed) in arb_case(), greedy in any::<bool>()) {
        let (cfg, model, state) = setup(m, n, seed);
        let mut streams = [common::rng(seed)];
        let mode = if greedy { Mode::Greedy } else { Mode::Sample(&mut streams) };
        let (u, dec) = model.act(&state, mode).unwrap();
        u.check(&state, &cfg).unwrap();
        prop_assert!(u.is_exhaustive(&state));
        for r in 0..m {
            if state.is_busy(r) {
                prop_assert_eq!(u.actions[r], RobotAction::Serve);
                prop_assert!(!dec.robots.contains(&r));
            }
        }
        let dests = u.destinations(&state);
        let mut sorted = dests.clone();
        sorted.sort();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), m);
        prop_assert!((dec.log_prob - dec.log_probs.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn masked_distributions_normalize((m, n, seed) in arb_case()) {
        let (_, model, state) = setup(m, n, seed);
        let (_, idle) = mrq_core::idle_busy_partition(&state);
        let rows: Vec<usize> = idle.clone();
        let logits = net::actor_logits(&model.params, &model.inputs(&[&state]), &rows);
        let occupied = state.occupied();
        let mut reserved = vec![false; n];
        let mut streams = [common::rng(seed)];
        let (_, dec) = model.act(&state, Mode::Sample(&mut streams)).unwrap();
        for (k, &r) in idle.iter().enumerate() {
            let mask = decision_mask(state.locations[r], &occupied, &reserved);
            prop_assert!(mask[state.locations[r]]);
            let d = MaskedCategorical::new(&logits[k], &mask).unwrap();
            let total: f64 = (0..n).map(|j| d.prob(j)).sum();
            prop_assert!((total - 1.0).abs() < 1e-10);
            for j in 0..n {
                if !mask[j] {
                    prop_assert_eq!(d.prob(j), 0.0);
                }
            }
            reserved[dec.destinations[k]] = true;
        }
    }

    #[test]
    fn score_agrees_with_sampling((m, n, seed) in arb_case()) {
        let (_, model, state) = setup(m, n, seed);
        let mut streams = [common::rng(seed.wrapping_add(1))];
        let (_, dec) = model.act(&state, Mode::Sample(&mut streams)).unwrap();
        let scored = model.score(&state, &dec.destinations).unwrap();
        prop_assert!((scored.log_prob - dec.log_prob).abs() < 1e-10);
        prop_assert!((scored.entropy - dec.entropy).abs() < 1e-10);
    }

    #[test]
    fn critic_is_finite((m, n, seed) in arb_case()) {
        let (_, model, state) = setup(m, n, seed);
        prop_assert!(model.value(&state).unwrap().is_finite());
    }
}

fn cfg3() -> mrq_core::ScenarioConfig {
    common::scenario(3, &[0.1, 0.2, 0.3, 0.4])
}

#[test]
fn no_idle_robots_means_all_serve() {
    let cfg = cfg3();
    let model = common::random_model::<f64>(&cfg, 1);
    let s = SystemState::new(vec![0, 1, 2], vec![1, 2, 3, 0], &cfg).unwrap();
    let (u, dec) = model.act(&s, Mode::Greedy).unwrap();
    assert_eq!(u, JointAction::all_serve(3));
    assert_eq!((dec.log_prob, dec.entropy), (0.0, 0.0));
    assert!(dec.robots.is_empty());
}

#[test]
fn fully_masked_robot_idles_with_certainty() {
    // N = M: every other queue is occupied
    let cfg = common::scenario(3, &[0.1, 0.2, 0.3]);
    let model = common::random_model::<f64>(&cfg, 2);
    let s = SystemState::new(vec![0, 1, 2], vec![0, 4, 0], &cfg).unwrap();
    let mut streams = [common::rng(0)];
    let (u, dec) = model.act(&s, Mode::Sample(&mut streams)).unwrap();
    assert_eq!(u.actions, vec![RobotAction::Idle, RobotAction::Serve, RobotAction::Idle]);
    assert!(dec.log_probs.iter().all(|&l| l == 0.0));
    assert_eq!(dec.entropy, 0.0);
}

#[test]
fn reservation_removes_earlier_choice() {
    let cfg = common::scenario(2, &[0.1, 0.2, 0.3, 0.4, 0.5]);
    let mut model = common::random_model::<f64>(&cfg, 3);
    // make queue 4 overwhelmingly attractive
    model.params.value_mut("actor.bias").unwrap().data_mut()[4] = 50.0;
    let s = SystemState::new(vec![0, 1], vec![0; 5], &cfg).unwrap();
    let (_, dec) = model.act(&s, Mode::Greedy).unwrap();
    assert_eq!(dec.destinations[0], 4);
    assert_ne!(dec.destinations[1], 4);
    let occupied = s.occupied();
    let mut reserved = vec![false; 5];
    reserved[4] = true;
    let mask = decision_mask(1, &occupied, &reserved);
    assert_eq!(mask, vec![false, true, true, true, false]);
}

#[test]
fn greedy_ties_pick_smallest_index() {
    let cfg = common::scenario(1, &[0.2, 0.2, 0.2]);
    let mut model = EaacModel::<f64>::new(&cfg, &mut common::rng(4));
    // constant logits: zero robot tokens make every score equal the bias
    for name in ["actor.robot.1.w", "actor.robot.1.b"] {
        for v in model.params.value_mut(name).unwrap().data_mut() {
            *v = 0.0;
        }
    }
    let s = SystemState::new(vec![2], vec![0, 0, 0], &cfg).unwrap();
    let (_, dec) = model.act(&s, Mode::Greedy).unwrap();
    assert_eq!(dec.destinations, vec![0]);
}

#[test]
fn score_rejects_infeasible_actions() {
    let cfg = cfg3();
    let model = common::random_model::<f64>(&cfg, 5);
    let s = SystemState::new(vec![0, 1, 2], vec![0, 3, 0, 0], &cfg).unwrap();
    // robot 0 cannot enter robot 1's queue; robot 2 cannot reuse robot 0's pick
    assert!(matches!(model.score(&s, &[1, 2]), Err(EaacError::Infeasible(_))));
    assert!(matches!(model.score(&s, &[3, 3]), Err(EaacError::Infeasible(_))));
    assert!(matches!(model.score(&s, &[3]), Err(EaacError::Infeasible(_))));
    assert!(model.score(&s, &[3, 2]).is_ok());
}

#[test]
fn pooling_ignores_order_and_duplication() {
    let cfg = cfg3();
    let model = common::random_model::<f64>(&cfg, 6);
    let s = SystemState::new(vec![0, 1, 2], vec![5, 0, 2, 9], &cfg).unwrap();
    let inputs = model.inputs(&[&s]);
    let direct = net::critic_values(&model.params, &inputs)[0];
    let hq = net::queue_tokens(&model.params, net::CRITIC, &inputs.queue_x);
    let hr = net::robot_tokens(&model.params, net::CRITIC, &inputs.robot_num, &inputs.robot_loc);
    let pool = |t: &DenseArray<f64>, order: &[usize]| -> Vec<f64> {
        let mut out = vec![0.0; HIDDEN];
        for &r in order {
            for (o, v) in out.iter_mut().zip(t.row(r)) {
                *o += v;
            }
        }
        out.iter().map(|x| x / order.len() as f64).collect()
    };
    let head = |q: Vec<f64>, r: Vec<f64>| {
        let mut x = q;
        x.extend(r);
        x.extend_from_slice(inputs.global.row(0));
        let x = DenseArray::matrix(1, x.len(), x).unwrap();
        net::critic_head(&model.params, &x)[0]
    };
    let permuted = head(pool(&hq, &[3, 1, 0, 2]), pool(&hr, &[2, 0, 1]));
    assert!((permuted - direct).abs() < 1e-10);
    let duplicated = head(pool(&hq, &[0, 1, 2, 3]), pool(&hr, &[0, 1, 2, 0, 1, 2]));
    assert!((duplicated - direct).abs() < 1e-10);
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let cfg = cfg3();
    let model = common::random_model::<f32>(&cfg, 7);
    let mut buf = Vec::new();
    model.write(&mut buf, 3).unwrap();
    let back = EaacModel::read(buf.as_slice(), &cfg).unwrap();
    assert_eq!(back, model);
    let (a, b) = (EaacPolicy::new(model), EaacPolicy::new(back));
    let mut rng = common::rng(8);
    for _ in 0..100 {
        let s = common::random_state(&cfg, &mut rng);
        assert_eq!(
            a.decide(&s, &cfg, &mut rng.clone()).unwrap(),
            b.decide(&s, &cfg, &mut rng.clone()).unwrap()
        );
        assert_eq!(a.model.value(&s).unwrap().to_bits(), b.model.value(&s).unwrap().to_bits());
    }
}

#[test]
fn checkpoint_rejections() {
    let cfg = cfg3();
    let model = common::random_model::<f32>(&cfg, 9);
    let mut buf = Vec::new();
    model.write(&mut buf, 0).unwrap();
    let mut corrupt = buf.clone();
    corrupt[0] ^= 0xff;
    assert!(EaacModel::read(corrupt.as_slice(), &cfg).is_err());
    let wider = common::scenario(3, &[0.1, 0.2, 0.3, 0.4, 0.1]);
    let err = EaacModel::read(buf.as_slice(), &wider).unwrap_err();
    assert!(err.to_string().contains("do not fit 5 queues"), "{err}");
    let other = common::scenario(3, &[0.1, 0.2, 0.3, 0.45]);
    let err = EaacModel::read(buf.as_slice(), &other).unwrap_err();
    assert!(err.to_string().contains("hash"), "{err}");
}
