mod common;

use mrq_core::SystemState;
use mrq_eaac::audit::{gradient_check, Target};
use mrq_eaac::model::decisions;
use mrq_eaac::net::{self, Bound};
use mrq_eaac::Mode;
use mrq_nn::Tape;

#[test]
fn actor_log_prob_gradients() {
    let r = gradient_check(Target::LogProb, 100, 11);
    assert_eq!(r.states, 100);
    assert!(r.worst <= 1e-4, "{r:?}");
}

#[test]
fn critic_value_gradients() {
    let r = gradient_check(Target::Value, 100, 12);
    assert!(r.worst <= 1e-4, "{r:?}");
}

#[test]
fn tape_matches_plain_forward() {
    let mut rng = common::rng(13);
    let cfg = common::scenario(2, &[0.1, 0.3, 0.2, 0.4, 0.25]);
    let model = common::random_model::<f64>(&cfg, 5);
    let states: Vec<SystemState> = (0..32).map(|_| common::random_state(&cfg, &mut rng)).collect();
    let refs: Vec<&SystemState> = states.iter().collect();
    let inputs = model.inputs(&refs);
    let mut streams: Vec<_> = (0..32).map(|i| common::rng(100 + i)).collect();
    let decoded = model.act_batch(&refs, &inputs, Mode::Sample(&mut streams)).unwrap();
    let dests: Vec<&[usize]> = decoded.iter().map(|d| d.destinations.as_slice()).collect();
    let dec = decisions(&refs, &dests, cfg.num_queues).unwrap();
    let mut tape = Tape::new();
    let bound = Bound::new(&mut tape, &model.params).unwrap();
    let (lp, ent) = model.score_tape(&mut tape, &bound, &inputs, &dec).unwrap();
    let v = net::critic_tape(&mut tape, &bound, &inputs).unwrap();
    let plain_v = net::critic_values(&model.params, &inputs);
    for (b, d) in decoded.iter().enumerate() {
        assert!((tape.value(lp).data()[b] - d.log_prob).abs() < 1e-10);
        assert!((tape.value(ent).data()[b] - d.entropy).abs() < 1e-10);
        assert!((tape.value(v).data()[b] - plain_v[b]).abs() < 1e-10);
    }
}
