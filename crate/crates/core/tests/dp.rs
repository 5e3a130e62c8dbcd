use mrq_core::dp::{
    bellman_residual, cap_occupancy, check_monotone, value_iteration, DpConfig, LookupPolicy, StateIndexer,
    ValueTable,
};
use mrq_core::eval::{evaluate, PairedDifference};
use mrq_core::scenario::builtin;
use mrq_core::{
    exhaustive_wrap, holding_cost, step, ArrivalVector, EslDecider, JointAction, RobotAction,
    ScenarioConfig, SystemState,
};

fn solve(cfg: &ScenarioConfig) -> (StateIndexer, ValueTable) {
    value_iteration(cfg, &DpConfig::for_scenario(cfg)).unwrap()
}

/// Expected discounted cost of taking `first` at `z`, then following the
/// table's policy for `depth - 1` more slots, then scoring the table value.
/// Every arrival outcome is enumerated explicitly.
fn rollout(
    z: &SystemState,
    first: &JointAction,
    depth: usize,
    cfg: &ScenarioConfig,
    ix: &StateIndexer,
    t: &ValueTable,
    policy: &LookupPolicy,
) -> f64 {
    let n = cfg.num_queues;
    let mut capped = cfg.clone();
    capped.queue_cap = t.cap;
    let mut expect = 0.0;
    for outcome in 0..1u32 << n {
        let a: Vec<bool> = (0..n).map(|i| outcome >> i & 1 == 1).collect();
        let prob: f64 = (0..n)
            .map(|i| if a[i] { cfg.arrival_rates[i] } else { 1.0 - cfg.arrival_rates[i] })
            .product();
        let next = step(z, first, &ArrivalVector(a), &capped).unwrap().state;
        let tail = if depth == 1 {
            t.values[ix.encode(&next).unwrap()]
        } else {
            let u = policy.action(&next).unwrap();
            rollout(&next, &u, depth - 1, cfg, ix, t, policy)
        };
        expect += prob * tail;
    }
    holding_cost(z) as f64 + cfg.beta * expect
}

#[test]
fn s1_lookup_switches_to_the_long_queue() {
    let cfg = builtin("s1").unwrap();
    let (ix, t) = solve(&cfg);
    let policy = LookupPolicy::new(ix.clone(), t.clone());
    let z = SystemState::new(vec![0], vec![0, 0, 5], &cfg).unwrap();
    let candidates = [RobotAction::Idle, RobotAction::Switch(1), RobotAction::Switch(2)];
    let scores: Vec<f64> = candidates
        .iter()
        .map(|&a| rollout(&z, &JointAction::new(vec![a]), 3, &cfg, &ix, &t, &policy))
        .collect();
    let best = (0..3).min_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();
    assert_eq!(candidates[best], RobotAction::Switch(2), "{scores:?}");
    for (k, s) in scores.iter().enumerate() {
        if k != best {
            assert!(*s > scores[best] + 1e-6, "{scores:?}");
        }
    }
    assert_eq!(policy.action(&z).unwrap(), JointAction::new(vec![RobotAction::Switch(2)]));
}

#[test]
fn single_queue_matches_closed_form() {
    let cfg = ScenarioConfig::new("chain", 1, vec![0.5]).unwrap();
    let (ix, t) = solve(&cfg);
    let policy = LookupPolicy::new(ix, t);
    let (p, b) = (0.5, cfg.beta);
    let infinite = p * b / (1.0 - b);
    assert!((infinite - 49.5).abs() < 1e-9);
    // With x(0) = 0 and a robot that always serves, P(x_t = 1) = p for t >= 1.
    let finite = p * b * (1.0 - b.powi(cfg.horizon as i32 - 1)) / (1.0 - b);
    let rep = evaluate(&cfg, &policy, 500, 4242).unwrap();
    let s = rep.discounted_cost;
    assert!((s.mean - finite).abs() <= s.ci_half_width, "{} +- {} vs {finite}", s.mean, s.ci_half_width);
    assert!((s.mean - infinite).abs() <= s.ci_half_width);
    assert_eq!(rep.cap_hit_fraction, 0.0);
}

#[test]
fn s1_table_is_converged_monotone_and_contracting() {
    let cfg = builtin("s1").unwrap();
    let dp = DpConfig::for_scenario(&cfg);
    assert!(dp.cap >= 15);
    let (ix, t) = value_iteration(&cfg, &dp).unwrap();
    assert!(t.converged);
    let res = bellman_residual(&ix, &t, &cfg).unwrap();
    assert!(res <= dp.tol, "residual {res}");
    check_monotone(&ix, &t, 0.0).unwrap();
    for w in t.history.windows(2).skip(1) {
        assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} then {}", w[0], w[1]);
    }
    let empty = SystemState::empty(&cfg);
    assert!(t.values[ix.encode(&empty).unwrap()] > 0.0);
}

#[test]
fn dp_dominates_esl_on_builtin_scenarios() {
    for name in ["s1", "s2", "s3"] {
        let cfg = builtin(name).unwrap();
        let (ix, t) = solve(&cfg);
        let dp = evaluate(&cfg, &LookupPolicy::new(ix.clone(), t.clone()), 500, 77_000).unwrap();
        let esl = evaluate(&cfg, &exhaustive_wrap(EslDecider), 500, 77_000).unwrap();
        let d = PairedDifference::of(
            &esl.per_run.discounted_cost,
            &dp.per_run.discounted_cost,
        )
        .unwrap();
        assert!(dp.discounted_cost.mean <= esl.discounted_cost.mean, "{name}: {d:?}");
        let policy = LookupPolicy::new(ix, t);
        let frac = cap_occupancy(&cfg, &policy, 500, 77_000).unwrap();
        assert!(frac < 1e-4, "{name}: {frac}");
    }
}

#[test]
fn default_caps_grow_only_on_small_tables() {
    let cap = |n: &str| DpConfig::for_scenario(&builtin(n).unwrap()).cap;
    assert_eq!((cap("s1"), cap("s2"), cap("s3")), (30, 15, 12));
    let one = ScenarioConfig::new("one", 1, vec![0.5]).unwrap();
    assert_eq!(DpConfig::for_scenario(&one).cap, 30);
}
