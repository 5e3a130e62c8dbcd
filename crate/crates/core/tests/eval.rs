use mrq_core::eval::{
    compare, evaluate, from_json, metrics_from_series, record_trajectory, run_episode_with,
    to_json, EvalReport, PairedDifference, Summary,
};
use mrq_core::rng::Domain;
use mrq_core::scenario::builtin;
use mrq_core::{exhaustive_wrap, EslDecider, Policy, RandomDecider, StayPutDecider};

#[test]
fn stored_series_reproduce_metrics() {
    let cfg = builtin("s2").unwrap();
    let (m, series) = record_trajectory(&cfg, &exhaustive_wrap(EslDecider), 9).unwrap();
    assert_eq!(series.len(), cfg.horizon);
    assert_eq!(series[0], vec![0; cfg.num_queues]);
    let (v, q) = metrics_from_series(&series, cfg.beta);
    assert!((v - m.discounted_cost).abs() <= 1e-9 * v.max(1.0));
    assert!((q - m.mean_queue_length).abs() <= 1e-12);
}

#[test]
fn arrivals_are_common_across_policies() {
    let cfg = builtin("s3").unwrap();
    let arrivals = |p: &dyn Policy| {
        let mut seq = Vec::new();
        run_episode_with(&cfg, p, 31, Domain::Eval, |s, _, out| {
            let a: Vec<u32> = (0..cfg.num_queues)
                .map(|i| {
                    let net = out.state.queues[i] + out.departures[i] as u32 - s.queues[i];
                    net.max(out.cap_hits[i] as u32)
                })
                .collect();
            seq.push(a);
        })
        .unwrap();
        seq
    };
    let esl = arrivals(&exhaustive_wrap(EslDecider));
    assert_eq!(esl, arrivals(&exhaustive_wrap(RandomDecider)));
    assert_eq!(esl, arrivals(&exhaustive_wrap(StayPutDecider)));
}

#[test]
fn reports_are_reproducible_and_round_trip() {
    let cfg = builtin("s1").unwrap();
    let a = evaluate(&cfg, &exhaustive_wrap(RandomDecider), 20, 500).unwrap();
    let b = evaluate(&cfg, &exhaustive_wrap(RandomDecider), 20, 500).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.per_run.seeds, (500..520).collect::<Vec<u64>>());
    let back: EvalReport = from_json(&to_json(&a)).unwrap();
    assert_eq!(back, a);
    let s = Summary::of(&a.per_run.discounted_cost).unwrap();
    assert_eq!(s, a.discounted_cost);
}

#[test]
fn summary_matches_hand_computation() {
    let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(s.mean, 2.5);
    let sd = (5.0f64 / 3.0).sqrt();
    assert!((s.std - sd).abs() < 1e-15);
    assert!((s.ci_half_width - 1.96 * sd / 2.0).abs() < 1e-15);
    assert!(s.overlaps(4.5, 1.0));
    assert!(!s.overlaps(10.0, 1.0));
    assert!(Summary::of(&[1.0]).is_err());
}

#[test]
fn paired_interval_uses_student_t() {
    // t_{0.975, 4} = 2.776445105.
    let base = [10.0, 11.0, 12.0, 13.0, 14.0];
    let chal = [9.0, 9.5, 11.0, 12.5, 12.0];
    let d = PairedDifference::of(&base, &chal).unwrap();
    let diffs = [1.0, 1.5, 1.0, 0.5, 2.0];
    let mean = diffs.iter().sum::<f64>() / 5.0;
    let sd = (diffs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
    assert!((d.mean - mean).abs() < 1e-15);
    assert!((d.t_quantile - 2.776445105).abs() < 1e-8);
    assert!((d.ci_half_width - 2.776445105 * sd / 5f64.sqrt()).abs() < 1e-8);
    assert!(d.excludes_zero);
    assert!(PairedDifference::of(&base, &chal[..4]).is_err());
}

#[test]
fn comparison_pairs_only_matching_seeds() {
    let cfg = builtin("s1").unwrap();
    let esl = evaluate(&cfg, &exhaustive_wrap(EslDecider), 30, 0).unwrap();
    let rnd = evaluate(&cfg, &exhaustive_wrap(RandomDecider), 30, 0).unwrap();
    let c = compare(&rnd, &esl).unwrap();
    let d = c.paired_cost.unwrap();
    assert!((d.mean - (rnd.discounted_cost.mean - esl.discounted_cost.mean)).abs() < 1e-9);
    let shifted = evaluate(&cfg, &exhaustive_wrap(EslDecider), 30, 1).unwrap();
    assert!(compare(&rnd, &shifted).unwrap().paired_cost.is_none());
    let other = evaluate(&builtin("s2").unwrap(), &exhaustive_wrap(EslDecider), 30, 0).unwrap();
    assert!(compare(&rnd, &other).is_err());
}
