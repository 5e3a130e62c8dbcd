//! End-to-end acceptance criteria. Each test prints one `PASS`/`FAIL` line
//! straight to the process stderr (bypassing capture) and then asserts.
//!
//! Seeds follow a fixed rule: criterion `k` uses base seed `1000 k` for
//! evaluation and training.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use mrq_core::audit::invariant_sweep;
use mrq_core::dp::{bellman_residual, cap_occupancy, value_iteration, DpConfig, LookupPolicy};
use mrq_core::eval::{evaluate, EvalReport, PairedDifference};
use mrq_core::rng::{substream, Domain};
use mrq_core::scenario::{builtin, generate_scenario, rate_to_units, GenSpec, UNITS_PER_RATE};
use mrq_core::{exhaustive_wrap, EslDecider, ScenarioConfig};
use mrq_eaac::audit::{gradient_check, Target};
use mrq_eaac::{compute_gae, train, EaacPolicy, TrainConfig};
use mrq_nn::MaskedCategorical;
use rand::Rng;

const RUNS: usize = 500;

fn report(k: u32, pass: bool, what: &str, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut e = std::io::stderr().lock();
    let _ = writeln!(e, "[acceptance] criterion {k:>2} {verdict}: {what} | {detail}");
}

fn seed(k: u32) -> u64 {
    1000 * k as u64
}

struct Reference {
    cost: (f64, f64),
    queue: (f64, f64),
}

fn dp_row(k: u32, name: &str, want: Reference, max_solve_secs: f64) {
    let cfg = builtin(name).unwrap();
    let dp = DpConfig::for_scenario(&cfg);
    let t0 = Instant::now();
    let (ix, table) = value_iteration(&cfg, &dp).unwrap();
    let solve = t0.elapsed().as_secs_f64();
    let policy = LookupPolicy::new(ix, table);
    let t1 = Instant::now();
    let r = evaluate(&cfg, &policy, RUNS, seed(k)).unwrap();
    let eval = t1.elapsed().as_secs_f64();
    let frac = cap_occupancy(&cfg, &policy, RUNS, seed(k)).unwrap();
    let cost_ok = r.discounted_cost.overlaps(want.cost.0, want.cost.1);
    let queue_ok = r.mean_queue_length.overlaps(want.queue.0, want.queue.1);
    let pass = cost_ok && queue_ok && policy.table.converged && frac < 1e-4 && solve < max_solve_secs;
    report(
        k,
        pass,
        &format!("{name} exact policy overlaps the reference interval"),
        &format!(
            "cap {} V {:.4} +- {:.2} vs {} +- {}; q {:.4} +- {:.4} vs {} +- {}; at-cap fraction {frac:.1e}; solve {solve:.1}s eval {eval:.1}s",
            dp.cap,
            r.discounted_cost.mean,
            r.discounted_cost.ci_half_width,
            want.cost.0,
            want.cost.1,
            r.mean_queue_length.mean,
            r.mean_queue_length.ci_half_width,
            want.queue.0,
            want.queue.1
        ),
    );
    assert!(cost_ok && queue_ok, "interval overlap failed");
    assert!(policy.table.converged);
    assert!(frac < 1e-4, "cap {} too small: {frac}", dp.cap);
    assert!(solve < max_solve_secs);
}

#[test]
fn criterion_01_s1_exact_policy() {
    dp_row(1, "s1", Reference { cost: (405.8574, 8.68), queue: (1.5895, 0.0211) }, 60.0);
}

#[test]
fn criterion_02_s2_exact_policy() {
    dp_row(2, "s2", Reference { cost: (322.3632, 6.27), queue: (0.8875, 0.0102) }, 900.0);
}

#[test]
fn criterion_03_s3_exact_policy() {
    dp_row(3, "s3", Reference { cost: (397.0253, 5.15), queue: (1.0320, 0.0065) }, 900.0);
}

#[test]
fn criterion_04_s1_esl() {
    let cfg = builtin("s1").unwrap();
    let r = evaluate(&cfg, &exhaustive_wrap(EslDecider), RUNS, seed(4)).unwrap();
    let cost_ok = r.discounted_cost.overlaps(410.51, 8.67);
    let queue_ok = r.mean_queue_length.overlaps(1.6133, 0.0214);
    report(
        4,
        cost_ok && queue_ok,
        "s1 ESL overlaps the reference interval",
        &format!(
            "V {:.4} +- {:.2} vs 410.51 +- 8.67; q {:.4} +- {:.4} vs 1.6133 +- 0.0214",
            r.discounted_cost.mean,
            r.discounted_cost.ci_half_width,
            r.mean_queue_length.mean,
            r.mean_queue_length.ci_half_width
        ),
    );
    assert!(cost_ok && queue_ok);
}

fn train_and_evaluate(cfg: &ScenarioConfig, iterations: usize, train_seed: u64, eval_seed: u64) -> EvalReport {
    let tc = TrainConfig { iterations, seed: train_seed, ..TrainConfig::default() };
    let outcome = train(cfg, &tc, None, |_| {}).unwrap();
    evaluate(cfg, &EaacPolicy::new(outcome.model), RUNS, eval_seed).unwrap()
}

/// Training budget per seed on s1, in PPO iterations.
const S1_ITERATIONS: usize = 60;

#[test]
fn criterion_05_eaac_near_optimal_on_s1() {
    let cfg = builtin("s1").unwrap();
    let (ix, table) = value_iteration(&cfg, &DpConfig::for_scenario(&cfg)).unwrap();
    let dp = evaluate(&cfg, &LookupPolicy::new(ix, table), RUNS, seed(5)).unwrap();
    let t0 = Instant::now();
    let runs: Vec<EvalReport> = (0..3)
        .map(|i| train_and_evaluate(&cfg, S1_ITERATIONS, seed(5) + i, seed(5)))
        .collect();
    let best = runs
        .iter()
        .min_by(|a, b| a.discounted_cost.mean.total_cmp(&b.discounted_cost.mean))
        .unwrap();
    assert_eq!(best.per_run.seeds, dp.per_run.seeds);
    let ratio = best.discounted_cost.mean / dp.discounted_cost.mean;
    let gap = PairedDifference::of(&best.per_run.discounted_cost, &dp.per_run.discounted_cost).unwrap();
    let means: Vec<String> = runs.iter().map(|r| format!("{:.2}", r.discounted_cost.mean)).collect();
    report(
        5,
        ratio <= 1.02,
        "best-of-3 greedy EA-AC within 2% of the exact policy on paired seeds",
        &format!(
            "EA-AC [{}] vs DP {:.2}; ratio {ratio:.4}; paired gap {:.2} +- {:.2}; {} iterations per seed, {:.0}s",
            means.join(", "),
            dp.discounted_cost.mean,
            gap.mean,
            gap.ci_half_width,
            S1_ITERATIONS,
            t0.elapsed().as_secs_f64()
        ),
    );
    assert!(ratio <= 1.02, "ratio {ratio}");
}

/// Training budget on the generated scenario, in PPO iterations.
const GEN_ITERATIONS: usize = 60;

#[test]
fn criterion_06_eaac_beats_esl_on_generated_asymmetric_scenario() {
    let spec = GenSpec::new(3, 12, 0.75, seed(6));
    let cfg = generate_scenario(&spec, "gen-3x12").unwrap();
    let t0 = Instant::now();
    let eaac = train_and_evaluate(&cfg, GEN_ITERATIONS, seed(6), seed(6));
    let esl = evaluate(&cfg, &exhaustive_wrap(EslDecider), RUNS, seed(6)).unwrap();
    let d = PairedDifference::of(&esl.per_run.discounted_cost, &eaac.per_run.discounted_cost).unwrap();
    let pass = d.excludes_zero && d.mean > 0.0;
    report(
        6,
        pass,
        "EA-AC beats ESL on (3, 12) at load 0.75 with a paired CI excluding 0",
        &format!(
            "rates {:?}; ESL {:.2} EA-AC {:.2}; ESL - EA-AC = {:.2} +- {:.2} ({:.1}%); {} iterations, {:.0}s",
            cfg.arrival_rates,
            esl.discounted_cost.mean,
            eaac.discounted_cost.mean,
            d.mean,
            d.ci_half_width,
            100.0 * d.mean / esl.discounted_cost.mean,
            GEN_ITERATIONS,
            t0.elapsed().as_secs_f64()
        ),
    );
    assert!(pass, "{d:?}");
}

#[test]
fn criterion_07_invariants_over_a_million_slots() {
    let rep = invariant_sweep(1_000_000, seed(7)).unwrap();
    let pass = rep.ok() && rep.slots >= 1_000_000;
    report(
        7,
        pass,
        "distinctness, exhaustiveness, flow conservation and nonempty feasible sets",
        &format!(
            "{} slots over {} episodes, {} slots with clamping, {} violations",
            rep.slots, rep.episodes, rep.cap_hits, rep.violation_count
        ),
    );
    assert!(pass, "{:?}", rep.violations);
}

fn gae_oracle(r: &[f64], v: &[f64], boot: f64, beta: f64, lambda: f64) -> Vec<f64> {
    let t = r.len();
    (0..t)
        .map(|s| {
            let mut a = 0.0;
            for l in 0..t - s {
                let next = if s + l + 1 < t { v[s + l + 1] } else { boot };
                let delta = r[s + l] + beta * next - v[s + l];
                a += (beta * lambda).powi(l as i32) * delta;
            }
            a
        })
        .collect()
}

#[test]
fn criterion_08_numeric_oracles() {
    let actor = gradient_check(Target::LogProb, 100, seed(8));
    let critic = gradient_check(Target::Value, 100, seed(8) + 1);
    let grads_ok = actor.states >= 100 && critic.states >= 100 && actor.worst <= 1e-4 && critic.worst <= 1e-4;

    let mut rng = substream(seed(8), Domain::Test, 0, 0);
    let mut gae_err = 0.0f64;
    for _ in 0..200 {
        let t = rng.random_range(1..=300);
        let r: Vec<f64> = (0..t).map(|_| -rng.random_range(0.0..20.0)).collect();
        let v: Vec<f64> = (0..t).map(|_| rng.random_range(-50.0..0.0)).collect();
        let boot = rng.random_range(-50.0..0.0);
        let (beta, lambda) = (rng.random_range(0.5..1.0), rng.random_range(0.0..=1.0));
        let (adv, ret) = compute_gae(&r, &v, boot, beta, lambda).unwrap();
        for (i, a) in gae_oracle(&r, &v, boot, beta, lambda).into_iter().enumerate() {
            gae_err = gae_err.max((adv[i] - a).abs()).max((ret[i] - (a + v[i])).abs());
        }
    }
    let gae_ok = gae_err <= 1e-10;

    let mut shift_err = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..=16);
        let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let mut mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
        mask[rng.random_range(0..n)] = true;
        let c = rng.random_range(-50.0..50.0);
        let shifted: Vec<f64> = logits.iter().map(|l| l + c).collect();
        let a = MaskedCategorical::new(&logits, &mask).unwrap();
        let b = MaskedCategorical::new(&shifted, &mask).unwrap();
        for i in (0..n).filter(|&i| mask[i]) {
            shift_err = shift_err
                .max((a.log_probs()[i] - b.log_probs()[i]).abs())
                .max((a.prob(i) - b.prob(i)).abs());
        }
    }
    let shift_ok = shift_err <= 1e-12;

    let s1 = builtin("s1").unwrap();
    let (ix, table) = value_iteration(&s1, &DpConfig::for_scenario(&s1)).unwrap();
    let residual = bellman_residual(&ix, &table, &s1).unwrap();
    let residual_ok = residual <= 1e-6;

    let chain = ScenarioConfig::new("chain", 1, vec![0.5]).unwrap();
    let (cix, ctable) = value_iteration(&chain, &DpConfig::for_scenario(&chain)).unwrap();
    let sim = evaluate(&chain, &LookupPolicy::new(cix, ctable), RUNS, seed(8)).unwrap();
    let closed = 0.5 * chain.beta / (1.0 - chain.beta);
    let chain_ok = (sim.discounted_cost.mean - closed).abs() <= sim.discounted_cost.ci_half_width;

    let pass = grads_ok && gae_ok && shift_ok && residual_ok && chain_ok;
    report(
        8,
        pass,
        "gradients, GAE, softmax shift, Bellman residual, closed-form chain",
        &format!(
            "grad rel err actor {:.1e} critic {:.1e}; GAE {gae_err:.1e}; shift {shift_err:.1e}; residual {residual:.1e}; chain {:.3} +- {:.3} vs {closed}",
            actor.worst,
            critic.worst,
            sim.discounted_cost.mean,
            sim.discounted_cost.ci_half_width
        ),
    );
    assert!(grads_ok, "{actor:?} {critic:?}");
    assert!(gae_ok && shift_ok && residual_ok && chain_ok);
}

#[test]
fn criterion_09_generated_scenarios_are_exact() {
    let grid: Vec<(usize, usize)> = vec![(1, 3), (1, 4), (2, 4), (2, 8), (3, 12), (4, 10), (6, 24), (12, 60)];
    let loads = [0.3, 0.5, 0.6, 0.75, 0.9, 1.0];
    let mut checked = 0usize;
    let mut violations = Vec::new();
    let mut s = 0u64;
    while checked < 1000 {
        let (m, n) = grid[(s as usize) % grid.len()];
        let rho = loads[(s as usize / grid.len()) % loads.len()];
        let spec = GenSpec::new(m, n, rho, seed(9) + s);
        s += 1;
        if spec.check().is_err() {
            continue;
        }
        let cfg = match generate_scenario(&spec, "g") {
            Ok(c) => c,
            Err(e) => {
                violations.push(format!("{spec:?}: {e}"));
                continue;
            }
        };
        checked += 1;
        let total = (m as f64 * rho * UNITS_PER_RATE as f64).round() as u32;
        let lo = (spec.lambda_min * UNITS_PER_RATE as f64).round() as u32;
        let hi = (spec.lambda_max.min(rho) * UNITS_PER_RATE as f64).round() as u32;
        let units: Vec<Option<u32>> = cfg.arrival_rates.iter().map(|&r| rate_to_units(r)).collect();
        if units.iter().any(Option::is_none) || cfg.arrival_rates.len() != n || cfg.num_robots != m {
            violations.push(format!("{spec:?}: off grid or wrong shape"));
            continue;
        }
        let units: Vec<u32> = units.into_iter().flatten().collect();
        if units.iter().sum::<u32>() != total {
            violations.push(format!("{spec:?}: sum {} != {total}", units.iter().sum::<u32>()));
        }
        if units.iter().any(|&u| u < lo || u > hi) {
            violations.push(format!("{spec:?}: {units:?} outside [{lo}, {hi}]"));
        }
    }
    let pass = violations.is_empty();
    report(
        9,
        pass,
        "generated rates are exact on the grid",
        &format!("{checked} scenarios from {s} specs, {} violations", violations.len()),
    );
    assert!(pass, "{:?}", &violations[..violations.len().min(10)]);
}

fn mrq(dir: &Path, args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_mrq")).args(args).current_dir(dir).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn session(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let s = seed(10).to_string();
    let commands: Vec<Vec<&str>> = vec![
        vec!["gen-scenario", "--robots", "2", "--queues", "6", "--load", "0.7", "--seed", &s, "--out", "gen.toml"],
        vec!["solve-dp", "--scenario", "s1", "--cap", "10", "--out", "s1.table", "--report", "dp.json"],
        vec!["simulate", "--scenario", "gen.toml", "--policy", "random", "--seed", &s, "--out", "traj.csv"],
        vec!["evaluate", "--scenario", "s1", "--policy", "dp", "--table", "s1.table", "--runs", "40", "--seed", &s, "--out", "dp_eval.json"],
        vec!["evaluate", "--scenario", "s1", "--policy", "esl", "--runs", "40", "--seed", &s, "--out", "esl_eval.json"],
        vec!["train", "--scenario", "gen.toml", "--iters", "2", "--episodes", "2", "--horizon", "60", "--minibatch", "32", "--checkpoint-every", "1", "--seed", &s, "--out", "run"],
        vec!["evaluate", "--scenario", "gen.toml", "--policy", "eaac", "--ckpt", "run/final.ckpt", "--runs", "10", "--seed", &s, "--out", "eaac_eval.json"],
        vec!["compare", "--base", "esl_eval.json", "--chal", "dp_eval.json", "--paired", "--out", "cmp.json"],
        vec!["plot-data", "--scenario", "s1", "--reports", "esl_eval.json", "dp_eval.json", "--seed", &s, "--out", "plots"],
    ];
    let mut outputs = Vec::new();
    for args in &commands {
        outputs.push((format!("stdout of {}", args[0]), mrq(dir, args)));
    }
    let mut files: Vec<_> = walk(dir);
    files.sort();
    for f in files {
        let rel = f.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
        outputs.push((rel, std::fs::read(&f).unwrap()));
    }
    outputs
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn criterion_10_cli_outputs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = session(a.path());
    let second = session(b.path());
    let names: Vec<&str> = first.iter().map(|(n, _)| n.as_str()).collect();
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let pass = first.len() == second.len() && differing.is_empty();
    report(
        10,
        pass,
        "rerunning CLI commands reproduces every output byte for byte",
        &format!("{} outputs compared, differing: {differing:?}", names.len()),
    );
    assert!(pass);
}
