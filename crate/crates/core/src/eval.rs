//! Replicated evaluation, confidence intervals and policy comparison.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::baseline::Policy;
use crate::dynamics::{
    holding_cost, sample_arrivals_streams, step, JointAction, ScenarioConfig, StepOutcome,
    SystemState,
};
use crate::rng::{Domain, EpisodeStreams};
use crate::{Error, Result};

pub const REPORT_VERSION: u32 = 1;

/// Normal quantile used for the reported 95% half-widths.
pub const Z95: f64 = 1.96;

/// Cap-hit fraction above which a report is flagged.
pub const CAP_WARNING_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub seed: u64,
    pub discounted_cost: f64,
    pub mean_queue_length: f64,
    /// Slots in which at least one arrival was dropped at the cap.
    pub cap_hit_count: u64,
}

/// Simulates `cfg.horizon` slots from the empty state, calling `observe`
/// on every transition.
pub fn run_episode_with<P, F>(
    cfg: &ScenarioConfig,
    policy: &P,
    seed: u64,
    domain: Domain,
    mut observe: F,
) -> Result<EpisodeMetrics>
where
    P: Policy + ?Sized,
    F: FnMut(&SystemState, &JointAction, &StepOutcome),
{
    let mut streams = EpisodeStreams::new(seed, domain, 0, cfg.num_queues);
    let mut state = SystemState::empty(cfg);
    let mut discount = 1.0;
    let mut cost = 0.0;
    let mut queue_sum = 0.0;
    let mut cap_hits = 0;
    for _ in 0..cfg.horizon {
        let c = holding_cost(&state) as f64;
        cost += discount * c;
        queue_sum += c / cfg.num_queues as f64;
        discount *= cfg.beta;
        let u = policy.decide(&state, cfg, &mut streams.policy)?;
        let a = sample_arrivals_streams(&cfg.arrival_rates, &mut streams.arrivals)?;
        let out = step(&state, &u, &a, cfg)?;
        cap_hits += out.any_cap_hit() as u64;
        observe(&state, &u, &out);
        state = out.state;
    }
    Ok(EpisodeMetrics {
        seed,
        discounted_cost: cost,
        mean_queue_length: queue_sum / cfg.horizon as f64,
        cap_hit_count: cap_hits,
    })
}

pub fn run_episode<P: Policy + ?Sized>(cfg: &ScenarioConfig, policy: &P, seed: u64) -> Result<EpisodeMetrics> {
    run_episode_with(cfg, policy, seed, Domain::Eval, |_, _, _| {})
}

/// Queue-length series `x(0), ..., x(T-1)` of one evaluation episode.
pub fn record_trajectory<P: Policy + ?Sized>(
    cfg: &ScenarioConfig,
    policy: &P,
    seed: u64,
) -> Result<(EpisodeMetrics, Vec<Vec<u32>>)> {
    let mut series = Vec::with_capacity(cfg.horizon);
    let m = run_episode_with(cfg, policy, seed, Domain::Eval, |s, _, _| series.push(s.queues.clone()))?;
    Ok((m, series))
}

/// `(V, q)` recomputed from a stored queue-length series.
pub fn metrics_from_series(series: &[Vec<u32>], beta: f64) -> (f64, f64) {
    let mut v = 0.0;
    let mut q = 0.0;
    let mut d = 1.0;
    for x in series {
        let c: f64 = x.iter().map(|&v| v as f64).sum();
        v += d * c;
        q += c / x.len() as f64;
        d *= beta;
    }
    (v, q / series.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub ci_half_width: f64,
}

impl Summary {
    /// Mean, sample standard deviation and `1.96 s / sqrt(n)`.
    pub fn of(xs: &[f64]) -> Result<Self> {
        let n = xs.len();
        if n < 2 {
            return Err(Error::Report(format!("need at least 2 runs, got {n}")));
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let std = var.sqrt();
        Ok(Summary {
            mean,
            std,
            ci_half_width: Z95 * std / (n as f64).sqrt(),
        })
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.ci_half_width
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.ci_half_width
    }

    /// Whether the intervals `mean +- half` overlap.
    pub fn overlaps(&self, mean: f64, half: f64) -> bool {
        self.lower() <= mean + half && mean - half <= self.upper()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerRun {
    pub seeds: Vec<u64>,
    pub discounted_cost: Vec<f64>,
    pub mean_queue_length: Vec<f64>,
    pub cap_hits: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub policy: String,
    pub scenario: String,
    pub scenario_hash: String,
    pub runs: usize,
    pub base_seed: u64,
    pub horizon: usize,
    pub discounted_cost: Summary,
    pub mean_queue_length: Summary,
    pub cap_hit_fraction: f64,
    pub warnings: Vec<String>,
    pub per_run: PerRun,
}

/// Runs episodes with seeds `base_seed .. base_seed + runs`.
pub fn evaluate<P: Policy + ?Sized>(
    cfg: &ScenarioConfig,
    policy: &P,
    runs: usize,
    base_seed: u64,
) -> Result<EvalReport> {
    if runs < 2 {
        return Err(Error::Report(format!("need at least 2 runs, got {runs}")));
    }
    let mut metrics = Vec::with_capacity(runs);
    for i in 0..runs as u64 {
        metrics.push(run_episode(cfg, policy, base_seed.wrapping_add(i))?);
    }
    report_from_metrics(cfg, policy.name(), base_seed, &metrics)
}

pub fn report_from_metrics(
    cfg: &ScenarioConfig,
    policy: &str,
    base_seed: u64,
    metrics: &[EpisodeMetrics],
) -> Result<EvalReport> {
    let per_run = PerRun {
        seeds: metrics.iter().map(|m| m.seed).collect(),
        discounted_cost: metrics.iter().map(|m| m.discounted_cost).collect(),
        mean_queue_length: metrics.iter().map(|m| m.mean_queue_length).collect(),
        cap_hits: metrics.iter().map(|m| m.cap_hit_count).collect(),
    };
    let slots = (metrics.len() * cfg.horizon) as f64;
    let cap_hit_fraction = per_run.cap_hits.iter().sum::<u64>() as f64 / slots;
    let mut warnings = Vec::new();
    if cap_hit_fraction > CAP_WARNING_FRACTION {
        warnings.push(format!(
            "arrivals were dropped at the queue cap in {:.4}% of slots; metrics are biased low",
            100.0 * cap_hit_fraction
        ));
    }
    Ok(EvalReport {
        version: REPORT_VERSION,
        policy: policy.to_string(),
        scenario: cfg.name.clone(),
        scenario_hash: format!("{:016x}", cfg.hash()),
        runs: metrics.len(),
        base_seed,
        horizon: cfg.horizon,
        discounted_cost: Summary::of(&per_run.discounted_cost)?,
        mean_queue_length: Summary::of(&per_run.mean_queue_length)?,
        cap_hit_fraction,
        warnings,
        per_run,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDifference {
    /// Mean of `baseline - challenger` over common seeds.
    pub mean: f64,
    pub ci_half_width: f64,
    pub t_quantile: f64,
    pub n: usize,
    pub excludes_zero: bool,
}

impl PairedDifference {
    /// Paired-t 95% interval on `base - chal`.
    pub fn of(base: &[f64], chal: &[f64]) -> Result<Self> {
        if base.len() != chal.len() {
            return Err(Error::Report("paired samples differ in length".into()));
        }
        let d: Vec<f64> = base.iter().zip(chal).map(|(b, c)| b - c).collect();
        let s = Summary::of(&d)?;
        let n = d.len();
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
            .map_err(|e| Error::Report(e.to_string()))?
            .inverse_cdf(0.975);
        let half = t * s.std / (n as f64).sqrt();
        Ok(PairedDifference {
            mean: s.mean,
            ci_half_width: half,
            t_quantile: t,
            n,
            excludes_zero: s.mean - half > 0.0 || s.mean + half < 0.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub version: u32,
    pub scenario: String,
    pub baseline: String,
    pub challenger: String,
    pub baseline_cost: Summary,
    pub challenger_cost: Summary,
    pub baseline_queue: Summary,
    pub challenger_queue: Summary,
    pub cost_reduction_pct: f64,
    pub queue_reduction_pct: f64,
    pub paired_cost: Option<PairedDifference>,
    pub paired_queue: Option<PairedDifference>,
}

pub fn reduction_pct(base: f64, chal: f64) -> f64 {
    100.0 * (base - chal) / base
}

/// Reductions relative to `base`; paired intervals are added when both
/// reports ran on the same seeds.
pub fn compare(base: &EvalReport, chal: &EvalReport) -> Result<ComparisonReport> {
    if base.scenario_hash != chal.scenario_hash {
        return Err(Error::Report(format!(
            "scenario mismatch: `{}` vs `{}`",
            base.scenario, chal.scenario
        )));
    }
    let paired = base.per_run.seeds == chal.per_run.seeds;
    let pair = |a: &[f64], b: &[f64]| -> Result<Option<PairedDifference>> {
        if paired {
            PairedDifference::of(a, b).map(Some)
        } else {
            Ok(None)
        }
    };
    Ok(ComparisonReport {
        version: REPORT_VERSION,
        scenario: base.scenario.clone(),
        baseline: base.policy.clone(),
        challenger: chal.policy.clone(),
        baseline_cost: base.discounted_cost,
        challenger_cost: chal.discounted_cost,
        baseline_queue: base.mean_queue_length,
        challenger_queue: chal.mean_queue_length,
        cost_reduction_pct: reduction_pct(base.discounted_cost.mean, chal.discounted_cost.mean),
        queue_reduction_pct: reduction_pct(base.mean_queue_length.mean, chal.mean_queue_length.mean),
        paired_cost: pair(&base.per_run.discounted_cost, &chal.per_run.discounted_cost)?,
        paired_queue: pair(&base.per_run.mean_queue_length, &chal.per_run.mean_queue_length)?,
    })
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

pub fn from_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Report(format!("cannot parse report: {e}")))
}

pub fn render_report(r: &EvalReport) -> String {
    let mut s = format!(
        "policy {}  scenario {}  runs {}  seeds {}..{}\n",
        r.policy,
        r.scenario,
        r.runs,
        r.base_seed,
        r.base_seed + r.runs as u64 - 1
    );
    s += &format!("{:<22}{:>14}{:>14}\n", "metric", "mean", "95% CI +-");
    s += &format!(
        "{:<22}{:>14.4}{:>14.4}\n",
        "discounted cost", r.discounted_cost.mean, r.discounted_cost.ci_half_width
    );
    s += &format!(
        "{:<22}{:>14.4}{:>14.4}\n",
        "mean queue length", r.mean_queue_length.mean, r.mean_queue_length.ci_half_width
    );
    s += &format!("cap-hit fraction {:.3e}\n", r.cap_hit_fraction);
    for w in &r.warnings {
        s += &format!("warning: {w}\n");
    }
    s
}

pub fn render_comparison(c: &ComparisonReport) -> String {
    let mut s = format!("scenario {}: {} (baseline) vs {}\n", c.scenario, c.baseline, c.challenger);
    s += &format!(
        "{:<20}{:>22}{:>22}{:>12}\n",
        "metric", &c.baseline, &c.challenger, "red. %"
    );
    let cell = |x: &Summary| format!("{:.4} +- {:.4}", x.mean, x.ci_half_width);
    s += &format!(
        "{:<20}{:>22}{:>22}{:>12.2}\n",
        "discounted cost",
        cell(&c.baseline_cost),
        cell(&c.challenger_cost),
        c.cost_reduction_pct
    );
    s += &format!(
        "{:<20}{:>22}{:>22}{:>12.2}\n",
        "mean queue length",
        cell(&c.baseline_queue),
        cell(&c.challenger_queue),
        c.queue_reduction_pct
    );
    if let Some(p) = &c.paired_cost {
        s += &format!(
            "paired cost difference {:.4} +- {:.4} (n = {}, {})\n",
            p.mean,
            p.ci_half_width,
            p.n,
            if p.excludes_zero { "excludes 0" } else { "includes 0" }
        );
    }
    s
}
