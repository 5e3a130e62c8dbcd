//! Scenario files, built-in instances and asymmetric rate generation.
//!
//! Generated rates live on a 0.05 grid and are handled as integer grid
//! units, so the total load is exact.

use std::path::Path;

use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::dynamics::{OccupancyConvention, ScenarioConfig};
use crate::rng::{substream, Domain, SimRng};
use crate::{Error, Result};

/// Grid units per unit rate.
pub const UNITS_PER_RATE: u32 = 20;

pub fn units_to_rate(units: u32) -> f64 {
    units as f64 / UNITS_PER_RATE as f64
}

/// Grid units of `rate` if it lies on the grid (within 1e-9).
pub fn rate_to_units(rate: f64) -> Option<u32> {
    let u = rate * UNITS_PER_RATE as f64;
    let r = u.round();
    ((u - r).abs() < 1e-9 && r >= 0.0).then_some(r as u32)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }
}

pub fn validate_scenario(cfg: &ScenarioConfig) -> ValidationReport {
    let mut rep = ValidationReport::default();
    let (m, n) = (cfg.num_robots, cfg.num_queues);
    if m == 0 {
        rep.errors.push("at least one robot is required".into());
    }
    if n == 0 {
        rep.errors.push("at least one queue is required".into());
    }
    if m > n {
        rep.errors.push(format!("{m} robots exceed {n} queues"));
    }
    if cfg.arrival_rates.len() != n {
        rep.errors.push(format!(
            "{} arrival rates given for {n} queues",
            cfg.arrival_rates.len()
        ));
    }
    for (i, &p) in cfg.arrival_rates.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) {
            rep.errors.push(format!("rate {p} of queue {i} is outside [0, 1]"));
        }
    }
    if !cfg.arrival_rates.is_empty() && cfg.arrival_rates.iter().all(|&p| p == 0.0) {
        rep.errors.push("all arrival rates are zero".into());
    }
    if !(cfg.beta > 0.0 && cfg.beta < 1.0) {
        rep.errors.push(format!("discount {} is outside (0, 1)", cfg.beta));
    }
    if cfg.queue_cap == 0 {
        rep.errors.push("queue cap must be at least 1".into());
    }
    if cfg.horizon == 0 {
        rep.errors.push("horizon must be at least 1".into());
    }
    let off_grid: Vec<usize> = cfg
        .arrival_rates
        .iter()
        .enumerate()
        .filter(|(_, &p)| rate_to_units(p).is_none())
        .map(|(i, _)| i)
        .collect();
    if !off_grid.is_empty() {
        rep.warnings.push(format!("rates of queues {off_grid:?} are not on the 0.05 grid"));
    }
    let load: f64 = cfg.arrival_rates.iter().sum();
    if load >= m as f64 && m > 0 {
        rep.warnings.push(format!(
            "total arrival rate {load:.3} is at least the service capacity {m}; queues will saturate"
        ));
    }
    rep
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScenarioFile {
    name: String,
    robots: usize,
    queues: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rates: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rate_units: Option<Vec<u32>>,
    #[serde(default = "default_beta")]
    beta: f64,
    #[serde(default = "default_qmax")]
    qmax: u32,
    #[serde(default = "default_horizon")]
    horizon: usize,
    #[serde(default)]
    convention: OccupancyConvention,
}

fn default_beta() -> f64 {
    0.99
}
fn default_qmax() -> u32 {
    100
}
fn default_horizon() -> usize {
    1000
}

/// Parses a TOML scenario. Rates are given either as decimals (`rates`) or
/// as 0.05 grid units (`rate_units`).
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig> {
    let f: ScenarioFile =
        toml::from_str(text).map_err(|e| Error::Scenario(format!("parse error: {e}")))?;
    let rates = match (f.rates, f.rate_units) {
        (Some(r), None) => r,
        (None, Some(u)) => u.into_iter().map(units_to_rate).collect(),
        (Some(_), Some(_)) => {
            return Err(Error::Scenario("give either `rates` or `rate_units`, not both".into()))
        }
        (None, None) => return Err(Error::Scenario("missing `rates` or `rate_units`".into())),
    };
    if rates.len() != f.queues {
        return Err(Error::Scenario(format!(
            "`queues` = {} but {} rates given",
            f.queues,
            rates.len()
        )));
    }
    let cfg = ScenarioConfig {
        name: f.name,
        num_robots: f.robots,
        num_queues: f.queues,
        arrival_rates: rates,
        beta: f.beta,
        queue_cap: f.qmax,
        horizon: f.horizon,
        convention: f.convention,
    };
    cfg.check()?;
    Ok(cfg)
}

/// TOML text; grid-aligned rates are written as `rate_units`.
pub fn render_scenario(cfg: &ScenarioConfig) -> String {
    let units: Option<Vec<u32>> = cfg.arrival_rates.iter().map(|&p| rate_to_units(p)).collect();
    let (rates, rate_units) = match units {
        Some(u) => (None, Some(u)),
        None => (Some(cfg.arrival_rates.clone()), None),
    };
    let f = ScenarioFile {
        name: cfg.name.clone(),
        robots: cfg.num_robots,
        queues: cfg.num_queues,
        rates,
        rate_units,
        beta: cfg.beta,
        qmax: cfg.queue_cap,
        horizon: cfg.horizon,
        convention: cfg.convention,
    };
    toml::to_string(&f).expect("scenario serializes")
}

/// Built-in instances: the three small asymmetric benchmarks `s1`..`s3` and
/// the symmetric instances `s4`, `s5`.
pub fn builtin(name: &str) -> Option<ScenarioConfig> {
    let (m, rates): (usize, Vec<f64>) = match name {
        "s1" => (1, vec![0.10, 0.25, 0.45]),
        "s2" => (1, vec![0.05, 0.10, 0.25, 0.30]),
        "s3" => (2, vec![0.15, 0.25, 0.50, 0.60]),
        "s4" => (6, vec![0.1167; 36]),
        "s5" => (12, vec![0.14; 60]),
        _ => return None,
    };
    ScenarioConfig::new(name, m, rates).ok()
}

pub const BUILTIN_NAMES: [&str; 5] = ["s1", "s2", "s3", "s4", "s5"];

/// A built-in name or a path to a TOML file.
pub fn load_scenario(spec: &str) -> Result<ScenarioConfig> {
    if let Some(cfg) = builtin(spec) {
        return Ok(cfg);
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(Error::Scenario(format!(
            "`{spec}` is neither a built-in ({}) nor an existing file",
            BUILTIN_NAMES.join(", ")
        )));
    }
    parse_scenario(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub robots: usize,
    pub queues: usize,
    pub load: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub alpha: f64,
    pub seed: u64,
}

impl GenSpec {
    pub fn new(robots: usize, queues: usize, load: f64, seed: u64) -> Self {
        GenSpec {
            robots,
            queues,
            load,
            lambda_min: 0.05,
            lambda_max: 0.6,
            alpha: 1.0,
            seed,
        }
    }

    /// Total grid units `round(M rho / 0.05)`.
    pub fn total_units(&self) -> u32 {
        (self.robots as f64 * self.load * UNITS_PER_RATE as f64).round() as u32
    }

    /// `(lo, hi)` per-queue bounds in grid units, `hi` from `min(lambda_max, rho)`.
    pub fn unit_bounds(&self) -> (u32, u32) {
        let lo = (self.lambda_min * UNITS_PER_RATE as f64 - 1e-9).ceil() as u32;
        let hi = (self.lambda_max.min(self.load) * UNITS_PER_RATE as f64 + 1e-9).floor() as u32;
        (lo, hi)
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Generation(m));
        if self.robots == 0 || self.queues == 0 || self.robots > self.queues {
            return bad(format!("need 1 <= M <= N, got M={}, N={}", self.robots, self.queues));
        }
        if !(self.load > 0.0 && self.load <= 1.0) {
            return bad(format!("load {} is outside (0, 1]", self.load));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("Dirichlet concentration {} must be positive", self.alpha));
        }
        if !(self.lambda_min >= 0.0 && self.lambda_min <= self.lambda_max && self.lambda_max <= 1.0) {
            return bad(format!(
                "bounds [{}, {}] are not a subrange of [0, 1]",
                self.lambda_min, self.lambda_max
            ));
        }
        let (lo, hi) = self.unit_bounds();
        let total = self.total_units() as u64;
        let n = self.queues as u64;
        if lo > hi || n * lo as u64 > total || total > n * hi as u64 {
            return bad(format!(
                "infeasible: {n} queues in [{lo}, {hi}] units cannot sum to {total} units"
            ));
        }
        Ok(())
    }
}

/// Clamps `targets` into `[lo, hi]`, moving the clipped mass proportionally
/// onto the unclamped entries until none is out of bounds.
pub fn clamp_redistribute(targets: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let n = targets.len();
    let total: f64 = targets.iter().sum();
    let mut fixed: Vec<Option<f64>> = vec![None; n];
    loop {
        let fixed_sum: f64 = fixed.iter().flatten().sum();
        let free_weight: f64 = (0..n).filter(|&i| fixed[i].is_none()).map(|i| targets[i]).sum();
        let free_count = fixed.iter().filter(|f| f.is_none()).count();
        let remaining = total - fixed_sum;
        let value = |i: usize| -> f64 {
            match fixed[i] {
                Some(v) => v,
                None if free_weight > 0.0 => targets[i] / free_weight * remaining,
                None => remaining / free_count as f64,
            }
        };
        let current: Vec<f64> = (0..n).map(value).collect();
        let mut changed = false;
        for i in 0..n {
            if fixed[i].is_none() {
                if current[i] < lo {
                    fixed[i] = Some(lo);
                    changed = true;
                } else if current[i] > hi {
                    fixed[i] = Some(hi);
                    changed = true;
                }
            }
        }
        if !changed || free_count == 0 {
            return current;
        }
    }
}

/// Integer apportionment of `total` units by largest remainder; ties go to
/// the smaller index.
pub fn largest_remainder(targets: &[f64], total: u32) -> Vec<u32> {
    let mut units: Vec<u32> = targets.iter().map(|t| t.max(0.0).floor() as u32).collect();
    let assigned: u32 = units.iter().sum();
    let mut order: Vec<usize> = (0..targets.len()).collect();
    let rem = |i: usize| targets[i].max(0.0) - targets[i].max(0.0).floor();
    order.sort_by(|&a, &b| rem(b).total_cmp(&rem(a)).then(a.cmp(&b)));
    if assigned <= total {
        for &i in order.iter().cycle().take((total - assigned) as usize) {
            units[i] += 1;
        }
    } else {
        for &i in order.iter().rev().cycle().take((assigned - total) as usize) {
            units[i] = units[i].saturating_sub(1);
        }
    }
    units
}

/// Moves single units from the largest over-bound holder to the smallest
/// under-bound holder (or, lacking one, to the smallest holder with room)
/// until every entry lies in `[lo, hi]`. Returns `false` if stuck.
pub fn repair_bounds(units: &mut [u32], lo: u32, hi: u32, max_moves: usize) -> bool {
    for _ in 0..max_moves {
        let over = (0..units.len()).filter(|&i| units[i] > hi).max_by_key(|&i| (units[i], usize::MAX - i));
        let under = (0..units.len()).filter(|&i| units[i] < lo).min_by_key(|&i| (units[i], i));
        let (from, to) = match (over, under) {
            (None, None) => return true,
            (Some(f), Some(t)) => (f, t),
            (Some(f), None) => match (0..units.len()).filter(|&i| units[i] < hi).min_by_key(|&i| (units[i], i)) {
                Some(t) => (f, t),
                None => return false,
            },
            (None, Some(t)) => match (0..units.len()).filter(|&i| units[i] > lo).max_by_key(|&i| (units[i], usize::MAX - i)) {
                Some(f) => (f, t),
                None => return false,
            },
        };
        units[from] -= 1;
        units[to] += 1;
    }
    units.iter().all(|&u| (lo..=hi).contains(&u))
}

/// Grid units for one Dirichlet weight vector; `None` if repair fails.
pub fn quantize_weights(weights: &[f64], spec: &GenSpec) -> Option<Vec<u32>> {
    let (lo, hi) = spec.unit_bounds();
    let total = spec.total_units();
    let sum: f64 = weights.iter().sum();
    let targets: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let clamped = clamp_redistribute(&targets, lo as f64, hi as f64);
    let mut units = largest_remainder(&clamped, total);
    let moves = 100 * units.len() + 100;
    repair_bounds(&mut units, lo, hi, moves).then_some(units)
}

const MAX_RETRIES: usize = 100;

/// Asymmetric rate vector in grid units.
pub fn generate_rate_units(spec: &GenSpec) -> Result<Vec<u32>> {
    spec.check()?;
    let mut rng: SimRng = substream(spec.seed, Domain::Generate, 0, 0);
    let gamma = Gamma::new(spec.alpha, 1.0).map_err(|e| Error::Generation(e.to_string()))?;
    let mut last = String::new();
    for _ in 0..MAX_RETRIES {
        let mut w: Vec<f64> = (0..spec.queues).map(|_| gamma.sample(&mut rng)).collect();
        if w.iter().sum::<f64>() <= 0.0 {
            w = vec![1.0; spec.queues];
        }
        match quantize_weights(&w, spec) {
            Some(u) => return Ok(u),
            None => last = format!("repair failed for weights {w:?}"),
        }
    }
    Err(Error::Generation(format!("gave up after {MAX_RETRIES} draws: {last}")))
}

pub fn generate_rates(spec: &GenSpec) -> Result<Vec<f64>> {
    Ok(generate_rate_units(spec)?.into_iter().map(units_to_rate).collect())
}

/// Scenario with generated rates and simulation defaults.
pub fn generate_scenario(spec: &GenSpec, name: &str) -> Result<ScenarioConfig> {
    ScenarioConfig::new(name, spec.robots, generate_rates(spec)?)
}

/// Number of queues per 0.05 grid value `0, 0.05, ..., 1.0` (21 bins).
/// Off-grid rates fall into the nearest bin.
pub fn rate_histogram(rates: &[f64]) -> Vec<usize> {
    let mut bins = vec![0usize; UNITS_PER_RATE as usize + 1];
    for &p in rates {
        let b = (p * UNITS_PER_RATE as f64).round().clamp(0.0, UNITS_PER_RATE as f64) as usize;
        bins[b] += 1;
    }
    bins
}
