//! Exact value iteration on a truncated state space.
//!
//! States are `(s, x)` with distinct robot locations and `x_i <= cap`.
//! Arrivals beyond the cap are dropped, as in simulation. Each sweep first
//! folds the arrival expectation into a table `W(s', y) = E_a V(s', min(y + a, cap))`
//! one coordinate at a time, so a backup costs one lookup per candidate
//! action instead of `2^N`.
//!
//! Joint actions are encoded in mixed radix `N + 2`, robot 0 most
//! significant, with per-robot digits Serve = 0, Idle = 1, Switch(j) = 2 + j.

use std::io::{Read, Write};

use crate::baseline::Policy;
use crate::dynamics::{
    holding_cost, JointAction, OccupancyConvention, RobotAction, ScenarioConfig, SystemState,
};
use crate::rng::SimRng;
use crate::{Error, Result};

pub const DEFAULT_STATE_LIMIT: u64 = 50_000_000;
pub const ROOMY_CAP: u32 = 30;
pub const ROOMY_STATES: u64 = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct DpConfig {
    pub cap: u32,
    pub tol: f64,
    pub max_iters: usize,
    pub state_limit: u64,
    /// Also allow busy robots to idle or switch.
    pub full_admissible: bool,
}

impl DpConfig {
    /// Cap 15 for single-robot instances and 12 otherwise, raised toward
    /// [`ROOMY_CAP`] while the table stays under [`ROOMY_STATES`] states.
    pub fn for_scenario(cfg: &ScenarioConfig) -> Self {
        let tuples = count_tuples(cfg.num_queues, cfg.num_robots);
        let states = |c: u32| tuples.saturating_mul((c as u64 + 1).saturating_pow(cfg.num_queues as u32));
        let mut cap = if cfg.num_robots == 1 { 15 } else { 12 };
        while cap < ROOMY_CAP && states(cap + 1) <= ROOMY_STATES {
            cap += 1;
        }
        DpConfig {
            cap,
            tol: 1e-6,
            max_iters: 20_000,
            state_limit: DEFAULT_STATE_LIMIT,
            full_admissible: false,
        }
    }
}

fn count_tuples(n: usize, m: usize) -> u64 {
    (0..m as u64).map(|k| n as u64 - k).product()
}

/// Bijection between truncated states and `0..K`.
///
/// Index = `tuple_index * (cap+1)^N + sum_i x_i (cap+1)^(N-1-i)`, with
/// location tuples in lexicographic order.
#[derive(Debug, Clone)]
pub struct StateIndexer {
    pub num_robots: usize,
    pub num_queues: usize,
    pub cap: u32,
    tuples: Vec<Vec<usize>>,
    // dense map over N^M raw tuples; u32::MAX marks tuples with repeats
    tuple_slot: Vec<u32>,
    strides: Vec<usize>,
    queue_states: usize,
}

impl StateIndexer {
    pub fn new(num_robots: usize, num_queues: usize, cap: u32, limit: u64) -> Result<Self> {
        if num_robots == 0 || num_robots > num_queues || cap == 0 {
            return Err(Error::Scenario(format!(
                "cannot index M={num_robots}, N={num_queues}, cap={cap}"
            )));
        }
        let p = count_tuples(num_queues, num_robots);
        let q = (cap as u64 + 1).checked_pow(num_queues as u32);
        let k = q.and_then(|q| q.checked_mul(p)).unwrap_or(u64::MAX);
        let raw = (num_queues as u64).checked_pow(num_robots as u32).unwrap_or(u64::MAX);
        if k > limit || raw > limit {
            return Err(Error::TooLarge { states: k, limit });
        }
        let q = q.unwrap() as usize;
        let mut tuples = Vec::with_capacity(p as usize);
        let mut tuple_slot = vec![u32::MAX; raw as usize];
        for code in 0..raw as usize {
            let mut t = vec![0usize; num_robots];
            let mut c = code;
            for r in (0..num_robots).rev() {
                t[r] = c % num_queues;
                c /= num_queues;
            }
            let distinct = (0..num_robots).all(|a| (0..a).all(|b| t[a] != t[b]));
            if distinct {
                tuple_slot[code] = tuples.len() as u32;
                tuples.push(t);
            }
        }
        let strides = (0..num_queues)
            .map(|i| (cap as usize + 1).pow((num_queues - 1 - i) as u32))
            .collect();
        Ok(StateIndexer {
            num_robots,
            num_queues,
            cap,
            tuples,
            tuple_slot,
            strides,
            queue_states: q,
        })
    }

    pub fn len(&self) -> usize {
        self.tuples.len() * self.queue_states
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_tuples(&self) -> usize {
        self.tuples.len()
    }

    pub fn queue_states(&self) -> usize {
        self.queue_states
    }

    pub fn tuple(&self, l: usize) -> &[usize] {
        &self.tuples[l]
    }

    pub fn stride(&self, i: usize) -> usize {
        self.strides[i]
    }

    pub fn tuple_index(&self, locations: &[usize]) -> Option<usize> {
        if locations.len() != self.num_robots {
            return None;
        }
        let mut code = 0usize;
        for &l in locations {
            if l >= self.num_queues {
                return None;
            }
            code = code * self.num_queues + l;
        }
        match self.tuple_slot[code] {
            u32::MAX => None,
            s => Some(s as usize),
        }
    }

    pub fn queue_index(&self, queues: &[u32]) -> usize {
        queues.iter().zip(&self.strides).map(|(&x, &s)| x as usize * s).sum()
    }

    pub fn queue_digit(&self, q: usize, i: usize) -> u32 {
        ((q / self.strides[i]) % (self.cap as usize + 1)) as u32
    }

    /// Index of a state already inside the truncated domain.
    pub fn encode(&self, state: &SystemState) -> Option<usize> {
        if state.queues.len() != self.num_queues || state.queues.iter().any(|&x| x > self.cap) {
            return None;
        }
        let l = self.tuple_index(&state.locations)?;
        Some(l * self.queue_states + self.queue_index(&state.queues))
    }

    /// Index of `state` with every queue clamped to the cap.
    pub fn encode_clamped(&self, state: &SystemState) -> Option<usize> {
        let l = self.tuple_index(&state.locations)?;
        let q: usize = state
            .queues
            .iter()
            .zip(&self.strides)
            .map(|(&x, &s)| x.min(self.cap) as usize * s)
            .sum();
        Some(l * self.queue_states + q)
    }

    pub fn decode(&self, k: usize) -> SystemState {
        let (l, q) = (k / self.queue_states, k % self.queue_states);
        SystemState {
            locations: self.tuples[l].clone(),
            queues: (0..self.num_queues).map(|i| self.queue_digit(q, i)).collect(),
        }
    }
}

pub fn encode_action(u: &JointAction, num_queues: usize) -> u32 {
    let base = num_queues as u32 + 2;
    u.actions.iter().fold(0u32, |acc, a| {
        acc * base
            + match *a {
                RobotAction::Serve => 0,
                RobotAction::Idle => 1,
                RobotAction::Switch(j) => 2 + j as u32,
            }
    })
}

pub fn decode_action(mut code: u32, num_robots: usize, num_queues: usize) -> JointAction {
    let base = num_queues as u32 + 2;
    let mut actions = vec![RobotAction::Idle; num_robots];
    for r in (0..num_robots).rev() {
        actions[r] = match code % base {
            0 => RobotAction::Serve,
            1 => RobotAction::Idle,
            d => RobotAction::Switch((d - 2) as usize),
        };
        code /= base;
    }
    JointAction::new(actions)
}

/// Candidate joint actions at a state, ascending by encoding.
///
/// Next-slot locations are always distinct. Under `Conservative`, switch
/// targets must be unoccupied at the current slot; under `Loose` any
/// target is allowed as long as the resulting locations are distinct.
pub fn candidate_actions(
    locations: &[usize],
    busy: &[bool],
    num_queues: usize,
    convention: OccupancyConvention,
    full_admissible: bool,
) -> Vec<JointAction> {
    let m = locations.len();
    let mut occupied = vec![false; num_queues];
    for &l in locations {
        occupied[l] = true;
    }
    let options: Vec<Vec<RobotAction>> = (0..m)
        .map(|r| {
            if busy[r] && !full_admissible {
                return vec![RobotAction::Serve];
            }
            let mut o = Vec::new();
            if busy[r] {
                o.push(RobotAction::Serve);
            }
            o.push(RobotAction::Idle);
            for j in 0..num_queues {
                let ok = j != locations[r]
                    && (convention == OccupancyConvention::Loose || !occupied[j]);
                if ok {
                    o.push(RobotAction::Switch(j));
                }
            }
            o
        })
        .collect();
    let mut out = Vec::new();
    let mut pick = vec![0usize; m];
    loop {
        let actions: Vec<RobotAction> = (0..m).map(|r| options[r][pick[r]]).collect();
        let dest: Vec<usize> = actions
            .iter()
            .zip(locations)
            .map(|(a, &l)| a.destination(l))
            .collect();
        if (0..m).all(|a| (0..a).all(|b| dest[a] != dest[b])) {
            out.push(JointAction::new(actions));
        }
        let mut r = m;
        loop {
            if r == 0 {
                return out;
            }
            r -= 1;
            pick[r] += 1;
            if pick[r] < options[r].len() {
                break;
            }
            pick[r] = 0;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub num_robots: usize,
    pub num_queues: usize,
    pub cap: u32,
    pub convention: OccupancyConvention,
    pub full_admissible: bool,
    pub scenario_hash: u64,
    pub beta: f64,
    pub values: Vec<f64>,
    pub policy: Vec<u32>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Sup-norm change of every sweep; not serialized.
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    code: u32,
    next_tuple: u32,
    dep_offset: u32,
}

/// Per (tuple, busy mask) candidate lists with precomputed index arithmetic.
struct ActionCache {
    masks: usize,
    lists: Vec<Vec<Candidate>>,
}

impl ActionCache {
    fn new(ix: &StateIndexer, convention: OccupancyConvention, full: bool) -> Self {
        let m = ix.num_robots;
        let masks = 1usize << m;
        let mut lists = Vec::with_capacity(ix.num_tuples() * masks);
        for l in 0..ix.num_tuples() {
            let locs = ix.tuple(l);
            for mask in 0..masks {
                let busy: Vec<bool> = (0..m).map(|r| mask >> r & 1 == 1).collect();
                let list = candidate_actions(locs, &busy, ix.num_queues, convention, full)
                    .into_iter()
                    .map(|u| {
                        let dest = u.destinations(&SystemState {
                            locations: locs.to_vec(),
                            queues: vec![],
                        });
                        let dep: usize = u
                            .actions
                            .iter()
                            .zip(locs)
                            .filter(|(a, _)| **a == RobotAction::Serve)
                            .map(|(_, &l)| ix.stride(l))
                            .sum();
                        Candidate {
                            code: encode_action(&u, ix.num_queues),
                            next_tuple: ix.tuple_index(&dest).expect("distinct destinations") as u32,
                            dep_offset: dep as u32,
                        }
                    })
                    .collect();
                lists.push(list);
            }
        }
        ActionCache { masks, lists }
    }

    fn get(&self, l: usize, mask: usize) -> &[Candidate] {
        &self.lists[l * self.masks + mask]
    }
}

// Relative slack under which two action values count as tied.
const TIE_EPS: f64 = 1e-12;

struct Solver<'a> {
    ix: &'a StateIndexer,
    cache: ActionCache,
    rates: Vec<f64>,
    beta: f64,
    costs: Vec<f64>,
    // busy mask per (tuple, queue state) computed on the fly from digits
    nonempty: Vec<u32>,
}

impl<'a> Solver<'a> {
    fn new(ix: &'a StateIndexer, cfg: &ScenarioConfig, full: bool) -> Self {
        let q = ix.queue_states();
        let costs = (0..q)
            .map(|s| (0..ix.num_queues).map(|i| ix.queue_digit(s, i) as f64).sum())
            .collect();
        let nonempty = (0..q)
            .map(|s| {
                (0..ix.num_queues)
                    .filter(|&i| ix.queue_digit(s, i) > 0)
                    .fold(0u32, |acc, i| acc | 1 << i)
            })
            .collect();
        Solver {
            ix,
            cache: ActionCache::new(ix, cfg.convention, full),
            rates: cfg.arrival_rates.clone(),
            beta: cfg.beta,
            costs,
            nonempty,
        }
    }

    /// `W(s', y) = E_a V(s', min(y + a, cap))`.
    fn expectation(&self, v: &[f64], w: &mut [f64]) {
        let q = self.ix.queue_states();
        let cap = self.ix.cap;
        w.copy_from_slice(v);
        for block in w.chunks_mut(q) {
            for (i, &p) in self.rates.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let stride = self.ix.stride(i);
                for y in 0..q {
                    if self.ix.queue_digit(y, i) < cap {
                        block[y] = (1.0 - p) * block[y] + p * block[y + stride];
                    }
                }
            }
        }
    }

    fn busy_mask(&self, l: usize, y: usize) -> usize {
        let ne = self.nonempty[y];
        self.ix
            .tuple(l)
            .iter()
            .enumerate()
            .fold(0usize, |acc, (r, &loc)| acc | (((ne >> loc) & 1) as usize) << r)
    }

    /// One synchronous sweep; returns the sup-norm change.
    fn sweep(&self, v: &[f64], w: &mut [f64], out: &mut [f64], policy: Option<&mut [u32]>) -> f64 {
        self.expectation(v, w);
        let q = self.ix.queue_states();
        let mut residual = 0.0f64;
        let mut policy = policy;
        for l in 0..self.ix.num_tuples() {
            for y in 0..q {
                let k = l * q + y;
                let cands = self.cache.get(l, self.busy_mask(l, y));
                let first = &cands[0];
                let mut best = w[first.next_tuple as usize * q + y - first.dep_offset as usize];
                let mut best_code = first.code;
                for c in &cands[1..] {
                    let val = w[c.next_tuple as usize * q + y - c.dep_offset as usize];
                    if val < best - TIE_EPS * best.abs() {
                        best = val;
                        best_code = c.code;
                    }
                }
                let nv = self.costs[y] + self.beta * best;
                residual = residual.max((nv - v[k]).abs());
                out[k] = nv;
                if let Some(p) = policy.as_deref_mut() {
                    p[k] = best_code;
                }
            }
        }
        residual
    }
}

/// Solves the truncated problem by synchronous value iteration from `V = 0`.
///
/// The returned policy is greedy with respect to the returned values. A run
/// that hits `max_iters` still returns its table with `converged = false`.
pub fn value_iteration(cfg: &ScenarioConfig, dp: &DpConfig) -> Result<(StateIndexer, ValueTable)> {
    if !(dp.tol > 0.0) {
        return Err(Error::Table(format!("tolerance {} must be positive", dp.tol)));
    }
    if cfg.num_queues > 32 {
        return Err(Error::TooLarge { states: u64::MAX, limit: dp.state_limit });
    }
    let ix = StateIndexer::new(cfg.num_robots, cfg.num_queues, dp.cap, dp.state_limit)?;
    let base = cfg.num_queues as f64 + 2.0;
    if base.powi(cfg.num_robots as i32) > u32::MAX as f64 {
        return Err(Error::Table("joint action encoding exceeds 32 bits".into()));
    }
    let solver = Solver::new(&ix, cfg, dp.full_admissible);
    let k = ix.len();
    let mut v = vec![0.0; k];
    let mut next = vec![0.0; k];
    let mut w = vec![0.0; k];
    let mut history = Vec::new();
    let mut residual = f64::INFINITY;
    while history.len() < dp.max_iters {
        residual = solver.sweep(&v, &mut w, &mut next, None);
        std::mem::swap(&mut v, &mut next);
        history.push(residual);
        if !residual.is_finite() {
            return Err(Error::Table("value iteration diverged".into()));
        }
        if residual <= dp.tol {
            break;
        }
    }
    let mut policy = vec![0u32; k];
    solver.sweep(&v, &mut w, &mut next, Some(&mut policy));
    Ok((
        ix,
        ValueTable {
            num_robots: cfg.num_robots,
            num_queues: cfg.num_queues,
            cap: dp.cap,
            convention: cfg.convention,
            full_admissible: dp.full_admissible,
            scenario_hash: cfg.hash(),
            beta: cfg.beta,
            values: v,
            policy,
            residual,
            iterations: history.len(),
            converged: residual <= dp.tol,
            history,
        },
    ))
}

/// Direct backup at one state, summing over all `2^N` arrival outcomes.
///
/// Independent of the sweep's factored expectation; used to audit tables.
pub fn bellman_backup(
    state: &SystemState,
    ix: &StateIndexer,
    table: &ValueTable,
    cfg: &ScenarioConfig,
) -> Result<(f64, JointAction)> {
    if ix.encode(state).is_none() {
        return Err(Error::State("state outside the truncated domain".into()));
    }
    let busy: Vec<bool> = (0..cfg.num_robots).map(|r| state.is_busy(r)).collect();
    let cands = candidate_actions(
        &state.locations,
        &busy,
        cfg.num_queues,
        cfg.convention,
        table.full_admissible,
    );
    let n = cfg.num_queues;
    let mut best: Option<(f64, JointAction)> = None;
    for u in cands {
        let dest = u.destinations(state);
        let mut base = state.queues.clone();
        for (a, &l) in u.actions.iter().zip(&state.locations) {
            if *a == RobotAction::Serve {
                base[l] -= 1;
            }
        }
        let mut expect = 0.0;
        for outcome in 0..1u64 << n {
            let mut prob = 1.0;
            let mut x = base.clone();
            for i in 0..n {
                let p = cfg.arrival_rates[i];
                if outcome >> i & 1 == 1 {
                    prob *= p;
                    x[i] = (x[i] + 1).min(ix.cap);
                } else {
                    prob *= 1.0 - p;
                }
            }
            if prob == 0.0 {
                continue;
            }
            let next = SystemState { locations: dest.clone(), queues: x };
            expect += prob * table.values[ix.encode(&next).expect("clamped state in domain")];
        }
        let better = match &best {
            None => true,
            Some((b, _)) => expect < b - TIE_EPS * b.abs(),
        };
        if better {
            best = Some((expect, u));
        }
    }
    let (e, u) = best.expect("candidate set is never empty");
    Ok((holding_cost(state) as f64 + cfg.beta * e, u))
}

/// Largest `|T V - V|` over all states, via [`bellman_backup`].
pub fn bellman_residual(ix: &StateIndexer, table: &ValueTable, cfg: &ScenarioConfig) -> Result<f64> {
    let mut worst = 0.0f64;
    for k in 0..ix.len() {
        let (v, _) = bellman_backup(&ix.decode(k), ix, table, cfg)?;
        worst = worst.max((v - table.values[k]).abs());
    }
    Ok(worst)
}

/// `V` must be nondecreasing in every queue length, up to `slack`.
pub fn check_monotone(ix: &StateIndexer, table: &ValueTable, slack: f64) -> Result<()> {
    let q = ix.queue_states();
    let mut violations = Vec::new();
    for l in 0..ix.num_tuples() {
        for y in 0..q {
            for i in 0..ix.num_queues {
                if ix.queue_digit(y, i) < ix.cap {
                    let lo = table.values[l * q + y];
                    let hi = table.values[l * q + y + ix.stride(i)];
                    if hi < lo - slack {
                        violations.push((l * q + y, i, lo - hi));
                    }
                }
            }
        }
    }
    if violations.is_empty() {
        return Ok(());
    }
    let (k, i, d) = violations[0];
    Err(Error::Table(format!(
        "{} monotonicity violations; first at state {:?}, queue {i}, drop {d:.3e}",
        violations.len(),
        ix.decode(k)
    )))
}

const TABLE_MAGIC: &[u8; 4] = b"EADP";
pub const TABLE_VERSION: u32 = 1;

fn conv_byte(c: OccupancyConvention) -> u8 {
    match c {
        OccupancyConvention::Conservative => 0,
        OccupancyConvention::Loose => 1,
    }
}

/// Binary table: magic, version, M, N, cap, convention, full flag, scenario
/// hash, beta, K, residual, iterations, K values (f64), K actions (u32), all
/// little-endian.
pub fn write_table<W: Write>(mut w: W, t: &ValueTable) -> Result<()> {
    w.write_all(TABLE_MAGIC)?;
    w.write_all(&TABLE_VERSION.to_le_bytes())?;
    w.write_all(&(t.num_robots as u32).to_le_bytes())?;
    w.write_all(&(t.num_queues as u32).to_le_bytes())?;
    w.write_all(&t.cap.to_le_bytes())?;
    w.write_all(&[conv_byte(t.convention), t.full_admissible as u8])?;
    w.write_all(&t.scenario_hash.to_le_bytes())?;
    w.write_all(&t.beta.to_le_bytes())?;
    w.write_all(&(t.values.len() as u64).to_le_bytes())?;
    w.write_all(&t.residual.to_le_bytes())?;
    w.write_all(&(t.iterations as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(t.values.len() * 12);
    for v in &t.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for a in &t.policy {
        buf.extend_from_slice(&a.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn take<const B: usize, R: Read>(r: &mut R) -> Result<[u8; B]> {
    let mut b = [0u8; B];
    r.read_exact(&mut b)
        .map_err(|_| Error::Table("truncated table file".into()))?;
    Ok(b)
}

/// Reads a table and rebuilds its indexer; `expect_hash` guards against
/// using a table with the wrong scenario.
pub fn read_table<R: Read>(mut r: R, expect_hash: Option<u64>) -> Result<(StateIndexer, ValueTable)> {
    if &take::<4, _>(&mut r)? != TABLE_MAGIC {
        return Err(Error::Table("not a value table (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(&mut r)?);
    if version != TABLE_VERSION {
        return Err(Error::Table(format!("unsupported table version {version}")));
    }
    let m = u32::from_le_bytes(take(&mut r)?) as usize;
    let n = u32::from_le_bytes(take(&mut r)?) as usize;
    let cap = u32::from_le_bytes(take(&mut r)?);
    let [conv, full] = take::<2, _>(&mut r)?;
    let convention = match conv {
        0 => OccupancyConvention::Conservative,
        1 => OccupancyConvention::Loose,
        c => return Err(Error::Table(format!("unknown convention tag {c}"))),
    };
    let scenario_hash = u64::from_le_bytes(take(&mut r)?);
    if let Some(h) = expect_hash {
        if h != scenario_hash {
            return Err(Error::Table(format!(
                "table belongs to scenario {scenario_hash:016x}, not {h:016x}"
            )));
        }
    }
    let beta = f64::from_le_bytes(take(&mut r)?);
    let k = u64::from_le_bytes(take(&mut r)?);
    let residual = f64::from_le_bytes(take(&mut r)?);
    let iterations = u64::from_le_bytes(take(&mut r)?) as usize;
    let ix = StateIndexer::new(m, n, cap, DEFAULT_STATE_LIMIT)?;
    if ix.len() as u64 != k {
        return Err(Error::Table(format!("header says {k} states, dimensions give {}", ix.len())));
    }
    let k = k as usize;
    let mut raw = vec![0u8; k * 12];
    r.read_exact(&mut raw)
        .map_err(|_| Error::Table("truncated table body".into()))?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Table("trailing bytes after table".into()));
    }
    let (vb, pb) = raw.split_at(k * 8);
    let values = vb
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let policy = pb
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((
        ix,
        ValueTable {
            num_robots: m,
            num_queues: n,
            cap,
            convention,
            full_admissible: full != 0,
            scenario_hash,
            beta,
            values,
            policy,
            residual,
            iterations,
            converged: true,
            history: Vec::new(),
        },
    ))
}

/// Plays the stored greedy action; queues above the cap are clamped for lookup.
pub struct LookupPolicy {
    pub indexer: StateIndexer,
    pub table: ValueTable,
}

impl LookupPolicy {
    pub fn new(indexer: StateIndexer, table: ValueTable) -> Self {
        LookupPolicy { indexer, table }
    }

    pub fn action(&self, state: &SystemState) -> Result<JointAction> {
        let k = self
            .indexer
            .encode_clamped(state)
            .ok_or_else(|| Error::State(format!("state {state:?} outside the table")))?;
        Ok(decode_action(self.table.policy[k], self.table.num_robots, self.table.num_queues))
    }

    pub fn value(&self, state: &SystemState) -> Option<f64> {
        self.indexer.encode(state).map(|k| self.table.values[k])
    }
}

impl Policy for LookupPolicy {
    fn name(&self) -> &str {
        "dp"
    }

    fn decide(&self, state: &SystemState, _cfg: &ScenarioConfig, _rng: &mut SimRng) -> Result<JointAction> {
        self.action(state)
    }
}

/// Fraction of simulated slots in which some queue sits at or above the
/// table's truncation cap while following the table's policy.
pub fn cap_occupancy(cfg: &ScenarioConfig, policy: &LookupPolicy, runs: usize, base_seed: u64) -> Result<f64> {
    let cap = policy.table.cap;
    let mut at_cap = 0u64;
    for i in 0..runs as u64 {
        crate::eval::run_episode_with(cfg, policy, base_seed.wrapping_add(i), crate::rng::Domain::Eval, |s, _, _| {
            at_cap += s.queues.iter().any(|&x| x >= cap) as u64;
        })?;
    }
    Ok(at_cap as f64 / (runs * cfg.horizon) as f64)
}
