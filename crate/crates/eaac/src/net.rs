//! Actor and critic networks.
//!
//! Both share the same token encoders (two affine layers with a ReLU in
//! between) but own separate weights. Actor logits are
//! `<g_r, h_i> / sqrt(d) + c_i`; the critic pools the token means, appends
//! the global backlog statistics and applies a two-layer head.
//!
//! Every function exists twice: a plain evaluation used for acting, and a
//! taped version used for gradients. Tests check the two agree.

use std::collections::BTreeMap;

use mrq_nn::{init, DenseArray, GradMap, ParameterStore, Real, Shape, Tape, Var};
use rand::Rng;

use crate::features::{Features, GLOBAL_FEATURES, QUEUE_FEATURES, ROBOT_NUMERIC};
use crate::Result;

pub const HIDDEN: usize = 128;
pub const EMBED: usize = 16;
pub const ROBOT_FEATURES: usize = EMBED + ROBOT_NUMERIC;
pub const EMBED_INIT: f64 = 0.05;

pub const ACTOR: &str = "actor";
pub const CRITIC: &str = "critic";

fn name(prefix: &str, part: &str) -> String {
    format!("{prefix}.{part}")
}

fn insert<T: Real>(store: &mut ParameterStore<T>, key: String, v: DenseArray<T>) {
    store.insert(key, v).expect("parameter names are unique");
}

fn add_mlp<T: Real, R: Rng + ?Sized>(
    store: &mut ParameterStore<T>,
    prefix: &str,
    dims: [usize; 3],
    rng: &mut R,
) {
    for layer in 0..2 {
        let (fi, fo) = (dims[layer], dims[layer + 1]);
        insert(store, format!("{prefix}.{layer}.w"), init::glorot_uniform(fi, fo, rng));
        insert(store, format!("{prefix}.{layer}.b"), DenseArray::zeros(Shape::Vector(fo)));
    }
}

/// Fresh actor and critic parameters for `num_queues` locations.
pub fn init_params<T: Real, R: Rng + ?Sized>(num_queues: usize, rng: &mut R) -> ParameterStore<T> {
    let mut s = ParameterStore::new();
    for p in [ACTOR, CRITIC] {
        insert(
            &mut s,
            name(p, "embed"),
            init::uniform(Shape::Matrix(num_queues, EMBED), EMBED_INIT, rng),
        );
        add_mlp(&mut s, &name(p, "queue"), [QUEUE_FEATURES, HIDDEN, HIDDEN], rng);
        add_mlp(&mut s, &name(p, "robot"), [ROBOT_FEATURES, HIDDEN, HIDDEN], rng);
    }
    insert(&mut s, name(ACTOR, "bias"), DenseArray::zeros(Shape::Vector(num_queues)));
    add_mlp(
        &mut s,
        &name(CRITIC, "head"),
        [2 * HIDDEN + GLOBAL_FEATURES, HIDDEN, 1],
        rng,
    );
    s
}

/// Expected `(name, shape)` list for `num_queues` locations.
pub fn expected_shapes(num_queues: usize) -> Vec<(String, Shape)> {
    let mut rng = mrq_core::rng::substream(0, mrq_core::Domain::Test, 0, 0);
    init_params::<f32, _>(num_queues, &mut rng)
        .iter()
        .map(|(n, v)| (n.to_string(), v.shape()))
        .collect()
}

/// Network inputs for a batch of `B` states.
#[derive(Debug, Clone)]
pub struct Inputs<T> {
    pub batch: usize,
    pub num_queues: usize,
    pub num_robots: usize,
    /// `(B N) x 4`
    pub queue_x: DenseArray<T>,
    /// `(B M) x 3`
    pub robot_num: DenseArray<T>,
    /// `B M` robot locations
    pub robot_loc: Vec<usize>,
    /// `B x 4`
    pub global: DenseArray<T>,
}

impl<T: Real> Inputs<T> {
    pub fn new(features: &[&Features]) -> Self {
        let batch = features.len();
        let n = features[0].queue.len();
        let m = features[0].robot.len();
        let mut q = Vec::with_capacity(batch * n * QUEUE_FEATURES);
        let mut r = Vec::with_capacity(batch * m * ROBOT_NUMERIC);
        let mut loc = Vec::with_capacity(batch * m);
        let mut g = Vec::with_capacity(batch * GLOBAL_FEATURES);
        for f in features {
            q.extend(f.queue.iter().flatten().map(|&x| T::of(x)));
            r.extend(f.robot.iter().flatten().map(|&x| T::of(x)));
            loc.extend_from_slice(&f.locations);
            g.extend(f.global.iter().map(|&x| T::of(x)));
        }
        Inputs {
            batch,
            num_queues: n,
            num_robots: m,
            queue_x: DenseArray::matrix(batch * n, QUEUE_FEATURES, q).expect("queue features"),
            robot_num: DenseArray::matrix(batch * m, ROBOT_NUMERIC, r).expect("robot features"),
            robot_loc: loc,
            global: DenseArray::matrix(batch, GLOBAL_FEATURES, g).expect("global features"),
        }
    }

    /// Numeric rows and locations of the selected robot rows.
    fn robot_rows(&self, rows: &[usize]) -> (DenseArray<T>, Vec<usize>) {
        let mut data = Vec::with_capacity(rows.len() * ROBOT_NUMERIC);
        for &r in rows {
            data.extend_from_slice(self.robot_num.row(r));
        }
        (
            DenseArray::matrix(rows.len(), ROBOT_NUMERIC, data).expect("robot rows"),
            rows.iter().map(|&r| self.robot_loc[r]).collect(),
        )
    }
}

/// Idle-robot decisions of a batch, each with its feasibility mask.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Decisions {
    /// Sample each decision belongs to.
    pub sample: Vec<usize>,
    /// Robot row within the batch (`b M + r`).
    pub robot_row: Vec<usize>,
    /// Row-major `D x N` feasibility.
    pub mask: Vec<bool>,
    pub choice: Vec<usize>,
}

impl Decisions {
    pub fn len(&self) -> usize {
        self.sample.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample.is_empty()
    }
}

// ---------------------------------------------------------------- plain

fn get<'a, T: Real>(s: &'a ParameterStore<T>, key: &str) -> &'a DenseArray<T> {
    s.get(key).unwrap_or_else(|| panic!("missing parameter `{key}`"))
}

fn affine<T: Real>(x: &DenseArray<T>, w: &DenseArray<T>, b: &DenseArray<T>) -> DenseArray<T> {
    let mut y = x.matmul(w).expect("affine shapes");
    let c = y.cols();
    for row in y.data_mut().chunks_mut(c) {
        for (v, &bb) in row.iter_mut().zip(b.data()) {
            *v = *v + bb;
        }
    }
    y
}

fn relu_inplace<T: Real>(x: &mut DenseArray<T>) {
    for v in x.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

fn mlp_plain<T: Real>(s: &ParameterStore<T>, prefix: &str, x: &DenseArray<T>) -> DenseArray<T> {
    let mut h = affine(x, get(s, &format!("{prefix}.0.w")), get(s, &format!("{prefix}.0.b")));
    relu_inplace(&mut h);
    affine(&h, get(s, &format!("{prefix}.1.w")), get(s, &format!("{prefix}.1.b")))
}

pub fn queue_tokens<T: Real>(s: &ParameterStore<T>, net: &str, x: &DenseArray<T>) -> DenseArray<T> {
    mlp_plain(s, &name(net, "queue"), x)
}

pub fn robot_tokens<T: Real>(
    s: &ParameterStore<T>,
    net: &str,
    num: &DenseArray<T>,
    locs: &[usize],
) -> DenseArray<T> {
    let table = get(s, &name(net, "embed"));
    let mut data = Vec::with_capacity(locs.len() * ROBOT_FEATURES);
    for (k, &l) in locs.iter().enumerate() {
        data.extend_from_slice(table.row(l));
        data.extend_from_slice(num.row(k));
    }
    let x = DenseArray::matrix(locs.len(), ROBOT_FEATURES, data).expect("robot input");
    mlp_plain(s, &name(net, "robot"), &x)
}

/// Logits of the given robot rows against the queues of their samples:
/// one row of `N` logits per entry of `rows`.
pub fn actor_logits<T: Real>(s: &ParameterStore<T>, inputs: &Inputs<T>, rows: &[usize]) -> Vec<Vec<T>> {
    if rows.is_empty() {
        return Vec::new();
    }
    let n = inputs.num_queues;
    let m = inputs.num_robots;
    let (num, locs) = inputs.robot_rows(rows);
    let g = robot_tokens(s, ACTOR, &num, &locs);
    // only the samples that own a decision need queue tokens
    let mut samples: Vec<usize> = rows.iter().map(|r| r / m).collect();
    samples.dedup();
    let mut qx = Vec::with_capacity(samples.len() * n * QUEUE_FEATURES);
    for &b in &samples {
        for i in 0..n {
            qx.extend_from_slice(inputs.queue_x.row(b * n + i));
        }
    }
    let qx = DenseArray::matrix(samples.len() * n, QUEUE_FEATURES, qx).expect("queue rows");
    let h = queue_tokens(s, ACTOR, &qx);
    let bias = get(s, &name(ACTOR, "bias"));
    let inv = T::of(1.0 / (HIDDEN as f64).sqrt());
    rows.iter()
        .enumerate()
        .map(|(k, &r)| {
            let pos = samples.binary_search(&(r / m)).expect("sample listed");
            let gr = g.row(k);
            (0..n)
                .map(|i| {
                    let hi = h.row(pos * n + i);
                    let dot = gr.iter().zip(hi).fold(T::zero(), |a, (&x, &y)| a + x * y);
                    dot * inv + bias.data()[i]
                })
                .collect()
        })
        .collect()
}

/// Critic output per sample, in units of `value_scale`.
pub fn critic_values<T: Real>(s: &ParameterStore<T>, inputs: &Inputs<T>) -> Vec<T> {
    let (b, n, m) = (inputs.batch, inputs.num_queues, inputs.num_robots);
    let hq = queue_tokens(s, CRITIC, &inputs.queue_x);
    let hr = robot_tokens(s, CRITIC, &inputs.robot_num, &inputs.robot_loc);
    let width = 2 * HIDDEN + GLOBAL_FEATURES;
    let mut x = vec![T::zero(); b * width];
    for bi in 0..b {
        let row = &mut x[bi * width..(bi + 1) * width];
        pool_into(&mut row[..HIDDEN], &hq, bi * n, n);
        pool_into(&mut row[HIDDEN..2 * HIDDEN], &hr, bi * m, m);
        row[2 * HIDDEN..].copy_from_slice(inputs.global.row(bi));
    }
    let x = DenseArray::matrix(b, width, x).expect("head input");
    critic_head(s, &x)
}

/// Value head applied to rows of `[pooled queue, pooled robot, global]`.
pub fn critic_head<T: Real>(s: &ParameterStore<T>, x: &DenseArray<T>) -> Vec<T> {
    mlp_plain(s, &name(CRITIC, "head"), x).into_data()
}

fn pool_into<T: Real>(out: &mut [T], tokens: &DenseArray<T>, start: usize, count: usize) {
    for r in start..start + count {
        for (o, &v) in out.iter_mut().zip(tokens.row(r)) {
            *o = *o + v;
        }
    }
    let inv = T::of(1.0 / count as f64);
    for o in out.iter_mut() {
        *o = *o * inv;
    }
}

// ---------------------------------------------------------------- taped

/// Parameter leaves on a tape, by name.
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn new<'a, T: Real>(tape: &mut Tape<'a, T>, s: &'a ParameterStore<T>) -> Result<Self> {
        let mut vars = BTreeMap::new();
        for (n, v) in s.iter() {
            vars.insert(n.to_string(), tape.param(v)?);
        }
        Ok(Bound { vars })
    }

    pub fn var(&self, key: &str) -> Var {
        *self.vars.get(key).unwrap_or_else(|| panic!("missing parameter `{key}`"))
    }

    /// Gradients for every parameter, zero where the loss did not reach.
    pub fn collect<T: Real>(
        &self,
        grads: &mut mrq_nn::Gradients<T>,
        s: &ParameterStore<T>,
    ) -> GradMap<T> {
        self.vars
            .iter()
            .map(|(n, &v)| {
                let g = grads
                    .take(v)
                    .unwrap_or_else(|| DenseArray::zeros(s.get(n).expect("bound name").shape()));
                (n.clone(), g)
            })
            .collect()
    }
}

fn mlp_tape<T: Real>(tape: &mut Tape<'_, T>, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let h = tape.matmul(x, p.var(&format!("{prefix}.0.w")))?;
    let h = tape.add_bias(h, p.var(&format!("{prefix}.0.b")))?;
    let h = tape.relu(h)?;
    let y = tape.matmul(h, p.var(&format!("{prefix}.1.w")))?;
    Ok(tape.add_bias(y, p.var(&format!("{prefix}.1.b")))?)
}

fn robot_tokens_tape<T: Real>(
    tape: &mut Tape<'_, T>,
    p: &Bound,
    net: &str,
    num: DenseArray<T>,
    locs: &[usize],
) -> Result<Var> {
    let e = tape.embedding_lookup(p.var(&name(net, "embed")), locs)?;
    let c = tape.constant(num)?;
    let x = tape.concat_cols(&[e, c])?;
    mlp_tape(tape, p, &name(net, "robot"), x)
}

/// Per-sample total log-probability and entropy of the given decisions.
pub fn actor_score_tape<T: Real>(
    tape: &mut Tape<'_, T>,
    p: &Bound,
    inputs: &Inputs<T>,
    dec: &Decisions,
) -> Result<(Var, Var)> {
    let (b, n) = (inputs.batch, inputs.num_queues);
    let d = dec.len();
    let qx = tape.constant(inputs.queue_x.clone())?;
    let h = mlp_tape(tape, p, &name(ACTOR, "queue"), qx)?;
    let (num, locs) = inputs.robot_rows(&dec.robot_row);
    let g = robot_tokens_tape(tape, p, ACTOR, num, &locs)?;
    let mut h_rows = Vec::with_capacity(d * n);
    let mut g_rows = Vec::with_capacity(d * n);
    let mut queue_ids = Vec::with_capacity(d * n);
    for k in 0..d {
        for i in 0..n {
            h_rows.push(dec.sample[k] * n + i);
            g_rows.push(k);
            queue_ids.push(i);
        }
    }
    let hk = tape.embedding_lookup(h, &h_rows)?;
    let gk = tape.embedding_lookup(g, &g_rows)?;
    let dots = tape.dot_product_rows(gk, hk)?;
    let dots = tape.scale(dots, T::of(1.0 / (HIDDEN as f64).sqrt()))?;
    let bias = tape.reshape(p.var(&name(ACTOR, "bias")), Shape::Matrix(n, 1))?;
    let bias = tape.embedding_lookup(bias, &queue_ids)?;
    let bias = tape.reshape(bias, Shape::Vector(d * n))?;
    let logits = tape.add(dots, bias)?;
    let logits = tape.reshape(logits, Shape::Matrix(d, n))?;
    let logp = tape.masked_log_softmax(logits, &dec.mask)?;
    let chosen = tape.pick(logp, &dec.choice)?;
    let ent = tape.entropy_rows(logp)?;
    let total = tape.segment_sum(chosen, &dec.sample, b)?;
    let entropy = tape.segment_sum(ent, &dec.sample, b)?;
    Ok((total, entropy))
}

/// Critic outputs as a length-`B` vector.
pub fn critic_tape<T: Real>(tape: &mut Tape<'_, T>, p: &Bound, inputs: &Inputs<T>) -> Result<Var> {
    let (b, n, m) = (inputs.batch, inputs.num_queues, inputs.num_robots);
    let qx = tape.constant(inputs.queue_x.clone())?;
    let hq = mlp_tape(tape, p, &name(CRITIC, "queue"), qx)?;
    let hq = tape.mean_pool_rows(hq, n)?;
    let hr = robot_tokens_tape(tape, p, CRITIC, inputs.robot_num.clone(), &inputs.robot_loc)?;
    let hr = tape.mean_pool_rows(hr, m)?;
    let g = tape.constant(inputs.global.clone())?;
    let x = tape.concat_cols(&[hq, hr, g])?;
    let v = mlp_tape(tape, p, &name(CRITIC, "head"), x)?;
    Ok(tape.reshape(v, Shape::Vector(b))?)
}
