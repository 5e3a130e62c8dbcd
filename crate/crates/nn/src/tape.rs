//! Single-use reverse-mode tape.
//!
//! Every operation evaluates eagerly and records what its reverse rule needs.
//! Nodes are appended in evaluation order, so walking the node list backwards
//! is an anti-topological order. A tape supports exactly one reverse sweep.

use std::borrow::Cow;

use crate::array::gemm_into;
use crate::error::shape_err;
use crate::{DenseArray, NnError, Real, Result, Shape};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Relu(Var),
    Scale(Var, T),
    ConcatCols(Vec<Var>),
    MeanPoolRows(Var, usize),
    Gather(Var, Vec<usize>),
    DotRows(Var, Var),
    Reshape(Var),
    MaskedLogSoftmax(Var, Vec<bool>),
    Pick(Var, Vec<usize>),
    EntropyRows(Var),
    SegmentSum(Var, Vec<usize>),
    Mean(Var),
    SquaredError(Var, Vec<T>),
    ClippedSurrogate {
        logp: Var,
        old_logp: Vec<T>,
        advantage: Vec<T>,
        eps: T,
    },
}

struct Node<'a, T: Real> {
    value: Cow<'a, DenseArray<T>>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Tape<'a, T: Real> {
    nodes: Vec<Node<'a, T>>,
    swept: bool,
}

/// Gradients from one reverse sweep, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<DenseArray<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&DenseArray<T>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<DenseArray<T>> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

impl<'a, T: Real> Default for Tape<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Real> Tape<'a, T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            swept: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &DenseArray<T> {
        &self.nodes[var.0].value
    }

    fn shape(&self, var: Var) -> Shape {
        self.nodes[var.0].value.shape()
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    fn push(&mut self, value: DenseArray<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(
        &mut self,
        name: &'static str,
        value: DenseArray<T>,
        op: Op<T>,
        needs_grad: bool,
    ) -> Result<Var> {
        value.ensure_finite(name)?;
        Ok(self.push(value, op, needs_grad))
    }

    /// Differentiable leaf borrowing its value (typically a parameter).
    pub fn param(&mut self, value: &'a DenseArray<T>) -> Result<Var> {
        value.ensure_finite("param")?;
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
            needs_grad: true,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: DenseArray<T>) -> Result<Var> {
        self.push_checked("constant", value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let out = va.matmul(vb)?;
        let g = self.needs(a) || self.needs(b);
        self.push_checked("matmul", out, Op::MatMul(a, b), g)
    }

    /// Adds a length-`n` vector to every row of an `m x n` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(bias));
        let cols = match (va.shape(), vb.shape()) {
            (Shape::Matrix(_, c), Shape::Vector(n)) if c == n => c,
            (sa, sb) => return Err(shape_err("add_bias", format!("{sa:?} + {sb:?}"))),
        };
        let mut out = va.clone();
        for row in out.data_mut().chunks_mut(cols) {
            for (x, &b) in row.iter_mut().zip(vb.data()) {
                *x = *x + b;
            }
        }
        let g = self.needs(a) || self.needs(bias);
        self.push_checked("add_bias", out, Op::AddBias(a, bias), g)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("add", format!("{:?} + {:?}", va.shape(), vb.shape())));
        }
        let mut out = va.clone();
        out.add_assign(vb);
        let g = self.needs(a) || self.needs(b);
        self.push_checked("add", out, Op::Add(a, b), g)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        let g = self.needs(a);
        Ok(self.push(out, Op::Relu(a), g))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let out = self.value(a).map(|x| x * c);
        let g = self.needs(a);
        self.push_checked("scale", out, Op::Scale(a, c), g)
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(&p) => self.value(p).rows(),
            None => return Err(shape_err("concat_cols", "no inputs")),
        };
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            match self.shape(p) {
                Shape::Matrix(r, c) if r == rows => widths.push(c),
                s => return Err(shape_err("concat_cols", format!("{s:?} with {rows} rows"))),
            }
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = DenseArray::matrix(rows, total, data)?;
        let g = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), g))
    }

    /// Mean over consecutive groups of `group` rows: `(G*group) x d -> G x d`.
    pub fn mean_pool_rows(&mut self, a: Var, group: usize) -> Result<Var> {
        let va = self.value(a);
        let (rows, cols) = match va.shape() {
            Shape::Matrix(r, c) if group > 0 && r % group == 0 => (r, c),
            s => return Err(shape_err("mean_pool_rows", format!("{s:?} by {group}"))),
        };
        let groups = rows / group;
        let inv = T::of(1.0 / group as f64);
        let mut data = vec![T::zero(); groups * cols];
        for (gi, out_row) in data.chunks_mut(cols).enumerate() {
            for r in gi * group..(gi + 1) * group {
                for (o, &x) in out_row.iter_mut().zip(va.row(r)) {
                    *o = *o + x;
                }
            }
            for o in out_row.iter_mut() {
                *o = *o * inv;
            }
        }
        let out = DenseArray::matrix(groups, cols, data)?;
        let g = self.needs(a);
        Ok(self.push(out, Op::MeanPoolRows(a, group), g))
    }

    /// Row gather from a table; the reverse rule scatter-adds into the table.
    pub fn embedding_lookup(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let vt = self.value(table);
        let (rows, cols) = match vt.shape() {
            Shape::Matrix(r, c) => (r, c),
            s => return Err(shape_err("embedding_lookup", format!("table {s:?}"))),
        };
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= rows {
                return Err(shape_err(
                    "embedding_lookup",
                    format!("index {i} out of {rows} rows"),
                ));
            }
            data.extend_from_slice(vt.row(i));
        }
        let out = DenseArray::matrix(indices.len(), cols, data)?;
        let g = self.needs(table);
        Ok(self.push(out, Op::Gather(table, indices.to_vec()), g))
    }

    /// Row-wise inner products of two `P x d` matrices, giving a length-`P` vector.
    pub fn dot_product_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (rows, cols) = match (va.shape(), vb.shape()) {
            (Shape::Matrix(r, c), Shape::Matrix(r2, c2)) if r == r2 && c == c2 => (r, c),
            (sa, sb) => return Err(shape_err("dot_product_rows", format!("{sa:?} . {sb:?}"))),
        };
        let mut data = Vec::with_capacity(rows);
        for r in 0..rows {
            let s = va.row(r)
                .iter()
                .zip(vb.row(r))
                .fold(T::zero(), |acc, (&x, &y)| acc + x * y);
            data.push(s);
        }
        let _ = cols;
        let out = DenseArray::vector(data);
        let g = self.needs(a) || self.needs(b);
        self.push_checked("dot_product_rows", out, Op::DotRows(a, b), g)
    }

    pub fn reshape(&mut self, a: Var, shape: Shape) -> Result<Var> {
        let out = self.value(a).clone().reshaped(shape)?;
        let g = self.needs(a);
        Ok(self.push(out, Op::Reshape(a), g))
    }

    /// Row-wise log-softmax over the entries where `mask` is true.
    ///
    /// Masked entries hold `-inf` and receive zero gradient. Every row must
    /// have at least one feasible entry.
    pub fn masked_log_softmax(&mut self, logits: Var, mask: &[bool]) -> Result<Var> {
        let v = self.value(logits);
        let (rows, cols) = match v.shape() {
            Shape::Matrix(r, c) => (r, c),
            Shape::Vector(n) => (1, n),
        };
        if mask.len() != rows * cols {
            return Err(shape_err(
                "masked_log_softmax",
                format!("mask of {} for {rows}x{cols}", mask.len()),
            ));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let row = &v.data()[r * cols..(r + 1) * cols];
            let m = &mask[r * cols..(r + 1) * cols];
            data.extend(crate::dist::masked_log_softmax(row, m)?);
        }
        let out = DenseArray::from_vec(v.shape(), data)?;
        let g = self.needs(logits);
        Ok(self.push(out, Op::MaskedLogSoftmax(logits, mask.to_vec()), g))
    }

    /// Selects one entry per row of a `D x N` matrix.
    pub fn pick(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let v = self.value(a);
        let (rows, cols) = match v.shape() {
            Shape::Matrix(r, c) if r == indices.len() => (r, c),
            s => return Err(shape_err("pick", format!("{s:?} with {} indices", indices.len()))),
        };
        let mut data = Vec::with_capacity(rows);
        for (r, &i) in indices.iter().enumerate() {
            if i >= cols {
                return Err(shape_err("pick", format!("index {i} out of {cols}")));
            }
            data.push(v.get(r, i));
        }
        let out = DenseArray::vector(data);
        let g = self.needs(a);
        self.push_checked("pick", out, Op::Pick(a, indices.to_vec()), g)
    }

    /// Entropy `-sum p log p` of each row of a log-probability matrix.
    pub fn entropy_rows(&mut self, logp: Var) -> Result<Var> {
        let v = self.value(logp);
        let (rows, cols) = match v.shape() {
            Shape::Matrix(r, c) => (r, c),
            s => return Err(shape_err("entropy_rows", format!("{s:?}"))),
        };
        let mut data = Vec::with_capacity(rows);
        for r in 0..rows {
            let h = v.data()[r * cols..(r + 1) * cols]
                .iter()
                .filter(|l| l.is_finite())
                .fold(T::zero(), |acc, &l| acc - l.exp() * l);
            data.push(h);
        }
        let out = DenseArray::vector(data);
        let g = self.needs(logp);
        self.push_checked("entropy_rows", out, Op::EntropyRows(logp), g)
    }

    /// Sums vector entries into `segments` bins; `segment_of[k]` names the bin of entry `k`.
    pub fn segment_sum(&mut self, a: Var, segment_of: &[usize], segments: usize) -> Result<Var> {
        let v = self.value(a);
        if v.len() != segment_of.len() {
            return Err(shape_err(
                "segment_sum",
                format!("{} entries, {} segment ids", v.len(), segment_of.len()),
            ));
        }
        let mut data = vec![T::zero(); segments];
        for (&x, &s) in v.data().iter().zip(segment_of) {
            if s >= segments {
                return Err(shape_err("segment_sum", format!("segment {s} of {segments}")));
            }
            data[s] = data[s] + x;
        }
        let out = DenseArray::vector(data);
        let g = self.needs(a);
        Ok(self.push(out, Op::SegmentSum(a, segment_of.to_vec()), g))
    }

    /// Mean of all entries, as a one-element vector.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(shape_err("mean", "empty input"));
        }
        let s: T = v.data().iter().copied().sum();
        let out = DenseArray::scalar(s / T::of(v.len() as f64));
        let g = self.needs(a);
        self.push_checked("mean", out, Op::Mean(a), g)
    }

    /// Elementwise `(a - target)^2`.
    pub fn squared_error(&mut self, a: Var, target: &[T]) -> Result<Var> {
        let v = self.value(a);
        if v.len() != target.len() {
            return Err(shape_err(
                "squared_error",
                format!("{} vs {} targets", v.len(), target.len()),
            ));
        }
        let data = v.data().iter().zip(target).map(|(&x, &t)| (x - t) * (x - t)).collect();
        let out = DenseArray::vector(data);
        let g = self.needs(a);
        self.push_checked("squared_error", out, Op::SquaredError(a, target.to_vec()), g)
    }

    /// Per-sample clipped surrogate `min(r A, clip(r, 1-eps, 1+eps) A)` with
    /// `r = exp(logp - old_logp)`.
    pub fn clipped_surrogate(
        &mut self,
        logp: Var,
        old_logp: &[T],
        advantage: &[T],
        eps: T,
    ) -> Result<Var> {
        let v = self.value(logp);
        if v.len() != old_logp.len() || v.len() != advantage.len() {
            return Err(shape_err(
                "clipped_surrogate",
                format!("{} log-probs, {} old, {} advantages", v.len(), old_logp.len(), advantage.len()),
            ));
        }
        let data = v
            .data()
            .iter()
            .zip(old_logp)
            .zip(advantage)
            .map(|((&l, &o), &adv)| surrogate(l - o, adv, eps).0)
            .collect();
        let out = DenseArray::vector(data);
        let g = self.needs(logp);
        self.push_checked(
            "clipped_surrogate",
            out,
            Op::ClippedSurrogate {
                logp,
                old_logp: old_logp.to_vec(),
                advantage: advantage.to_vec(),
                eps,
            },
            g,
        )
    }

    /// Smallest |pre-activation| over all ReLU inputs recorded so far.
    ///
    /// Finite-difference checks use this to stay away from kinks.
    pub fn min_abs_relu_input(&self) -> Option<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) => Some(a),
                _ => None,
            })
            .flat_map(|a| self.value(a).data().iter().map(|x| x.as_f64().abs()))
            .reduce(f64::min)
    }

    /// Runs the reverse sweep from a single-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.swept {
            return Err(NnError::AlreadySwept);
        }
        self.swept = true;
        let n = self.value(loss).len();
        if n != 1 {
            return Err(NnError::NonScalarLoss(n));
        }
        let mut grads: Vec<Option<DenseArray<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(DenseArray::from_vec(self.shape(loss), vec![T::one()])?);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            self.reverse_rule(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn reverse_rule(&self, idx: usize, g: &DenseArray<T>, grads: &mut [Option<DenseArray<T>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let ga = slot(grads, *a, va.shape());
                    gemm_into(false, g, true, vb, T::one(), T::one(), ga);
                }
                if self.needs(*b) {
                    let gb = slot(grads, *b, vb.shape());
                    gemm_into(true, va, false, g, T::one(), T::one(), gb);
                }
            }
            Op::AddBias(a, bias) => {
                if self.needs(*a) {
                    slot(grads, *a, g.shape()).add_assign(g);
                }
                if self.needs(*bias) {
                    let shape = self.shape(*bias);
                    let gb = slot(grads, *bias, shape);
                    let cols = shape.numel();
                    for row in g.data().chunks(cols) {
                        for (o, &x) in gb.data_mut().iter_mut().zip(row) {
                            *o = *o + x;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.needs(v) {
                        slot(grads, v, g.shape()).add_assign(g);
                    }
                }
            }
            Op::Relu(a) => {
                let ga = slot(grads, *a, out.shape());
                for ((o, &x), &y) in ga.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                    if y > T::zero() {
                        *o = *o + x;
                    }
                }
            }
            Op::Scale(a, c) => {
                let ga = slot(grads, *a, out.shape());
                for (o, &x) in ga.data_mut().iter_mut().zip(g.data()) {
                    *o = *o + x * *c;
                }
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let shape = self.shape(p);
                    let w = self.value(p).cols();
                    if self.needs(p) {
                        let gp = slot(grads, p, shape);
                        for (r, grow) in gp.data_mut().chunks_mut(w).enumerate() {
                            let src = &g.data()[r * total + offset..r * total + offset + w];
                            for (o, &x) in grow.iter_mut().zip(src) {
                                *o = *o + x;
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::MeanPoolRows(a, group) => {
                let shape = self.shape(*a);
                let cols = out.cols();
                let inv = T::of(1.0 / *group as f64);
                let ga = slot(grads, *a, shape);
                for (r, grow) in ga.data_mut().chunks_mut(cols).enumerate() {
                    let src = g.row(r / group);
                    for (o, &x) in grow.iter_mut().zip(src) {
                        *o = *o + x * inv;
                    }
                }
            }
            Op::Gather(table, indices) => {
                let shape = self.shape(*table);
                let cols = out.cols();
                let gt = slot(grads, *table, shape);
                for (k, &i) in indices.iter().enumerate() {
                    let src = &g.data()[k * cols..(k + 1) * cols];
                    for (o, &x) in gt.data_mut()[i * cols..(i + 1) * cols].iter_mut().zip(src) {
                        *o = *o + x;
                    }
                }
            }
            Op::DotRows(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let cols = va.cols();
                for (this, other) in [(*a, vb), (*b, va)] {
                    if !self.needs(this) {
                        continue;
                    }
                    let gt = slot(grads, this, other.shape());
                    for (r, grow) in gt.data_mut().chunks_mut(cols).enumerate() {
                        let w = g.data()[r];
                        for (o, &y) in grow.iter_mut().zip(other.row(r)) {
                            *o = *o + w * y;
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                let shape = self.shape(*a);
                let ga = slot(grads, *a, shape);
                for (o, &x) in ga.data_mut().iter_mut().zip(g.data()) {
                    *o = *o + x;
                }
            }
            Op::MaskedLogSoftmax(a, mask) => {
                let shape = self.shape(*a);
                let cols = match shape {
                    Shape::Matrix(_, c) => c,
                    Shape::Vector(n) => n,
                };
                let ga = slot(grads, *a, shape);
                for (r, grow) in ga.data_mut().chunks_mut(cols).enumerate() {
                    let lrow = &out.data()[r * cols..(r + 1) * cols];
                    let grow_in = &g.data()[r * cols..(r + 1) * cols];
                    let m = &mask[r * cols..(r + 1) * cols];
                    let total = (0..cols)
                        .filter(|&j| m[j])
                        .fold(T::zero(), |acc, j| acc + grow_in[j]);
                    for j in (0..cols).filter(|&j| m[j]) {
                        grow[j] = grow[j] + grow_in[j] - lrow[j].exp() * total;
                    }
                }
            }
            Op::Pick(a, indices) => {
                let shape = self.shape(*a);
                let cols = self.value(*a).cols();
                let ga = slot(grads, *a, shape);
                for (r, &i) in indices.iter().enumerate() {
                    let o = &mut ga.data_mut()[r * cols + i];
                    *o = *o + g.data()[r];
                }
            }
            Op::EntropyRows(a) => {
                let va = self.value(*a);
                let cols = va.cols();
                let ga = slot(grads, *a, va.shape());
                for (r, grow) in ga.data_mut().chunks_mut(cols).enumerate() {
                    let w = g.data()[r];
                    for (o, &l) in grow.iter_mut().zip(va.row(r)) {
                        if l.is_finite() {
                            *o = *o - w * l.exp() * (l + T::one());
                        }
                    }
                }
            }
            Op::SegmentSum(a, segment_of) => {
                let shape = self.shape(*a);
                let ga = slot(grads, *a, shape);
                for (o, &s) in ga.data_mut().iter_mut().zip(segment_of) {
                    *o = *o + g.data()[s];
                }
            }
            Op::Mean(a) => {
                let shape = self.shape(*a);
                let w = g.data()[0] / T::of(shape.numel() as f64);
                let ga = slot(grads, *a, shape);
                for o in ga.data_mut() {
                    *o = *o + w;
                }
            }
            Op::SquaredError(a, target) => {
                let va = self.value(*a);
                let ga = slot(grads, *a, va.shape());
                for (((o, &x), &t), &w) in ga.data_mut().iter_mut().zip(va.data()).zip(target).zip(g.data()) {
                    *o = *o + T::of(2.0) * (x - t) * w;
                }
            }
            Op::ClippedSurrogate {
                logp,
                old_logp,
                advantage,
                eps,
            } => {
                let vl = self.value(*logp);
                let gl = slot(grads, *logp, vl.shape());
                for (k, o) in gl.data_mut().iter_mut().enumerate() {
                    let (_, d) = surrogate(vl.data()[k] - old_logp[k], advantage[k], *eps);
                    *o = *o + d * g.data()[k];
                }
            }
        }
    }
}

/// Returns `(value, d value / d log-ratio)` of the clipped surrogate.
fn surrogate<T: Real>(log_ratio: T, adv: T, eps: T) -> (T, T) {
    let r = log_ratio.exp();
    let clipped = r.max(T::one() - eps).min(T::one() + eps);
    let unclipped_term = r * adv;
    let clipped_term = clipped * adv;
    if unclipped_term <= clipped_term {
        (unclipped_term, unclipped_term)
    } else {
        (clipped_term, T::zero())
    }
}

fn slot<T: Real>(grads: &mut [Option<DenseArray<T>>], v: Var, shape: Shape) -> &mut DenseArray<T> {
    grads[v.0].get_or_insert_with(|| DenseArray::zeros(shape))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> DenseArray<f64> {
        DenseArray::matrix(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn relu_forward() {
        let x = DenseArray::vector(vec![-1.0, 0.0, 2.0]);
        let mut t = Tape::<f64>::new();
        let v = t.constant(x).unwrap();
        let r = t.relu(v).unwrap();
        assert_eq!(t.value(r).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn mean_pool_identical_rows() {
        let x = m(3, 2, &[1.5, -2.0, 1.5, -2.0, 1.5, -2.0]);
        let mut t = Tape::<f64>::new();
        let v = t.constant(x).unwrap();
        let p = t.mean_pool_rows(v, 3).unwrap();
        assert_eq!(t.value(p).data(), &[1.5, -2.0]);
    }

    #[test]
    fn second_sweep_rejected() {
        let w = m(1, 1, &[2.0]);
        let mut t = Tape::<f64>::new();
        let v = t.param(&w).unwrap();
        let s = t.mean(v).unwrap();
        assert!(t.backward(s).is_ok());
        assert!(matches!(t.backward(s), Err(NnError::AlreadySwept)));
    }

    #[test]
    fn non_finite_leaf_rejected() {
        let mut t = Tape::<f64>::new();
        assert!(t.constant(DenseArray::vector(vec![f64::NAN])).is_err());
    }

    #[test]
    fn embedding_gradient_scatter_adds() {
        let table = m(3, 2, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let mut t = Tape::<f64>::new();
        let v = t.param(&table).unwrap();
        let e = t.embedding_lookup(v, &[2, 0, 2]).unwrap();
        let s = t.mean(e).unwrap();
        let g = t.backward(s).unwrap();
        let gt = g.get(v).unwrap();
        let w = 1.0 / 6.0;
        assert_eq!(gt.data(), &[w, w, 0.0, 0.0, 2.0 * w, 2.0 * w]);
    }

    #[test]
    fn clip_arithmetic() {
        let (v, _) = surrogate((1.5f64).ln(), 2.0, 0.2);
        assert!((v - 2.4).abs() < 1e-12);
        let (v, d) = surrogate((0.5f64).ln(), -1.0, 0.2);
        assert!((v + 0.8).abs() < 1e-12);
        assert_eq!(d, 0.0);
    }

    #[test]
    fn masked_entries_get_zero_gradient() {
        let logits = m(1, 3, &[0.3, -1.0, 2.0]);
        let mut t = Tape::<f64>::new();
        let v = t.param(&logits).unwrap();
        let l = t.masked_log_softmax(v, &[true, false, true]).unwrap();
        let h = t.entropy_rows(l).unwrap();
        let p = t.pick(l, &[0]).unwrap();
        let s = t.add(h, p).unwrap();
        let s = t.mean(s).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(v).unwrap().data()[1], 0.0);
    }
}
