//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation as it is evaluated. Calling
//! [`Graph::backward`] walks the tape in reverse and accumulates exact
//! adjoints into the [`ParamStore`] gradients of every parameter the loss
//! depends on. Nodes are appended in evaluation order, so reverse index order
//! is a valid topological order.
//!
//! Every operation checks shapes up front and rejects non-finite results.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::tensor::dot;
use crate::numerics::{ParamId, ParamStore, Tensor};
use crate::scalar::Real;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// A list of index sets flattened into one buffer, as used by set attention
/// and segment pooling.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SetIndex {
    flat: Vec<usize>,
    offsets: Vec<usize>,
}

impl SetIndex {
    pub fn new() -> Self {
        Self { flat: Vec::new(), offsets: vec![0] }
    }

    pub fn from_sets<I, S>(sets: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: IntoIterator<Item = usize>,
    {
        let mut idx = Self::new();
        for s in sets {
            idx.push(s);
        }
        idx
    }

    pub fn push(&mut self, set: impl IntoIterator<Item = usize>) {
        self.flat.extend(set);
        self.offsets.push(self.flat.len());
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn set(&self, i: usize) -> &[usize] {
        &self.flat[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn flat(&self) -> &[usize] {
        &self.flat
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn total(&self) -> usize {
        self.flat.len()
    }
}

enum Op<T> {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, T),
    RowSoftmax(Var),
    RowLogSoftmax(Var),
    LayerNorm { x: Var, inv_std: Vec<T> },
    RowNormalize { x: Var, norms: Vec<T> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Gather(Var, Arc<[usize]>),
    SegmentMean(Var, Arc<SetIndex>),
    SegmentAttention { q: Var, k: Var, v: Var, sets: Arc<SetIndex>, scale: T },
    Log(Var),
    Exp(Var),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    Mse(Var, Var),
    Pick(Var, Arc<[(usize, usize)]>),
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
}

/// The tape.
pub struct Graph<T: Real = f64> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Adjoints of every recorded value with respect to one scalar output.
pub struct Adjoints<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Adjoints<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn mismatch(op: &'static str, a: [usize; 2], b: [usize; 2]) -> Error {
    Error::ShapeMismatch { op, left: a, right: b }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a constant; no gradient flows into it from [`Graph::backward`].
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Constant, "constant")
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Result<Var> {
        self.push(store.value(id).clone(), Op::Param(id), "param")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_nt(self.value(b))?;
        self.push(out, Op::MatMulNt(a, b), "matmul_nt")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a), "transpose")
    }

    fn zip_same(&self, a: Var, b: Var, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(ta.rows(), ta.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "add", |x, y| x + y)?;
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "sub", |x, y| x - y)?;
        self.push(out, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "mul", |x, y| x * y)?;
        self.push(out, Op::Mul(a, b), "mul")
    }

    /// Adds the `1 × c` row `r` to every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(r));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(mismatch("add_row", ta.shape(), tr.shape()));
        }
        let mut out = ta.clone();
        for i in 0..out.rows() {
            for (o, &b) in out.row_mut(i).iter_mut().zip(tr.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, r), "add_row")
    }

    /// Multiplies every row of `a` elementwise by the `1 × c` row `r`.
    pub fn mul_row(&mut self, a: Var, r: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(r));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(mismatch("mul_row", ta.shape(), tr.shape()));
        }
        let mut out = ta.clone();
        for i in 0..out.rows() {
            for (o, &b) in out.row_mut(i).iter_mut().zip(tr.data()) {
                *o *= b;
            }
        }
        self.push(out, Op::MulRow(a, r), "mul_row")
    }

    /// Scales row `i` of `a` by entry `i` of the `n × 1` column `c`.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Result<Var> {
        let (ta, tc) = (self.value(a), self.value(c));
        if tc.cols() != 1 || tc.rows() != ta.rows() {
            return Err(mismatch("mul_col", ta.shape(), tc.shape()));
        }
        let mut out = ta.clone();
        for i in 0..out.rows() {
            let s = tc.get(i, 0);
            out.row_mut(i).iter_mut().for_each(|o| *o *= s);
        }
        self.push(out, Op::MulCol(a, c), "mul_col")
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s), "scale")
    }

    /// Row-wise softmax with max subtraction.
    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let mut out = ta.clone();
        for i in 0..out.rows() {
            softmax_in_place(out.row_mut(i));
        }
        self.push(out, Op::RowSoftmax(a), "row_softmax")
    }

    pub fn row_log_softmax(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let mut out = ta.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|x| *x -= lse);
        }
        self.push(out, Op::RowLogSoftmax(a), "row_log_softmax")
    }

    /// Row-wise standardization `(x − mean) / sqrt(var + eps)` without affine.
    pub fn layer_norm(&mut self, a: Var, eps: T) -> Result<Var> {
        let ta = self.value(a);
        let n = T::lit(ta.cols() as f64);
        let mut out = ta.clone();
        let mut inv_std = Vec::with_capacity(ta.rows());
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
            let inv = T::one() / (var + eps).sqrt();
            row.iter_mut().for_each(|x| *x = (*x - mean) * inv);
            inv_std.push(inv);
        }
        self.push(out, Op::LayerNorm { x: a, inv_std }, "layer_norm")
    }

    /// Scales every row to unit Euclidean norm. Zero rows are rejected.
    pub fn row_normalize(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let mut out = ta.clone();
        let mut norms = Vec::with_capacity(ta.rows());
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let norm = dot(row, row).sqrt();
            if norm == T::zero() {
                return Err(Error::ZeroVector("row_normalize"));
            }
            row.iter_mut().for_each(|x| *x /= norm);
            norms.push(norm);
        }
        self.push(out, Op::RowNormalize { x: a, norms }, "row_normalize")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::EmptySet("concat_cols"))?;
        let rows = self.value(*first).rows();
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s[0] != rows {
                return Err(mismatch("concat_cols", self.shape(*first), s));
            }
            cols += s[1];
        }
        let mut out = Tensor::zeros(rows, cols);
        for i in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row(i);
                out.row_mut(i)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::EmptySet("concat_rows"))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(mismatch("concat_rows", self.shape(*first), t.shape()));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        self.push(out, Op::ConcatRows(parts.to_vec()), "concat_rows")
    }

    /// Selects rows of `a` by index (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var> {
        let ta = self.value(a);
        let mut out = Tensor::zeros(index.len(), ta.cols());
        for (o, &i) in index.iter().enumerate() {
            if i >= ta.rows() {
                return Err(Error::Invalid(format!("gather index {i} out of range for {} rows", ta.rows())));
            }
            out.row_mut(o).copy_from_slice(ta.row(i));
        }
        self.push(out, Op::Gather(a, index), "gather_rows")
    }

    /// Mean of each consecutive block of rows, blocks given by `segments`
    /// offsets (the flat indices are ignored; rows are taken in order).
    pub fn segment_mean(&mut self, a: Var, segments: Arc<SetIndex>) -> Result<Var> {
        let ta = self.value(a);
        if segments.total() != ta.rows() {
            return Err(mismatch("segment_mean", ta.shape(), [segments.total(), segments.len()]));
        }
        let mut out = Tensor::zeros(segments.len(), ta.cols());
        for s in 0..segments.len() {
            let (lo, hi) = (segments.offsets()[s], segments.offsets()[s + 1]);
            if hi == lo {
                return Err(Error::EmptySet("segment_mean"));
            }
            let inv = T::one() / T::lit((hi - lo) as f64);
            let dst = out.row_mut(s);
            for r in lo..hi {
                for (d, &x) in dst.iter_mut().zip(ta.row(r)) {
                    *d += x;
                }
            }
            dst.iter_mut().for_each(|d| *d *= inv);
        }
        self.push(out, Op::SegmentMean(a, segments), "segment_mean")
    }

    /// Scaled dot-product attention restricted to each index set.
    ///
    /// `q`, `k`, `v` are tables over a common row space. For every set `S`
    /// the output holds `softmax(scale · Q_S K_Sᵀ) V_S`, one row per member,
    /// with sets concatenated in order.
    pub fn segment_attention(&mut self, q: Var, k: Var, v: Var, sets: Arc<SetIndex>, scale: T) -> Result<Var> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        if tq.shape() != tk.shape() || tq.rows() != tv.rows() {
            return Err(mismatch("segment_attention", tq.shape(), tk.shape()));
        }
        let dv = tv.cols();
        let mut out = Tensor::zeros(sets.total(), dv);
        let mut scores = Vec::new();
        for s in 0..sets.len() {
            let members = sets.set(s);
            if members.is_empty() {
                return Err(Error::EmptySet("segment_attention"));
            }
            if let Some(&bad) = members.iter().find(|&&i| i >= tq.rows()) {
                return Err(Error::Invalid(format!("attention index {bad} out of range")));
            }
            let base = sets.offsets()[s];
            attention_weights(tq, tk, members, scale, &mut scores);
            let m = members.len();
            for i in 0..m {
                let dst = out.row_mut(base + i);
                for j in 0..m {
                    let w = scores[i * m + j];
                    for (d, &x) in dst.iter_mut().zip(tv.row(members[j])) {
                        *d += w * x;
                    }
                }
            }
        }
        self.push(out, Op::SegmentAttention { q, k, v, sets, scale }, "segment_attention")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.ln());
        self.push(out, Op::Log(a), "log")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.exp());
        self.push(out, Op::Exp(a), "exp")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.data().is_empty() {
            return Err(Error::EmptySet("mean"));
        }
        let s = t.data().iter().copied().sum::<T>() / T::lit(t.data().len() as f64);
        self.push(Tensor::scalar(s), Op::Mean(a), "mean")
    }

    /// Column means, `1 × c`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rows() == 0 {
            return Err(Error::EmptySet("mean_rows"));
        }
        let mut out = Tensor::zeros(1, t.cols());
        for i in 0..t.rows() {
            for (d, &x) in out.data_mut().iter_mut().zip(t.row(i)) {
                *d += x;
            }
        }
        let inv = T::one() / T::lit(t.rows() as f64);
        out.scale_in_place(inv);
        self.push(out, Op::MeanRows(a), "mean_rows")
    }

    /// Mean squared difference over all entries.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let diff = self.zip_same(a, b, "mse", |x, y| x - y)?;
        if diff.data().is_empty() {
            return Err(Error::EmptySet("mse"));
        }
        let s = diff.data().iter().map(|&d| d * d).sum::<T>() / T::lit(diff.data().len() as f64);
        self.push(Tensor::scalar(s), Op::Mse(a, b), "mse")
    }

    /// Gathers single entries into a `k × 1` column.
    pub fn pick(&mut self, a: Var, positions: Arc<[(usize, usize)]>) -> Result<Var> {
        let t = self.value(a);
        let mut out = Tensor::zeros(positions.len(), 1);
        for (o, &(r, c)) in positions.iter().enumerate() {
            if r >= t.rows() || c >= t.cols() {
                return Err(Error::Invalid(format!("pick ({r},{c}) out of range for {:?}", t.shape())));
            }
            out.set(o, 0, t.get(r, c));
        }
        self.push(out, Op::Pick(a, positions), "pick")
    }

    /// Reverse pass from the scalar `loss`, returning every adjoint.
    pub fn adjoints(&self, loss: Var) -> Result<Adjoints<T>> {
        if self.shape(loss) != [1, 1] {
            return Err(mismatch("backward", self.shape(loss), [1, 1]));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Adjoints { grads })
    }

    /// Reverse pass from `loss`, accumulating into parameter gradients.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let adj = self.adjoints(loss)?;
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, adj.grads[i].as_ref()) {
                if !g.is_finite() {
                    return Err(Error::NonFinite { op: "backward" });
                }
                store.accumulate_grad(*id, g);
            }
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                accum(grads, *a, g.matmul_nt(tb)?);
                accum(grads, *b, ta.matmul_tn(g)?);
            }
            Op::MatMulNt(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                accum(grads, *a, g.matmul(tb)?);
                accum(grads, *b, g.matmul_tn(ta)?);
            }
            Op::Transpose(a) => accum(grads, *a, g.transpose()),
            Op::Add(a, b) => {
                accum(grads, *a, g.clone());
                accum(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accum(grads, *a, g.clone());
                accum(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                accum(grads, *a, zip(g, tb, |x, y| x * y));
                accum(grads, *b, zip(g, ta, |x, y| x * y));
            }
            Op::AddRow(a, r) => {
                accum(grads, *a, g.clone());
                accum(grads, *r, col_sums(g));
            }
            Op::MulRow(a, r) => {
                let (ta, tr) = (self.value(*a), self.value(*r));
                let mut ga = g.clone();
                for row in 0..ga.rows() {
                    for (x, &s) in ga.row_mut(row).iter_mut().zip(tr.data()) {
                        *x *= s;
                    }
                }
                accum(grads, *a, ga);
                accum(grads, *r, col_sums(&zip(g, ta, |x, y| x * y)));
            }
            Op::MulCol(a, c) => {
                let (ta, tc) = (self.value(*a), self.value(*c));
                let mut ga = g.clone();
                let mut gc = Tensor::zeros(tc.rows(), 1);
                for row in 0..ga.rows() {
                    let s = tc.get(row, 0);
                    gc.set(row, 0, dot(g.row(row), ta.row(row)));
                    ga.row_mut(row).iter_mut().for_each(|x| *x *= s);
                }
                accum(grads, *a, ga);
                accum(grads, *c, gc);
            }
            Op::Scale(a, s) => accum(grads, *a, g.map(|x| x * *s)),
            Op::RowSoftmax(a) => {
                let mut ga = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let inner = dot(g.row(r), y.row(r));
                    for ((d, &gy), &yy) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *d = yy * (gy - inner);
                    }
                }
                accum(grads, *a, ga);
            }
            Op::RowLogSoftmax(a) => {
                let mut ga = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let total = g.row(r).iter().copied().sum::<T>();
                    for ((d, &gy), &ly) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *d = gy - ly.exp() * total;
                    }
                }
                accum(grads, *a, ga);
            }
            Op::LayerNorm { x, inv_std } => {
                let n = T::lit(y.cols() as f64);
                let mut ga = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (gr, yr) = (g.row(r), y.row(r));
                    let mean_g = gr.iter().copied().sum::<T>() / n;
                    let mean_gy = dot(gr, yr) / n;
                    for ((d, &gv), &yv) in ga.row_mut(r).iter_mut().zip(gr).zip(yr) {
                        *d = inv_std[r] * (gv - mean_g - yv * mean_gy);
                    }
                }
                accum(grads, *x, ga);
            }
            Op::RowNormalize { x, norms } => {
                let mut ga = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let inner = dot(g.row(r), y.row(r));
                    for ((d, &gv), &yv) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *d = (gv - yv * inner) / norms[r];
                    }
                }
                accum(grads, *x, ga);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let mut gp = Tensor::zeros(g.rows(), w);
                    for r in 0..g.rows() {
                        gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                    }
                    off += w;
                    accum(grads, p, gp);
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let h = self.value(p).rows();
                    let data = g.data()[off * g.cols()..(off + h) * g.cols()].to_vec();
                    off += h;
                    accum(grads, p, Tensor::from_vec(h, g.cols(), data)?);
                }
            }
            Op::Gather(a, index) => {
                let ta = self.value(*a);
                let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                for (o, &src) in index.iter().enumerate() {
                    for (d, &x) in ga.row_mut(src).iter_mut().zip(g.row(o)) {
                        *d += x;
                    }
                }
                accum(grads, *a, ga);
            }
            Op::SegmentMean(a, segments) => {
                let ta = self.value(*a);
                let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                for s in 0..segments.len() {
                    let (lo, hi) = (segments.offsets()[s], segments.offsets()[s + 1]);
                    let inv = T::one() / T::lit((hi - lo) as f64);
                    for r in lo..hi {
                        for (d, &x) in ga.row_mut(r).iter_mut().zip(g.row(s)) {
                            *d = x * inv;
                        }
                    }
                }
                accum(grads, *a, ga);
            }
            Op::SegmentAttention { q, k, v, sets, scale } => {
                let (tq, tk, tv) = (self.value(*q), self.value(*k), self.value(*v));
                let mut gq = Tensor::zeros(tq.rows(), tq.cols());
                let mut gk = Tensor::zeros(tk.rows(), tk.cols());
                let mut gv = Tensor::zeros(tv.rows(), tv.cols());
                let mut a = Vec::new();
                let mut da = Vec::new();
                for s in 0..sets.len() {
                    let members = sets.set(s);
                    let base = sets.offsets()[s];
                    let m = members.len();
                    attention_weights(tq, tk, members, *scale, &mut a);
                    da.clear();
                    da.resize(m * m, T::zero());
                    for i in 0..m {
                        let gi = g.row(base + i);
                        for j in 0..m {
                            let w = a[i * m + j];
                            for (d, &x) in gv.row_mut(members[j]).iter_mut().zip(gi) {
                                *d += w * x;
                            }
                            da[i * m + j] = dot(gi, tv.row(members[j]));
                        }
                    }
                    // da becomes the score adjoint, scaled.
                    for i in 0..m {
                        let row_a = &a[i * m..(i + 1) * m];
                        let inner = dot(row_a, &da[i * m..(i + 1) * m]);
                        for j in 0..m {
                            da[i * m + j] = row_a[j] * (da[i * m + j] - inner) * *scale;
                        }
                    }
                    for i in 0..m {
                        for j in 0..m {
                            let ds = da[i * m + j];
                            if ds == T::zero() {
                                continue;
                            }
                            let (mi, mj) = (members[i], members[j]);
                            for (d, &x) in gq.row_mut(mi).iter_mut().zip(tk.row(mj)) {
                                *d += ds * x;
                            }
                            for (d, &x) in gk.row_mut(mj).iter_mut().zip(tq.row(mi)) {
                                *d += ds * x;
                            }
                        }
                    }
                }
                accum(grads, *q, gq);
                accum(grads, *k, gk);
                accum(grads, *v, gv);
            }
            Op::Log(a) => {
                let ta = self.value(*a);
                accum(grads, *a, zip(g, ta, |gv, x| gv / x));
            }
            Op::Exp(a) => accum(grads, *a, zip(g, y, |gv, e| gv * e)),
            Op::Sum(a) => {
                let s = self.shape(*a);
                accum(grads, *a, Tensor::filled(s[0], s[1], g.item()));
            }
            Op::Mean(a) => {
                let s = self.shape(*a);
                let n = T::lit((s[0] * s[1]) as f64);
                accum(grads, *a, Tensor::filled(s[0], s[1], g.item() / n));
            }
            Op::MeanRows(a) => {
                let s = self.shape(*a);
                let inv = T::one() / T::lit(s[0] as f64);
                let mut ga = Tensor::zeros(s[0], s[1]);
                for r in 0..s[0] {
                    for (d, &x) in ga.row_mut(r).iter_mut().zip(g.data()) {
                        *d = x * inv;
                    }
                }
                accum(grads, *a, ga);
            }
            Op::Mse(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let n = T::lit(ta.data().len() as f64);
                let c = T::lit(2.0) * g.item() / n;
                let ga = zip(ta, tb, |x, y| c * (x - y));
                accum(grads, *b, ga.map(|x| -x));
                accum(grads, *a, ga);
            }
            Op::Pick(a, positions) => {
                let s = self.shape(*a);
                let mut ga = Tensor::zeros(s[0], s[1]);
                for (o, &(r, c)) in positions.iter().enumerate() {
                    let cur = ga.get(r, c);
                    ga.set(r, c, cur + g.get(o, 0));
                }
                accum(grads, *a, ga);
            }
        }
        Ok(())
    }
}

fn accum<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

fn col_sums<T: Real>(g: &Tensor<T>) -> Tensor<T> {
    let mut out = Tensor::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (d, &x) in out.data_mut().iter_mut().zip(g.row(r)) {
            *d += x;
        }
    }
    out
}

pub(crate) fn log_sum_exp<T: Real>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let s = row.iter().map(|&x| (x - max).exp()).sum::<T>();
    max + s.ln()
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        s += *x;
    }
    row.iter_mut().for_each(|x| *x /= s);
}

/// Fills `out` with the `m × m` attention weights of one set.
fn attention_weights<T: Real>(q: &Tensor<T>, k: &Tensor<T>, members: &[usize], scale: T, out: &mut Vec<T>) {
    let m = members.len();
    out.clear();
    out.resize(m * m, T::zero());
    for (i, &mi) in members.iter().enumerate() {
        let qi = q.row(mi);
        let row = &mut out[i * m..(i + 1) * m];
        for (j, &mj) in members.iter().enumerate() {
            row[j] = dot(qi, k.row(mj)) * scale;
        }
        softmax_in_place(row);
    }
}
