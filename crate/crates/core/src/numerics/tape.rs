//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] is built fresh for every forward pass. Each recorded node owns
//! its output value (parameters are borrowed from the [`ParamSet`]) and the
//! information its backward rule needs. Nodes are appended in evaluation
//! order, so the node list is already topologically sorted and `backward`
//! walks it once in reverse.

use std::ops::Range;

use super::params::{Gradients, ParamId, ParamSet};
use super::tensor::{matmul_into, row_moments, sigmoid, softmax_in_place, Tensor};
use super::NumericsError;

/// Lower clamp applied to probabilities before taking logarithms.
pub const PROB_CLAMP: f64 = 1e-7;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Slice {
        x: Var,
        rows: Range<usize>,
        cols: Range<usize>,
    },
    Transpose(Var),
    Reshape(Var),
    ReverseRows(Var),
    Gather {
        table: Var,
        rows: Vec<Option<usize>>,
    },
    MaxOverRows {
        x: Var,
        argmax: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
    GatedAverage {
        gate: Var,
        cand: Var,
    },
    Cosine {
        a: Var,
        b: Var,
        norm_a: f64,
        norm_b: f64,
    },
    Bce {
        p: Var,
        target: f64,
    },
    SoftmaxXent {
        logits: Var,
        class: usize,
        probs: Vec<f64>,
    },
}

impl Op {
    #[cfg(debug_assertions)]
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf | Param(_) => vec![],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | AddRow(a, b) => vec![*a, *b],
            Affine(a, _) | Sigmoid(a) | Tanh(a) | Relu(a) | SoftmaxRows(a) | Transpose(a) | Reshape(a)
            | ReverseRows(a) | Sum(a) | Mean(a) => vec![*a],
            LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            ConcatCols(v) | ConcatRows(v) => v.clone(),
            Slice { x, .. } | MaxOverRows { x, .. } => vec![*x],
            Gather { table, .. } => vec![*table],
            GatedAverage { gate, cand } => vec![*gate, *cand],
            Cosine { a, b, .. } => vec![*a, *b],
            Bce { p, .. } => vec![*p],
            SoftmaxXent { logits, .. } => vec![*logits],
        }
    }
}

struct Node {
    value: Value,
    op: Op,
}

/// Recorded computation over borrowed parameters.
pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

fn dim_panic(op: &str, a: &[usize], b: &[usize]) -> ! {
    panic!("dimension error in {op}: {a:?} vs {b:?}")
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.get(*id),
        }
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        #[cfg(debug_assertions)]
        {
            let inputs_finite = op.inputs().iter().all(|&i| self.value(i).is_finite());
            debug_assert!(
                !inputs_finite || value.is_finite(),
                "non-finite output from finite inputs (node {})",
                self.nodes.len()
            );
        }
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant that receives no parameter gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// The node for a parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            dim_panic("matmul", sa, sb);
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push(Tensor::new(vec![m, n], out).unwrap(), Op::MatMul(a, b))
    }

    fn zip_with(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            dim_panic(name, ta.shape(), tb.shape());
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data).unwrap();
        self.push(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// `a + b` with `b` (length = columns of `a`) broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let c = ta.cols();
        if tb.len() != c {
            dim_panic("add_row", ta.shape(), tb.shape());
        }
        let bias = tb.data();
        let data = ta.data().chunks(c).flat_map(|row| row.iter().zip(bias).map(|(x, y)| x + y)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data).unwrap();
        self.push(out, Op::AddRow(a, b))
    }

    /// `scale · a + shift` elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(a).map(|x| scale * x + shift);
        self.push(out, Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.affine(a, factor, 0.0)
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        self.affine(a, -1.0, 1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    /// ReLU; the subgradient at 0 is 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(out, Op::Relu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = super::tensor::softmax_rows(self.value(a));
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let tx = self.value(x);
        let d = tx.cols();
        let (tg, tb) = (self.value(gain), self.value(bias));
        if tg.len() != d || tb.len() != d {
            dim_panic("layer_norm", tx.shape(), tg.shape());
        }
        let mut xhat = Vec::with_capacity(tx.len());
        let mut inv_std = Vec::with_capacity(tx.rows());
        let mut out = Vec::with_capacity(tx.len());
        for row in tx.data().chunks(d) {
            let (mean, inv) = row_moments(row, eps);
            inv_std.push(inv);
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat.push(h);
                out.push(h * tg.data()[j] + tb.data()[j]);
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), out).unwrap();
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                dim_panic("concat_cols", self.shape(parts[0]), t.shape());
            }
            total += t.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::new(vec![rows, total], data).unwrap();
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                dim_panic("concat_rows", self.shape(parts[0]), t.shape());
            }
            data.extend_from_slice(t.data());
        }
        let rows = data.len() / cols;
        let out = Tensor::new(vec![rows, cols], data).unwrap();
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    /// Sub-matrix `x[rows, cols]`.
    pub fn slice(&mut self, x: Var, rows: Range<usize>, cols: Range<usize>) -> Var {
        let t = self.value(x);
        if rows.is_empty() || cols.is_empty() || rows.end > t.rows() || cols.end > t.cols() {
            dim_panic("slice", t.shape(), &[rows.end, cols.end]);
        }
        let mut data = Vec::with_capacity(rows.len() * cols.len());
        for i in rows.clone() {
            data.extend_from_slice(&t.row(i)[cols.clone()]);
        }
        let out = Tensor::new(vec![rows.len(), cols.len()], data).unwrap();
        self.push(out, Op::Slice { x, rows, cols })
    }

    pub fn row(&mut self, x: Var, i: usize) -> Var {
        let c = self.value(x).cols();
        self.slice(x, i..i + 1, 0..c)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        self.push(out, Op::Transpose(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let out = self
            .value(x)
            .reshape(shape)
            .unwrap_or_else(|_| dim_panic("reshape", self.shape(x), shape));
        self.push(out, Op::Reshape(x))
    }

    pub fn reverse_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let mut data = Vec::with_capacity(t.len());
        for i in (0..t.rows()).rev() {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::new(t.shape().to_vec(), data).unwrap();
        self.push(out, Op::ReverseRows(x))
    }

    /// Stacks rows of `table`; `None` yields a zero row.
    pub fn gather(&mut self, table: Var, rows: Vec<Option<usize>>) -> Var {
        let t = self.value(table);
        let c = t.cols();
        let mut data = Vec::with_capacity(rows.len() * c);
        for r in &rows {
            match r {
                Some(i) => {
                    if *i >= t.rows() {
                        dim_panic("gather", t.shape(), &[*i]);
                    }
                    data.extend_from_slice(t.row(*i));
                }
                None => data.extend(std::iter::repeat(0.0).take(c)),
            }
        }
        let out = Tensor::new(vec![rows.len(), c], data).unwrap();
        self.push(out, Op::Gather { table, rows })
    }

    /// Column-wise maximum, `n×d → 1×d`; ties resolve to the first row.
    pub fn max_over_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let c = t.cols();
        let mut best = t.row(0).to_vec();
        let mut argmax = vec![0; c];
        for i in 1..t.rows() {
            for (j, &v) in t.row(i).iter().enumerate() {
                if v > best[j] {
                    best[j] = v;
                    argmax[j] = i;
                }
            }
        }
        let out = Tensor::new(vec![1, c], best).unwrap();
        self.push(out, Op::MaxOverRows { x, argmax })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x))
    }

    /// Sum of several equally shaped nodes.
    pub fn add_all(&mut self, parts: &[Var]) -> Var {
        let mut acc = parts[0];
        for &p in &parts[1..] {
            acc = self.add(acc, p);
        }
        acc
    }

    /// Gated running average over rows: `h_t = (1 − f_t)∘c_t + f_t∘h_{t−1}`, `h_{−1} = 0`.
    pub fn gated_average(&mut self, gate: Var, cand: Var) -> Var {
        let (tf, tc) = (self.value(gate), self.value(cand));
        if tf.shape() != tc.shape() {
            dim_panic("gated_average", tf.shape(), tc.shape());
        }
        let d = tc.cols();
        let mut h = vec![0.0; tc.len()];
        let mut prev = vec![0.0; d];
        for t in 0..tc.rows() {
            for j in 0..d {
                let f = tf.data()[t * d + j];
                let v = (1.0 - f) * tc.data()[t * d + j] + f * prev[j];
                h[t * d + j] = v;
                prev[j] = v;
            }
        }
        let out = Tensor::new(tc.shape().to_vec(), h).unwrap();
        self.push(out, Op::GatedAverage { gate, cand })
    }

    /// Cosine similarity of two equally sized tensors, as a scalar.
    ///
    /// Norms are floored at 1e-12 so a zero vector yields 0 rather than NaN.
    pub fn cosine(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() {
            dim_panic("cosine", ta.shape(), tb.shape());
        }
        let dot: f64 = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).sum();
        let norm_a = ta.l2_norm().max(1e-12);
        let norm_b = tb.l2_norm().max(1e-12);
        let c = dot / (norm_a * norm_b);
        self.push(Tensor::scalar(c), Op::Cosine { a, b, norm_a, norm_b })
    }

    /// Binary cross-entropy of a probability against a 0/1 target; `p` is
    /// clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]`.
    pub fn bce(&mut self, p: Var, target: f64) -> Var {
        let pv = self.value(p).item().clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let loss = -(target * pv.ln() + (1.0 - target) * (1.0 - pv).ln());
        self.push(Tensor::scalar(loss), Op::Bce { p, target })
    }

    /// Cross-entropy of `softmax(logits)` against a class index.
    pub fn softmax_cross_entropy(&mut self, logits: Var, class: usize) -> Var {
        let t = self.value(logits);
        assert!(class < t.len(), "class {class} out of range for {} logits", t.len());
        let mut probs = t.data().to_vec();
        softmax_in_place(&mut probs);
        let max = t.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + t.data().iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        let loss = lse - t.data()[class];
        self.push(Tensor::scalar(loss), Op::SoftmaxXent { logits, class, probs })
    }

    /// Reverse-mode gradients of a scalar node with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(NumericsError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::zeros_like(self.params);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let y = match &node.value {
                Value::Owned(t) => t,
                Value::Param(id) => self.params.get(*id),
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    self.acc(&mut grads, *a, |da| {
                        for r in 0..m {
                            for p in 0..k {
                                let brow = &tb.data()[p * n..(p + 1) * n];
                                let grow = &g[r * n..(r + 1) * n];
                                da[r * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    });
                    self.acc(&mut grads, *b, |db| {
                        // dB = Aᵀ·G
                        for r in 0..m {
                            for p in 0..k {
                                let av = ta.data()[r * k + p];
                                if av == 0.0 {
                                    continue;
                                }
                                let grow = &g[r * n..(r + 1) * n];
                                for (d, gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                    *d += av * gv;
                                }
                            }
                        }
                    });
                }
                Op::Add(a, b) => {
                    self.acc(&mut grads, *a, |d| add_into(d, &g));
                    self.acc(&mut grads, *b, |d| add_into(d, &g));
                }
                Op::Sub(a, b) => {
                    self.acc(&mut grads, *a, |d| add_into(d, &g));
                    self.acc(&mut grads, *b, |d| d.iter_mut().zip(&g).for_each(|(x, gv)| *x -= gv));
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    self.acc(&mut grads, *a, |d| {
                        for ((x, gv), bv) in d.iter_mut().zip(&g).zip(tb.data()) {
                            *x += gv * bv;
                        }
                    });
                    self.acc(&mut grads, *b, |d| {
                        for ((x, gv), av) in d.iter_mut().zip(&g).zip(ta.data()) {
                            *x += gv * av;
                        }
                    });
                }
                Op::AddRow(a, b) => {
                    let c = self.value(*b).len();
                    self.acc(&mut grads, *a, |d| add_into(d, &g));
                    self.acc(&mut grads, *b, |d| {
                        for row in g.chunks(c) {
                            add_into(d, row);
                        }
                    });
                }
                Op::Affine(a, s) => {
                    self.acc(&mut grads, *a, |d| d.iter_mut().zip(&g).for_each(|(x, gv)| *x += s * gv));
                }
                Op::Sigmoid(a) => self.acc(&mut grads, *a, |d| {
                    for ((x, gv), yv) in d.iter_mut().zip(&g).zip(y.data()) {
                        *x += gv * yv * (1.0 - yv);
                    }
                }),
                Op::Tanh(a) => self.acc(&mut grads, *a, |d| {
                    for ((x, gv), yv) in d.iter_mut().zip(&g).zip(y.data()) {
                        *x += gv * (1.0 - yv * yv);
                    }
                }),
                Op::Relu(a) => {
                    let ta = self.value(*a);
                    self.acc(&mut grads, *a, |d| {
                        for ((x, gv), av) in d.iter_mut().zip(&g).zip(ta.data()) {
                            if *av > 0.0 {
                                *x += gv;
                            }
                        }
                    });
                }
                Op::SoftmaxRows(a) => {
                    let c = y.cols();
                    self.acc(&mut grads, *a, |d| {
                        for ((drow, grow), yrow) in d.chunks_mut(c).zip(g.chunks(c)).zip(y.data().chunks(c)) {
                            let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                            for ((x, gv), yv) in drow.iter_mut().zip(grow).zip(yrow) {
                                *x += yv * (gv - dot);
                            }
                        }
                    });
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let tg = self.value(*gain);
                    let d = tg.len();
                    self.acc(&mut grads, *gain, |dg| {
                        for (grow, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                            for j in 0..d {
                                dg[j] += grow[j] * hrow[j];
                            }
                        }
                    });
                    self.acc(&mut grads, *bias, |db| {
                        for grow in g.chunks(d) {
                            add_into(db, grow);
                        }
                    });
                    self.acc(&mut grads, *x, |dx| {
                        for (r, ((dxrow, grow), hrow)) in dx.chunks_mut(d).zip(g.chunks(d)).zip(xhat.chunks(d)).enumerate() {
                            let dh: Vec<f64> = grow.iter().zip(tg.data()).map(|(a, b)| a * b).collect();
                            let mean_dh = dh.iter().sum::<f64>() / d as f64;
                            let mean_dh_h = dh.iter().zip(hrow).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                            for j in 0..d {
                                dxrow[j] += inv_std[r] * (dh[j] - mean_dh - hrow[j] * mean_dh_h);
                            }
                        }
                    });
                }
                Op::ConcatCols(parts) => {
                    let total = y.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.value(p).cols();
                        self.acc(&mut grads, p, |d| {
                            for (drow, grow) in d.chunks_mut(c).zip(g.chunks(total)) {
                                add_into(drow, &grow[offset..offset + c]);
                            }
                        });
                        offset += c;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        self.acc(&mut grads, p, |d| add_into(d, &g[offset..offset + n]));
                        offset += n;
                    }
                }
                Op::Slice { x, rows, cols } => {
                    let c = self.value(*x).cols();
                    let w = cols.len();
                    self.acc(&mut grads, *x, |d| {
                        for (k, r) in rows.clone().enumerate() {
                            add_into(&mut d[r * c + cols.start..r * c + cols.end], &g[k * w..(k + 1) * w]);
                        }
                    });
                }
                Op::Transpose(a) => {
                    let (r, c) = (y.rows(), y.cols());
                    self.acc(&mut grads, *a, |d| {
                        for i in 0..r {
                            for j in 0..c {
                                d[j * r + i] += g[i * c + j];
                            }
                        }
                    });
                }
                Op::Reshape(a) => self.acc(&mut grads, *a, |d| add_into(d, &g)),
                Op::ReverseRows(a) => {
                    let (r, c) = (y.rows(), y.cols());
                    self.acc(&mut grads, *a, |d| {
                        for i in 0..r {
                            add_into(&mut d[(r - 1 - i) * c..(r - i) * c], &g[i * c..(i + 1) * c]);
                        }
                    });
                }
                Op::Gather { table, rows } => {
                    let c = self.value(*table).cols();
                    self.acc(&mut grads, *table, |d| {
                        for (k, r) in rows.iter().enumerate() {
                            if let Some(r) = r {
                                add_into(&mut d[r * c..(r + 1) * c], &g[k * c..(k + 1) * c]);
                            }
                        }
                    });
                }
                Op::MaxOverRows { x, argmax } => {
                    let c = argmax.len();
                    self.acc(&mut grads, *x, |d| {
                        for (j, &r) in argmax.iter().enumerate() {
                            d[r * c + j] += g[j];
                        }
                    });
                }
                Op::Sum(a) => self.acc(&mut grads, *a, |d| d.iter_mut().for_each(|x| *x += g[0])),
                Op::Mean(a) => {
                    let n = self.value(*a).len() as f64;
                    self.acc(&mut grads, *a, |d| d.iter_mut().for_each(|x| *x += g[0] / n));
                }
                Op::GatedAverage { gate, cand } => {
                    let (tf, tc) = (self.value(*gate), self.value(*cand));
                    let (n, c) = (tc.rows(), tc.cols());
                    let mut dgate = vec![0.0; n * c];
                    let mut dcand = vec![0.0; n * c];
                    let mut carry = vec![0.0; c];
                    for t in (0..n).rev() {
                        for j in 0..c {
                            let k = t * c + j;
                            let dh = g[k] + carry[j];
                            let f = tf.data()[k];
                            let prev = if t == 0 { 0.0 } else { y.data()[k - c] };
                            dcand[k] = (1.0 - f) * dh;
                            dgate[k] = (prev - tc.data()[k]) * dh;
                            carry[j] = f * dh;
                        }
                    }
                    self.acc(&mut grads, *gate, |d| add_into(d, &dgate));
                    self.acc(&mut grads, *cand, |d| add_into(d, &dcand));
                }
                Op::Cosine { a, b, norm_a, norm_b } => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let c = y.item();
                    let inv = 1.0 / (norm_a * norm_b);
                    self.acc(&mut grads, *a, |d| {
                        for ((x, av), bv) in d.iter_mut().zip(ta.data()).zip(tb.data()) {
                            *x += g[0] * (bv * inv - c * av / (norm_a * norm_a));
                        }
                    });
                    self.acc(&mut grads, *b, |d| {
                        for ((x, av), bv) in d.iter_mut().zip(ta.data()).zip(tb.data()) {
                            *x += g[0] * (av * inv - c * bv / (norm_b * norm_b));
                        }
                    });
                }
                Op::Bce { p, target } => {
                    let pv = self.value(*p).item();
                    let clamped = !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&pv);
                    if !clamped {
                        let dp = -(target / pv - (1.0 - target) / (1.0 - pv));
                        self.acc(&mut grads, *p, |d| d[0] += g[0] * dp);
                    }
                }
                Op::SoftmaxXent { logits, class, probs } => {
                    self.acc(&mut grads, *logits, |d| {
                        for (j, (x, pj)) in d.iter_mut().zip(probs).enumerate() {
                            let onehot = if j == *class { 1.0 } else { 0.0 };
                            *x += g[0] * (pj - onehot);
                        }
                    });
                }
            }
        }
        Ok(out)
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if matches!(self.nodes[v.0].op, Op::Leaf) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.value(v).len()]);
        f(slot);
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
