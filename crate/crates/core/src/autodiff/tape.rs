use std::sync::Arc;

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{Scalar, Tensor};
use super::{AutodiffError, Result};

pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;
pub const SELU_SCALE: f64 = 1.050_700_987_355_480_5;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<F> {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, F),
    Sigmoid(Var),
    Tanh(Var),
    Selu(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Dropout { input: Var, scaled_mask: Vec<F> },
    SegmentSum { input: Var, ids: Arc<[usize]> },
    Gather { input: Var, index: Arc<[usize]> },
    SumAll(Var),
    Gru(Box<GruNode<F>>),
}

/// Inputs and forward intermediates of a fused GRU step.
#[derive(Debug)]
struct GruNode<F> {
    state: Var,
    input: Var,
    gate_weight: Var,
    gate_bias: Var,
    cand_weight: Var,
    cand_bias: Var,
    /// `[s, x]` rows.
    joined: Vec<F>,
    /// `[r ⊙ s, x]` rows.
    gated: Vec<F>,
    update: Vec<F>,
    reset: Vec<F>,
    candidate: Vec<F>,
}

/// Column sums of a row-major `rows x cols` block.
fn column_sums<F: Scalar>(data: &[F], cols: usize) -> Vec<F> {
    let mut out = vec![F::zero(); cols];
    for row in data.chunks_exact(cols) {
        for (o, &x) in out.iter_mut().zip(row) {
            *o = *o + x;
        }
    }
    out
}

#[derive(Debug)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
}

/// Forward tape. Nodes are appended in evaluation order, which is a valid
/// topological order, and `backward` visits them in exact reverse.
#[derive(Debug)]
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::Shape { op, detail }
}

/// `(outer, dim, inner)` split of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<F>, op: Op<F>) -> Result<Var> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: op_name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A constant leaf; receives no gradient.
    pub fn input(&mut self, value: Tensor<F>) -> Result<Var> {
        self.push("input", value, Op::Input)
    }

    /// Binds a trainable parameter onto the tape.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        let value = store.value(id).clone();
        self.nodes.push(Node {
            value,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(shape_err(op, format!("expected a matrix, got {:?}", s))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", format!("[{m}, {k}] x [{k2}, {n}]")));
        }
        let mut out = vec![F::zero(); m * n];
        F::gemm(
            m,
            k,
            n,
            self.value(a).data(),
            (k as isize, 1),
            self.value(b).data(),
            (n as isize, 1),
            F::zero(),
            &mut out,
        );
        self.push("matmul", Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(F, F) -> F, op: Op<F>) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::from_parts(ta.shape().to_vec(), data);
        self.push(name, value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a bias vector to every row of a matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (_, n) = self.matrix_dims(a, "add_row")?;
        let tb = self.value(bias);
        if tb.numel() != n {
            return Err(shape_err("add_row", format!("bias {:?} for {} columns", tb.shape(), n)));
        }
        let b = tb.data().to_vec();
        let ta = self.value(a);
        let data = ta
            .data()
            .chunks_exact(n.max(1))
            .flat_map(|row| row.iter().zip(&b).map(|(&x, &y)| x + y))
            .collect();
        let value = Tensor::from_parts(ta.shape().to_vec(), data);
        self.push("add_row", value, Op::AddRow(a, bias))
    }

    pub fn scale(&mut self, a: Var, c: F) -> Result<Var> {
        let ta = self.value(a);
        let value = Tensor::from_parts(ta.shape().to_vec(), ta.data().iter().map(|&x| x * c).collect());
        self.push("scale", value, Op::Scale(a, c))
    }

    fn unary(&mut self, a: Var, name: &'static str, f: impl Fn(F) -> F, op: Op<F>) -> Result<Var> {
        let ta = self.value(a);
        let value = Tensor::from_parts(ta.shape().to_vec(), ta.data().iter().map(|&x| f(x)).collect());
        self.push(name, value, op)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "sigmoid", sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "tanh", tanh, Op::Tanh(a))
    }

    pub fn selu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "selu", selu, Op::Selu(a))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| shape_err("concat", "no inputs".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(shape_err("concat", format!("axis {axis} for rank {}", base.len())));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len() || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b) {
                return Err(shape_err("concat", format!("{:?} vs {:?} on axis {axis}", s, base)));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let block = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let value = Tensor::from_parts(shape, data);
        self.push(
            "concat",
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        )
    }

    /// The half-open range `start..end` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start > end || end > shape[axis] {
            return Err(shape_err(
                "slice",
                format!("{start}..{end} on axis {axis} of {:?}", shape),
            ));
        }
        let (outer, dim, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = o * dim * inner;
            data.extend_from_slice(&src[base + start * inner..base + end * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = end - start;
        let value = Tensor::from_parts(out_shape, data);
        self.push("slice", value, Op::Slice { input: a, axis, start })
    }

    /// Inverted dropout with an externally sampled 0/1 mask: kept units are
    /// scaled by `1 / (1 - rate)`.
    pub fn dropout(&mut self, a: Var, mask: &[F], rate: F) -> Result<Var> {
        let ta = self.value(a);
        if mask.len() != ta.numel() {
            return Err(shape_err(
                "dropout",
                format!("mask of {} for {} values", mask.len(), ta.numel()),
            ));
        }
        let keep = F::one() / (F::one() - rate);
        let scaled_mask: Vec<F> = mask.iter().map(|&m| m * keep).collect();
        let data = ta.data().iter().zip(&scaled_mask).map(|(&x, &m)| x * m).collect();
        let value = Tensor::from_parts(ta.shape().to_vec(), data);
        self.push("dropout", value, Op::Dropout { input: a, scaled_mask })
    }

    /// Sums rows into `segments` buckets: `out[ids[i]] += a[i]`, accumulating in
    /// ascending `i`. Empty buckets are zero.
    pub fn segment_sum(&mut self, a: Var, ids: Arc<[usize]>, segments: usize) -> Result<Var> {
        let ta = self.value(a);
        if ids.len() != ta.rows() || ta.shape().is_empty() {
            return Err(shape_err(
                "segment_sum",
                format!("{} ids for {:?}", ids.len(), ta.shape()),
            ));
        }
        let w = ta.row_len();
        let mut data = vec![F::zero(); segments * w];
        for (i, &s) in ids.iter().enumerate() {
            if s >= segments {
                return Err(AutodiffError::Index {
                    op: "segment_sum",
                    index: s,
                    len: segments,
                });
            }
            for (o, &x) in data[s * w..(s + 1) * w].iter_mut().zip(ta.row(i)) {
                *o = *o + x;
            }
        }
        let mut shape = ta.shape().to_vec();
        shape[0] = segments;
        let value = Tensor::from_parts(shape, data);
        self.push("segment_sum", value, Op::SegmentSum { input: a, ids })
    }

    /// Selects rows: `out[i] = a[index[i]]`.
    pub fn gather(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var> {
        let ta = self.value(a);
        if ta.shape().is_empty() {
            return Err(shape_err("gather", "scalar input".into()));
        }
        let w = ta.row_len();
        let mut data = Vec::with_capacity(index.len() * w);
        for &i in index.iter() {
            if i >= ta.rows() {
                return Err(AutodiffError::Index {
                    op: "gather",
                    index: i,
                    len: ta.rows(),
                });
            }
            data.extend_from_slice(ta.row(i));
        }
        let mut shape = ta.shape().to_vec();
        shape[0] = index.len();
        let value = Tensor::from_parts(shape, data);
        self.push("gather", value, Op::Gather { input: a, index })
    }

    /// One GRU step as a single tape node. With `[s, x]` the row-wise
    /// concatenation of state and input:
    /// `z, r = σ([s, x]·W_g + b_g)` (update gate in the first half),
    /// `c = tanh([r ⊙ s, x]·W_c + b_c)`, output `s + z ⊙ (c − s)`.
    pub fn gru(
        &mut self,
        state: Var,
        input: Var,
        gate_weight: Var,
        gate_bias: Var,
        cand_weight: Var,
        cand_bias: Var,
    ) -> Result<Var> {
        let (n, sd) = self.matrix_dims(state, "gru")?;
        let (n2, id) = self.matrix_dims(input, "gru")?;
        let k = sd + id;
        let ok = n == n2
            && self.shape(gate_weight) == [k, 2 * sd]
            && self.value(gate_bias).numel() == 2 * sd
            && self.shape(cand_weight) == [k, sd]
            && self.value(cand_bias).numel() == sd;
        if !ok {
            return Err(shape_err(
                "gru",
                format!(
                    "state {:?} input {:?} gate {:?} candidate {:?}",
                    self.shape(state),
                    self.shape(input),
                    self.shape(gate_weight),
                    self.shape(cand_weight)
                ),
            ));
        }
        let h = self.value(state).data();
        let x = self.value(input).data();
        let mut joined = Vec::with_capacity(n * k);
        for i in 0..n {
            joined.extend_from_slice(&h[i * sd..(i + 1) * sd]);
            joined.extend_from_slice(&x[i * id..(i + 1) * id]);
        }
        let bg = self.value(gate_bias).data();
        let mut pre: Vec<F> = bg.iter().copied().cycle().take(n * 2 * sd).collect();
        F::gemm(
            n,
            k,
            2 * sd,
            &joined,
            (k as isize, 1),
            self.value(gate_weight).data(),
            (2 * sd as isize, 1),
            F::one(),
            &mut pre,
        );
        let mut update = Vec::with_capacity(n * sd);
        let mut reset = Vec::with_capacity(n * sd);
        for row in pre.chunks_exact(2 * sd) {
            update.extend(row[..sd].iter().map(|&v| sigmoid(v)));
            reset.extend(row[sd..].iter().map(|&v| sigmoid(v)));
        }
        let mut gated = joined.clone();
        for i in 0..n {
            for j in 0..sd {
                gated[i * k + j] = gated[i * k + j] * reset[i * sd + j];
            }
        }
        let bc = self.value(cand_bias).data();
        let mut candidate: Vec<F> = bc.iter().copied().cycle().take(n * sd).collect();
        F::gemm(
            n,
            k,
            sd,
            &gated,
            (k as isize, 1),
            self.value(cand_weight).data(),
            (sd as isize, 1),
            F::one(),
            &mut candidate,
        );
        candidate.iter_mut().for_each(|v| *v = tanh(*v));
        let out: Vec<F> = h
            .iter()
            .zip(&update)
            .zip(&candidate)
            .map(|((&s, &z), &c)| s + z * (c - s))
            .collect();
        let node = GruNode {
            state,
            input,
            gate_weight,
            gate_bias,
            cand_weight,
            cand_bias,
            joined,
            gated,
            update,
            reset,
            candidate,
        };
        self.push("gru", Tensor::from_parts(vec![n, sd], out), Op::Gru(Box::new(node)))
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().fold(F::zero(), |acc, &x| acc + x);
        self.push("sum", Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel().max(1);
        let s = self.sum_all(a)?;
        self.scale(s, F::one() / F::of(n as f64))
    }

    /// Reverse-mode sweep from a scalar output. Parameters the output does not
    /// depend on receive zero gradients.
    pub fn backward(&self, output: Var, store: &ParamStore<F>) -> Result<Gradients<F>> {
        let out_shape = self.shape(output);
        if self.value(output).numel() != 1 {
            return Err(AutodiffError::NonScalar(out_shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..=output.0).map(|_| None).collect();
        grads[output.0] = Some(vec![F::one()]);
        let mut param_grads = Gradients::zeros_like(store);

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let out = node.value.data();
            match &node.op {
                Op::Input => {}
                Op::Param(id) => param_grads.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    let (m, k) = self.matrix_dims(*a, "matmul")?;
                    let n = self.shape(*b)[1];
                    // dA = dC * B^T
                    let mut da = vec![F::zero(); m * k];
                    F::gemm(
                        m,
                        n,
                        k,
                        &g,
                        (n as isize, 1),
                        self.value(*b).data(),
                        (1, n as isize),
                        F::zero(),
                        &mut da,
                    );
                    // dB = A^T * dC
                    let mut db = vec![F::zero(); k * n];
                    F::gemm(
                        k,
                        m,
                        n,
                        self.value(*a).data(),
                        (1, k as isize),
                        &g,
                        (n as isize, 1),
                        F::zero(),
                        &mut db,
                    );
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    let neg = g.iter().map(|&x| -x).collect();
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *b, neg);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    let da = g.iter().zip(vb).map(|(&d, &y)| d * y).collect();
                    let db = g.iter().zip(va).map(|(&d, &x)| d * x).collect();
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::AddRow(a, bias) => {
                    let n = self.value(*bias).numel();
                    let mut db = vec![F::zero(); n];
                    for row in g.chunks_exact(n.max(1)) {
                        for (o, &x) in db.iter_mut().zip(row) {
                            *o = *o + x;
                        }
                    }
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *bias, db);
                }
                Op::Scale(a, c) => {
                    let da = g.iter().map(|&x| x * *c).collect();
                    accumulate(&mut grads, *a, da);
                }
                Op::Sigmoid(a) => {
                    let da = g.iter().zip(out).map(|(&d, &y)| d * y * (F::one() - y)).collect();
                    accumulate(&mut grads, *a, da);
                }
                Op::Tanh(a) => {
                    let da = g.iter().zip(out).map(|(&d, &y)| d * (F::one() - y * y)).collect();
                    accumulate(&mut grads, *a, da);
                }
                Op::Selu(a) => {
                    let (scale, alpha) = (F::of(SELU_SCALE), F::of(SELU_ALPHA));
                    let input = self.value(*a).data();
                    let da = g
                        .iter()
                        .zip(out)
                        .zip(input)
                        .map(|((&d, &y), &x)| {
                            if x > F::zero() {
                                d * scale
                            } else {
                                d * (y + scale * alpha)
                            }
                        })
                        .collect();
                    accumulate(&mut grads, *a, da);
                }
                Op::Concat { parts, axis } => {
                    let (outer, _, inner) = split_axis(node.value.shape(), *axis);
                    let total = node.value.shape()[*axis];
                    let mut offset = 0;
                    for &p in parts {
                        let dim = self.shape(p)[*axis];
                        let mut dp = Vec::with_capacity(outer * dim * inner);
                        for o in 0..outer {
                            let base = o * total * inner + offset * inner;
                            dp.extend_from_slice(&g[base..base + dim * inner]);
                        }
                        accumulate(&mut grads, p, dp);
                        offset += dim;
                    }
                }
                Op::Slice { input, axis, start } => {
                    let in_shape = self.shape(*input);
                    let (outer, dim, inner) = split_axis(in_shape, *axis);
                    let width = node.value.shape()[*axis];
                    let mut da = vec![F::zero(); outer * dim * inner];
                    for o in 0..outer {
                        let dst = o * dim * inner + start * inner;
                        let src = o * width * inner;
                        da[dst..dst + width * inner].copy_from_slice(&g[src..src + width * inner]);
                    }
                    accumulate(&mut grads, *input, da);
                }
                Op::Dropout { input, scaled_mask } => {
                    let da = g.iter().zip(scaled_mask).map(|(&d, &m)| d * m).collect();
                    accumulate(&mut grads, *input, da);
                }
                Op::SegmentSum { input, ids } => {
                    let w = node.value.row_len();
                    let mut da = Vec::with_capacity(ids.len() * w);
                    for &s in ids.iter() {
                        da.extend_from_slice(&g[s * w..(s + 1) * w]);
                    }
                    accumulate(&mut grads, *input, da);
                }
                Op::Gather { input, index } => {
                    let t = self.value(*input);
                    let w = t.row_len();
                    let mut da = vec![F::zero(); t.numel()];
                    for (i, &src) in index.iter().enumerate() {
                        for (o, &x) in da[src * w..(src + 1) * w].iter_mut().zip(&g[i * w..(i + 1) * w]) {
                            *o = *o + x;
                        }
                    }
                    accumulate(&mut grads, *input, da);
                }
                Op::Gru(node) => self.gru_backward(node, &g, &mut grads),
                Op::SumAll(a) => {
                    let n = self.value(*a).numel();
                    accumulate(&mut grads, *a, vec![g[0]; n]);
                }
            }
        }
        Ok(param_grads)
    }
}

impl<F: Scalar> Graph<F> {
    fn gru_backward(&self, node: &GruNode<F>, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let h = self.value(node.state).data();
        let sd = self.shape(node.state)[1];
        let id = self.shape(node.input)[1];
        let n = h.len() / sd.max(1);
        let k = sd + id;
        let (z, r, c) = (&node.update, &node.reset, &node.candidate);
        let mut dh = vec![F::zero(); n * sd];
        let mut d_pre_c = vec![F::zero(); n * sd];
        let mut d_pre_g = vec![F::zero(); n * 2 * sd];
        for i in 0..n * sd {
            dh[i] = g[i] * (F::one() - z[i]);
            d_pre_c[i] = g[i] * z[i] * (F::one() - c[i] * c[i]);
            let dz = g[i] * (c[i] - h[i]);
            let (row, col) = (i / sd, i % sd);
            d_pre_g[row * 2 * sd + col] = dz * z[i] * (F::one() - z[i]);
        }
        let mut d_cand_w = vec![F::zero(); k * sd];
        F::gemm(
            k,
            n,
            sd,
            &node.gated,
            (1, k as isize),
            &d_pre_c,
            (sd as isize, 1),
            F::zero(),
            &mut d_cand_w,
        );
        let d_cand_b = column_sums(&d_pre_c, sd);
        let mut d_gated = vec![F::zero(); n * k];
        let wc = self.value(node.cand_weight).data();
        F::gemm(
            n,
            sd,
            k,
            &d_pre_c,
            (sd as isize, 1),
            wc,
            (1, sd as isize),
            F::zero(),
            &mut d_gated,
        );
        let mut dx = vec![F::zero(); n * id];
        for row in 0..n {
            for j in 0..sd {
                let i = row * sd + j;
                let d_rs = d_gated[row * k + j];
                dh[i] = dh[i] + d_rs * r[i];
                let dr = d_rs * h[i];
                d_pre_g[row * 2 * sd + sd + j] = dr * r[i] * (F::one() - r[i]);
            }
            dx[row * id..(row + 1) * id].copy_from_slice(&d_gated[row * k + sd..(row + 1) * k]);
        }
        let mut d_gate_w = vec![F::zero(); k * 2 * sd];
        F::gemm(
            k,
            n,
            2 * sd,
            &node.joined,
            (1, k as isize),
            &d_pre_g,
            (2 * sd as isize, 1),
            F::zero(),
            &mut d_gate_w,
        );
        let d_gate_b = column_sums(&d_pre_g, 2 * sd);
        let mut d_joined = vec![F::zero(); n * k];
        let wg = self.value(node.gate_weight).data();
        F::gemm(
            n,
            2 * sd,
            k,
            &d_pre_g,
            (2 * sd as isize, 1),
            wg,
            (1, 2 * sd as isize),
            F::zero(),
            &mut d_joined,
        );
        for row in 0..n {
            for j in 0..sd {
                dh[row * sd + j] = dh[row * sd + j] + d_joined[row * k + j];
            }
            for j in 0..id {
                dx[row * id + j] = dx[row * id + j] + d_joined[row * k + sd + j];
            }
        }
        accumulate(grads, node.state, dh);
        accumulate(grads, node.input, dx);
        accumulate(grads, node.gate_weight, d_gate_w);
        accumulate(grads, node.gate_bias, d_gate_b);
        accumulate(grads, node.cand_weight, d_cand_w);
        accumulate(grads, node.cand_bias, d_cand_b);
    }
}

fn accumulate<F: Scalar>(grads: &mut [Option<Vec<F>>], v: Var, g: Vec<F>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.iter_mut().zip(g) {
                *e = *e + x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn sigmoid<F: Scalar>(x: F) -> F {
    x.logistic()
}

pub(crate) fn tanh<F: Scalar>(x: F) -> F {
    x.tanh_act()
}

pub(crate) fn selu<F: Scalar>(x: F) -> F {
    let scale = F::of(SELU_SCALE);
    if x > F::zero() {
        scale * x
    } else {
        scale * F::of(SELU_ALPHA) * x.exp_m1()
    }
}
