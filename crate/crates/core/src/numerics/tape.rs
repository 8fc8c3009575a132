use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::{Tensor, GELU_C, GELU_CUBIC, LAYER_NORM_EPS};
use crate::math;
use crate::{Error, Result};

/// Value written into masked (future) attention positions. Finite so every
/// forward value stays finite; `exp` of it underflows to exactly zero.
pub const MASK_VALUE: f64 = -1e30;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// Per-group product; `b` is stored transposed when `trans_b` is set.
    BatchedMatMul {
        a: Var,
        b: Var,
        groups: usize,
        trans_b: bool,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRowBias(Var, Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    CausalMask {
        a: Var,
        block: usize,
    },
    SplitHeads {
        a: Var,
        seqs: usize,
        len: usize,
        heads: usize,
    },
    MergeHeads {
        a: Var,
        seqs: usize,
        len: usize,
        heads: usize,
    },
    Sum(Var),
    Mean(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Define-by-run record of a forward pass.
///
/// Nodes are appended in execution order, so inputs always precede their
/// consumers. [`Tape::backward`] borrows the tape immutably; the same tape can
/// be differentiated from several roots. Build a fresh tape per forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar root with respect to every node on the tape.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`, or `None` when `v` does not
    /// influence the root.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Like [`Gradients::get`], writing zeros for nodes outside the root's cone.
    pub fn copy_into(&self, v: Var, out: &mut [f64]) {
        match self.get(v) {
            Some(g) => out.copy_from_slice(g),
            None => out.iter_mut().for_each(|o| *o = 0.0),
        }
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.dims2("matmul")?;
        let (k2, n) = tb.dims2("matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(m, k, n, ta.data(), tb.data(), &mut out);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// Independent products over `groups` equal row blocks.
    ///
    /// `a` is `[groups·m × k]`; `b` is `[groups·k × n]`, or `[groups·n × k]`
    /// when `trans_b` is set (computing `a_g · b_gᵀ`).
    pub fn batched_matmul(&mut self, a: Var, b: Var, groups: usize, trans_b: bool) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (ra, k) = ta.dims2("batched_matmul")?;
        let (rb, cb) = tb.dims2("batched_matmul")?;
        if groups == 0 || ra % groups != 0 || rb % groups != 0 {
            return Err(shape_err("batched_matmul", ta, tb));
        }
        let m = ra / groups;
        let n = if trans_b {
            if cb != k {
                return Err(shape_err("batched_matmul", ta, tb));
            }
            rb / groups
        } else {
            if rb / groups != k {
                return Err(shape_err("batched_matmul", ta, tb));
            }
            cb
        };
        let mut out = vec![0.0; groups * m * n];
        for g in 0..groups {
            let a_g = &ta.data()[g * m * k..(g + 1) * m * k];
            let b_g = &tb.data()[g * k * n..(g + 1) * k * n];
            let c_g = &mut out[g * m * n..(g + 1) * m * n];
            if trans_b {
                gemm_nt(m, k, n, a_g, b_g, c_g);
            } else {
                gemm_nn(m, k, n, a_g, b_g, c_g);
            }
        }
        let value = Tensor::new(vec![groups * m, n], out)?;
        Ok(self.push(
            value,
            Op::BatchedMatMul {
                a,
                b,
                groups,
                trans_b,
            },
        ))
    }

    fn zip_same(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same(a, b, "add", |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| x * c).collect();
        let value = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Scale(a, c))
    }

    /// Adds the vector `bias[n]` to every row of `a[m×n]`.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let (m, n) = ta.dims2("add_row_bias")?;
        if tb.len() != n {
            return Err(shape_err("add_row_bias", ta, tb));
        }
        let mut data = ta.data().to_vec();
        for row in data.chunks_exact_mut(n) {
            for (x, &b) in row.iter_mut().zip(tb.data()) {
                *x += b;
            }
        }
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.push(value, Op::AddRowBias(a, bias)))
    }

    /// Selects rows of `table[V×d]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (rows, d) = t.dims2("gather")?;
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(Error::Index { index: id, bound: rows });
            }
            data.extend_from_slice(&t.data()[id * d..(id + 1) * d]);
        }
        let value = Tensor::new(vec![ids.len(), d], data)?;
        Ok(self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = ta.dims2("softmax_rows")?;
        let mut data = ta.data().to_vec();
        for row in data.chunks_exact_mut(n) {
            softmax_in_place(row);
        }
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.push(value, Op::SoftmaxRows(a)))
    }

    /// Row-wise layer normalization with learned `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = tx.dims2("layer_norm")?;
        let (tg, tb) = (self.value(gain), self.value(bias));
        if tg.len() != n {
            return Err(shape_err("layer_norm", tx, tg));
        }
        if tb.len() != n {
            return Err(shape_err("layer_norm", tx, tb));
        }
        let mut xhat = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        let inv_n = 1.0 / n as f64;
        for r in 0..m {
            let row = &tx.data()[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() * inv_n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() * inv_n;
            let rs = 1.0 / math::sqrt(var + LAYER_NORM_EPS);
            rstd[r] = rs;
            for c in 0..n {
                let h = (row[c] - mean) * rs;
                xhat[r * n + c] = h;
                out[r * n + c] = h * tg.data()[c] + tb.data()[c];
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| gelu(x)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Gelu(a))
    }

    /// Treats `a` as stacked `[block × block]` score matrices and overwrites
    /// entries above the diagonal with [`MASK_VALUE`].
    pub fn causal_mask(&mut self, a: Var, block: usize) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = ta.dims2("causal_mask")?;
        if n != block || block == 0 || m % block != 0 {
            return Err(Error::Shape {
                op: "causal_mask",
                lhs: ta.shape().to_vec(),
                rhs: vec![block, block],
            });
        }
        let mut data = ta.data().to_vec();
        for (r, row) in data.chunks_exact_mut(n).enumerate() {
            let i = r % block;
            for v in &mut row[i + 1..] {
                *v = MASK_VALUE;
            }
        }
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.push(value, Op::CausalMask { a, block }))
    }

    /// `[seqs·len × heads·dh]` → `[seqs·heads·len × dh]`.
    pub fn split_heads(&mut self, a: Var, seqs: usize, len: usize, heads: usize) -> Result<Var> {
        let ta = self.value(a);
        let (m, d) = ta.dims2("split_heads")?;
        if m != seqs * len || heads == 0 || d % heads != 0 {
            return Err(Error::Shape {
                op: "split_heads",
                lhs: ta.shape().to_vec(),
                rhs: vec![seqs * len, heads],
            });
        }
        let dh = d / heads;
        let mut out = vec![0.0; m * d];
        for s in 0..seqs {
            for t in 0..len {
                let src = &ta.data()[(s * len + t) * d..(s * len + t + 1) * d];
                for h in 0..heads {
                    let dst = ((s * heads + h) * len + t) * dh;
                    out[dst..dst + dh].copy_from_slice(&src[h * dh..(h + 1) * dh]);
                }
            }
        }
        let value = Tensor::new(vec![seqs * heads * len, dh], out)?;
        Ok(self.push(value, Op::SplitHeads { a, seqs, len, heads }))
    }

    /// Inverse of [`Tape::split_heads`].
    pub fn merge_heads(&mut self, a: Var, seqs: usize, len: usize, heads: usize) -> Result<Var> {
        let ta = self.value(a);
        let (m, dh) = ta.dims2("merge_heads")?;
        if m != seqs * heads * len {
            return Err(Error::Shape {
                op: "merge_heads",
                lhs: ta.shape().to_vec(),
                rhs: vec![seqs * heads * len, dh],
            });
        }
        let d = heads * dh;
        let mut out = vec![0.0; m * dh];
        for s in 0..seqs {
            for h in 0..heads {
                for t in 0..len {
                    let src = ((s * heads + h) * len + t) * dh;
                    let dst = (s * len + t) * d + h * dh;
                    out[dst..dst + dh].copy_from_slice(&ta.data()[src..src + dh]);
                }
            }
        }
        let value = Tensor::new(vec![seqs * len, d], out)?;
        Ok(self.push(value, Op::MergeHeads { a, seqs, len, heads }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.is_empty() {
            return Err(Error::contract("mean of an empty tensor"));
        }
        let s = ta.data().iter().sum::<f64>() / ta.len() as f64;
        Ok(self.push(Tensor::scalar(s), Op::Mean(a)))
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        let (n, v) = tl.dims2("softmax_cross_entropy")?;
        if targets.len() != n {
            return Err(Error::Shape {
                op: "softmax_cross_entropy",
                lhs: tl.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        if n == 0 {
            return Err(Error::contract("cross-entropy over zero positions"));
        }
        let mut probs = tl.data().to_vec();
        let mut total = 0.0;
        for (row, &t) in probs.chunks_exact_mut(v).zip(targets) {
            if t >= v {
                return Err(Error::Index { index: t, bound: v });
            }
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in row.iter_mut() {
                *x = math::exp(*x - max);
                z += *x;
            }
            // -log p_t = log z - (l_t - max)
            total += math::ln(z) - math::ln(row[t]);
            let inv = 1.0 / z;
            row.iter_mut().for_each(|x| *x *= inv);
        }
        let loss = total / n as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = &self.nodes[root.0].value;
        if !rv.is_scalar() {
            return Err(Error::contract(format!(
                "backward root must be scalar, got shape {:?}",
                rv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).dims2("").unwrap();
                let n = val(*b).shape()[1];
                let ga = accumulate(&mut grads[a.0], m * k);
                gemm_nt(m, n, k, g, val(*b).data(), ga);
                let gb = accumulate(&mut grads[b.0], k * n);
                gemm_tn(k, m, n, val(*a).data(), g, gb);
            }
            Op::BatchedMatMul {
                a,
                b,
                groups,
                trans_b,
            } => {
                let groups = *groups;
                let (ra, k) = val(*a).dims2("").unwrap();
                let m = ra / groups;
                let n = node.value.shape()[1];
                let (ta, tb) = (val(*a).data(), val(*b).data());
                let mut ga = vec![0.0; ta.len()];
                let mut gb = vec![0.0; tb.len()];
                for gi in 0..groups {
                    let g_g = &g[gi * m * n..(gi + 1) * m * n];
                    let a_g = &ta[gi * m * k..(gi + 1) * m * k];
                    let b_g = &tb[gi * k * n..(gi + 1) * k * n];
                    let ga_g = &mut ga[gi * m * k..(gi + 1) * m * k];
                    let gb_g = &mut gb[gi * k * n..(gi + 1) * k * n];
                    if *trans_b {
                        // out = a·bᵀ, b is [n×k]
                        gemm_nn(m, n, k, g_g, b_g, ga_g);
                        gemm_tn(n, m, k, g_g, a_g, gb_g);
                    } else {
                        gemm_nt(m, n, k, g_g, b_g, ga_g);
                        gemm_tn(k, m, n, a_g, g_g, gb_g);
                    }
                }
                for (v, d) in [(a, ga), (b, gb)] {
                    let slot = accumulate(&mut grads[v.0], d.len());
                    slot.iter_mut().zip(&d).for_each(|(x, y)| *x += y);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    let gv = accumulate(&mut grads[v.0], g.len());
                    gv.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a).data(), val(*b).data());
                let ga = accumulate(&mut grads[a.0], g.len());
                for ((x, gi), bi) in ga.iter_mut().zip(g).zip(tb) {
                    *x += gi * bi;
                }
                let gb = accumulate(&mut grads[b.0], g.len());
                for ((x, gi), ai) in gb.iter_mut().zip(g).zip(ta) {
                    *x += gi * ai;
                }
            }
            Op::Scale(a, c) => {
                let ga = accumulate(&mut grads[a.0], g.len());
                ga.iter_mut().zip(g).for_each(|(x, y)| *x += c * y);
            }
            Op::AddRowBias(a, bias) => {
                let n = val(*bias).len();
                let ga = accumulate(&mut grads[a.0], g.len());
                ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                let gb = accumulate(&mut grads[bias.0], n);
                for row in g.chunks_exact(n) {
                    gb.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                }
            }
            Op::Gather { table, ids } => {
                let t = val(*table);
                let d = t.shape()[1];
                let gt = accumulate(&mut grads[table.0], t.len());
                for (r, &id) in ids.iter().enumerate() {
                    let dst = &mut gt[id * d..(id + 1) * d];
                    dst.iter_mut().zip(&g[r * d..(r + 1) * d]).for_each(|(x, y)| *x += y);
                }
            }
            Op::SoftmaxRows(a) => {
                let y = node.value.data();
                let n = node.value.shape()[1];
                let ga = accumulate(&mut grads[a.0], g.len());
                for ((ga_r, y_r), g_r) in ga.chunks_exact_mut(n).zip(y.chunks_exact(n)).zip(g.chunks_exact(n)) {
                    let dot: f64 = y_r.iter().zip(g_r).map(|(p, q)| p * q).sum();
                    for ((x, &yi), &gi) in ga_r.iter_mut().zip(y_r).zip(g_r) {
                        *x += yi * (gi - dot);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let n = val(*gain).len();
                let gain_v = val(*gain).data();
                {
                    let gg = accumulate(&mut grads[gain.0], n);
                    for (g_r, h_r) in g.chunks_exact(n).zip(xhat.chunks_exact(n)) {
                        for c in 0..n {
                            gg[c] += g_r[c] * h_r[c];
                        }
                    }
                }
                {
                    let gb = accumulate(&mut grads[bias.0], n);
                    for g_r in g.chunks_exact(n) {
                        gb.iter_mut().zip(g_r).for_each(|(a, b)| *a += b);
                    }
                }
                let gx = accumulate(&mut grads[x.0], g.len());
                let inv_n = 1.0 / n as f64;
                let mut dh = vec![0.0; n];
                for (r, (g_r, h_r)) in g.chunks_exact(n).zip(xhat.chunks_exact(n)).enumerate() {
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for c in 0..n {
                        dh[c] = g_r[c] * gain_v[c];
                        mean_dh += dh[c];
                        mean_dh_h += dh[c] * h_r[c];
                    }
                    mean_dh *= inv_n;
                    mean_dh_h *= inv_n;
                    let gx_r = &mut gx[r * n..(r + 1) * n];
                    for c in 0..n {
                        gx_r[c] += rstd[r] * (dh[c] - mean_dh - h_r[c] * mean_dh_h);
                    }
                }
            }
            Op::Gelu(a) => {
                let ta = val(*a).data();
                let ga = accumulate(&mut grads[a.0], g.len());
                for ((x, &xi), &gi) in ga.iter_mut().zip(ta).zip(g) {
                    *x += gi * gelu_grad(xi);
                }
            }
            Op::CausalMask { a, block } => {
                let n = *block;
                let ga = accumulate(&mut grads[a.0], g.len());
                for (r, (ga_r, g_r)) in ga.chunks_exact_mut(n).zip(g.chunks_exact(n)).enumerate() {
                    let i = r % n;
                    for c in 0..=i {
                        ga_r[c] += g_r[c];
                    }
                }
            }
            Op::SplitHeads { a, seqs, len, heads } => {
                let d = val(*a).shape()[1];
                let dh = d / heads;
                let ga = accumulate(&mut grads[a.0], g.len());
                for s in 0..*seqs {
                    for t in 0..*len {
                        for h in 0..*heads {
                            let src = ((s * heads + h) * len + t) * dh;
                            let dst = (s * len + t) * d + h * dh;
                            for e in 0..dh {
                                ga[dst + e] += g[src + e];
                            }
                        }
                    }
                }
            }
            Op::MergeHeads { a, seqs, len, heads } => {
                let dh = val(*a).shape()[1];
                let d = heads * dh;
                let ga = accumulate(&mut grads[a.0], g.len());
                for s in 0..*seqs {
                    for h in 0..*heads {
                        for t in 0..*len {
                            let dst = ((s * heads + h) * len + t) * dh;
                            let src = (s * len + t) * d + h * dh;
                            for e in 0..dh {
                                ga[dst + e] += g[src + e];
                            }
                        }
                    }
                }
            }
            Op::Sum(a) => {
                let n = val(*a).len();
                let ga = accumulate(&mut grads[a.0], n);
                ga.iter_mut().for_each(|x| *x += g[0]);
            }
            Op::Mean(a) => {
                let n = val(*a).len();
                let s = g[0] / n as f64;
                let ga = accumulate(&mut grads[a.0], n);
                ga.iter_mut().for_each(|x| *x += s);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let v = val(*logits).shape()[1];
                let s = g[0] / targets.len() as f64;
                let gl = accumulate(&mut grads[logits.0], probs.len());
                for (r, &t) in targets.iter().enumerate() {
                    let row = &mut gl[r * v..(r + 1) * v];
                    for (x, &p) in row.iter_mut().zip(&probs[r * v..(r + 1) * v]) {
                        *x += s * p;
                    }
                    row[t] -= s;
                }
            }
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in row.iter_mut() {
        *x = math::exp(*x - max);
        z += *x;
    }
    let inv = 1.0 / z;
    row.iter_mut().for_each(|x| *x *= inv);
}

fn gelu(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_CUBIC * x * x * x);
    0.5 * x * (1.0 + math::tanh(u))
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_CUBIC * x * x * x);
    let t = math::tanh(u);
    let du = GELU_C * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}
