//! Tape-based reverse-mode differentiation over 2-D tensors.
//!
//! A [`Graph`] records every operation eagerly. [`Graph::backward`] walks the
//! tape in reverse and returns gradients for the parameters that were used.

use std::collections::HashMap;
use std::rc::Rc;

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, MatMut, MatRef, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)

/// Cross-entropy target: class index restricted to logits `start..start+len`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CeTarget {
    pub row: usize,
    pub target: usize,
    pub start: usize,
    pub len: usize,
}

enum Op {
    Input,
    Param(ParamId),
    MatMul { a: NodeId, b: NodeId, tb: bool },
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Gelu(NodeId),
    Relu(NodeId),
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, xhat: Vec<f64>, inv_std: Vec<f64> },
    Attention { q: NodeId, k: NodeId, v: NodeId, heads: usize, probs: Vec<f64> },
    Gather { table: NodeId, ids: Vec<usize> },
    ConcatRows(Vec<NodeId>),
    SelectRows { x: NodeId, idx: Vec<usize> },
    CrossEntropy { logits: NodeId, targets: Vec<CeTarget>, scale: f64, probs: Vec<Vec<f64>> },
    L1 { pred: NodeId, target: Tensor, scale: f64 },
    Mse { pred: NodeId, target: Tensor, scale: f64 },
    StraightThrough(NodeId),
    Sum(Vec<NodeId>),
    Dropout { x: NodeId, mask: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Boolean attention mask: `allowed[i * len + j]` lets query i see key j.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    pub len: usize,
    pub allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn causal(len: usize) -> Self {
        let mut allowed = vec![false; len * len];
        for i in 0..len {
            for j in 0..=i {
                allowed[i * len + j] = true;
            }
        }
        AttentionMask { len, allowed }
    }

    pub fn full(len: usize) -> Self {
        AttentionMask { len, allowed: vec![true; len * len] }
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.len + j]
    }

    /// Leading `len` × `len` block.
    pub fn prefix(&self, len: usize) -> Self {
        let mut allowed = Vec::with_capacity(len * len);
        for i in 0..len {
            allowed.extend_from_slice(&self.allowed[i * self.len..i * self.len + len]);
        }
        AttentionMask { len, allowed }
    }
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
    masks: Vec<Rc<AttentionMask>>,
    attn_mask_of: HashMap<usize, usize>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph { params, nodes: Vec::new(), param_nodes: HashMap::new(), masks: Vec::new(), attn_mask_of: HashMap::new() }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[NodeId]) -> NodeId {
        let needs_grad = match op {
            Op::Input => false,
            Op::Param(_) => true,
            _ => inputs.iter().any(|i| self.nodes[i.0].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Input, &[])
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes.get(&id) {
            return *n;
        }
        let n = self.push(self.params.get(id).clone(), Op::Param(id), &[]);
        self.param_nodes.insert(id, n);
        n
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = {
            let (va, vb) = (self.value(a), self.value(b));
            let mut out = Tensor::zeros(va.rows, vb.cols);
            gemm(MatRef::of(va), MatRef::of(vb), MatMut::of(&mut out), 0.0);
            out
        };
        self.push(out, Op::MatMul { a, b, tb: false }, &[a, b])
    }

    /// a · bᵀ
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = {
            let (va, vb) = (self.value(a), self.value(b));
            let mut out = Tensor::zeros(va.rows, vb.rows);
            gemm(MatRef::of(va), MatRef::of(vb).t(), MatMut::of(&mut out), 0.0);
            out
        };
        self.push(out, Op::MatMul { a, b, tb: true }, &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b), &[a, b])
    }

    /// Adds a 1×n row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        let r = &self.nodes[row.0].value;
        assert_eq!(r.rows, 1);
        assert_eq!(r.cols, out.cols);
        for i in 0..out.rows {
            for (x, b) in out.row_mut(i).iter_mut().zip(&r.data) {
                *x += b;
            }
        }
        self.push(out, Op::AddRow(a, row), &[a, row])
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let mut out = self.value(a).clone();
        out.scale(s);
        self.push(out, Op::Scale(a, s), &[a])
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        for x in out.data.iter_mut() {
            let v = *x;
            *x = 0.5 * v * (1.0 + (GELU_C * (v + 0.044715 * v * v * v)).tanh());
        }
        self.push(out, Op::Gelu(a), &[a])
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        for x in out.data.iter_mut() {
            *x = x.max(0.0);
        }
        self.push(out, Op::Relu(a), &[a])
    }

    /// Linear layer `x·w + b`.
    pub fn linear(&mut self, x: NodeId, w: ParamId, b: ParamId) -> NodeId {
        let wn = self.param(w);
        let bn = self.param(b);
        let h = self.matmul(x, wn);
        self.add_row(h, bn)
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: ParamId, bias: ParamId) -> NodeId {
        let g = self.param(gain);
        let b = self.param(bias);
        let vx = self.value(x);
        let (rows, cols) = vx.shape();
        let mut xhat = vec![0.0; rows * cols];
        let mut inv_std = vec![0.0; rows];
        let mut out = Tensor::zeros(rows, cols);
        let (vg, vb) = (&self.nodes[g.0].value.data, &self.nodes[b.0].value.data);
        for r in 0..rows {
            let row = vx.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..cols {
                let h = (row[c] - mean) * is;
                xhat[r * cols + c] = h;
                out.data[r * cols + c] = h * vg[c] + vb[c];
            }
        }
        self.push(out, Op::LayerNorm { x, gain: g, bias: b, xhat, inv_std }, &[x, g, b])
    }

    /// Multi-head scaled dot-product attention on row-major [len × d] inputs.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, heads: usize, mask: &Rc<AttentionMask>) -> NodeId {
        let (len, d) = self.value(q).shape();
        assert_eq!(mask.len, len, "mask length");
        assert_eq!(d % heads, 0);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = vec![0.0; heads * len * len];
        let mut out = Tensor::zeros(len, d);
        {
            let (vq, vk, vv) = (self.value(q), self.value(k), self.value(v));
            for h in 0..heads {
                let p = &mut probs[h * len * len..(h + 1) * len * len];
                gemm(
                    MatRef::column_block(&vq.data, len, d, h * dh, dh),
                    MatRef::column_block(&vk.data, len, d, h * dh, dh).t(),
                    MatMut { data: p, offset: 0, rows: len, cols: len, row_stride: len, col_stride: 1 },
                    0.0,
                );
                for i in 0..len {
                    let row = &mut p[i * len..(i + 1) * len];
                    let allowed = &mask.allowed[i * len..(i + 1) * len];
                    let mut mx = f64::NEG_INFINITY;
                    for j in 0..len {
                        if allowed[j] {
                            mx = mx.max(row[j] * scale);
                        }
                    }
                    let mut sum = 0.0;
                    for j in 0..len {
                        row[j] = if allowed[j] { (row[j] * scale - mx).exp() } else { 0.0 };
                        sum += row[j];
                    }
                    if sum > 0.0 {
                        for x in row.iter_mut() {
                            *x /= sum;
                        }
                    }
                }
                gemm(
                    MatRef { data: p, offset: 0, rows: len, cols: len, row_stride: len, col_stride: 1 },
                    MatRef::column_block(&vv.data, len, d, h * dh, dh),
                    MatMut::column_block(&mut out.data, len, d, h * dh, dh),
                    0.0,
                );
            }
        }
        let id = self.push(out, Op::Attention { q, k, v, heads, probs }, &[q, k, v]);
        let mask_idx = match self.masks.iter().position(|m| Rc::ptr_eq(m, mask)) {
            Some(i) => i,
            None => {
                self.masks.push(Rc::clone(mask));
                self.masks.len() - 1
            }
        };
        self.attn_mask_of.insert(id.0, mask_idx);
        id
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> NodeId {
        let t = self.value(table);
        let mut out = Tensor::zeros(ids.len(), t.cols);
        for (r, &i) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(i));
        }
        self.push(out, Op::Gather { table, ids: ids.to_vec() }, &[table])
    }

    pub fn embed(&mut self, table: ParamId, ids: &[usize]) -> NodeId {
        let t = self.param(table);
        self.gather(t, ids)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        let cols = self.value(parts[0]).cols;
        let rows: usize = parts.iter().map(|p| self.value(*p).rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            let v = self.value(*p);
            assert_eq!(v.cols, cols, "concat column mismatch");
            data.extend_from_slice(&v.data);
        }
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn select_rows(&mut self, x: NodeId, idx: &[usize]) -> NodeId {
        let v = self.value(x);
        let mut out = Tensor::zeros(idx.len(), v.cols);
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(v.row(i));
        }
        self.push(out, Op::SelectRows { x, idx: idx.to_vec() }, &[x])
    }

    /// `scale · Σ −log softmax(row[start..start+len])[target]`, a 1×1 node.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[CeTarget], scale: f64) -> NodeId {
        let lv = self.value(logits);
        let mut loss = 0.0;
        let mut probs = Vec::with_capacity(targets.len());
        for t in targets {
            let row = &lv.row(t.row)[t.start..t.start + t.len];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut p: Vec<f64> = row.iter().map(|x| (x - mx).exp()).collect();
            let sum: f64 = p.iter().sum();
            for x in p.iter_mut() {
                *x /= sum;
            }
            loss -= (row[t.target] - mx) - sum.ln();
            probs.push(p);
        }
        self.push(
            Tensor::filled(1, 1, loss * scale),
            Op::CrossEntropy { logits, targets: targets.to_vec(), scale, probs },
            &[logits],
        )
    }

    /// `scale · Σ |pred − target|`
    pub fn l1(&mut self, pred: NodeId, target: Tensor, scale: f64) -> NodeId {
        let pv = self.value(pred);
        assert_eq!(pv.shape(), target.shape(), "l1 shape");
        let s: f64 = pv.data.iter().zip(&target.data).map(|(a, b)| (a - b).abs()).sum();
        self.push(Tensor::filled(1, 1, s * scale), Op::L1 { pred, target, scale }, &[pred])
    }

    /// `scale · Σ (pred − target)²`
    pub fn mse(&mut self, pred: NodeId, target: Tensor, scale: f64) -> NodeId {
        let pv = self.value(pred);
        assert_eq!(pv.shape(), target.shape(), "mse shape");
        let s: f64 = pv.data.iter().zip(&target.data).map(|(a, b)| (a - b) * (a - b)).sum();
        self.push(Tensor::filled(1, 1, s * scale), Op::Mse { pred, target, scale }, &[pred])
    }

    /// Forward value `replacement`, identity gradient to `x`.
    pub fn straight_through(&mut self, x: NodeId, replacement: Tensor) -> NodeId {
        assert_eq!(self.value(x).shape(), replacement.shape());
        self.push(replacement, Op::StraightThrough(x), &[x])
    }

    pub fn sum(&mut self, scalars: &[NodeId]) -> NodeId {
        let s: f64 = scalars.iter().map(|n| self.value(*n).scalar()).sum();
        self.push(Tensor::filled(1, 1, s), Op::Sum(scalars.to_vec()), scalars)
    }

    /// Inverted dropout with a precomputed keep mask of 0 / (1/(1−p)).
    pub fn dropout(&mut self, x: NodeId, mask: Vec<f64>) -> NodeId {
        let mut out = self.value(x).clone();
        assert_eq!(mask.len(), out.len());
        for (o, m) in out.data.iter_mut().zip(&mask) {
            *o *= m;
        }
        self.push(out, Op::Dropout { x, mask }, &[x])
    }

    /// Gradients of the scalar `loss` with respect to every parameter
    /// (zeros for parameters not on the tape).
    pub fn backward(&self, loss: NodeId) -> Vec<Tensor> {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(1, 1, 1.0));
        let mut out = self.params.zeros_like();
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, node, g, &mut grads, &mut out);
        }
        out
    }

    fn backprop_node(&self, idx: usize, node: &Node, g: Tensor, grads: &mut [Option<Tensor>], out: &mut [Tensor]) {
        let needs = |n: NodeId| self.nodes[n.0].needs_grad;
        match &node.op {
            Op::Input => {}
            Op::Param(pid) => out[pid.0].add_assign(&g),
            Op::MatMul { a, b, tb } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if needs(*a) {
                    let ga = acc_slot(grads, *a, va.rows, va.cols);
                    let bref = if *tb { MatRef::of(vb) } else { MatRef::of(vb).t() };
                    gemm(MatRef::of(&g), bref, MatMut::of(ga), 1.0);
                }
                if needs(*b) {
                    let gb = acc_slot(grads, *b, vb.rows, vb.cols);
                    if *tb {
                        gemm(MatRef::of(&g).t(), MatRef::of(va), MatMut::of(gb), 1.0);
                    } else {
                        gemm(MatRef::of(va).t(), MatRef::of(&g), MatMut::of(gb), 1.0);
                    }
                }
            }
            Op::Add(a, b) => {
                for n in [a, b] {
                    if needs(*n) {
                        acc(grads, *n, &g);
                    }
                }
            }
            Op::AddRow(a, r) => {
                if needs(*r) {
                    let mut gr = Tensor::zeros(1, g.cols);
                    for i in 0..g.rows {
                        for (x, y) in gr.data.iter_mut().zip(g.row(i)) {
                            *x += y;
                        }
                    }
                    acc(grads, *r, &gr);
                }
                if needs(*a) {
                    acc(grads, *a, &g);
                }
            }
            Op::Scale(a, s) => {
                let mut ga = g;
                ga.scale(*s);
                acc(grads, *a, &ga);
            }
            Op::Gelu(a) => {
                let va = self.value(*a);
                let mut ga = g;
                for (gx, &x) in ga.data.iter_mut().zip(&va.data) {
                    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
                    let d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                    *gx *= d;
                }
                acc(grads, *a, &ga);
            }
            Op::Relu(a) => {
                let va = self.value(*a);
                let mut ga = g;
                for (gx, &x) in ga.data.iter_mut().zip(&va.data) {
                    if x <= 0.0 {
                        *gx = 0.0;
                    }
                }
                acc(grads, *a, &ga);
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let (rows, cols) = g.shape();
                let vg = &self.value(*gain).data;
                if needs(*gain) || needs(*bias) {
                    let mut gg = Tensor::zeros(1, cols);
                    let mut gb = Tensor::zeros(1, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            let gv = g.data[r * cols + c];
                            gg.data[c] += gv * xhat[r * cols + c];
                            gb.data[c] += gv;
                        }
                    }
                    acc(grads, *gain, &gg);
                    acc(grads, *bias, &gb);
                }
                if needs(*x) {
                    let mut gx = Tensor::zeros(rows, cols);
                    let n = cols as f64;
                    for r in 0..rows {
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for c in 0..cols {
                            let d = g.data[r * cols + c] * vg[c];
                            sum_d += d;
                            sum_dx += d * xhat[r * cols + c];
                        }
                        for c in 0..cols {
                            let d = g.data[r * cols + c] * vg[c];
                            gx.data[r * cols + c] = inv_std[r] * (d - sum_d / n - xhat[r * cols + c] * sum_dx / n);
                        }
                    }
                    acc(grads, *x, &gx);
                }
            }
            Op::Attention { q, k, v, heads, probs } => {
                let mask = &self.masks[self.attn_mask_of[&idx]];
                self.attention_backward(*q, *k, *v, *heads, probs, mask, &g, grads);
            }
            Op::Gather { table, ids } => {
                let t = self.value(*table);
                let gt = acc_slot(grads, *table, t.rows, t.cols);
                for (r, &i) in ids.iter().enumerate() {
                    for (x, y) in gt.row_mut(i).iter_mut().zip(g.row(r)) {
                        *x += y;
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let rows = self.value(*p).rows;
                    if needs(*p) {
                        let slice = Tensor::from_vec(rows, g.cols, g.data[offset * g.cols..(offset + rows) * g.cols].to_vec());
                        acc(grads, *p, &slice);
                    }
                    offset += rows;
                }
            }
            Op::SelectRows { x, idx: rows_idx } => {
                let vx = self.value(*x);
                let gx = acc_slot(grads, *x, vx.rows, vx.cols);
                for (r, &i) in rows_idx.iter().enumerate() {
                    for (a, b) in gx.row_mut(i).iter_mut().zip(g.row(r)) {
                        *a += b;
                    }
                }
            }
            Op::CrossEntropy { logits, targets, scale, probs } => {
                let lv = self.value(*logits);
                let s = g.scalar() * scale;
                let gl = acc_slot(grads, *logits, lv.rows, lv.cols);
                for (t, p) in targets.iter().zip(probs) {
                    let row = &mut gl.row_mut(t.row)[t.start..t.start + t.len];
                    for (j, (x, pj)) in row.iter_mut().zip(p).enumerate() {
                        *x += s * (pj - if j == t.target { 1.0 } else { 0.0 });
                    }
                }
            }
            Op::L1 { pred, target, scale } => {
                let pv = self.value(*pred);
                let s = g.scalar() * scale;
                let gp = acc_slot(grads, *pred, pv.rows, pv.cols);
                for ((x, a), b) in gp.data.iter_mut().zip(&pv.data).zip(&target.data) {
                    let d = a - b;
                    *x += if d > 0.0 {
                        s
                    } else if d < 0.0 {
                        -s
                    } else {
                        0.0
                    };
                }
            }
            Op::Mse { pred, target, scale } => {
                let pv = self.value(*pred);
                let s = g.scalar() * scale * 2.0;
                let gp = acc_slot(grads, *pred, pv.rows, pv.cols);
                for ((x, a), b) in gp.data.iter_mut().zip(&pv.data).zip(&target.data) {
                    *x += s * (a - b);
                }
            }
            Op::StraightThrough(x) => acc(grads, *x, &g),
            Op::Sum(parts) => {
                for p in parts {
                    if needs(*p) {
                        acc(grads, *p, &g);
                    }
                }
            }
            Op::Dropout { x, mask } => {
                let mut gx = g;
                for (a, m) in gx.data.iter_mut().zip(mask) {
                    *a *= m;
                }
                acc(grads, *x, &gx);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        probs: &[f64],
        mask: &AttentionMask,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) {
        let (vq, vk, vv) = (self.value(q), self.value(k), self.value(v));
        let (len, d) = vq.shape();
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut gq = Tensor::zeros(len, d);
        let mut gk = Tensor::zeros(len, d);
        let mut gv = Tensor::zeros(len, d);
        let mut dp = vec![0.0; len * len];
        for h in 0..heads {
            let p = &probs[h * len * len..(h + 1) * len * len];
            let pref = MatRef { data: p, offset: 0, rows: len, cols: len, row_stride: len, col_stride: 1 };
            // dV = Pᵀ · dO
            gemm(
                pref.t(),
                MatRef::column_block(&g.data, len, d, h * dh, dh),
                MatMut::column_block(&mut gv.data, len, d, h * dh, dh),
                0.0,
            );
            // dP = dO · Vᵀ
            gemm(
                MatRef::column_block(&g.data, len, d, h * dh, dh),
                MatRef::column_block(&vv.data, len, d, h * dh, dh).t(),
                MatMut { data: &mut dp, offset: 0, rows: len, cols: len, row_stride: len, col_stride: 1 },
                0.0,
            );
            for i in 0..len {
                let prow = &p[i * len..(i + 1) * len];
                let drow = &mut dp[i * len..(i + 1) * len];
                let dot: f64 = prow.iter().zip(drow.iter()).map(|(a, b)| a * b).sum();
                for j in 0..len {
                    drow[j] = if mask.allowed[i * len + j] { prow[j] * (drow[j] - dot) * scale } else { 0.0 };
                }
            }
            let ds = MatRef { data: &dp, offset: 0, rows: len, cols: len, row_stride: len, col_stride: 1 };
            gemm(
                ds,
                MatRef::column_block(&vk.data, len, d, h * dh, dh),
                MatMut::column_block(&mut gq.data, len, d, h * dh, dh),
                0.0,
            );
            gemm(
                ds.t(),
                MatRef::column_block(&vq.data, len, d, h * dh, dh),
                MatMut::column_block(&mut gk.data, len, d, h * dh, dh),
                0.0,
            );
        }
        for (n, t) in [(q, gq), (k, gk), (v, gv)] {
            if self.nodes[n.0].needs_grad {
                acc(grads, n, &t);
            }
        }
    }
}

fn acc_slot(grads: &mut [Option<Tensor>], n: NodeId, rows: usize, cols: usize) -> &mut Tensor {
    grads[n.0].get_or_insert_with(|| Tensor::zeros(rows, cols))
}

fn acc(grads: &mut [Option<Tensor>], n: NodeId, g: &Tensor) {
    match &mut grads[n.0] {
        Some(t) => t.add_assign(g),
        slot @ None => *slot = Some(g.clone()),
    }
}
