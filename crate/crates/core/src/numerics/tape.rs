//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node holding its forward value. [`Tape::backward`]
//! walks the nodes once in reverse order and accumulates gradients into the
//! inputs of each node that (transitively) depends on a parameter.

use super::softmax::masked_softmax_rows;
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;
pub(crate) const LN_EPS: f64 = 1e-5;

/// GELU, tanh approximation.
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add {
        a: Var,
        b: Var,
    },
    AddRow {
        a: Var,
        row: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        factor: f64,
    },
    Tanh {
        a: Var,
    },
    Gelu {
        a: Var,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    MaskedSoftmax {
        a: Var,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    SelectRows {
        a: Var,
        rows: Vec<usize>,
    },
    SliceCols {
        a: Var,
        start: usize,
    },
    ConcatCols {
        parts: Vec<Var>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Sum {
        a: Var,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add { .. } => "add",
            Op::AddRow { .. } => "add_row",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Tanh { .. } => "tanh",
            Op::Gelu { .. } => "gelu",
            Op::LayerNorm { .. } => "layer_norm",
            Op::MaskedSoftmax { .. } => "masked_softmax",
            Op::Gather { .. } => "gather",
            Op::SelectRows { .. } => "select_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatCols { .. } => "concat_cols",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Sum { .. } => "sum",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    lens: Vec<usize>,
}

impl Gradients {
    /// Gradient of `v`, or `None` if nothing flowed into it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, exactly zero when `v` does not influence the loss.
    pub fn dense(&self, v: Var) -> Vec<f64> {
        self.get(v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; self.lens[v.0]])
    }

    pub fn take(&mut self, v: Var) -> Vec<f64> {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| vec![0.0; self.lens[v.0]])
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Shape(msg()))
    }
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

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("output of {}", op.name())));
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, false)
    }

    fn dims2(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    /// `a · b`, or `a · bᵀ` when `trans_b`.
    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (m, k) = self.dims2(a);
        let (br, bc) = self.dims2(b);
        let (bk, n) = if trans_b { (bc, br) } else { (br, bc) };
        ensure(k == bk, || {
            format!("matmul {m}x{k} by {br}x{bc} (trans_b={trans_b})")
        })?;
        let mut out = vec![0.0; m * n];
        gemm(
            self.value(a).data(),
            false,
            self.value(b).data(),
            trans_b,
            &mut out,
            m,
            k,
            n,
            false,
        );
        let needs = self.needs(a) || self.needs(b);
        self.push(
            Tensor::new(vec![m, n], out)?,
            Op::MatMul { a, b, trans_b },
            needs,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        ensure(ta.shape() == tb.shape(), || {
            format!("add {:?} + {:?}", ta.shape(), tb.shape())
        })?;
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        self.push(t, Op::Add { a, b }, needs)
    }

    /// Adds a length-`cols` vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        let c = ta.cols();
        ensure(tr.len() == c, || {
            format!("add_row {:?} + {:?}", ta.shape(), tr.shape())
        })?;
        let bias = tr.data();
        let data = ta
            .data()
            .chunks(c)
            .flat_map(|r| r.iter().zip(bias).map(|(x, b)| x + b))
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(row);
        self.push(t, Op::AddRow { a, row }, needs)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        ensure(ta.shape() == tb.shape(), || {
            format!("mul {:?} * {:?}", ta.shape(), tb.shape())
        })?;
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        self.push(t, Op::Mul { a, b }, needs)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let ta = self.value(a);
        let t = Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().map(|x| x * factor).collect(),
        )?;
        let needs = self.needs(a);
        self.push(t, Op::Scale { a, factor }, needs)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let t = Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().map(|x| x.tanh()).collect(),
        )?;
        let needs = self.needs(a);
        self.push(t, Op::Tanh { a }, needs)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| gelu(x)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let needs = self.needs(a);
        self.push(t, Op::Gelu { a }, needs)
    }

    /// Row-wise layer normalization with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let tx = self.value(x);
        let c = tx.cols();
        ensure(
            self.value(gamma).len() == c && self.value(beta).len() == c,
            || format!("layer_norm affine params must have {c} entries"),
        )?;
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let rows = tx.rows();
        let mut xhat = vec![0.0; tx.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; tx.len()];
        for r in 0..rows {
            let row = tx.row(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd[r] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[r * c + j] = h;
                out[r * c + j] = h * g[j] + b[j];
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            needs,
        )
    }

    /// Row-wise softmax of `a + mask`; blocked entries (see [`super::BLOCKED`]) come out exactly zero.
    pub fn masked_softmax(&mut self, a: Var, mask: &[f64]) -> Result<Var> {
        let ta = self.value(a);
        ensure(mask.len() == ta.len(), || {
            format!("mask of {} entries for logits {:?}", mask.len(), ta.shape())
        })?;
        let out = masked_softmax_rows(ta.data(), mask, ta.cols())?;
        let t = Tensor::new(ta.shape().to_vec(), out)?;
        let needs = self.needs(a);
        self.push(t, Op::MaskedSoftmax { a }, needs)
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        let (n, c) = (tt.rows(), tt.cols());
        if let Some(&bad) = ids.iter().find(|&&i| i >= n) {
            return Err(Error::Shape(format!("gather index {bad} >= {n} rows")));
        }
        let mut out = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            out.extend_from_slice(tt.row(i));
        }
        let t = Tensor::new(vec![ids.len(), c], out)?;
        let needs = self.needs(table);
        self.push(
            t,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            needs,
        )
    }

    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        let (n, c) = (ta.rows(), ta.cols());
        if let Some(&bad) = rows.iter().find(|&&i| i >= n) {
            return Err(Error::Shape(format!("select_rows index {bad} >= {n} rows")));
        }
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            out.extend_from_slice(ta.row(i));
        }
        let t = Tensor::new(vec![rows.len(), c], out)?;
        let needs = self.needs(a);
        self.push(
            t,
            Op::SelectRows {
                a,
                rows: rows.to_vec(),
            },
            needs,
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let ta = self.value(a);
        let (n, c) = (ta.rows(), ta.cols());
        ensure(start + width <= c, || {
            format!("slice_cols {start}+{width} of {c}")
        })?;
        let mut out = Vec::with_capacity(n * width);
        for r in 0..n {
            out.extend_from_slice(&ta.row(r)[start..start + width]);
        }
        let t = Tensor::new(vec![n, width], out)?;
        let needs = self.needs(a);
        self.push(t, Op::SliceCols { a, start }, needs)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let n = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or_else(|| Error::Shape("concat_cols of nothing".into()))?;
        ensure(parts.iter().all(|&p| self.value(p).rows() == n), || {
            "concat_cols row mismatch".into()
        })?;
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(n * total);
        for r in 0..n {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let t = Tensor::new(vec![n, total], out)?;
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(
            t,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            needs,
        )
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        let (n, v) = (tl.rows(), tl.cols());
        ensure(n == targets.len() && n > 0, || {
            format!("cross_entropy over {n} rows with {} targets", targets.len())
        })?;
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(Error::TargetOutOfRange {
                index: bad,
                vocab: v,
            });
        }
        let mut probs = vec![0.0; n * v];
        let mut loss = 0.0;
        for r in 0..n {
            let row = tl.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (p, &x) in probs[r * v..(r + 1) * v].iter_mut().zip(row) {
                *p = (x - max).exp();
                z += *p;
            }
            for p in &mut probs[r * v..(r + 1) * v] {
                *p /= z;
            }
            loss += z.ln() + max - row[targets[r]];
        }
        let needs = self.needs(logits);
        self.push(
            Tensor::scalar(loss / n as f64),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            needs,
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum { a }, needs)
    }

    /// Back-propagates from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        ensure(self.value(loss).len() == 1, || {
            "backward needs a scalar loss".into()
        })?;
        let lens: Vec<usize> = self.nodes.iter().map(|n| n.value.len()).collect();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads, &lens)?;
            if !g.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {}", node.op.name())));
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, lens })
    }

    fn backprop_node(
        &self,
        node: &Node,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        lens: &[usize],
    ) -> Result<()> {
        macro_rules! slot {
            ($v:expr) => {{
                let v: Var = $v;
                if self.needs(v) {
                    Some(grads[v.0].get_or_insert_with(|| vec![0.0; lens[v.0]]))
                } else {
                    None
                }
            }};
        }
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.rows(), ta.cols());
                let n = out.cols();
                if let Some(ga) = slot!(*a) {
                    // dA = dC · Bᵀ  (or dC · B when B was transposed)
                    gemm(g, false, tb.data(), !*trans_b, ga, m, n, k, true);
                }
                if let Some(gb) = slot!(*b) {
                    if *trans_b {
                        gemm(g, true, ta.data(), false, gb, n, m, k, true);
                    } else {
                        gemm(ta.data(), true, g, false, gb, k, m, n, true);
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if let Some(gv) = slot!(v) {
                        gv.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::AddRow { a, row } => {
                if let Some(ga) = slot!(*a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gr) = slot!(*row) {
                    let c = gr.len();
                    for chunk in g.chunks(c) {
                        gr.iter_mut().zip(chunk).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Mul { a, b } => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = slot!(*a) {
                    for ((x, gy), bv) in ga.iter_mut().zip(g).zip(tb) {
                        *x += gy * bv;
                    }
                }
                if let Some(gb) = slot!(*b) {
                    for ((x, gy), av) in gb.iter_mut().zip(g).zip(ta) {
                        *x += gy * av;
                    }
                }
            }
            Op::Scale { a, factor } => {
                if let Some(ga) = slot!(*a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y * factor);
                }
            }
            Op::Tanh { a } => {
                if let Some(ga) = slot!(*a) {
                    for ((x, gy), t) in ga.iter_mut().zip(g).zip(out.data()) {
                        *x += gy * (1.0 - t * t);
                    }
                }
            }
            Op::Gelu { a } => {
                let ta = self.value(*a).data();
                if let Some(ga) = slot!(*a) {
                    for ((x, gy), &v) in ga.iter_mut().zip(g).zip(ta) {
                        let u = GELU_C * (v + GELU_A * v * v * v);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                        *x += gy * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let c = out.cols();
                let gam = self.value(*gamma).data();
                if let Some(gg) = slot!(*gamma) {
                    for (gr, hr) in g.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            gg[j] += gr[j] * hr[j];
                        }
                    }
                }
                if let Some(gb) = slot!(*beta) {
                    for gr in g.chunks(c) {
                        gb.iter_mut().zip(gr).for_each(|(x, y)| *x += y);
                    }
                }
                if let Some(gx) = slot!(*x) {
                    let mut dxhat = vec![0.0; c];
                    for (r, (gr, hr)) in g.chunks(c).zip(xhat.chunks(c)).enumerate() {
                        let mut mean_d = 0.0;
                        let mut mean_dh = 0.0;
                        for j in 0..c {
                            dxhat[j] = gr[j] * gam[j];
                            mean_d += dxhat[j];
                            mean_dh += dxhat[j] * hr[j];
                        }
                        mean_d /= c as f64;
                        mean_dh /= c as f64;
                        let dst = &mut gx[r * c..(r + 1) * c];
                        for j in 0..c {
                            dst[j] += rstd[r] * (dxhat[j] - mean_d - hr[j] * mean_dh);
                        }
                    }
                }
            }
            Op::MaskedSoftmax { a } => {
                if let Some(ga) = slot!(*a) {
                    let c = out.cols();
                    for ((dst, gr), yr) in
                        ga.chunks_mut(c).zip(g.chunks(c)).zip(out.data().chunks(c))
                    {
                        let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                        for j in 0..c {
                            // blocked entries have y == 0 exactly, so their gradient is exactly 0
                            dst[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::Gather { table, ids } => {
                if let Some(gt) = slot!(*table) {
                    let c = out.cols();
                    for (k, &i) in ids.iter().enumerate() {
                        let src = &g[k * c..(k + 1) * c];
                        gt[i * c..(i + 1) * c]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::SelectRows { a, rows } => {
                if let Some(ga) = slot!(*a) {
                    let c = out.cols();
                    for (k, &i) in rows.iter().enumerate() {
                        let src = &g[k * c..(k + 1) * c];
                        ga[i * c..(i + 1) * c]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::SliceCols { a, start } => {
                let full = self.value(*a).cols();
                let w = out.cols();
                if let Some(ga) = slot!(*a) {
                    for (r, gr) in g.chunks(w).enumerate() {
                        ga[r * full + start..r * full + start + w]
                            .iter_mut()
                            .zip(gr)
                            .for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::ConcatCols { parts } => {
                let total = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if let Some(gp) = slot!(p) {
                        for (r, dst) in gp.chunks_mut(w).enumerate() {
                            let src = &g[r * total + offset..r * total + offset + w];
                            dst.iter_mut().zip(src).for_each(|(x, y)| *x += y);
                        }
                    }
                    offset += w;
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                if let Some(gl) = slot!(*logits) {
                    let n = targets.len();
                    let v = probs.len() / n;
                    let s = g[0] / n as f64;
                    for (r, &t) in targets.iter().enumerate() {
                        for j in 0..v {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            gl[r * v + j] += s * (probs[r * v + j] - onehot);
                        }
                    }
                }
            }
            Op::Sum { a } => {
                if let Some(ga) = slot!(*a) {
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
        }
        Ok(())
    }
}
