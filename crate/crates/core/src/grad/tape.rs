//! Eager define-by-run computation graph with reverse-mode backprop.
//!
//! Every builder method evaluates its node immediately, validates shapes,
//! and checks the output for NaN/Inf — a non-finite intermediate aborts the
//! step with the offending node's name instead of propagating silently.
//! Node ids are issued in creation order, so a single reverse sweep visits
//! the graph in valid topological order.

use crate::error::{Error, Result};

use super::store::{Block, GradMap, ParamStore};
use super::tensor::{dot, gemm, gemm_at, gemm_bt, Real, Tensor};

/// Handle to a node on a [`Tape`].
pub type NodeId = usize;

enum Op<F> {
    /// Leaf holding a constant input tensor.
    Value,
    /// Leaf holding a copy of a named parameter.
    Param { name: String },
    /// `a + b`; `b`'s shape may be a trailing suffix of `a`'s (bias add).
    Add { a: NodeId, b: NodeId },
    /// Elementwise product of two same-shaped tensors.
    Mul { a: NodeId, b: NodeId },
    /// Multiplication by a compile-time scalar.
    Scale { a: NodeId, c: F },
    /// `a[M,K] · b[K,N]`.
    MatMul { a: NodeId, b: NodeId },
    /// Batched `a[B,M,K] · b[B,K,N]`.
    Bmm { a: NodeId, b: NodeId },
    /// Batched `a[B,M,K] · b[B,N,K]ᵀ` (attention scores).
    BmmBt { a: NodeId, b: NodeId },
    /// `[B,T,H·dh] → [B·H,T,dh]` head reordering.
    HeadSplit { x: NodeId, heads: usize },
    /// `[B·H,T,dh] → [B,T,H·dh]`, inverse of `HeadSplit`.
    HeadMerge { x: NodeId, heads: usize },
    /// Row-wise normalization over the last dimension with learned gain/bias.
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        // Per-row statistics cached for the backward pass.
        rstd: Vec<F>,
        xhat: Vec<F>,
    },
    /// Tanh-approximation GELU, elementwise.
    Gelu { x: NodeId },
    /// Softmax over the last dimension.
    SoftmaxLast { x: NodeId },
    /// Row lookup `table[indices[i], :]` for an embedding table.
    Gather { table: NodeId, indices: Vec<usize> },
    /// Same data, new shape.
    Reshape { x: NodeId },
    /// Sum of all elements, yielding a scalar.
    SumAll { x: NodeId },
    /// Weighted label-smoothed cross-entropy over logit rows.
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        weights: Vec<F>,
        smoothing: F,
        // Softmax probabilities and per-row −log p(target), cached.
        probs: Vec<F>,
        token_nlls: Vec<F>,
    },
}

impl<F> Op<F> {
    fn kind(&self) -> &'static str {
        match self {
            Op::Value => "value",
            Op::Param { .. } => "param",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::MatMul { .. } => "mat_mul",
            Op::Bmm { .. } => "bmm",
            Op::BmmBt { .. } => "bmm_bt",
            Op::HeadSplit { .. } => "head_split",
            Op::HeadMerge { .. } => "head_merge",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu { .. } => "gelu",
            Op::SoftmaxLast { .. } => "softmax_last",
            Op::Gather { .. } => "gather",
            Op::Reshape { .. } => "reshape",
            Op::SumAll { .. } => "sum_all",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

struct Node<F> {
    op: Op<F>,
    out: Tensor<F>,
}

/// The recording tape. One tape serves one forward/backward pass; training
/// loops build a fresh tape per step.
pub struct Tape<F = f32> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// The evaluated output of a node.
    pub fn value_of(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id].out
    }

    fn label(&self, kind: &str) -> String {
        format!("{}#{}", kind, self.nodes.len())
    }

    fn push(&mut self, op: Op<F>, out: Tensor<F>) -> Result<NodeId> {
        if !out.all_finite() {
            return Err(Error::NonFinite {
                node: self.label(op.kind()),
            });
        }
        self.nodes.push(Node { op, out });
        Ok(self.nodes.len() - 1)
    }

    fn shape_err(&self, kind: &str, detail: String) -> Error {
        Error::ShapeMismatch {
            node: self.label(kind),
            detail,
        }
    }

    // ── leaves ───────────────────────────────────────────────────────

    /// Record a constant input tensor.
    pub fn value(&mut self, t: Tensor<F>) -> Result<NodeId> {
        self.push(Op::Value, t)
    }

    /// Record a copy of a named parameter; gradients flow back to its name.
    pub fn param(&mut self, params: &ParamStore<F>, name: &str) -> Result<NodeId> {
        let t = params.get(name)?.clone();
        self.push(
            Op::Param {
                name: name.to_string(),
            },
            t,
        )
    }

    // ── elementwise and shape ops ────────────────────────────────────

    /// `a + b`. `b` may have a shape that is a trailing suffix of `a`'s
    /// shape, in which case it is broadcast over the leading dimensions.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.nodes[a].out.shape(), self.nodes[b].out.shape());
        if !(sa == sb || (sa.len() > sb.len() && sa.ends_with(sb))) {
            return Err(self.shape_err("add", format!("{sa:?} + {sb:?}")));
        }
        let (da, db) = (self.nodes[a].out.data(), self.nodes[b].out.data());
        let bn = db.len();
        let mut out = Vec::with_capacity(da.len());
        for (i, &av) in da.iter().enumerate() {
            out.push(av + db[i % bn]);
        }
        let out = Tensor::new(sa.to_vec(), out)?;
        self.push(Op::Add { a, b }, out)
    }

    /// Elementwise product; shapes must match exactly.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.nodes[a].out.shape(), self.nodes[b].out.shape());
        if sa != sb {
            return Err(self.shape_err("mul", format!("{sa:?} ⊙ {sb:?}")));
        }
        let data = self.nodes[a]
            .out
            .data()
            .iter()
            .zip(self.nodes[b].out.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::new(sa.to_vec(), data)?;
        self.push(Op::Mul { a, b }, out)
    }

    /// Multiply every element by a constant.
    pub fn scale(&mut self, a: NodeId, c: F) -> Result<NodeId> {
        let data = self.nodes[a].out.data().iter().map(|&x| x * c).collect();
        let out = Tensor::new(self.nodes[a].out.shape().to_vec(), data)?;
        self.push(Op::Scale { a, c }, out)
    }

    /// Same elements, new shape (element counts must agree).
    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[x].out.numel() {
            return Err(self.shape_err(
                "reshape",
                format!("{:?} → {:?}", self.nodes[x].out.shape(), shape),
            ));
        }
        let out = self.nodes[x].out.clone().reshaped(shape)?;
        self.push(Op::Reshape { x }, out)
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        let mut acc = F::zero();
        for &v in self.nodes[x].out.data() {
            acc += v;
        }
        self.push(Op::SumAll { x }, Tensor::scalar(acc))
    }

    // ── matrix products ──────────────────────────────────────────────

    /// `a[M,K] · b[K,N] → [M,N]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.nodes[a].out.shape(), self.nodes[b].out.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(self.shape_err("mat_mul", format!("{sa:?} · {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![F::zero(); m * n];
        gemm(
            &mut out,
            self.nodes[a].out.data(),
            self.nodes[b].out.data(),
            m,
            k,
            n,
        );
        let out = Tensor::new(vec![m, n], out)?;
        self.push(Op::MatMul { a, b }, out)
    }

    /// Batched `a[B,M,K] · b[B,K,N] → [B,M,N]`.
    pub fn bmm(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.nodes[a].out.shape(), self.nodes[b].out.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(self.shape_err("bmm", format!("{sa:?} · {sb:?}")));
        }
        let (bt, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![F::zero(); bt * m * n];
        for i in 0..bt {
            gemm(
                &mut out[i * m * n..(i + 1) * m * n],
                &self.nodes[a].out.data()[i * m * k..(i + 1) * m * k],
                &self.nodes[b].out.data()[i * k * n..(i + 1) * k * n],
                m,
                k,
                n,
            );
        }
        let out = Tensor::new(vec![bt, m, n], out)?;
        self.push(Op::Bmm { a, b }, out)
    }

    /// Batched `a[B,M,K] · b[B,N,K]ᵀ → [B,M,N]` — scores between row sets.
    pub fn bmm_bt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.nodes[a].out.shape(), self.nodes[b].out.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[2] {
            return Err(self.shape_err("bmm_bt", format!("{sa:?} · {sb:?}ᵀ")));
        }
        let (bt, m, k, n) = (sa[0], sa[1], sa[2], sb[1]);
        let mut out = vec![F::zero(); bt * m * n];
        for i in 0..bt {
            gemm_bt(
                &mut out[i * m * n..(i + 1) * m * n],
                &self.nodes[a].out.data()[i * m * k..(i + 1) * m * k],
                &self.nodes[b].out.data()[i * n * k..(i + 1) * n * k],
                m,
                k,
                n,
            );
        }
        let out = Tensor::new(vec![bt, m, n], out)?;
        self.push(Op::BmmBt { a, b }, out)
    }

    // ── attention head plumbing ──────────────────────────────────────

    /// `[B,T,H·dh] → [B·H,T,dh]`: regroup features so each head becomes its
    /// own batch entry for the batched products.
    pub fn head_split(&mut self, x: NodeId, heads: usize) -> Result<NodeId> {
        let s = self.nodes[x].out.shape();
        if s.len() != 3 || heads == 0 || s[2] % heads != 0 {
            return Err(self.shape_err("head_split", format!("{s:?} into {heads} heads")));
        }
        let (b, t, d) = (s[0], s[1], s[2]);
        let dh = d / heads;
        let src = self.nodes[x].out.data();
        let mut out = vec![F::zero(); b * t * d];
        for bi in 0..b {
            for h in 0..heads {
                for ti in 0..t {
                    let dst = ((bi * heads + h) * t + ti) * dh;
                    let from = (bi * t + ti) * d + h * dh;
                    out[dst..dst + dh].copy_from_slice(&src[from..from + dh]);
                }
            }
        }
        let out = Tensor::new(vec![b * heads, t, dh], out)?;
        self.push(Op::HeadSplit { x, heads }, out)
    }

    /// `[B·H,T,dh] → [B,T,H·dh]`, the inverse of [`Tape::head_split`].
    pub fn head_merge(&mut self, x: NodeId, heads: usize) -> Result<NodeId> {
        let s = self.nodes[x].out.shape();
        if s.len() != 3 || heads == 0 || s[0] % heads != 0 {
            return Err(self.shape_err("head_merge", format!("{s:?} from {heads} heads")));
        }
        let (b, t, dh) = (s[0] / heads, s[1], s[2]);
        let src = self.nodes[x].out.data();
        let mut out = vec![F::zero(); b * t * heads * dh];
        for bi in 0..b {
            for h in 0..heads {
                for ti in 0..t {
                    let from = ((bi * heads + h) * t + ti) * dh;
                    let dst = (bi * t + ti) * (heads * dh) + h * dh;
                    out[dst..dst + dh].copy_from_slice(&src[from..from + dh]);
                }
            }
        }
        let out = Tensor::new(vec![b, t, heads * dh], out)?;
        self.push(Op::HeadMerge { x, heads }, out)
    }

    // ── nonlinearities and normalization ─────────────────────────────

    /// GELU with the tanh approximation (smooth everywhere, which keeps
    /// finite-difference checks clean).
    pub fn gelu(&mut self, x: NodeId) -> Result<NodeId> {
        let data = self.nodes[x]
            .out
            .data()
            .iter()
            .map(|&v| gelu_fwd(v))
            .collect();
        let out = Tensor::new(self.nodes[x].out.shape().to_vec(), data)?;
        self.push(Op::Gelu { x }, out)
    }

    /// Normalize each row over the last dimension, then apply learned
    /// `gain` and `bias` (both shaped `[last_dim]`).
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let s = self.nodes[x].out.shape().to_vec();
        let n = *s.last().expect("tensor rank ≥ 1");
        if self.nodes[gain].out.shape() != [n] || self.nodes[bias].out.shape() != [n] {
            return Err(self.shape_err(
                "layer_norm",
                format!(
                    "x {s:?}, gain {:?}, bias {:?}",
                    self.nodes[gain].out.shape(),
                    self.nodes[bias].out.shape()
                ),
            ));
        }
        let eps = F::from_f64_lossy(1.0e-5);
        let rows = self.nodes[x].out.numel() / n;
        let src = self.nodes[x].out.data();
        let g = self.nodes[gain].out.data();
        let b = self.nodes[bias].out.data();
        let inv_n = F::one() / F::from_f64_lossy(n as f64);
        let mut out = vec![F::zero(); rows * n];
        let mut rstd = vec![F::zero(); rows];
        let mut xhat = vec![F::zero(); rows * n];
        for r in 0..rows {
            let row = &src[r * n..(r + 1) * n];
            let mut mean = F::zero();
            for &v in row {
                mean += v;
            }
            mean *= inv_n;
            let mut var = F::zero();
            for &v in row {
                let d = v - mean;
                var += d * d;
            }
            var *= inv_n;
            let rs = (var + eps).sqrt().recip();
            rstd[r] = rs;
            for j in 0..n {
                let xh = (row[j] - mean) * rs;
                xhat[r * n + j] = xh;
                out[r * n + j] = xh * g[j] + b[j];
            }
        }
        let out = Tensor::new(s, out)?;
        self.push(
            Op::LayerNorm {
                x,
                gain,
                bias,
                rstd,
                xhat,
            },
            out,
        )
    }

    /// Softmax over the last dimension (numerically stabilized).
    pub fn softmax_last(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.nodes[x].out.shape().to_vec();
        let n = *s.last().expect("tensor rank ≥ 1");
        let rows = self.nodes[x].out.numel() / n;
        let src = self.nodes[x].out.data();
        let mut out = vec![F::zero(); rows * n];
        for r in 0..rows {
            let row = &src[r * n..(r + 1) * n];
            let mut mx = row[0];
            for &v in &row[1..] {
                if v > mx {
                    mx = v;
                }
            }
            let dst = &mut out[r * n..(r + 1) * n];
            let mut sum = F::zero();
            for (o, &v) in dst.iter_mut().zip(row.iter()) {
                *o = (v - mx).exp();
                sum += *o;
            }
            let inv = sum.recip();
            for o in dst.iter_mut() {
                *o *= inv;
            }
        }
        let out = Tensor::new(s, out)?;
        self.push(Op::SoftmaxLast { x }, out)
    }

    // ── lookup and loss ──────────────────────────────────────────────

    /// `table[V,D]` indexed by `indices` → `[len(indices), D]`.
    pub fn gather(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId> {
        let s = self.nodes[table].out.shape();
        if s.len() != 2 {
            return Err(self.shape_err("gather", format!("table {s:?} is not 2-D")));
        }
        let (v, d) = (s[0], s[1]);
        if indices.is_empty() {
            return Err(self.shape_err("gather", "empty index list".to_string()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= v) {
            return Err(Error::Input(format!(
                "gather index {bad} out of range for table with {v} rows"
            )));
        }
        let src = self.nodes[table].out.data();
        let mut out = vec![F::zero(); indices.len() * d];
        for (r, &idx) in indices.iter().enumerate() {
            out[r * d..(r + 1) * d].copy_from_slice(&src[idx * d..(idx + 1) * d]);
        }
        let out = Tensor::new(vec![indices.len(), d], out)?;
        self.push(
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
            out,
        )
    }

    /// Label-smoothed cross-entropy over `logits[N,V]`: the scalar
    /// Σ_i weights[i] · [(1−ε)·(−log p_i(target_i)) + ε·mean_k(−log p_i(k))].
    ///
    /// Callers encode both padding masks and the normalization constant in
    /// `weights` (e.g. 1/batch_size at real positions, 0 at padding).
    pub fn cross_entropy(
        &mut self,
        logits: NodeId,
        targets: &[usize],
        weights: &[F],
        smoothing: F,
    ) -> Result<NodeId> {
        let s = self.nodes[logits].out.shape();
        if s.len() != 2 || s[0] != targets.len() || s[0] != weights.len() {
            return Err(self.shape_err(
                "cross_entropy",
                format!(
                    "logits {s:?} vs {} targets / {} weights",
                    targets.len(),
                    weights.len()
                ),
            ));
        }
        let (rows, v) = (s[0], s[1]);
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(Error::Input(format!(
                "target id {bad} out of range for {v} classes"
            )));
        }
        let src = self.nodes[logits].out.data();
        let inv_v = F::one() / F::from_f64_lossy(v as f64);
        let mut probs = vec![F::zero(); rows * v];
        let mut token_nlls = vec![F::zero(); rows];
        let mut loss = F::zero();
        for r in 0..rows {
            let row = &src[r * v..(r + 1) * v];
            let mut mx = row[0];
            for &z in &row[1..] {
                if z > mx {
                    mx = z;
                }
            }
            let mut sum = F::zero();
            let mut mean_z = F::zero();
            for &z in row {
                sum += (z - mx).exp();
                mean_z += z;
            }
            mean_z *= inv_v;
            let lse = mx + sum.ln();
            for (j, &z) in row.iter().enumerate() {
                probs[r * v + j] = (z - lse).exp();
            }
            let nll = lse - row[targets[r]];
            token_nlls[r] = nll;
            loss += weights[r] * ((F::one() - smoothing) * nll + smoothing * (lse - mean_z));
        }
        self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                smoothing,
                probs,
                token_nlls,
            },
            Tensor::scalar(loss),
        )
    }

    /// Per-row unsmoothed −log p(target) cached by a `cross_entropy` node.
    pub fn token_nlls(&self, id: NodeId) -> Result<&[F]> {
        match &self.nodes[id].op {
            Op::CrossEntropy { token_nlls, .. } => Ok(token_nlls),
            other => Err(Error::Usage(format!(
                "token_nlls on {} node",
                other.kind()
            ))),
        }
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar `loss` node. The returned map holds one
    /// entry per parameter in `params`: accumulated gradients for parameters
    /// on the loss path, explicit zeros for everything else.
    pub fn backward(&self, loss: NodeId, params: &ParamStore<F>) -> Result<GradMap<F>> {
        self.backward_block(loss, params, Block::All)
    }

    /// [`Self::backward`] restricted to one parameter block: the sweep is the
    /// same, but only gradients for `block` members are materialized. Since a
    /// per-block partial derivative never depends on whether the other block
    /// is trainable, the θ entries here are identical to the θ entries of an
    /// unrestricted backward pass.
    pub fn backward_block(
        &self,
        loss: NodeId,
        params: &ParamStore<F>,
        block: Block,
    ) -> Result<GradMap<F>> {
        if self.nodes[loss].out.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward from non-scalar node of shape {:?}",
                self.nodes[loss].out.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<F>>> = vec![None; self.nodes.len()];
        grads[loss] = Some(vec![F::one()]);

        for id in (0..=loss).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.accumulate(id, &g, &mut grads);
            grads[id] = Some(g);
        }

        let mut out = GradMap::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if let Op::Param { name } = &node.op {
                if !block.contains(name) {
                    continue;
                }
                let Some(g) = &grads[id] else { continue };
                let shape = node.out.shape().to_vec();
                match out.get_mut(name.as_str()) {
                    Some(existing) => {
                        for (e, &v) in existing.data_mut().iter_mut().zip(g.iter()) {
                            *e += v;
                        }
                    }
                    None => {
                        out.insert(name.clone(), Tensor::new(shape, g.clone())?);
                    }
                }
            }
        }
        // Parameters the loss never touched still get explicit zeros, so a
        // GradMap always covers the requested block of the store.
        for (name, tensor) in params.iter() {
            if block.contains(name) {
                out.entry(name.to_string())
                    .or_insert_with(|| Tensor::zeros(tensor.shape()));
            }
        }
        for (name, g) in &out {
            if !g.all_finite() {
                return Err(Error::NonFinite {
                    node: format!("grad:{name}"),
                });
            }
        }
        Ok(out)
    }

    /// Route `g` (gradient at node `id`) into the gradients of its inputs.
    fn accumulate(&self, id: NodeId, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let ensure = |grads: &mut [Option<Vec<F>>], nid: NodeId, len: usize| {
            grads[nid].get_or_insert_with(|| vec![F::zero(); len]);
        };
        match &self.nodes[id].op {
            Op::Value | Op::Param { .. } => {}
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                let an = self.nodes[a].out.numel();
                let bn = self.nodes[b].out.numel();
                ensure(grads, a, an);
                if let Some(da) = grads[a].as_mut() {
                    for (d, &v) in da.iter_mut().zip(g.iter()) {
                        *d += v;
                    }
                }
                ensure(grads, b, bn);
                if let Some(db) = grads[b].as_mut() {
                    for (i, &v) in g.iter().enumerate() {
                        db[i % bn] += v;
                    }
                }
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                let n = g.len();
                ensure(grads, a, n);
                ensure(grads, b, n);
                for i in 0..n {
                    let (av, bv) = (self.nodes[a].out.data()[i], self.nodes[b].out.data()[i]);
                    grads[a].as_mut().expect("just ensured")[i] += g[i] * bv;
                    grads[b].as_mut().expect("just ensured")[i] += g[i] * av;
                }
            }
            Op::Scale { a, c } => {
                let (a, c) = (*a, *c);
                ensure(grads, a, g.len());
                let da = grads[a].as_mut().expect("just ensured");
                for (d, &v) in da.iter_mut().zip(g.iter()) {
                    *d += v * c;
                }
            }
            Op::MatMul { a, b } => {
                let (a, b) = (*a, *b);
                let (m, k) = {
                    let s = self.nodes[a].out.shape();
                    (s[0], s[1])
                };
                let n = self.nodes[b].out.shape()[1];
                ensure(grads, a, m * k);
                // da += g · bᵀ
                gemm_bt(
                    grads[a].as_mut().expect("just ensured"),
                    g,
                    self.nodes[b].out.data(),
                    m,
                    n,
                    k,
                );
                ensure(grads, b, k * n);
                // db += aᵀ · g
                gemm_at(
                    grads[b].as_mut().expect("just ensured"),
                    self.nodes[a].out.data(),
                    g,
                    m,
                    k,
                    n,
                );
            }
            Op::Bmm { a, b } => {
                let (a, b) = (*a, *b);
                let (bt, m, k) = {
                    let s = self.nodes[a].out.shape();
                    (s[0], s[1], s[2])
                };
                let n = self.nodes[b].out.shape()[2];
                ensure(grads, a, bt * m * k);
                ensure(grads, b, bt * k * n);
                for i in 0..bt {
                    let gi = &g[i * m * n..(i + 1) * m * n];
                    gemm_bt(
                        &mut grads[a].as_mut().expect("just ensured")[i * m * k..(i + 1) * m * k],
                        gi,
                        &self.nodes[b].out.data()[i * k * n..(i + 1) * k * n],
                        m,
                        n,
                        k,
                    );
                    gemm_at(
                        &mut grads[b].as_mut().expect("just ensured")[i * k * n..(i + 1) * k * n],
                        &self.nodes[a].out.data()[i * m * k..(i + 1) * m * k],
                        gi,
                        m,
                        k,
                        n,
                    );
                }
            }
            Op::BmmBt { a, b } => {
                let (a, b) = (*a, *b);
                let (bt, m, k) = {
                    let s = self.nodes[a].out.shape();
                    (s[0], s[1], s[2])
                };
                let n = self.nodes[b].out.shape()[1];
                ensure(grads, a, bt * m * k);
                ensure(grads, b, bt * n * k);
                for i in 0..bt {
                    let gi = &g[i * m * n..(i + 1) * m * n];
                    // out = a·bᵀ  ⇒  da += g·b, db += gᵀ·a
                    gemm(
                        &mut grads[a].as_mut().expect("just ensured")[i * m * k..(i + 1) * m * k],
                        gi,
                        &self.nodes[b].out.data()[i * n * k..(i + 1) * n * k],
                        m,
                        n,
                        k,
                    );
                    gemm_at(
                        &mut grads[b].as_mut().expect("just ensured")[i * n * k..(i + 1) * n * k],
                        gi,
                        &self.nodes[a].out.data()[i * m * k..(i + 1) * m * k],
                        m,
                        n,
                        k,
                    );
                }
            }
            Op::HeadSplit { x, heads } => {
                let (x, heads) = (*x, *heads);
                let s = self.nodes[x].out.shape();
                let (b, t, d) = (s[0], s[1], s[2]);
                let dh = d / heads;
                ensure(grads, x, b * t * d);
                let dx = grads[x].as_mut().expect("just ensured");
                for bi in 0..b {
                    for h in 0..heads {
                        for ti in 0..t {
                            let from = ((bi * heads + h) * t + ti) * dh;
                            let dst = (bi * t + ti) * d + h * dh;
                            for c in 0..dh {
                                dx[dst + c] += g[from + c];
                            }
                        }
                    }
                }
            }
            Op::HeadMerge { x, heads } => {
                let (x, heads) = (*x, *heads);
                let s = self.nodes[x].out.shape();
                let (bh, t, dh) = (s[0], s[1], s[2]);
                let b = bh / heads;
                ensure(grads, x, bh * t * dh);
                let dx = grads[x].as_mut().expect("just ensured");
                for bi in 0..b {
                    for h in 0..heads {
                        for ti in 0..t {
                            let dst = ((bi * heads + h) * t + ti) * dh;
                            let from = (bi * t + ti) * (heads * dh) + h * dh;
                            for c in 0..dh {
                                dx[dst + c] += g[from + c];
                            }
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                rstd,
                xhat,
            } => {
                let (x, gain, bias) = (*x, *gain, *bias);
                let n = *self.nodes[x].out.shape().last().expect("rank ≥ 1");
                let rows = self.nodes[x].out.numel() / n;
                let gdat = self.nodes[gain].out.data().to_vec();
                ensure(grads, x, rows * n);
                ensure(grads, gain, n);
                ensure(grads, bias, n);
                let inv_n = F::one() / F::from_f64_lossy(n as f64);
                for r in 0..rows {
                    let gr = &g[r * n..(r + 1) * n];
                    let xh = &xhat[r * n..(r + 1) * n];
                    {
                        let dgain = grads[gain].as_mut().expect("just ensured");
                        for j in 0..n {
                            dgain[j] += gr[j] * xh[j];
                        }
                    }
                    {
                        let dbias = grads[bias].as_mut().expect("just ensured");
                        for j in 0..n {
                            dbias[j] += gr[j];
                        }
                    }
                    let mut m1 = F::zero();
                    let mut m2 = F::zero();
                    for j in 0..n {
                        let dxh = gr[j] * gdat[j];
                        m1 += dxh;
                        m2 += dxh * xh[j];
                    }
                    m1 *= inv_n;
                    m2 *= inv_n;
                    let dx = grads[x].as_mut().expect("just ensured");
                    for j in 0..n {
                        let dxh = gr[j] * gdat[j];
                        dx[r * n + j] += rstd[r] * (dxh - m1 - xh[j] * m2);
                    }
                }
            }
            Op::Gelu { x } => {
                let x = *x;
                ensure(grads, x, g.len());
                let src = self.nodes[x].out.data();
                let dx = grads[x].as_mut().expect("just ensured");
                for i in 0..g.len() {
                    dx[i] += g[i] * gelu_bwd(src[i]);
                }
            }
            Op::SoftmaxLast { x } => {
                let x = *x;
                let y = self.nodes[id].out.data();
                let n = *self.nodes[x].out.shape().last().expect("rank ≥ 1");
                let rows = y.len() / n;
                ensure(grads, x, y.len());
                let dx = grads[x].as_mut().expect("just ensured");
                for r in 0..rows {
                    let yr = &y[r * n..(r + 1) * n];
                    let gr = &g[r * n..(r + 1) * n];
                    let s = dot(gr, yr);
                    for j in 0..n {
                        dx[r * n + j] += yr[j] * (gr[j] - s);
                    }
                }
            }
            Op::Gather { table, indices } => {
                let table = *table;
                let d = self.nodes[table].out.shape()[1];
                ensure(grads, table, self.nodes[table].out.numel());
                let dt = grads[table].as_mut().expect("just ensured");
                for (r, &idx) in indices.iter().enumerate() {
                    for c in 0..d {
                        dt[idx * d + c] += g[r * d + c];
                    }
                }
            }
            Op::Reshape { x } => {
                let x = *x;
                ensure(grads, x, g.len());
                let dx = grads[x].as_mut().expect("just ensured");
                for (d, &v) in dx.iter_mut().zip(g.iter()) {
                    *d += v;
                }
            }
            Op::SumAll { x } => {
                let x = *x;
                let n = self.nodes[x].out.numel();
                ensure(grads, x, n);
                let dx = grads[x].as_mut().expect("just ensured");
                for d in dx.iter_mut() {
                    *d += g[0];
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                weights,
                smoothing,
                probs,
                ..
            } => {
                let logits = *logits;
                let v = self.nodes[logits].out.shape()[1];
                let rows = targets.len();
                ensure(grads, logits, rows * v);
                let dz = grads[logits].as_mut().expect("just ensured");
                let eps = *smoothing;
                let uniform = eps / F::from_f64_lossy(v as f64);
                for r in 0..rows {
                    let w = weights[r] * g[0];
                    if w == F::zero() {
                        continue;
                    }
                    for j in 0..v {
                        // d loss / d z = p − q, with q the smoothed target.
                        let mut q = uniform;
                        if j == targets[r] {
                            q += F::one() - eps;
                        }
                        dz[r * v + j] += w * (probs[r * v + j] - q);
                    }
                }
            }
        }
    }
}

/// GELU(x) with the tanh approximation.
fn gelu_fwd<F: Real>(x: F) -> F {
    let c = F::from_f64_lossy(0.797_884_560_802_865_4); // √(2/π)
    let a = F::from_f64_lossy(0.044_715);
    let half = F::from_f64_lossy(0.5);
    let u = c * (x + a * x * x * x);
    half * x * (F::one() + u.tanh())
}

/// d GELU(x) / dx for the tanh approximation.
fn gelu_bwd<F: Real>(x: F) -> F {
    let c = F::from_f64_lossy(0.797_884_560_802_865_4);
    let a = F::from_f64_lossy(0.044_715);
    let half = F::from_f64_lossy(0.5);
    let three = F::from_f64_lossy(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let du = c * (F::one() + three * a * x * x);
    half * (F::one() + t) + half * x * (F::one() - t * t) * du
}
