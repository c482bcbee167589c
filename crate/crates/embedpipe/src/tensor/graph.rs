use super::{Tensor, TensorError, TensorResult};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId, AddKind),
    Mul(NodeId, NodeId),
    /// scale * x + shift, elementwise with constant coefficients.
    Affine(NodeId, f64, f64),
    Concat(Vec<NodeId>, usize),
    Row(NodeId, usize),
    SliceCols(NodeId, usize, usize),
    Tanh(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    /// Argmax index per output dimension, recorded at forward time.
    TemporalMaxPool(NodeId, Vec<usize>),
    /// Fused gated recurrent cell: h' from (xg [3H], h_prev [H], uh [H,3H]).
    /// Forward intermediates are cached for the analytic backward.
    GruCell {
        xg: NodeId,
        h_prev: NodeId,
        uh: NodeId,
        hg: Vec<f64>,
        z: Vec<f64>,
        r: Vec<f64>,
        c: Vec<f64>,
    },
    Mean(NodeId),
    Sum(NodeId),
    Powf(NodeId, f64),
    EmbeddingLookup(NodeId, Vec<u32>),
    CrossEntropy {
        logits: NodeId,
        targets: Vec<u32>,
        ignore: Option<u32>,
        /// Softmax rows cached at forward time for the backward pass.
        probs: Vec<f64>,
        counted: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum AddKind {
    Same,
    /// rhs is a vector broadcast over the rows of lhs.
    RowBroadcast,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so the vector
/// itself is a topological order and backward is a single reverse sweep.
pub struct Graph {
    ops: Vec<Op>,
    values: Vec<Tensor>,
    grads: Vec<Option<Vec<f64>>>,
    requires: Vec<bool>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            ops: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            requires: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id.0]
    }

    /// Gradient accumulated on a leaf across backward passes.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    pub fn reset_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        debug_assert!(value.all_finite(), "non-finite forward output");
        let id = NodeId(self.ops.len());
        self.ops.push(op);
        self.values.push(value);
        self.grads.push(None);
        self.requires.push(requires_grad);
        id
    }

    fn req(&self, id: NodeId) -> bool {
        self.requires[id.0]
    }

    /// Insert a leaf. Finiteness is enforced here: every interior op then
    /// preserves it, so ops themselves only debug-assert.
    pub fn leaf(&mut self, t: &Tensor, requires_grad: bool) -> TensorResult<NodeId> {
        self.leaf_owned(t.clone(), requires_grad)
    }

    pub fn leaf_owned(&mut self, t: Tensor, requires_grad: bool) -> TensorResult<NodeId> {
        if !t.all_finite() {
            return Err(TensorError::NonFinite { op: "leaf" });
        }
        Ok(self.push(Op::Leaf, t, requires_grad))
    }

    pub fn constant(&mut self, t: &Tensor) -> TensorResult<NodeId> {
        self.leaf(t, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> TensorResult<NodeId> {
        let (m, k) = self.values[a.0].dims2("matmul")?;
        let (k2, n) = self.values[b.0].dims2("matmul")?;
        if k != k2 || self.values[b.0].shape().len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.values[a.0].shape().to_vec(),
                rhs: self.values[b.0].shape().to_vec(),
            });
        }
        let out_shape = if self.values[a.0].shape().len() == 1 {
            vec![n]
        } else {
            vec![m, n]
        };
        let mut out = vec![0.0; m * n];
        matmul_into(
            self.values[a.0].data(),
            self.values[b.0].data(),
            m,
            k,
            n,
            &mut out,
        );
        let req = self.req(a) || self.req(b);
        Ok(self.push(Op::Matmul(a, b), Tensor::new(out_shape, out)?, req))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> TensorResult<NodeId> {
        let (sa, sb) = (self.values[a.0].shape(), self.values[b.0].shape());
        let kind = if sa == sb {
            AddKind::Same
        } else if sa.len() == 2 && sb.len() == 1 && sa[1] == sb[0] {
            AddKind::RowBroadcast
        } else {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        };
        let bv = self.values[b.0].data();
        let data: Vec<f64> = match kind {
            AddKind::Same => self.values[a.0]
                .data()
                .iter()
                .zip(bv)
                .map(|(x, y)| x + y)
                .collect(),
            AddKind::RowBroadcast => {
                let n = sb[0];
                self.values[a.0]
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, x)| x + bv[i % n])
                    .collect()
            }
        };
        let req = self.req(a) || self.req(b);
        let shape = self.values[a.0].shape().to_vec();
        Ok(self.push(Op::Add(a, b, kind), Tensor::new(shape, data)?, req))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> TensorResult<NodeId> {
        if self.values[a.0].shape() != self.values[b.0].shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                lhs: self.values[a.0].shape().to_vec(),
                rhs: self.values[b.0].shape().to_vec(),
            });
        }
        let data: Vec<f64> = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(x, y)| x * y)
            .collect();
        let req = self.req(a) || self.req(b);
        let shape = self.values[a.0].shape().to_vec();
        Ok(self.push(Op::Mul(a, b), Tensor::new(shape, data)?, req))
    }

    pub fn affine(&mut self, x: NodeId, scale: f64, shift: f64) -> TensorResult<NodeId> {
        if !scale.is_finite() || !shift.is_finite() {
            return Err(TensorError::NonFinite { op: "affine" });
        }
        let data: Vec<f64> = self.values[x.0]
            .data()
            .iter()
            .map(|v| scale * v + shift)
            .collect();
        let req = self.req(x);
        let shape = self.values[x.0].shape().to_vec();
        Ok(self.push(Op::Affine(x, scale, shift), Tensor::new(shape, data)?, req))
    }

    /// Concatenate along `axis` (0 = stack rows, 1 = join columns).
    /// Rank-1 inputs are treated as single rows; an axis-1 concat of rank-1
    /// inputs yields a rank-1 output.
    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> TensorResult<NodeId> {
        if inputs.is_empty() || axis > 1 {
            return Err(TensorError::InvalidShape {
                op: "concat",
                shape: vec![inputs.len(), axis],
                reason: "need >= 1 input and axis in {0, 1}".into(),
            });
        }
        let dims: Vec<(usize, usize)> = inputs
            .iter()
            .map(|id| self.values[id.0].dims2("concat"))
            .collect::<TensorResult<_>>()?;
        let req = inputs.iter().any(|id| self.req(*id));
        match axis {
            0 => {
                let n = dims[0].1;
                if dims.iter().any(|d| d.1 != n) {
                    return Err(TensorError::ShapeMismatch {
                        op: "concat axis 0",
                        lhs: vec![dims[0].0, dims[0].1],
                        rhs: vec![0, 0],
                    });
                }
                let rows: usize = dims.iter().map(|d| d.0).sum();
                let mut data = Vec::with_capacity(rows * n);
                for id in inputs {
                    data.extend_from_slice(self.values[id.0].data());
                }
                Ok(self.push(
                    Op::Concat(inputs.to_vec(), 0),
                    Tensor::new(vec![rows, n], data)?,
                    req,
                ))
            }
            _ => {
                let rows = dims[0].0;
                if dims.iter().any(|d| d.0 != rows) {
                    return Err(TensorError::ShapeMismatch {
                        op: "concat axis 1",
                        lhs: vec![dims[0].0, dims[0].1],
                        rhs: vec![0, 0],
                    });
                }
                let total: usize = dims.iter().map(|d| d.1).sum();
                let mut data = vec![0.0; rows * total];
                let mut col = 0;
                for (id, (_, ni)) in inputs.iter().zip(&dims) {
                    let src = self.values[id.0].data();
                    for r in 0..rows {
                        data[r * total + col..r * total + col + ni]
                            .copy_from_slice(&src[r * ni..(r + 1) * ni]);
                    }
                    col += ni;
                }
                let all_rank1 = inputs
                    .iter()
                    .all(|id| self.values[id.0].shape().len() == 1);
                let shape = if all_rank1 && rows == 1 {
                    vec![total]
                } else {
                    vec![rows, total]
                };
                Ok(self.push(Op::Concat(inputs.to_vec(), 1), Tensor::new(shape, data)?, req))
            }
        }
    }

    /// Select row `t` of a rank-2 tensor as a vector.
    pub fn row(&mut self, x: NodeId, t: usize) -> TensorResult<NodeId> {
        let shape = self.values[x.0].shape();
        if shape.len() != 2 {
            return Err(TensorError::InvalidShape {
                op: "row",
                shape: shape.to_vec(),
                reason: "expected rank 2".into(),
            });
        }
        let (rows, n) = (shape[0], shape[1]);
        if t >= rows {
            return Err(TensorError::IndexOutOfRange {
                op: "row",
                index: t,
                bound: rows,
            });
        }
        let data = self.values[x.0].data()[t * n..(t + 1) * n].to_vec();
        let req = self.req(x);
        Ok(self.push(Op::Row(x, t), Tensor::new(vec![n], data)?, req))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> TensorResult<NodeId> {
        let (rows, n) = self.values[x.0].dims2("slice_cols")?;
        if start + len > n {
            return Err(TensorError::IndexOutOfRange {
                op: "slice_cols",
                index: start + len,
                bound: n,
            });
        }
        let src = self.values[x.0].data();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&src[r * n + start..r * n + start + len]);
        }
        let shape = if self.values[x.0].shape().len() == 1 {
            vec![len]
        } else {
            vec![rows, len]
        };
        let req = self.req(x);
        Ok(self.push(Op::SliceCols(x, start, len), Tensor::new(shape, data)?, req))
    }

    pub fn tanh(&mut self, x: NodeId) -> TensorResult<NodeId> {
        self.unary(x, Op::Tanh(x), |v| v.tanh())
    }

    pub fn relu(&mut self, x: NodeId) -> TensorResult<NodeId> {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> TensorResult<NodeId> {
        self.unary(x, Op::Sigmoid(x), |v| 1.0 / (1.0 + (-v).exp()))
    }

    fn unary(
        &mut self,
        x: NodeId,
        op: Op,
        f: impl Fn(f64) -> f64,
    ) -> TensorResult<NodeId> {
        let data: Vec<f64> = self.values[x.0].data().iter().map(|v| f(*v)).collect();
        let shape = self.values[x.0].shape().to_vec();
        let req = self.req(x);
        Ok(self.push(op, Tensor::new(shape, data)?, req))
    }

    /// Elementwise x^p; defined for strictly positive inputs.
    pub fn powf(&mut self, x: NodeId, p: f64) -> TensorResult<NodeId> {
        if self.values[x.0].data().iter().any(|v| *v <= 0.0) {
            return Err(TensorError::NonFinite { op: "powf" });
        }
        let data: Vec<f64> = self.values[x.0].data().iter().map(|v| v.powf(p)).collect();
        let shape = self.values[x.0].shape().to_vec();
        let req = self.req(x);
        Ok(self.push(Op::Powf(x, p), Tensor::new(shape, data)?, req))
    }

    /// Softmax over the last axis (rows of a rank-2 tensor).
    pub fn softmax(&mut self, x: NodeId) -> TensorResult<NodeId> {
        let (rows, n) = self.values[x.0].dims2("softmax")?;
        let src = self.values[x.0].data();
        let mut data = vec![0.0; rows * n];
        for r in 0..rows {
            softmax_row(&src[r * n..(r + 1) * n], &mut data[r * n..(r + 1) * n]);
        }
        let shape = self.values[x.0].shape().to_vec();
        let req = self.req(x);
        Ok(self.push(Op::Softmax(x), Tensor::new(shape, data)?, req))
    }

    pub fn log_softmax(&mut self, x: NodeId) -> TensorResult<NodeId> {
        let (rows, n) = self.values[x.0].dims2("log_softmax")?;
        let src = self.values[x.0].data();
        let mut data = vec![0.0; rows * n];
        for r in 0..rows {
            log_softmax_row(&src[r * n..(r + 1) * n], &mut data[r * n..(r + 1) * n]);
        }
        let shape = self.values[x.0].shape().to_vec();
        let req = self.req(x);
        Ok(self.push(Op::LogSoftmax(x), Tensor::new(shape, data)?, req))
    }

    /// One gated recurrent step: gates from the precomputed input product
    /// `xg` (= x·Wx + b, [3H]) and the recurrent product h_prev·uh, with
    /// the reset vector applied after the recurrent matmul.
    ///
    ///   z = σ(xg[0:H] + hg[0:H])
    ///   r = σ(xg[H:2H] + hg[H:2H])
    ///   c = tanh(xg[2H:3H] + r ⊙ hg[2H:3H])
    ///   h' = (1 − z) ⊙ h_prev + z ⊙ c
    pub fn gru_cell(&mut self, xg: NodeId, h_prev: NodeId, uh: NodeId) -> TensorResult<NodeId> {
        let h = self.values[h_prev.0].numel();
        if self.values[xg.0].numel() != 3 * h
            || self.values[uh.0].shape() != [h, 3 * h]
        {
            return Err(TensorError::ShapeMismatch {
                op: "gru_cell",
                lhs: self.values[xg.0].shape().to_vec(),
                rhs: self.values[uh.0].shape().to_vec(),
            });
        }
        let hp = self.values[h_prev.0].data();
        let mut hg = vec![0.0; 3 * h];
        matmul_into(hp, self.values[uh.0].data(), 1, h, 3 * h, &mut hg);
        let xgv = self.values[xg.0].data();
        let mut z = vec![0.0; h];
        let mut r = vec![0.0; h];
        let mut c = vec![0.0; h];
        let mut out = vec![0.0; h];
        for i in 0..h {
            z[i] = 1.0 / (1.0 + (-(xgv[i] + hg[i])).exp());
            r[i] = 1.0 / (1.0 + (-(xgv[h + i] + hg[h + i])).exp());
            c[i] = (xgv[2 * h + i] + r[i] * hg[2 * h + i]).tanh();
            out[i] = (-z[i] + 1.0) * hp[i] + z[i] * c[i];
        }
        let req = self.req(xg) || self.req(h_prev) || self.req(uh);
        Ok(self.push(
            Op::GruCell {
                xg,
                h_prev,
                uh,
                hg,
                z,
                r,
                c,
            },
            Tensor::new(vec![h], out)?,
            req,
        ))
    }

    /// Elementwise max over time of a time-major [T, D] tensor → [D].
    /// Gradient flows to the first maximal step of each dimension.
    pub fn temporal_max_pool(&mut self, x: NodeId) -> TensorResult<NodeId> {
        let shape = self.values[x.0].shape();
        if shape.len() != 2 || shape[0] == 0 {
            return Err(TensorError::InvalidShape {
                op: "temporal_max_pool",
                shape: shape.to_vec(),
                reason: "expected [T, D] with T >= 1".into(),
            });
        }
        let (t_len, d) = (shape[0], shape[1]);
        let src = self.values[x.0].data();
        let mut out = src[..d].to_vec();
        let mut argmax = vec![0usize; d];
        for t in 1..t_len {
            for i in 0..d {
                let v = src[t * d + i];
                if v > out[i] {
                    out[i] = v;
                    argmax[i] = t;
                }
            }
        }
        let req = self.req(x);
        Ok(self.push(
            Op::TemporalMaxPool(x, argmax),
            Tensor::new(vec![d], out)?,
            req,
        ))
    }

    pub fn mean(&mut self, x: NodeId) -> TensorResult<NodeId> {
        let n = self.values[x.0].numel();
        if n == 0 {
            return Err(TensorError::InvalidShape {
                op: "mean",
                shape: self.values[x.0].shape().to_vec(),
                reason: "empty tensor".into(),
            });
        }
        let s: f64 = self.values[x.0].data().iter().sum();
        let req = self.req(x);
        Ok(self.push(Op::Mean(x), Tensor::scalar(s / n as f64), req))
    }

    pub fn sum(&mut self, x: NodeId) -> TensorResult<NodeId> {
        let s: f64 = self.values[x.0].data().iter().sum();
        let req = self.req(x);
        Ok(self.push(Op::Sum(x), Tensor::scalar(s), req))
    }

    /// Gather rows of an embedding table: table [V, H] + ids → [T, H].
    pub fn embedding_lookup(&mut self, table: NodeId, ids: &[u32]) -> TensorResult<NodeId> {
        let shape = self.values[table.0].shape();
        if shape.len() != 2 {
            return Err(TensorError::InvalidShape {
                op: "embedding_lookup",
                shape: shape.to_vec(),
                reason: "table must be rank 2".into(),
            });
        }
        let (v, h) = (shape[0], shape[1]);
        if ids.is_empty() {
            return Err(TensorError::InvalidShape {
                op: "embedding_lookup",
                shape: vec![0],
                reason: "empty id sequence".into(),
            });
        }
        if let Some(bad) = ids.iter().find(|id| **id as usize >= v) {
            return Err(TensorError::IndexOutOfRange {
                op: "embedding_lookup",
                index: *bad as usize,
                bound: v,
            });
        }
        let src = self.values[table.0].data();
        let mut data = Vec::with_capacity(ids.len() * h);
        for id in ids {
            let r = *id as usize;
            data.extend_from_slice(&src[r * h..(r + 1) * h]);
        }
        let req = self.req(table);
        Ok(self.push(
            Op::EmbeddingLookup(table, ids.to_vec()),
            Tensor::new(vec![ids.len(), h], data)?,
            req,
        ))
    }

    /// Mean token cross-entropy of logits [T, V] against target ids,
    /// skipping positions whose target equals `ignore`.
    pub fn cross_entropy(
        &mut self,
        logits: NodeId,
        targets: &[u32],
        ignore: Option<u32>,
    ) -> TensorResult<NodeId> {
        let (rows, v) = self.values[logits.0].dims2("cross_entropy")?;
        if targets.len() != rows {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                lhs: vec![rows, v],
                rhs: vec![targets.len()],
            });
        }
        if let Some(bad) = targets.iter().find(|t| **t as usize >= v) {
            return Err(TensorError::IndexOutOfRange {
                op: "cross_entropy",
                index: *bad as usize,
                bound: v,
            });
        }
        let src = self.values[logits.0].data();
        let mut probs = vec![0.0; rows * v];
        let mut total = 0.0;
        let mut counted = 0usize;
        for r in 0..rows {
            let row = &src[r * v..(r + 1) * v];
            softmax_row(row, &mut probs[r * v..(r + 1) * v]);
            if ignore == Some(targets[r]) {
                continue;
            }
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            total += lse - row[targets[r] as usize];
            counted += 1;
        }
        if counted == 0 {
            return Err(TensorError::InvalidShape {
                op: "cross_entropy",
                shape: vec![rows, v],
                reason: "no non-ignored target positions".into(),
            });
        }
        let req = self.req(logits);
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                ignore,
                probs,
                counted,
            },
            Tensor::scalar(total / counted as f64),
            req,
        ))
    }

    /// Reverse sweep from a scalar loss. Interior gradients are scratch for
    /// the pass; each pass *adds* ∂loss/∂leaf into the leaves' buffers, so
    /// repeated calls accumulate. [`Graph::reset_grads`] clears the leaves.
    pub fn backward(&mut self, loss: NodeId) -> TensorResult<()> {
        if !self.values[loss.0].is_scalar() {
            return Err(TensorError::NonScalarLoss {
                shape: self.values[loss.0].shape().to_vec(),
            });
        }
        let mut scratch: Vec<Option<Vec<f64>>> = vec![None; self.ops.len()];
        if self.requires[loss.0] {
            scratch[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = scratch[i].take() else {
                continue;
            };
            self.distribute(&mut scratch, i, &g);
            if matches!(self.ops[i], Op::Leaf) {
                let buf = self.grads[i]
                    .get_or_insert_with(|| vec![0.0; self.values[i].numel()]);
                for (b, c) in buf.iter_mut().zip(&g) {
                    *b += c;
                }
            }
        }
        Ok(())
    }

    fn accumulate_into(
        &self,
        scratch: &mut [Option<Vec<f64>>],
        id: NodeId,
        contribution: &[f64],
    ) {
        if !self.requires[id.0] {
            return;
        }
        let buf =
            scratch[id.0].get_or_insert_with(|| vec![0.0; self.values[id.0].numel()]);
        for (b, c) in buf.iter_mut().zip(contribution) {
            *b += c;
        }
    }

    /// Scratch gradient buffer of a node, for ops that write sparse or
    /// structured contributions in place.
    fn scratch_buf<'s>(
        &self,
        scratch: &'s mut [Option<Vec<f64>>],
        id: NodeId,
    ) -> &'s mut Vec<f64> {
        scratch[id.0].get_or_insert_with(|| vec![0.0; self.values[id.0].numel()])
    }

    fn distribute(&self, scratch: &mut [Option<Vec<f64>>], i: usize, g: &[f64]) {
        match &self.ops[i] {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (a, b) = (*a, *b);
                let (m, k) = self.values[a.0].dims2("matmul").unwrap();
                let n = self.values[b.0].dims2("matmul").unwrap().1;
                if self.requires[a.0] {
                    // da[r,p] = Σ_c g[r,c] · b[p,c]
                    let bd = self.values[b.0].data();
                    let mut da = vec![0.0; m * k];
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            da[r * k + p] =
                                grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                    self.accumulate_into(scratch, a, &da);
                }
                if self.requires[b.0] {
                    // db = a^T [k,m] · g [m,n]
                    let ad = self.values[a.0].data();
                    let mut db = vec![0.0; k * n];
                    for r in 0..m {
                        for p in 0..k {
                            let av = ad[r * k + p];
                            if av != 0.0 {
                                for c in 0..n {
                                    db[p * n + c] += av * g[r * n + c];
                                }
                            }
                        }
                    }
                    self.accumulate_into(scratch, b, &db);
                }
            }
            Op::Add(a, b, kind) => {
                let (a, b) = (*a, *b);
                self.accumulate_into(scratch, a, g);
                match kind {
                    AddKind::Same => self.accumulate_into(scratch, b, g),
                    AddKind::RowBroadcast => {
                        let n = self.values[b.0].numel();
                        let mut db = vec![0.0; n];
                        for (idx, gv) in g.iter().enumerate() {
                            db[idx % n] += gv;
                        }
                        self.accumulate_into(scratch, b, &db);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if self.requires[a.0] {
                    let da: Vec<f64> = self.values[b.0]
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(bv, gv)| bv * gv)
                        .collect();
                    self.accumulate_into(scratch, a, &da);
                }
                if self.requires[b.0] {
                    let db: Vec<f64> = self.values[a.0]
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(av, gv)| av * gv)
                        .collect();
                    self.accumulate_into(scratch, b, &db);
                }
            }
            Op::Affine(x, scale, _) => {
                let (x, scale) = (*x, *scale);
                let dx: Vec<f64> = g.iter().map(|gv| scale * gv).collect();
                self.accumulate_into(scratch, x, &dx);
            }
            Op::Concat(inputs, axis) => {
                if *axis == 0 {
                    let mut offset = 0;
                    for id in inputs {
                        let n = self.values[id.0].numel();
                        let piece = g[offset..offset + n].to_vec();
                        self.accumulate_into(scratch, *id, &piece);
                        offset += n;
                    }
                } else {
                    let rows = self.values[inputs[0].0].dims2("concat").unwrap().0;
                    let total: usize = inputs
                        .iter()
                        .map(|id| self.values[id.0].dims2("concat").unwrap().1)
                        .sum();
                    let mut col = 0;
                    for id in inputs {
                        let ni = self.values[id.0].dims2("concat").unwrap().1;
                        let mut piece = vec![0.0; rows * ni];
                        for r in 0..rows {
                            piece[r * ni..(r + 1) * ni]
                                .copy_from_slice(&g[r * total + col..r * total + col + ni]);
                        }
                        self.accumulate_into(scratch, *id, &piece);
                        col += ni;
                    }
                }
            }
            Op::Row(x, t) => {
                let (x, t) = (*x, *t);
                if self.requires[x.0] {
                    let n = self.values[x.0].shape()[1];
                    let buf = self.scratch_buf(scratch, x);
                    for (b, gv) in buf[t * n..(t + 1) * n].iter_mut().zip(g) {
                        *b += gv;
                    }
                }
            }
            Op::SliceCols(x, start, len) => {
                let (x, start, len) = (*x, *start, *len);
                if self.requires[x.0] {
                    let (rows, n) = self.values[x.0].dims2("slice_cols").unwrap();
                    let buf = self.scratch_buf(scratch, x);
                    for r in 0..rows {
                        for (b, gv) in buf[r * n + start..r * n + start + len]
                            .iter_mut()
                            .zip(&g[r * len..(r + 1) * len])
                        {
                            *b += gv;
                        }
                    }
                }
            }
            Op::GruCell {
                xg,
                h_prev,
                uh,
                hg,
                z,
                r,
                c,
            } => {
                let (xg, h_prev, uh) = (*xg, *h_prev, *uh);
                let h = z.len();
                let hp = self.values[h_prev.0].data();
                let mut g_xg = vec![0.0; 3 * h];
                let mut g_hg = vec![0.0; 3 * h];
                for i in 0..h {
                    let gz_pre = g[i] * (c[i] - hp[i]) * z[i] * (1.0 - z[i]);
                    let gc_pre = g[i] * z[i] * (1.0 - c[i] * c[i]);
                    let gr_pre = gc_pre * hg[2 * h + i] * r[i] * (1.0 - r[i]);
                    g_xg[i] = gz_pre;
                    g_xg[h + i] = gr_pre;
                    g_xg[2 * h + i] = gc_pre;
                    g_hg[i] = gz_pre;
                    g_hg[h + i] = gr_pre;
                    g_hg[2 * h + i] = gc_pre * r[i];
                }
                if self.requires[xg.0] {
                    self.accumulate_into(scratch, xg, &g_xg);
                }
                if self.requires[h_prev.0] {
                    let uhv = self.values[uh.0].data();
                    let buf = self.scratch_buf(scratch, h_prev);
                    for (p, b) in buf.iter_mut().enumerate() {
                        // direct path + recurrent matmul path
                        *b += g[p] * (1.0 - z[p]);
                        *b += g_hg
                            .iter()
                            .zip(&uhv[p * 3 * h..(p + 1) * 3 * h])
                            .map(|(x, y)| x * y)
                            .sum::<f64>();
                    }
                }
                if self.requires[uh.0] {
                    let buf = self.scratch_buf(scratch, uh);
                    for p in 0..h {
                        let hv = hp[p];
                        if hv != 0.0 {
                            for (b, gv) in
                                buf[p * 3 * h..(p + 1) * 3 * h].iter_mut().zip(&g_hg)
                            {
                                *b += hv * gv;
                            }
                        }
                    }
                }
            }
            Op::Tanh(x) => {
                let x = *x;
                let dx: Vec<f64> = self.values[i]
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(y, gv)| (1.0 - y * y) * gv)
                    .collect();
                self.accumulate_into(scratch, x, &dx);
            }
            Op::Relu(x) => {
                let x = *x;
                let dx: Vec<f64> = self.values[x.0]
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(v, gv)| if *v > 0.0 { *gv } else { 0.0 })
                    .collect();
                self.accumulate_into(scratch, x, &dx);
            }
            Op::Sigmoid(x) => {
                let x = *x;
                let dx: Vec<f64> = self.values[i]
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(y, gv)| y * (1.0 - y) * gv)
                    .collect();
                self.accumulate_into(scratch, x, &dx);
            }
            Op::Softmax(x) => {
                let x = *x;
                let (rows, n) = self.values[i].dims2("softmax").unwrap();
                let y = self.values[i].data();
                let mut dx = vec![0.0; rows * n];
                for r in 0..rows {
                    let yr = &y[r * n..(r + 1) * n];
                    let gr = &g[r * n..(r + 1) * n];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..n {
                        dx[r * n + c] = yr[c] * (gr[c] - dot);
                    }
                }
                self.accumulate_into(scratch, x, &dx);
            }
            Op::LogSoftmax(x) => {
                let x = *x;
                let (rows, n) = self.values[i].dims2("log_softmax").unwrap();
                let y = self.values[i].data();
                let mut dx = vec![0.0; rows * n];
                for r in 0..rows {
                    let yr = &y[r * n..(r + 1) * n];
                    let gr = &g[r * n..(r + 1) * n];
                    let gsum: f64 = gr.iter().sum();
                    for c in 0..n {
                        dx[r * n + c] = gr[c] - yr[c].exp() * gsum;
                    }
                }
                self.accumulate_into(scratch, x, &dx);
            }
            Op::TemporalMaxPool(x, argmax) => {
                let x = *x;
                if self.requires[x.0] {
                    let d = argmax.len();
                    let mut dx = vec![0.0; self.values[x.0].numel()];
                    for (c, t) in argmax.iter().enumerate() {
                        dx[t * d + c] += g[c];
                    }
                    self.accumulate_into(scratch, x, &dx);
                }
            }
            Op::Mean(x) => {
                let x = *x;
                let n = self.values[x.0].numel() as f64;
                let dx = vec![g[0] / n; self.values[x.0].numel()];
                self.accumulate_into(scratch, x, &dx);
            }
            Op::Sum(x) => {
                let x = *x;
                let dx = vec![g[0]; self.values[x.0].numel()];
                self.accumulate_into(scratch, x, &dx);
            }
            Op::Powf(x, p) => {
                let (x, p) = (*x, *p);
                let dx: Vec<f64> = self.values[x.0]
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(v, gv)| p * v.powf(p - 1.0) * gv)
                    .collect();
                self.accumulate_into(scratch, x, &dx);
            }
            Op::EmbeddingLookup(table, ids) => {
                let table = *table;
                if self.requires[table.0] {
                    let h = self.values[table.0].shape()[1];
                    let buf = self.scratch_buf(scratch, table);
                    for (t, id) in ids.iter().enumerate() {
                        let r = *id as usize;
                        for (b, gv) in
                            buf[r * h..(r + 1) * h].iter_mut().zip(&g[t * h..(t + 1) * h])
                        {
                            *b += gv;
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                ignore,
                probs,
                counted,
            } => {
                let logits = *logits;
                if self.requires[logits.0] {
                    let (rows, v) = self.values[logits.0].dims2("cross_entropy").unwrap();
                    let scale = g[0] / *counted as f64;
                    let mut dx = vec![0.0; rows * v];
                    for r in 0..rows {
                        if *ignore == Some(targets[r]) {
                            continue;
                        }
                        for c in 0..v {
                            dx[r * v + c] = scale * probs[r * v + c];
                        }
                        dx[r * v + targets[r] as usize] -= scale;
                    }
                    self.accumulate_into(scratch, logits, &dx);
                }
            }
        }
    }
}

pub(crate) fn matmul_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    // ikj ordering: streams over b and out rows, cache-friendly for row-major.
    for r in 0..m {
        let arow = &a[r * k..(r + 1) * k];
        let orow = &mut out[r * n..(r + 1) * n];
        for (p, av) in arow.iter().enumerate() {
            if *av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, x) in out.iter_mut().zip(row) {
        *o = (x - m).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

pub(crate) fn log_softmax_row(row: &[f64], out: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    for (o, x) in out.iter_mut().zip(row) {
        *o = x - lse;
    }
}
