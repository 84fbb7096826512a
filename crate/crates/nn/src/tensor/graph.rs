//! The computation graph: node construction, forward evaluation, backward
//! accumulation.

use super::store::ParameterStore;
use super::{Precision, TensorError};
use std::sync::Arc;

pub type NodeId = usize;

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
enum Op {
    /// Leaf with a preset value (constants and inputs).
    Value,
    /// Leaf bound to a named parameter at evaluation time.
    Param(String),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// Row-broadcast add: (r,c) + (1,c).
    AddBias(NodeId, NodeId),
    /// Row-broadcast multiply: (r,c) * (1,c).
    ScaleRows(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Tanh(NodeId),
    /// Clip values to [0, 1].
    HardTanh01(NodeId),
    Sigmoid(NodeId),
    SoftmaxRows(NodeId),
    LayerNormRows(NodeId),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceRows(NodeId, usize, usize),
    SliceCols(NodeId, usize, usize),
    SumAll(NodeId),
    MeanAll(NodeId),
    /// Output row i = input row indices[i].
    GatherRows(NodeId, Arc<Vec<usize>>),
    /// Output row segments[i] accumulates input row i.
    SegmentSumRows(NodeId, Arc<Vec<usize>>, usize),
    /// Mean of max(z,0) - z*y + ln(1 + exp(-|z|)) over all entries; the
    /// second argument is the target and receives no gradient.
    BceWithLogitsMean(NodeId, NodeId),
}

struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    grad: Vec<f64>,
    label: Option<String>,
}

pub struct Graph {
    precision: Precision,
    nodes: Vec<Node>,
    evaluated: bool,
}

impl Graph {
    pub fn new(precision: Precision) -> Graph {
        Graph {
            precision,
            nodes: Vec::new(),
            evaluated: false,
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn rows(&self, id: NodeId) -> usize {
        self.nodes[id].rows
    }

    pub fn cols(&self, id: NodeId) -> usize {
        self.nodes[id].cols
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        debug_assert!(self.evaluated);
        &self.nodes[id].value
    }

    pub fn grad(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].grad
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize) -> NodeId {
        self.nodes.push(Node {
            op,
            rows,
            cols,
            value: Vec::new(),
            grad: Vec::new(),
            label: None,
        });
        self.evaluated = false;
        self.nodes.len() - 1
    }

    pub fn set_label(&mut self, id: NodeId, label: &str) {
        self.nodes[id].label = Some(label.to_string());
    }

    fn node_name(&self, id: NodeId) -> String {
        match (&self.nodes[id].label, &self.nodes[id].op) {
            (Some(l), _) => format!("{l}#{id}"),
            (None, Op::Param(name)) => format!("param:{name}#{id}"),
            (None, op) => format!("{}#{id}", op_kind(op)),
        }
    }

    /// Leaf with explicit contents.
    pub fn value_node(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<NodeId, TensorError> {
        if data.len() != rows * cols {
            return Err(TensorError::Shape(format!(
                "value node expects {rows}x{cols} = {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        let id = self.push(Op::Value, rows, cols);
        self.nodes[id].value = data;
        Ok(id)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.value_node(1, 1, vec![v]).expect("scalar shape")
    }

    /// Leaf bound to `store[name]`; the current shape is checked now and the
    /// value is copied in at evaluation time.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<NodeId, TensorError> {
        let t = store
            .get(name)
            .ok_or_else(|| TensorError::Usage(format!("unknown parameter {name:?}")))?;
        Ok(self.push(Op::Param(name.to_string()), t.rows, t.cols))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<(), TensorError> {
        let (na, nb) = (&self.nodes[a], &self.nodes[b]);
        if na.rows != nb.rows || na.cols != nb.cols {
            return Err(TensorError::Shape(format!(
                "{what}: {}x{} vs {}x{}",
                na.rows, na.cols, nb.rows, nb.cols
            )));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (ar, ac) = (self.nodes[a].rows, self.nodes[a].cols);
        let (br, bc) = (self.nodes[b].rows, self.nodes[b].cols);
        if ac != br {
            return Err(TensorError::Shape(format!(
                "matmul: {ar}x{ac} . {br}x{bc}"
            )));
        }
        Ok(self.push(Op::MatMul(a, b), ar, bc))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let (r, c) = (self.nodes[a].rows, self.nodes[a].cols);
        self.push(Op::Transpose(a), c, r)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.same_shape(a, b, "add")?;
        let (r, c) = (self.nodes[a].rows, self.nodes[a].cols);
        Ok(self.push(Op::Add(a, b), r, c))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.same_shape(a, b, "sub")?;
        let (r, c) = (self.nodes[a].rows, self.nodes[a].cols);
        Ok(self.push(Op::Sub(a, b), r, c))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.same_shape(a, b, "mul")?;
        let (r, c) = (self.nodes[a].rows, self.nodes[a].cols);
        Ok(self.push(Op::Mul(a, b), r, c))
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, TensorError> {
        let (r, c) = (self.nodes[a].rows, self.nodes[a].cols);
        let (br, bc) = (self.nodes[bias].rows, self.nodes[bias].cols);
        if br != 1 || bc != c {
            return Err(TensorError::Shape(format!(
                "add_bias: {r}x{c} + {br}x{bc}"
            )));
        }
        Ok(self.push(Op::AddBias(a, bias), r, c))
    }

    pub fn scale_rows(&mut self, a: NodeId, gain: NodeId) -> Result<NodeId, TensorError> {
        let (r, c) = (self.nodes[a].rows, self.nodes[a].cols);
        let (gr, gc) = (self.nodes[gain].rows, self.nodes[gain].cols);
        if gr != 1 || gc != c {
            return Err(TensorError::Shape(format!(
                "scale_rows: {r}x{c} * {gr}x{gc}"
            )));
        }
        Ok(self.push(Op::ScaleRows(a, gain), r, c))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let (r, c) = (self.nodes[a].rows, self.nodes[a].cols);
        self.push(Op::Scale(a, k), r, c)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let (r, c) = (self.nodes[a].rows, self.nodes[a].cols);
        self.push(Op::Relu(a), r, c)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let (r, c) = (self.nodes[a].rows, self.nodes[a].cols);
        self.push(Op::Tanh(a), r, c)
    }

    pub fn hard_tanh01(&mut self, a: NodeId) -> NodeId {
        let (r, c) = (self.nodes[a].rows, self.nodes[a].cols);
        self.push(Op::HardTanh01(a), r, c)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let (r, c) = (self.nodes[a].rows, self.nodes[a].cols);
        self.push(Op::Sigmoid(a), r, c)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let (r, c) = (self.nodes[a].rows, self.nodes[a].cols);
        self.push(Op::SoftmaxRows(a), r, c)
    }

    pub fn layer_norm_rows(&mut self, a: NodeId) -> NodeId {
        let (r, c) = (self.nodes[a].rows, self.nodes[a].cols);
        self.push(Op::LayerNormRows(a), r, c)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::Shape("concat_rows of nothing".into()));
        }
        let cols = self.nodes[parts[0]].cols;
        let mut rows = 0;
        for &p in parts {
            if self.nodes[p].cols != cols {
                return Err(TensorError::Shape("concat_rows: column mismatch".into()));
            }
            rows += self.nodes[p].rows;
        }
        Ok(self.push(Op::ConcatRows(parts.to_vec()), rows, cols))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::Shape("concat_cols of nothing".into()));
        }
        let rows = self.nodes[parts[0]].rows;
        let mut cols = 0;
        for &p in parts {
            if self.nodes[p].rows != rows {
                return Err(TensorError::Shape("concat_cols: row mismatch".into()));
            }
            cols += self.nodes[p].cols;
        }
        Ok(self.push(Op::ConcatCols(parts.to_vec()), rows, cols))
    }

    pub fn slice_rows(&mut self, a: NodeId, lo: usize, hi: usize) -> Result<NodeId, TensorError> {
        let (r, c) = (self.nodes[a].rows, self.nodes[a].cols);
        if lo >= hi || hi > r {
            return Err(TensorError::Shape(format!("slice_rows {lo}..{hi} of {r}")));
        }
        Ok(self.push(Op::SliceRows(a, lo, hi), hi - lo, c))
    }

    pub fn slice_cols(&mut self, a: NodeId, lo: usize, hi: usize) -> Result<NodeId, TensorError> {
        let (r, c) = (self.nodes[a].rows, self.nodes[a].cols);
        if lo >= hi || hi > c {
            return Err(TensorError::Shape(format!("slice_cols {lo}..{hi} of {c}")));
        }
        Ok(self.push(Op::SliceCols(a, lo, hi), r, hi - lo))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        self.push(Op::SumAll(a), 1, 1)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        self.push(Op::MeanAll(a), 1, 1)
    }

    pub fn gather_rows(&mut self, a: NodeId, indices: Arc<Vec<usize>>) -> Result<NodeId, TensorError> {
        let (r, c) = (self.nodes[a].rows, self.nodes[a].cols);
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(TensorError::Shape(format!(
                "gather_rows index {bad} out of {r}"
            )));
        }
        let n = indices.len();
        Ok(self.push(Op::GatherRows(a, indices), n, c))
    }

    pub fn segment_sum_rows(
        &mut self,
        a: NodeId,
        segments: Arc<Vec<usize>>,
        n_out: usize,
    ) -> Result<NodeId, TensorError> {
        let (r, c) = (self.nodes[a].rows, self.nodes[a].cols);
        if segments.len() != r {
            return Err(TensorError::Shape(format!(
                "segment_sum_rows needs {r} segment ids, got {}",
                segments.len()
            )));
        }
        if let Some(&bad) = segments.iter().find(|&&s| s >= n_out) {
            return Err(TensorError::Shape(format!(
                "segment id {bad} out of {n_out}"
            )));
        }
        Ok(self.push(Op::SegmentSumRows(a, segments, n_out), n_out, c))
    }

    pub fn bce_with_logits_mean(&mut self, logits: NodeId, targets: NodeId) -> Result<NodeId, TensorError> {
        self.same_shape(logits, targets, "bce_with_logits")?;
        Ok(self.push(Op::BceWithLogitsMean(logits, targets), 1, 1))
    }

    /// Mean squared error between two same-shape nodes, composed from
    /// sub/mul/sum.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        let s = self.sum_all(sq);
        let n = (self.nodes[a].rows * self.nodes[a].cols) as f64;
        Ok(self.scale(s, 1.0 / n))
    }

    /// Scaled dot-product attention for a single head, composed from
    /// matmul/softmax: softmax(q kᵀ / sqrt(d)) v.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId) -> Result<NodeId, TensorError> {
        let d = self.nodes[q].cols;
        if self.nodes[k].cols != d {
            return Err(TensorError::Shape("attention: q/k width mismatch".into()));
        }
        if self.nodes[k].rows != self.nodes[v].rows {
            return Err(TensorError::Shape("attention: k/v length mismatch".into()));
        }
        let kt = self.transpose(k);
        let scores = self.matmul(q, kt)?;
        let scaled = self.scale(scores, 1.0 / (d as f64).sqrt());
        let attn = self.softmax_rows(scaled);
        self.matmul(attn, v)
    }

    /// Forward pass over the whole graph. Parameter leaves read from `store`.
    pub fn evaluate(&mut self, store: &ParameterStore) -> Result<(), TensorError> {
        for id in 0..self.nodes.len() {
            self.eval_node(id, store)?;
            let precision = self.precision;
            let node = &mut self.nodes[id];
            precision.round(&mut node.value);
            if node.value.iter().any(|v| !v.is_finite()) {
                return Err(TensorError::NonFinite(self.node_name(id)));
            }
        }
        self.evaluated = true;
        Ok(())
    }

    fn eval_node(&mut self, id: NodeId, store: &ParameterStore) -> Result<(), TensorError> {
        let (rows, cols) = (self.nodes[id].rows, self.nodes[id].cols);
        let op = self.nodes[id].op.clone();
        let out: Vec<f64> = match &op {
            Op::Value => return Ok(()),
            Op::Param(name) => {
                let t = store
                    .get(name)
                    .ok_or_else(|| TensorError::Usage(format!("unknown parameter {name:?}")))?;
                if t.rows != rows || t.cols != cols {
                    return Err(TensorError::Shape(format!(
                        "parameter {name:?} changed shape"
                    )));
                }
                t.data.clone()
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.nodes[*a].rows, self.nodes[*a].cols);
                let n = self.nodes[*b].cols;
                let mut out = vec![0.0; m * n];
                matmul(&self.nodes[*a].value, &self.nodes[*b].value, m, k, n, &mut out);
                out
            }
            Op::Transpose(a) => {
                let (r, c) = (self.nodes[*a].rows, self.nodes[*a].cols);
                let src = &self.nodes[*a].value;
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        out[j * r + i] = src[i * c + j];
                    }
                }
                out
            }
            Op::Add(a, b) => zip_map(&self.nodes[*a].value, &self.nodes[*b].value, |x, y| x + y),
            Op::Sub(a, b) => zip_map(&self.nodes[*a].value, &self.nodes[*b].value, |x, y| x - y),
            Op::Mul(a, b) => zip_map(&self.nodes[*a].value, &self.nodes[*b].value, |x, y| x * y),
            Op::AddBias(a, bias) => {
                let src = &self.nodes[*a].value;
                let b = &self.nodes[*bias].value;
                let mut out = Vec::with_capacity(src.len());
                for row in src.chunks_exact(cols) {
                    out.extend(row.iter().zip(b).map(|(x, y)| x + y));
                }
                out
            }
            Op::ScaleRows(a, gain) => {
                let src = &self.nodes[*a].value;
                let g = &self.nodes[*gain].value;
                let mut out = Vec::with_capacity(src.len());
                for row in src.chunks_exact(cols) {
                    out.extend(row.iter().zip(g).map(|(x, y)| x * y));
                }
                out
            }
            Op::Scale(a, k) => self.nodes[*a].value.iter().map(|x| x * k).collect(),
            Op::Relu(a) => self.nodes[*a].value.iter().map(|x| x.max(0.0)).collect(),
            Op::Tanh(a) => self.nodes[*a].value.iter().map(|x| x.tanh()).collect(),
            Op::HardTanh01(a) => self.nodes[*a].value.iter().map(|x| x.clamp(0.0, 1.0)).collect(),
            Op::Sigmoid(a) => self.nodes[*a].value.iter().map(|x| sigmoid(*x)).collect(),
            Op::SoftmaxRows(a) => {
                let src = &self.nodes[*a].value;
                let mut out = Vec::with_capacity(src.len());
                for row in src.chunks_exact(cols) {
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
                    let sum: f64 = exps.iter().sum();
                    out.extend(exps.iter().map(|e| e / sum));
                }
                out
            }
            Op::LayerNormRows(a) => {
                let src = &self.nodes[*a].value;
                let mut out = Vec::with_capacity(src.len());
                for row in src.chunks_exact(cols) {
                    let mean = row.iter().sum::<f64>() / cols as f64;
                    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / cols as f64;
                    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    out.extend(row.iter().map(|x| (x - mean) * inv));
                }
                out
            }
            Op::ConcatRows(parts) => {
                let mut out = Vec::with_capacity(rows * cols);
                for &p in parts {
                    out.extend_from_slice(&self.nodes[p].value);
                }
                out
            }
            Op::ConcatCols(parts) => {
                let mut out = vec![0.0; rows * cols];
                let mut offset = 0;
                for &p in parts {
                    let pc = self.nodes[p].cols;
                    for (i, row) in self.nodes[p].value.chunks_exact(pc).enumerate() {
                        out[i * cols + offset..i * cols + offset + pc].copy_from_slice(row);
                    }
                    offset += pc;
                }
                out
            }
            Op::SliceRows(a, lo, _hi) => {
                let c = self.nodes[*a].cols;
                self.nodes[*a].value[lo * c..(lo + rows) * c].to_vec()
            }
            Op::SliceCols(a, lo, hi) => {
                let c = self.nodes[*a].cols;
                let mut out = Vec::with_capacity(rows * cols);
                for row in self.nodes[*a].value.chunks_exact(c) {
                    out.extend_from_slice(&row[*lo..*hi]);
                }
                out
            }
            Op::SumAll(a) => vec![self.nodes[*a].value.iter().sum()],
            Op::MeanAll(a) => {
                let n = self.nodes[*a].value.len() as f64;
                vec![self.nodes[*a].value.iter().sum::<f64>() / n]
            }
            Op::GatherRows(a, indices) => {
                let c = self.nodes[*a].cols;
                let src = &self.nodes[*a].value;
                let mut out = Vec::with_capacity(indices.len() * c);
                for &i in indices.iter() {
                    out.extend_from_slice(&src[i * c..(i + 1) * c]);
                }
                out
            }
            Op::SegmentSumRows(a, segments, _n_out) => {
                let c = self.nodes[*a].cols;
                let src = &self.nodes[*a].value;
                let mut out = vec![0.0; rows * cols];
                for (i, &seg) in segments.iter().enumerate() {
                    let dst = &mut out[seg * c..(seg + 1) * c];
                    for (d, s) in dst.iter_mut().zip(&src[i * c..(i + 1) * c]) {
                        *d += s;
                    }
                }
                out
            }
            Op::BceWithLogitsMean(z, y) => {
                let zs = &self.nodes[*z].value;
                let ys = &self.nodes[*y].value;
                let n = zs.len() as f64;
                let total: f64 = zs
                    .iter()
                    .zip(ys)
                    .map(|(z, y)| z.max(0.0) - z * y + (1.0 + (-z.abs()).exp()).ln())
                    .sum();
                vec![total / n]
            }
        };
        self.nodes[id].value = out;
        Ok(())
    }

    /// Reverse-mode accumulation from a scalar loss node. Gradients are
    /// zeroed per call.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), TensorError> {
        if !self.evaluated {
            return Err(TensorError::Usage("backward before evaluate".into()));
        }
        if self.nodes[loss].rows != 1 || self.nodes[loss].cols != 1 {
            return Err(TensorError::Usage(format!(
                "backward requires a scalar loss, got {}x{}",
                self.nodes[loss].rows, self.nodes[loss].cols
            )));
        }
        for node in &mut self.nodes {
            node.grad = vec![0.0; node.value.len()];
        }
        self.nodes[loss].grad[0] = 1.0;

        for id in (0..=loss).rev() {
            // The node's own gradient is complete once every consumer has
            // contributed; rounding happens before propagation.
            let precision = self.precision;
            precision.round(&mut self.nodes[id].grad);
            if self.nodes[id].grad.iter().all(|&g| g == 0.0) {
                continue;
            }
            self.prop_node(id);
        }
        Ok(())
    }

    fn prop_node(&mut self, id: NodeId) {
        let op = self.nodes[id].op.clone();
        let cols = self.nodes[id].cols;
        match &op {
            Op::Value | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.nodes[*a].rows, self.nodes[*a].cols);
                let n = self.nodes[*b].cols;
                let dc = std::mem::take(&mut self.nodes[id].grad);
                {
                    // dA += dC . Bᵀ
                    let bv = &self.nodes[*b].value;
                    let mut da = vec![0.0; m * k];
                    matmul_nt(&dc, bv, m, n, k, &mut da);
                    accumulate(&mut self.nodes[*a].grad, &da);
                }
                {
                    // dB += Aᵀ . dC
                    let av = self.nodes[*a].value.clone();
                    let db_node = &mut self.nodes[*b];
                    let mut db = vec![0.0; k * n];
                    matmul_tn(&av, &dc, m, k, n, &mut db);
                    accumulate(&mut db_node.grad, &db);
                }
                self.nodes[id].grad = dc;
            }
            Op::Transpose(a) => {
                let (r, c) = (self.nodes[id].rows, self.nodes[id].cols);
                let g = std::mem::take(&mut self.nodes[id].grad);
                for i in 0..r {
                    for j in 0..c {
                        self.nodes[*a].grad[j * r + i] += g[i * c + j];
                    }
                }
                self.nodes[id].grad = g;
            }
            Op::Add(a, b) => {
                let g = std::mem::take(&mut self.nodes[id].grad);
                accumulate(&mut self.nodes[*a].grad, &g);
                accumulate(&mut self.nodes[*b].grad, &g);
                self.nodes[id].grad = g;
            }
            Op::Sub(a, b) => {
                let g = std::mem::take(&mut self.nodes[id].grad);
                accumulate(&mut self.nodes[*a].grad, &g);
                for (dst, s) in self.nodes[*b].grad.iter_mut().zip(&g) {
                    *dst -= s;
                }
                self.nodes[id].grad = g;
            }
            Op::Mul(a, b) => {
                let g = std::mem::take(&mut self.nodes[id].grad);
                let bv = self.nodes[*b].value.clone();
                for ((dst, s), v) in self.nodes[*a].grad.iter_mut().zip(&g).zip(&bv) {
                    *dst += s * v;
                }
                let av = self.nodes[*a].value.clone();
                for ((dst, s), v) in self.nodes[*b].grad.iter_mut().zip(&g).zip(&av) {
                    *dst += s * v;
                }
                self.nodes[id].grad = g;
            }
            Op::AddBias(a, bias) => {
                let g = std::mem::take(&mut self.nodes[id].grad);
                accumulate(&mut self.nodes[*a].grad, &g);
                let bgrad = &mut self.nodes[*bias].grad;
                for row in g.chunks_exact(cols) {
                    for (dst, s) in bgrad.iter_mut().zip(row) {
                        *dst += s;
                    }
                }
                self.nodes[id].grad = g;
            }
            Op::ScaleRows(a, gain) => {
                let g = std::mem::take(&mut self.nodes[id].grad);
                let gv = self.nodes[*gain].value.clone();
                {
                    let agrad = &mut self.nodes[*a].grad;
                    for (row_g, row_dst) in g.chunks_exact(cols).zip(agrad.chunks_exact_mut(cols)) {
                        for ((dst, s), k) in row_dst.iter_mut().zip(row_g).zip(&gv) {
                            *dst += s * k;
                        }
                    }
                }
                {
                    let av = self.nodes[*a].value.clone();
                    let ggrad = &mut self.nodes[*gain].grad;
                    for (row_g, row_a) in g.chunks_exact(cols).zip(av.chunks_exact(cols)) {
                        for ((dst, s), x) in ggrad.iter_mut().zip(row_g).zip(row_a) {
                            *dst += s * x;
                        }
                    }
                }
                self.nodes[id].grad = g;
            }
            Op::Scale(a, k) => {
                let g = std::mem::take(&mut self.nodes[id].grad);
                for (dst, s) in self.nodes[*a].grad.iter_mut().zip(&g) {
                    *dst += s * k;
                }
                self.nodes[id].grad = g;
            }
            Op::Relu(a) => {
                let g = std::mem::take(&mut self.nodes[id].grad);
                let av = self.nodes[*a].value.clone();
                for ((dst, s), x) in self.nodes[*a].grad.iter_mut().zip(&g).zip(&av) {
                    if *x > 0.0 {
                        *dst += s;
                    }
                }
                self.nodes[id].grad = g;
            }
            Op::Tanh(a) => {
                let g = std::mem::take(&mut self.nodes[id].grad);
                let yv = self.nodes[id].value.clone();
                for ((dst, s), y) in self.nodes[*a].grad.iter_mut().zip(&g).zip(&yv) {
                    *dst += s * (1.0 - y * y);
                }
                self.nodes[id].grad = g;
            }
            Op::HardTanh01(a) => {
                let g = std::mem::take(&mut self.nodes[id].grad);
                let av = self.nodes[*a].value.clone();
                for ((dst, s), x) in self.nodes[*a].grad.iter_mut().zip(&g).zip(&av) {
                    if *x > 0.0 && *x < 1.0 {
                        *dst += s;
                    }
                }
                self.nodes[id].grad = g;
            }
            Op::Sigmoid(a) => {
                let g = std::mem::take(&mut self.nodes[id].grad);
                let yv = self.nodes[id].value.clone();
                for ((dst, s), y) in self.nodes[*a].grad.iter_mut().zip(&g).zip(&yv) {
                    *dst += s * y * (1.0 - y);
                }
                self.nodes[id].grad = g;
            }
            Op::SoftmaxRows(a) => {
                let g = std::mem::take(&mut self.nodes[id].grad);
                let yv = self.nodes[id].value.clone();
                let agrad = &mut self.nodes[*a].grad;
                for ((row_g, row_y), row_dst) in g
                    .chunks_exact(cols)
                    .zip(yv.chunks_exact(cols))
                    .zip(agrad.chunks_exact_mut(cols))
                {
                    let dot: f64 = row_g.iter().zip(row_y).map(|(s, y)| s * y).sum();
                    for ((dst, s), y) in row_dst.iter_mut().zip(row_g).zip(row_y) {
                        *dst += y * (s - dot);
                    }
                }
                self.nodes[id].grad = g;
            }
            Op::LayerNormRows(a) => {
                let g = std::mem::take(&mut self.nodes[id].grad);
                let xv = self.nodes[*a].value.clone();
                let agrad = &mut self.nodes[*a].grad;
                let n = cols as f64;
                for ((row_g, row_x), row_dst) in g
                    .chunks_exact(cols)
                    .zip(xv.chunks_exact(cols))
                    .zip(agrad.chunks_exact_mut(cols))
                {
                    let mean = row_x.iter().sum::<f64>() / n;
                    let var = row_x.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
                    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    let xhat: Vec<f64> = row_x.iter().map(|x| (x - mean) * inv).collect();
                    let mean_g = row_g.iter().sum::<f64>() / n;
                    let mean_gx = row_g.iter().zip(&xhat).map(|(s, h)| s * h).sum::<f64>() / n;
                    for ((dst, s), h) in row_dst.iter_mut().zip(row_g).zip(&xhat) {
                        *dst += inv * (s - mean_g - h * mean_gx);
                    }
                }
                self.nodes[id].grad = g;
            }
            Op::ConcatRows(parts) => {
                let g = std::mem::take(&mut self.nodes[id].grad);
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p].value.len();
                    accumulate(&mut self.nodes[p].grad, &g[offset..offset + len]);
                    offset += len;
                }
                self.nodes[id].grad = g;
            }
            Op::ConcatCols(parts) => {
                let g = std::mem::take(&mut self.nodes[id].grad);
                let rows = self.nodes[id].rows;
                let mut offset = 0;
                for &p in parts {
                    let pc = self.nodes[p].cols;
                    let pgrad = &mut self.nodes[p].grad;
                    for i in 0..rows {
                        let src = &g[i * cols + offset..i * cols + offset + pc];
                        for (dst, s) in pgrad[i * pc..(i + 1) * pc].iter_mut().zip(src) {
                            *dst += s;
                        }
                    }
                    offset += pc;
                }
                self.nodes[id].grad = g;
            }
            Op::SliceRows(a, lo, _hi) => {
                let g = std::mem::take(&mut self.nodes[id].grad);
                let c = self.nodes[*a].cols;
                accumulate(&mut self.nodes[*a].grad[lo * c..lo * c + g.len()], &g);
                self.nodes[id].grad = g;
            }
            Op::SliceCols(a, lo, _hi) => {
                let g = std::mem::take(&mut self.nodes[id].grad);
                let c = self.nodes[*a].cols;
                let agrad = &mut self.nodes[*a].grad;
                for (i, row) in g.chunks_exact(cols).enumerate() {
                    for (dst, s) in agrad[i * c + lo..i * c + lo + cols].iter_mut().zip(row) {
                        *dst += s;
                    }
                }
                self.nodes[id].grad = g;
            }
            Op::SumAll(a) => {
                let s = self.nodes[id].grad[0];
                for dst in self.nodes[*a].grad.iter_mut() {
                    *dst += s;
                }
            }
            Op::MeanAll(a) => {
                let n = self.nodes[*a].value.len() as f64;
                let s = self.nodes[id].grad[0] / n;
                for dst in self.nodes[*a].grad.iter_mut() {
                    *dst += s;
                }
            }
            Op::GatherRows(a, indices) => {
                let g = std::mem::take(&mut self.nodes[id].grad);
                let c = self.nodes[*a].cols;
                let agrad = &mut self.nodes[*a].grad;
                for (i, &src_row) in indices.iter().enumerate() {
                    for (dst, s) in agrad[src_row * c..(src_row + 1) * c]
                        .iter_mut()
                        .zip(&g[i * c..(i + 1) * c])
                    {
                        *dst += s;
                    }
                }
                self.nodes[id].grad = g;
            }
            Op::SegmentSumRows(a, segments, _n_out) => {
                let g = std::mem::take(&mut self.nodes[id].grad);
                let c = self.nodes[*a].cols;
                let agrad = &mut self.nodes[*a].grad;
                for (i, &seg) in segments.iter().enumerate() {
                    for (dst, s) in agrad[i * c..(i + 1) * c]
                        .iter_mut()
                        .zip(&g[seg * c..(seg + 1) * c])
                    {
                        *dst += s;
                    }
                }
                self.nodes[id].grad = g;
            }
            Op::BceWithLogitsMean(z, y) => {
                let s = self.nodes[id].grad[0];
                let zs = self.nodes[*z].value.clone();
                let ys = self.nodes[*y].value.clone();
                let n = zs.len() as f64;
                let zgrad = &mut self.nodes[*z].grad;
                for ((dst, z), y) in zgrad.iter_mut().zip(&zs).zip(&ys) {
                    *dst += s * (sigmoid(*z) - y) / n;
                }
            }
        }
    }

    /// Gradients of every parameter leaf, summed per name.
    pub fn param_grads(&self) -> super::GradMap {
        let mut map = super::GradMap::new();
        for node in &self.nodes {
            if let Op::Param(name) = &node.op {
                let entry = map
                    .entry(name.clone())
                    .or_insert_with(|| vec![0.0; node.grad.len()]);
                for (dst, s) in entry.iter_mut().zip(&node.grad) {
                    *dst += s;
                }
            }
        }
        map
    }
}

fn op_kind(op: &Op) -> &'static str {
    match op {
        Op::Value => "value",
        Op::Param(_) => "param",
        Op::MatMul(..) => "matmul",
        Op::Transpose(_) => "transpose",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::AddBias(..) => "add_bias",
        Op::ScaleRows(..) => "scale_rows",
        Op::Scale(..) => "scale",
        Op::Relu(_) => "relu",
        Op::Tanh(_) => "tanh",
        Op::HardTanh01(_) => "hard_tanh01",
        Op::Sigmoid(_) => "sigmoid",
        Op::SoftmaxRows(_) => "softmax_rows",
        Op::LayerNormRows(_) => "layer_norm_rows",
        Op::ConcatRows(_) => "concat_rows",
        Op::ConcatCols(_) => "concat_cols",
        Op::SliceRows(..) => "slice_rows",
        Op::SliceCols(..) => "slice_cols",
        Op::SumAll(_) => "sum_all",
        Op::MeanAll(_) => "mean_all",
        Op::GatherRows(..) => "gather_rows",
        Op::SegmentSumRows(..) => "segment_sum_rows",
        Op::BceWithLogitsMean(..) => "bce_with_logits",
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()
}

fn accumulate(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// C (m,n) += A (m,k) . B (k,n)
fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (c, &bv) in crow.iter_mut().zip(brow) {
                *c += av * bv;
            }
        }
    }
}

/// C (m,n) += A (m,k) . Bᵀ where B is (n,k)
fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut out[i * n..(i + 1) * n];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            crow[j] += acc;
        }
    }
}

/// C (k,n) += Aᵀ . B where A is (m,k), B is (m,n)
fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let crow = &mut out[p * n..(p + 1) * n];
            for (c, &bv) in crow.iter_mut().zip(brow) {
                *c += av * bv;
            }
        }
    }
}

/// Sinusoidal position encoding table: row t holds the encoding of time t.
pub fn sinusoidal_encoding_table(len: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; len * dim];
    for t in 0..len {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let rate = 1.0 / 10000f64.powf(2.0 * pair / dim as f64);
            let angle = t as f64 * rate;
            out[t * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    out
}
