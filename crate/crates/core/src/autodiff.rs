//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends one node holding its output, so the tape order is
//! already a topological order and backward is a single reverse sweep that
//! visits each node exactly once. No fusion, no graph rewriting.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{
    gelu, gelu_grad, layer_norm_rows, matmul, matmul_nt, matmul_tn, softmax_rows, top_k_indices,
    Tensor,
};

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(String),
    MatMul,
    /// a · bᵀ
    MatMulNt,
    Add,
    /// (n×m) + (1×m) row broadcast
    AddBias,
    Mul,
    Scale(f64),
    Gelu,
    Softmax,
    /// Square attention matrix; column j of row i masked out for j > i.
    CausalSoftmax,
    /// inputs: x, gain, bias
    LayerNorm,
    /// input: table; token ids in aux
    Embedding,
    /// input: logits; target ids in aux; output: scalar mean NLL
    CrossEntropy,
    Sum,
    SliceCols { start: usize, len: usize },
    ConcatCols,
    /// Sparse softmax over the top-k entries of each row; unselected
    /// columns emit exactly zero and receive zero gradient.
    TopKSoftmax,
    /// inputs: a (n×m), s (n×1); row i of a scaled by s[i]
    RowScale,
    /// Row subset of the input; source row indices in aux.
    GatherRows,
    /// Rows spread back into a taller zero matrix; destination rows in aux.
    ScatterRows,
}

#[derive(Debug, Clone, Default)]
enum Aux {
    #[default]
    None,
    Ids(Vec<usize>),
    /// layer-norm cached (mean, inv_std) per row
    Norm(Vec<f64>, Vec<f64>),
    /// cross-entropy cached row softmax
    Probs(Vec<f64>),
    /// top-k selected column indices per row
    Picks(Vec<Vec<usize>>),
}

struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    aux: Aux,
}

/// A recorded compute graph. Single-threaded; build one per evaluation.
pub struct Tape {
    nodes: Vec<Node>,
    spent: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), spent: false }
    }

    fn push(&mut self, node: Node) -> NodeId {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    pub fn rows(&self, id: NodeId) -> usize {
        self.nodes[id].rows
    }

    pub fn cols(&self, id: NodeId) -> usize {
        self.nodes[id].cols
    }

    pub fn values(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].values
    }

    pub fn constant(&mut self, rows: usize, cols: usize, values: Vec<f64>) -> Result<NodeId> {
        if values.len() != rows * cols {
            return Err(Error::Config(format!(
                "constant of shape [{rows}, {cols}] wants {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(self.push(Node { op: Op::Constant, inputs: vec![], rows, cols, values, aux: Aux::None }))
    }

    /// Register a named parameter. Its gradient appears in the backward map
    /// even when the loss does not depend on it.
    pub fn param(&mut self, name: &str, tensor: &Tensor) -> NodeId {
        self.push(Node {
            op: Op::Param(name.to_string()),
            inputs: vec![],
            rows: tensor.rows(),
            cols: tensor.cols(),
            values: tensor.data.clone(),
            aux: Aux::None,
        })
    }

    fn shape_err(&self, op: &str, a: NodeId, b: NodeId) -> Error {
        Error::Config(format!(
            "{op}: shape mismatch [{}, {}] vs [{}, {}]",
            self.rows(a),
            self.cols(a),
            self.rows(b),
            self.cols(b)
        ))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = (self.rows(a), self.cols(a));
        let (k2, n) = (self.rows(b), self.cols(b));
        if k != k2 {
            return Err(self.shape_err("matmul", a, b));
        }
        let values = matmul(&self.nodes[a].values, &self.nodes[b].values, m, k, n);
        Ok(self.push(Node { op: Op::MatMul, inputs: vec![a, b], rows: m, cols: n, values, aux: Aux::None }))
    }

    /// a · bᵀ
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = (self.rows(a), self.cols(a));
        let (n, k2) = (self.rows(b), self.cols(b));
        if k != k2 {
            return Err(self.shape_err("matmul_nt", a, b));
        }
        let values = matmul_nt(&self.nodes[a].values, &self.nodes[b].values, m, k, n);
        Ok(self.push(Node { op: Op::MatMulNt, inputs: vec![a, b], rows: m, cols: n, values, aux: Aux::None }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.rows(a) != self.rows(b) || self.cols(a) != self.cols(b) {
            return Err(self.shape_err("add", a, b));
        }
        let values: Vec<f64> = self.nodes[a]
            .values
            .iter()
            .zip(&self.nodes[b].values)
            .map(|(x, y)| x + y)
            .collect();
        let (rows, cols) = (self.rows(a), self.cols(a));
        Ok(self.push(Node { op: Op::Add, inputs: vec![a, b], rows, cols, values, aux: Aux::None }))
    }

    /// (n×m) + (1×m), the bias row added to every row of `a`.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        if self.rows(bias) != 1 || self.cols(a) != self.cols(bias) {
            return Err(self.shape_err("add_bias", a, bias));
        }
        let (rows, cols) = (self.rows(a), self.cols(a));
        let mut values = self.nodes[a].values.clone();
        for r in 0..rows {
            for c in 0..cols {
                values[r * cols + c] += self.nodes[bias].values[c];
            }
        }
        Ok(self.push(Node { op: Op::AddBias, inputs: vec![a, bias], rows, cols, values, aux: Aux::None }))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.rows(a) != self.rows(b) || self.cols(a) != self.cols(b) {
            return Err(self.shape_err("mul", a, b));
        }
        let values: Vec<f64> = self.nodes[a]
            .values
            .iter()
            .zip(&self.nodes[b].values)
            .map(|(x, y)| x * y)
            .collect();
        let (rows, cols) = (self.rows(a), self.cols(a));
        Ok(self.push(Node { op: Op::Mul, inputs: vec![a, b], rows, cols, values, aux: Aux::None }))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let values: Vec<f64> = self.nodes[a].values.iter().map(|x| x * factor).collect();
        let (rows, cols) = (self.rows(a), self.cols(a));
        self.push(Node { op: Op::Scale(factor), inputs: vec![a], rows, cols, values, aux: Aux::None })
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let values: Vec<f64> = self.nodes[a].values.iter().map(|&x| gelu(x)).collect();
        let (rows, cols) = (self.rows(a), self.cols(a));
        self.push(Node { op: Op::Gelu, inputs: vec![a], rows, cols, values, aux: Aux::None })
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let (rows, cols) = (self.rows(a), self.cols(a));
        let mut values = self.nodes[a].values.clone();
        softmax_rows(&mut values, rows, cols);
        self.push(Node { op: Op::Softmax, inputs: vec![a], rows, cols, values, aux: Aux::None })
    }

    /// Softmax over a square score matrix with future positions masked out.
    pub fn causal_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let (rows, cols) = (self.rows(a), self.cols(a));
        if rows != cols {
            return Err(Error::Config(format!(
                "causal_softmax: wants a square matrix, got [{rows}, {cols}]"
            )));
        }
        let x = &self.nodes[a].values;
        let mut values = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &x[r * cols..r * cols + r + 1];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (c, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                values[r * cols + c] = e;
                sum += e;
            }
            for c in 0..=r {
                values[r * cols + c] /= sum;
            }
        }
        Ok(self.push(Node { op: Op::CausalSoftmax, inputs: vec![a], rows, cols, values, aux: Aux::None }))
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let (rows, cols) = (self.rows(x), self.cols(x));
        if self.rows(gain) != 1 || self.cols(gain) != cols || self.rows(bias) != 1 || self.cols(bias) != cols
        {
            return Err(Error::Config(format!(
                "layer_norm: x [{rows}, {cols}] with gain [{}, {}], bias [{}, {}]",
                self.rows(gain),
                self.cols(gain),
                self.rows(bias),
                self.cols(bias)
            )));
        }
        let (values, means, inv_stds) = layer_norm_rows(
            &self.nodes[x].values,
            &self.nodes[gain].values,
            &self.nodes[bias].values,
            rows,
            cols,
        );
        Ok(self.push(Node {
            op: Op::LayerNorm,
            inputs: vec![x, gain, bias],
            rows,
            cols,
            values,
            aux: Aux::Norm(means, inv_stds),
        }))
    }

    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let (vocab, dim) = (self.rows(table), self.cols(table));
        if let Some(&bad) = ids.iter().find(|&&t| t >= vocab) {
            return Err(Error::Input(format!("token id {bad} out of vocab (size {vocab})")));
        }
        let mut values = Vec::with_capacity(ids.len() * dim);
        for &t in ids {
            values.extend_from_slice(&self.nodes[table].values[t * dim..(t + 1) * dim]);
        }
        Ok(self.push(Node {
            op: Op::Embedding,
            inputs: vec![table],
            rows: ids.len(),
            cols: dim,
            values,
            aux: Aux::Ids(ids.to_vec()),
        }))
    }

    /// Mean negative log-likelihood of `targets` under row softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let (rows, cols) = (self.rows(logits), self.cols(logits));
        if targets.len() != rows {
            return Err(Error::Config(format!(
                "cross_entropy: {rows} logit rows vs {} targets",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= cols) {
            return Err(Error::Input(format!("target id {bad} out of vocab (size {cols})")));
        }
        let mut probs = self.nodes[logits].values.clone();
        softmax_rows(&mut probs, rows, cols);
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            loss -= probs[r * cols + t].ln();
        }
        loss /= rows as f64;
        Ok(self.push(Node {
            op: Op::CrossEntropy,
            inputs: vec![logits],
            rows: 1,
            cols: 1,
            values: vec![loss],
            aux: Aux::Probs(probs_with_targets(probs, targets)),
        }))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let total: f64 = self.nodes[a].values.iter().sum();
        self.push(Node { op: Op::Sum, inputs: vec![a], rows: 1, cols: 1, values: vec![total], aux: Aux::None })
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (rows, cols) = (self.rows(a), self.cols(a));
        if start + len > cols {
            return Err(Error::Config(format!(
                "slice_cols: [{start}, {}) out of [{rows}, {cols}]",
                start + len
            )));
        }
        let mut values = Vec::with_capacity(rows * len);
        for r in 0..rows {
            values.extend_from_slice(&self.nodes[a].values[r * cols + start..r * cols + start + len]);
        }
        Ok(self.push(Node {
            op: Op::SliceCols { start, len },
            inputs: vec![a],
            rows,
            cols: len,
            values,
            aux: Aux::None,
        }))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let rows = self.rows(parts[0]);
        if parts.iter().any(|&p| self.rows(p) != rows) {
            return Err(Error::Config("concat_cols: row counts differ".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.cols(p)).sum();
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let pc = self.cols(p);
                values.extend_from_slice(&self.nodes[p].values[r * pc..(r + 1) * pc]);
            }
        }
        Ok(self.push(Node {
            op: Op::ConcatCols,
            inputs: parts.to_vec(),
            rows,
            cols,
            values,
            aux: Aux::None,
        }))
    }

    /// Per-row softmax restricted to the top-k logits; other columns are
    /// exactly zero. Selection indices are treated as constants, so gradient
    /// flows only through the selected values.
    pub fn top_k_softmax(&mut self, logits: NodeId, k: usize) -> Result<NodeId> {
        let (rows, cols) = (self.rows(logits), self.cols(logits));
        if k == 0 || k > cols {
            return Err(Error::Config(format!("top_k_softmax: k={k} with {cols} columns")));
        }
        let x = &self.nodes[logits].values;
        let mut values = vec![0.0; rows * cols];
        let mut picks = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &x[r * cols..(r + 1) * cols];
            let sel = top_k_indices(row, k);
            let max = sel.iter().map(|&c| row[c]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for &c in &sel {
                let e = (row[c] - max).exp();
                values[r * cols + c] = e;
                sum += e;
            }
            for &c in &sel {
                values[r * cols + c] /= sum;
            }
            picks.push(sel);
        }
        Ok(self.push(Node {
            op: Op::TopKSoftmax,
            inputs: vec![logits],
            rows,
            cols,
            values,
            aux: Aux::Picks(picks),
        }))
    }

    /// Rows of `a` at the given indices, in the given order. Indices may
    /// repeat; gradients accumulate back onto the shared source row.
    pub fn gather_rows(&mut self, a: NodeId, rows: &[usize]) -> Result<NodeId> {
        let (n, cols) = (self.rows(a), self.cols(a));
        if rows.is_empty() {
            return Err(Error::Config("gather_rows: empty row set".into()));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::Config(format!("gather_rows: row {bad} out of {n}")));
        }
        let src = &self.nodes[a].values;
        let mut values = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            values.extend_from_slice(&src[r * cols..(r + 1) * cols]);
        }
        Ok(self.push(Node {
            op: Op::GatherRows,
            inputs: vec![a],
            rows: rows.len(),
            cols,
            values,
            aux: Aux::Ids(rows.to_vec()),
        }))
    }

    /// Rows of `a` placed at the given indices of an otherwise-zero
    /// `total_rows`-tall matrix. Indices must be unique and in range.
    pub fn scatter_rows(&mut self, a: NodeId, rows: &[usize], total_rows: usize) -> Result<NodeId> {
        let (n, cols) = (self.rows(a), self.cols(a));
        if rows.len() != n {
            return Err(Error::Config(format!(
                "scatter_rows: {} indices for {n} rows",
                rows.len()
            )));
        }
        let mut seen = vec![false; total_rows];
        for &r in rows {
            if r >= total_rows || seen[r] {
                return Err(Error::Config(format!(
                    "scatter_rows: index {r} out of range or repeated (total {total_rows})"
                )));
            }
            seen[r] = true;
        }
        let src = &self.nodes[a].values;
        let mut values = vec![0.0; total_rows * cols];
        for (i, &r) in rows.iter().enumerate() {
            values[r * cols..(r + 1) * cols].copy_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        Ok(self.push(Node {
            op: Op::ScatterRows,
            inputs: vec![a],
            rows: total_rows,
            cols,
            values,
            aux: Aux::Ids(rows.to_vec()),
        }))
    }

    /// Row i of `a` scaled by scalar s[i] (s is n×1).
    pub fn row_scale(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        let (rows, cols) = (self.rows(a), self.cols(a));
        if self.rows(s) != rows || self.cols(s) != 1 {
            return Err(self.shape_err("row_scale", a, s));
        }
        let mut values = self.nodes[a].values.clone();
        for r in 0..rows {
            let f = self.nodes[s].values[r];
            for v in &mut values[r * cols..(r + 1) * cols] {
                *v *= f;
            }
        }
        Ok(self.push(Node { op: Op::RowScale, inputs: vec![a, s], rows, cols, values, aux: Aux::None }))
    }

    /// Reverse sweep from a scalar loss. Returns gradients for every
    /// registered parameter (all-zero when the loss does not reach it).
    pub fn backward(&mut self, loss: NodeId) -> Result<BTreeMap<String, Tensor>> {
        if self.spent {
            return Err(Error::Usage("backward already ran on this graph".into()));
        }
        let node = &self.nodes[loss];
        if node.rows * node.cols != 1 {
            return Err(Error::Usage(format!(
                "backward wants a scalar loss, got [{}, {}]",
                node.rows, node.cols
            )));
        }
        self.spent = true;

        let mut grads: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.values.len()]).collect();
        grads[loss][0] = 1.0;

        for id in (0..=loss).rev() {
            let g = std::mem::take(&mut grads[id]);
            if g.iter().all(|&v| v == 0.0) {
                grads[id] = g;
                continue;
            }
            let (rows, cols) = (self.nodes[id].rows, self.nodes[id].cols);
            let inputs = self.nodes[id].inputs.clone();
            match self.nodes[id].op.clone() {
                Op::Constant | Op::Param(_) => {}
                Op::MatMul => {
                    let (a, b) = (inputs[0], inputs[1]);
                    let k = self.cols(a);
                    let da = matmul_nt(&g, &self.nodes[b].values, rows, cols, k);
                    let db = matmul_tn(&self.nodes[a].values, &g, k, rows, cols);
                    axpy(&mut grads[a], &da);
                    axpy(&mut grads[b], &db);
                }
                Op::MatMulNt => {
                    let (a, b) = (inputs[0], inputs[1]);
                    let k = self.cols(a);
                    let da = matmul(&g, &self.nodes[b].values, rows, cols, k);
                    let db = matmul_tn(&g, &self.nodes[a].values, cols, rows, k);
                    axpy(&mut grads[a], &da);
                    axpy(&mut grads[b], &db);
                }
                Op::Add => {
                    axpy(&mut grads[inputs[0]], &g);
                    axpy(&mut grads[inputs[1]], &g);
                }
                Op::AddBias => {
                    axpy(&mut grads[inputs[0]], &g);
                    let db = &mut grads[inputs[1]];
                    for r in 0..rows {
                        for c in 0..cols {
                            db[c] += g[r * cols + c];
                        }
                    }
                }
                Op::Mul => {
                    let (a, b) = (inputs[0], inputs[1]);
                    for i in 0..g.len() {
                        grads[a][i] += g[i] * self.nodes[b].values[i];
                    }
                    for i in 0..g.len() {
                        grads[b][i] += g[i] * self.nodes[a].values[i];
                    }
                }
                Op::Scale(f) => {
                    for i in 0..g.len() {
                        grads[inputs[0]][i] += g[i] * f;
                    }
                }
                Op::Gelu => {
                    let a = inputs[0];
                    for i in 0..g.len() {
                        grads[a][i] += g[i] * gelu_grad(self.nodes[a].values[i]);
                    }
                }
                Op::Softmax => {
                    let y = &self.nodes[id].values;
                    let da = &mut grads[inputs[0]];
                    for r in 0..rows {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..cols {
                            da[r * cols + c] += yr[c] * (gr[c] - dot);
                        }
                    }
                }
                Op::CausalSoftmax => {
                    let y = &self.nodes[id].values;
                    let da = &mut grads[inputs[0]];
                    for r in 0..rows {
                        let yr = &y[r * cols..r * cols + r + 1];
                        let gr = &g[r * cols..r * cols + r + 1];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..=r {
                            da[r * cols + c] += yr[c] * (gr[c] - dot);
                        }
                    }
                }
                Op::LayerNorm => {
                    let (x, gain, bias) = (inputs[0], inputs[1], inputs[2]);
                    let (means, inv_stds) = match &self.nodes[id].aux {
                        Aux::Norm(m, s) => (m.clone(), s.clone()),
                        _ => unreachable!(),
                    };
                    let xv = self.nodes[x].values.clone();
                    let gv = self.nodes[gain].values.clone();
                    for r in 0..rows {
                        let gr = &g[r * cols..(r + 1) * cols];
                        let xr = &xv[r * cols..(r + 1) * cols];
                        let inv = inv_stds[r];
                        let mean = means[r];
                        // dxhat, plus gain/bias grads in the same pass
                        let mut dxhat = vec![0.0; cols];
                        for c in 0..cols {
                            let xhat = (xr[c] - mean) * inv;
                            grads[gain][c] += gr[c] * xhat;
                            grads[bias][c] += gr[c];
                            dxhat[c] = gr[c] * gv[c];
                        }
                        let m1: f64 = dxhat.iter().sum::<f64>() / cols as f64;
                        let m2: f64 = dxhat
                            .iter()
                            .enumerate()
                            .map(|(c, d)| d * (xr[c] - mean) * inv)
                            .sum::<f64>()
                            / cols as f64;
                        for c in 0..cols {
                            let xhat = (xr[c] - mean) * inv;
                            grads[x][r * cols + c] += inv * (dxhat[c] - m1 - xhat * m2);
                        }
                    }
                }
                Op::Embedding => {
                    let table = inputs[0];
                    let ids = match &self.nodes[id].aux {
                        Aux::Ids(ids) => ids.clone(),
                        _ => unreachable!(),
                    };
                    for (r, &t) in ids.iter().enumerate() {
                        for c in 0..cols {
                            grads[table][t * cols + c] += g[r * cols + c];
                        }
                    }
                }
                Op::CrossEntropy => {
                    let logits = inputs[0];
                    let lcols = self.cols(logits);
                    let lrows = self.rows(logits);
                    let packed = match &self.nodes[id].aux {
                        Aux::Probs(p) => p.clone(),
                        _ => unreachable!(),
                    };
                    let (probs, targets) = unpack_probs(&packed, lrows, lcols);
                    let gs = g[0] / lrows as f64;
                    for r in 0..lrows {
                        for c in 0..lcols {
                            let one = if targets[r] == c { 1.0 } else { 0.0 };
                            grads[logits][r * lcols + c] += gs * (probs[r * lcols + c] - one);
                        }
                    }
                }
                Op::Sum => {
                    let da = &mut grads[inputs[0]];
                    for v in da.iter_mut() {
                        *v += g[0];
                    }
                }
                Op::SliceCols { start, len } => {
                    let a = inputs[0];
                    let acols = self.cols(a);
                    for r in 0..rows {
                        for c in 0..len {
                            grads[a][r * acols + start + c] += g[r * len + c];
                        }
                    }
                }
                Op::ConcatCols => {
                    let mut off = 0;
                    for &p in &inputs {
                        let pc = self.cols(p);
                        for r in 0..rows {
                            for c in 0..pc {
                                grads[p][r * pc + c] += g[r * cols + off + c];
                            }
                        }
                        off += pc;
                    }
                }
                Op::TopKSoftmax => {
                    let logits = inputs[0];
                    let y = &self.nodes[id].values;
                    let picks = match &self.nodes[id].aux {
                        Aux::Picks(p) => p.clone(),
                        _ => unreachable!(),
                    };
                    for (r, sel) in picks.iter().enumerate() {
                        let dot: f64 = sel.iter().map(|&c| y[r * cols + c] * g[r * cols + c]).sum();
                        for &c in sel {
                            grads[logits][r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot);
                        }
                    }
                }
                Op::GatherRows => {
                    let a = inputs[0];
                    let ids = match &self.nodes[id].aux {
                        Aux::Ids(ids) => ids.clone(),
                        _ => unreachable!(),
                    };
                    for (i, &r) in ids.iter().enumerate() {
                        axpy(&mut grads[a][r * cols..(r + 1) * cols], &g[i * cols..(i + 1) * cols]);
                    }
                }
                Op::ScatterRows => {
                    let a = inputs[0];
                    let ids = match &self.nodes[id].aux {
                        Aux::Ids(ids) => ids.clone(),
                        _ => unreachable!(),
                    };
                    for (i, &r) in ids.iter().enumerate() {
                        axpy(&mut grads[a][i * cols..(i + 1) * cols], &g[r * cols..(r + 1) * cols]);
                    }
                }
                Op::RowScale => {
                    let (a, s) = (inputs[0], inputs[1]);
                    for r in 0..rows {
                        let f = self.nodes[s].values[r];
                        let mut acc = 0.0;
                        for c in 0..cols {
                            grads[a][r * cols + c] += g[r * cols + c] * f;
                            acc += g[r * cols + c] * self.nodes[a].values[r * cols + c];
                        }
                        grads[s][r] += acc;
                    }
                }
            }
            grads[id] = g;
        }

        let mut out = BTreeMap::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if let Op::Param(name) = &node.op {
                let tensor = Tensor::new(vec![node.rows, node.cols], grads[id].clone())?;
                out.insert(name.clone(), tensor);
            }
        }
        Ok(out)
    }
}

fn axpy(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Packs targets (as f64) behind the probability block so a single Vec<f64>
/// aux slot carries both.
fn probs_with_targets(mut probs: Vec<f64>, targets: &[usize]) -> Vec<f64> {
    probs.extend(targets.iter().map(|&t| t as f64));
    probs
}

fn unpack_probs(packed: &[f64], rows: usize, cols: usize) -> (&[f64], Vec<usize>) {
    let split = rows * cols;
    let targets = packed[split..].iter().map(|&t| t as usize).collect();
    (&packed[..split], targets)
}
