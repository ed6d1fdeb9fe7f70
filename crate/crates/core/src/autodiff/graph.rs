use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

use super::GraphError;
use crate::tensor::{for_each_lane, Tensor};

/// Identity of a node inside one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Param,
    Constant,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    ScaleRows(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    DivScalar(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    LnFloor(NodeId, f64),
    Clamp(NodeId, f64, f64),
    Softmax(NodeId, usize),
    Sum(NodeId),
    Mean(NodeId),
    GatherRows(NodeId, Vec<usize>),
    Pick(NodeId, Vec<usize>),
    SliceCols(NodeId, usize, usize),
    SliceRows(NodeId, usize),
    ConcatRows(Vec<NodeId>),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Computation graph recorded during a forward pass.
///
/// Single-threaded by construction; independent graphs may live on
/// different threads.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    floor_hits: usize,
}

/// Gradients produced by one [`Graph::backward`] call, keyed by parameter leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to a parameter leaf. Leaves the
    /// loss does not depend on get zeros.
    pub fn get(&self, id: NodeId) -> Tensor {
        let shape = self.shapes[id.0].clone();
        match &self.grads[id.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn get_slice(&self, id: NodeId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<(), GraphError> {
    if a.shape() != b.shape() {
        return Err(GraphError::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out = beta * out + op(a) * op(b)` on row-major buffers.
#[allow(clippy::too_many_arguments)]
fn gemm(
    a: &[f64],
    a_dims: (usize, usize),
    trans_a: bool,
    b: &[f64],
    b_dims: (usize, usize),
    trans_b: bool,
    out: &mut [f64],
    beta: f64,
) {
    let a = ArrayView2::from_shape(a_dims, a).expect("lhs dims");
    let b = ArrayView2::from_shape(b_dims, b).expect("rhs dims");
    let a = if trans_a { a.reversed_axes() } else { a };
    let b = if trans_b { b.reversed_axes() } else { b };
    let mut c = ArrayViewMut2::from_shape((a.nrows(), b.ncols()), out).expect("out dims");
    general_mat_mul(1.0, &a, &b, beta, &mut c);
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Number of log-floor clamps applied by [`Graph::ln_floor`] so far.
    pub fn floor_hits(&self) -> usize {
        self.floor_hits
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn unary(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let value = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(op, value, rg)
    }

    fn binary(
        &mut self,
        a: NodeId,
        b: NodeId,
        op: Op,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<NodeId, GraphError> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape(va, vb, what)?;
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(op, value, rg))
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Param, value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, value, false)
    }

    /// A constant copy of `a`; gradients stop here.
    pub fn detach(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).clone();
        self.constant(value)
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 || self.value(a).rank() != 2 || self.value(b).rank() != 2 {
            return Err(GraphError::Shape(format!(
                "matmul {:?} x {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            self.value(a).data(),
            (m, k),
            false,
            self.value(b).data(),
            (k, n),
            false,
            &mut out,
            0.0,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), Tensor::matrix(m, n, out)?, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.binary(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.binary(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.binary(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// Element-wise quotient; both operands receive gradients.
    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.binary(a, b, Op::Div(a, b), "div", |x, y| x / y)
    }

    /// Adds a length-`k` row to every row of an `[n, k]` matrix.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId, GraphError> {
        let (n, k) = self.value(a).dims2()?;
        if self.value(row).numel() != k {
            return Err(GraphError::Shape(format!(
                "add_row {:?} + {:?}",
                self.value(a).shape(),
                self.value(row).shape()
            )));
        }
        let r = self.value(row).data();
        let mut out = self.value(a).data().to_vec();
        for chunk in out.chunks_mut(k) {
            for (o, &b) in chunk.iter_mut().zip(r) {
                *o += b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        let shape = self.value(a).shape().to_vec();
        debug_assert_eq!(shape.iter().product::<usize>(), n * k);
        Ok(self.push(Op::AddRow(a, row), Tensor::new(shape, out)?, rg))
    }

    /// Multiplies row `i` of an `[n, k]` matrix by `s[i]`.
    pub fn scale_rows(&mut self, a: NodeId, s: NodeId) -> Result<NodeId, GraphError> {
        let (n, k) = self.value(a).dims2()?;
        if self.value(s).numel() != n {
            return Err(GraphError::Shape(format!(
                "scale_rows {:?} by {:?}",
                self.value(a).shape(),
                self.value(s).shape()
            )));
        }
        let sv = self.value(s).data();
        let mut out = self.value(a).data().to_vec();
        for (chunk, &c) in out.chunks_mut(k).zip(sv) {
            chunk.iter_mut().for_each(|o| *o *= c);
        }
        let rg = self.rg(a) || self.rg(s);
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Op::ScaleRows(a, s), Tensor::new(shape, out)?, rg))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    /// Division by a fixed scalar, `x / c` rather than `x * (1 / c)`.
    pub fn div_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, Op::DivScalar(a, c), |x| x / c)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    /// `ln(max(x, floor))`; clamped entries pass no gradient and are counted.
    pub fn ln_floor(&mut self, a: NodeId, floor: f64) -> NodeId {
        let hits = self
            .value(a)
            .data()
            .iter()
            .filter(|&&x| !(x > floor))
            .count();
        self.floor_hits += hits;
        self.unary(a, Op::LnFloor(a, floor), |x| x.max(floor).ln())
    }

    /// `min(max(x, lo), hi)`; clamped entries pass no gradient.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId, GraphError> {
        let value = crate::tensor::softmax(self.value(a), axis)?;
        let rg = self.rg(a);
        Ok(self.push(Op::Softmax(a, axis), value, rg))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Op::Sum(a), Tensor::scalar(s), rg)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.numel() as f64;
        let rg = self.rg(a);
        self.push(Op::Mean(a), Tensor::scalar(s), rg)
    }

    /// Selects rows of an `[r, c]` table, e.g. an embedding lookup.
    pub fn gather_rows(&mut self, table: NodeId, rows: &[usize]) -> Result<NodeId, GraphError> {
        let (r, c) = self.value(table).dims2()?;
        if rows.is_empty() {
            return Err(GraphError::Shape("gather_rows with no indices".into()));
        }
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(GraphError::Shape(format!("row {bad} out of {r}")));
        }
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            out.extend_from_slice(self.value(table).row(i));
        }
        let rg = self.rg(table);
        let value = Tensor::matrix(rows.len(), c, out)?;
        Ok(self.push(Op::GatherRows(table, rows.to_vec()), value, rg))
    }

    /// Picks entry `cols[i]` from row `i` of an `[n, k]` matrix, giving `[n]`.
    pub fn pick(&mut self, a: NodeId, cols: &[usize]) -> Result<NodeId, GraphError> {
        let (n, k) = self.value(a).dims2()?;
        if cols.len() != n || cols.iter().any(|&c| c >= k) {
            return Err(GraphError::Shape(format!(
                "pick {} columns (< {k}) from {n} rows",
                cols.len()
            )));
        }
        let v = self.value(a).data();
        let out = cols.iter().enumerate().map(|(i, &c)| v[i * k + c]).collect();
        let rg = self.rg(a);
        Ok(self.push(Op::Pick(a, cols.to_vec()), Tensor::vector(out), rg))
    }

    /// Columns `start..end` of an `[n, k]` matrix.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId, GraphError> {
        let (n, k) = self.value(a).dims2()?;
        if start >= end || end > k {
            return Err(GraphError::Shape(format!("column slice {start}..{end} of {k}")));
        }
        let v = self.value(a).data();
        let mut out = Vec::with_capacity(n * (end - start));
        for r in 0..n {
            out.extend_from_slice(&v[r * k + start..r * k + end]);
        }
        let rg = self.rg(a);
        let value = Tensor::matrix(n, end - start, out)?;
        Ok(self.push(Op::SliceCols(a, start, end), value, rg))
    }

    /// Rows `start..end` of an `[n, k]` matrix.
    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId, GraphError> {
        let (n, k) = self.value(a).dims2()?;
        if start >= end || end > n {
            return Err(GraphError::Shape(format!("row slice {start}..{end} of {n}")));
        }
        let out = self.value(a).data()[start * k..end * k].to_vec();
        let rg = self.rg(a);
        let value = Tensor::matrix(end - start, k, out)?;
        Ok(self.push(Op::SliceRows(a, start), value, rg))
    }

    /// Stacks `[n_i, k]` matrices vertically.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId, GraphError> {
        let first = parts
            .first()
            .ok_or_else(|| GraphError::Shape("concat of nothing".into()))?;
        let (_, k) = self.value(*first).dims2()?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (n, kp) = self.value(p).dims2()?;
            if kp != k {
                return Err(GraphError::Shape(format!("concat widths {k} vs {kp}")));
            }
            rows += n;
            out.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let value = Tensor::matrix(rows, k, out)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), value, rg))
    }

    /// Propagates d(loss)/d(node) back to every parameter leaf.
    ///
    /// Each node is visited once, from `loss` down to the first node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, GraphError> {
        if !self.value(loss).is_scalar() {
            return Err(GraphError::Contract(format!(
                "loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Param | Op::Constant) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }

        // Only parameter leaves keep their gradients.
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Param) {
                grads[i] = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Vec<f64>>], id: NodeId) -> Option<&'a mut Vec<f64>> {
        if !self.rg(id) {
            return None;
        }
        let len = self.value(id).numel();
        Some(grads[id.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = node.value.data();
        match &node.op {
            Op::Param | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().unwrap();
                let (_, n) = self.value(*b).dims2().unwrap();
                if let Some(ga) = self.slot(grads, *a) {
                    // dA += G B^T
                    gemm(g, (m, n), false, self.value(*b).data(), (k, n), true, ga, 1.0);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    // dB += A^T G
                    gemm(self.value(*a).data(), (m, k), true, g, (m, n), false, gb, 1.0);
                }
            }
            Op::Add(a, b) => {
                for id in [a, b] {
                    if let Some(s) = self.slot(grads, *id) {
                        s.iter_mut().zip(g).for_each(|(s, &g)| *s += g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().zip(g).for_each(|(s, &g)| *s += g);
                }
                if let Some(s) = self.slot(grads, *b) {
                    s.iter_mut().zip(g).for_each(|(s, &g)| *s -= g);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(s) = self.slot(grads, *a) {
                    for ((s, &g), &y) in s.iter_mut().zip(g).zip(vb) {
                        *s += g * y;
                    }
                }
                if let Some(s) = self.slot(grads, *b) {
                    for ((s, &g), &x) in s.iter_mut().zip(g).zip(va) {
                        *s += g * x;
                    }
                }
            }
            Op::Div(a, b) => {
                let vb = self.value(*b).data();
                if let Some(s) = self.slot(grads, *a) {
                    for ((s, &g), &y) in s.iter_mut().zip(g).zip(vb) {
                        *s += g / y;
                    }
                }
                if let Some(s) = self.slot(grads, *b) {
                    // d(x/y)/dy = -(x/y)/y
                    for (((s, &g), &y), &q) in s.iter_mut().zip(g).zip(vb).zip(out) {
                        *s -= g * q / y;
                    }
                }
            }
            Op::AddRow(a, row) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().zip(g).for_each(|(s, &g)| *s += g);
                }
                let k = self.value(*row).numel();
                if let Some(s) = self.slot(grads, *row) {
                    for chunk in g.chunks(k) {
                        s.iter_mut().zip(chunk).for_each(|(s, &g)| *s += g);
                    }
                }
            }
            Op::ScaleRows(a, sc) => {
                let (_, k) = self.value(*a).dims2().unwrap();
                let sv = self.value(*sc).data();
                let va = self.value(*a).data();
                if let Some(s) = self.slot(grads, *a) {
                    for ((s, gr), &c) in s.chunks_mut(k).zip(g.chunks(k)).zip(sv) {
                        s.iter_mut().zip(gr).for_each(|(s, &g)| *s += g * c);
                    }
                }
                if let Some(s) = self.slot(grads, *sc) {
                    for ((s, gr), xr) in s.iter_mut().zip(g.chunks(k)).zip(va.chunks(k)) {
                        *s += gr.iter().zip(xr).map(|(g, x)| g * x).sum::<f64>();
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().zip(g).for_each(|(s, &g)| *s += g * c);
                }
            }
            Op::AddScalar(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().zip(g).for_each(|(s, &g)| *s += g);
                }
            }
            Op::DivScalar(a, c) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().zip(g).for_each(|(s, &g)| *s += g / c);
                }
            }
            Op::Sigmoid(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    for ((s, &g), &y) in s.iter_mut().zip(g).zip(out) {
                        *s += g * y * (1.0 - y);
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    for ((s, &g), &y) in s.iter_mut().zip(g).zip(out) {
                        *s += g * (1.0 - y * y);
                    }
                }
            }
            Op::Exp(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    for ((s, &g), &y) in s.iter_mut().zip(g).zip(out) {
                        *s += g * y;
                    }
                }
            }
            Op::Clamp(a, lo, hi) => {
                let va = self.value(*a).data();
                if let Some(s) = self.slot(grads, *a) {
                    for ((s, &g), &x) in s.iter_mut().zip(g).zip(va) {
                        if x >= *lo && x <= *hi {
                            *s += g;
                        }
                    }
                }
            }
            Op::LnFloor(a, floor) => {
                let va = self.value(*a).data();
                if let Some(s) = self.slot(grads, *a) {
                    for ((s, &g), &x) in s.iter_mut().zip(g).zip(va) {
                        if x > *floor {
                            *s += g / x;
                        }
                    }
                }
            }
            Op::Softmax(a, axis) => {
                let shape = self.value(*a).shape().to_vec();
                if let Some(s) = self.slot(grads, *a) {
                    for_each_lane(&shape, *axis, |lane| {
                        let dot: f64 = lane.clone().map(|i| out[i] * g[i]).sum();
                        for i in lane {
                            s[i] += out[i] * (g[i] - dot);
                        }
                    });
                }
            }
            Op::Sum(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().for_each(|s| *s += g[0]);
                }
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel() as f64;
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().for_each(|s| *s += g[0] / n);
                }
            }
            Op::GatherRows(table, rows) => {
                let (_, c) = self.value(*table).dims2().unwrap();
                if let Some(s) = self.slot(grads, *table) {
                    for (gr, &r) in g.chunks(c).zip(rows) {
                        s[r * c..(r + 1) * c]
                            .iter_mut()
                            .zip(gr)
                            .for_each(|(s, &g)| *s += g);
                    }
                }
            }
            Op::Pick(a, cols) => {
                let (_, k) = self.value(*a).dims2().unwrap();
                if let Some(s) = self.slot(grads, *a) {
                    for (i, (&c, &g)) in cols.iter().zip(g).enumerate() {
                        s[i * k + c] += g;
                    }
                }
            }
            Op::SliceCols(a, start, end) => {
                let (_, k) = self.value(*a).dims2().unwrap();
                let w = end - start;
                if let Some(s) = self.slot(grads, *a) {
                    for (r, gr) in g.chunks(w).enumerate() {
                        s[r * k + start..r * k + end]
                            .iter_mut()
                            .zip(gr)
                            .for_each(|(s, &g)| *s += g);
                    }
                }
            }
            Op::SliceRows(a, start) => {
                let (_, k) = self.value(*a).dims2().unwrap();
                if let Some(s) = self.slot(grads, *a) {
                    s[start * k..start * k + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(s, &g)| *s += g);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).numel();
                    if let Some(s) = self.slot(grads, *p) {
                        s.iter_mut()
                            .zip(&g[offset..offset + len])
                            .for_each(|(s, &g)| *s += g);
                    }
                    offset += len;
                }
            }
        }
    }
}
