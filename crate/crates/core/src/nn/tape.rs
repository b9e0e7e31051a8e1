//! Reverse-mode differentiation over a recorded list of vector operations.
//!
//! Every node holds a flat `f64` vector; matrices only appear as parameters
//! consumed by [`Tape::matvec`] and [`Tape::gather`], which read them from
//! the [`ParamStore`] in place. Values live in one arena in recording order,
//! so a node's inputs always precede it.

use super::params::{Grads, ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(ParamId),
    /// `W[:, start..start + dim(x)] x`
    MatVec(ParamId, usize, NodeId),
    Add(NodeId, NodeId),
    AddParam(NodeId, ParamId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    MulConst(NodeId, Vec<f64>),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Slice(NodeId, usize),
    Concat(Vec<NodeId>),
    Dot(NodeId, NodeId),
    MaskedSoftmax(NodeId, Vec<bool>),
    WeightedSum(Vec<NodeId>, NodeId),
    MaxPool(Vec<NodeId>),
    Gather(ParamId, usize),
    BceLogits(NodeId, f64),
    Sum(Vec<NodeId>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::MatVec(..) => "matvec",
            Op::Add(..) => "add",
            Op::AddParam(..) => "add_param",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::MulConst(..) => "mul_const",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Slice(..) => "slice",
            Op::Concat(_) => "concat",
            Op::Dot(..) => "dot",
            Op::MaskedSoftmax(..) => "masked_softmax",
            Op::WeightedSum(..) => "weighted_sum",
            Op::MaxPool(_) => "max_pool",
            Op::Gather(..) => "gather",
            Op::BceLogits(..) => "bce_logits",
            Op::Sum(_) => "sum",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    off: usize,
    len: usize,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    values: Vec<f64>,
    grads: Vec<f64>,
    fault: Option<&'static str>,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators: lets the compiler vectorize while keeping a fixed
    // summation order
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..n {
        s += a[i] * b[i];
    }
    s
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Tape<'p> {
        Tape {
            params,
            nodes: Vec::with_capacity(512),
            values: Vec::with_capacity(16 * 1024),
            grads: Vec::new(),
            fault: None,
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: impl IntoIterator<Item = f64>) -> NodeId {
        let off = self.values.len();
        self.values.extend(value);
        let len = self.values.len() - off;
        if self.fault.is_none() && self.values[off..].iter().any(|v| !v.is_finite()) {
            self.fault = Some(op.name());
        }
        self.nodes.push(Node { op, off, len });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        let n = &self.nodes[id.0];
        &self.values[n.off..n.off + n.len]
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.value(id)[0]
    }

    pub fn dim(&self, id: NodeId) -> usize {
        self.nodes[id.0].len
    }

    /// Fails if any recorded value was NaN or infinite.
    pub fn check(&self) -> Result<()> {
        match self.fault {
            Some(op) => Err(Error::NonFinite(op.to_string())),
            None => Ok(()),
        }
    }

    /// A leaf. Its gradient is readable through [`Tape::grad`] after
    /// [`Tape::backward`].
    pub fn input(&mut self, value: &[f64]) -> NodeId {
        self.push(Op::Input, value.iter().copied())
    }

    pub fn input_owned(&mut self, value: Vec<f64>) -> NodeId {
        let off = self.values.len();
        let len = value.len();
        if self.fault.is_none() && value.iter().any(|v| !v.is_finite()) {
            self.fault = Some("input");
        }
        self.values.extend(value);
        self.nodes.push(Node { op: Op::Input, off, len });
        NodeId(self.nodes.len() - 1)
    }

    pub fn zeros(&mut self, len: usize) -> NodeId {
        self.push(Op::Input, std::iter::repeat_n(0.0, len))
    }

    /// A parameter used as a vector.
    pub fn param(&mut self, p: ParamId) -> NodeId {
        let params = self.params;
        self.push(Op::Param(p), params.values(p).iter().copied())
    }

    /// `W x` for a parameter matrix `W`.
    pub fn matvec(&mut self, w: ParamId, x: NodeId) -> Result<NodeId> {
        let cols = self.params.get(w).cols;
        if cols != self.dim(x) {
            let m = self.params.get(w);
            return Err(Error::Shape(format!(
                "`{}` is {}x{}, input has {} components",
                m.name,
                m.rows,
                m.cols,
                self.dim(x)
            )));
        }
        self.matvec_cols(w, 0, x)
    }

    /// `W[:, start..start + dim(x)] x`: the product with a block of columns,
    /// as if `x` were zero-padded to the full width.
    pub fn matvec_cols(&mut self, w: ParamId, start: usize, x: NodeId) -> Result<NodeId> {
        let params = self.params;
        let m = params.get(w);
        let n = self.dim(x);
        if start + n > m.cols {
            return Err(Error::Shape(format!(
                "`{}` is {}x{}, columns {start}..{} requested",
                m.name,
                m.rows,
                m.cols,
                start + n
            )));
        }
        let off = self.values.len();
        let xo = self.nodes[x.0].off;
        self.values.reserve(m.rows);
        for r in 0..m.rows {
            let row = &m.values[r * m.cols + start..r * m.cols + start + n];
            let v = dot(row, &self.values[xo..xo + n]);
            self.values.push(v);
        }
        if self.fault.is_none() && self.values[off..].iter().any(|v| !v.is_finite()) {
            self.fault = Some("matvec");
        }
        self.nodes.push(Node {
            op: Op::MatVec(w, start, x),
            off,
            len: m.rows,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// `W x + b`.
    pub fn affine(&mut self, w: ParamId, x: NodeId, b: ParamId) -> Result<NodeId> {
        let y = self.matvec(w, x)?;
        self.add_param(y, b)
    }

    fn same_dim(&self, a: NodeId, b: NodeId, what: &str) -> Result<usize> {
        let (da, db) = (self.dim(a), self.dim(b));
        if da != db {
            return Err(Error::Shape(format!("{what}: {da} vs {db}")));
        }
        Ok(da)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_dim(a, b, "add")?;
        let v: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn add_param(&mut self, a: NodeId, p: ParamId) -> Result<NodeId> {
        let pv = self.params.values(p);
        if pv.len() != self.dim(a) {
            return Err(Error::Shape(format!("add_param `{}`: {} vs {}", self.params.get(p).name, pv.len(), self.dim(a))));
        }
        let v: Vec<f64> = self.value(a).iter().zip(pv).map(|(x, y)| x + y).collect();
        Ok(self.push(Op::AddParam(a, p), v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_dim(a, b, "mul")?;
        let v: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v: Vec<f64> = self.value(a).iter().map(|x| x * c).collect();
        self.push(Op::Scale(a, c), v)
    }

    /// Elementwise product with a constant vector (dropout masks).
    pub fn mul_const(&mut self, a: NodeId, m: Vec<f64>) -> Result<NodeId> {
        if m.len() != self.dim(a) {
            return Err(Error::Shape(format!("mul_const: {} vs {}", m.len(), self.dim(a))));
        }
        let v: Vec<f64> = self.value(a).iter().zip(&m).map(|(x, y)| x * y).collect();
        Ok(self.push(Op::MulConst(a, m), v))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v: Vec<f64> = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        self.push(Op::Sigmoid(a), v)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v: Vec<f64> = self.value(a).iter().map(|x| x.tanh()).collect();
        self.push(Op::Tanh(a), v)
    }

    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        if start + len > self.dim(a) {
            return Err(Error::Shape(format!("slice {start}..{} of {}", start + len, self.dim(a))));
        }
        let v = self.value(a)[start..start + len].to_vec();
        Ok(self.push(Op::Slice(a, start), v))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let v: Vec<f64> = parts.iter().flat_map(|&p| self.value(p).iter().copied()).collect();
        self.push(Op::Concat(parts.to_vec()), v)
    }

    /// Inner product, a 1-vector.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_dim(a, b, "dot")?;
        let v = dot(self.value(a), self.value(b));
        Ok(self.push(Op::Dot(a, b), [v]))
    }

    /// Softmax over the unmasked entries; masked entries are exactly 0.
    pub fn masked_softmax(&mut self, a: NodeId, mask: &[bool]) -> Result<NodeId> {
        if mask.len() != self.dim(a) {
            return Err(Error::Shape(format!("mask of {} for {} scores", mask.len(), self.dim(a))));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::AllMasked);
        }
        let x = self.value(a);
        let max = x
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut v: Vec<f64> = x
            .iter()
            .zip(mask)
            .map(|(&s, &m)| if m { (s - max).exp() } else { 0.0 })
            .collect();
        let z: f64 = v.iter().sum();
        v.iter_mut().for_each(|e| *e /= z);
        Ok(self.push(Op::MaskedSoftmax(a, mask.to_vec()), v))
    }

    /// `sum_t weights[t] * columns[t]`.
    pub fn weighted_sum(&mut self, columns: &[NodeId], weights: NodeId) -> Result<NodeId> {
        if columns.len() != self.dim(weights) || columns.is_empty() {
            return Err(Error::Shape(format!("{} columns, {} weights", columns.len(), self.dim(weights))));
        }
        let d = self.dim(columns[0]);
        let mut v = vec![0.0; d];
        for (t, &c) in columns.iter().enumerate() {
            if self.dim(c) != d {
                return Err(Error::Shape("weighted_sum columns differ in length".into()));
            }
            let w = self.value(weights)[t];
            axpy(&mut v, w, self.value(c));
        }
        Ok(self.push(Op::WeightedSum(columns.to_vec(), weights), v))
    }

    /// Elementwise maximum.
    pub fn max_pool(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts.first().ok_or_else(|| Error::Shape("max_pool of nothing".into()))?;
        let mut v = self.value(first).to_vec();
        for &p in &parts[1..] {
            self.same_dim(first, p, "max_pool")?;
            v.iter_mut().zip(self.value(p)).for_each(|(a, &x)| {
                if x > *a {
                    *a = x
                }
            });
        }
        Ok(self.push(Op::MaxPool(parts.to_vec()), v))
    }

    /// Row `row` of a parameter matrix.
    pub fn gather(&mut self, p: ParamId, row: usize) -> Result<NodeId> {
        let m = self.params.get(p);
        if row >= m.rows {
            return Err(Error::Shape(format!("row {row} of `{}` with {} rows", m.name, m.rows)));
        }
        let v = m.values[row * m.cols..(row + 1) * m.cols].to_vec();
        Ok(self.push(Op::Gather(p, row), v))
    }

    /// Binary cross-entropy of `sigmoid(logit)` against `target`, computed
    /// from the logit so it stays finite for saturated predictions.
    pub fn bce_logits(&mut self, logit: NodeId, target: f64) -> Result<NodeId> {
        if self.dim(logit) != 1 {
            return Err(Error::Shape("bce_logits expects a scalar logit".into()));
        }
        let z = self.scalar(logit);
        let v = z.max(0.0) - z * target + (-z.abs()).exp().ln_1p();
        Ok(self.push(Op::BceLogits(logit, target), [v]))
    }

    pub fn sum(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts.first().ok_or_else(|| Error::Shape("sum of nothing".into()))?;
        let mut v = self.value(first).to_vec();
        for &p in &parts[1..] {
            self.same_dim(first, p, "sum")?;
            v.iter_mut().zip(self.value(p)).for_each(|(a, x)| *a += x);
        }
        Ok(self.push(Op::Sum(parts.to_vec()), v))
    }

    /// Gradient of a node recorded by the last [`Tape::backward`].
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        let n = self.nodes.get(id.0)?;
        if self.grads.len() < n.off + n.len {
            return None;
        }
        Some(&self.grads[n.off..n.off + n.len])
    }

    /// Backpropagates from a scalar node, returning parameter gradients.
    pub fn backward(&mut self, loss: NodeId) -> Result<Grads> {
        let mut g = Grads::zeros_like(self.params);
        self.backward_into(loss, 1.0, &mut g)?;
        Ok(g)
    }

    /// Backpropagates `seed * d(loss)` and adds the parameter gradients into
    /// `out`.
    pub fn backward_into(&mut self, loss: NodeId, seed: f64, out: &mut Grads) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::UnrecordedNode(loss.0));
        }
        if self.nodes[loss.0].len != 1 {
            return Err(Error::Shape("backward needs a scalar loss".into()));
        }
        self.check()?;
        self.grads.clear();
        self.grads.resize(self.values.len(), 0.0);
        self.grads[self.nodes[loss.0].off] = seed;
        let params = self.params;
        let values = &self.values;

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let (lo, hi) = self.grads.split_at_mut(node.off);
            let dy = &hi[..node.len];
            if dy.iter().all(|&d| d == 0.0) {
                continue;
            }
            let y = &values[node.off..node.off + node.len];
            let nd = |id: &NodeId| {
                let n = &self.nodes[id.0];
                (n.off, n.len)
            };
            match &node.op {
                Op::Input => {}
                Op::Param(p) => {
                    out.get_mut(*p).iter_mut().zip(dy).for_each(|(a, d)| *a += d);
                }
                Op::MatVec(w, start, x) => {
                    let m = params.get(*w);
                    let (xo, xl) = nd(x);
                    let xv = &values[xo..xo + xl];
                    let gw = out.get_mut(*w);
                    for (r, &d) in dy.iter().enumerate() {
                        if d == 0.0 {
                            continue;
                        }
                        let cols = r * m.cols + start..r * m.cols + start + xl;
                        axpy(&mut gw[cols.clone()], d, xv);
                        axpy(&mut lo[xo..xo + xl], d, &m.values[cols]);
                    }
                }
                Op::Add(a, b) => {
                    for id in [a, b] {
                        let (o, _) = nd(id);
                        lo[o..o + node.len].iter_mut().zip(dy).for_each(|(g, d)| *g += d);
                    }
                }
                Op::AddParam(a, p) => {
                    let (o, _) = nd(a);
                    lo[o..o + node.len].iter_mut().zip(dy).for_each(|(g, d)| *g += d);
                    out.get_mut(*p).iter_mut().zip(dy).for_each(|(g, d)| *g += d);
                }
                Op::Mul(a, b) => {
                    let (ao, _) = nd(a);
                    let (bo, _) = nd(b);
                    for k in 0..node.len {
                        lo[ao + k] += dy[k] * values[bo + k];
                    }
                    for k in 0..node.len {
                        lo[bo + k] += dy[k] * values[ao + k];
                    }
                }
                Op::Scale(a, c) => {
                    let (o, _) = nd(a);
                    lo[o..o + node.len].iter_mut().zip(dy).for_each(|(g, d)| *g += c * d);
                }
                Op::MulConst(a, m) => {
                    let (o, _) = nd(a);
                    for k in 0..node.len {
                        lo[o + k] += dy[k] * m[k];
                    }
                }
                Op::Sigmoid(a) => {
                    let (o, _) = nd(a);
                    for k in 0..node.len {
                        lo[o + k] += dy[k] * y[k] * (1.0 - y[k]);
                    }
                }
                Op::Tanh(a) => {
                    let (o, _) = nd(a);
                    for k in 0..node.len {
                        lo[o + k] += dy[k] * (1.0 - y[k] * y[k]);
                    }
                }
                Op::Slice(a, start) => {
                    let (o, _) = nd(a);
                    lo[o + start..o + start + node.len].iter_mut().zip(dy).for_each(|(g, d)| *g += d);
                }
                Op::Concat(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let (o, l) = nd(p);
                        lo[o..o + l].iter_mut().zip(&dy[at..at + l]).for_each(|(g, d)| *g += d);
                        at += l;
                    }
                }
                Op::Dot(a, b) => {
                    let d = dy[0];
                    let (ao, al) = nd(a);
                    let (bo, _) = nd(b);
                    for k in 0..al {
                        lo[ao + k] += d * values[bo + k];
                    }
                    for k in 0..al {
                        lo[bo + k] += d * values[ao + k];
                    }
                }
                Op::MaskedSoftmax(a, mask) => {
                    let (o, _) = nd(a);
                    let s: f64 = y.iter().zip(dy).map(|(p, d)| p * d).sum();
                    for k in 0..node.len {
                        if mask[k] {
                            lo[o + k] += y[k] * (dy[k] - s);
                        }
                    }
                }
                Op::WeightedSum(cols, w) => {
                    let (wo, _) = nd(w);
                    for (t, c) in cols.iter().enumerate() {
                        let (co, cl) = nd(c);
                        let alpha = values[wo + t];
                        lo[wo + t] += dot(dy, &values[co..co + cl]);
                        if alpha != 0.0 {
                            axpy(&mut lo[co..co + cl], alpha, dy);
                        }
                    }
                }
                Op::MaxPool(parts) => {
                    for k in 0..node.len {
                        // first argmax takes the gradient
                        let winner = parts
                            .iter()
                            .find(|p| values[nd(p).0 + k] == y[k])
                            .expect("max is one of the inputs");
                        lo[nd(winner).0 + k] += dy[k];
                    }
                }
                Op::Gather(p, row) => {
                    let cols = params.get(*p).cols;
                    out.get_mut(*p)[row * cols..(row + 1) * cols]
                        .iter_mut()
                        .zip(dy)
                        .for_each(|(g, d)| *g += d);
                }
                Op::BceLogits(z, target) => {
                    let (o, _) = nd(z);
                    lo[o] += dy[0] * (sigmoid(values[o]) - target);
                }
                Op::Sum(parts) => {
                    for p in parts {
                        let (o, _) = nd(p);
                        lo[o..o + node.len].iter_mut().zip(dy).for_each(|(g, d)| *g += d);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Init;
    use crate::util::seeded;

    #[test]
    fn square_derivative() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let x = t.input(&[3.0]);
        let y = t.mul(x, x).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn unrecorded_node_is_an_error() {
        let store = ParamStore::new();
        let mut other = Tape::new(&store);
        let a = other.input(&[1.0]);
        let b = other.mul(a, a).unwrap();
        let mut t = Tape::new(&store);
        t.input(&[1.0]);
        assert!(matches!(t.backward(b), Err(Error::UnrecordedNode(1))));
    }

    #[test]
    fn nonfinite_trips_check() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let x = t.input(&[f64::MAX]);
        let y = t.scale(x, 10.0);
        assert!(matches!(t.check(), Err(Error::NonFinite(_))));
        assert!(t.backward(y).is_err());
    }

    #[test]
    fn softmax_masks_exactly() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let s = t.input(&[0.3, -1.0, 2.0, 5.0]);
        let a = t.masked_softmax(s, &[true, true, true, false]).unwrap();
        let v = t.value(a);
        assert_eq!(v[3], 0.0);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(matches!(t.masked_softmax(s, &[false; 4]), Err(Error::AllMasked)));
    }

    #[test]
    fn matvec_gradients_by_hand() {
        let mut store = ParamStore::new();
        let w = store.add("w", 2, 3, Init::Values(vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0]), &mut seeded(0));
        let mut t = Tape::new(&store);
        let x = t.input(&[1.0, -1.0, 2.0]);
        let y = t.matvec(w, x).unwrap();
        assert_eq!(t.value(y), &[5.0, -1.5]);
        let wv = t.input(&[1.0, 10.0]);
        let l = t.dot(y, wv).unwrap();
        let g = t.backward(l).unwrap();
        // dL/dW[r][c] = v[r] * x[c]
        assert_eq!(g.get(w), &[1.0, -1.0, 2.0, 10.0, -10.0, 20.0]);
        // dL/dx = W^T v
        assert_eq!(t.grad(x).unwrap(), &[-9.0, 7.0, 3.0]);
    }

    #[test]
    fn column_split_matches_full_matvec() {
        let mut store = ParamStore::new();
        let w = store.add("w", 3, 5, Init::Uniform(1.0), &mut seeded(4));
        let mut t = Tape::new(&store);
        let a = t.input(&[0.2, -0.7]);
        let b = t.input(&[1.5, 0.1, -0.4]);
        let ab = t.concat(&[a, b]);
        let full = t.matvec(w, ab).unwrap();
        let left = t.matvec_cols(w, 0, a).unwrap();
        let right = t.matvec_cols(w, 2, b).unwrap();
        let split = t.add(left, right).unwrap();
        for (x, y) in t.value(full).iter().zip(t.value(split)) {
            assert!((x - y).abs() < 1e-14);
        }
        assert!(t.matvec_cols(w, 3, b).is_err());

        let ones = t.input(&[1.0; 3]);
        let l = t.dot(split, ones).unwrap();
        let g_split = t.backward(l).unwrap();
        let mut t2 = Tape::new(&store);
        let ab = t2.input(&[0.2, -0.7, 1.5, 0.1, -0.4]);
        let full = t2.matvec(w, ab).unwrap();
        let ones = t2.input(&[1.0; 3]);
        let l = t2.dot(full, ones).unwrap();
        let g_full = t2.backward(l).unwrap();
        assert_eq!(g_split.get(w), g_full.get(w));
    }

    #[test]
    fn bce_from_logits() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let z = t.input(&[0.0]);
        let l = t.bce_logits(z, 1.0).unwrap();
        assert!((t.scalar(l) - std::f64::consts::LN_2).abs() < 1e-15);
        t.backward(l).unwrap();
        assert!((t.grad(z).unwrap()[0] + 0.5).abs() < 1e-15);
        let big = t.input(&[800.0]);
        let l = t.bce_logits(big, 0.0).unwrap();
        assert!((t.scalar(l) - 800.0).abs() < 1e-9);
    }

    #[test]
    fn max_pool_routes_to_argmax() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let a = t.input(&[1.0, -2.0]);
        let b = t.input(&[0.0, 3.0]);
        let m = t.max_pool(&[a, b]).unwrap();
        assert_eq!(t.value(m), &[1.0, 3.0]);
        let w = t.input(&[2.0, 5.0]);
        let l = t.dot(m, w).unwrap();
        t.backward(l).unwrap();
        assert_eq!(t.grad(a).unwrap(), &[2.0, 0.0]);
        assert_eq!(t.grad(b).unwrap(), &[0.0, 5.0]);
    }
}
