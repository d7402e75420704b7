use std::collections::BTreeMap;

use super::tensor::{matmul, matmul_nt, matmul_tn, Scalar, Tensor};
use super::NumericsError;

/// Handle to a node inside a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Input(String),
    Constant(Tensor<T>),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Softmax {
        x: NodeId,
        axis: usize,
        mask: Option<Vec<bool>>,
    },
    LogSoftmax {
        x: NodeId,
        axis: usize,
    },
    Ln(NodeId),
    Mean {
        x: NodeId,
        axis: usize,
    },
    Concat {
        xs: Vec<NodeId>,
        axis: usize,
    },
    Slice {
        x: NodeId,
        axis: usize,
        start: usize,
        end: usize,
    },
    Repeat {
        x: NodeId,
        axis: usize,
        times: usize,
    },
    Scale(NodeId, f64),
    Transpose(NodeId),
    Reshape(NodeId, Vec<usize>),
}

impl<T> Op<T> {
    fn tag(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Constant(_) => "constant",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Mul(..) => "multiply",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softmax { .. } => "softmax",
            Op::LogSoftmax { .. } => "log_softmax",
            Op::Ln(_) => "ln",
            Op::Mean { .. } => "mean",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Repeat { .. } => "repeat",
            Op::Scale(..) => "scale",
            Op::Transpose(_) => "transpose",
            Op::Reshape(..) => "reshape",
        }
    }
}

/// A computation recorded as primitive applications in topological order.
///
/// Nodes are appended through the builder methods, which only ever refer to
/// existing nodes, so the graph is acyclic by construction. Shapes are
/// checked when the graph is evaluated.
#[derive(Clone, Debug, Default)]
pub struct Graph<T> {
    ops: Vec<Op<T>>,
    values: Vec<Option<Tensor<T>>>,
    inputs: BTreeMap<String, NodeId>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            ops: Vec::new(),
            values: Vec::new(),
            inputs: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    fn push(&mut self, op: Op<T>) -> NodeId {
        self.ops.push(op);
        self.values.push(None);
        NodeId(self.ops.len() - 1)
    }

    /// Named input. Asking for the same name twice returns the same node.
    pub fn input(&mut self, name: &str) -> NodeId {
        if let Some(&id) = self.inputs.get(name) {
            return id;
        }
        let id = self.push(Op::Input(name.to_string()));
        self.inputs.insert(name.to_string(), id);
        id
    }

    pub fn constant(&mut self, t: Tensor<T>) -> NodeId {
        self.push(Op::Constant(t))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sigmoid(x))
    }

    pub fn softmax(&mut self, x: NodeId, axis: usize) -> NodeId {
        self.push(Op::Softmax {
            x,
            axis,
            mask: None,
        })
    }

    /// Softmax where entries with `mask[i] == false` are treated as −∞:
    /// they receive exactly zero probability and zero gradient.
    pub fn masked_softmax(&mut self, x: NodeId, axis: usize, mask: Vec<bool>) -> NodeId {
        self.push(Op::Softmax {
            x,
            axis,
            mask: Some(mask),
        })
    }

    pub fn log_softmax(&mut self, x: NodeId, axis: usize) -> NodeId {
        self.push(Op::LogSoftmax { x, axis })
    }

    pub fn ln(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Ln(x))
    }

    /// Mean over `axis` of a rank-2 tensor; the reduced axis is kept with size 1.
    pub fn mean(&mut self, x: NodeId, axis: usize) -> NodeId {
        self.push(Op::Mean { x, axis })
    }

    pub fn concat(&mut self, xs: Vec<NodeId>, axis: usize) -> NodeId {
        self.push(Op::Concat { xs, axis })
    }

    /// Half-open range `[start, end)` along `axis`.
    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, end: usize) -> NodeId {
        self.push(Op::Slice {
            x,
            axis,
            start,
            end,
        })
    }

    /// Tiles `x` `times` times along `axis`.
    pub fn repeat(&mut self, x: NodeId, axis: usize, times: usize) -> NodeId {
        self.push(Op::Repeat { x, axis, times })
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> NodeId {
        self.push(Op::Scale(x, s))
    }

    pub fn transpose(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Transpose(x))
    }

    pub fn reshape(&mut self, x: NodeId, dims: Vec<usize>) -> NodeId {
        self.push(Op::Reshape(x, dims))
    }

    pub fn input_names(&self) -> impl Iterator<Item = &str> {
        self.inputs.keys().map(String::as_str)
    }

    /// Forward value of a node, available after [`Graph::evaluate`].
    pub fn value(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.values.get(id.0).and_then(Option::as_ref)
    }

    /// Runs every node forward and returns the value of `output`.
    pub fn evaluate(
        &mut self,
        inputs: &BTreeMap<String, Tensor<T>>,
        output: NodeId,
    ) -> Result<&Tensor<T>, NumericsError> {
        for v in &mut self.values {
            *v = None;
        }
        for i in 0..self.ops.len() {
            let out = self.forward_node(i, inputs)?;
            if !out.all_finite() {
                return Err(NumericsError::NonFinite {
                    node: i,
                    op: self.ops[i].tag(),
                });
            }
            self.values[i] = Some(out);
        }
        self.value(output).ok_or(NumericsError::UnknownNode(output.0))
    }

    fn val(&self, id: NodeId) -> &Tensor<T> {
        self.values[id.0]
            .as_ref()
            .expect("operands precede their consumers")
    }

    fn forward_node(
        &self,
        i: usize,
        inputs: &BTreeMap<String, Tensor<T>>,
    ) -> Result<Tensor<T>, NumericsError> {
        let op = &self.ops[i];
        let mismatch = |a: &Tensor<T>, b: &Tensor<T>| NumericsError::ShapeMismatch {
            node: i,
            op: op.tag(),
            left: a.dims().to_vec(),
            right: b.dims().to_vec(),
        };
        let need2 = |a: &Tensor<T>| -> Result<(usize, usize), NumericsError> {
            a.shape2().ok_or_else(|| NumericsError::Rank {
                node: i,
                op: op.tag(),
                dims: a.dims().to_vec(),
            })
        };
        let bad_axis = |axis: usize| NumericsError::Axis {
            node: i,
            op: op.tag(),
            axis,
        };
        Ok(match op {
            Op::Input(name) => inputs
                .get(name)
                .cloned()
                .ok_or_else(|| NumericsError::UnboundInput(name.clone()))?,
            Op::Constant(t) => t.clone(),
            Op::MatMul(a, b) => {
                let (a, b) = (self.val(*a), self.val(*b));
                let (n, k) = need2(a)?;
                let (k2, m) = need2(b)?;
                if k != k2 {
                    return Err(mismatch(a, b));
                }
                Tensor::matrix(n, m, matmul(a.data(), b.data(), n, k, m))?
            }
            Op::Add(a, b) | Op::Mul(a, b) => {
                let (a, b) = (self.val(*a), self.val(*b));
                if a.dims() != b.dims() {
                    return Err(mismatch(a, b));
                }
                let data = if matches!(op, Op::Add(..)) {
                    a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect()
                } else {
                    a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect()
                };
                Tensor::new(a.dims().to_vec(), data)?
            }
            Op::Tanh(x) => self.val(*x).map(|v| v.tanh()),
            Op::Sigmoid(x) => self.val(*x).map(sigmoid),
            Op::Softmax { x, axis, mask } => {
                let x = self.val(*x);
                need2(x)?;
                if *axis > 1 {
                    return Err(bad_axis(*axis));
                }
                if let Some(m) = mask {
                    if m.len() != x.len() {
                        return Err(NumericsError::ShapeMismatch {
                            node: i,
                            op: op.tag(),
                            left: x.dims().to_vec(),
                            right: vec![m.len()],
                        });
                    }
                }
                softmax_forward(x, *axis, mask.as_deref())
            }
            Op::LogSoftmax { x, axis } => {
                let x = self.val(*x);
                need2(x)?;
                if *axis > 1 {
                    return Err(bad_axis(*axis));
                }
                log_softmax_forward(x, *axis)
            }
            Op::Ln(x) => self.val(*x).map(|v| v.ln()),
            Op::Mean { x, axis } => {
                let x = self.val(*x);
                let (r, c) = need2(x)?;
                match axis {
                    0 => {
                        let mut out = vec![T::zero(); c];
                        for row in 0..r {
                            for (o, &v) in out.iter_mut().zip(x.row_slice(row)) {
                                *o = *o + v;
                            }
                        }
                        let n = T::of(r as f64);
                        Tensor::matrix(1, c, out.into_iter().map(|v| v / n).collect())?
                    }
                    1 => {
                        let n = T::of(c as f64);
                        let out = (0..r)
                            .map(|row| {
                                x.row_slice(row).iter().fold(T::zero(), |a, &b| a + b) / n
                            })
                            .collect();
                        Tensor::matrix(r, 1, out)?
                    }
                    _ => return Err(bad_axis(*axis)),
                }
            }
            Op::Concat { xs, axis } => {
                let parts: Vec<&Tensor<T>> = xs.iter().map(|id| self.val(*id)).collect();
                let first = parts.first().ok_or(NumericsError::EmptyConcat(i))?;
                need2(first)?;
                for p in &parts[1..] {
                    need2(p)?;
                    let ok = match axis {
                        0 => p.cols() == first.cols(),
                        1 => p.rows() == first.rows(),
                        _ => return Err(bad_axis(*axis)),
                    };
                    if !ok {
                        return Err(mismatch(first, p));
                    }
                }
                concat_forward(&parts, *axis)
            }
            Op::Slice {
                x,
                axis,
                start,
                end,
            } => {
                let x = self.val(*x);
                let (r, c) = need2(x)?;
                let extent = match axis {
                    0 => r,
                    1 => c,
                    _ => return Err(bad_axis(*axis)),
                };
                if start >= end || *end > extent {
                    return Err(NumericsError::SliceRange {
                        node: i,
                        start: *start,
                        end: *end,
                        dims: x.dims().to_vec(),
                    });
                }
                if *axis == 0 {
                    Tensor::matrix(end - start, c, x.data()[start * c..end * c].to_vec())?
                } else {
                    Tensor::from_fn(r, end - start, |row, col| x.get(row, start + col))
                }
            }
            Op::Repeat { x, axis, times } => {
                let x = self.val(*x);
                let (r, c) = need2(x)?;
                match axis {
                    0 => {
                        let mut data = Vec::with_capacity(x.len() * times);
                        for _ in 0..*times {
                            data.extend_from_slice(x.data());
                        }
                        Tensor::matrix(r * times, c, data)?
                    }
                    1 => Tensor::from_fn(r, c * times, |row, col| x.get(row, col % c)),
                    _ => return Err(bad_axis(*axis)),
                }
            }
            Op::Scale(x, s) => {
                let s = T::of(*s);
                self.val(*x).map(|v| v * s)
            }
            Op::Transpose(x) => {
                let x = self.val(*x);
                need2(x)?;
                x.transposed()
            }
            Op::Reshape(x, dims) => {
                let x = self.val(*x);
                let n: usize = dims.iter().product();
                if n != x.len() {
                    return Err(NumericsError::ShapeMismatch {
                        node: i,
                        op: op.tag(),
                        left: x.dims().to_vec(),
                        right: dims.clone(),
                    });
                }
                x.clone().reshaped(dims.clone())?
            }
        })
    }

    /// Reverse pass from `output` seeded with `seed`.
    ///
    /// Returns a gradient for every named input, zero-filled when the input
    /// does not influence `output`.
    pub fn backward(
        &self,
        output: NodeId,
        seed: &Tensor<T>,
    ) -> Result<BTreeMap<String, Tensor<T>>, NumericsError> {
        let out_val = self.value(output).ok_or(NumericsError::NotEvaluated)?;
        if out_val.dims() != seed.dims() {
            return Err(NumericsError::ShapeMismatch {
                node: output.0,
                op: "seed",
                left: out_val.dims().to_vec(),
                right: seed.dims().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed.clone());

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.ops[i] {
                Op::Input(_) => {
                    grads[i] = Some(g);
                }
                Op::Constant(_) => {}
                op => {
                    for (id, contrib) in self.local_grads(i, op, &g) {
                        accumulate(&mut grads[id.0], contrib);
                    }
                }
            }
        }

        let mut out = BTreeMap::new();
        for (name, id) in &self.inputs {
            let g = match grads.get_mut(id.0).and_then(Option::take) {
                Some(g) => g,
                None => {
                    let v = self.value(*id).ok_or(NumericsError::NotEvaluated)?;
                    Tensor::zeros(v.dims())
                }
            };
            out.insert(name.clone(), g);
        }
        Ok(out)
    }

    fn local_grads(&self, i: usize, op: &Op<T>, g: &Tensor<T>) -> Vec<(NodeId, Tensor<T>)> {
        let y = self.val(NodeId(i));
        match op {
            Op::Input(_) | Op::Constant(_) => vec![],
            Op::MatMul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let (n, k) = (av.rows(), av.cols());
                let m = bv.cols();
                let da = matmul_nt(g.data(), bv.data(), n, m, k);
                let db = matmul_tn(av.data(), g.data(), n, k, m);
                vec![
                    (*a, Tensor::matrix(n, k, da).expect("shape")),
                    (*b, Tensor::matrix(k, m, db).expect("shape")),
                ]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Mul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let da = zip_map(g, bv, |x, y| x * y);
                let db = zip_map(g, av, |x, y| x * y);
                vec![(*a, da), (*b, db)]
            }
            Op::Tanh(x) => vec![(*x, zip_map(g, y, |g, y| g * (T::one() - y * y)))],
            Op::Sigmoid(x) => vec![(*x, zip_map(g, y, |g, y| g * y * (T::one() - y)))],
            Op::Softmax { x, axis, .. } => {
                // dx = y ⊙ (g − Σ g⊙y) along the reduced axis
                let dx = reduce_lines(y, g, *axis, |ys, gs, out| {
                    let dot = ys
                        .iter()
                        .zip(gs.iter())
                        .fold(T::zero(), |a, (&y, &g)| a + y * g);
                    for ((o, &y), &g) in out.iter_mut().zip(ys.iter()).zip(gs.iter()) {
                        *o = y * (g - dot);
                    }
                });
                vec![(*x, dx)]
            }
            Op::LogSoftmax { x, axis } => {
                // dx = g − softmax ⊙ Σ g
                let dx = reduce_lines(y, g, *axis, |ys, gs, out| {
                    let total = gs.iter().fold(T::zero(), |a, &g| a + g);
                    for ((o, &y), &g) in out.iter_mut().zip(ys.iter()).zip(gs.iter()) {
                        *o = g - y.exp() * total;
                    }
                });
                vec![(*x, dx)]
            }
            Op::Ln(x) => vec![(*x, zip_map(g, self.val(*x), |g, x| g / x))],
            Op::Mean { x, axis } => {
                let xv = self.val(*x);
                let (r, c) = (xv.rows(), xv.cols());
                let dx = if *axis == 0 {
                    let n = T::of(r as f64);
                    Tensor::from_fn(r, c, |_, col| g.get(0, col) / n)
                } else {
                    let n = T::of(c as f64);
                    Tensor::from_fn(r, c, |row, _| g.get(row, 0) / n)
                };
                vec![(*x, dx)]
            }
            Op::Concat { xs, axis } => {
                let mut offset = 0;
                xs.iter()
                    .map(|id| {
                        let part = self.val(*id);
                        let (r, c) = (part.rows(), part.cols());
                        let piece = if *axis == 0 {
                            Tensor::matrix(r, c, g.data()[offset * c..(offset + r) * c].to_vec())
                                .expect("shape")
                        } else {
                            Tensor::from_fn(r, c, |row, col| g.get(row, offset + col))
                        };
                        offset += if *axis == 0 { r } else { c };
                        (*id, piece)
                    })
                    .collect()
            }
            Op::Slice {
                x, axis, start, ..
            } => {
                let xv = self.val(*x);
                let (r, c) = (xv.rows(), xv.cols());
                let mut dx = Tensor::zeros(&[r, c]);
                let gc = g.cols();
                for row in 0..g.rows() {
                    for col in 0..gc {
                        let (tr, tc) = if *axis == 0 {
                            (row + start, col)
                        } else {
                            (row, col + start)
                        };
                        dx.data_mut()[tr * c + tc] = g.get(row, col);
                    }
                }
                vec![(*x, dx)]
            }
            Op::Repeat { x, axis, .. } => {
                let xv = self.val(*x);
                let (r, c) = (xv.rows(), xv.cols());
                let mut dx = Tensor::zeros(&[r, c]);
                let gc = g.cols();
                for row in 0..g.rows() {
                    for col in 0..gc {
                        let (tr, tc) = if *axis == 0 {
                            (row % r, col)
                        } else {
                            (row, col % c)
                        };
                        let d = &mut dx.data_mut()[tr * c + tc];
                        *d = *d + g.get(row, col);
                    }
                }
                vec![(*x, dx)]
            }
            Op::Scale(x, s) => {
                let s = T::of(*s);
                vec![(*x, g.map(|v| v * s))]
            }
            Op::Transpose(x) => vec![(*x, g.transposed())],
            Op::Reshape(x, _) => {
                let dims = self.val(*x).dims().to_vec();
                vec![(*x, g.clone().reshaped(dims).expect("same length"))]
            }
        }
    }
}

fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, contrib: Tensor<T>) {
    match slot {
        Some(acc) => acc.add_assign(&contrib),
        None => *slot = Some(contrib),
    }
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.dims().to_vec(), data).expect("same dims")
}

/// Applies `f` to every line (row for axis 1, column for axis 0) of `a`
/// paired with the same line of `b`, writing into a fresh tensor.
fn reduce_lines<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    axis: usize,
    mut f: impl FnMut(&[T], &[T], &mut [T]),
) -> Tensor<T> {
    let (r, c) = (a.rows(), a.cols());
    let mut out = Tensor::zeros(&[r, c]);
    if axis == 1 {
        for row in 0..r {
            let range = row * c..(row + 1) * c;
            f(
                &a.data()[range.clone()],
                &b.data()[range.clone()],
                &mut out.data_mut()[range],
            );
        }
    } else {
        let mut la = vec![T::zero(); r];
        let mut lb = vec![T::zero(); r];
        let mut lo = vec![T::zero(); r];
        for col in 0..c {
            for row in 0..r {
                la[row] = a.get(row, col);
                lb[row] = b.get(row, col);
            }
            f(&la, &lb, &mut lo);
            for row in 0..r {
                out.data_mut()[row * c + col] = lo[row];
            }
        }
    }
    out
}

fn softmax_forward<T: Scalar>(x: &Tensor<T>, axis: usize, mask: Option<&[bool]>) -> Tensor<T> {
    let (r, c) = (x.rows(), x.cols());
    let keep: Vec<bool> = match mask {
        Some(m) => m.to_vec(),
        None => vec![true; x.len()],
    };
    let mut out = Tensor::zeros(&[r, c]);
    let (lines, len, stride_line, stride_elem) = if axis == 1 { (r, c, c, 1) } else { (c, r, 1, c) };
    for line in 0..lines {
        let idx = |j: usize| line * stride_line + j * stride_elem;
        let mut max = T::neg_infinity();
        for j in 0..len {
            if keep[idx(j)] && x.data()[idx(j)] > max {
                max = x.data()[idx(j)];
            }
        }
        if max == T::neg_infinity() {
            // fully masked line: all zeros
            continue;
        }
        let mut sum = T::zero();
        for j in 0..len {
            if keep[idx(j)] {
                let e = (x.data()[idx(j)] - max).exp();
                out.data_mut()[idx(j)] = e;
                sum = sum + e;
            }
        }
        for j in 0..len {
            let v = &mut out.data_mut()[idx(j)];
            *v = *v / sum;
        }
    }
    out
}

fn log_softmax_forward<T: Scalar>(x: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (r, c) = (x.rows(), x.cols());
    let mut out = Tensor::zeros(&[r, c]);
    let (lines, len, stride_line, stride_elem) = if axis == 1 { (r, c, c, 1) } else { (c, r, 1, c) };
    for line in 0..lines {
        let idx = |j: usize| line * stride_line + j * stride_elem;
        let max = (0..len).fold(T::neg_infinity(), |m, j| m.max(x.data()[idx(j)]));
        let lse = (0..len)
            .fold(T::zero(), |s, j| s + (x.data()[idx(j)] - max).exp())
            .ln()
            + max;
        for j in 0..len {
            out.data_mut()[idx(j)] = x.data()[idx(j)] - lse;
        }
    }
    out
}

fn concat_forward<T: Scalar>(parts: &[&Tensor<T>], axis: usize) -> Tensor<T> {
    if axis == 0 {
        let c = parts[0].cols();
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        let mut rows = 0;
        for p in parts {
            data.extend_from_slice(p.data());
            rows += p.rows();
        }
        Tensor::matrix(rows, c, data).expect("shape")
    } else {
        let r = parts[0].rows();
        let cols: usize = parts.iter().map(|p| p.cols()).sum();
        let mut data = Vec::with_capacity(r * cols);
        for row in 0..r {
            for p in parts {
                data.extend_from_slice(p.row_slice(row));
            }
        }
        Tensor::matrix(r, cols, data).expect("shape")
    }
}
