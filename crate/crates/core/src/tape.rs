//! Reverse-mode automatic differentiation on a dynamic tape.
//!
//! Every operation records a node holding its output value and enough
//! structure to run the vector-Jacobian product later. Operations are
//! tensor-granular (a matrix-vector product is one node), which keeps long
//! recurrent unrolls tractable. All ops validate shapes and reject NaN/Inf
//! outputs instead of letting them propagate.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
enum UnaryKind {
    Neg,
    Tanh,
    Sigmoid,
    Relu,
    Exp,
    Ln,
    Sqrt,
    Abs,
    Square,
    Softplus,
}

#[derive(Debug, Clone, Copy)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Unary(UnaryKind, usize),
    Binary(BinaryKind, usize, usize),
    AddScalar(usize),
    Scale(usize, f64),
    Matmul(usize, usize),
    Matvec(usize, usize),
    Sum(usize),
    MaxAxis(usize, usize),
    Concat(Vec<usize>),
    Slice(usize, usize),
    Gather(usize, Vec<usize>),
    Reshape(usize),
    DiagEmbed(usize),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Grads {
    by_node: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.by_node.get(v.0).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_binds: Vec<(String, usize)>,
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

    /// Inserts a leaf node. Leaves receive gradients like any other node.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.leaf(Tensor::scalar(value))
    }

    /// Binds a named parameter from `store` as a leaf. Repeated binds of the
    /// same name return the same node so gradients accumulate once. The store
    /// must not change while the tape is alive.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some((_, id)) = self.param_binds.iter().find(|(n, _)| n == name) {
            return Ok(Var(*id));
        }
        let value = store
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?
            .clone();
        let var = self.leaf(value);
        self.param_binds.push((name.to_string(), var.0));
        Ok(var)
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, what: &str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(what.to_string()));
        }
        Ok(self.push_unchecked(value, op))
    }

    fn binary_values(&self, a: Var, b: Var, what: &str) -> Result<(&Tensor, &Tensor)> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch(format!(
                "{what}: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        Ok((ta, tb))
    }

    fn elementwise(
        &mut self,
        kind: BinaryKind,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        what: &str,
    ) -> Result<Var> {
        let (ta, tb) = self.binary_values(a, b, what)?;
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(value, Op::Binary(kind, a.0, b.0), what)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryKind::Add, a, b, |x, y| x + y, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryKind::Sub, a, b, |x, y| x - y, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryKind::Mul, a, b, |x, y| x * y, "mul")
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryKind::Div, a, b, |x, y| x / y, "div")
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let value = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| x + c).collect())?;
        self.push(value, Op::AddScalar(a.0), "add_scalar")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let value = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| x * c).collect())?;
        self.push(value, Op::Scale(a.0, c), "scale")
    }

    fn unary(
        &mut self,
        kind: UnaryKind,
        a: Var,
        f: impl Fn(f64) -> f64,
        what: &str,
    ) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let value = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| f(*x)).collect())?;
        self.push(value, Op::Unary(kind, a.0), what)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Neg, a, |x| -x, "neg")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Tanh, a, math::tanh, "tanh")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Sigmoid, a, math::sigmoid, "sigmoid")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Relu, a, |x| if x > 0.0 { x } else { 0.0 }, "relu")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Exp, a, math::exp, "exp")
    }

    /// Natural log; raises a domain error on any non-positive element.
    pub fn ln(&mut self, a: Var) -> Result<Var> {
        if self.nodes[a.0].value.iter().any(|x| *x <= 0.0) {
            return Err(Error::Domain("ln of non-positive input".to_string()));
        }
        self.unary(UnaryKind::Ln, a, math::ln, "ln")
    }

    /// Square root; raises a domain error on any non-positive element.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if self.nodes[a.0].value.iter().any(|x| *x <= 0.0) {
            return Err(Error::Domain("sqrt of non-positive input".to_string()));
        }
        self.unary(UnaryKind::Sqrt, a, math::sqrt, "sqrt")
    }

    /// Absolute value; the subgradient at 0 is 0.
    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Abs, a, math::abs, "abs")
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Square, a, |x| x * x, "square")
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Softplus, a, math::softplus, "softplus")
    }

    /// Matrix product of rank-2 tensors `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::ShapeMismatch(format!(
                "matmul: {:?} x {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for l in 0..k {
                let aval = ta.data()[i * k + l];
                if aval == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += aval * tb.data()[l * n + j];
                }
            }
        }
        let value = Tensor::matrix(m, n, out)?;
        self.push(value, Op::Matmul(a.0, b.0), "matmul")
    }

    /// Matrix-vector product `[m,n] x [n] -> [m]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (tw, tx) = (&self.nodes[w.0].value, &self.nodes[x.0].value);
        if tw.rank() != 2 || tx.rank() != 1 || tw.shape()[1] != tx.shape()[0] {
            return Err(Error::ShapeMismatch(format!(
                "matvec: {:?} x {:?}",
                tw.shape(),
                tx.shape()
            )));
        }
        let (m, n) = (tw.shape()[0], tw.shape()[1]);
        let mut out = vec![0.0; m];
        for i in 0..m {
            let row = &tw.data()[i * n..(i + 1) * n];
            out[i] = row.iter().zip(tx.data()).map(|(a, b)| a * b).sum();
        }
        let value = Tensor::vector(out);
        self.push(value, Op::Matvec(w.0, x.0), "matvec")
    }

    /// `W x + b` for a rank-2 weight, rank-1 input, and rank-1 bias.
    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Result<Var> {
        let wx = self.matvec(w, x)?;
        self.add(wx, b)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total: f64 = self.nodes[a.0].value.iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(a.0), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.nodes[a.0].value.len();
        if n == 0 {
            return Err(Error::ShapeMismatch("mean of empty tensor".to_string()));
        }
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        self.sum(p)
    }

    /// Maximum over an axis. Rank-1 tensors reduce to a scalar (axis 0);
    /// rank-2 tensors reduce the given axis. The backward pass routes the
    /// gradient to the first maximal index of each reduced slice.
    pub fn max_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        match ta.rank() {
            1 if axis == 0 => {
                if ta.is_empty() {
                    return Err(Error::ShapeMismatch("max of empty tensor".to_string()));
                }
                let value = Tensor::scalar(ta.max_value());
                self.push(value, Op::MaxAxis(a.0, 0), "max")
            }
            2 if axis < 2 => {
                let (r, c) = (ta.shape()[0], ta.shape()[1]);
                let out = if axis == 0 {
                    (0..c)
                        .map(|j| (0..r).map(|i| ta.at(i, j)).fold(f64::NEG_INFINITY, f64::max))
                        .collect()
                } else {
                    (0..r)
                        .map(|i| (0..c).map(|j| ta.at(i, j)).fold(f64::NEG_INFINITY, f64::max))
                        .collect()
                };
                let value = Tensor::vector(out);
                self.push(value, Op::MaxAxis(a.0, axis), "max_axis")
            }
            _ => Err(Error::ShapeMismatch(format!(
                "max_axis {axis} on shape {:?}",
                ta.shape()
            ))),
        }
    }

    /// Maximum of a rank-1 tensor, as a scalar.
    pub fn max(&mut self, a: Var) -> Result<Var> {
        self.max_axis(a, 0)
    }

    /// Concatenates rank-1 tensors in order.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::ShapeMismatch("concat of no tensors".to_string()));
        }
        let mut data = Vec::new();
        for p in parts {
            let t = &self.nodes[p.0].value;
            if t.rank() != 1 {
                return Err(Error::ShapeMismatch(format!(
                    "concat expects rank-1 parts, got {:?}",
                    t.shape()
                )));
            }
            data.extend_from_slice(t.data());
        }
        let ids = parts.iter().map(|p| p.0).collect();
        self.push(Tensor::vector(data), Op::Concat(ids), "concat")
    }

    /// Contiguous slice `[start, end)` of a rank-1 tensor.
    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        if ta.rank() != 1 || start > end || end > ta.len() {
            return Err(Error::ShapeMismatch(format!(
                "slice {start}..{end} of shape {:?}",
                ta.shape()
            )));
        }
        let value = Tensor::vector(ta.data()[start..end].to_vec());
        self.push(value, Op::Slice(a.0, start), "slice")
    }

    /// Element `i` of a rank-1 tensor, as a scalar.
    pub fn at(&mut self, a: Var, i: usize) -> Result<Var> {
        self.slice(a, i, i + 1)
    }

    /// `y[i] = x[indices[i]]` on a rank-1 tensor. Repeated indices are
    /// allowed; their gradients accumulate.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        if ta.rank() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "gather expects rank-1 input, got {:?}",
                ta.shape()
            )));
        }
        let n = ta.len();
        let mut data = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= n {
                return Err(Error::ShapeMismatch(format!(
                    "gather index {i} out of range for length {n}"
                )));
            }
            data.push(ta.data()[i]);
        }
        self.push(
            Tensor::vector(data),
            Op::Gather(a.0, indices.to_vec()),
            "gather",
        )
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.nodes[a.0].value.clone().reshaped(shape)?;
        self.push(value, Op::Reshape(a.0), "reshape")
    }

    /// Embeds a rank-1 tensor as the diagonal of a square matrix.
    pub fn diag_embed(&mut self, a: Var) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        if ta.rank() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "diag_embed of shape {:?}",
                ta.shape()
            )));
        }
        let n = ta.len();
        let mut out = Tensor::zeros(&[n, n]);
        for i in 0..n {
            out.data_mut()[i * n + i] = ta.data()[i];
        }
        self.push(out, Op::DiagEmbed(a.0), "diag_embed")
    }

    /// Reverse-mode sweep from a scalar `root`. Returns gradients for every
    /// node that influences it.
    pub fn backward(&self, root: Var) -> Result<Grads> {
        let root_val = &self.nodes[root.0].value;
        if !root_val.is_scalar() {
            return Err(Error::NonScalarRoot);
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(root_val.shape(), 1.0));

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.accumulate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Grads { by_node: grads })
    }

    fn accumulate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let add_into = |grads: &mut [Option<Tensor>], target: usize, delta: Tensor| {
            match &mut grads[target] {
                Some(existing) => {
                    for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                        *e += d;
                    }
                }
                slot @ None => *slot = Some(delta),
            }
        };

        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Unary(kind, a) => {
                let x = &self.nodes[*a].value;
                let y = &self.nodes[id].value;
                let data: Vec<f64> = match kind {
                    UnaryKind::Neg => g.iter().map(|gi| -gi).collect(),
                    UnaryKind::Tanh => g
                        .iter()
                        .zip(y.data())
                        .map(|(gi, yi)| gi * (1.0 - yi * yi))
                        .collect(),
                    UnaryKind::Sigmoid => g
                        .iter()
                        .zip(y.data())
                        .map(|(gi, yi)| gi * yi * (1.0 - yi))
                        .collect(),
                    UnaryKind::Relu => g
                        .iter()
                        .zip(x.data())
                        .map(|(gi, xi)| if *xi > 0.0 { *gi } else { 0.0 })
                        .collect(),
                    UnaryKind::Exp => g.iter().zip(y.data()).map(|(gi, yi)| gi * yi).collect(),
                    UnaryKind::Ln => g.iter().zip(x.data()).map(|(gi, xi)| gi / xi).collect(),
                    UnaryKind::Sqrt => g
                        .iter()
                        .zip(y.data())
                        .map(|(gi, yi)| gi / (2.0 * yi))
                        .collect(),
                    UnaryKind::Abs => g
                        .iter()
                        .zip(x.data())
                        .map(|(gi, xi)| {
                            if *xi > 0.0 {
                                *gi
                            } else if *xi < 0.0 {
                                -*gi
                            } else {
                                0.0
                            }
                        })
                        .collect(),
                    UnaryKind::Square => g
                        .iter()
                        .zip(x.data())
                        .map(|(gi, xi)| 2.0 * xi * gi)
                        .collect(),
                    UnaryKind::Softplus => g
                        .iter()
                        .zip(x.data())
                        .map(|(gi, xi)| gi * math::sigmoid(*xi))
                        .collect(),
                };
                add_into(grads, *a, Tensor::new(x.shape().to_vec(), data).unwrap());
            }
            Op::Binary(kind, a, b) => {
                let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let (da, db): (Vec<f64>, Vec<f64>) = match kind {
                    BinaryKind::Add => (g.data().to_vec(), g.data().to_vec()),
                    BinaryKind::Sub => (g.data().to_vec(), g.iter().map(|gi| -gi).collect()),
                    BinaryKind::Mul => (
                        g.iter().zip(tb.data()).map(|(gi, bi)| gi * bi).collect(),
                        g.iter().zip(ta.data()).map(|(gi, ai)| gi * ai).collect(),
                    ),
                    BinaryKind::Div => (
                        g.iter().zip(tb.data()).map(|(gi, bi)| gi / bi).collect(),
                        g.iter()
                            .zip(ta.data().iter().zip(tb.data()))
                            .map(|(gi, (ai, bi))| -gi * ai / (bi * bi))
                            .collect(),
                    ),
                };
                add_into(grads, *a, Tensor::new(ta.shape().to_vec(), da).unwrap());
                add_into(grads, *b, Tensor::new(tb.shape().to_vec(), db).unwrap());
            }
            Op::AddScalar(a) => {
                add_into(grads, *a, g.clone());
            }
            Op::Scale(a, c) => {
                let data = g.iter().map(|gi| gi * c).collect();
                let shape = self.nodes[*a].value.shape().to_vec();
                add_into(grads, *a, Tensor::new(shape, data).unwrap());
            }
            Op::Matmul(a, b) => {
                let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                // dA = g . B^T
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for l in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += g.data()[i * n + j] * tb.data()[l * n + j];
                        }
                        da[i * k + l] = acc;
                    }
                }
                // dB = A^T . g
                let mut db = vec![0.0; k * n];
                for l in 0..k {
                    for i in 0..m {
                        let aval = ta.data()[i * k + l];
                        if aval == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            db[l * n + j] += aval * g.data()[i * n + j];
                        }
                    }
                }
                add_into(grads, *a, Tensor::matrix(m, k, da).unwrap());
                add_into(grads, *b, Tensor::matrix(k, n, db).unwrap());
            }
            Op::Matvec(w, x) => {
                let (tw, tx) = (&self.nodes[*w].value, &self.nodes[*x].value);
                let (m, n) = (tw.shape()[0], tw.shape()[1]);
                let mut dw = vec![0.0; m * n];
                for i in 0..m {
                    let gi = g.data()[i];
                    if gi == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        dw[i * n + j] = gi * tx.data()[j];
                    }
                }
                let mut dx = vec![0.0; n];
                for i in 0..m {
                    let gi = g.data()[i];
                    if gi == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        dx[j] += gi * tw.data()[i * n + j];
                    }
                }
                add_into(grads, *w, Tensor::matrix(m, n, dw).unwrap());
                add_into(grads, *x, Tensor::vector(dx));
            }
            Op::Sum(a) => {
                let shape = self.nodes[*a].value.shape().to_vec();
                add_into(grads, *a, Tensor::full(&shape, g.data()[0]));
            }
            Op::MaxAxis(a, axis) => {
                let ta = &self.nodes[*a].value;
                let mut da = Tensor::zeros(ta.shape());
                match ta.rank() {
                    1 => da.data_mut()[ta.argmax()] = g.data()[0],
                    2 => {
                        let (r, c) = (ta.shape()[0], ta.shape()[1]);
                        if *axis == 0 {
                            for j in 0..c {
                                let mut best = 0;
                                for i in 1..r {
                                    if ta.at(i, j) > ta.at(best, j) {
                                        best = i;
                                    }
                                }
                                da.data_mut()[best * c + j] = g.data()[j];
                            }
                        } else {
                            for i in 0..r {
                                let mut best = 0;
                                for j in 1..c {
                                    if ta.at(i, j) > ta.at(i, best) {
                                        best = j;
                                    }
                                }
                                da.data_mut()[i * c + best] = g.data()[i];
                            }
                        }
                    }
                    _ => unreachable!(),
                }
                add_into(grads, *a, da);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.nodes[*p].value.len();
                    let part = Tensor::vector(g.data()[offset..offset + len].to_vec());
                    add_into(grads, *p, part);
                    offset += len;
                }
            }
            Op::Slice(a, start) => {
                let ta = &self.nodes[*a].value;
                let mut da = Tensor::zeros(ta.shape());
                for (i, gi) in g.iter().enumerate() {
                    da.data_mut()[start + i] = *gi;
                }
                add_into(grads, *a, da);
            }
            Op::Gather(a, indices) => {
                let ta = &self.nodes[*a].value;
                let mut da = Tensor::zeros(ta.shape());
                for (gi, &src) in g.iter().zip(indices.iter()) {
                    da.data_mut()[src] += gi;
                }
                add_into(grads, *a, da);
            }
            Op::Reshape(a) => {
                let shape = self.nodes[*a].value.shape().to_vec();
                add_into(
                    grads,
                    *a,
                    Tensor::new(shape, g.data().to_vec()).unwrap(),
                );
            }
            Op::DiagEmbed(a) => {
                let n = self.nodes[*a].value.len();
                let data = (0..n).map(|i| g.data()[i * n + i]).collect();
                add_into(grads, *a, Tensor::vector(data));
            }
        }
    }

    /// Adds the gradients of every bound parameter into the store's gradient
    /// buffers.
    pub fn grads_to_store(&self, grads: &Grads, store: &mut ParamStore) -> Result<()> {
        for (name, id) in &self.param_binds {
            if let Some(g) = grads.by_node[*id].as_ref() {
                store.add_grad(name, g)?;
            }
        }
        Ok(())
    }

    /// As [`Tape::grads_to_store`], but silently skips bound parameters the
    /// store does not hold. Used when one tape reads from several stores and
    /// only one of them should receive an update.
    pub fn grads_to_store_matching(&self, grads: &Grads, store: &mut ParamStore) -> Result<()> {
        for (name, id) in &self.param_binds {
            if store.get(name).is_none() {
                continue;
            }
            if let Some(g) = grads.by_node[*id].as_ref() {
                store.add_grad(name, g)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_matches_spec_example() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = tape.sum(y).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn tanh_value_is_exact() {
        let mut tape = Tape::new();
        let x = tape.scalar(0.5);
        let y = tape.tanh(x).unwrap();
        let expected = 0.46211715726000974;
        assert!((tape.value(y).data()[0] - expected).abs() < 1e-10);
    }

    #[test]
    fn identity_matmul_preserves_input() {
        let mut tape = Tape::new();
        let i3 = tape.leaf(Tensor::eye(3));
        let x = tape.leaf(Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let y = tape.matmul(i3, x).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn max_routes_gradient_to_first_maximal_index() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![2.0, 5.0, 5.0]));
        let m = tape.max(x).unwrap();
        assert_eq!(tape.value(m).data(), &[5.0]);
        let grads = tape.backward(m).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn ln_rejects_non_positive_inputs() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 0.0]));
        assert!(matches!(tape.ln(x), Err(Error::Domain(_))));
        let y = tape.leaf(Tensor::vector(vec![-2.0]));
        assert!(matches!(tape.sqrt(y), Err(Error::Domain(_))));
    }

    #[test]
    fn division_by_zero_is_caught() {
        let mut tape = Tape::new();
        let a = tape.scalar(1.0);
        let b = tape.scalar(0.0);
        assert!(matches!(tape.div(a, b), Err(Error::NonFinite(_))));
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarRoot)));
    }

    #[test]
    fn concat_slice_roundtrip_gradients() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.leaf(Tensor::vector(vec![3.0]));
        let c = tape.concat(&[a, b]).unwrap();
        let s = tape.slice(c, 1, 3).unwrap();
        let total = tape.sum(s).unwrap();
        let grads = tape.backward(total).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[0.0, 1.0]);
        assert_eq!(grads.get(b).unwrap().data(), &[1.0]);
    }
}
