//! Reverse-mode automatic differentiation on a per-step tape.
//!
//! A [`Graph`] records every operation in execution order, so the node list is
//! already topologically sorted. [`Graph::backward`] walks it in reverse and
//! returns a [`Gradients`] table. One graph is built per training phase and
//! dropped afterwards.

use std::collections::HashMap;

use crate::conv::{self, Geometry};
use crate::error::{Error, Result};
use crate::tensor::{gemm_abt_acc, gemm_acc, gemm_atb_acc, Element, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu(a) => {
                if x > 0.0 {
                    x
                } else {
                    a * x
                }
            }
            Activation::Relu => {
                if x < 0.0 {
                    0.0
                } else {
                    x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
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

/// A named trainable tensor with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Parameter<T: Element> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Element> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    /// Adds this parameter's gradient from `grads`, if it was reached.
    pub fn accumulate(&mut self, grads: &Gradients<T>) -> Result<()> {
        if let Some(g) = grads.param(&self.name) {
            self.grad.add_assign(g)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Binary(BinaryKind, Var, Var),
    Neg(Var),
    Scale(Var, T),
    AddScalar(Var),
    Act(Var, Activation),
    Reshape(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Sum(Var),
    Mean(Var),
    Conv2d {
        x: Var,
        kernel: Var,
        geom: Geometry,
    },
    ConvTranspose2d {
        x: Var,
        kernel: Var,
        geom: Geometry,
    },
    /// Per-channel normalization; `batch_stats` selects the train-mode input gradient.
    Norm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Bce {
        p: Var,
        target: T,
        clamp: T,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// The tape for one forward/backward pass.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<String, Var>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A constant: no gradient flows into it.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A differentiable leaf.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Registers a parameter as a differentiable leaf; repeated calls reuse the same node.
    pub fn param(&mut self, p: &Parameter<T>) -> Var {
        if let Some(&v) = self.params.get(&p.name) {
            return v;
        }
        let v = self.input(p.value.clone());
        self.params.insert(p.name.clone(), v);
        v
    }

    /// Copies the value of `v` into a new constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim(
                "matmul",
                format!("cannot multiply {sa:?} by {sb:?}"),
            ));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm_acc(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), rg))
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !broadcastable(ta.shape(), tb.shape()) {
            return Err(Error::dim(
                "elementwise",
                format!(
                    "{:?} does not broadcast against {:?}",
                    tb.shape(),
                    ta.shape()
                ),
            ));
        }
        let bd = tb.data();
        let bl = bd.len();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = bd[i % bl];
                match kind {
                    BinaryKind::Add => x + y,
                    BinaryKind::Sub => x - y,
                    BinaryKind::Mul => x * y,
                }
            })
            .collect();
        let out = Tensor::new(ta.shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Binary(kind, a, b), rg))
    }

    /// `a + b`; `b` may match `a`, a trailing suffix of `a`'s shape, or be a single value.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| -x);
        let rg = self.rg(a);
        self.push(out, Op::Neg(a), rg)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|x| x * c);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|x| x + c);
        let rg = self.rg(a);
        self.push(out, Op::AddScalar(a), rg)
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Result<Var> {
        if let Activation::LeakyRelu(alpha) = act {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::Contract(format!(
                    "leaky_relu slope {alpha} outside (0, 1)"
                )));
            }
        }
        let out = match act {
            Activation::LeakyRelu(alpha) => {
                let alpha = T::lit(alpha);
                self.value(a)
                    .map(|x| if x > T::zero() { x } else { alpha * x })
            }
            Activation::Relu => self
                .value(a)
                .map(|x| if x < T::zero() { T::zero() } else { x }),
            Activation::Tanh => self.value(a).map(|x| x.tanh()),
            Activation::Sigmoid => self.value(a).map(|x| {
                if x >= T::zero() {
                    T::one() / (T::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (T::one() + e)
                }
            }),
        };
        let rg = self.rg(a);
        Ok(self.push(out, Op::Act(a, act), rg))
    }

    pub fn leaky_relu(&mut self, a: Var, alpha: f64) -> Result<Var> {
        self.activation(a, Activation::LeakyRelu(alpha))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Sigmoid)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// Collapses all axes after the first.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        let n = s[0];
        let rest: usize = s[1..].iter().product();
        self.reshape(a, &[n, rest])
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::dim("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim(
                "concat",
                format!("axis {axis} out of range for {base:?}"),
            ));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let agrees = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !agrees {
                return Err(Error::dim(
                    "concat",
                    format!("{s:?} does not match {base:?} off axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut shape = base.clone();
        shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let w = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * w..(o + 1) * w]);
            }
        }
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            Tensor::new(&shape, data)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.sum() / T::lit(t.len() as f64);
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Cross-correlation with "same" zero padding; `x` is NHWC, `kernel` is `[kh, kw, c_in, c_out]`.
    pub fn conv2d(&mut self, x: Var, kernel: Var, stride: usize) -> Result<Var> {
        let geom = Geometry::conv(self.shape(x), self.shape(kernel), stride)?;
        let mut out = vec![T::zero(); geom.narrow_shape().iter().product()];
        conv::gather(
            &geom,
            self.value(x).data(),
            self.value(kernel).data(),
            &mut out,
        );
        let rg = self.rg(x) || self.rg(kernel);
        Ok(self.push(
            Tensor::new(&geom.narrow_shape(), out)?,
            Op::Conv2d { x, kernel, geom },
            rg,
        ))
    }

    /// Transposed convolution (the input-gradient of `conv2d`); `kernel` is `[kh, kw, c_out, c_in]`
    /// and spatial extents grow by `stride`.
    pub fn conv2d_transpose(&mut self, x: Var, kernel: Var, stride: usize) -> Result<Var> {
        let geom = Geometry::conv_transpose(self.shape(x), self.shape(kernel), stride)?;
        let mut out = vec![T::zero(); geom.wide_shape().iter().product()];
        conv::scatter(
            &geom,
            self.value(x).data(),
            self.value(kernel).data(),
            &mut out,
        );
        let rg = self.rg(x) || self.rg(kernel);
        Ok(self.push(
            Tensor::new(&geom.wide_shape(), out)?,
            Op::ConvTranspose2d { x, kernel, geom },
            rg,
        ))
    }

    /// Normalizes over every axis but the last using batch statistics.
    /// Returns the output and the per-channel (mean, biased variance).
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, Vec<T>, Vec<T>)> {
        let c = self.check_norm_shapes(x, gamma, beta)?;
        let t = self.value(x);
        let m = t.len() / c;
        if m < 2 {
            return Err(Error::DegenerateBatch(m));
        }
        let mut mean = vec![T::zero(); c];
        for row in t.data().chunks_exact(c) {
            for (acc, &v) in mean.iter_mut().zip(row) {
                *acc += v;
            }
        }
        let mf = T::lit(m as f64);
        mean.iter_mut().for_each(|v| *v = *v / mf);
        let mut var = vec![T::zero(); c];
        for row in t.data().chunks_exact(c) {
            for ((acc, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
                let d = v - mu;
                *acc += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v = *v / mf);
        let inv_std: Vec<T> = var
            .iter()
            .map(|&v| T::one() / (v + T::lit(eps)).sqrt())
            .collect();
        let out = self.normalize_with(x, gamma, beta, &mean, inv_std, true)?;
        Ok((out, mean, var))
    }

    /// Normalizes with fixed per-channel statistics (inference mode).
    pub fn batch_norm_fixed(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: f64,
    ) -> Result<Var> {
        let c = self.check_norm_shapes(x, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return Err(Error::dim("batch_norm", "running statistics length"));
        }
        let inv_std = var
            .iter()
            .map(|&v| T::one() / (v + T::lit(eps)).sqrt())
            .collect();
        self.normalize_with(x, gamma, beta, mean, inv_std, false)
    }

    fn check_norm_shapes(&self, x: Var, gamma: Var, beta: Var) -> Result<usize> {
        let c = *self.shape(x).last().unwrap();
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::dim(
                "batch_norm",
                format!(
                    "input {:?} with gamma {:?} and beta {:?}",
                    self.shape(x),
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        Ok(c)
    }

    fn normalize_with(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        inv_std: Vec<T>,
        batch_stats: bool,
    ) -> Result<Var> {
        let t = self.value(x);
        let c = mean.len();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let mut xhat = Vec::with_capacity(t.len());
        let mut out = Vec::with_capacity(t.len());
        for row in t.data().chunks_exact(c) {
            for ch in 0..c {
                let h = (row[ch] - mean[ch]) * inv_std[ch];
                xhat.push(h);
                out.push(gd[ch] * h + bd[ch]);
            }
        }
        let out = Tensor::new(t.shape(), out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            out,
            Op::Norm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            rg,
        ))
    }

    /// Mean binary cross-entropy of probabilities `p` against a constant target, with `p`
    /// clamped to `[clamp, 1 - clamp]`.
    pub fn bce(&mut self, p: Var, target: T, clamp: T) -> Var {
        let t = self.value(p);
        let lo = clamp;
        let hi = T::one() - clamp;
        let n = T::lit(t.len() as f64);
        let total: T = t
            .data()
            .iter()
            .map(|&v| {
                let q = if v < lo {
                    lo
                } else if v > hi {
                    hi
                } else {
                    v
                };
                -(target * q.ln() + (T::one() - target) * (T::one() - q).ln())
            })
            .sum();
        let rg = self.rg(p);
        self.push(Tensor::scalar(total / n), Op::Bce { p, target, clamp }, rg)
    }

    /// Runs reverse accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes.is_empty() {
            return Err(Error::Contract("backward on an empty tape".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.shape(loss)));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
        if !self.rg(v) {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g)?,
            slot => *slot = Some(g),
        }
        Ok(())
    }

    fn propagate(
        &self,
        node: &Node<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.rg(*a) {
                    let mut da = vec![T::zero(); m * k];
                    gemm_abt_acc(g.data(), tb.data(), &mut da, m, n, k);
                    self.accumulate(grads, *a, Tensor::new(&[m, k], da)?)?;
                }
                if self.rg(*b) {
                    let mut db = vec![T::zero(); k * n];
                    gemm_atb_acc(ta.data(), g.data(), &mut db, m, k, n);
                    self.accumulate(grads, *b, Tensor::new(&[k, n], db)?)?;
                }
            }
            Op::Binary(kind, a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let bl = tb.len();
                if self.rg(*a) {
                    let da = match kind {
                        BinaryKind::Add | BinaryKind::Sub => g.clone(),
                        BinaryKind::Mul => {
                            let bd = tb.data();
                            let d = g
                                .data()
                                .iter()
                                .enumerate()
                                .map(|(i, &gv)| gv * bd[i % bl])
                                .collect();
                            Tensor::new(g.shape(), d)?
                        }
                    };
                    self.accumulate(grads, *a, da)?;
                }
                if self.rg(*b) {
                    let mut db = vec![T::zero(); bl];
                    let ad = ta.data();
                    for (i, &gv) in g.data().iter().enumerate() {
                        db[i % bl] += match kind {
                            BinaryKind::Add => gv,
                            BinaryKind::Sub => -gv,
                            BinaryKind::Mul => gv * ad[i],
                        };
                    }
                    self.accumulate(grads, *b, Tensor::new(tb.shape(), db)?)?;
                }
            }
            Op::Neg(a) => self.accumulate(grads, *a, g.map(|v| -v))?,
            Op::Scale(a, c) => {
                let c = *c;
                self.accumulate(grads, *a, g.map(|v| v * c))?
            }
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone())?,
            Op::Act(a, act) => {
                let x = self.value(*a).data();
                let y = node.value.data();
                let d = g
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &gv)| {
                        let local = match *act {
                            Activation::LeakyRelu(alpha) => {
                                if x[i] > T::zero() {
                                    T::one()
                                } else {
                                    T::lit(alpha)
                                }
                            }
                            Activation::Relu => {
                                if x[i] > T::zero() {
                                    T::one()
                                } else {
                                    T::zero()
                                }
                            }
                            Activation::Tanh => T::one() - y[i] * y[i],
                            Activation::Sigmoid => y[i] * (T::one() - y[i]),
                        };
                        gv * local
                    })
                    .collect();
                self.accumulate(grads, *a, Tensor::new(g.shape(), d)?)?;
            }
            Op::Reshape(a) => {
                let d = g.clone().reshape(self.shape(*a))?;
                self.accumulate(grads, *a, d)?;
            }
            Op::Concat { inputs, axis } => {
                let shape = g.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let s = self.shape(v);
                    let w = s[*axis] * inner;
                    if self.rg(v) {
                        let mut d = Vec::with_capacity(outer * w);
                        for o in 0..outer {
                            let start = o * total + offset;
                            d.extend_from_slice(&g.data()[start..start + w]);
                        }
                        self.accumulate(grads, v, Tensor::new(s, d)?)?;
                    }
                    offset += w;
                }
            }
            Op::Sum(a) => {
                let gv = g.data()[0];
                self.accumulate(grads, *a, Tensor::full(self.shape(*a), gv))?;
            }
            Op::Mean(a) => {
                let t = self.value(*a);
                let gv = g.data()[0] / T::lit(t.len() as f64);
                self.accumulate(grads, *a, Tensor::full(t.shape(), gv))?;
            }
            Op::Conv2d { x, kernel, geom } => {
                if self.rg(*x) {
                    let mut dx = vec![T::zero(); self.value(*x).len()];
                    conv::scatter(geom, g.data(), self.value(*kernel).data(), &mut dx);
                    self.accumulate(grads, *x, Tensor::new(self.shape(*x), dx)?)?;
                }
                if self.rg(*kernel) {
                    let mut dk = vec![T::zero(); geom.kernel_len()];
                    conv::kernel_grad(geom, self.value(*x).data(), g.data(), &mut dk);
                    self.accumulate(grads, *kernel, Tensor::new(self.shape(*kernel), dk)?)?;
                }
            }
            Op::ConvTranspose2d { x, kernel, geom } => {
                if self.rg(*x) {
                    let mut dx = vec![T::zero(); self.value(*x).len()];
                    conv::gather(geom, g.data(), self.value(*kernel).data(), &mut dx);
                    self.accumulate(grads, *x, Tensor::new(self.shape(*x), dx)?)?;
                }
                if self.rg(*kernel) {
                    let mut dk = vec![T::zero(); geom.kernel_len()];
                    conv::kernel_grad(geom, g.data(), self.value(*x).data(), &mut dk);
                    self.accumulate(grads, *kernel, Tensor::new(self.shape(*kernel), dk)?)?;
                }
            }
            Op::Norm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let c = inv_std.len();
                let gd = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for (grow, hrow) in g.data().chunks_exact(c).zip(xhat.chunks_exact(c)) {
                    for ch in 0..c {
                        dgamma[ch] += grow[ch] * hrow[ch];
                        dbeta[ch] += grow[ch];
                    }
                }
                if self.rg(*x) {
                    let mut dx = Vec::with_capacity(g.len());
                    if *batch_stats {
                        let m = T::lit((g.len() / c) as f64);
                        for (grow, hrow) in g.data().chunks_exact(c).zip(xhat.chunks_exact(c)) {
                            for ch in 0..c {
                                // dxhat = g·γ; dx = inv_std/m · (m·dxhat − Σdxhat − xhat·Σ(dxhat·xhat))
                                let dxhat = grow[ch] * gd[ch];
                                let v = inv_std[ch] / m
                                    * (m * dxhat
                                        - dbeta[ch] * gd[ch]
                                        - hrow[ch] * dgamma[ch] * gd[ch]);
                                dx.push(v);
                            }
                        }
                    } else {
                        for grow in g.data().chunks_exact(c) {
                            for ch in 0..c {
                                dx.push(grow[ch] * gd[ch] * inv_std[ch]);
                            }
                        }
                    }
                    self.accumulate(grads, *x, Tensor::new(g.shape(), dx)?)?;
                }
                self.accumulate(grads, *gamma, Tensor::new(&[c], dgamma)?)?;
                self.accumulate(grads, *beta, Tensor::new(&[c], dbeta)?)?;
            }
            Op::Bce { p, target, clamp } => {
                let t = self.value(*p);
                let n = T::lit(t.len() as f64);
                let gv = g.data()[0];
                let (lo, hi) = (*clamp, T::one() - *clamp);
                let d = t
                    .data()
                    .iter()
                    .map(|&q| {
                        if q < lo || q > hi {
                            T::zero()
                        } else {
                            gv * (-*target / q + (T::one() - *target) / (T::one() - q)) / n
                        }
                    })
                    .collect();
                self.accumulate(grads, *p, Tensor::new(t.shape(), d)?)?;
            }
        }
        Ok(())
    }
}

fn broadcastable(a: &[usize], b: &[usize]) -> bool {
    if a == b || b == [1] {
        return true;
    }
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

/// Gradients produced by one backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: HashMap<String, Var>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of a leaf created on the graph; `None` when the loss does not reach it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name).and_then(|&v| self.wrt(v))
    }
}

/// Largest relative error between the analytic gradient of `f` at `x` and central
/// differences with step `h`: `maxᵢ |analyticᵢ − centralᵢ| / max(1, |centralᵢ|)`.
///
/// `f` builds a scalar on a fresh graph from the leaf it is handed.
pub fn finite_diff_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let eval = |t: &Tensor<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.constant(t.clone());
        let out = f(&mut g, v)?;
        let y = g.value(out).item()?;
        if !y.is_finite() {
            return Err(Error::Oracle(format!("f evaluated to {y}")));
        }
        Ok(y)
    };

    let mut g = Graph::new();
    let v = g.input(x.clone());
    let out = f(&mut g, v)?;
    let y = g.value(out).item()?;
    if !y.is_finite() {
        return Err(Error::Oracle(format!("f evaluated to {y}")));
    }
    let grads = g.backward(out)?;
    let analytic = grads
        .wrt(v)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape()));

    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let central = (up - down) / (2.0 * h);
        let err = (analytic.data()[i] - central).abs() / central.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
