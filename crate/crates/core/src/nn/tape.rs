//! Reverse-mode automatic differentiation over a recorded operation tape.
//!
//! A [`Tape`] borrows the [`ParameterSet`] it reads from, records every
//! operation of a forward pass, and [`Tape::backward`] walks the record in
//! reverse to produce [`Gradients`] for parameters and gradient-requiring
//! leaves. Values produced with [`Tape::constant`] never receive gradients,
//! which is how hard-attention locations and detached states are modelled.

use std::borrow::Cow;
use std::collections::HashMap;

use super::conv::{col2im, conv_out_size, im2col};
use super::params::{ParamId, ParameterSet};
use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Minimum(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SumRows(Var),
    SumAll(Var),
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
}

struct Node<'a, T: Real> {
    value: Cow<'a, Tensor<T>>,
    op: Op,
    requires_grad: bool,
}

/// Operation record for one forward/backward pass.
pub struct Tape<'a, T: Real> {
    nodes: Vec<Node<'a, T>>,
    params: Option<&'a ParameterSet<T>>,
    param_vars: HashMap<ParamId, Var>,
}

impl<'a, T: Real> Default for Tape<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Real> Tape<'a, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: None, param_vars: HashMap::new() }
    }

    /// Tape reading trainable values from `params`.
    pub fn with_params(params: &'a ParameterSet<T>) -> Self {
        Self { nodes: Vec::new(), params: Some(params), param_vars: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor<T>>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push_owned(&mut self, value: Tensor<T>, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Cow::Owned(value), op, rg)
    }

    /// Non-differentiable value.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    /// Differentiable input leaf; its gradient is reported by [`Gradients::wrt`].
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, true)
    }

    /// Parameter leaf. Repeated calls with the same id return the same var so
    /// gradients of shared weights accumulate in one place.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let params = self.params.expect("tape created without a parameter set");
        let v = self.push(Cow::Borrowed(params.tensor(id)), Op::Param(id), true);
        self.param_vars.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Copy of `v` cut from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    fn check_finite(&self, v: Var, what: &str) -> Result<Var> {
        if self.value(v).all_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(format!("{what} produced a non-finite activation")))
        }
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{what}: operand shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(T) -> T) -> Var {
        let out = self.value(a).map(f);
        self.push_owned(out, op, &[a])
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, what: &str, f: impl Fn(T, T) -> T) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(va.shape(), data)?;
        Ok(self.push_owned(out, op, &[a, b]))
    }

    /// `[n, k] x [k, m] -> [n, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape(format!("matmul: cannot multiply {sa:?} by {sb:?}")));
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); n * m];
        T::gemm(n, k, m, T::one(), self.value(a).data(), false, self.value(b).data(), false, T::zero(), &mut out);
        let out = Tensor::new(&[n, m], out)?;
        Ok(self.push_owned(out, Op::MatMul(a, b), &[a, b]))
    }

    /// Adds `b: [m]` to every row of `x: [n, m]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (n, m) = self.value(x).rows_cols();
        if self.value(b).len() != m {
            return Err(Error::Shape(format!(
                "add_bias: bias of {} elements for rows of {}",
                self.value(b).len(),
                m
            )));
        }
        let bias = self.value(b).data();
        let mut data = self.value(x).data().to_vec();
        for r in 0..n {
            for (d, &bv) in data[r * m..(r + 1) * m].iter_mut().zip(bias) {
                *d += bv;
            }
        }
        let out = Tensor::new(self.shape(x), data)?;
        Ok(self.push_owned(out, Op::AddBias(x, b), &[x, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Div(a, b), "div", |x, y| x / y)
    }

    /// Element-wise minimum; the gradient goes to the selected operand.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Minimum(a, b), "minimum", |x, y| if x <= y { x } else { y })
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let f = T::from_f64_lossy(factor);
        self.unary(a, Op::Scale(a, factor), |x| x * f)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let c = T::from_f64_lossy(c);
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), |x| x.tanh())
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), |x| x.exp())
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Op::Ln(a), |x| x.ln())
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    /// Clamps into `[lo, hi]`; gradient is zero where the bound is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let (l, h) = (T::from_f64_lossy(lo), T::from_f64_lossy(hi));
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.max(l).min(h))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshaped(shape)?;
        Ok(self.push_owned(out, Op::Reshape(a), &[a]))
    }

    /// `[n, ...]` to `[n, rest]`.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.value(a).rows_cols();
        self.reshape(a, &[n, m])
    }

    /// Concatenates 2-D operands sharing the row count along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.value(parts[0]).dim(0);
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != n {
                return Err(Error::Shape(format!("concat_cols: operand {s:?} with {n} rows expected")));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(n * total);
        for r in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let out = Tensor::new(&[n, total], data)?;
        Ok(self.push_owned(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Columns `start..start + len` of a 2-D operand.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 || start + len > s[1] || len == 0 {
            return Err(Error::Shape(format!("slice_cols: {start}..{} out of {s:?}", start + len)));
        }
        let (n, m) = (s[0], s[1]);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(n * len);
        for r in 0..n {
            data.extend_from_slice(&src[r * m + start..r * m + start + len]);
        }
        let out = Tensor::new(&[n, len], data)?;
        Ok(self.push_owned(out, Op::SliceCols(a, start), &[a]))
    }

    /// Per-row sum: `[n, m] -> [n, 1]`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let (n, m) = self.value(a).rows_cols();
        let src = self.value(a).data();
        let data = (0..n).map(|r| src[r * m..(r + 1) * m].iter().copied().sum()).collect();
        let out = Tensor::new(&[n, 1], data).expect("row sums");
        self.push_owned(out, Op::SumRows(a), &[a])
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push_owned(out, Op::SumAll(a), &[a])
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// 2-D convolution of `x: [n, c, h, w]` with `w: [o, c, k, k]` and
    /// optional bias `[o]`, zero padding `pad` on every side.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[2] != ws[3] || xs[1] != ws[1] {
            return Err(Error::Shape(format!(
                "conv2d: input {xs:?} incompatible with kernel {ws:?}"
            )));
        }
        if !(1..=2).contains(&stride) {
            return Err(Error::Shape(format!("conv2d: stride {stride} not in {{1, 2}}")));
        }
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, k) = (ws[0], ws[2]);
        if h + 2 * pad < k || wd + 2 * pad < k {
            return Err(Error::Shape(format!(
                "conv2d: kernel {k}x{k} does not fit input {h}x{wd} with padding {pad}"
            )));
        }
        if let Some(b) = b {
            if self.value(b).len() != o {
                return Err(Error::Shape(format!("conv2d: bias must have {o} elements")));
            }
        }
        let ho = conv_out_size(h, k, stride, pad);
        let wo = conv_out_size(wd, k, stride, pad);
        let geom = ConvGeom { n, c, h, w: wd, o, k, stride, pad, ho, wo };

        let ckk = c * k * k;
        let plane = ho * wo;
        let mut cols = vec![T::zero(); ckk * n * plane];
        im2col(self.value(x).data(), n, c, h, wd, k, stride, pad, ho, wo, &mut cols);
        // [o, ckk] x [ckk, n * plane]
        let mut prod = vec![T::zero(); o * n * plane];
        T::gemm(o, ckk, n * plane, T::one(), self.value(w).data(), false, &cols, false, T::zero(), &mut prod);
        let mut out = vec![T::zero(); n * o * plane];
        let bias = b.map(|b| self.value(b).data().to_vec());
        for oc in 0..o {
            let bv = bias.as_ref().map_or(T::zero(), |bb| bb[oc]);
            for s in 0..n {
                let src = &prod[oc * n * plane + s * plane..oc * n * plane + (s + 1) * plane];
                let dst = &mut out[(s * o + oc) * plane..(s * o + oc + 1) * plane];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d = v + bv;
                }
            }
        }
        let out = Tensor::new(&[n, o, ho, wo], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push_owned(out, Op::Conv2d { x, w, b, geom }, &inputs))
    }

    /// Errors out if `v` holds a non-finite value.
    pub fn ensure_finite(&self, v: Var, what: &str) -> Result<Var> {
        self.check_finite(v, what)
    }

    /// Gradients of the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let seed = Tensor::full(self.shape(loss), T::one());
        self.backward_from(loss, seed)
    }

    /// Back-propagates an explicit output gradient `seed` from `out`.
    pub fn backward_from(&self, out: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        if seed.shape() != self.shape(out) {
            return Err(Error::Shape("backward seed shape mismatch".into()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; out.0 + 1];
        grads[out.0] = Some(seed);
        let mut params = HashMap::new();
        let mut leaves = HashMap::new();

        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    leaves.insert(i, g);
                }
                Op::Param(id) => {
                    params.insert(*id, g);
                }
                op => self.backprop_op(op, &node.value, g, &mut grads)?,
            }
        }
        Ok(Gradients { params, leaves })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.wants(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn zip_map(&self, g: &Tensor<T>, v: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let data = g.data().iter().zip(self.value(v).data()).map(|(&gv, &x)| f(gv, x)).collect();
        Tensor::new(g.shape(), data).expect("same shape")
    }

    fn zip_map_out(g: &Tensor<T>, out: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let data = g.data().iter().zip(out.data()).map(|(&gv, &y)| f(gv, y)).collect();
        Tensor::new(g.shape(), data).expect("same shape")
    }

    fn backprop_op(
        &self,
        op: &Op,
        out: &Tensor<T>,
        g: Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let one = T::one();
        let zero = T::zero();
        match *op {
            Op::Leaf | Op::Param(_) => unreachable!(),
            Op::MatMul(a, b) => {
                let (n, k) = self.value(a).rows_cols();
                let m = self.value(b).dim(1);
                if self.wants(a) {
                    let mut ga = vec![zero; n * k];
                    T::gemm(n, m, k, one, g.data(), false, self.value(b).data(), true, zero, &mut ga);
                    self.accumulate(grads, a, Tensor::new(&[n, k], ga)?);
                }
                if self.wants(b) {
                    let mut gb = vec![zero; k * m];
                    T::gemm(k, n, m, one, self.value(a).data(), true, g.data(), false, zero, &mut gb);
                    self.accumulate(grads, b, Tensor::new(&[k, m], gb)?);
                }
            }
            Op::AddBias(x, b) => {
                if self.wants(b) {
                    let (n, m) = g.rows_cols();
                    let mut gb = vec![zero; m];
                    for r in 0..n {
                        for (acc, &v) in gb.iter_mut().zip(&g.data()[r * m..(r + 1) * m]) {
                            *acc += v;
                        }
                    }
                    self.accumulate(grads, b, Tensor::new(self.shape(b), gb)?);
                }
                self.accumulate(grads, x, g);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g);
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.wants(a) {
                    self.accumulate(grads, a, self.zip_map(&g, b, |gv, y| gv * y));
                }
                if self.wants(b) {
                    self.accumulate(grads, b, self.zip_map(&g, a, |gv, x| gv * x));
                }
            }
            Op::Div(a, b) => {
                if self.wants(a) {
                    self.accumulate(grads, a, self.zip_map(&g, b, |gv, y| gv / y));
                }
                if self.wants(b) {
                    // d(a/b)/db = -out / b
                    let tmp = Self::zip_map_out(&g, out, |gv, q| gv * q);
                    self.accumulate(grads, b, self.zip_map(&tmp, b, |t, y| -t / y));
                }
            }
            Op::Minimum(a, b) => {
                let (va, vb) = (self.value(a).data(), self.value(b).data());
                let mut ga = g.clone();
                let mut gb = g;
                for i in 0..va.len() {
                    if va[i] <= vb[i] {
                        gb.data_mut()[i] = zero;
                    } else {
                        ga.data_mut()[i] = zero;
                    }
                }
                self.accumulate(grads, a, ga);
                self.accumulate(grads, b, gb);
            }
            Op::Scale(a, f) => {
                let f = T::from_f64_lossy(f);
                self.accumulate(grads, a, g.map(|v| v * f));
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                let shape = self.shape(a).to_vec();
                self.accumulate(grads, a, g.reshaped(&shape)?);
            }
            Op::Relu(a) => {
                let t = self.zip_map(&g, a, |gv, x| if x > zero { gv } else { zero });
                self.accumulate(grads, a, t);
            }
            Op::Tanh(a) => {
                self.accumulate(grads, a, Self::zip_map_out(&g, out, |gv, y| gv * (one - y * y)));
            }
            Op::Sigmoid(a) => {
                self.accumulate(grads, a, Self::zip_map_out(&g, out, |gv, y| gv * y * (one - y)));
            }
            Op::Softplus(a) => {
                self.accumulate(grads, a, self.zip_map(&g, a, |gv, x| gv * sigmoid(x)));
            }
            Op::Exp(a) => {
                self.accumulate(grads, a, Self::zip_map_out(&g, out, |gv, y| gv * y));
            }
            Op::Ln(a) => {
                self.accumulate(grads, a, self.zip_map(&g, a, |gv, x| gv / x));
            }
            Op::Square(a) => {
                let two = one + one;
                self.accumulate(grads, a, self.zip_map(&g, a, |gv, x| gv * two * x));
            }
            Op::Clamp(a, lo, hi) => {
                let (l, h) = (T::from_f64_lossy(lo), T::from_f64_lossy(hi));
                let t = self.zip_map(&g, a, |gv, x| if x < l || x > h { zero } else { gv });
                self.accumulate(grads, a, t);
            }
            Op::ConcatCols(ref parts) => {
                let (n, total) = g.rows_cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    if self.wants(p) {
                        let mut d = Vec::with_capacity(n * w);
                        for r in 0..n {
                            d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                        }
                        self.accumulate(grads, p, Tensor::new(&[n, w], d)?);
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let (n, m) = self.value(a).rows_cols();
                let len = g.dim(1);
                let mut d = vec![zero; n * m];
                for r in 0..n {
                    d[r * m + start..r * m + start + len].copy_from_slice(&g.data()[r * len..(r + 1) * len]);
                }
                self.accumulate(grads, a, Tensor::new(&[n, m], d)?);
            }
            Op::SumRows(a) => {
                let (n, m) = self.value(a).rows_cols();
                let mut d = Vec::with_capacity(n * m);
                for r in 0..n {
                    d.extend(std::iter::repeat(g.data()[r]).take(m));
                }
                self.accumulate(grads, a, Tensor::new(self.shape(a), d)?);
            }
            Op::SumAll(a) => {
                let gv = g.data()[0];
                self.accumulate(grads, a, Tensor::full(self.shape(a), gv));
            }
            Op::Conv2d { x, w, b, geom } => self.backprop_conv(x, w, b, geom, &g, grads)?,
        }
        Ok(())
    }

    fn backprop_conv(
        &self,
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let ConvGeom { n, c, h, w: wd, o, k, stride, pad, ho, wo } = geom;
        let (one, zero) = (T::one(), T::zero());
        let ckk = c * k * k;
        let plane = ho * wo;
        // Regroup the output gradient as [o, n * plane] to match the forward GEMM.
        let mut gcols = vec![zero; o * n * plane];
        for s in 0..n {
            for oc in 0..o {
                gcols[oc * n * plane + s * plane..oc * n * plane + (s + 1) * plane]
                    .copy_from_slice(&g.data()[(s * o + oc) * plane..(s * o + oc + 1) * plane]);
            }
        }
        if let Some(b) = b {
            if self.wants(b) {
                let gb: Vec<T> =
                    (0..o).map(|oc| gcols[oc * n * plane..(oc + 1) * n * plane].iter().copied().sum()).collect();
                self.accumulate(grads, b, Tensor::new(&[o], gb)?);
            }
        }
        if self.wants(w) {
            let mut cols = vec![zero; ckk * n * plane];
            im2col(self.value(x).data(), n, c, h, wd, k, stride, pad, ho, wo, &mut cols);
            let mut gw = vec![zero; o * ckk];
            T::gemm(o, n * plane, ckk, one, &gcols, false, &cols, true, zero, &mut gw);
            self.accumulate(grads, w, Tensor::new(&[o, c, k, k], gw)?);
        }
        if self.wants(x) {
            let mut dcols = vec![zero; ckk * n * plane];
            T::gemm(ckk, o, n * plane, one, self.value(w).data(), true, &gcols, false, zero, &mut dcols);
            let mut gx = vec![zero; n * c * h * wd];
            col2im(&dcols, n, c, h, wd, k, stride, pad, ho, wo, &mut gx);
            self.accumulate(grads, x, Tensor::new(&[n, c, h, wd], gx)?);
        }
        Ok(())
    }
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Default, Clone)]
pub struct Gradients<T> {
    params: HashMap<ParamId, Tensor<T>>,
    leaves: HashMap<usize, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }

    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&v.0)
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.params.keys().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty() && self.leaves.is_empty()
    }

    /// Keeps only parameter gradients accepted by `keep`.
    pub fn retain_params(&mut self, keep: impl Fn(ParamId) -> bool) {
        self.params.retain(|id, _| keep(*id));
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(Tensor::all_finite)
    }

    /// Adds `other` into `self`, summing gradients of shared parameters.
    pub fn merge(&mut self, other: Gradients<T>) {
        for (id, g) in other.params {
            match self.params.get_mut(&id) {
                Some(acc) => acc.add_assign(&g),
                None => {
                    self.params.insert(id, g);
                }
            }
        }
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    let one = T::one();
    if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    }
}

fn softplus<T: Real>(x: T) -> T {
    // log(1 + e^x) without overflow
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}
