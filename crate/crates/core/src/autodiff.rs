//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every op applied to its [`Var`] handles together
//! with the forward value. [`Graph::backward`] walks the record in reverse
//! creation order (a valid reverse topological order, since an op can only
//! consume earlier nodes) and accumulates vector-Jacobian products.
//!
//! A graph lives on one thread and is discarded after each step.
//! Parameters enter through [`Graph::param`], which binds the node to a
//! [`ParamId`] so [`ParamStore::accumulate`] can route gradients back.

use std::cell::RefCell;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Element, Tensor};

/// Epsilon added to the variance in batch normalization.
pub const BN_EPS: f64 = 1e-5;
/// Momentum of the batch-norm running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Padding rule for [`Graph::conv2d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Valid,
    /// Output extent `ceil(in / stride)`; extra padding goes to the bottom/right.
    Same,
    /// Symmetric explicit padding.
    Explicit(usize),
}

impl Padding {
    fn resolve(self, extent: usize, k: usize, stride: usize) -> Result<(usize, usize)> {
        let (begin, total) = match self {
            Padding::Valid => (0, 0),
            Padding::Explicit(p) => (p, 2 * p),
            Padding::Same => {
                let out = extent.div_ceil(stride);
                let total = ((out - 1) * stride + k).saturating_sub(extent);
                (total / 2, total)
            }
        };
        if extent + total < k {
            return Err(Error::dim("conv2d", "kernel extent", extent + total, k));
        }
        Ok((begin, (extent + total - k) / stride + 1))
    }
}

/// Batch-norm behaviour.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Normalize with batch statistics and queue running-stat updates.
    Train,
    /// Normalize with the stored running statistics.
    Eval,
}

enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    /// Transposed convolution; `geom` is the forward conv it transposes.
    Deconv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    LeakyRelu {
        x: Var,
        slope: T,
    },
    /// Per-channel affine normalization `gamma * xhat + beta`.
    Norm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Bilinear {
        x: Var,
        dims: [usize; 4],
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulChannels {
        x: Var,
        m: Var,
    },
    Affine {
        x: Var,
        scale: T,
    },
    Sigmoid(Var),
    Tanh(Var),
    Log(Var),
    Concat {
        parts: Vec<(Var, usize)>,
    },
    Sum(Var),
    NormalizeSamples {
        x: Var,
        sums: Vec<T>,
    },
    Reshape(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Kl {
        s: Var,
        g: Tensor<T>,
        eps: T,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A recorded computation.
pub struct Graph<T> {
    nodes: RefCell<Vec<Node<T>>>,
    bound: RefCell<HashMap<ParamId, Var>>,
    buffer_updates: RefCell<Vec<(ParamId, Tensor<T>)>>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
    bound: Vec<(ParamId, Var)>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of the loss with respect to the leaf `v`, if it required one.
    pub fn get(&self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::from_parts(self.shapes[v.0].clone(), g.clone()))
    }

    pub(crate) fn bound_params(&self) -> &[(ParamId, Var)] {
        &self.bound
    }
}

fn same_dims<T: Element>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.rank() != b.rank() {
        return Err(Error::dim(op, "rank", a.rank(), b.rank()));
    }
    for (i, (&x, &y)) in a.shape().iter().zip(b.shape()).enumerate() {
        if x != y {
            return Err(Error::dim(op, format!("axis {i}"), x, y));
        }
    }
    Ok(())
}

/// How the second operand of a binary op is broadcast.
#[derive(Clone, Copy)]
enum Bcast {
    None,
    LeftScalar,
    RightScalar,
}

fn binary_bcast<T: Element>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<Bcast> {
    if a.shape() == b.shape() {
        Ok(Bcast::None)
    } else if b.len() == 1 {
        Ok(Bcast::RightScalar)
    } else if a.len() == 1 {
        Ok(Bcast::LeftScalar)
    } else {
        same_dims(op, a, b).map(|_| Bcast::None)
    }
}

/// Sum accumulated in 64-bit so 32-bit maps normalize accurately.
fn sum_all<T: Element>(v: &[T]) -> T {
    T::c(v.iter().map(|x| x.to_f64().unwrap()).sum())
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            bound: RefCell::new(HashMap::new()),
            buffer_updates: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert!(value.all_finite(), "non-finite output from {}", op_name(&op));
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn val(&self, v: Var) -> Tensor<T> {
        self.nodes.borrow()[v.0].value.clone()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// A constant input that never receives a gradient.
    pub fn input(&self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf that receives a gradient.
    pub fn variable(&self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Binds a stored parameter; repeated calls return the same node.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.bound.borrow().get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Leaf, p.trainable);
        self.bound.borrow_mut().insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> Tensor<T> {
        self.val(v)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Running-statistics updates queued by train-mode batch norm.
    pub fn take_buffer_updates(&self) -> Vec<(ParamId, Tensor<T>)> {
        std::mem::take(&mut self.buffer_updates.borrow_mut())
    }

    /// 2-d convolution with `weight` shaped `(kh, kw, in_ch, out_ch)`.
    pub fn conv2d(&self, x: Var, weight: Var, bias: Option<Var>, stride: usize, padding: Padding) -> Result<Var> {
        let (xv, wv) = (self.val(x), self.val(weight));
        let [n, h, w, ci] = xv.dims4("conv2d")?;
        let [kh, kw, wci, co] = wv.dims4("conv2d weight")?;
        if wci != ci {
            return Err(Error::dim("conv2d", "input channels", wci, ci));
        }
        if stride == 0 {
            return Err(Error::Usage("conv2d stride must be at least 1".into()));
        }
        let bv = self.check_bias("conv2d", bias, co)?;
        let (pad_top, oh) = padding.resolve(h, kh, stride)?;
        let (pad_left, ow) = padding.resolve(w, kw, stride)?;
        let geom = ConvGeom {
            n,
            h,
            w,
            ci,
            kh,
            kw,
            co,
            stride,
            pad_top,
            pad_left,
            oh,
            ow,
        };
        let y = kernels::conv_forward(xv.data(), wv.data(), bv.as_ref().map(|b| b.data()), &geom);
        let rg = self.rg(x) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(
            Tensor::from_parts(vec![n, oh, ow, co], y),
            Op::Conv {
                x,
                w: weight,
                b: bias,
                geom,
            },
            rg,
        ))
    }

    /// Transposed convolution multiplying the spatial extent by `stride`.
    ///
    /// `weight` is shaped `(kh, kw, out_ch, in_ch)`: the layout of the
    /// convolution this op is the adjoint of. Requires `kh, kw >= stride`.
    pub fn deconv2d(&self, x: Var, weight: Var, bias: Option<Var>, stride: usize) -> Result<Var> {
        let (xv, wv) = (self.val(x), self.val(weight));
        let [n, h, w, ci] = xv.dims4("deconv2d")?;
        let [kh, kw, co, wci] = wv.dims4("deconv2d weight")?;
        if wci != ci {
            return Err(Error::dim("deconv2d", "input channels", wci, ci));
        }
        if stride == 0 {
            return Err(Error::Usage("deconv2d stride must be at least 1".into()));
        }
        if kh < stride {
            return Err(Error::dim("deconv2d", "kernel height", stride, kh));
        }
        if kw < stride {
            return Err(Error::dim("deconv2d", "kernel width", stride, kw));
        }
        let bv = self.check_bias("deconv2d", bias, co)?;
        let geom = ConvGeom {
            n,
            h: h * stride,
            w: w * stride,
            ci: co,
            kh,
            kw,
            co: ci,
            stride,
            pad_top: (kh - stride) / 2,
            pad_left: (kw - stride) / 2,
            oh: h,
            ow: w,
        };
        let mut y = kernels::conv_backward_data(xv.data(), wv.data(), &geom);
        if let Some(b) = &bv {
            for row in y.chunks_mut(co) {
                for (v, &bb) in row.iter_mut().zip(b.data()) {
                    *v = *v + bb;
                }
            }
        }
        let rg = self.rg(x) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(
            Tensor::from_parts(vec![n, h * stride, w * stride, co], y),
            Op::Deconv {
                x,
                w: weight,
                b: bias,
                geom,
            },
            rg,
        ))
    }

    fn check_bias(&self, op: &'static str, bias: Option<Var>, co: usize) -> Result<Option<Tensor<T>>> {
        let Some(b) = bias else { return Ok(None) };
        let bv = self.val(b);
        if bv.len() != co {
            return Err(Error::dim(op, "bias length", co, bv.len()));
        }
        Ok(Some(bv))
    }

    pub fn maxpool2d(&self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let xv = self.val(x);
        let dims @ [n, h, w, c] = xv.dims4("maxpool2d")?;
        if window == 0 || stride == 0 {
            return Err(Error::Usage("maxpool2d window and stride must be at least 1".into()));
        }
        if window > h {
            return Err(Error::dim("maxpool2d", "height", window, h));
        }
        if window > w {
            return Err(Error::dim("maxpool2d", "width", window, w));
        }
        let (y, argmax, [oh, ow]) = kernels::maxpool_forward(xv.data(), dims, window, stride);
        Ok(self.push(
            Tensor::from_parts(vec![n, oh, ow, c], y),
            Op::MaxPool { x, argmax },
            self.rg(x),
        ))
    }

    pub fn leaky_relu(&self, x: Var, slope: f64) -> Var {
        let slope = T::c(slope);
        let y = self.val(x).map(|v| if v >= T::zero() { v } else { v * slope });
        self.push(y, Op::LeakyRelu { x, slope }, self.rg(x))
    }

    /// Batch normalization over (batch, height, width) for each channel.
    ///
    /// `running` holds the (mean, variance) buffers; train mode queues their
    /// update, readable through [`Graph::take_buffer_updates`].
    pub fn batch_norm(&self, x: Var, gamma: Var, beta: Var, running: (ParamId, ParamId), store: &ParamStore<T>, mode: Mode) -> Result<Var> {
        let xv = self.val(x);
        let [n, h, w, c] = xv.dims4("batch_norm")?;
        for (name, v) in [("gamma length", gamma), ("beta length", beta)] {
            let len = self.val(v).len();
            if len != c {
                return Err(Error::dim("batch_norm", name, c, len));
            }
        }
        let m = n * h * w;
        let eps = T::c(BN_EPS);
        let (mean, var) = match mode {
            Mode::Eval => (store.get(running.0).value.data().to_vec(), store.get(running.1).value.data().to_vec()),
            Mode::Train => {
                let mut mean = vec![T::zero(); c];
                for row in xv.data().chunks(c) {
                    for (a, &v) in mean.iter_mut().zip(row) {
                        *a = *a + v;
                    }
                }
                let mf = T::from_usize(m).unwrap();
                mean.iter_mut().for_each(|a| *a = *a / mf);
                let mut var = vec![T::zero(); c];
                for row in xv.data().chunks(c) {
                    for ((a, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
                        *a = *a + (v - mu) * (v - mu);
                    }
                }
                var.iter_mut().for_each(|a| *a = *a / mf);
                let mom = T::c(BN_MOMENTUM);
                let unbias = if m > 1 { mf / T::from_usize(m - 1).unwrap() } else { T::one() };
                let upd = |old: &Tensor<T>, batch: &[T], scale: T| {
                    old.zip_map(&Tensor::from_parts(vec![c], batch.to_vec()), |o, b| (T::one() - mom) * o + mom * b * scale)
                };
                let new_mean = upd(&store.get(running.0).value, &mean, T::one());
                let new_var = upd(&store.get(running.1).value, &var, unbias);
                let mut q = self.buffer_updates.borrow_mut();
                q.push((running.0, new_mean));
                q.push((running.1, new_var));
                (mean, var)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = xv.data().to_vec();
        for row in xhat.chunks_mut(c) {
            for ((v, &mu), &is) in row.iter_mut().zip(&mean).zip(&inv_std) {
                *v = (*v - mu) * is;
            }
        }
        let (gv, bv) = (self.val(gamma), self.val(beta));
        let mut y = xhat.clone();
        for row in y.chunks_mut(c) {
            for ((v, &g), &b) in row.iter_mut().zip(gv.data()).zip(bv.data()) {
                *v = g * *v + b;
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Tensor::from_parts(vec![n, h, w, c], y),
            Op::Norm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: mode == Mode::Train,
            },
            rg,
        ))
    }

    /// Bilinear resize with half-pixel centres (no corner alignment).
    pub fn bilinear_resize(&self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        if out_h == 0 || out_w == 0 {
            return Err(Error::Usage("bilinear_resize target must be at least 1×1".into()));
        }
        let xv = self.val(x);
        let dims @ [n, h, w, c] = xv.dims4("bilinear_resize")?;
        if (h, w) == (out_h, out_w) {
            return Ok(x);
        }
        let y = kernels::bilinear_forward(xv.data(), dims, out_h, out_w);
        Ok(self.push(Tensor::from_parts(vec![n, out_h, out_w, c], y), Op::Bilinear { x, dims }, self.rg(x)))
    }

    fn binary(&self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<(Tensor<T>, bool)> {
        let (av, bv) = (self.val(a), self.val(b));
        let out = match binary_bcast(name, &av, &bv)? {
            Bcast::None => av.zip_map(&bv, f),
            Bcast::RightScalar => {
                let s = bv.data()[0];
                av.map(|x| f(x, s))
            }
            Bcast::LeftScalar => {
                let s = av.data()[0];
                bv.map(|x| f(s, x))
            }
        };
        Ok((out, self.rg(a) || self.rg(b)))
    }

    /// Elementwise sum; one operand may be a single-element tensor.
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (y, rg) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(y, Op::Add(a, b), rg))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let (y, rg) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(y, Op::Sub(a, b), rg))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (y, rg) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(y, Op::Mul(a, b), rg))
    }

    /// Multiplies every channel of `x` by the single-channel map `m`.
    pub fn mul_channels(&self, x: Var, m: Var) -> Result<Var> {
        let (xv, mv) = (self.val(x), self.val(m));
        let [n, h, w, c] = xv.dims4("mul_channels")?;
        let [mn, mh, mw, mc] = mv.dims4("mul_channels mask")?;
        for (axis, want, got) in [("batch", n, mn), ("height", h, mh), ("width", w, mw), ("mask channels", 1, mc)] {
            if want != got {
                return Err(Error::dim("mul_channels", axis, want, got));
            }
        }
        let mut y = xv.data().to_vec();
        for (row, &s) in y.chunks_mut(c).zip(mv.data()) {
            row.iter_mut().for_each(|v| *v = *v * s);
        }
        let rg = self.rg(x) || self.rg(m);
        Ok(self.push(Tensor::from_parts(vec![n, h, w, c], y), Op::MulChannels { x, m }, rg))
    }

    /// `scale * x + shift`.
    pub fn affine(&self, x: Var, scale: f64, shift: f64) -> Var {
        let (s, b) = (T::c(scale), T::c(shift));
        let y = self.val(x).map(|v| v * s + b);
        self.push(y, Op::Affine { x, scale: s }, self.rg(x))
    }

    pub fn scale(&self, x: Var, s: f64) -> Var {
        self.affine(x, s, 0.0)
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        let y = self.val(x).map(|v| T::one() / (T::one() + (-v).exp()));
        self.push(y, Op::Sigmoid(x), self.rg(x))
    }

    pub fn tanh(&self, x: Var) -> Var {
        let y = self.val(x).map(|v| v.tanh());
        self.push(y, Op::Tanh(x), self.rg(x))
    }

    pub fn log(&self, x: Var) -> Var {
        let y = self.val(x).map(|v| v.ln());
        self.push(y, Op::Log(x), self.rg(x))
    }

    /// Concatenates along the channel axis; other extents must agree.
    pub fn concat_channels(&self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::Usage("concat of zero tensors".into()))?;
        let [n, h, w, _] = self.val(first).dims4("concat_channels")?;
        let mut dims = Vec::with_capacity(parts.len());
        let mut rg = false;
        for &p in parts {
            let [pn, ph, pw, pc] = self.val(p).dims4("concat_channels")?;
            for (axis, want, got) in [("batch", n, pn), ("height", h, ph), ("width", w, pw)] {
                if want != got {
                    return Err(Error::dim("concat_channels", axis, want, got));
                }
            }
            dims.push((p, pc));
            rg |= self.rg(p);
        }
        let total: usize = dims.iter().map(|d| d.1).sum();
        let vals: Vec<Tensor<T>> = parts.iter().map(|&p| self.val(p)).collect();
        let mut y = Vec::with_capacity(n * h * w * total);
        for pix in 0..n * h * w {
            for (v, &(_, c)) in vals.iter().zip(&dims) {
                y.extend_from_slice(&v.data()[pix * c..(pix + 1) * c]);
            }
        }
        Ok(self.push(Tensor::from_parts(vec![n, h, w, total], y), Op::Concat { parts: dims }, rg))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&self, x: Var) -> Var {
        let s = sum_all(self.val(x).data());
        self.push(Tensor::scalar(s), Op::Sum(x), self.rg(x))
    }

    /// Arithmetic mean of one-element tensors.
    pub fn mean_scalars(&self, xs: &[Var]) -> Result<Var> {
        let mut acc = *xs.first().ok_or_else(|| Error::Usage("mean of zero values".into()))?;
        for &x in &xs[1..] {
            acc = self.add(acc, x)?;
        }
        Ok(self.scale(acc, 1.0 / xs.len() as f64))
    }

    /// Divides each batch sample by its own sum, giving distributions.
    pub fn normalize_samples(&self, x: Var) -> Result<Var> {
        let xv = self.val(x);
        let [n, ..] = xv.dims4("normalize_samples")?;
        let len = xv.len() / n;
        let mut y = xv.data().to_vec();
        let mut sums = Vec::with_capacity(n);
        for chunk in y.chunks_mut(len) {
            let s = sum_all(chunk);
            if s <= T::zero() {
                return Err(Error::Numeric("normalize_samples: non-positive sum".into()));
            }
            chunk.iter_mut().for_each(|v| *v = *v / s);
            sums.push(s);
        }
        Ok(self.push(Tensor::from_parts(xv.shape().to_vec(), y), Op::NormalizeSamples { x, sums }, self.rg(x)))
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.val(x).reshape(shape)?;
        Ok(self.push(y, Op::Reshape(x), self.rg(x)))
    }

    /// Fully connected layer: flattens all but the batch axis of `x`,
    /// multiplies by `weight` `(in, out)` and adds `bias`. Output `(n, out)`.
    pub fn linear(&self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.val(x), self.val(weight));
        let n = xv.shape()[0];
        let k = xv.len() / n;
        let &[wk, m] = wv.shape() else {
            return Err(Error::dim("linear", "weight rank", 2, wv.rank()));
        };
        if wk != k {
            return Err(Error::dim("linear", "input features", wk, k));
        }
        let bv = self.check_bias("linear", bias, m)?;
        let mut y = vec![T::zero(); n * m];
        T::gemm(n, k, m, xv.data(), k as isize, 1, wv.data(), m as isize, 1, &mut y, m as isize);
        if let Some(b) = &bv {
            for row in y.chunks_mut(m) {
                for (v, &bb) in row.iter_mut().zip(b.data()) {
                    *v = *v + bb;
                }
            }
        }
        let rg = self.rg(x) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(Tensor::from_parts(vec![n, m], y), Op::Linear { x, w: weight, b: bias }, rg))
    }

    /// `sum g·ln(g / max(s, eps))` over all elements, skipping `g = 0`.
    ///
    /// `ground` is a constant; the gradient flows to `s` only.
    pub fn kl_div(&self, ground: &Tensor<T>, s: Var, eps: f64) -> Result<Var> {
        let sv = self.val(s);
        same_dims("kl_div", ground, &sv)?;
        let eps = T::c(eps);
        let mut acc = T::zero();
        for (&g, &p) in ground.data().iter().zip(sv.data()) {
            if g > T::zero() {
                acc = acc + g * (g.ln() - p.max(eps).ln());
            }
        }
        Ok(self.push(
            Tensor::scalar(acc),
            Op::Kl {
                s,
                g: ground.clone(),
                eps,
            },
            self.rg(s),
        ))
    }

    /// Backpropagates from the one-element tensor `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.len() != 1 {
            return Err(Error::dim("backward", "loss elements", 1, nodes[loss.0].value.len()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[id].take() else { continue };
            backprop(&nodes, node, &dy, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(dy);
            }
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let mut bound: Vec<(ParamId, Var)> = self.bound.borrow().iter().map(|(&p, &v)| (p, v)).collect();
        bound.sort_by_key(|(p, _)| *p);
        Ok(Gradients { grads, shapes, bound })
    }
}

fn op_name<T>(op: &Op<T>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Conv { .. } => "conv2d",
        Op::Deconv { .. } => "deconv2d",
        Op::MaxPool { .. } => "maxpool2d",
        Op::LeakyRelu { .. } => "leaky_relu",
        Op::Norm { .. } => "batch_norm",
        Op::Bilinear { .. } => "bilinear_resize",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::MulChannels { .. } => "mul_channels",
        Op::Affine { .. } => "affine",
        Op::Sigmoid(_) => "sigmoid",
        Op::Tanh(_) => "tanh",
        Op::Log(_) => "log",
        Op::Concat { .. } => "concat_channels",
        Op::Sum(_) => "sum",
        Op::NormalizeSamples { .. } => "normalize_samples",
        Op::Reshape(_) => "reshape",
        Op::Linear { .. } => "linear",
        Op::Kl { .. } => "kl_div",
    }
}

fn accumulate<T: Element>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a = *a + b),
        slot @ None => *slot = Some(g),
    }
}

/// Reduces a gradient to the shape of an operand that may have been broadcast.
fn unbroadcast<T: Element>(g: Vec<T>, operand_len: usize) -> Vec<T> {
    if operand_len == 1 && g.len() != 1 {
        vec![sum_all(&g)]
    } else {
        g
    }
}

fn backprop<T: Element>(nodes: &[Node<T>], node: &Node<T>, dy: &[T], grads: &mut [Option<Vec<T>>]) {
    let val = |v: Var| &nodes[v.0].value;
    let rg = |v: Var| nodes[v.0].requires_grad;
    match &node.op {
        Op::Leaf => {}
        Op::Conv { x, w, b, geom } => {
            if rg(*x) {
                let dx = kernels::conv_backward_data(dy, val(*w).data(), geom);
                accumulate(nodes, grads, *x, dx);
            }
            if rg(*w) {
                let dw = kernels::conv_backward_filter(val(*x).data(), dy, geom);
                accumulate(nodes, grads, *w, dw);
            }
            if let Some(b) = b {
                accumulate(nodes, grads, *b, kernels::channel_sum(dy, geom.co));
            }
        }
        Op::Deconv { x, w, b, geom } => {
            if rg(*x) {
                let dx = kernels::conv_forward(dy, val(*w).data(), None, geom);
                accumulate(nodes, grads, *x, dx);
            }
            if rg(*w) {
                let dw = kernels::conv_backward_filter(dy, val(*x).data(), geom);
                accumulate(nodes, grads, *w, dw);
            }
            if let Some(b) = b {
                accumulate(nodes, grads, *b, kernels::channel_sum(dy, geom.ci));
            }
        }
        Op::MaxPool { x, argmax } => {
            let mut dx = vec![T::zero(); val(*x).len()];
            for (&i, &g) in argmax.iter().zip(dy) {
                dx[i] = dx[i] + g;
            }
            accumulate(nodes, grads, *x, dx);
        }
        Op::LeakyRelu { x, slope } => {
            let dx = val(*x)
                .data()
                .iter()
                .zip(dy)
                .map(|(&v, &g)| if v >= T::zero() { g } else { g * *slope })
                .collect();
            accumulate(nodes, grads, *x, dx);
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
            let mut dbeta = vec![T::zero(); c];
            let mut dgamma = vec![T::zero(); c];
            for (row, xr) in dy.chunks(c).zip(xhat.chunks(c)) {
                for ch in 0..c {
                    dbeta[ch] = dbeta[ch] + row[ch];
                    dgamma[ch] = dgamma[ch] + row[ch] * xr[ch];
                }
            }
            if rg(*x) {
                let gv = val(*gamma).data();
                let m = T::from_usize(dy.len() / c).unwrap();
                let mut dx = Vec::with_capacity(dy.len());
                for (row, xr) in dy.chunks(c).zip(xhat.chunks(c)) {
                    for ch in 0..c {
                        let k = gv[ch] * inv_std[ch];
                        dx.push(if *batch_stats {
                            k * (row[ch] - (dbeta[ch] + xr[ch] * dgamma[ch]) / m)
                        } else {
                            k * row[ch]
                        });
                    }
                }
                accumulate(nodes, grads, *x, dx);
            }
            accumulate(nodes, grads, *gamma, dgamma);
            accumulate(nodes, grads, *beta, dbeta);
        }
        Op::Bilinear { x, dims } => {
            let s = node.value.shape();
            let dx = kernels::bilinear_backward(dy, *dims, s[1], s[2]);
            accumulate(nodes, grads, *x, dx);
        }
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -T::one() } else { T::one() };
            if rg(*a) {
                accumulate(nodes, grads, *a, unbroadcast(dy.to_vec(), val(*a).len()));
            }
            if rg(*b) {
                let g = dy.iter().map(|&g| g * sign).collect();
                accumulate(nodes, grads, *b, unbroadcast(g, val(*b).len()));
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let other = |o: &Tensor<T>| -> Vec<T> {
                if o.len() == 1 {
                    dy.iter().map(|&g| g * o.data()[0]).collect()
                } else {
                    dy.iter().zip(o.data()).map(|(&g, &v)| g * v).collect()
                }
            };
            if rg(*a) {
                accumulate(nodes, grads, *a, unbroadcast(other(bv), av.len()));
            }
            if rg(*b) {
                accumulate(nodes, grads, *b, unbroadcast(other(av), bv.len()));
            }
        }
        Op::MulChannels { x, m } => {
            let (xv, mv) = (val(*x), val(*m));
            let c = xv.shape()[3];
            if rg(*x) {
                let mut dx = dy.to_vec();
                for (row, &s) in dx.chunks_mut(c).zip(mv.data()) {
                    row.iter_mut().for_each(|v| *v = *v * s);
                }
                accumulate(nodes, grads, *x, dx);
            }
            if rg(*m) {
                let dm = dy
                    .chunks(c)
                    .zip(xv.data().chunks(c))
                    .map(|(g, v)| g.iter().zip(v).fold(T::zero(), |a, (&g, &v)| a + g * v))
                    .collect();
                accumulate(nodes, grads, *m, dm);
            }
        }
        Op::Affine { x, scale } => {
            accumulate(nodes, grads, *x, dy.iter().map(|&g| g * *scale).collect());
        }
        Op::Sigmoid(x) => {
            let dx = node
                .value
                .data()
                .iter()
                .zip(dy)
                .map(|(&y, &g)| g * y * (T::one() - y))
                .collect();
            accumulate(nodes, grads, *x, dx);
        }
        Op::Tanh(x) => {
            let dx = node
                .value
                .data()
                .iter()
                .zip(dy)
                .map(|(&y, &g)| g * (T::one() - y * y))
                .collect();
            accumulate(nodes, grads, *x, dx);
        }
        Op::Log(x) => {
            let dx = val(*x).data().iter().zip(dy).map(|(&v, &g)| g / v).collect();
            accumulate(nodes, grads, *x, dx);
        }
        Op::Concat { parts } => {
            let total: usize = parts.iter().map(|p| p.1).sum();
            let pixels = dy.len() / total;
            let mut offset = 0;
            for &(p, c) in parts {
                if rg(p) {
                    let mut dp = Vec::with_capacity(pixels * c);
                    for pix in 0..pixels {
                        dp.extend_from_slice(&dy[pix * total + offset..pix * total + offset + c]);
                    }
                    accumulate(nodes, grads, p, dp);
                }
                offset += c;
            }
        }
        Op::Sum(x) => {
            accumulate(nodes, grads, *x, vec![dy[0]; val(*x).len()]);
        }
        Op::NormalizeSamples { x, sums } => {
            let y = node.value.data();
            let len = y.len() / sums.len();
            let mut dx = Vec::with_capacity(y.len());
            for ((yc, gc), &s) in y.chunks(len).zip(dy.chunks(len)).zip(sums) {
                let dot = yc.iter().zip(gc).fold(T::zero(), |a, (&y, &g)| a + y * g);
                dx.extend(gc.iter().map(|&g| (g - dot) / s));
            }
            accumulate(nodes, grads, *x, dx);
        }
        Op::Reshape(x) => accumulate(nodes, grads, *x, dy.to_vec()),
        Op::Linear { x, w, b } => {
            let (xv, wv) = (val(*x), val(*w));
            let (n, m) = (node.value.shape()[0], node.value.shape()[1]);
            let k = xv.len() / n;
            if rg(*x) {
                let mut dx = vec![T::zero(); n * k];
                T::gemm(n, m, k, dy, m as isize, 1, wv.data(), 1, m as isize, &mut dx, k as isize);
                accumulate(nodes, grads, *x, dx);
            }
            if rg(*w) {
                let mut dw = vec![T::zero(); k * m];
                T::gemm(k, n, m, xv.data(), 1, k as isize, dy, m as isize, 1, &mut dw, m as isize);
                accumulate(nodes, grads, *w, dw);
            }
            if let Some(b) = b {
                accumulate(nodes, grads, *b, kernels::channel_sum(dy, m));
            }
        }
        Op::Kl { s, g, eps } => {
            let ds = g
                .data()
                .iter()
                .zip(val(*s).data())
                .map(|(&g, &p)| {
                    if g > T::zero() && p > *eps {
                        -dy[0] * g / p
                    } else {
                        T::zero()
                    }
                })
                .collect();
            accumulate(nodes, grads, *s, ds);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn conv_identity_kernel() {
        let g = Graph::<f64>::new();
        let x = g.input(t(&[1, 3, 3, 1], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]));
        let w = g.input(t(&[1, 1, 1, 1], &[1.0]));
        let b = g.input(t(&[1], &[0.0]));
        let y = g.conv2d(x, w, Some(b), 1, Padding::Same).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn conv_two_by_two_sum() {
        let g = Graph::<f64>::new();
        let x = g.input(t(&[1, 2, 2, 1], &[1., 2., 3., 4.]));
        let w = g.input(t(&[2, 2, 1, 1], &[1.; 4]));
        let y = g.conv2d(x, w, None, 1, Padding::Valid).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 1, 1]);
        assert_eq!(g.value(y).data(), &[10.0]);
    }

    #[test]
    fn conv_reports_channel_mismatch() {
        let g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(&[1, 4, 4, 3]));
        let w = g.input(Tensor::zeros(&[3, 3, 2, 5]));
        match g.conv2d(x, w, None, 1, Padding::Same) {
            Err(Error::Dimension { axis, expected, got, .. }) => {
                assert_eq!(axis, "input channels");
                assert_eq!((expected, got), (2, 3));
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn same_padding_output_extent() {
        let g = Graph::<f32>::new();
        let x = g.input(Tensor::zeros(&[1, 448, 448, 1]));
        let w = g.input(Tensor::zeros(&[7, 7, 1, 1]));
        let y = g.conv2d(x, w, None, 2, Padding::Same).unwrap();
        assert_eq!(g.shape(y), vec![1, 224, 224, 1]);
        let y = g.conv2d(x, w, None, 1, Padding::Valid).unwrap();
        assert_eq!(g.shape(y), vec![1, 442, 442, 1]);
    }

    #[test]
    fn deconv_expands_by_stride() {
        let g = Graph::<f64>::new();
        let x = g.input(t(&[1, 1, 1, 1], &[3.0]));
        let w = g.input(t(&[2, 2, 1, 1], &[1., 2., 3., 4.]));
        let y = g.deconv2d(x, w, None, 2).unwrap();
        assert_eq!(g.value(y).data(), &[3., 6., 9., 12.]);
        let w1 = g.input(t(&[1, 1, 1, 1], &[1.0]));
        let x2 = g.input(t(&[1, 2, 2, 1], &[1., 2., 3., 4.]));
        let y1 = g.deconv2d(x2, w1, None, 1).unwrap();
        assert_eq!(g.value(y1), g.value(x2));
        let w4 = g.input(Tensor::zeros(&[4, 4, 5, 1]));
        let y4 = g.deconv2d(x2, w4, None, 2).unwrap();
        assert_eq!(g.shape(y4), vec![1, 4, 4, 5]);
    }

    #[test]
    fn conv_then_deconv_restores_extent() {
        let g = Graph::<f32>::new();
        for (h, s) in [(28, 2), (56, 2), (9, 3), (16, 1)] {
            let x = g.input(Tensor::zeros(&[1, h, h, 2]));
            let w = g.input(Tensor::zeros(&[4, 4, 2, 3]));
            let y = g.conv2d(x, w, None, s, Padding::Same).unwrap();
            let wd = g.input(Tensor::zeros(&[4, 4, 2, 3]));
            let z = g.deconv2d(y, wd, None, s).unwrap();
            let zs = g.shape(z);
            if h % s == 0 {
                assert_eq!(zs, vec![1, h, h, 2]);
            }
        }
    }

    #[test]
    fn maxpool_examples() {
        let g = Graph::<f64>::new();
        let x = g.input(t(&[1, 2, 2, 1], &[1., 2., 3., 4.]));
        let y = g.maxpool2d(x, 2, 2).unwrap();
        assert_eq!(g.value(y).data(), &[4.0]);
        assert!(g.maxpool2d(x, 3, 1).is_err());
        let c = g.input(Tensor::full(&[1, 4, 4, 2], 0.7));
        let y = g.maxpool2d(c, 2, 2).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn leaky_relu_examples() {
        let g = Graph::<f64>::new();
        let x = g.input(t(&[2], &[2.0, -2.0]));
        let y = g.leaky_relu(x, 0.1);
        assert_eq!(g.value(y).data()[0], 2.0);
        assert!((g.value(y).data()[1] + 0.2).abs() < 1e-15);
        let id = g.leaky_relu(x, 1.0);
        assert_eq!(g.value(id), g.value(x));
    }

    #[test]
    fn elementwise_examples() {
        let g = Graph::<f64>::new();
        let z = g.input(t(&[1], &[0.0]));
        assert_eq!(g.value(g.sigmoid(z)).data(), &[0.5]);
        assert_eq!(g.value(g.tanh(z)).data(), &[0.0]);
        let a = g.input(Tensor::zeros(&[1, 3, 3, 2]));
        let b = g.input(Tensor::zeros(&[1, 3, 3, 5]));
        let c = g.concat_channels(&[a, b]).unwrap();
        assert_eq!(g.shape(c), vec![1, 3, 3, 7]);
        let bad = g.input(Tensor::zeros(&[1, 4, 3, 5]));
        assert!(g.concat_channels(&[a, bad]).is_err());
        let v = g.input(Tensor::zeros(&[2, 3]));
        assert!(g.add(a, v).is_err());
        assert!(g.add(a, z).is_ok());
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let g = Graph::<f64>::new();
        let x = g.variable(Tensor::zeros(&[2]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // d/dx (x*x + x) = 2x + 1
        let g = Graph::<f64>::new();
        let x = g.variable(t(&[1], &[3.0]));
        let sq = g.mul(x, x).unwrap();
        let y = g.add(sq, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[7.0]);
    }

    #[test]
    fn batch_norm_train_standardizes() {
        let mut store = ParamStore::<f64>::new();
        let rm = store.buffer("m", Tensor::zeros(&[2]));
        let rv = store.buffer("v", Tensor::ones(&[2]));
        let g = Graph::<f64>::new();
        let data: Vec<f64> = (0..32).map(|i| ((i * 7) % 13) as f64 * if i % 2 == 0 { 1.0 } else { 3.0 }).collect();
        let x = g.input(t(&[2, 2, 4, 2], &data));
        let gamma = g.input(Tensor::ones(&[2]));
        let beta = g.input(Tensor::zeros(&[2]));
        let y = g.batch_norm(x, gamma, beta, (rm, rv), &store, Mode::Train).unwrap();
        let yv = g.value(y);
        for ch in 0..2 {
            let vals: Vec<f64> = yv.data().iter().skip(ch).step_by(2).copied().collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
        assert_eq!(g.take_buffer_updates().len(), 2);

        let zero_gamma = g.input(Tensor::zeros(&[2]));
        let beta2 = g.input(t(&[2], &[0.25, -1.5]));
        let y = g.batch_norm(x, zero_gamma, beta2, (rm, rv), &store, Mode::Eval).unwrap();
        for (i, &v) in g.value(y).data().iter().enumerate() {
            assert_eq!(v, if i % 2 == 0 { 0.25 } else { -1.5 });
        }
    }

    #[test]
    fn bilinear_examples() {
        let g = Graph::<f64>::new();
        let x = g.input(t(&[1, 2, 2, 1], &[0., 1., 0., 1.]));
        let y = g.bilinear_resize(x, 2, 4).unwrap();
        let v = g.value(y);
        // half-pixel sampling: 0, .25, .75, 1 on each row
        for row in v.data().chunks(4) {
            assert_eq!(row, &[0.0, 0.25, 0.75, 1.0]);
            assert!(row.windows(2).all(|w| w[0] <= w[1]));
        }
        let c = g.input(Tensor::full(&[1, 3, 5, 2], 0.3));
        let r = g.bilinear_resize(c, 7, 2).unwrap();
        assert!(g.value(r).data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
    }
}
