//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s in creation
//! order. Because an operation can only consume vars that already exist the
//! tape is topologically sorted by construction, and [`Graph::backward`] is a
//! single reverse sweep.

use crate::conv::{self, ConvGeom};
use crate::error::{shape_err, Result, TensorError};
use crate::real::Real;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Floor applied inside [`Graph::log`].
pub const LOG_EPS: f64 = 1e-12;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Running per-channel statistics owned by a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

pub enum BatchNormMode<'a, T> {
    /// Normalize with batch statistics and fold them into `running`.
    Train {
        running: &'a mut RunningStats<T>,
        momentum: T,
    },
    /// Normalize with the stored running statistics.
    Eval { running: &'a RunningStats<T> },
}

#[derive(Debug, Clone, Copy)]
pub struct Conv2dOptions {
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dOptions {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self { stride, padding }
    }
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var),
    MulScalar(Var, T),
    Abs(Var),
    Square(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    LeakyRelu(Var, T),
    Tanh(Var),
    Sigmoid(Var),
    Dropout(Var, Vec<T>),
    Concat {
        a: Var,
        b: Var,
        outer: usize,
        a_block: usize,
        b_block: usize,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        batch: usize,
        out_channels: usize,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        batch: usize,
        in_channels: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    backward_done: bool,
    check_finite: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    /// Non-finite checking is on in debug builds and off in release builds.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
            check_finite: cfg!(debug_assertions),
        }
    }

    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable input.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Copy of `v` cut off from the tape.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    ///
    /// `None` if `v` does not require gradients or backward has not run;
    /// parameters disconnected from the loss report zeros.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        if !self.nodes[v.0].requires_grad || !self.backward_done {
            return None;
        }
        let shape = self.nodes[v.0].value.shape().to_vec();
        let data = match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => vec![T::zero(); self.nodes[v.0].value.numel()],
        };
        Some(Tensor::new(shape, data).expect("gradient shape"))
    }

    /// Forget gradients so `backward` may run again.
    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.backward_done = false;
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(value, op, rg))
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    // ------------------------------------------------------------------
    // Elementwise arithmetic
    // ------------------------------------------------------------------

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let value = if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(ta.shape().to_vec(), data)?
        } else if tb.numel() == 1 {
            let y = tb.data()[0];
            ta.map(|x| f(x, y))
        } else if ta.numel() == 1 {
            let x = ta.data()[0];
            tb.map(|y| f(x, y))
        } else {
            return Err(shape_err(
                name,
                format!("incompatible shapes {:?} and {:?}", ta.shape(), tb.shape()),
            ));
        };
        self.record(name, value, op, &[a, b])
    }

    /// Elementwise sum; either side may be a one-element tensor.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Result<Var> {
        let value = self.nodes[x.0].value.map(|v| v + c);
        self.record("add_scalar", value, Op::AddScalar(x), &[x])
    }

    pub fn mul_scalar(&mut self, x: Var, c: T) -> Result<Var> {
        let value = self.nodes[x.0].value.map(|v| v * c);
        self.record("mul_scalar", value, Op::MulScalar(x, c), &[x])
    }

    /// `c - x`.
    pub fn rsub_scalar(&mut self, c: T, x: Var) -> Result<Var> {
        let neg = self.mul_scalar(x, -T::one())?;
        self.add_scalar(neg, c)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let value = self.nodes[x.0].value.map(|v| v.abs());
        self.record("abs", value, Op::Abs(x), &[x])
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let value = self.nodes[x.0].value.map(|v| v * v);
        self.record("square", value, Op::Square(x), &[x])
    }

    /// Natural log of `max(x, LOG_EPS)`; the clamp keeps saturated
    /// probabilities finite. The gradient is zero where the clamp is active.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        let eps = T::from_f64(LOG_EPS);
        let value = self.nodes[x.0].value.map(|v| v.max(eps).ln());
        self.record("log", value, Op::Log(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: T = self.data(x).iter().copied().sum();
        self.record("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        let m = t.data().iter().copied().sum::<T>() / T::from_f64(t.numel() as f64);
        self.record("mean", Tensor::scalar(m), Op::Mean(x), &[x])
    }

    // ------------------------------------------------------------------
    // Activations
    // ------------------------------------------------------------------

    pub fn leaky_relu(&mut self, x: Var, negative_slope: T) -> Result<Var> {
        let value = self.nodes[x.0]
            .value
            .map(|v| if v > T::zero() { v } else { v * negative_slope });
        self.record("leaky_relu", value, Op::LeakyRelu(x, negative_slope), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.leaky_relu(x, T::zero())
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let value = self.nodes[x.0].value.map(|v| v.tanh());
        self.record("tanh", value, Op::Tanh(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let value = self.nodes[x.0].value.map(sigmoid);
        self.record("sigmoid", value, Op::Sigmoid(x), &[x])
    }

    /// Inverted dropout: surviving activations are scaled by `1 / (1 - p)`.
    ///
    /// With `active == false` or `p == 0` this is the identity and draws
    /// nothing from `rng`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut Rng, active: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidArgument {
                op: "dropout",
                detail: format!("probability {p} outside [0, 1)"),
            });
        }
        if !active || p == 0.0 {
            return Ok(x);
        }
        let keep_scale = T::from_f64(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.nodes[x.0].value.numel())
            .map(|_| if rng.uniform() < p { T::zero() } else { keep_scale })
            .collect();
        let src = &self.nodes[x.0].value;
        let data = src.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::new(src.shape().to_vec(), data)?;
        self.record("dropout", value, Op::Dropout(x, mask), &[x])
    }

    // ------------------------------------------------------------------
    // Structure
    // ------------------------------------------------------------------

    /// Join two tensors along `axis`; all other extents must agree.
    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if axis >= sa.len() {
            return Err(TensorError::Axis {
                op: "concat",
                axis,
                rank: sa.len(),
            });
        }
        let compatible = sa.len() == sb.len()
            && sa.iter().zip(&sb).enumerate().all(|(i, (x, y))| i == axis || x == y);
        if !compatible {
            return Err(shape_err(
                "concat",
                format!("shapes {sa:?} and {sb:?} differ off axis {axis}"),
            ));
        }
        let outer: usize = sa[..axis].iter().product();
        let inner: usize = sa[axis + 1..].iter().product();
        let (a_block, b_block) = (sa[axis] * inner, sb[axis] * inner);
        let (da, db) = (self.data(a), self.data(b));
        let mut data = Vec::with_capacity(da.len() + db.len());
        for o in 0..outer {
            data.extend_from_slice(&da[o * a_block..(o + 1) * a_block]);
            data.extend_from_slice(&db[o * b_block..(o + 1) * b_block]);
        }
        let mut shape = sa;
        shape[axis] += sb[axis];
        let value = Tensor::new(shape, data)?;
        self.record(
            "concat",
            value,
            Op::Concat {
                a,
                b,
                outer,
                a_block,
                b_block,
            },
            &[a, b],
        )
    }

    // ------------------------------------------------------------------
    // Convolutions
    // ------------------------------------------------------------------

    /// Cross-correlation of `x` `[N,C,H,W]` with `w` `[O,C,k,k]`, plus an
    /// optional per-channel `bias` `[O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, opts: Conv2dOptions) -> Result<Var> {
        const OP: &str = "conv2d";
        let [n, c, h, wd] = self.nodes[x.0].value.dims4(OP)?;
        let [o, wc, k, k2] = self.nodes[w.0]
            .value
            .dims4(OP)
            .map_err(|_| shape_err(OP, format!("weight must be [O,C,k,k], got {:?}", self.shape(w))))?;
        if wc != c {
            return Err(shape_err(
                OP,
                format!("input has {c} channels but weight expects {wc}"),
            ));
        }
        if k != k2 {
            return Err(shape_err(OP, format!("kernel must be square, got {k}x{k2}")));
        }
        check_stride(OP, opts.stride)?;
        if h + 2 * opts.padding < k || wd + 2 * opts.padding < k {
            return Err(shape_err(
                OP,
                format!(
                    "kernel {k}x{k} does not fit padded input {}x{}",
                    h + 2 * opts.padding,
                    wd + 2 * opts.padding
                ),
            ));
        }
        self.check_bias(OP, bias, o)?;
        let geom = ConvGeom {
            channels: c,
            height: h,
            width: wd,
            kernel: k,
            stride: opts.stride,
            padding: opts.padding,
        };
        let out = conv::conv2d_forward(
            self.data(x),
            n,
            &geom,
            self.data(w),
            o,
            bias.map(|b| self.data(b)),
        );
        let value = Tensor::new(vec![n, o, geom.out_height(), geom.out_width()], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        self.record(
            OP,
            value,
            Op::Conv2d {
                x,
                w,
                b: bias,
                geom,
                batch: n,
                out_channels: o,
            },
            &inputs,
        )
    }

    /// Adjoint of [`conv2d`](Self::conv2d): `x` `[N,Cin,H,W]`, `w`
    /// `[Cin,Cout,k,k]`, output `[N,Cout,(H-1)s-2p+k,(W-1)s-2p+k]`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        opts: Conv2dOptions,
    ) -> Result<Var> {
        const OP: &str = "conv_transpose2d";
        let [n, c, h, wd] = self.nodes[x.0].value.dims4(OP)?;
        let [wc, o, k, k2] = self.nodes[w.0].value.dims4(OP).map_err(|_| {
            shape_err(OP, format!("weight must be [Cin,Cout,k,k], got {:?}", self.shape(w)))
        })?;
        if wc != c {
            return Err(shape_err(
                OP,
                format!("input has {c} channels but weight expects {wc}"),
            ));
        }
        if k != k2 {
            return Err(shape_err(OP, format!("kernel must be square, got {k}x{k2}")));
        }
        check_stride(OP, opts.stride)?;
        let span = |d: usize| ((d - 1) * opts.stride + k).checked_sub(2 * opts.padding);
        let (Some(oh), Some(ow)) = (span(h), span(wd)) else {
            return Err(shape_err(
                OP,
                format!("padding {} too large for kernel {k}", opts.padding),
            ));
        };
        if oh == 0 || ow == 0 {
            return Err(shape_err(OP, "empty output"));
        }
        self.check_bias(OP, bias, o)?;
        let geom = ConvGeom {
            channels: o,
            height: oh,
            width: ow,
            kernel: k,
            stride: opts.stride,
            padding: opts.padding,
        };
        debug_assert_eq!((geom.out_height(), geom.out_width()), (h, wd));
        let out = conv::conv_transpose2d_forward(
            self.data(x),
            n,
            c,
            &geom,
            self.data(w),
            bias.map(|b| self.data(b)),
        );
        let value = Tensor::new(vec![n, o, oh, ow], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        self.record(
            OP,
            value,
            Op::ConvTranspose2d {
                x,
                w,
                b: bias,
                geom,
                batch: n,
                in_channels: c,
            },
            &inputs,
        )
    }

    fn check_bias(&self, op: &'static str, bias: Option<Var>, channels: usize) -> Result<()> {
        if let Some(b) = bias {
            if self.shape(b) != [channels] {
                return Err(shape_err(
                    op,
                    format!("bias must have shape [{channels}], got {:?}", self.shape(b)),
                ));
            }
        }
        Ok(())
    }

    // ------------------------------------------------------------------
    // Normalization
    // ------------------------------------------------------------------

    /// Per-channel batch normalization of `x` `[N,C,H,W]` followed by the
    /// affine map `gamma * xhat + beta`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_, T>,
        eps: T,
    ) -> Result<Var> {
        const OP: &str = "batch_norm";
        let [n, c, h, w] = self.nodes[x.0].value.dims4(OP)?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [c] {
                return Err(shape_err(
                    OP,
                    format!("{name} must have shape [{c}], got {:?}", self.shape(v)),
                ));
            }
        }
        let hw = h * w;
        let count = n * hw;
        let xs = self.data(x);
        let (mean, var, train) = match &mode {
            BatchNormMode::Train { .. } => {
                if count < 2 {
                    return Err(TensorError::InvalidArgument {
                        op: OP,
                        detail: format!(
                            "train mode needs at least 2 values per channel, got N*H*W = {count}"
                        ),
                    });
                }
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut s = T::zero();
                    for b in 0..n {
                        let off = (b * c + ch) * hw;
                        s = s + xs[off..off + hw].iter().copied().sum::<T>();
                    }
                    let m = s / T::from_f64(count as f64);
                    let mut ss = T::zero();
                    for b in 0..n {
                        let off = (b * c + ch) * hw;
                        ss = ss + xs[off..off + hw].iter().map(|&v| (v - m) * (v - m)).sum::<T>();
                    }
                    mean[ch] = m;
                    var[ch] = ss / T::from_f64(count as f64);
                }
                (mean, var, true)
            }
            BatchNormMode::Eval { running } => {
                if running.mean.len() != c || running.var.len() != c {
                    return Err(shape_err(OP, "running statistics do not match channel count"));
                }
                (running.mean.clone(), running.var.clone(), false)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (g, bt) = (self.data(gamma), self.data(beta));
        let mut xhat = vec![T::zero(); xs.len()];
        let mut out = vec![T::zero(); xs.len()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * hw;
                for i in off..off + hw {
                    let xh = (xs[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = xh;
                    out[i] = g[ch] * xh + bt[ch];
                }
            }
        }
        if let BatchNormMode::Train { running, momentum } = mode {
            let unbias = T::from_f64(count as f64 / (count as f64 - 1.0));
            for ch in 0..c {
                running.mean[ch] = (T::one() - momentum) * running.mean[ch] + momentum * mean[ch];
                running.var[ch] =
                    (T::one() - momentum) * running.var[ch] + momentum * var[ch] * unbias;
            }
        }
        let value = Tensor::new(vec![n, c, h, w], out)?;
        self.record(
            OP,
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            &[x, gamma, beta],
        )
    }

    // ------------------------------------------------------------------
    // Reverse sweep
    // ------------------------------------------------------------------

    /// Accumulate d(loss)/d(v) into every var that requires gradients.
    ///
    /// Running it twice without [`zero_grad`](Self::zero_grad) is an error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        let shape = self.shape(loss);
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(shape.to_vec()));
        }
        self.backward_done = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(gout) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &gout);
            self.grads[i] = Some(gout);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: impl FnOnce(usize) -> Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.numel();
        let contrib = g(n);
        debug_assert_eq!(contrib.len(), n);
        match &mut self.grads[v.0] {
            Some(acc) => acc.iter_mut().zip(contrib).for_each(|(a, c)| *a = *a + c),
            slot @ None => *slot = Some(contrib),
        }
    }

    /// Gradient with respect to one side of a broadcasting binary op.
    fn reduce_to(&self, side: Var, full: Vec<T>) -> Vec<T> {
        if self.nodes[side.0].value.numel() == full.len() {
            full
        } else {
            vec![full.into_iter().sum()]
        }
    }

    fn broadcast_value(&self, v: Var, len: usize) -> Vec<T> {
        let d = self.data(v);
        if d.len() == len {
            d.to_vec()
        } else {
            vec![d[0]; len]
        }
    }

    fn propagate(&mut self, i: usize, gout: &[T]) {
        let len = gout.len();
        // Ops are moved out temporarily so node values stay borrowable.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let ga = self.reduce_to(*a, gout.to_vec());
                self.accumulate(*a, |_| ga);
                let gb = self.reduce_to(*b, gout.to_vec());
                self.accumulate(*b, |_| gb);
            }
            Op::Sub(a, b) => {
                let ga = self.reduce_to(*a, gout.to_vec());
                self.accumulate(*a, |_| ga);
                let gb = self.reduce_to(*b, gout.iter().map(|&g| -g).collect());
                self.accumulate(*b, |_| gb);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.broadcast_value(*a, len), self.broadcast_value(*b, len));
                let ga = self.reduce_to(*a, gout.iter().zip(&vb).map(|(&g, &y)| g * y).collect());
                self.accumulate(*a, |_| ga);
                let gb = self.reduce_to(*b, gout.iter().zip(&va).map(|(&g, &x)| g * x).collect());
                self.accumulate(*b, |_| gb);
            }
            Op::AddScalar(x) => self.accumulate(*x, |_| gout.to_vec()),
            Op::MulScalar(x, c) => {
                let c = *c;
                self.accumulate(*x, |_| gout.iter().map(|&g| g * c).collect())
            }
            Op::Abs(x) => {
                let gx = zip_map(gout, self.data(*x), |g, v| {
                    if v > T::zero() {
                        g
                    } else if v < T::zero() {
                        -g
                    } else {
                        T::zero()
                    }
                });
                self.accumulate(*x, |_| gx);
            }
            Op::Square(x) => {
                let two = T::from_f64(2.0);
                let gx = zip_map(gout, self.data(*x), |g, v| two * v * g);
                self.accumulate(*x, |_| gx);
            }
            Op::Log(x) => {
                let eps = T::from_f64(LOG_EPS);
                let gx = zip_map(gout, self.data(*x), |g, v| if v > eps { g / v } else { T::zero() });
                self.accumulate(*x, |_| gx);
            }
            Op::Sum(x) => {
                let g = gout[0];
                self.accumulate(*x, |n| vec![g; n]);
            }
            Op::Mean(x) => {
                let g = gout[0];
                self.accumulate(*x, |n| vec![g / T::from_f64(n as f64); n]);
            }
            Op::LeakyRelu(x, slope) => {
                let slope = *slope;
                let gx = zip_map(gout, self.data(*x), |g, v| if v > T::zero() { g } else { g * slope });
                self.accumulate(*x, |_| gx);
            }
            Op::Tanh(x) => {
                let y = self.nodes[i].value.data();
                let gx = zip_map(gout, y, |g, y| g * (T::one() - y * y));
                self.accumulate(*x, |_| gx);
            }
            Op::Sigmoid(x) => {
                let y = self.nodes[i].value.data();
                let gx = zip_map(gout, y, |g, y| g * y * (T::one() - y));
                self.accumulate(*x, |_| gx);
            }
            Op::Dropout(x, mask) => {
                let gx = zip_map(gout, mask, |g, m| g * m);
                self.accumulate(*x, |_| gx);
            }
            Op::Concat {
                a,
                b,
                outer,
                a_block,
                b_block,
            } => {
                let stride = a_block + b_block;
                let mut ga = Vec::with_capacity(outer * a_block);
                let mut gb = Vec::with_capacity(outer * b_block);
                for o in 0..*outer {
                    ga.extend_from_slice(&gout[o * stride..o * stride + a_block]);
                    gb.extend_from_slice(&gout[o * stride + a_block..(o + 1) * stride]);
                }
                self.accumulate(*a, |_| ga);
                self.accumulate(*b, |_| gb);
            }
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                batch,
                out_channels,
            } => {
                let want_b = b.is_some_and(|b| self.nodes[b.0].requires_grad);
                let (dx, dw, db) = conv::conv2d_backward(
                    self.data(*x),
                    *batch,
                    geom,
                    self.data(*w),
                    *out_channels,
                    gout,
                    self.nodes[x.0].requires_grad,
                    self.nodes[w.0].requires_grad,
                    want_b,
                );
                self.scatter_conv_grads(*x, *w, *b, dx, dw, db);
            }
            Op::ConvTranspose2d {
                x,
                w,
                b,
                geom,
                batch,
                in_channels,
            } => {
                let want_b = b.is_some_and(|b| self.nodes[b.0].requires_grad);
                let (dx, dw, db) = conv::conv_transpose2d_backward(
                    self.data(*x),
                    *batch,
                    *in_channels,
                    geom,
                    self.data(*w),
                    gout,
                    self.nodes[x.0].requires_grad,
                    self.nodes[w.0].requires_grad,
                    want_b,
                );
                self.scatter_conv_grads(*x, *w, *b, dx, dw, db);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let [n, c, h, w] = self.nodes[x.0].value.dims4("batch_norm").expect("rank 4");
                let hw = h * w;
                let count = T::from_f64((n * hw) as f64);
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for bi in 0..n {
                    for ch in 0..c {
                        let off = (bi * c + ch) * hw;
                        for k in off..off + hw {
                            dgamma[ch] = dgamma[ch] + gout[k] * xhat[k];
                            dbeta[ch] = dbeta[ch] + gout[k];
                        }
                    }
                }
                if self.nodes[x.0].requires_grad {
                    let g = self.data(*gamma).to_vec();
                    let mut dx = vec![T::zero(); gout.len()];
                    for bi in 0..n {
                        for ch in 0..c {
                            let off = (bi * c + ch) * hw;
                            let scale = g[ch] * inv_std[ch];
                            for k in off..off + hw {
                                dx[k] = if *train {
                                    scale
                                        * (gout[k]
                                            - dbeta[ch] / count
                                            - xhat[k] * dgamma[ch] / count)
                                } else {
                                    scale * gout[k]
                                };
                            }
                        }
                    }
                    self.accumulate(*x, |_| dx);
                }
                self.accumulate(*gamma, |_| dgamma);
                self.accumulate(*beta, |_| dbeta);
            }
        }
        self.nodes[i].op = op;
    }

    fn scatter_conv_grads(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        dx: Option<Vec<T>>,
        dw: Option<Vec<T>>,
        db: Option<Vec<T>>,
    ) {
        if let Some(dx) = dx {
            self.accumulate(x, |_| dx);
        }
        if let Some(dw) = dw {
            self.accumulate(w, |_| dw);
        }
        if let (Some(b), Some(db)) = (b, db) {
            self.accumulate(b, |_| db);
        }
    }
}

fn check_stride(op: &'static str, stride: usize) -> Result<()> {
    if stride == 0 {
        return Err(TensorError::InvalidArgument {
            op,
            detail: "stride must be at least 1".into(),
        });
    }
    Ok(())
}

fn zip_map<T: Real>(g: &[T], v: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    g.iter().zip(v).map(|(&g, &v)| f(g, v)).collect()
}

#[inline]
pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
