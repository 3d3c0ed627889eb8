//! Central finite-difference gradient checking.
//!
//! Numerical derivatives are always taken in `f64` from forward evaluations
//! only, so they are independent of the backward rules they check.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::real::Real;
use crate::tensor::Tensor;

/// A scalar-valued computation over some input tensors, evaluable at any
/// precision.
pub trait ScalarFn {
    fn eval<T: Real>(&self, g: &mut Graph<T>, inputs: &[Var]) -> Result<Var>;
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_err: f64,
    /// `(input index, element index)` where the worst error occurred.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Gradients smaller than this are compared on an absolute scale.
    pub floor: f64,
    /// Check at most this many elements per input (evenly strided).
    pub max_per_input: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-4,
            max_per_input: usize::MAX,
        }
    }
}

fn eval_f64<F: ScalarFn>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64> {
    let mut g = Graph::<f64>::new();
    g.set_check_finite(false);
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f.eval(&mut g, &vars)?;
    Ok(g.value(out).item())
}

/// Analytic gradients at precision `T` versus `f64` central differences.
pub fn check_gradients<T: Real, F: ScalarFn>(
    f: &F,
    inputs: &[Tensor<f64>],
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut g = Graph::<T>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.cast())).collect();
    let out = f.eval(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Tensor<T>> = vars
        .iter()
        .map(|&v| g.grad(v).expect("inputs require grad"))
        .collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let stride = n.div_ceil(opts.max_per_input.max(1)).max(1);
        for j in (0..n).step_by(stride) {
            let x0 = input.data()[j];
            probe[i].data_mut()[j] = x0 + opts.step;
            let plus = eval_f64(f, &probe)?;
            probe[i].data_mut()[j] = x0 - opts.step;
            let minus = eval_f64(f, &probe)?;
            probe[i].data_mut()[j] = x0;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic[i].data()[j].as_f64();
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            if report.checked == 0 || err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = (i, j);
                report.analytic = a;
                report.numeric = numeric;
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// `sum(x * weights)`: turns any tensor output into a scalar whose gradient
/// exercises every output element differently.
pub fn weighted_sum<T: Real>(g: &mut Graph<T>, x: Var, weights: &Tensor<f64>) -> Result<Var> {
    let w = g.constant(weights.cast());
    let prod = g.mul(x, w)?;
    g.sum(prod)
}

/// Every differentiable primitive, as exercised by [`op_sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    MulBroadcast,
    AddScalar,
    MulScalar,
    Abs,
    Square,
    Log,
    Sum,
    Mean,
    LeakyRelu,
    Relu,
    Tanh,
    Sigmoid,
    Dropout,
    Concat,
    Conv2d,
    ConvTranspose2d,
    BatchNormTrain,
    BatchNormEval,
}

impl OpKind {
    pub const ALL: [OpKind; 21] = [
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::MulBroadcast,
        OpKind::AddScalar,
        OpKind::MulScalar,
        OpKind::Abs,
        OpKind::Square,
        OpKind::Log,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::LeakyRelu,
        OpKind::Relu,
        OpKind::Tanh,
        OpKind::Sigmoid,
        OpKind::Dropout,
        OpKind::Concat,
        OpKind::Conv2d,
        OpKind::ConvTranspose2d,
        OpKind::BatchNormTrain,
        OpKind::BatchNormEval,
    ];
}

/// One randomized instance of an op: its inputs plus enough state to
/// rebuild it identically at any precision.
#[derive(Debug, Clone)]
pub struct OpProbe {
    pub kind: OpKind,
    pub inputs: Vec<Tensor<f64>>,
    seed: u64,
    stride: usize,
    padding: usize,
}

impl OpProbe {
    /// Random small instance of `kind` drawn from `rng`.
    pub fn random(kind: OpKind, rng: &mut crate::Rng) -> Self {
        let mut dim = |lo: usize, hi: usize| lo + rng.below(hi - lo + 1);
        let n = dim(1, 2);
        let c = dim(1, 3);
        let h = dim(2, 5);
        let w = dim(2, 5);
        let (oc, k, stride) = (dim(1, 3), dim(1, 3), dim(1, 2));
        let padding = dim(0, 1).min(k - 1);
        let extra = dim(1, 3);
        let seed = rng.next_u64();
        let mut t = |shape: &[usize], lo: f64, hi: f64| {
            Tensor::from_fn(shape.to_vec(), |_| rng.uniform_in(lo, hi))
        };
        let x = [n, c, h, w];
        let inputs = match kind {
            OpKind::Add | OpKind::Sub | OpKind::Mul => vec![t(&x, -1.0, 1.0), t(&x, -1.0, 1.0)],
            OpKind::MulBroadcast => vec![t(&x, -1.0, 1.0), t(&[1], -1.0, 1.0)],
            OpKind::Log => vec![t(&x, 0.5, 1.5)],
            OpKind::Concat => vec![t(&x, -1.0, 1.0), t(&[n, extra, h, w], -1.0, 1.0)],
            OpKind::Conv2d => {
                let (h, w) = (h + 2, w + 2);
                vec![t(&[n, c, h, w], -1.0, 1.0), t(&[oc, c, k, k], -1.0, 1.0), t(&[oc], -1.0, 1.0)]
            }
            OpKind::ConvTranspose2d => {
                let k = k + 1;
                vec![t(&x, -1.0, 1.0), t(&[c, oc, k, k], -1.0, 1.0), t(&[oc], -1.0, 1.0)]
            }
            OpKind::BatchNormTrain | OpKind::BatchNormEval => {
                vec![t(&x, -2.0, 2.0), t(&[c], 0.5, 1.5), t(&[c], -0.5, 0.5)]
            }
            _ => vec![t(&x, -1.0, 1.0)],
        };
        let (stride, padding) = match kind {
            OpKind::ConvTranspose2d => (stride, padding.min(k / 2)),
            _ => (stride, padding),
        };
        Self {
            kind,
            inputs,
            seed,
            stride,
            padding,
        }
    }

    fn apply<T: Real>(&self, g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
        let opts = crate::Conv2dOptions::new(self.stride, self.padding);
        let c = |x: f64| T::from_f64(x);
        match self.kind {
            OpKind::Add => g.add(v[0], v[1]),
            OpKind::Sub => g.sub(v[0], v[1]),
            OpKind::Mul | OpKind::MulBroadcast => g.mul(v[0], v[1]),
            OpKind::AddScalar => g.add_scalar(v[0], c(0.7)),
            OpKind::MulScalar => g.mul_scalar(v[0], c(-1.3)),
            OpKind::Abs => g.abs(v[0]),
            OpKind::Square => g.square(v[0]),
            OpKind::Log => g.log(v[0]),
            OpKind::Sum => g.sum(v[0]),
            OpKind::Mean => g.mean(v[0]),
            OpKind::LeakyRelu => g.leaky_relu(v[0], c(0.2)),
            OpKind::Relu => g.relu(v[0]),
            OpKind::Tanh => g.tanh(v[0]),
            OpKind::Sigmoid => g.sigmoid(v[0]),
            OpKind::Dropout => {
                let mut rng = crate::Rng::new(self.seed);
                g.dropout(v[0], 0.5, &mut rng, true)
            }
            OpKind::Concat => g.concat(v[0], v[1], 1),
            OpKind::Conv2d => g.conv2d(v[0], v[1], Some(v[2]), opts),
            OpKind::ConvTranspose2d => g.conv_transpose2d(v[0], v[1], Some(v[2]), opts),
            OpKind::BatchNormTrain => {
                let mut stats = crate::RunningStats::new(self.inputs[1].numel());
                g.batch_norm(
                    v[0],
                    v[1],
                    v[2],
                    crate::BatchNormMode::Train {
                        running: &mut stats,
                        momentum: c(0.1),
                    },
                    c(1e-5),
                )
            }
            OpKind::BatchNormEval => {
                let channels = self.inputs[1].numel();
                let stats = crate::RunningStats {
                    mean: (0..channels).map(|i| c(0.1 * i as f64)).collect(),
                    var: (0..channels).map(|i| c(0.5 + 0.25 * i as f64)).collect(),
                };
                g.batch_norm(
                    v[0],
                    v[1],
                    v[2],
                    crate::BatchNormMode::Eval { running: &stats },
                    c(1e-5),
                )
            }
        }
    }
}

impl ScalarFn for OpProbe {
    fn eval<T: Real>(&self, g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
        let out = self.apply(g, v)?;
        let mut rng = crate::Rng::new(self.seed ^ 0x5eed);
        let weights = Tensor::from_fn(g.shape(out).to_vec(), |_| rng.uniform_in(-1.0, 1.0));
        weighted_sum(g, out, &weights)
    }
}

/// Worst relative error per op over `shapes_per_op` random instances.
pub fn op_sweep<T: Real>(shapes_per_op: usize, seed: u64) -> Result<Vec<(OpKind, GradCheckReport)>> {
    let root = crate::Rng::new(seed);
    let mut out = Vec::new();
    for (i, &kind) in OpKind::ALL.iter().enumerate() {
        let mut rng = root.fork_indexed("op_sweep", i as u64);
        let mut worst: Option<GradCheckReport> = None;
        for _ in 0..shapes_per_op {
            let probe = OpProbe::random(kind, &mut rng);
            let report = check_gradients::<T, _>(&probe, &probe.inputs, GradCheckOptions::default())?;
            if worst.as_ref().is_none_or(|w| report.max_rel_err > w.max_rel_err) {
                worst = Some(report);
            }
        }
        out.push((kind, worst.expect("at least one shape")));
    }
    Ok(out)
}
