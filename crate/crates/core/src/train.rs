//! Alternating adversarial training, evaluation and checkpoints.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use diffcore::{read_tensor, write_tensor, Graph, Real, Rng, RunningStats, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::labels::LabelMap;
use crate::losses::{combined_g_loss, d_loss, LossWeights};
use crate::metrics::{aggregate, evaluate_sample, Aggregate, Calibration, MetricsRecord, METRIC_COLUMNS};
use crate::nets::{
    Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, Mode, Weights,
};
use crate::phantom::Sample;
use crate::segment::predict_labels;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction:
/// `m = b1 m + (1-b1) g`, `v = b2 v + (1-b2) g^2`,
/// `p -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)`.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    cfg: AdamConfig,
    t: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: AdamConfig, params: &[Tensor<T>]) -> Self {
        Self {
            cfg,
            t: 0,
            m: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(CoreError::invalid(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let c = self.cfg;
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let bc1 = T::one() - T::from_f64(c.beta1.powi(self.t));
        let bc2 = T::one() - T::from_f64(c.beta2.powi(self.t));
        let (lr, eps) = (T::from_f64(c.lr), T::from_f64(c.eps));
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(CoreError::invalid(format!(
                    "gradient {i} has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = b1 * m[j] + (T::one() - b1) * gv;
                v[j] = b2 * v[j] + (T::one() - b2) * gv * gv;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub d_steps_per_g: usize,
    pub weights: LossWeights,
    pub seed: u64,
    /// Validate every this many epochs (and after the last one); 0 only
    /// validates after the last epoch.
    pub eval_every: usize,
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 1,
            adam: AdamConfig::default(),
            d_steps_per_g: 1,
            weights: LossWeights::default(),
            seed: 0,
            eval_every: 0,
            checkpoint_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.d_steps_per_g == 0 {
            return Err(CoreError::invalid("epochs, batch_size and d_steps_per_g must be >= 1"));
        }
        if !(self.adam.lr > 0.0) {
            return Err(CoreError::invalid(format!("learning rate {} must be > 0", self.adam.lr)));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(CoreError::invalid("Adam betas must lie in [0, 1)"));
        }
        self.weights.validate()
    }

    fn validates_after(&self, epoch: usize) -> bool {
        epoch + 1 == self.epochs || (self.eval_every > 0 && (epoch + 1).is_multiple_of(self.eval_every))
    }
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean discriminator loss over the epoch's discriminator steps.
    pub d_loss: f64,
    /// Mean weighted adversarial term `a * g_adv`.
    pub g_adv: f64,
    /// Mean weighted reconstruction term `b * rec`.
    pub g_rec: f64,
    /// Validation means, when validation ran after this epoch.
    pub val: Option<Aggregate>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

pub const HISTORY_COLUMNS: [&str; 4] = ["epoch", "d_loss", "g_adv", "g_rec"];

fn fmt_value(out: &mut String, v: Option<f64>) {
    if let Some(v) = v {
        // `{:?}` prints the shortest string that round-trips exactly.
        let _ = write!(out, "{v:?}");
    }
}

impl History {
    pub fn csv_header() -> String {
        let mut cols: Vec<&str> = HISTORY_COLUMNS.to_vec();
        cols.extend(METRIC_COLUMNS);
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        let mut out = Self::csv_header();
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{}", r.epoch);
            for v in [r.d_loss, r.g_adv, r.g_rec] {
                out.push(',');
                fmt_value(&mut out, Some(v));
            }
            for i in 0..METRIC_COLUMNS.len() {
                out.push(',');
                fmt_value(&mut out, r.val.as_ref().and_then(|a| a.mean[i]));
            }
            out.push('\n');
        }
        out
    }

    pub fn last_validation(&self) -> Option<&Aggregate> {
        self.records.iter().rev().find_map(|r| r.val.as_ref())
    }
}

/// A generator or discriminator together with its weights.
#[derive(Debug, Clone)]
pub struct Trained<N> {
    pub net: N,
    pub weights: Weights<f32>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub generator: Trained<Generator>,
    pub discriminator: Trained<Discriminator>,
    pub history: History,
}

/// Stack the condition and target images of `batch` into `[N,1,H,W]` and
/// `[N,3,H,W]`.
pub fn stack_batch(batch: &[&Sample]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let first = batch
        .first()
        .ok_or_else(|| CoreError::invalid("empty batch"))?;
    let stack = |get: &dyn Fn(&Sample) -> &Tensor<f32>| -> Result<Tensor<f32>> {
        let shape0 = get(first).shape().to_vec();
        let mut data = Vec::with_capacity(batch.len() * get(first).numel());
        for s in batch {
            if get(s).shape() != shape0.as_slice() {
                return Err(CoreError::invalid(format!(
                    "sample {} has shape {:?}, batch expects {shape0:?}",
                    s.index,
                    get(s).shape()
                )));
            }
            data.extend_from_slice(get(s).data());
        }
        let mut shape = vec![batch.len()];
        shape.extend(shape0);
        Ok(Tensor::new(shape, data)?)
    };
    Ok((stack(&|s| &s.condition)?, stack(&|s| &s.target)?))
}

fn ensure_finite(v: f64, what: &'static str, epoch: usize, step: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CoreError::NonFinite { what, epoch, step })
    }
}

fn with_step(e: CoreError, what: &'static str, epoch: usize, step: usize) -> CoreError {
    match e {
        CoreError::Tensor(diffcore::TensorError::NonFinite { .. }) => CoreError::NonFinite { what, epoch, step },
        other => other,
    }
}

fn collect_grads<T: Real>(g: &Graph<T>, vars: &[Var]) -> Vec<Tensor<T>> {
    vars.iter()
        .map(|&v| g.grad(v).expect("parameters require grad"))
        .collect()
}

/// Train from freshly initialized networks.
pub fn train(
    gen_cfg: &GeneratorConfig,
    disc_cfg: &DiscriminatorConfig,
    cfg: &TrainConfig,
    train_set: &[Sample],
    val_set: &[Sample],
) -> Result<TrainOutput> {
    train_with(gen_cfg, disc_cfg, cfg, train_set, val_set, None, &mut |_| {})
}

/// Train, optionally starting from given weights, calling `on_epoch` after
/// every epoch.
pub fn train_with(
    gen_cfg: &GeneratorConfig,
    disc_cfg: &DiscriminatorConfig,
    cfg: &TrainConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    init: Option<(Weights<f32>, Weights<f32>)>,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutput> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(CoreError::invalid("training set is empty"));
    }
    let gen = Generator::new(gen_cfg)?;
    let disc = Discriminator::new(disc_cfg)?;
    let root = Rng::new(cfg.seed);
    let (mut gw, mut dw) = match init {
        Some((gw, dw)) => {
            gw.check_layout(gen.layout())?;
            dw.check_layout(disc.layout())?;
            (gw, dw)
        }
        None => (
            gen.layout().init_weights(&mut root.fork("init.generator")),
            disc.layout().init_weights(&mut root.fork("init.discriminator")),
        ),
    };
    let mut g_opt = Adam::new(cfg.adam, &gw.params);
    let mut d_opt = Adam::new(cfg.adam, &dw.params);
    let w = cfg.weights;
    let mut history = History::default();
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        root.fork_indexed("shuffle", epoch as u64).shuffle(&mut order);
        let (mut d_sum, mut d_n, mut adv_sum, mut rec_sum, mut g_n) = (0.0, 0usize, 0.0, 0.0, 0usize);

        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (u_t, v_t) = stack_batch(&batch)?;
            let mut noise = root.fork_indexed("noise", step as u64);

            let mut gg = Graph::<f32>::new();
            let g_params = gw.bind(&mut gg);
            let u = gg.constant(u_t.clone());
            let v = gg.constant(v_t.clone());
            let out = gen
                .forward(&mut gg, &g_params, &mut gw.stats, u, &mut noise, Mode::Train)
                .map_err(|e| with_step(e, "generator output", epoch, step))?;
            let fake = gg.value(out.prediction).clone();

            for _ in 0..cfg.d_steps_per_g {
                let mut dg = Graph::<f32>::new();
                let d_params = dw.bind(&mut dg);
                let du = dg.constant(u_t.clone());
                let dv = dg.constant(v_t.clone());
                let df = dg.constant(fake.clone());
                let s_real = disc
                    .forward(&mut dg, &d_params, &mut dw.stats, du, dv, Mode::Train)
                    .map_err(|e| with_step(e, "discriminator output", epoch, step))?;
                let s_fake = disc
                    .forward(&mut dg, &d_params, &mut dw.stats, du, df, Mode::Train)
                    .map_err(|e| with_step(e, "discriminator output", epoch, step))?;
                let dl = d_loss(&mut dg, s_real, s_fake)?;
                let d_value = ensure_finite(dg.value(dl).item() as f64, "discriminator loss", epoch, step)?;
                // Real and fake terms are averaged rather than summed.
                let half = dg.mul_scalar(dl, 0.5)?;
                dg.backward(half)
                    .map_err(|e| with_step(e.into(), "discriminator gradient", epoch, step))?;
                let grads = collect_grads(&dg, &d_params);
                d_opt.step(&mut dw.params, &grads)?;
                d_sum += d_value;
                d_n += 1;
            }

            let s_fake = if w.a > 0.0 {
                let d_params = dw.bind_constant(&mut gg);
                let mut scratch = dw.stats.clone();
                Some(
                    disc.forward(&mut gg, &d_params, &mut scratch, u, out.prediction, Mode::EvalBatchStats)
                        .map_err(|e| with_step(e, "discriminator output", epoch, step))?,
                )
            } else {
                None
            };
            let loss = combined_g_loss(&mut gg, s_fake, v, out.prediction, &out.intermediates, &w)
                .map_err(|e| with_step(e, "generator loss", epoch, step))?;
            ensure_finite(gg.value(loss.total).item() as f64, "generator loss", epoch, step)?;
            gg.backward(loss.total)
                .map_err(|e| with_step(e.into(), "generator gradient", epoch, step))?;
            let grads = collect_grads(&gg, &g_params);
            g_opt.step(&mut gw.params, &grads)?;
            adv_sum += loss.adv.map_or(0.0, |x| gg.value(x).item() as f64);
            rec_sum += loss.rec.map_or(0.0, |x| gg.value(x).item() as f64);
            g_n += 1;
            step += 1;
        }

        let val = if cfg.validates_after(epoch) && !val_set.is_empty() {
            let mut rng = root.fork_indexed("validation", epoch as u64);
            let records = evaluate(&gen, &gw, val_set, cfg.batch_size, &mut rng, Calibration::default())?;
            Some(aggregate(&records))
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            d_loss: d_sum / d_n as f64,
            g_adv: adv_sum / g_n as f64,
            g_rec: rec_sum / g_n as f64,
            val,
        };
        on_epoch(&record);
        history.records.push(record);
    }

    let output = TrainOutput {
        generator: Trained { net: gen, weights: gw },
        discriminator: Trained { net: disc, weights: dw },
        history,
    };
    if let Some(path) = &cfg.checkpoint_path {
        save_checkpoint(path, &output.generator, &output.discriminator)?;
    }
    Ok(output)
}

/// Batch-norm mode for inference: batch statistics when batches of at least
/// two are available, running statistics otherwise.
pub fn inference_mode(batch_size: usize, n: usize) -> Mode {
    if batch_size >= 2 && n >= 2 {
        Mode::EvalBatchStats
    } else {
        Mode::Eval
    }
}

/// Generator outputs `[3,H,W]` for `samples`, in order. Batches have
/// `batch_size` samples, with a trailing singleton merged into the batch
/// before it.
pub fn predict(
    gen: &Generator,
    weights: &Weights<f32>,
    samples: &[Sample],
    batch_size: usize,
    rng: &mut Rng,
) -> Result<Vec<Tensor<f32>>> {
    let mut bounds = Vec::new();
    let mut start = 0;
    while start < samples.len() {
        let mut end = (start + batch_size.max(1)).min(samples.len());
        if samples.len() - end == 1 && batch_size >= 2 {
            end = samples.len();
        }
        bounds.push((start, end));
        start = end;
    }
    let mut outputs = Vec::with_capacity(samples.len());
    for (s, e) in bounds {
        let batch: Vec<&Sample> = samples[s..e].iter().collect();
        let (u_t, _) = stack_batch(&batch)?;
        let mut g = Graph::<f32>::new();
        let params = weights.bind_constant(&mut g);
        let u = g.constant(u_t);
        let mut stats: Vec<RunningStats<f32>> = weights.stats.clone();
        let out = gen.forward(&mut g, &params, &mut stats, u, rng, inference_mode(batch_size, e - s))?;
        let pred = g.value(out.prediction);
        let [n, c, h, w] = pred.dims4("predict")?;
        for i in 0..n {
            let chunk = pred.data()[i * c * h * w..(i + 1) * c * h * w].to_vec();
            outputs.push(Tensor::new(vec![c, h, w], chunk)?);
        }
    }
    Ok(outputs)
}

pub fn predict_label_maps(
    gen: &Generator,
    weights: &Weights<f32>,
    samples: &[Sample],
    batch_size: usize,
    rng: &mut Rng,
) -> Result<Vec<LabelMap>> {
    predict(gen, weights, samples, batch_size, rng)?
        .iter()
        .map(predict_labels)
        .collect()
}

/// Per-sample metrics of the generator's segmentation of `samples`.
pub fn evaluate(
    gen: &Generator,
    weights: &Weights<f32>,
    samples: &[Sample],
    batch_size: usize,
    rng: &mut Rng,
    cal: Calibration,
) -> Result<Vec<MetricsRecord>> {
    let preds = predict_label_maps(gen, weights, samples, batch_size, rng)?;
    preds
        .iter()
        .zip(samples)
        .map(|(p, s)| evaluate_sample(p, s, cal))
        .collect()
}

// ----------------------------------------------------------------------
// Checkpoints
// ----------------------------------------------------------------------

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"IVCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ConfigEcho {
    generator: GeneratorConfig,
    discriminator: DiscriminatorConfig,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub generator: Trained<Generator>,
    pub discriminator: Trained<Discriminator>,
}

fn named_tensors(prefix: &str, layout: &crate::nets::Layout, w: &Weights<f32>) -> Vec<(String, Tensor<f32>)> {
    let mut out: Vec<(String, Tensor<f32>)> = layout
        .params
        .iter()
        .zip(&w.params)
        .map(|(p, t)| (format!("{prefix}.{}", p.name), t.clone()))
        .collect();
    for (b, s) in layout.batch_norms.iter().zip(&w.stats) {
        let c = b.channels;
        out.push((
            format!("{prefix}.{}.running_mean", b.name),
            Tensor::new(vec![c], s.mean.clone()).expect("channels > 0"),
        ));
        out.push((
            format!("{prefix}.{}.running_var", b.name),
            Tensor::new(vec![c], s.var.clone()).expect("channels > 0"),
        ));
    }
    out
}

/// Serialize both networks to bytes.
pub fn checkpoint_bytes(gen: &Trained<Generator>, disc: &Trained<Discriminator>) -> Result<Vec<u8>> {
    let echo = serde_json::to_vec(&ConfigEcho {
        generator: gen.net.config().clone(),
        discriminator: disc.net.config().clone(),
    })?;
    let mut tensors = named_tensors("generator", gen.net.layout(), &gen.weights);
    tensors.extend(named_tensors("discriminator", disc.net.layout(), &disc.weights));
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(echo.len() as u64).to_le_bytes());
    out.extend_from_slice(&echo);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        write_tensor(&mut out, t)?;
    }
    Ok(out)
}

pub fn save_checkpoint(path: &Path, gen: &Trained<Generator>, disc: &Trained<Discriminator>) -> Result<()> {
    let bytes = checkpoint_bytes(gen, disc)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes).map_err(|e| CoreError::io(path, e))?;
    w.flush().map_err(|e| CoreError::io(path, e))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> std::result::Result<(), String> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => format!("truncated while reading {what}"),
        _ => format!("reading {what}: {e}"),
    })
}

fn read_u32(r: &mut impl Read, what: &str) -> std::result::Result<u32, String> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn parse_checkpoint(r: &mut impl Read) -> std::result::Result<(ConfigEcho, Vec<(String, Tensor<f32>)>), String> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(format!("bad magic {magic:?}, not a checkpoint"));
    }
    let version = read_u32(r, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(format!("format version {version}, this build reads {CHECKPOINT_VERSION}"));
    }
    let mut len = [0u8; 8];
    read_exact(r, &mut len, "config length")?;
    let len = u64::from_le_bytes(len);
    if len > 1 << 20 {
        return Err(format!("config block of {len} bytes is implausibly large"));
    }
    let mut echo = vec![0u8; len as usize];
    read_exact(r, &mut echo, "config")?;
    let echo: ConfigEcho = serde_json::from_slice(&echo).map_err(|e| format!("config: {e}"))?;
    let count = read_u32(r, "tensor count")?;
    let mut tensors = Vec::with_capacity(count.min(4096) as usize);
    for i in 0..count {
        let n = read_u32(r, "tensor name length")? as usize;
        if n > 4096 {
            return Err(format!("tensor {i} name length {n} is implausible"));
        }
        let mut name = vec![0u8; n];
        read_exact(r, &mut name, "tensor name")?;
        let name = String::from_utf8(name).map_err(|_| format!("tensor {i} name is not UTF-8"))?;
        let t = read_tensor::<f32, _>(r).map_err(|e| format!("tensor `{name}`: {e}"))?;
        tensors.push((name, t));
    }
    let mut rest = [0u8; 1];
    match r.read(&mut rest) {
        Ok(0) => {}
        Ok(_) => return Err("trailing bytes after the last tensor".into()),
        Err(e) => return Err(format!("reading trailer: {e}")),
    }
    Ok((echo, tensors))
}

fn assign_weights(
    prefix: &str,
    layout: &crate::nets::Layout,
    tensors: &mut std::collections::HashMap<String, Tensor<f32>>,
) -> std::result::Result<Weights<f32>, String> {
    let mut take = |name: String, shape: &[usize]| -> std::result::Result<Tensor<f32>, String> {
        let t = tensors.remove(&name).ok_or_else(|| format!("missing tensor `{name}`"))?;
        if t.shape() != shape {
            return Err(format!("tensor `{name}` has shape {:?}, expected {shape:?}", t.shape()));
        }
        Ok(t)
    };
    let params = layout
        .params
        .iter()
        .map(|p| take(format!("{prefix}.{}", p.name), &p.shape))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let stats = layout
        .batch_norms
        .iter()
        .map(|b| {
            let mean = take(format!("{prefix}.{}.running_mean", b.name), &[b.channels])?;
            let var = take(format!("{prefix}.{}.running_var", b.name), &[b.channels])?;
            Ok(RunningStats {
                mean: mean.into_data(),
                var: var.into_data(),
            })
        })
        .collect::<std::result::Result<Vec<_>, String>>()?;
    Ok(Weights { params, stats })
}

/// Load a checkpoint; fails without partial results on any defect.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = fs::File::open(path).map_err(|e| CoreError::io(path, e))?;
    let err = |detail: String| CoreError::Checkpoint {
        path: path.to_path_buf(),
        detail,
    };
    let (echo, tensors) = parse_checkpoint(&mut BufReader::new(file)).map_err(err)?;
    let gen = Generator::new(&echo.generator)?;
    let disc = Discriminator::new(&echo.discriminator)?;
    let mut map: std::collections::HashMap<String, Tensor<f32>> = tensors.into_iter().collect();
    let gw = assign_weights("generator", gen.layout(), &mut map).map_err(err)?;
    let dw = assign_weights("discriminator", disc.layout(), &mut map).map_err(err)?;
    if let Some(extra) = map.keys().min() {
        return Err(err(format!("unexpected tensor `{extra}`")));
    }
    Ok(Checkpoint {
        generator: Trained { net: gen, weights: gw },
        discriminator: Trained { net: disc, weights: dw },
    })
}

fn first_difference(
    network: &'static str,
    found: &impl Serialize,
    expected: &impl Serialize,
) -> Result<Option<CoreError>> {
    let (f, e) = (serde_json::to_value(found)?, serde_json::to_value(expected)?);
    let (Some(fo), Some(eo)) = (f.as_object(), e.as_object()) else {
        return Ok(None);
    };
    let mut keys: Vec<&String> = fo.keys().chain(eo.keys()).collect();
    keys.sort();
    keys.dedup();
    for k in keys {
        let (a, b) = (fo.get(k), eo.get(k));
        if a != b {
            let show = |v: Option<&serde_json::Value>| v.map_or("<absent>".to_string(), |v| v.to_string());
            return Ok(Some(CoreError::ConfigMismatch {
                network,
                field: k.clone(),
                found: show(a),
                expected: show(b),
            }));
        }
    }
    Ok(None)
}

/// Load a checkpoint and require its configurations to equal the given ones.
pub fn load_checkpoint_expecting(
    path: &Path,
    gen_cfg: &GeneratorConfig,
    disc_cfg: &DiscriminatorConfig,
) -> Result<Checkpoint> {
    let ck = load_checkpoint(path)?;
    if let Some(e) = first_difference("generator", ck.generator.net.config(), gen_cfg)? {
        return Err(e);
    }
    if let Some(e) = first_difference("discriminator", ck.discriminator.net.config(), disc_cfg)? {
        return Err(e);
    }
    Ok(ck)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn history_csv_header() {
        assert_eq!(
            History::csv_header(),
            "epoch,d_loss,g_adv,g_rec,lu_jm,ma_jm,lu_pad,ma_pad,lu_hd,ma_hd,lu_ad,ma_ad"
        );
    }

    #[test]
    fn train_config_validation() {
        let bad = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            adam: AdamConfig {
                lr: 0.0,
                ..Default::default()
            },
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
