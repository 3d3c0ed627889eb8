//! Generator variants and the conditional patch discriminator.
//!
//! A network is split into a fixed layout (parameter names and shapes plus
//! the wiring between layers) and a set of [`Weights`] at some precision.
//! Forward passes take parameters as graph variables, so the same code
//! drives training (parameters as trainable leaves), the discriminator half
//! of a generator update (parameters as constants) and finite-difference
//! checks (parameters as checked inputs).
//!
//! Layer conventions:
//! - Down-sampling convolutions are 4x4, stride 2, padding 1; up-sampling
//!   transposed convolutions mirror them.
//! - A convolution followed by batch norm has no bias.
//! - The innermost encoder block of UNet/EncoderDecoder reaches a 1x1 grid
//!   when `2^depth == image_size`, so it carries a bias instead of batch norm.
//! - Hourglass residual blocks use 3x3 convolutions; heads and re-injection
//!   maps are 1x1 convolutions with bias.

use diffcore::{BatchNormMode, Conv2dOptions, Graph, Real, Rng, RunningStats, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorVariant {
    #[serde(rename = "unet")]
    UNet,
    EncoderDecoder,
    HourglassNoReinject,
    HourglassReinject,
}

impl GeneratorVariant {
    pub const ALL: [GeneratorVariant; 4] = [
        GeneratorVariant::UNet,
        GeneratorVariant::EncoderDecoder,
        GeneratorVariant::HourglassNoReinject,
        GeneratorVariant::HourglassReinject,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GeneratorVariant::UNet => "unet",
            GeneratorVariant::EncoderDecoder => "encoder_decoder",
            GeneratorVariant::HourglassNoReinject => "hourglass_no_reinject",
            GeneratorVariant::HourglassReinject => "hourglass_reinject",
        }
    }

    pub fn is_hourglass(self) -> bool {
        matches!(
            self,
            GeneratorVariant::HourglassNoReinject | GeneratorVariant::HourglassReinject
        )
    }
}

impl std::str::FromStr for GeneratorVariant {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        GeneratorVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| CoreError::invalid(format!("unknown generator variant `{s}`")))
    }
}

/// How the generator's noise input is realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Decoder dropout stays active in every mode.
    Dropout,
    /// A standard-normal channel is appended to the input; dropout only
    /// runs in training mode.
    Channel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running statistics updated.
    Train,
    /// Running statistics.
    Eval,
    /// Batch statistics, running statistics left untouched.
    EvalBatchStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub variant: GeneratorVariant,
    pub image_size: usize,
    /// Encoder levels; each halves the resolution.
    pub depth: usize,
    pub base_channels: usize,
    /// Channel cap as a multiple of `base_channels`.
    pub channel_cap_mult: usize,
    pub dropout_p: f64,
    pub noise_mode: NoiseMode,
    pub n_stacks: usize,
    pub out_channels: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            variant: GeneratorVariant::UNet,
            image_size: 64,
            depth: 6,
            base_channels: 16,
            channel_cap_mult: 8,
            dropout_p: 0.5,
            noise_mode: NoiseMode::Dropout,
            n_stacks: 2,
            out_channels: 3,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl GeneratorConfig {
    /// Default configuration for `image_size`, with depth `log2(image_size)`.
    pub fn for_image_size(variant: GeneratorVariant, image_size: usize) -> Self {
        Self {
            variant,
            image_size,
            depth: image_size.max(1).ilog2() as usize,
            ..Self::default()
        }
    }

    pub fn in_channels(&self) -> usize {
        match self.noise_mode {
            NoiseMode::Dropout => 1,
            NoiseMode::Channel => 2,
        }
    }

    pub fn channels_at(&self, level: usize) -> usize {
        (self.base_channels << level).min(self.channel_cap())
    }

    pub fn channel_cap(&self) -> usize {
        self.base_channels * self.channel_cap_mult
    }

    /// Hourglass feature width.
    pub fn hourglass_channels(&self) -> usize {
        self.base_channels.min(self.channel_cap())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::invalid(format!("generator config: {m}")));
        if self.depth < 2 {
            return bad(format!("depth {} must be >= 2", self.depth));
        }
        if self.depth >= usize::BITS as usize || !self.image_size.is_multiple_of(1usize << self.depth) {
            return bad(format!(
                "image_size {} must be a multiple of 2^depth = 2^{}",
                self.image_size, self.depth
            ));
        }
        if self.image_size == 0 || self.base_channels == 0 || self.channel_cap_mult == 0 {
            return bad("image_size, base_channels and channel_cap_mult must be positive".into());
        }
        if self.n_stacks == 0 {
            return bad("n_stacks must be >= 1".into());
        }
        if self.out_channels == 0 {
            return bad("out_channels must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || !(self.bn_eps > 0.0) {
            return bad("bn_momentum must be in [0, 1] and bn_eps > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub image_size: usize,
    pub n_down: usize,
    pub base_channels: usize,
    /// Condition channels plus candidate channels.
    pub in_channels: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            n_down: 4,
            base_channels: 16,
            in_channels: 4,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl DiscriminatorConfig {
    pub fn channels_at(&self, level: usize) -> usize {
        (self.base_channels << level).min(8 * self.base_channels)
    }

    pub fn output_grid(&self) -> usize {
        self.image_size >> self.n_down
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::invalid(format!("discriminator config: {m}")));
        if self.n_down == 0 || self.base_channels == 0 || self.in_channels == 0 {
            return bad("n_down, base_channels and in_channels must be positive".into());
        }
        if self.n_down >= usize::BITS as usize
            || !self.image_size.is_multiple_of(1usize << self.n_down)
            || self.output_grid() == 0
        {
            return bad(format!(
                "image_size {} too small for {} stride-2 blocks",
                self.image_size, self.n_down
            ));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || !(self.bn_eps > 0.0) {
            return bad("bn_momentum must be in [0, 1] and bn_eps > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// `N(0, 0.02)`.
    Conv,
    /// `N(1, 0.02)`.
    Gamma,
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnSpec {
    pub name: String,
    pub channels: usize,
}

/// Ordered parameter and batch-norm declarations of a network.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Layout {
    pub params: Vec<ParamSpec>,
    pub batch_norms: Vec<BnSpec>,
}

impl Layout {
    pub fn param_count(&self) -> usize {
        self.params.iter().map(ParamSpec::numel).sum()
    }

    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        debug_assert!(self.params.iter().all(|p| p.name != name), "duplicate {name}");
        self.params.push(ParamSpec { name, shape, init });
        self.params.len() - 1
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize, bias: bool) -> ConvLayer {
        let w = self.add(format!("{name}.weight"), vec![cout, cin, k, k], Init::Conv);
        let b = bias.then(|| self.add(format!("{name}.bias"), vec![cout], Init::Zero));
        let padding = match (k, stride) {
            (4, 2) => 1,
            _ => k / 2,
        };
        ConvLayer {
            w,
            b,
            opts: Conv2dOptions::new(stride, padding),
            transpose: false,
        }
    }

    fn conv_down(&mut self, name: &str, cin: usize, cout: usize, bias: bool) -> ConvLayer {
        self.conv(name, cin, cout, 4, 2, bias)
    }

    fn conv_up(&mut self, name: &str, cin: usize, cout: usize, bias: bool) -> ConvLayer {
        let w = self.add(format!("{name}.weight"), vec![cin, cout, 4, 4], Init::Conv);
        let b = bias.then(|| self.add(format!("{name}.bias"), vec![cout], Init::Zero));
        ConvLayer {
            w,
            b,
            opts: Conv2dOptions::new(2, 1),
            transpose: true,
        }
    }

    fn bn(&mut self, name: &str, channels: usize) -> BnLayer {
        let gamma = self.add(format!("{name}.gamma"), vec![channels], Init::Gamma);
        let beta = self.add(format!("{name}.beta"), vec![channels], Init::Zero);
        self.batch_norms.push(BnSpec {
            name: name.to_string(),
            channels,
        });
        BnLayer {
            gamma,
            beta,
            stats: self.batch_norms.len() - 1,
        }
    }

    fn residual(&mut self, name: &str, c: usize) -> Residual {
        Residual {
            conv1: self.conv(&format!("{name}.conv1"), c, c, 3, 1, false),
            bn1: self.bn(&format!("{name}.bn1"), c),
            conv2: self.conv(&format!("{name}.conv2"), c, c, 3, 1, false),
            bn2: self.bn(&format!("{name}.bn2"), c),
        }
    }

    /// Freshly initialized weights in declaration order.
    pub fn init_weights<T: Real>(&self, rng: &mut Rng) -> Weights<T> {
        let params = self
            .params
            .iter()
            .map(|p| {
                Tensor::from_fn(p.shape.clone(), |_| match p.init {
                    Init::Conv => T::from_f64(INIT_STD * rng.normal()),
                    Init::Gamma => T::from_f64(1.0 + INIT_STD * rng.normal()),
                    Init::Zero => T::zero(),
                })
            })
            .collect();
        let stats = self
            .batch_norms
            .iter()
            .map(|b| RunningStats::new(b.channels))
            .collect();
        Weights { params, stats }
    }
}

/// Parameter values and batch-norm running statistics of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T> {
    pub params: Vec<Tensor<T>>,
    pub stats: Vec<RunningStats<T>>,
}

impl<T: Real> Weights<T> {
    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Parameters as trainable leaves.
    pub fn bind(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.params.iter().map(|p| g.param(p.clone())).collect()
    }

    /// Parameters as constants.
    pub fn bind_constant(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.params.iter().map(|p| g.constant(p.clone())).collect()
    }

    pub fn cast<U: Real>(&self) -> Weights<U> {
        Weights {
            params: self.params.iter().map(Tensor::cast).collect(),
            stats: self
                .stats
                .iter()
                .map(|s| RunningStats {
                    mean: s.mean.iter().map(|&v| U::from_f64(v.as_f64())).collect(),
                    var: s.var.iter().map(|&v| U::from_f64(v.as_f64())).collect(),
                })
                .collect(),
        }
    }

    /// Checks tensor shapes against `layout`.
    pub fn check_layout(&self, layout: &Layout) -> Result<()> {
        if self.params.len() != layout.params.len() || self.stats.len() != layout.batch_norms.len() {
            return Err(CoreError::invalid(format!(
                "weights have {} params / {} norms, layout declares {} / {}",
                self.params.len(),
                self.stats.len(),
                layout.params.len(),
                layout.batch_norms.len()
            )));
        }
        for (t, p) in self.params.iter().zip(&layout.params) {
            if t.shape() != p.shape.as_slice() {
                return Err(CoreError::invalid(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    p.name,
                    t.shape(),
                    p.shape
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct ConvLayer {
    w: usize,
    b: Option<usize>,
    opts: Conv2dOptions,
    transpose: bool,
}

#[derive(Debug, Clone)]
struct BnLayer {
    gamma: usize,
    beta: usize,
    stats: usize,
}

#[derive(Debug, Clone)]
struct Residual {
    conv1: ConvLayer,
    bn1: BnLayer,
    conv2: ConvLayer,
    bn2: BnLayer,
}

/// Evaluation context shared by all layers of one forward pass.
struct Ctx<'a, T: Real> {
    g: &'a mut Graph<T>,
    params: &'a [Var],
    stats: &'a mut [RunningStats<T>],
    mode: Mode,
    momentum: T,
    eps: T,
}

impl<T: Real> Ctx<'_, T> {
    fn conv(&mut self, l: &ConvLayer, x: Var) -> Result<Var> {
        let w = self.params[l.w];
        let b = l.b.map(|i| self.params[i]);
        Ok(if l.transpose {
            self.g.conv_transpose2d(x, w, b, l.opts)?
        } else {
            self.g.conv2d(x, w, b, l.opts)?
        })
    }

    fn bn(&mut self, l: &BnLayer, x: Var) -> Result<Var> {
        let (gamma, beta) = (self.params[l.gamma], self.params[l.beta]);
        let out = match self.mode {
            Mode::Train => self.g.batch_norm(
                x,
                gamma,
                beta,
                BatchNormMode::Train {
                    running: &mut self.stats[l.stats],
                    momentum: self.momentum,
                },
                self.eps,
            )?,
            Mode::EvalBatchStats => {
                let mut scratch = self.stats[l.stats].clone();
                self.g.batch_norm(
                    x,
                    gamma,
                    beta,
                    BatchNormMode::Train {
                        running: &mut scratch,
                        momentum: self.momentum,
                    },
                    self.eps,
                )?
            }
            Mode::Eval => self.g.batch_norm(
                x,
                gamma,
                beta,
                BatchNormMode::Eval {
                    running: &self.stats[l.stats],
                },
                self.eps,
            )?,
        };
        Ok(out)
    }

    fn lrelu(&mut self, x: Var) -> Result<Var> {
        Ok(self.g.leaky_relu(x, T::from_f64(LEAKY_SLOPE))?)
    }

    fn residual(&mut self, r: &Residual, x: Var) -> Result<Var> {
        let h = self.conv(&r.conv1, x)?;
        let h = self.bn(&r.bn1, h)?;
        let h = self.g.relu(h)?;
        let h = self.conv(&r.conv2, h)?;
        let h = self.bn(&r.bn2, h)?;
        let s = self.g.add(h, x)?;
        Ok(self.g.relu(s)?)
    }
}

#[derive(Debug, Clone)]
struct EncBlock {
    conv: ConvLayer,
    bn: Option<BnLayer>,
}

#[derive(Debug, Clone)]
struct DecBlock {
    conv: ConvLayer,
    bn: Option<BnLayer>,
    dropout: bool,
}

#[derive(Debug, Clone)]
struct HourglassLevel {
    skip: Residual,
    down: ConvLayer,
    down_bn: Option<BnLayer>,
    up: ConvLayer,
    up_bn: BnLayer,
}

#[derive(Debug, Clone)]
struct Stack {
    levels: Vec<HourglassLevel>,
    post: Residual,
    head: ConvLayer,
    /// 1x1 maps of features and prediction added to the next stack's input.
    reinject: Option<(ConvLayer, ConvLayer)>,
}

#[derive(Debug, Clone)]
enum GenArch {
    EncoderDecoder {
        encoder: Vec<EncBlock>,
        /// Outermost first: `decoder[0]` produces the output image.
        decoder: Vec<DecBlock>,
        skips: bool,
    },
    Hourglass {
        stem: ConvLayer,
        stem_bn: BnLayer,
        stacks: Vec<Stack>,
    },
}

/// Output of a generator forward pass.
#[derive(Debug, Clone)]
pub struct GenOutput {
    /// Final prediction `[N, out_channels, H, W]`.
    pub prediction: Var,
    /// Per-stack predictions for hourglass variants (last equals
    /// `prediction`); empty otherwise.
    pub intermediates: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct Generator {
    cfg: GeneratorConfig,
    layout: Layout,
    arch: GenArch,
}

impl Generator {
    pub fn new(cfg: &GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        let mut l = Layout::default();
        let arch = if cfg.variant.is_hourglass() {
            build_hourglass(cfg, &mut l)
        } else {
            build_encoder_decoder(cfg, &mut l)
        };
        Ok(Self {
            cfg: cfg.clone(),
            layout: l,
            arch,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.param_count()
    }

    /// Run the generator on condition images `u` `[N,1,H,W]`.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        params: &[Var],
        stats: &mut [RunningStats<T>],
        u: Var,
        rng: &mut Rng,
        mode: Mode,
    ) -> Result<GenOutput> {
        let cfg = &self.cfg;
        check_bound(&self.layout, g, params, stats)?;
        let shape = g.shape(u).to_vec();
        if shape.len() != 4 || shape[1] != 1 || shape[2] != cfg.image_size || shape[3] != cfg.image_size {
            return Err(CoreError::invalid(format!(
                "generator expects [N,1,{s},{s}] input, got {shape:?}",
                s = cfg.image_size
            )));
        }
        let input = match cfg.noise_mode {
            NoiseMode::Dropout => u,
            NoiseMode::Channel => {
                let noise = Tensor::from_fn(vec![shape[0], 1, shape[2], shape[3]], |_| {
                    T::from_f64(rng.normal())
                });
                let c = g.constant(noise);
                g.concat(u, c, 1)?
            }
        };
        let dropout_active = cfg.noise_mode == NoiseMode::Dropout || mode == Mode::Train;
        let mut ctx = Ctx {
            g,
            params,
            stats,
            mode,
            momentum: T::from_f64(cfg.bn_momentum),
            eps: T::from_f64(cfg.bn_eps),
        };
        match &self.arch {
            GenArch::EncoderDecoder {
                encoder,
                decoder,
                skips,
            } => {
                let mut feats = Vec::with_capacity(encoder.len());
                let mut x = input;
                for block in encoder {
                    x = ctx.conv(&block.conv, x)?;
                    if let Some(bn) = &block.bn {
                        x = ctx.bn(bn, x)?;
                    }
                    x = ctx.lrelu(x)?;
                    feats.push(x);
                }
                let depth = encoder.len();
                for level in (0..depth).rev() {
                    let block = &decoder[level];
                    if *skips && level + 1 < depth {
                        x = ctx.g.concat(x, feats[level], 1)?;
                    }
                    x = ctx.conv(&block.conv, x)?;
                    if level == 0 {
                        x = ctx.g.tanh(x)?;
                        break;
                    }
                    if let Some(bn) = &block.bn {
                        x = ctx.bn(bn, x)?;
                    }
                    if block.dropout {
                        x = ctx.g.dropout(x, cfg.dropout_p, rng, dropout_active)?;
                    }
                    x = ctx.g.relu(x)?;
                }
                Ok(GenOutput {
                    prediction: x,
                    intermediates: Vec::new(),
                })
            }
            GenArch::Hourglass {
                stem,
                stem_bn,
                stacks,
            } => {
                let x = ctx.conv(stem, input)?;
                let x = ctx.bn(stem_bn, x)?;
                let mut x = ctx.lrelu(x)?;
                let mut preds = Vec::with_capacity(stacks.len());
                for stack in stacks {
                    let h = hourglass(&mut ctx, &stack.levels, x)?;
                    let f = ctx.residual(&stack.post, h)?;
                    let p = ctx.conv(&stack.head, f)?;
                    let p = ctx.g.tanh(p)?;
                    preds.push(p);
                    x = match &stack.reinject {
                        Some((fmap, pmap)) => {
                            let a = ctx.conv(fmap, f)?;
                            let b = ctx.conv(pmap, p)?;
                            let s = ctx.g.add(x, a)?;
                            ctx.g.add(s, b)?
                        }
                        None => ctx.g.add(x, f)?,
                    };
                }
                Ok(GenOutput {
                    prediction: *preds.last().expect("n_stacks >= 1"),
                    intermediates: preds,
                })
            }
        }
    }
}

fn hourglass<T: Real>(ctx: &mut Ctx<'_, T>, levels: &[HourglassLevel], x: Var) -> Result<Var> {
    let Some((level, inner)) = levels.split_first() else {
        return Ok(x);
    };
    let skip = ctx.residual(&level.skip, x)?;
    let mut d = ctx.conv(&level.down, x)?;
    if let Some(bn) = &level.down_bn {
        d = ctx.bn(bn, d)?;
    }
    let d = ctx.lrelu(d)?;
    let d = hourglass(ctx, inner, d)?;
    let u = ctx.conv(&level.up, d)?;
    let u = ctx.bn(&level.up_bn, u)?;
    let u = ctx.g.relu(u)?;
    Ok(ctx.g.add(skip, u)?)
}

fn build_encoder_decoder(cfg: &GeneratorConfig, l: &mut Layout) -> GenArch {
    let skips = cfg.variant == GeneratorVariant::UNet;
    let depth = cfg.depth;
    let ch = |i: usize| cfg.channels_at(i);
    let encoder = (0..depth)
        .map(|i| {
            let cin = if i == 0 { cfg.in_channels() } else { ch(i - 1) };
            let innermost = i + 1 == depth;
            let name = format!("enc{i}");
            EncBlock {
                conv: l.conv_down(&format!("{name}.conv"), cin, ch(i), innermost),
                bn: (!innermost).then(|| l.bn(&format!("{name}.bn"), ch(i))),
            }
        })
        .collect();
    let mut decoder: Vec<DecBlock> = (0..depth)
        .rev()
        .map(|i| {
            let cin = if i + 1 == depth {
                ch(i)
            } else if skips {
                2 * ch(i)
            } else {
                ch(i)
            };
            let name = format!("dec{i}");
            if i == 0 {
                DecBlock {
                    conv: l.conv_up(&format!("{name}.conv"), cin, cfg.out_channels, true),
                    bn: None,
                    dropout: false,
                }
            } else {
                DecBlock {
                    conv: l.conv_up(&format!("{name}.conv"), cin, ch(i - 1), false),
                    bn: Some(l.bn(&format!("{name}.bn"), ch(i - 1))),
                    dropout: i + 3 >= depth,
                }
            }
        })
        .collect();
    decoder.reverse();
    GenArch::EncoderDecoder {
        encoder,
        decoder,
        skips,
    }
}

fn build_hourglass(cfg: &GeneratorConfig, l: &mut Layout) -> GenArch {
    let c = cfg.hourglass_channels();
    let stem = l.conv("stem.conv", cfg.in_channels(), c, 3, 1, false);
    let stem_bn = l.bn("stem.bn", c);
    let reinject = cfg.variant == GeneratorVariant::HourglassReinject;
    let stacks = (0..cfg.n_stacks)
        .map(|s| {
            let levels = (0..cfg.depth)
                .map(|i| {
                    let name = format!("stack{s}.hg{i}");
                    let innermost = i + 1 == cfg.depth;
                    HourglassLevel {
                        skip: l.residual(&format!("{name}.skip"), c),
                        down: l.conv_down(&format!("{name}.down"), c, c, innermost),
                        down_bn: (!innermost).then(|| l.bn(&format!("{name}.down_bn"), c)),
                        up: l.conv_up(&format!("{name}.up"), c, c, false),
                        up_bn: l.bn(&format!("{name}.up_bn"), c),
                    }
                })
                .collect();
            let post = l.residual(&format!("stack{s}.post"), c);
            let head = l.conv(&format!("stack{s}.head"), c, cfg.out_channels, 1, 1, true);
            let reinject = (reinject && s + 1 < cfg.n_stacks).then(|| {
                (
                    l.conv(&format!("stack{s}.reinject_features"), c, c, 1, 1, true),
                    l.conv(&format!("stack{s}.reinject_prediction"), cfg.out_channels, c, 1, 1, true),
                )
            });
            Stack {
                levels,
                post,
                head,
                reinject,
            }
        })
        .collect();
    GenArch::Hourglass {
        stem,
        stem_bn,
        stacks,
    }
}

fn check_bound<T: Real>(
    layout: &Layout,
    g: &Graph<T>,
    params: &[Var],
    stats: &[RunningStats<T>],
) -> Result<()> {
    if params.len() != layout.params.len() || stats.len() != layout.batch_norms.len() {
        return Err(CoreError::invalid(format!(
            "network expects {} params and {} norm states, got {} and {}",
            layout.params.len(),
            layout.batch_norms.len(),
            params.len(),
            stats.len()
        )));
    }
    for (&v, spec) in params.iter().zip(&layout.params) {
        if g.shape(v) != spec.shape.as_slice() {
            return Err(CoreError::invalid(format!(
                "parameter {} bound with shape {:?}, expected {:?}",
                spec.name,
                g.shape(v),
                spec.shape
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    cfg: DiscriminatorConfig,
    layout: Layout,
    blocks: Vec<EncBlock>,
    head: ConvLayer,
}

impl Discriminator {
    pub fn new(cfg: &DiscriminatorConfig) -> Result<Self> {
        cfg.validate()?;
        let mut l = Layout::default();
        let blocks = (0..cfg.n_down)
            .map(|i| {
                let cin = if i == 0 { cfg.in_channels } else { cfg.channels_at(i - 1) };
                let first = i == 0;
                EncBlock {
                    conv: l.conv_down(&format!("block{i}.conv"), cin, cfg.channels_at(i), first),
                    bn: (!first).then(|| l.bn(&format!("block{i}.bn"), cfg.channels_at(i))),
                }
            })
            .collect();
        let head = l.conv("head", cfg.channels_at(cfg.n_down - 1), 1, 3, 1, true);
        Ok(Self {
            cfg: cfg.clone(),
            layout: l,
            blocks,
            head,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.param_count()
    }

    /// Probability grid `[N,1,G,G]` for condition `u` and candidate `v`.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        params: &[Var],
        stats: &mut [RunningStats<T>],
        u: Var,
        v: Var,
        mode: Mode,
    ) -> Result<Var> {
        check_bound(&self.layout, g, params, stats)?;
        let x = g.concat(u, v, 1)?;
        let shape = g.shape(x);
        let s = self.cfg.image_size;
        if shape[1] != self.cfg.in_channels || shape[2] != s || shape[3] != s {
            return Err(CoreError::invalid(format!(
                "discriminator expects [N,{},{s},{s}] after concatenation, got {shape:?}",
                self.cfg.in_channels
            )));
        }
        let mut ctx = Ctx {
            g,
            params,
            stats,
            mode,
            momentum: T::from_f64(self.cfg.bn_momentum),
            eps: T::from_f64(self.cfg.bn_eps),
        };
        let mut x = x;
        for block in &self.blocks {
            x = ctx.conv(&block.conv, x)?;
            if let Some(bn) = &block.bn {
                x = ctx.bn(bn, x)?;
            }
            x = ctx.lrelu(x)?;
        }
        let logits = ctx.conv(&self.head, x)?;
        Ok(ctx.g.sigmoid(logits)?)
    }
}

pub fn build_generator(cfg: &GeneratorConfig, rng: &mut Rng) -> Result<(Generator, Weights<f32>)> {
    let net = Generator::new(cfg)?;
    let w = net.layout().init_weights(rng);
    Ok((net, w))
}

pub fn build_discriminator(cfg: &DiscriminatorConfig, rng: &mut Rng) -> Result<(Discriminator, Weights<f32>)> {
    let net = Discriminator::new(cfg)?;
    let w = net.layout().init_weights(rng);
    Ok((net, w))
}

fn conv_params(cin: usize, cout: usize, k: usize, bias: bool) -> usize {
    cin * cout * k * k + if bias { cout } else { 0 }
}

/// Generator parameter count from the per-layer formulas, without building
/// the network.
pub fn closed_form_generator_params(cfg: &GeneratorConfig) -> usize {
    let d = cfg.depth;
    let cin = cfg.in_channels();
    let out = cfg.out_channels;
    let bn = |c: usize| 2 * c;
    match cfg.variant {
        GeneratorVariant::UNet | GeneratorVariant::EncoderDecoder => {
            let skip = usize::from(cfg.variant == GeneratorVariant::UNet);
            let ch = |i: usize| cfg.channels_at(i);
            let mut total = 0;
            for i in 0..d {
                let prev = if i == 0 { cin } else { ch(i - 1) };
                total += 16 * prev * ch(i);
                total += if i + 1 == d { ch(i) } else { bn(ch(i)) };
            }
            for i in 1..d {
                let width = if i + 1 == d { ch(i) } else { ch(i) * (1 + skip) };
                total += 16 * width * ch(i - 1) + bn(ch(i - 1));
            }
            total + 16 * ch(0) * (1 + skip) * out + out
        }
        GeneratorVariant::HourglassNoReinject | GeneratorVariant::HourglassReinject => {
            let c = cfg.hourglass_channels();
            let residual = 2 * 9 * c * c + 2 * bn(c);
            let level = residual + 16 * c * c + bn(c) + 16 * c * c + bn(c);
            // The innermost down-sampling conv has a bias instead of batch norm.
            let hourglass = d * level - bn(c) + c;
            let stack = hourglass + residual + c * out + out;
            let reinject = if cfg.variant == GeneratorVariant::HourglassReinject {
                (cfg.n_stacks - 1) * (c * c + c + out * c + c)
            } else {
                0
            };
            9 * cin * c + bn(c) + cfg.n_stacks * stack + reinject
        }
    }
}

pub fn closed_form_discriminator_params(cfg: &DiscriminatorConfig) -> usize {
    let mut total = 0;
    for i in 0..cfg.n_down {
        let prev = if i == 0 { cfg.in_channels } else { cfg.channels_at(i - 1) };
        total += 16 * prev * cfg.channels_at(i);
        total += if i == 0 { cfg.channels_at(i) } else { 2 * cfg.channels_at(i) };
    }
    total + conv_params(cfg.channels_at(cfg.n_down - 1), 1, 3, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_param_arithmetic() {
        assert_eq!(conv_params(1, 1, 1, false), 1);
        assert_eq!(conv_params(3, 8, 4, true), 392);
    }

    #[test]
    fn variant_names_roundtrip() {
        for v in GeneratorVariant::ALL {
            assert_eq!(v.name().parse::<GeneratorVariant>().unwrap(), v);
        }
    }

    #[test]
    fn invalid_configs() {
        let base = GeneratorConfig::default();
        for cfg in [
            GeneratorConfig { depth: 1, ..base.clone() },
            GeneratorConfig { depth: 7, ..base.clone() },
            GeneratorConfig { n_stacks: 0, ..base.clone() },
            GeneratorConfig { dropout_p: 1.0, ..base.clone() },
        ] {
            assert!(Generator::new(&cfg).is_err(), "{cfg:?}");
        }
        let d = DiscriminatorConfig { image_size: 8, n_down: 4, ..Default::default() };
        assert!(Discriminator::new(&d).is_err());
    }
}
