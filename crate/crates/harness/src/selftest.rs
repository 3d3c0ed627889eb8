//! Built-in oracle suites, runnable from the command line.
//!
//! Each suite compares the implementation against an independent oracle:
//! finite differences, brute-force enumeration, analytic areas or hand
//! computations.

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use diffcore::check::{check_gradients, op_sweep, weighted_sum, GradCheckOptions, ScalarFn};
use diffcore::{Conv2dOptions, Graph, Real, Rng, RunningStats, Tensor, Var};
use ivus_core::geometry::{Contour, Point};
use ivus_core::labels::BinaryMask;
use ivus_core::metrics::{contour_distances, evaluate_sample, hausdorff, jaccard, pad, resample_for_distance, Calibration};
use ivus_core::nets::{
    closed_form_discriminator_params, closed_form_generator_params, Discriminator, DiscriminatorConfig, Generator,
    GeneratorConfig, GeneratorVariant, Mode, Weights,
};
use ivus_core::phantom::{generate_phantom, PhantomSpec};
use ivus_core::segment::{cleanup, extract_contour, lu_ma_boundaries};
use ivus_core::train::{Adam, AdamConfig};

use crate::error::HarnessError;

/// Suites in the order they run by default.
pub const SUITES: [u32; 7] = [1, 2, 3, 4, 5, 10, 11];

pub fn suite_name(suite: u32) -> &'static str {
    match suite {
        1 => "gradients",
        2 => "adjoint",
        3 => "metric oracles",
        4 => "geometry",
        5 => "closed loop",
        10 => "parameter counts",
        11 => "adam",
        _ => "unknown",
    }
}

#[derive(Debug, Clone)]
pub struct Check {
    pub suite: u32,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(suite: u32, name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            suite,
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub checks: Vec<Check>,
    pub timings: Vec<(u32, Duration)>,
}

impl Report {
    pub fn failed(&self) -> usize {
        self.checks.iter().filter(|c| !c.passed).count()
    }

    pub fn suite_passed(&self, suite: u32) -> bool {
        let mine: Vec<&Check> = self.checks.iter().filter(|c| c.suite == suite).collect();
        !mine.is_empty() && mine.iter().all(|c| c.passed)
    }

    /// 0 when every check passed, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.failed() == 0 {
            0
        } else {
            3
        }
    }

    pub fn into_result(self) -> Result<Self, HarnessError> {
        match self.failed() {
            0 => Ok(self),
            failed => Err(HarnessError::ChecksFailed {
                failed,
                total: self.checks.len(),
            }),
        }
    }

    pub fn lines(&self) -> Vec<String> {
        self.checks
            .iter()
            .map(|c| {
                format!(
                    "{} suite {:>2} ({}) {}: {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.suite,
                    suite_name(c.suite),
                    c.name,
                    c.detail
                )
            })
            .collect()
    }
}

/// Run `suites` in order. A suite that panics or errors contributes one
/// failed check instead of aborting the run.
pub fn run(suites: &[u32]) -> Report {
    let mut report = Report::default();
    for &suite in suites {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| run_suite(suite)));
        let checks = match result {
            Ok(Ok(checks)) => checks,
            Ok(Err(e)) => vec![Check::new(suite, "suite", false, e)],
            Err(panic) => {
                let msg = panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panicked".into());
                vec![Check::new(suite, "suite", false, format!("panic: {msg}"))]
            }
        };
        report.checks.extend(checks);
        report.timings.push((suite, start.elapsed()));
    }
    report
}

type SuiteResult = Result<Vec<Check>, String>;

fn run_suite(suite: u32) -> SuiteResult {
    match suite {
        1 => gradients(),
        2 => adjoint(),
        3 => metric_oracles(),
        4 => geometry(),
        5 => closed_loop(),
        10 => parameter_counts(),
        11 => adam(),
        other => Err(format!("no suite {other}; available: {SUITES:?}")),
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

// ----------------------------------------------------------------------
// 1: finite differences
// ----------------------------------------------------------------------

const GRAD_TOL: f64 = 1e-5;

/// Weighted sum of a generator's output as a function of its parameters.
struct GeneratorProbe {
    net: Generator,
    stats: Vec<RunningStats<f64>>,
    u: Tensor<f64>,
    weights: Tensor<f64>,
}

impl ScalarFn for GeneratorProbe {
    fn eval<T: Real>(&self, g: &mut Graph<T>, inputs: &[Var]) -> diffcore::Result<Var> {
        let mut stats: Vec<RunningStats<T>> = self
            .stats
            .iter()
            .map(|s| RunningStats {
                mean: s.mean.iter().map(|&v| T::from_f64(v)).collect(),
                var: s.var.iter().map(|&v| T::from_f64(v)).collect(),
            })
            .collect();
        let u = g.constant(self.u.cast());
        // Same dropout masks on every evaluation.
        let out = self
            .net
            .forward(g, inputs, &mut stats, u, &mut Rng::new(0), Mode::Train)
            .expect("generator forward");
        weighted_sum(g, out.prediction, &self.weights)
    }
}

fn gradients() -> SuiteResult {
    let mut checks = Vec::new();
    for (kind, r) in op_sweep::<f64>(3, 1).map_err(err)? {
        checks.push(Check::new(
            1,
            format!("op {kind:?}"),
            r.max_rel_err < GRAD_TOL,
            format!("max rel err {:.2e} over {} entries", r.max_rel_err, r.checked),
        ));
    }
    for variant in GeneratorVariant::ALL {
        let cfg = GeneratorConfig {
            variant,
            image_size: 8,
            depth: 2,
            base_channels: 2,
            n_stacks: 2,
            ..GeneratorConfig::default()
        };
        let mut rng = Rng::new(21);
        let net = Generator::new(&cfg).map_err(err)?;
        let w: Weights<f64> = net.layout().init_weights(&mut rng);
        // Scaled-up weights keep activations out of the flat region where
        // differences vanish.
        let inputs: Vec<Tensor<f64>> = w.params.iter().map(|p| p.map(|v| v * 10.0)).collect();
        let probe = GeneratorProbe {
            net,
            stats: w.stats.clone(),
            u: Tensor::from_fn(vec![2, 1, 8, 8], |_| rng.uniform_in(-1.0, 1.0)),
            weights: Tensor::from_fn(vec![2, 3, 8, 8], |_| rng.uniform_in(-1.0, 1.0)),
        };
        let opts = GradCheckOptions {
            max_per_input: 12,
            ..Default::default()
        };
        let r = check_gradients::<f64, _>(&probe, &inputs, opts).map_err(err)?;
        checks.push(Check::new(
            1,
            format!("generator {}", variant.name()),
            r.max_rel_err < GRAD_TOL,
            format!("max rel err {:.2e} over {} entries", r.max_rel_err, r.checked),
        ));
    }
    Ok(checks)
}

// ----------------------------------------------------------------------
// 2: adjoint identity
// ----------------------------------------------------------------------

fn random_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.uniform_in(-1.0, 1.0))
}

fn conv(x: &Tensor<f64>, w: &Tensor<f64>, opts: Conv2dOptions, transpose: bool) -> diffcore::Result<Tensor<f64>> {
    let mut g = Graph::new();
    let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
    let y = if transpose {
        g.conv_transpose2d(xv, wv, None, opts)?
    } else {
        g.conv2d(xv, wv, None, opts)?
    };
    Ok(g.value(y).clone())
}

/// `<conv(x), y> == <x, conv_transpose(y)>` for shapes where the transpose
/// maps back onto the full input grid.
fn adjoint() -> SuiteResult {
    let mut rng = Rng::new(2);
    let mut checks = Vec::new();
    while checks.len() < 20 {
        let n = 1 + rng.below(2);
        let c = 1 + rng.below(3);
        let o = 1 + rng.below(3);
        let h = 4 + rng.below(6);
        let k = 1 + rng.below(4);
        let s = 1 + rng.below(2);
        let p = rng.below(2);
        if h + 2 * p < k || !(h + 2 * p - k).is_multiple_of(s) {
            continue;
        }
        let opts = Conv2dOptions::new(s, p);
        let x = random_tensor(&mut rng, &[n, c, h, h]);
        let w = random_tensor(&mut rng, &[o, c, k, k]);
        let fx = conv(&x, &w, opts, false).map_err(err)?;
        let y = random_tensor(&mut rng, fx.shape());
        let back = conv(&y, &w, opts, true).map_err(err)?;
        if back.shape() != x.shape() {
            return Err(format!("transpose of {:?} gave {:?}", x.shape(), back.shape()));
        }
        let (lhs, rhs) = (fx.dot(&y), x.dot(&back));
        checks.push(Check::new(
            2,
            format!("x{:?} w{:?} s{s} p{p}", x.shape(), w.shape()),
            (lhs - rhs).abs() <= 1e-10,
            format!("|diff| {:.1e}", (lhs - rhs).abs()),
        ));
    }
    Ok(checks)
}

// ----------------------------------------------------------------------
// 3: metric oracles
// ----------------------------------------------------------------------

fn pixel_set(m: &BinaryMask) -> HashSet<(usize, usize)> {
    let mut s = HashSet::new();
    for y in 0..m.height() {
        for x in 0..m.width() {
            if m.get(x, y) {
                s.insert((x, y));
            }
        }
    }
    s
}

fn random_mask(rng: &mut Rng, n: usize) -> BinaryMask {
    let p = rng.uniform();
    BinaryMask::new(n, n, (0..n * n).map(|_| rng.bernoulli(p)).collect())
}

fn random_star(rng: &mut Rng) -> Contour {
    let n = 3 + rng.below(30);
    let (cx, cy) = (rng.uniform_in(-5.0, 5.0), rng.uniform_in(-5.0, 5.0));
    Contour::new(
        (0..n)
            .map(|i| {
                let t = std::f64::consts::TAU * i as f64 / n as f64;
                let r = rng.uniform_in(1.0, 6.0);
                Point::new(cx + r * t.cos(), cy + r * t.sin())
            })
            .collect(),
    )
}

/// Nearest distances by exhaustive search.
fn brute_directed(a: &[Point], b: &[Point]) -> Vec<f64> {
    a.iter()
        .map(|&p| b.iter().map(|&q| p.dist(q)).fold(f64::INFINITY, f64::min))
        .collect()
}

fn metric_oracles() -> SuiteResult {
    let mut rng = Rng::new(3);
    let (mut jm_bad, mut pad_bad) = (0, 0);
    for _ in 0..1000 {
        let (a, b) = (random_mask(&mut rng, 16), random_mask(&mut rng, 16));
        let (sa, sb) = (pixel_set(&a), pixel_set(&b));
        let inter = sa.intersection(&sb).count();
        let union = sa.union(&sb).count();
        let jm = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
        if jaccard(&a, &b).map_err(err)? != jm {
            jm_bad += 1;
        }
        let ok = match (sb.len(), pad(&a, &b)) {
            (0, got) => got.is_err(),
            (t, got) => got.ok() == Some((sa.len() as f64 - t as f64).abs() / t as f64 * 100.0),
        };
        pad_bad += !ok as usize;
    }
    let mut checks = vec![
        Check::new(3, "jaccard vs set oracle", jm_bad == 0, format!("{jm_bad} of 1000 mismatched")),
        Check::new(3, "pad vs set oracle", pad_bad == 0, format!("{pad_bad} of 1000 mismatched")),
    ];
    let (mut dist_bad, mut order_bad) = (0, 0);
    for _ in 0..100 {
        let (a, b) = (random_star(&mut rng), random_star(&mut rng));
        let pa = resample_for_distance(&a).map_err(err)?;
        let pb = resample_for_distance(&b).map_err(err)?;
        let (ab, ba) = (brute_directed(&pa, &pb), brute_directed(&pb, &pa));
        let max = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let hd = max(&ab).max(max(&ba));
        let ad = 0.5 * (mean(&ab) + mean(&ba));
        let got = contour_distances(&a, &b, Calibration::default()).map_err(err)?;
        dist_bad += (got != (hd, ad)) as usize;
        order_bad += (got.1 > got.0) as usize;
    }
    checks.push(Check::new(
        3,
        "hausdorff and average distance vs brute force",
        dist_bad == 0,
        format!("{dist_bad} of 100 mismatched"),
    ));
    checks.push(Check::new(3, "ad <= hd", order_bad == 0, format!("{order_bad} of 100 violated")));
    Ok(checks)
}

// ----------------------------------------------------------------------
// 4: geometry
// ----------------------------------------------------------------------

fn disc(size: usize, r: f64) -> BinaryMask {
    let c = (size as f64 - 1.0) / 2.0;
    BinaryMask::from_fn(size, size, |x, y| {
        let (dx, dy) = (x as f64 - c, y as f64 - c);
        dx * dx + dy * dy <= r * r
    })
}

/// Pixel `(x, y)` moves to `(n-1-y, x)`, a quarter turn about the center.
fn rotate_mask(m: &BinaryMask) -> BinaryMask {
    let n = m.width();
    BinaryMask::from_fn(n, n, |x, y| m.get(y, n - 1 - x))
}

fn same_cycle(a: &Contour, b: &Contour) -> bool {
    let n = a.len();
    n == b.len() && (0..n).any(|shift| (0..n).all(|i| a.points[i] == b.points[(i + shift) % n]))
}

fn geometry() -> SuiteResult {
    let mut checks = Vec::new();
    for r in [5.0, 10.0, 20.0] {
        let c = extract_contour(&disc((2.0 * r) as usize + 8, r)).map_err(err)?;
        let exact = std::f64::consts::PI * r * r;
        let rel = (c.area() - exact).abs() / exact;
        checks.push(Check::new(
            4,
            format!("disc radius {r}"),
            rel < 0.03,
            format!("area {:.2} vs {exact:.2} ({:.2}%)", c.area(), rel * 100.0),
        ));
    }
    let mut rng = Rng::new(4);
    let mut tried = 0;
    let mut bad = 0;
    while tried < 50 {
        let n = 2 + rng.below(12);
        let m = cleanup(&random_mask(&mut rng, n));
        if m.is_empty() {
            continue;
        }
        tried += 1;
        let center = Point::new((n as f64 - 1.0) / 2.0, (n as f64 - 1.0) / 2.0);
        let rotated_first = extract_contour(&rotate_mask(&m)).map_err(err)?;
        let rotated_after = extract_contour(&m).map_err(err)?.map(|p| p.rotate_quarter_about(center, 1));
        bad += !same_cycle(&rotated_first, &rotated_after) as usize;
    }
    checks.push(Check::new(
        4,
        "quarter-turn consistency",
        bad == 0,
        format!("{bad} of {tried} masks differ"),
    ));
    Ok(checks)
}

// ----------------------------------------------------------------------
// 5: closed loop on ground truth
// ----------------------------------------------------------------------

fn closed_loop() -> SuiteResult {
    let spec = PhantomSpec::default();
    let cal = Calibration::default();
    let (mut worst_hd, mut bad_area) = (0.0f64, 0);
    for index in 0..50 {
        let s = generate_phantom(&spec, index).map_err(err)?;
        let (lu, ma) = lu_ma_boundaries(&s.labels).map_err(err)?;
        worst_hd = worst_hd
            .max(hausdorff(&lu, &s.lu_contour, cal).map_err(err)?)
            .max(hausdorff(&ma, &s.ma_contour, cal).map_err(err)?);
        let r = evaluate_sample(&s.labels, &s, cal).map_err(err)?;
        bad_area += ((r.lu_jm, r.ma_jm, r.lu_pad, r.ma_pad) != (1.0, 1.0, 0.0, 0.0)) as usize;
    }
    Ok(vec![
        Check::new(5, "boundary HD <= 1 px", worst_hd <= 1.0, format!("worst {worst_hd:.4} px over 50 phantoms")),
        Check::new(5, "JM = 1 and PAD = 0", bad_area == 0, format!("{bad_area} of 50 phantoms off")),
    ])
}

// ----------------------------------------------------------------------
// 10: parameter counts
// ----------------------------------------------------------------------

fn parameter_counts() -> SuiteResult {
    let mut checks = Vec::new();
    for depth in [2, 3, 4] {
        for base in [2, 4, 8] {
            let mut counts = Vec::new();
            let mut mismatched = Vec::new();
            for variant in GeneratorVariant::ALL {
                let cfg = GeneratorConfig {
                    variant,
                    image_size: 16,
                    depth,
                    base_channels: base,
                    ..GeneratorConfig::default()
                };
                let enumerated = Generator::new(&cfg).map_err(err)?.param_count();
                let closed = closed_form_generator_params(&cfg);
                if enumerated != closed {
                    mismatched.push(format!("{} {enumerated} != {closed}", variant.name()));
                }
                counts.push(enumerated);
            }
            checks.push(Check::new(
                10,
                format!("closed form depth {depth} base {base}"),
                mismatched.is_empty(),
                if mismatched.is_empty() {
                    format!("{counts:?}")
                } else {
                    mismatched.join("; ")
                },
            ));
            checks.push(Check::new(
                10,
                format!("encoder-decoder < u-net depth {depth} base {base}"),
                counts[1] < counts[0],
                format!("{} < {}", counts[1], counts[0]),
            ));
        }
        let dcfg = DiscriminatorConfig {
            image_size: 16,
            n_down: depth.min(3),
            base_channels: 4,
            ..DiscriminatorConfig::default()
        };
        let enumerated = Discriminator::new(&dcfg).map_err(err)?.param_count();
        let closed = closed_form_discriminator_params(&dcfg);
        checks.push(Check::new(
            10,
            format!("discriminator closed form n_down {}", dcfg.n_down),
            enumerated == closed,
            format!("{enumerated} vs {closed}"),
        ));
    }
    Ok(checks)
}

// ----------------------------------------------------------------------
// 11: Adam
// ----------------------------------------------------------------------

fn adam() -> SuiteResult {
    let (lr, b1, b2, eps) = (0.1, 0.5, 0.75, 1e-8);
    let cfg = AdamConfig {
        lr,
        beta1: b1,
        beta2: b2,
        eps,
    };
    let (p0, g1, g2) = ([1.0f64, -2.0], [0.5, -4.0], [1.0, 2.0]);
    let mut params = vec![Tensor::new(vec![2], p0.to_vec()).map_err(err)?];
    let mut opt = Adam::new(cfg, &params);
    let mut checks = Vec::new();
    let mut expect = p0;
    for (step, grads) in [g1, g2].into_iter().enumerate() {
        opt.step(&mut params, &[Tensor::new(vec![2], grads.to_vec()).map_err(err)?])
            .map_err(err)?;
        // Moments written out by hand for step t = step + 1.
        let t = step as i32 + 1;
        for i in 0..2 {
            let (m, v) = if t == 1 {
                ((1.0 - b1) * g1[i], (1.0 - b2) * g1[i] * g1[i])
            } else {
                let m1 = (1.0 - b1) * g1[i];
                let v1 = (1.0 - b2) * g1[i] * g1[i];
                (b1 * m1 + (1.0 - b1) * g2[i], b2 * v1 + (1.0 - b2) * g2[i] * g2[i])
            };
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat = v / (1.0 - b2.powi(t));
            expect[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        let diff = params[0]
            .data()
            .iter()
            .zip(expect)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        checks.push(Check::new(
            11,
            format!("step {t}"),
            diff <= 1e-12,
            format!("max |diff| {diff:.1e}"),
        ));
    }
    Ok(checks)
}
