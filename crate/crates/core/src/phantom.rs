//! Synthetic IVUS-like cross-sections with exact ground truth.
//!
//! A phantom is three nested regions around a jittered vessel center: a dark
//! lumen, a bright speckled plaque ring and a medium-gray tissue background.
//! Both boundaries are star-shaped curves `r(θ)` given by short Fourier
//! series, so the ground-truth contours come straight from the radius
//! functions rather than from the rasterized labels.

use std::f64::consts::{PI, TAU};
use std::ops::Range;

use diffcore::{Rng, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::geometry::{Contour, Point};
use crate::labels::{LabelMap, LUMEN, NUM_CLASSES, PLAQUE, TISSUE};
use crate::segment::{binarize, components, holes, Region};

/// Vertices on each analytic ground-truth contour.
pub const CONTOUR_VERTICES: usize = 256;

const LUMEN_HARMONICS: usize = 4;
const THICKNESS_HARMONICS: usize = 3;
/// Bound on `sum |a_k| + |b_k|` of the lumen radius function.
const LUMEN_WOBBLE: f64 = 0.15;
/// Bound on `sum |a_k| + |b_k|` of the plaque thickness function.
const THICKNESS_WOBBLE: f64 = 0.5;

/// Base intensities on a `[0, 1]` scale before mapping to `[-1, 1]`.
const LUMEN_LEVEL: f64 = 0.08;
const PLAQUE_LEVEL: f64 = 0.72;
const TISSUE_LEVEL: f64 = 0.38;
const CALCIUM_LEVEL: f64 = 0.96;

/// Intensity of pure tissue on the `[-1, 1]` scale; also the fill value for
/// pixels that augmentation pulls in from outside the frame.
pub const BACKGROUND_INTENSITY: f32 = (2.0 * TISSUE_LEVEL - 1.0) as f32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    /// Square side in pixels; a power of two.
    pub image_size: usize,
    /// Mean lumen radius range, as fractions of half the image size.
    pub lumen_radius_range: [f64; 2],
    /// Mean plaque thickness range, as fractions of half the image size.
    pub plaque_thickness_range: [f64; 2],
    /// Maximum vessel-center offset from the image center along each axis.
    pub center_jitter: f64,
    pub speckle_contrast: f64,
    pub calcification_probability: f64,
    pub shadow_attenuation: f64,
    /// Radius of the bright catheter ring; 0 disables it.
    pub catheter_ring_radius: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            image_size: 64,
            lumen_radius_range: [0.3, 0.4],
            plaque_thickness_range: [0.12, 0.22],
            center_jitter: 2.0,
            speckle_contrast: 0.5,
            calcification_probability: 0.3,
            shadow_attenuation: 0.6,
            catheter_ring_radius: 3.0,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    /// Noise-free, artifact-free variant of `self`.
    pub fn noise_free(&self) -> Self {
        Self {
            speckle_contrast: 0.0,
            calcification_probability: 0.0,
            ..self.clone()
        }
    }

    pub fn half_size(&self) -> f64 {
        self.image_size as f64 / 2.0
    }

    /// Largest outer-boundary distance from the vessel center the ranges allow.
    pub fn max_vessel_radius(&self) -> f64 {
        self.half_size()
            * (self.lumen_radius_range[1] * (1.0 + LUMEN_WOBBLE)
                + self.plaque_thickness_range[1] * (1.0 + THICKNESS_WOBBLE))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::invalid(format!("phantom spec: {m}")));
        if self.image_size < 8 || !self.image_size.is_power_of_two() {
            return bad(format!(
                "image_size {} must be a power of two >= 8",
                self.image_size
            ));
        }
        for (name, [lo, hi]) in [
            ("lumen_radius_range", self.lumen_radius_range),
            ("plaque_thickness_range", self.plaque_thickness_range),
        ] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return bad(format!("{name} [{lo}, {hi}] must satisfy 0 < lo <= hi"));
            }
        }
        for (name, p) in [
            ("speckle_contrast", self.speckle_contrast),
            ("calcification_probability", self.calcification_probability),
            ("shadow_attenuation", self.shadow_attenuation),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} outside [0, 1]"));
            }
        }
        if !(self.center_jitter >= 0.0) || !(self.catheter_ring_radius >= 0.0) {
            return bad("center_jitter and catheter_ring_radius must be >= 0".into());
        }
        let reach = self.max_vessel_radius() + self.center_jitter * std::f64::consts::SQRT_2;
        if reach >= self.half_size() - 1.0 {
            return bad(format!(
                "vessel may reach {reach:.2} px from the image center, frame allows {:.2}",
                self.half_size() - 1.0
            ));
        }
        Ok(())
    }
}

/// `r(θ) = base * (1 + Σ a_k cos kθ + b_k sin kθ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusFn {
    pub base: f64,
    pub harmonics: Vec<(f64, f64)>,
}

impl RadiusFn {
    fn random(rng: &mut Rng, base: f64, count: usize, wobble: f64) -> Self {
        let mut harmonics: Vec<(f64, f64)> = (1..=count)
            .map(|k| {
                let scale = wobble / k as f64;
                (rng.uniform_in(-scale, scale), rng.uniform_in(-scale, scale))
            })
            .collect();
        let total: f64 = harmonics.iter().map(|(a, b)| a.abs() + b.abs()).sum();
        if total > wobble {
            let s = wobble / total;
            harmonics.iter_mut().for_each(|(a, b)| {
                *a *= s;
                *b *= s;
            });
        }
        Self { base, harmonics }
    }

    pub fn eval(&self, theta: f64) -> f64 {
        let series: f64 = self
            .harmonics
            .iter()
            .enumerate()
            .map(|(i, (a, b))| {
                let k = (i + 1) as f64;
                a * (k * theta).cos() + b * (k * theta).sin()
            })
            .sum();
        self.base * (1.0 + series)
    }
}

/// Analytic vessel shape of one phantom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VesselGeometry {
    pub center: Point,
    pub lumen: RadiusFn,
    pub thickness: RadiusFn,
}

impl VesselGeometry {
    pub fn lumen_radius(&self, theta: f64) -> f64 {
        self.lumen.eval(theta)
    }

    pub fn outer_radius(&self, theta: f64) -> f64 {
        self.lumen.eval(theta) + self.thickness.eval(theta)
    }

    pub fn classify(&self, p: Point) -> u8 {
        let (dx, dy) = (p.x - self.center.x, p.y - self.center.y);
        let rho = (dx * dx + dy * dy).sqrt();
        let theta = dy.atan2(dx);
        let r_lu = self.lumen.eval(theta);
        if rho < r_lu {
            LUMEN
        } else if rho < r_lu + self.thickness.eval(theta) {
            PLAQUE
        } else {
            TISSUE
        }
    }

    fn contour(&self, radius: impl Fn(f64) -> f64) -> Contour {
        let pts = (0..CONTOUR_VERTICES)
            .map(|i| {
                let theta = TAU * i as f64 / CONTOUR_VERTICES as f64;
                let r = radius(theta);
                Point::new(self.center.x + r * theta.cos(), self.center.y + r * theta.sin())
            })
            .collect();
        Contour::new(pts)
    }

    pub fn lu_contour(&self) -> Contour {
        self.contour(|t| self.lumen_radius(t))
    }

    pub fn ma_contour(&self) -> Contour {
        self.contour(|t| self.outer_radius(t))
    }
}

/// One paired training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub index: u64,
    /// Condition image `[1, H, W]` in `[-1, 1]`.
    pub condition: Tensor<f32>,
    /// One-hot target `[3, H, W]` with values in `{-1, +1}`.
    pub target: Tensor<f32>,
    pub labels: LabelMap,
    pub lu_contour: Contour,
    pub ma_contour: Contour,
    /// Vessel center used to render the sample.
    pub center: Point,
}

impl Sample {
    pub fn size(&self) -> usize {
        self.labels.width()
    }

    /// Checks the structural invariants every sample must satisfy: targets
    /// agree with labels, lumen and lumen+plaque are nested single
    /// 4-connected regions without holes, contours are simple polygons.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |m: String| Err(CoreError::invalid(format!("sample {}: {m}", self.index)));
        if self.target != labels_to_target(&self.labels) {
            return fail("target does not encode the label map".into());
        }
        let lumen = binarize(&self.labels, Region::Lumen);
        let vessel = binarize(&self.labels, Region::LumenPlusPlaque);
        if !lumen.is_subset_of(&vessel) {
            return fail("lumen not inside lumen+plaque".into());
        }
        for (name, mask) in [("lumen", &lumen), ("lumen+plaque", &vessel)] {
            let (_, sizes) = components(mask);
            if sizes.len() != 1 {
                return fail(format!("{name} has {} components", sizes.len()));
            }
            if !holes(mask).is_empty() {
                return fail(format!("{name} has holes"));
            }
        }
        for (name, c) in [("lu", &self.lu_contour), ("ma", &self.ma_contour)] {
            if c.len() < 8 || !c.is_simple() {
                return fail(format!("{name} contour is not a simple polygon with >= 8 vertices"));
            }
        }
        Ok(())
    }
}

/// One-hot encoding of a label map mapped to `{-1, +1}`.
pub fn labels_to_target(labels: &LabelMap) -> Tensor<f32> {
    let hw = labels.width() * labels.height();
    let mut data = vec![-1.0f32; NUM_CLASSES * hw];
    for (i, &c) in labels.data().iter().enumerate() {
        data[c as usize * hw + i] = 1.0;
    }
    Tensor::new(vec![NUM_CLASSES, labels.height(), labels.width()], data)
        .expect("label map extents are non-zero")
}

fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

/// Unit-variance, spatially correlated Gaussian field (3x3 box filter).
fn speckle_field(rng: &mut Rng, size: usize) -> Vec<f64> {
    let white: Vec<f64> = (0..size * size).map(|_| rng.normal()).collect();
    let mut out = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let (mut s, mut n) = (0.0, 0usize);
            for yy in y.saturating_sub(1)..(y + 2).min(size) {
                for xx in x.saturating_sub(1)..(x + 2).min(size) {
                    s += white[yy * size + xx];
                    n += 1;
                }
            }
            out[y * size + x] = s / (n as f64).sqrt();
        }
    }
    out
}

struct Calcification {
    angle: f64,
    half_width: f64,
}

/// Render sample `index` of the phantom family described by `spec`.
pub fn generate_phantom(spec: &PhantomSpec, index: u64) -> Result<Sample> {
    spec.validate()?;
    let size = spec.image_size;
    let mut rng = Rng::new(spec.seed).fork_indexed("phantom", index);
    let geometry = draw_geometry(spec, &mut rng);
    let center = geometry.center;
    let calcification = rng
        .bernoulli(spec.calcification_probability)
        .then(|| Calcification {
            angle: rng.uniform_in(-PI, PI),
            half_width: rng.uniform_in(0.25, 0.6),
        });
    let noise = speckle_field(&mut rng.fork("speckle"), size);
    let c = spec.speckle_contrast;

    let mut labels = LabelMap::filled(size, size, TISSUE);
    let mut image = vec![0f32; size * size];
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f64 - center.x, y as f64 - center.y);
            let rho = (dx * dx + dy * dy).sqrt();
            let theta = dy.atan2(dx);
            let r_lu = geometry.lumen_radius(theta);
            let r_ma = r_lu + geometry.thickness.eval(theta);
            let n = noise[y * size + x];
            let class = if rho < r_lu {
                LUMEN
            } else if rho < r_ma {
                PLAQUE
            } else {
                TISSUE
            };
            let (level, gain) = match class {
                LUMEN => (LUMEN_LEVEL, 0.6),
                PLAQUE => (PLAQUE_LEVEL, 1.0),
                _ => (TISSUE_LEVEL, 0.6),
            };
            let mut v = level * (1.0 + gain * c * n).max(0.0);
            if class == LUMEN && spec.catheter_ring_radius > 0.0 {
                let d = rho - spec.catheter_ring_radius;
                v += 0.6 * c * (-d * d / (2.0 * 0.6 * 0.6)).exp();
            }
            if let Some(cal) = &calcification {
                if angular_distance(theta, cal.angle) < cal.half_width {
                    let depth = (0.6 * (r_ma - r_lu)).min(2.5);
                    if class == PLAQUE && rho >= r_ma - depth {
                        v = CALCIUM_LEVEL * (1.0 + 0.1 * c * n);
                    } else if class == TISSUE {
                        v *= 1.0 - spec.shadow_attenuation;
                    }
                }
            }
            labels.set(x, y, class);
            image[y * size + x] = (2.0 * v.clamp(0.0, 1.0) - 1.0) as f32;
        }
    }

    Ok(Sample {
        index,
        condition: Tensor::new(vec![1, size, size], image)?,
        target: labels_to_target(&labels),
        lu_contour: geometry.lu_contour(),
        ma_contour: geometry.ma_contour(),
        labels,
        center,
    })
}

/// Analytic geometry of sample `index`, without rendering.
pub fn phantom_geometry(spec: &PhantomSpec, index: u64) -> Result<VesselGeometry> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed).fork_indexed("phantom", index);
    Ok(draw_geometry(spec, &mut rng))
}

fn draw_geometry(spec: &PhantomSpec, rng: &mut Rng) -> VesselGeometry {
    let half = spec.half_size();
    let mid = (spec.image_size as f64 - 1.0) / 2.0;
    let center = Point::new(
        mid + rng.uniform_in(-spec.center_jitter, spec.center_jitter),
        mid + rng.uniform_in(-spec.center_jitter, spec.center_jitter),
    );
    let [llo, lhi] = spec.lumen_radius_range;
    let [tlo, thi] = spec.plaque_thickness_range;
    let lumen_base = half * rng.uniform_in(llo, lhi);
    let lumen = RadiusFn::random(rng, lumen_base, LUMEN_HARMONICS, LUMEN_WOBBLE);
    let thickness_base = half * rng.uniform_in(tlo, thi);
    let thickness = RadiusFn::random(rng, thickness_base, THICKNESS_HARMONICS, THICKNESS_WOBBLE);
    VesselGeometry {
        center,
        lumen,
        thickness,
    }
}

/// Bilinear intensity at `n_samples` evenly spaced radii in `[0, length]`
/// along the ray from `center` at `angle` (radians). A single sample reads
/// the center itself.
pub fn profile_line(
    image: &Tensor<f32>,
    center: Point,
    angle: f64,
    length: f64,
    n_samples: usize,
) -> Result<Vec<f64>> {
    let (h, w) = match image.shape() {
        &[1, h, w] | &[h, w] => (h, w),
        other => {
            return Err(CoreError::invalid(format!(
                "profile_line expects a [1,H,W] or [H,W] image, got {other:?}"
            )))
        }
    };
    if n_samples == 0 || !(length >= 0.0) {
        return Err(CoreError::invalid("profile_line needs n_samples >= 1 and length >= 0"));
    }
    let (s, c) = angle.sin_cos();
    let data = image.data();
    let at = |x: usize, y: usize| data[y * w + x] as f64;
    (0..n_samples)
        .map(|i| {
            let r = if n_samples == 1 {
                0.0
            } else {
                length * i as f64 / (n_samples - 1) as f64
            };
            let (x, y) = (center.x + r * c, center.y + r * s);
            if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
                return Err(CoreError::invalid(format!(
                    "profile ray leaves the image at radius {r:.3} ({x:.3}, {y:.3})"
                )));
            }
            let x0 = (x.floor() as usize).min(w.saturating_sub(2));
            let y0 = (y.floor() as usize).min(h.saturating_sub(2));
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = (x - x0 as f64, y - y0 as f64);
            let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
            let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
            Ok(top * (1.0 - fy) + bottom * fy)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Range<u64>,
    pub val: Range<u64>,
    pub test: Range<u64>,
}

/// Everything needed to regenerate a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: PhantomSpec,
    pub splits: Splits,
    /// Files written alongside the manifest, relative to its directory.
    #[serde(default)]
    pub files: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub manifest: Manifest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(CoreError::invalid(format!("unknown split `{other}`"))),
        }
    }
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Regenerate the samples a manifest describes.
    pub fn from_manifest(manifest: &Manifest) -> Result<Self> {
        let gen = |r: &Range<u64>| -> Result<Vec<Sample>> {
            r.clone().map(|i| generate_phantom(&manifest.spec, i)).collect()
        };
        Ok(Self {
            train: gen(&manifest.splits.train)?,
            val: gen(&manifest.splits.val)?,
            test: gen(&manifest.splits.test)?,
            manifest: manifest.clone(),
        })
    }
}

/// Train/val/test splits over consecutive, disjoint index ranges.
pub fn make_dataset(spec: &PhantomSpec, n_train: usize, n_val: usize, n_test: usize) -> Result<Dataset> {
    spec.validate()?;
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(CoreError::invalid("every split needs at least one sample"));
    }
    let (a, b, c) = (n_train as u64, n_val as u64, n_test as u64);
    let manifest = Manifest {
        spec: spec.clone(),
        splits: Splits {
            train: 0..a,
            val: a..a + b,
            test: a + b..a + b + c,
        },
        files: Vec::new(),
    };
    Dataset::from_manifest(&manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spec_is_valid() {
        PhantomSpec::default().validate().unwrap();
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let base = PhantomSpec::default();
        let cases = [
            PhantomSpec { image_size: 48, ..base.clone() },
            PhantomSpec { lumen_radius_range: [0.0, 0.2], ..base.clone() },
            PhantomSpec { lumen_radius_range: [0.3, 0.2], ..base.clone() },
            PhantomSpec { speckle_contrast: 1.5, ..base.clone() },
            PhantomSpec { calcification_probability: -0.1, ..base.clone() },
            PhantomSpec { plaque_thickness_range: [0.5, 0.6], ..base.clone() },
        ];
        for spec in cases {
            assert!(generate_phantom(&spec, 0).is_err(), "{spec:?}");
        }
    }

    #[test]
    fn geometry_matches_rendered_sample() {
        let spec = PhantomSpec::default();
        let s = generate_phantom(&spec, 5).unwrap();
        let g = phantom_geometry(&spec, 5).unwrap();
        assert_eq!(s.center, g.center);
        assert_eq!(s.lu_contour, g.lu_contour());
        for y in 0..spec.image_size {
            for x in 0..spec.image_size {
                assert_eq!(s.labels.get(x, y), g.classify(Point::new(x as f64, y as f64)));
            }
        }
    }

    #[test]
    fn target_is_one_hot() {
        let s = generate_phantom(&PhantomSpec::default(), 1).unwrap();
        let hw = 64 * 64;
        for i in 0..hw {
            let col: Vec<f32> = (0..3).map(|c| s.target.data()[c * hw + i]).collect();
            assert_eq!(col.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(col[s.labels.data()[i] as usize], 1.0);
        }
    }

    #[test]
    fn split_parse() {
        assert_eq!("val".parse::<Split>().unwrap(), Split::Val);
        assert!("dev".parse::<Split>().is_err());
    }
}
