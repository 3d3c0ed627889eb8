//! Rotation and scaling of samples about the image center.
//!
//! Intensities are resampled bilinearly, labels by nearest neighbor, and the
//! ground-truth contours are transformed analytically. Pixels pulled in from
//! outside the frame become tissue at background intensity. Rotations by
//! multiples of 90 degrees use exact source coordinates, so they permute
//! pixels without interpolation.

use diffcore::{Rng, Tensor};

use crate::error::{CoreError, Result};
use crate::geometry::Point;
use crate::labels::{LabelMap, TISSUE};
use crate::phantom::{labels_to_target, Sample, BACKGROUND_INTENSITY};

pub const MIN_SCALE: f64 = 0.5;
pub const MAX_SCALE: f64 = 1.5;

fn image_center(sample: &Sample) -> Point {
    let (w, h) = (sample.labels.width(), sample.labels.height());
    Point::new((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0)
}

/// Resample `sample` through `source(p)`, the pre-image of output pixel `p`,
/// and map contours and center with `forward`.
fn warp(sample: &Sample, source: impl Fn(Point) -> Point, forward: impl Fn(Point) -> Point) -> Sample {
    let (w, h) = (sample.labels.width(), sample.labels.height());
    let img = sample.condition.data();
    let pixel = |x: isize, y: isize| -> f32 {
        if x < 0 || y < 0 || x as usize >= w || y as usize >= h {
            BACKGROUND_INTENSITY
        } else {
            img[y as usize * w + x as usize]
        }
    };
    let mut image = vec![0f32; w * h];
    let mut labels = LabelMap::filled(w, h, TISSUE);
    for y in 0..h {
        for x in 0..w {
            let s = source(Point::new(x as f64, y as f64));
            let (x0, y0) = (s.x.floor(), s.y.floor());
            let (fx, fy) = ((s.x - x0) as f32, (s.y - y0) as f32);
            let (x0, y0) = (x0 as isize, y0 as isize);
            image[y * w + x] = if fx == 0.0 && fy == 0.0 {
                pixel(x0, y0)
            } else {
                let top = pixel(x0, y0) * (1.0 - fx) + pixel(x0 + 1, y0) * fx;
                let bottom = pixel(x0, y0 + 1) * (1.0 - fx) + pixel(x0 + 1, y0 + 1) * fx;
                top * (1.0 - fy) + bottom * fy
            };
            let (nx, ny) = (s.x.round(), s.y.round());
            if nx >= 0.0 && ny >= 0.0 && (nx as usize) < w && (ny as usize) < h {
                labels.set(x, y, sample.labels.get(nx as usize, ny as usize));
            }
        }
    }
    Sample {
        index: sample.index,
        condition: Tensor::new(vec![1, h, w], image).expect("same extents as the input"),
        target: labels_to_target(&labels),
        labels,
        lu_contour: sample.lu_contour.map(&forward),
        ma_contour: sample.ma_contour.map(&forward),
        center: forward(sample.center),
    }
}

/// Rotate by `angle_degrees` about the image center. Angles are taken modulo
/// 360.
pub fn rotate_sample(sample: &Sample, angle_degrees: f64) -> Sample {
    assert!(angle_degrees.is_finite(), "rotation angle must be finite");
    let angle = angle_degrees.rem_euclid(360.0);
    let c = image_center(sample);
    let quarters = angle / 90.0;
    if quarters.fract() == 0.0 && sample.labels.width() == sample.labels.height() {
        let k = quarters as u32;
        return warp(
            sample,
            |p| p.rotate_quarter_about(c, (4 - k) % 4),
            |p| p.rotate_quarter_about(c, k),
        );
    }
    let theta = angle.to_radians();
    warp(sample, |p| p.rotate_about(c, -theta), |p| p.rotate_about(c, theta))
}

/// Zoom by `factor` about the image center, keeping the image size.
pub fn scale_sample(sample: &Sample, factor: f64) -> Result<Sample> {
    if !(MIN_SCALE..=MAX_SCALE).contains(&factor) {
        return Err(CoreError::invalid(format!(
            "scale factor {factor} outside [{MIN_SCALE}, {MAX_SCALE}]"
        )));
    }
    if factor == 1.0 {
        return Ok(sample.clone());
    }
    let c = image_center(sample);
    let (w, h) = (sample.labels.width() as f64, sample.labels.height() as f64);
    let inside = |p: &Point| p.x >= 0.0 && p.y >= 0.0 && p.x <= w - 1.0 && p.y <= h - 1.0;
    let scaled_ma = sample.ma_contour.map(|p| p.scale_about(c, factor));
    if !scaled_ma.points.iter().all(inside) {
        return Err(CoreError::invalid(format!(
            "scaling sample {} by {factor} pushes the vessel out of the frame",
            sample.index
        )));
    }
    Ok(warp(
        sample,
        |p| p.scale_about(c, 1.0 / factor),
        |p| p.scale_about(c, factor),
    ))
}

/// Each input sample followed by `n_rotations` random rotations and one
/// scaled copy per factor. Angles come from `seed` and the sample index.
pub fn augment_dataset(
    samples: &[Sample],
    n_rotations: usize,
    scale_factors: &[f64],
    seed: u64,
) -> Result<Vec<Sample>> {
    let root = Rng::new(seed);
    let mut out = Vec::with_capacity(samples.len() * (1 + n_rotations + scale_factors.len()));
    for s in samples {
        out.push(s.clone());
        let mut rng = root.fork_indexed("rotation", s.index);
        for _ in 0..n_rotations {
            out.push(rotate_sample(s, rng.uniform_in(0.0, 360.0)));
        }
        for &f in scale_factors {
            out.push(scale_sample(s, f)?);
        }
    }
    Ok(out)
}
