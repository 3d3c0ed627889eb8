//! Region overlap and contour distance measures for LU and MA.
//!
//! - JM is the Jaccard index of region masks, with empty-vs-empty defined as 1.
//! - PAD is the absolute area difference in percent of the ground-truth area.
//! - HD and AD compare point sets obtained by resampling both polygons at
//!   uniform arc length no more than [`RESAMPLE_SPACING`] pixels apart. AD is
//!   the mean of the two directed mean nearest-neighbor distances.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::geometry::{Contour, Point};
use crate::labels::{BinaryMask, LabelMap};
use crate::phantom::Sample;
use crate::segment::{binarize, cleanup, extract_contour, Region};

pub const RESAMPLE_SPACING: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Length of one pixel side, in output units.
    pub pixel_spacing: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Self { pixel_spacing: 1.0 }
    }
}

impl Calibration {
    pub fn new(pixel_spacing: f64) -> Result<Self> {
        if !(pixel_spacing > 0.0 && pixel_spacing.is_finite()) {
            return Err(CoreError::invalid(format!(
                "pixel spacing must be positive, got {pixel_spacing}"
            )));
        }
        Ok(Self { pixel_spacing })
    }
}

fn check_sizes(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(CoreError::invalid(format!(
            "mask sizes differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

pub fn jaccard(pred: &BinaryMask, truth: &BinaryMask) -> Result<f64> {
    check_sizes(pred, truth)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        inter += (p && t) as usize;
        union += (p || t) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Percentage area difference, normalized by the truth area.
pub fn pad(pred: &BinaryMask, truth: &BinaryMask) -> Result<f64> {
    check_sizes(pred, truth)?;
    let t = truth.count();
    if t == 0 {
        return Err(CoreError::NoRegion("PAD needs a non-empty truth mask".into()));
    }
    Ok((pred.count() as f64 - t as f64).abs() / t as f64 * 100.0)
}

/// Uniform arc-length resampling used by the distance metrics.
pub fn resample_for_distance(c: &Contour) -> Result<Vec<Point>> {
    if c.len() < 3 || c.points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(CoreError::DegenerateContour(format!(
            "need at least 3 finite vertices, got {}",
            c.len()
        )));
    }
    if c.perimeter() <= 0.0 {
        return Err(CoreError::DegenerateContour("zero perimeter".into()));
    }
    Ok(c.resample(RESAMPLE_SPACING))
}

/// Uniform-grid bucket index over a point set for nearest-neighbor queries.
struct PointGrid<'a> {
    points: &'a [Point],
    origin: Point,
    cell: f64,
    cols: usize,
    rows: usize,
    buckets: Vec<Vec<usize>>,
}

impl<'a> PointGrid<'a> {
    fn new(points: &'a [Point]) -> Self {
        let (mut lo, mut hi) = (points[0], points[0]);
        for p in points {
            lo = Point::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let extent = (hi.x - lo.x).max(hi.y - lo.y).max(1e-9);
        let per_side = (points.len() as f64).sqrt().ceil().max(1.0);
        let cell = extent / per_side;
        let cols = ((hi.x - lo.x) / cell) as usize + 1;
        let rows = ((hi.y - lo.y) / cell) as usize + 1;
        let mut buckets = vec![Vec::new(); cols * rows];
        for (i, p) in points.iter().enumerate() {
            let (cx, cy) = (((p.x - lo.x) / cell) as usize, ((p.y - lo.y) / cell) as usize);
            buckets[cy.min(rows - 1) * cols + cx.min(cols - 1)].push(i);
        }
        Self {
            points,
            origin: lo,
            cell,
            cols,
            rows,
            buckets,
        }
    }

    /// Exact distance from `q` to the nearest indexed point.
    fn nearest(&self, q: Point) -> f64 {
        let fx = (q.x - self.origin.x) / self.cell;
        let fy = (q.y - self.origin.y) / self.cell;
        let cx = (fx.floor().max(0.0) as usize).min(self.cols - 1) as isize;
        let cy = (fy.floor().max(0.0) as usize).min(self.rows - 1) as isize;
        let mut best = f64::INFINITY;
        let max_ring = self.cols.max(self.rows) as isize;
        for ring in 0..=max_ring {
            // Any point in a cell at Chebyshev ring `ring` from `q`'s clamped
            // cell is at least (ring - 1) cells away from `q`.
            let bound = ((ring - 1).max(0) as f64) * self.cell;
            if best < bound {
                break;
            }
            for y in cy - ring..=cy + ring {
                for x in cx - ring..=cx + ring {
                    if (x - cx).abs() != ring && (y - cy).abs() != ring {
                        continue;
                    }
                    if x < 0 || y < 0 || x as usize >= self.cols || y as usize >= self.rows {
                        continue;
                    }
                    for &i in &self.buckets[y as usize * self.cols + x as usize] {
                        best = best.min(q.dist(self.points[i]));
                    }
                }
            }
        }
        best
    }
}

/// Nearest-neighbor distance from every point of `from` to the set `to`.
pub fn directed_distances(from: &[Point], to: &[Point]) -> Vec<f64> {
    let grid = PointGrid::new(to);
    from.iter().map(|&p| grid.nearest(p)).collect()
}

/// `(HD, AD)` between two contours, in calibrated units.
pub fn contour_distances(a: &Contour, b: &Contour, cal: Calibration) -> Result<(f64, f64)> {
    let pa = resample_for_distance(a)?;
    let pb = resample_for_distance(b)?;
    let ab = directed_distances(&pa, &pb);
    let ba = directed_distances(&pb, &pa);
    let max = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let hd = max(&ab).max(max(&ba));
    let ad = 0.5 * (mean(&ab) + mean(&ba));
    Ok((hd * cal.pixel_spacing, ad * cal.pixel_spacing))
}

pub fn hausdorff(a: &Contour, b: &Contour, cal: Calibration) -> Result<f64> {
    contour_distances(a, b, cal).map(|(hd, _)| hd)
}

pub fn avg_distance(a: &Contour, b: &Contour, cal: Calibration) -> Result<f64> {
    contour_distances(a, b, cal).map(|(_, ad)| ad)
}

pub const METRIC_COLUMNS: [&str; 8] = [
    "lu_jm", "ma_jm", "lu_pad", "ma_pad", "lu_hd", "ma_hd", "lu_ad", "ma_ad",
];

/// Metrics of one sample. Distances are `None` when the predicted boundary
/// could not be extracted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub lu_jm: f64,
    pub ma_jm: f64,
    pub lu_pad: f64,
    pub ma_pad: f64,
    pub lu_hd: Option<f64>,
    pub ma_hd: Option<f64>,
    pub lu_ad: Option<f64>,
    pub ma_ad: Option<f64>,
}

impl MetricsRecord {
    /// Values in [`METRIC_COLUMNS`] order.
    pub fn values(&self) -> [Option<f64>; 8] {
        [
            Some(self.lu_jm),
            Some(self.ma_jm),
            Some(self.lu_pad),
            Some(self.ma_pad),
            self.lu_hd,
            self.ma_hd,
            self.lu_ad,
            self.ma_ad,
        ]
    }
}

pub fn evaluate_sample(pred: &LabelMap, truth: &Sample, cal: Calibration) -> Result<MetricsRecord> {
    let tl = &truth.labels;
    if (pred.width(), pred.height()) != (tl.width(), tl.height()) {
        return Err(CoreError::invalid(format!(
            "prediction is {}x{}, truth is {}x{}",
            pred.width(),
            pred.height(),
            tl.width(),
            tl.height()
        )));
    }
    let region = |region: Region, truth_contour: &Contour| -> Result<(f64, f64, Option<(f64, f64)>)> {
        let p = cleanup(&binarize(pred, region));
        let t = binarize(tl, region);
        let jm = jaccard(&p, &t)?;
        let pd = pad(&p, &t)?;
        let dist = match extract_contour(&p) {
            Ok(c) => Some(contour_distances(&c, truth_contour, cal)?),
            Err(CoreError::NoRegion(_)) => None,
            Err(e) => return Err(e),
        };
        Ok((jm, pd, dist))
    };
    let (lu_jm, lu_pad, lu) = region(Region::Lumen, &truth.lu_contour)?;
    let (ma_jm, ma_pad, ma) = region(Region::LumenPlusPlaque, &truth.ma_contour)?;
    Ok(MetricsRecord {
        lu_jm,
        ma_jm,
        lu_pad,
        ma_pad,
        lu_hd: lu.map(|d| d.0),
        ma_hd: ma.map(|d| d.0),
        lu_ad: lu.map(|d| d.1),
        ma_ad: ma.map(|d| d.1),
    })
}

/// Column-wise mean and sample standard deviation; missing distances are
/// skipped and counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub mean: [Option<f64>; 8],
    pub std: [Option<f64>; 8],
    pub lu_misses: usize,
    pub ma_misses: usize,
}

impl Aggregate {
    pub fn get(&self, column: &str) -> Option<f64> {
        let i = METRIC_COLUMNS.iter().position(|&c| c == column)?;
        self.mean[i]
    }
}

pub fn aggregate(records: &[MetricsRecord]) -> Aggregate {
    let mut mean = [None; 8];
    let mut std = [None; 8];
    for col in 0..8 {
        let vals: Vec<f64> = records.iter().filter_map(|r| r.values()[col]).collect();
        if vals.is_empty() {
            continue;
        }
        let n = vals.len() as f64;
        let m = vals.iter().sum::<f64>() / n;
        mean[col] = Some(m);
        std[col] = Some(if vals.len() < 2 {
            0.0
        } else {
            (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt()
        });
    }
    Aggregate {
        n: records.len(),
        mean,
        std,
        lu_misses: records.iter().filter(|r| r.lu_hd.is_none()).count(),
        ma_misses: records.iter().filter(|r| r.ma_hd.is_none()).count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jaccard_shifted_square() {
        let a = BinaryMask::from_fn(3, 2, |x, _| x < 2);
        let b = BinaryMask::from_fn(3, 2, |x, _| x >= 1);
        assert!((jaccard(&a, &b).unwrap() - 2.0 / 6.0).abs() < 1e-15);
        let e = BinaryMask::empty(3, 2);
        assert_eq!(jaccard(&e, &e).unwrap(), 1.0);
    }

    #[test]
    fn pad_examples() {
        let t = BinaryMask::from_fn(10, 10, |_, _| true);
        let p = BinaryMask::from_fn(10, 10, |_, y| y < 9);
        assert!((pad(&p, &t).unwrap() - 10.0).abs() < 1e-12);
        assert!(pad(&t, &BinaryMask::empty(10, 10)).is_err());
    }

    #[test]
    fn aggregate_counts_misses() {
        let r = MetricsRecord {
            lu_jm: 0.5,
            ma_jm: 1.0,
            lu_pad: 2.0,
            ma_pad: 0.0,
            lu_hd: None,
            ma_hd: Some(1.0),
            lu_ad: None,
            ma_ad: Some(0.5),
        };
        let agg = aggregate(&[r, r]);
        assert_eq!(agg.lu_misses, 2);
        assert_eq!(agg.mean[4], None);
        assert_eq!(agg.std[0], Some(0.0));
        assert_eq!(agg.get("ma_hd"), Some(1.0));
    }
}
