//! Planar points and closed polygons in pixel coordinates.
//!
//! Pixel `(col, row)` has its center at `Point { x: col, y: row }`. A contour
//! is "counter-clockwise" when its shoelace signed area is positive in this
//! frame (which, with rows growing downwards, is clockwise on screen).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        let (dx, dy) = (self.x - other.x, self.y - other.y);
        (dx * dx + dy * dy).sqrt()
    }

    /// Rotation by `angle` radians about `center`.
    pub fn rotate_about(self, center: Point, angle: f64) -> Point {
        let (s, c) = angle.sin_cos();
        let (dx, dy) = (self.x - center.x, self.y - center.y);
        Point::new(center.x + c * dx - s * dy, center.y + s * dx + c * dy)
    }

    /// Exact rotation by `quarter_turns * 90` degrees about `center`.
    pub fn rotate_quarter_about(self, center: Point, quarter_turns: u32) -> Point {
        if quarter_turns.is_multiple_of(4) {
            return self;
        }
        let (dx, dy) = (self.x - center.x, self.y - center.y);
        let (rx, ry) = match quarter_turns % 4 {
            1 => (-dy, dx),
            2 => (-dx, -dy),
            _ => (dy, -dx),
        };
        Point::new(center.x + rx, center.y + ry)
    }

    pub fn scale_about(self, center: Point, factor: f64) -> Point {
        Point::new(
            center.x + factor * (self.x - center.x),
            center.y + factor * (self.y - center.y),
        )
    }
}

/// Closed polygon; the last vertex connects back to the first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub points: Vec<Point>,
}

impl Contour {
    pub fn new(points: Vec<Point>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.points.len();
        (0..n).map(move |i| (self.points[i], self.points[(i + 1) % n]))
    }

    /// Shoelace signed area; positive for counter-clockwise order.
    pub fn signed_area(&self) -> f64 {
        0.5 * self.edges().map(|(a, b)| a.x * b.y - b.x * a.y).sum::<f64>()
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn perimeter(&self) -> f64 {
        self.edges().map(|(a, b)| a.dist(b)).sum()
    }

    /// Same polygon with positive signed area.
    pub fn into_ccw(mut self) -> Self {
        if self.signed_area() < 0.0 {
            self.points.reverse();
        }
        self
    }

    pub fn map(&self, f: impl Fn(Point) -> Point) -> Self {
        Self::new(self.points.iter().map(|&p| f(p)).collect())
    }

    /// Points spaced uniformly by arc length, at most `max_spacing` apart,
    /// starting at the first vertex.
    pub fn resample(&self, max_spacing: f64) -> Vec<Point> {
        let perimeter = self.perimeter();
        if self.points.len() < 2 || perimeter == 0.0 {
            return self.points.clone();
        }
        let n = (perimeter / max_spacing).ceil().max(1.0) as usize;
        let step = perimeter / n as f64;
        let mut out = Vec::with_capacity(n);
        let mut edges = self.edges();
        let (mut a, mut b) = edges.next().expect("at least two vertices");
        let mut edge_len = a.dist(b);
        let mut edge_start = 0.0;
        for i in 0..n {
            let s = i as f64 * step;
            while s > edge_start + edge_len {
                edge_start += edge_len;
                match edges.next() {
                    Some((na, nb)) => {
                        a = na;
                        b = nb;
                        edge_len = a.dist(b);
                    }
                    None => break,
                }
            }
            let t = if edge_len > 0.0 {
                ((s - edge_start) / edge_len).clamp(0.0, 1.0)
            } else {
                0.0
            };
            out.push(Point::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)));
        }
        out
    }

    /// True if no two non-adjacent edges intersect.
    pub fn is_simple(&self) -> bool {
        let n = self.points.len();
        if n < 3 {
            return false;
        }
        let e: Vec<(Point, Point)> = self.edges().collect();
        for i in 0..n {
            for j in i + 1..n {
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                if segments_intersect(e[i].0, e[i].1, e[j].0, e[j].1) {
                    return false;
                }
            }
        }
        true
    }
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |a: Point, b: Point, c: Point| {
        c.x >= a.x.min(b.x) && c.x <= a.x.max(b.x) && c.y >= a.y.min(b.y) && c.y <= a.y.max(b.y)
    };
    (d1 == 0.0 && on(q1, q2, p1))
        || (d2 == 0.0 && on(q1, q2, p2))
        || (d3 == 0.0 && on(p1, p2, q1))
        || (d4 == 0.0 && on(p1, p2, q2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> Contour {
        Contour::new(vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(0.0, 1.0),
        ])
    }

    #[test]
    fn square_area_and_orientation() {
        let sq = unit_square();
        assert_eq!(sq.signed_area(), 1.0);
        assert_eq!(sq.perimeter(), 4.0);
        let mut rev = sq.clone();
        rev.points.reverse();
        assert_eq!(rev.signed_area(), -1.0);
        assert_eq!(rev.into_ccw().signed_area(), 1.0);
        assert!(sq.is_simple());
    }

    #[test]
    fn bowtie_is_not_simple() {
        let bow = Contour::new(vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(1.0, 0.0),
            Point::new(0.0, 1.0),
        ]);
        assert!(!bow.is_simple());
    }

    #[test]
    fn resample_spacing() {
        let pts = unit_square().resample(0.25);
        assert_eq!(pts.len(), 16);
        for w in pts.windows(2) {
            assert!((w[0].dist(w[1]) - 0.25).abs() < 1e-12);
        }
        let pts = unit_square().resample(0.3);
        assert_eq!(pts.len(), 14);
    }

    #[test]
    fn quarter_rotation_is_exact() {
        let c = Point::new(31.5, 31.5);
        let p = Point::new(10.5, 3.0);
        let q = (0..4).fold(p, |acc, _| acc.rotate_quarter_about(c, 1));
        assert_eq!(p, q);
        assert_eq!(p.rotate_quarter_about(c, 1), Point::new(31.5 - (3.0 - 31.5), 31.5 + (10.5 - 31.5)));
    }
}
