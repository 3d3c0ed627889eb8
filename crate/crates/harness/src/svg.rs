//! Standalone SVG output: per-sample overlays and simple report charts.

use std::fmt::Write;

use ivus_core::geometry::Contour;
use ivus_core::phantom::Sample;

const LU_COLOR: &str = "#e4572e";
const MA_COLOR: &str = "#29a9e0";

fn polygon(out: &mut String, c: &Contour, color: &str, dashed: bool) {
    let pts: Vec<String> = c.points.iter().map(|p| format!("{:.3},{:.3}", p.x, p.y)).collect();
    let dash = if dashed { r#" stroke-dasharray="1.2 0.8""# } else { "" };
    let _ = writeln!(
        out,
        r#"<polygon points="{}" fill="none" stroke="{color}" stroke-width="0.35"{dash}/>"#,
        pts.join(" ")
    );
}

/// Condition image with ground-truth contours (solid) and predicted contours
/// (dashed). Pixel `(x, y)` covers the unit square centered on `(x, y)`.
pub fn overlay(sample: &Sample, predicted: (Option<&Contour>, Option<&Contour>), scale: usize) -> String {
    let n = sample.size();
    let img = sample.condition.data();
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{w}" viewBox="-0.5 -0.5 {n} {n}" shape-rendering="crispEdges">"#,
        w = n * scale
    );
    for y in 0..n {
        for x in 0..n {
            let v = ((img[y * n + x] as f64 + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8;
            let _ = writeln!(
                out,
                r#"<rect x="{}" y="{}" width="1" height="1" fill="rgb({v},{v},{v})"/>"#,
                x as f64 - 0.5,
                y as f64 - 0.5
            );
        }
    }
    let _ = writeln!(out, r#"<g shape-rendering="geometricPrecision">"#);
    polygon(&mut out, &sample.lu_contour, LU_COLOR, false);
    polygon(&mut out, &sample.ma_contour, MA_COLOR, false);
    if let Some(c) = predicted.0 {
        polygon(&mut out, c, LU_COLOR, true);
    }
    if let Some(c) = predicted.1 {
        polygon(&mut out, c, MA_COLOR, true);
    }
    out.push_str("</g>\n</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 80.0;

struct Frame {
    lo: f64,
    hi: f64,
}

impl Frame {
    fn new(values: impl Iterator<Item = f64>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return Self { lo: 0.0, hi: 1.0 };
        }
        let lo = lo.min(0.0);
        let hi = if hi <= lo { lo + 1.0 } else { hi * 1.05 };
        Self { lo, hi }
    }

    fn y(&self, v: f64) -> f64 {
        TOP + (H - TOP - BOTTOM) * (1.0 - (v - self.lo) / (self.hi - self.lo))
    }

    fn axes(&self, out: &mut String, title: &str, y_label: &str) {
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            W / 2.0,
            escape(title)
        );
        let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
        let _ = writeln!(out, r#"<line x1="{x0}" y1="{y1}" x2="{x1}" y2="{y1}" stroke="black"/>"#);
        let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
        for i in 0..=4 {
            let v = self.lo + (self.hi - self.lo) * i as f64 / 4.0;
            let y = self.y(v);
            let _ = writeln!(out, r##"<line x1="{x0}" y1="{y:.1}" x2="{x1}" y2="{y:.1}" stroke="#ddd"/>"##);
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.3}</text>"#,
                x0 - 6.0,
                y + 4.0
            );
        }
        let _ = writeln!(
            out,
            r#"<text transform="translate(16 {}) rotate(-90)" text-anchor="middle">{}</text>"#,
            (y0 + y1) / 2.0,
            escape(y_label)
        );
    }
}

/// One bar per labeled value; missing values leave a gap.
pub fn bar_chart(title: &str, y_label: &str, bars: &[(String, Option<f64>)]) -> String {
    let frame = Frame::new(bars.iter().filter_map(|b| b.1));
    let mut out = String::new();
    frame.axes(&mut out, title, y_label);
    let slot = (W - LEFT - RIGHT) / bars.len().max(1) as f64;
    for (i, (label, value)) in bars.iter().enumerate() {
        let cx = LEFT + slot * (i as f64 + 0.5);
        if let Some(v) = value.filter(|v| v.is_finite()) {
            let (top, base) = (frame.y(v), frame.y(frame.lo));
            let _ = writeln!(
                out,
                r##"<rect x="{:.1}" y="{top:.1}" width="{:.1}" height="{:.1}" fill="#4c72b0"/>"##,
                cx - slot * 0.35,
                slot * 0.7,
                base - top
            );
        }
        let _ = writeln!(
            out,
            r#"<text transform="translate({cx:.1} {}) rotate(30)" text-anchor="start">{}</text>"#,
            H - BOTTOM + 14.0,
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Line through `(x, y)` points on a log2 x axis.
pub fn log2_line_chart(title: &str, y_label: &str, x_label: &str, points: &[(f64, Option<f64>)]) -> String {
    let frame = Frame::new(points.iter().filter_map(|p| p.1));
    let mut out = String::new();
    frame.axes(&mut out, title, y_label);
    let xs: Vec<f64> = points.iter().map(|p| p.0.log2()).collect();
    let (xlo, xhi) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let span = if xhi > xlo { xhi - xlo } else { 1.0 };
    let px = |lx: f64| LEFT + 20.0 + (W - LEFT - RIGHT - 40.0) * (lx - xlo) / span;
    let mut path = Vec::new();
    for (&(x, y), &lx) in points.iter().zip(&xs) {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{x}</text>"#,
            px(lx),
            H - BOTTOM + 16.0
        );
        if let Some(y) = y.filter(|y| y.is_finite()) {
            let (cx, cy) = (px(lx), frame.y(y));
            path.push(format!("{cx:.1},{cy:.1}"));
            let _ = writeln!(out, r##"<circle cx="{cx:.1}" cy="{cy:.1}" r="3" fill="#4c72b0"/>"##);
        }
    }
    if path.len() > 1 {
        let _ = writeln!(
            out,
            r##"<polyline points="{}" fill="none" stroke="#4c72b0" stroke-width="1.5"/>"##,
            path.join(" ")
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        W / 2.0,
        H - BOTTOM + 40.0,
        escape(x_label)
    );
    out.push_str("</svg>\n");
    out
}
