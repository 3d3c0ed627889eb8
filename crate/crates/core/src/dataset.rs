//! On-disk dataset layout.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/<split>/<index:05>_image.pgm    condition image, 8-bit
//! <dir>/<split>/<index:05>_labels.pgm   class map, raw values 0/1/2
//! <dir>/<split>/<index:05>_lu.txt       one "x y" vertex per line
//! <dir>/<split>/<index:05>_ma.txt
//! ```
//!
//! Samples are a pure function of the manifest, so loading regenerates them
//! from the recorded spec and index ranges.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CoreError, Result};
use crate::geometry::{Contour, Point};
use crate::phantom::{Dataset, Manifest, Sample, Split};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Binary (P5) PGM with maxval 255.
pub fn pgm_bytes(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn parse_pgm(path: &Path, bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |detail: &str| CoreError::Format {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PGM header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII PGM header"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad PGM header number"));
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit PGM is supported"));
    }
    let data = bytes.get(pos + 1..).ok_or_else(|| bad("missing PGM pixel data"))?;
    if data.len() != w * h {
        return Err(bad(&format!("expected {} pixels, found {}", w * h, data.len())));
    }
    Ok((w, h, data.to_vec()))
}

/// Maps `[-1, 1]` intensities to `0..=255`.
pub fn image_to_u8(values: &[f32]) -> Vec<u8> {
    values
        .iter()
        .map(|&v| (((v.clamp(-1.0, 1.0) + 1.0) * 0.5 * 255.0).round()) as u8)
        .collect()
}

pub fn contour_text(c: &Contour) -> String {
    let mut s = String::new();
    for p in &c.points {
        let _ = writeln!(s, "{:?} {:?}", p.x, p.y);
    }
    s
}

pub fn parse_contour(path: &Path, text: &str) -> Result<Contour> {
    let bad = |line: usize| CoreError::Format {
        path: path.to_path_buf(),
        detail: format!("line {line}: expected two numbers"),
    };
    let points = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let mut it = l.split_whitespace().map(str::parse::<f64>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(x)), Some(Ok(y)), None) => Ok(Point::new(x, y)),
                _ => Err(bad(i + 1)),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Contour::new(points))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CoreError::io(path, e))
}

fn sample_files(split: Split, s: &Sample) -> [(String, Vec<u8>); 4] {
    let n = s.size();
    let stem = format!("{}/{:05}", split.name(), s.index);
    [
        (format!("{stem}_image.pgm"), pgm_bytes(n, n, &image_to_u8(s.condition.data()))),
        (format!("{stem}_labels.pgm"), pgm_bytes(n, n, s.labels.data())),
        (format!("{stem}_lu.txt"), contour_text(&s.lu_contour).into_bytes()),
        (format!("{stem}_ma.txt"), contour_text(&s.ma_contour).into_bytes()),
    ]
}

/// Write every split plus the manifest; returns the manifest as written.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<Manifest> {
    let mut manifest = data.manifest.clone();
    manifest.files.clear();
    for split in Split::ALL {
        let sub = dir.join(split.name());
        fs::create_dir_all(&sub).map_err(|e| CoreError::io(&sub, e))?;
        for s in data.split(split) {
            for (name, bytes) in sample_files(split, s) {
                write_file(&dir.join(&name), &bytes)?;
                manifest.files.push(name);
            }
        }
    }
    let json = serde_json::to_string_pretty(&manifest)?;
    write_file(&dir.join(MANIFEST_FILE), format!("{json}\n").as_bytes())?;
    Ok(manifest)
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_FILE)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = manifest_path(dir);
    let text = fs::read_to_string(&path).map_err(|e| CoreError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| CoreError::Format {
        path,
        detail: e.to_string(),
    })
}

/// Regenerate the dataset recorded in `dir`'s manifest.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    Dataset::from_manifest(&read_manifest(dir)?)
}
