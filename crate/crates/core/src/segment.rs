//! Generator output → class map → cleaned binary regions → LU/MA contours.

use std::collections::VecDeque;

use diffcore::Tensor;

use crate::error::{CoreError, Result};
use crate::geometry::{Contour, Point};
use crate::labels::{BinaryMask, LabelMap, LUMEN, NUM_CLASSES, PLAQUE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Lumen,
    LumenPlusPlaque,
}

/// Per-pixel argmax over a `[3,H,W]` (or `[1,3,H,W]`) image. Ties go to the
/// lower class index.
pub fn predict_labels(output: &Tensor<f32>) -> Result<LabelMap> {
    let (h, w) = match output.shape() {
        &[c, h, w] | &[1, c, h, w] if c == NUM_CLASSES => (h, w),
        other => {
            return Err(CoreError::invalid(format!(
                "predict_labels expects [3,H,W], got {other:?}"
            )))
        }
    };
    let hw = h * w;
    let d = output.data();
    let labels = (0..hw)
        .map(|i| {
            let mut best = 0;
            for c in 1..NUM_CLASSES {
                if d[c * hw + i] > d[best * hw + i] {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    LabelMap::new(w, h, labels)
}

pub fn binarize(labels: &LabelMap, region: Region) -> BinaryMask {
    match region {
        Region::Lumen => labels.mask_where(|c| c == LUMEN),
        Region::LumenPlusPlaque => labels.mask_where(|c| c == LUMEN || c == PLAQUE),
    }
}

const NEIGHBORS4: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

/// 4-connected components of the set pixels: per-pixel component id
/// (`usize::MAX` for unset pixels) and component sizes in scan order.
pub fn components(mask: &BinaryMask) -> (Vec<usize>, Vec<usize>) {
    let (w, h) = (mask.width(), mask.height());
    let mut ids = vec![usize::MAX; w * h];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask.data()[start] || ids[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let mut size = 0;
        ids[start] = id;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            size += 1;
            let (x, y) = ((p % w) as isize, (p / w) as isize);
            for (dx, dy) in NEIGHBORS4 {
                let (nx, ny) = (x + dx, y + dy);
                if mask.get_signed(nx, ny) {
                    let q = ny as usize * w + nx as usize;
                    if ids[q] == usize::MAX {
                        ids[q] = id;
                        queue.push_back(q);
                    }
                }
            }
        }
        sizes.push(size);
    }
    (ids, sizes)
}

/// Unset pixels not 4-connected to the outside of the frame.
pub fn holes(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let mut outside = vec![false; w * h];
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            let on_border = x == 0 || y == 0 || x + 1 == w || y + 1 == h;
            let i = y * w + x;
            if on_border && !mask.data()[i] {
                outside[i] = true;
                queue.push_back(i);
            }
        }
    }
    while let Some(p) = queue.pop_front() {
        let (x, y) = ((p % w) as isize, (p / w) as isize);
        for (dx, dy) in NEIGHBORS4 {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                continue;
            }
            let q = ny as usize * w + nx as usize;
            if !mask.data()[q] && !outside[q] {
                outside[q] = true;
                queue.push_back(q);
            }
        }
    }
    let data = (0..w * h).map(|i| !mask.data()[i] && !outside[i]).collect();
    BinaryMask::new(w, h, data)
}

/// Largest 4-connected component (earliest in scan order on ties) with its
/// holes filled.
pub fn cleanup(mask: &BinaryMask) -> BinaryMask {
    let (ids, sizes) = components(mask);
    let Some(keep) = (0..sizes.len()).max_by_key(|&i| (sizes[i], std::cmp::Reverse(i))) else {
        return BinaryMask::empty(mask.width(), mask.height());
    };
    let kept = BinaryMask::new(
        mask.width(),
        mask.height(),
        ids.iter().map(|&id| id == keep).collect(),
    );
    let filled = holes(&kept);
    let data = kept
        .data()
        .iter()
        .zip(filled.data())
        .map(|(&a, &b)| a || b)
        .collect();
    BinaryMask::new(mask.width(), mask.height(), data)
}

/// Marching-squares isocontour at level 0.5 of the mask indicator, over the
/// mask padded by one unset pixel on every side.
///
/// Crossings sit at the midpoints between a set and an unset pixel center.
/// Saddle cells join the two set corners. A single 4-connected component
/// without holes has no saddle cells and always yields exactly one closed
/// polygon; other masks may fail with `DegenerateContour`. The result is
/// counter-clockwise (positive shoelace area).
pub fn extract_contour(mask: &BinaryMask) -> Result<Contour> {
    if mask.is_empty() {
        return Err(CoreError::NoRegion("mask has no set pixels".into()));
    }
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    // Padded node grid: nodes (i, j) for i in -1..=w, j in -1..=h.
    let (gw, gh) = ((w + 2) as usize, (h + 2) as usize);
    let node = |i: isize, j: isize| mask.get_signed(i, j);
    // Edge keys: horizontal edge from node (i,j) to (i+1,j) and vertical edge
    // from (i,j) to (i,j+1), indexed in padded coordinates.
    let hkey = |i: isize, j: isize| 2 * ((j + 1) as usize * gw + (i + 1) as usize);
    let vkey = |i: isize, j: isize| hkey(i, j) + 1;
    let mut links = vec![[usize::MAX; 2]; 2 * gw * gh];
    let mut link = |a: usize, b: usize| -> Result<()> {
        for (from, to) in [(a, b), (b, a)] {
            let slot = links[from]
                .iter_mut()
                .find(|s| **s == usize::MAX)
                .ok_or_else(|| CoreError::DegenerateContour("crossing with more than two links".into()))?;
            *slot = to;
        }
        Ok(())
    };
    for j in -1..h {
        for i in -1..w {
            let tl = node(i, j);
            let tr = node(i + 1, j);
            let br = node(i + 1, j + 1);
            let bl = node(i, j + 1);
            let top = hkey(i, j);
            let bottom = hkey(i, j + 1);
            let left = vkey(i, j);
            let right = vkey(i + 1, j);
            let mut crossings = Vec::with_capacity(4);
            if tl != tr {
                crossings.push(top);
            }
            if tr != br {
                crossings.push(right);
            }
            if br != bl {
                crossings.push(bottom);
            }
            if bl != tl {
                crossings.push(left);
            }
            match crossings.len() {
                0 => {}
                2 => link(crossings[0], crossings[1])?,
                _ => {
                    // Saddle: cut off each unset corner separately.
                    if tl {
                        link(top, right)?;
                        link(bottom, left)?;
                    } else {
                        link(top, left)?;
                        link(right, bottom)?;
                    }
                }
            }
        }
    }
    let position = |key: usize| {
        let cell = key / 2;
        let (i, j) = ((cell % gw) as f64 - 1.0, (cell / gw) as f64 - 1.0);
        if key.is_multiple_of(2) {
            Point::new(i + 0.5, j)
        } else {
            Point::new(i, j + 0.5)
        }
    };
    let start = links
        .iter()
        .position(|l| l[0] != usize::MAX)
        .expect("non-empty mask has crossings");
    let total = links.iter().filter(|l| l[0] != usize::MAX).count();
    let mut points = vec![position(start)];
    let (mut prev, mut cur) = (start, links[start][0]);
    while cur != start {
        points.push(position(cur));
        let next = if links[cur][0] == prev {
            links[cur][1]
        } else {
            links[cur][0]
        };
        prev = cur;
        cur = next;
        if points.len() > total {
            return Err(CoreError::DegenerateContour("boundary trace did not close".into()));
        }
    }
    if points.len() != total {
        return Err(CoreError::DegenerateContour(format!(
            "mask boundary has several loops ({} of {total} crossings traced)",
            points.len()
        )));
    }
    Ok(Contour::new(points).into_ccw())
}

/// LU and MA contours of a class map.
pub fn lu_ma_boundaries(labels: &LabelMap) -> Result<(Contour, Contour)> {
    let lu = extract_contour(&cleanup(&binarize(labels, Region::Lumen)))
        .map_err(|e| rename_no_region(e, "lumen"))?;
    let ma = extract_contour(&cleanup(&binarize(labels, Region::LumenPlusPlaque)))
        .map_err(|e| rename_no_region(e, "lumen+plaque"))?;
    Ok((lu, ma))
}

fn rename_no_region(e: CoreError, what: &str) -> CoreError {
    match e {
        CoreError::NoRegion(_) => CoreError::NoRegion(format!("no {what} pixels in label map")),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from(rows: &[&str]) -> BinaryMask {
        let h = rows.len();
        let w = rows[0].len();
        BinaryMask::from_fn(w, h, |x, y| rows[y].as_bytes()[x] == b'#')
    }

    #[test]
    fn single_pixel_diamond() {
        let c = extract_contour(&mask_from(&["...", ".#.", "..."])).unwrap();
        assert_eq!(c.len(), 4);
        assert_eq!(c.signed_area(), 0.5);
    }

    #[test]
    fn enclosed_pixel_is_a_hole_until_cleanup() {
        let m = mask_from(&["###", "#.#", "###"]);
        assert!(matches!(extract_contour(&m), Err(CoreError::DegenerateContour(_))));
        let filled = cleanup(&m);
        assert_eq!(filled.count(), 9);
        let c = extract_contour(&filled).unwrap();
        assert!(c.is_simple());
        assert!(c.signed_area() > 0.0);
    }

    #[test]
    fn two_blobs_are_rejected_without_cleanup() {
        let m = mask_from(&["#..#"]);
        assert!(matches!(extract_contour(&m), Err(CoreError::DegenerateContour(_))));
        let c = extract_contour(&cleanup(&m)).unwrap();
        assert_eq!(c.len(), 4);
    }

    #[test]
    fn empty_mask_errors() {
        assert!(matches!(
            extract_contour(&BinaryMask::empty(4, 4)),
            Err(CoreError::NoRegion(_))
        ));
    }
}
