//! Cell boxes from a segmentation map: optional 3x3 opening, 4-connected
//! components of the cell class and their tight bounding boxes.

use std::collections::VecDeque;

use crate::segmap::{SegMap, BACKGROUND, CELL};
use crate::table::CornerBox;

pub const DEFAULT_MIN_AREA: usize = 4;

/// A 4-connected set of pixels, as `(row, col)` in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub label: u32,
    pub pixels: Vec<(usize, usize)>,
}

impl Component {
    /// `(min_row, min_col, max_row, max_col)`.
    pub fn extent(&self) -> (usize, usize, usize, usize) {
        self.pixels.iter().fold((usize::MAX, usize::MAX, 0, 0), |(r0, c0, r1, c1), &(r, c)| {
            (r0.min(r), c0.min(c), r1.max(r), c1.max(c))
        })
    }

    pub fn area(&self) -> usize {
        self.pixels.len()
    }
}

fn indicator(m: &SegMap, class_id: u8) -> Vec<bool> {
    m.labels().iter().map(|&l| l == class_id).collect()
}

// 3x3 all-ones structuring element; pixels outside the map are not in the set.
fn erode(mask: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for r in 1..h.saturating_sub(1) {
        for c in 1..w.saturating_sub(1) {
            out[r * w + c] = (r - 1..=r + 1).all(|rr| (c - 1..=c + 1).all(|cc| mask[rr * w + cc]));
        }
    }
    out
}

fn dilate(mask: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for r in 0..h {
        for c in 0..w {
            if mask[r * w + c] {
                for rr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
                    for cc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                        out[rr * w + cc] = true;
                    }
                }
            }
        }
    }
    out
}

/// Binary opening of one class with a 3x3 square. Removed pixels become
/// background; other classes are left as they were.
pub fn morph_open(m: &SegMap, class_id: u8) -> SegMap {
    let (w, h) = (m.width, m.height);
    let mask = indicator(m, class_id);
    let opened = dilate(&erode(&mask, w, h), w, h);
    let mut out = m.clone();
    for r in 0..h {
        for c in 0..w {
            if mask[r * w + c] && !opened[r * w + c] {
                out.set(r, c, BACKGROUND);
            }
        }
    }
    out
}

/// 4-connected components of `class_id`, ordered by the top-left corner
/// `(min row, min col)` of their bounding boxes. Labels count from 1.
pub fn connected_components(m: &SegMap, class_id: u8) -> Vec<Component> {
    let (w, h) = (m.width, m.height);
    let mask = indicator(m, class_id);
    let mut seen = vec![false; mask.len()];
    let mut comps = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut pixels = Vec::new();
        while let Some(p) = queue.pop_front() {
            let (r, c) = (p / w, p % w);
            pixels.push((r, c));
            let mut visit = |q: usize| {
                if mask[q] && !seen[q] {
                    seen[q] = true;
                    queue.push_back(q);
                }
            };
            if r > 0 {
                visit(p - w);
            }
            if r + 1 < h {
                visit(p + w);
            }
            if c > 0 {
                visit(p - 1);
            }
            if c + 1 < w {
                visit(p + 1);
            }
        }
        pixels.sort_unstable();
        comps.push(Component { label: 0, pixels });
    }
    comps.sort_by_key(|c| {
        let (r0, c0, _, _) = c.extent();
        (r0, c0)
    });
    for (i, c) in comps.iter_mut().enumerate() {
        c.label = i as u32 + 1;
    }
    comps
}

/// Tight axis-aligned pixel box per component, dropping components with
/// fewer than `min_area` pixels.
pub fn min_bounding_boxes(comps: &[Component], min_area: usize) -> Vec<CornerBox> {
    comps
        .iter()
        .filter(|c| !c.pixels.is_empty() && c.area() >= min_area)
        .map(|c| {
            let (r0, c0, r1, c1) = c.extent();
            CornerBox { x_min: c0 as f64, y_min: r0 as f64, width: (c1 - c0 + 1) as f64, height: (r1 - r0 + 1) as f64 }
        })
        .collect()
}

/// Segmentation map to cell boxes.
pub fn detect_cells(m: &SegMap, open_first: bool, min_area: usize) -> Vec<CornerBox> {
    let comps =
        if open_first { connected_components(&morph_open(m, CELL), CELL) } else { connected_components(m, CELL) };
    min_bounding_boxes(&comps, min_area)
}
