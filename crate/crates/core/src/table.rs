//! Table graph data model: cell boxes, logical locations and validation.
//!
//! Boxes live in memory in center form `(cx, cy, w, h)`; files and detectors
//! speak corner form `(x_min, y_min, width, height)` with a top-left origin and
//! y growing downward.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

/// Axis-aligned box in corner form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerBox {
    pub x_min: f64,
    pub y_min: f64,
    pub width: f64,
    pub height: f64,
}

/// Axis-aligned box in center form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

fn check_extent(w: f64, h: f64, coords: [f64; 2]) -> Result<()> {
    if !(w.is_finite() && h.is_finite() && coords.iter().all(|c| c.is_finite())) {
        return Err(Error::InvalidBox(format!("non-finite coordinate in ({}, {}, {w}, {h})", coords[0], coords[1])));
    }
    if w <= 0.0 || h <= 0.0 {
        return Err(Error::InvalidBox(format!("nonpositive size {w}x{h}")));
    }
    Ok(())
}

impl CornerBox {
    pub fn new(x_min: f64, y_min: f64, width: f64, height: f64) -> Result<Self> {
        check_extent(width, height, [x_min, y_min])?;
        if !(x_min + width).is_finite() || !(y_min + height).is_finite() {
            return Err(Error::InvalidBox("box extent overflows".into()));
        }
        Ok(CornerBox { x_min, y_min, width, height })
    }

    pub fn x_max(&self) -> f64 {
        self.x_min + self.width
    }

    pub fn y_max(&self) -> f64 {
        self.y_min + self.height
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn to_center(&self) -> Result<CenterBox> {
        corner_to_center(*self)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.width, self.height]
    }
}

impl CenterBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        check_extent(w, h, [cx, cy])?;
        Ok(CenterBox { cx, cy, w, h })
    }

    pub fn to_corner(&self) -> Result<CornerBox> {
        center_to_corner(*self)
    }
}

/// `(x_min, y_min, width, height)` to `(cx, cy, w, h)`.
pub fn corner_to_center(b: CornerBox) -> Result<CenterBox> {
    check_extent(b.width, b.height, [b.x_min, b.y_min])?;
    Ok(CenterBox { cx: b.x_min + b.width / 2.0, cy: b.y_min + b.height / 2.0, w: b.width, h: b.height })
}

/// Inverse of [`corner_to_center`].
pub fn center_to_corner(b: CenterBox) -> Result<CornerBox> {
    check_extent(b.w, b.h, [b.cx, b.cy])?;
    Ok(CornerBox { x_min: b.cx - b.w / 2.0, y_min: b.cy - b.h / 2.0, width: b.w, height: b.h })
}

/// Start/end row and column indices of a cell in the logical grid.
///
/// Predictions are not repaired, so a location produced by a model may have
/// `row_start > row_end`; see [`LogicalLocation::is_ordered`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LogicalLocation {
    pub row_start: usize,
    pub row_end: usize,
    pub col_start: usize,
    pub col_end: usize,
}

impl LogicalLocation {
    pub fn new(row_start: usize, row_end: usize, col_start: usize, col_end: usize) -> Self {
        LogicalLocation { row_start, row_end, col_start, col_end }
    }

    /// A unit cell at `(row, col)`.
    pub fn unit(row: usize, col: usize) -> Self {
        Self::new(row, row, col, col)
    }

    pub fn is_ordered(&self) -> bool {
        self.row_start <= self.row_end && self.col_start <= self.col_end
    }

    pub fn row_span(&self) -> usize {
        self.row_end + 1 - self.row_start.min(self.row_end + 1)
    }

    pub fn col_span(&self) -> usize {
        self.col_end + 1 - self.col_start.min(self.col_end + 1)
    }

    /// True when the two logical rectangles share at least one slot.
    pub fn overlaps(&self, other: &LogicalLocation) -> bool {
        self.row_start <= other.row_end
            && other.row_start <= self.row_end
            && self.col_start <= other.col_end
            && other.col_start <= self.col_end
    }

    pub fn to_array(&self) -> [usize; 4] {
        [self.row_start, self.row_end, self.col_start, self.col_end]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellNode {
    pub id: u32,
    pub bbox: CenterBox,
    pub logical: Option<LogicalLocation>,
    pub text: Option<String>,
}

impl CellNode {
    pub fn new(id: u32, bbox: CenterBox) -> Self {
        CellNode { id, bbox, logical: None, text: None }
    }

    pub fn with_logical(mut self, logical: LogicalLocation) -> Self {
        self.logical = Some(logical);
        self
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.text = Some(text.into());
        self
    }

    pub fn corner(&self) -> CornerBox {
        CornerBox {
            x_min: self.bbox.cx - self.bbox.w / 2.0,
            y_min: self.bbox.cy - self.bbox.h / 2.0,
            width: self.bbox.w,
            height: self.bbox.h,
        }
    }
}

/// A table: image size plus its cells.
#[derive(Debug, Clone, PartialEq)]
pub struct TableGraph {
    pub table_id: String,
    pub width: u32,
    pub height: u32,
    pub cells: Vec<CellNode>,
}

impl TableGraph {
    pub fn new(table_id: impl Into<String>, width: u32, height: u32) -> Self {
        TableGraph { table_id: table_id.into(), width, height, cells: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn corner_boxes(&self) -> Vec<CornerBox> {
        self.cells.iter().map(CellNode::corner).collect()
    }

    pub fn has_all_logical(&self) -> bool {
        self.cells.iter().all(|c| c.logical.is_some())
    }

    pub fn cell(&self, id: u32) -> Option<&CellNode> {
        self.cells.iter().find(|c| c.id == id)
    }

    /// Logical locations in cell order, or the id of the first unlabeled cell.
    pub fn logical_locations(&self) -> Result<Vec<LogicalLocation>> {
        self.cells.iter().map(|c| c.logical.ok_or(Error::MissingLabels(c.id))).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ViolationKind {
    DuplicateId,
    OutOfBounds,
    MissingLogical,
    InvertedInterval,
    OverlapConflict { other: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Violation {
    pub cell_id: u32,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ViolationKind::DuplicateId => write!(f, "cell {}: duplicate id", self.cell_id),
            ViolationKind::OutOfBounds => write!(f, "cell {}: box outside the image", self.cell_id),
            ViolationKind::MissingLogical => write!(f, "cell {}: missing logical location", self.cell_id),
            ViolationKind::InvertedInterval => {
                write!(f, "cell {}: start index exceeds end index", self.cell_id)
            }
            ViolationKind::OverlapConflict { other } => {
                write!(f, "cells {} and {}: overlapping logical rectangles", self.cell_id, other)
            }
        }
    }
}

// Slack for sub-pixel float error when checking image bounds.
const BOUNDS_EPS: f64 = 1e-9;

/// Checks the table invariants and returns every violation, ordered by cell id.
pub fn validate_table(t: &TableGraph, require_logical: bool, require_grid_consistent: bool) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen: BTreeMap<u32, usize> = BTreeMap::new();
    for c in &t.cells {
        *seen.entry(c.id).or_default() += 1;
    }
    out.extend(
        seen.iter().filter(|(_, &n)| n > 1).map(|(&id, _)| Violation { cell_id: id, kind: ViolationKind::DuplicateId }),
    );

    let (w, h) = (f64::from(t.width), f64::from(t.height));
    for c in &t.cells {
        let b = c.corner();
        if b.x_min < -BOUNDS_EPS || b.y_min < -BOUNDS_EPS || b.x_max() > w + BOUNDS_EPS || b.y_max() > h + BOUNDS_EPS {
            out.push(Violation { cell_id: c.id, kind: ViolationKind::OutOfBounds });
        }
        match c.logical {
            None if require_logical => out.push(Violation { cell_id: c.id, kind: ViolationKind::MissingLogical }),
            Some(l) if !l.is_ordered() => out.push(Violation { cell_id: c.id, kind: ViolationKind::InvertedInterval }),
            _ => {}
        }
    }

    if require_grid_consistent {
        let labeled: Vec<(u32, LogicalLocation)> =
            t.cells.iter().filter_map(|c| c.logical.map(|l| (c.id, l))).collect();
        for (i, (a, la)) in labeled.iter().enumerate() {
            for (b, lb) in &labeled[i + 1..] {
                if la.overlaps(lb) {
                    let (lo, hi) = if a <= b { (*a, *b) } else { (*b, *a) };
                    out.push(Violation { cell_id: lo, kind: ViolationKind::OverlapConflict { other: hi } });
                }
            }
        }
    }

    out.sort();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_table(rows: usize, cols: usize) -> TableGraph {
        let mut t = TableGraph::new("t", 100, 100);
        let (cw, ch) = (100.0 / cols as f64, 100.0 / rows as f64);
        for r in 0..rows {
            for c in 0..cols {
                let b = CenterBox::new((c as f64 + 0.5) * cw, (r as f64 + 0.5) * ch, cw - 2.0, ch - 2.0).unwrap();
                t.cells.push(CellNode::new((r * cols + c) as u32, b).with_logical(LogicalLocation::unit(r, c)));
            }
        }
        t
    }

    #[test]
    fn corner_center_examples() {
        let c = corner_to_center(CornerBox::new(10.0, 20.0, 30.0, 40.0).unwrap()).unwrap();
        assert_eq!(c, CenterBox { cx: 25.0, cy: 40.0, w: 30.0, h: 40.0 });
        let k = center_to_corner(CenterBox { cx: 25.0, cy: 40.0, w: 30.0, h: 40.0 }).unwrap();
        assert_eq!(k, CornerBox { x_min: 10.0, y_min: 20.0, width: 30.0, height: 40.0 });
    }

    #[test]
    fn degenerate_boxes_rejected() {
        let zero_w = CornerBox { x_min: 0.0, y_min: 0.0, width: 0.0, height: 5.0 };
        assert!(matches!(corner_to_center(zero_w), Err(Error::InvalidBox(_))));
        let neg = CenterBox { cx: 5.0, cy: 5.0, w: -1.0, h: 1.0 };
        assert!(matches!(center_to_corner(neg), Err(Error::InvalidBox(_))));
        assert!(CornerBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn well_formed_table_is_clean() {
        assert!(validate_table(&unit_table(2, 2), true, true).is_empty());
    }

    #[test]
    fn overlap_reported_once() {
        let mut t = unit_table(1, 2);
        t.cells[1].logical = Some(LogicalLocation::unit(0, 0));
        let v = validate_table(&t, true, true);
        assert_eq!(v, vec![Violation { cell_id: 0, kind: ViolationKind::OverlapConflict { other: 1 } }]);
        // Without the grid requirement the same table is fine.
        assert!(validate_table(&t, true, false).is_empty());
    }

    #[test]
    fn out_of_bounds_reported() {
        let mut t = unit_table(2, 2);
        t.cells[3].bbox.cx = 95.0;
        let v = validate_table(&t, false, false);
        assert_eq!(v, vec![Violation { cell_id: 3, kind: ViolationKind::OutOfBounds }]);
    }

    #[test]
    fn missing_and_duplicate() {
        let mut t = unit_table(2, 2);
        t.cells[2].logical = None;
        t.cells[3].id = 1;
        let v = validate_table(&t, true, true);
        assert_eq!(
            v,
            vec![
                Violation { cell_id: 1, kind: ViolationKind::DuplicateId },
                Violation { cell_id: 2, kind: ViolationKind::MissingLogical },
            ]
        );
    }

    #[test]
    fn validation_is_ordered_by_id() {
        let mut t = unit_table(2, 2);
        t.cells.reverse();
        for c in &mut t.cells {
            c.bbox.cx += 200.0;
        }
        let ids: Vec<u32> = validate_table(&t, false, false).iter().map(|v| v.cell_id).collect();
        assert_eq!(ids, vec![0, 1, 2, 3]);
    }

    #[test]
    fn spans() {
        let l = LogicalLocation::new(1, 3, 2, 2);
        assert_eq!((l.row_span(), l.col_span()), (3, 1));
        assert_eq!(LogicalLocation::new(3, 1, 0, 0).row_span(), 0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            // Exact on dyadic coordinates (what the generator emits).
            #[test]
            fn round_trip_exact_on_dyadic_grid(x in 0u32..65536, y in 0u32..65536, w in 1u32..65536, h in 1u32..65536) {
                let b = CornerBox::new(x as f64 / 16.0, y as f64 / 16.0, w as f64 / 16.0, h as f64 / 16.0).unwrap();
                prop_assert_eq!(center_to_corner(corner_to_center(b).unwrap()).unwrap(), b);
            }

            #[test]
            fn round_trip_close_on_reals(x in 0.0f64..5000.0, y in 0.0f64..5000.0, w in 1e-3f64..5000.0, h in 1e-3f64..5000.0) {
                let b = CornerBox::new(x, y, w, h).unwrap();
                let back = center_to_corner(corner_to_center(b).unwrap()).unwrap();
                prop_assert!((back.x_min - x).abs() <= 1e-12 * (x + w).max(1.0));
                prop_assert!((back.y_min - y).abs() <= 1e-12 * (y + h).max(1.0));
                prop_assert_eq!((back.width, back.height), (w, h));
            }
        }
    }
}
