//! Adjacency relations between cells and the weighted average F-score over
//! them.

use std::collections::{BTreeSet, HashMap};

use crate::error::Result;
use crate::table::{LogicalLocation, TableGraph};
use crate::transform::{labeled_cells, to_grid};

use super::match_boxes;

/// IoU thresholds at which relation F-scores are computed and weighted.
pub const WAF_THRESHOLDS: [f64; 4] = [0.6, 0.7, 0.8, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    Horizontal,
    Vertical,
}

/// `from` is the left (horizontal) or upper (vertical) cell of the pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AdjacencyRelation {
    pub from: u32,
    pub to: u32,
    pub direction: Direction,
}

/// Nearest non-empty neighbors to the right and below each cell, walked along
/// every grid row/column the cell spans. Left/up relations are the mirrors and
/// are not stored separately.
pub fn adjacency_relations(t: &TableGraph) -> Result<BTreeSet<AdjacencyRelation>> {
    to_grid(t)?;
    let cells = labeled_cells(t)?;
    Ok(walk(&cells))
}

/// Like [`adjacency_relations`] but for predicted tables: unlabeled or
/// inverted cells are skipped and overlapping rectangles are tolerated (every
/// other cell in the first occupied slot counts as a neighbor).
pub fn predicted_relations(t: &TableGraph) -> BTreeSet<AdjacencyRelation> {
    let cells: Vec<(u32, LogicalLocation)> =
        t.cells.iter().filter_map(|c| c.logical.filter(LogicalLocation::is_ordered).map(|l| (c.id, l))).collect();
    walk(&cells)
}

fn walk(cells: &[(u32, LogicalLocation)]) -> BTreeSet<AdjacencyRelation> {
    let rows = cells.iter().map(|(_, l)| l.row_end + 1).max().unwrap_or(0);
    let cols = cells.iter().map(|(_, l)| l.col_end + 1).max().unwrap_or(0);
    let mut slots: Vec<Vec<u32>> = vec![Vec::new(); rows * cols];
    for &(id, l) in cells {
        for r in l.row_start..=l.row_end {
            for c in l.col_start..=l.col_end {
                slots[r * cols + c].push(id);
            }
        }
    }
    let mut out = BTreeSet::new();
    for &(id, l) in cells {
        for r in l.row_start..=l.row_end {
            if let Some(found) =
                (l.col_end + 1..cols).map(|c| &slots[r * cols + c]).find(|s| s.iter().any(|&o| o != id))
            {
                for &o in found.iter().filter(|&&o| o != id) {
                    out.insert(AdjacencyRelation { from: id, to: o, direction: Direction::Horizontal });
                }
            }
        }
        for c in l.col_start..=l.col_end {
            if let Some(found) =
                (l.row_end + 1..rows).map(|r| &slots[r * cols + c]).find(|s| s.iter().any(|&o| o != id))
            {
                for &o in found.iter().filter(|&&o| o != id) {
                    out.insert(AdjacencyRelation { from: id, to: o, direction: Direction::Vertical });
                }
            }
        }
    }
    out
}

/// Relation counts at one IoU threshold.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RelationCounts {
    pub correct: usize,
    pub predicted: usize,
    pub ground_truth: usize,
}

impl RelationCounts {
    pub fn add(&mut self, o: &RelationCounts) {
        self.correct += o.correct;
        self.predicted += o.predicted;
        self.ground_truth += o.ground_truth;
    }

    /// F1 over relations. Two empty relation sets agree perfectly.
    pub fn f1(&self) -> f64 {
        if self.predicted == 0 && self.ground_truth == 0 {
            return 1.0;
        }
        if self.correct == 0 {
            return 0.0;
        }
        let p = self.correct as f64 / self.predicted as f64;
        let r = self.correct as f64 / self.ground_truth as f64;
        2.0 * p * r / (p + r)
    }
}

/// Per-threshold relation counts for one prediction/ground-truth pair.
pub fn relation_counts(pred: &TableGraph, gt: &TableGraph) -> Result<[RelationCounts; 4]> {
    let gt_rel = adjacency_relations(gt)?;
    let pred_rel = predicted_relations(pred);
    let pred_boxes = pred.corner_boxes();
    let gt_boxes = gt.corner_boxes();
    let mut out = [RelationCounts::default(); 4];
    for (slot, &thr) in out.iter_mut().zip(WAF_THRESHOLDS.iter()) {
        let matching = match_boxes(&pred_boxes, &gt_boxes, thr);
        let to_gt: HashMap<u32, u32> =
            matching.pairs.iter().map(|p| (pred.cells[p.det].id, gt.cells[p.gt].id)).collect();
        let correct = pred_rel
            .iter()
            .filter(|r| match (to_gt.get(&r.from), to_gt.get(&r.to)) {
                (Some(&a), Some(&b)) => gt_rel.contains(&AdjacencyRelation { from: a, to: b, direction: r.direction }),
                _ => false,
            })
            .count();
        *slot = RelationCounts { correct, predicted: pred_rel.len(), ground_truth: gt_rel.len() };
    }
    Ok(out)
}

/// `sum(iou_i * F@iou_i) / sum(iou_i)` over `(iou, F)` pairs.
pub fn weighted_f(scores: &[(f64, f64)]) -> f64 {
    let num: f64 = scores.iter().map(|(w, f)| w * f).sum();
    let den: f64 = scores.iter().map(|(w, _)| w).sum();
    num / den
}

pub fn waf_from_counts(counts: &[RelationCounts; 4]) -> f64 {
    let scores: Vec<(f64, f64)> = WAF_THRESHOLDS.iter().zip(counts).map(|(&w, c)| (w, c.f1())).collect();
    weighted_f(&scores)
}

/// Weighted average relation F-score over IoU thresholds 0.6, 0.7, 0.8, 0.9.
pub fn waf(pred: &TableGraph, gt: &TableGraph) -> Result<f64> {
    Ok(waf_from_counts(&relation_counts(pred, gt)?))
}
