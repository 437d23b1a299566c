//! Evaluation: box IoU and matching, detection precision/recall/Hmean,
//! logical-index accuracies, the combined F-beta score and the
//! relation-based WAF.
//!
//! Dataset-level numbers pool counts across tables before taking ratios.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::{CornerBox, TableGraph};

pub mod relations;

pub use relations::{
    adjacency_relations, predicted_relations, waf, weighted_f, AdjacencyRelation, Direction, RelationCounts,
    WAF_THRESHOLDS,
};

/// IoU used for detection and logical-location scoring.
pub const DETECTION_IOU: f64 = 0.5;
pub const F_BETA: f64 = 0.5;

pub fn iou(a: &CornerBox, b: &CornerBox) -> f64 {
    let iw = (a.x_max().min(b.x_max()) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max().min(b.y_max()) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    // areas from the same extents as the intersection, so iou(a, a) == 1
    let area = |c: &CornerBox| (c.x_max() - c.x_min) * (c.y_max() - c.y_min);
    let union = area(a) + area(b) - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchPair {
    pub det: usize,
    pub gt: usize,
    pub iou: f64,
}

/// One-to-one pairs between detections and ground truth, by index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Matching {
    pub pairs: Vec<MatchPair>,
}

impl Matching {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `gt index -> det index`.
    pub fn det_for_gt(&self, n_gt: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n_gt];
        for p in &self.pairs {
            out[p.gt] = Some(p.det);
        }
        out
    }
}

/// Greedy matching by descending IoU, keeping pairs with IoU >= threshold.
/// Ties go to the smaller `(det, gt)` index pair.
pub fn match_boxes(dets: &[CornerBox], gts: &[CornerBox], threshold: f64) -> Matching {
    let mut cands = Vec::new();
    for (d, db) in dets.iter().enumerate() {
        for (g, gb) in gts.iter().enumerate() {
            let v = iou(db, gb);
            if v >= threshold && v > 0.0 {
                cands.push(MatchPair { det: d, gt: g, iou: v });
            }
        }
    }
    cands.sort_by(|a, b| b.iou.total_cmp(&a.iou).then((a.det, a.gt).cmp(&(b.det, b.gt))));
    let mut used_d = vec![false; dets.len()];
    let mut used_g = vec![false; gts.len()];
    let mut pairs = Vec::new();
    for c in cands {
        if !used_d[c.det] && !used_g[c.gt] {
            used_d[c.det] = true;
            used_g[c.gt] = true;
            pairs.push(c);
        }
    }
    Matching { pairs }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Precision, recall and Hmean of detected boxes.
pub fn detection_prh(dets: &[CornerBox], gts: &[CornerBox], threshold: f64) -> (f64, f64, f64) {
    let tp = match_boxes(dets, gts, threshold).len();
    let (p, r) = (ratio(tp, dets.len()), ratio(tp, gts.len()));
    (p, r, harmonic(p, r))
}

/// Accuracy of start-row, end-row, start-col, end-col and all four together.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogicalAccuracy {
    pub row_start: f64,
    pub row_end: f64,
    pub col_start: f64,
    pub col_end: f64,
    pub all: f64,
}

/// Raw counts behind every reported metric, summable across tables.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalCounts {
    pub tables: usize,
    pub detections: usize,
    pub ground_truth: usize,
    pub true_positives: usize,
    /// Correct start-row, end-row, start-col, end-col, all-four.
    pub correct: [usize; 5],
    pub relations: [RelationCounts; 4],
}

impl EvalCounts {
    pub fn add(&mut self, o: &EvalCounts) {
        self.tables += o.tables;
        self.detections += o.detections;
        self.ground_truth += o.ground_truth;
        self.true_positives += o.true_positives;
        for (a, b) in self.correct.iter_mut().zip(o.correct) {
            *a += b;
        }
        for (a, b) in self.relations.iter_mut().zip(&o.relations) {
            a.add(b);
        }
    }

    pub fn logical_accuracy(&self) -> LogicalAccuracy {
        let a = |i: usize| ratio(self.correct[i], self.ground_truth);
        LogicalAccuracy { row_start: a(0), row_end: a(1), col_start: a(2), col_end: a(3), all: a(4) }
    }

    pub fn report(&self) -> EvalReport {
        let precision = ratio(self.true_positives, self.detections);
        let recall = ratio(self.true_positives, self.ground_truth);
        let hmean = harmonic(precision, recall);
        let acc = self.logical_accuracy();
        EvalReport {
            format: REPORT_FORMAT.to_string(),
            tables: self.tables,
            precision,
            recall,
            hmean,
            a_row_start: acc.row_start,
            a_row_end: acc.row_end,
            a_col_start: acc.col_start,
            a_col_end: acc.col_end,
            a_all: acc.all,
            f_beta: f_beta(hmean, acc.all),
            waf: relations::waf_from_counts(&self.relations),
        }
    }
}

fn logical_counts(pred: &TableGraph, gt: &TableGraph, threshold: f64) -> Result<(usize, [usize; 5])> {
    let gt_locs = gt.logical_locations()?;
    let matching = match_boxes(&pred.corner_boxes(), &gt.corner_boxes(), threshold);
    let mut correct = [0usize; 5];
    for p in &matching.pairs {
        let Some(l) = pred.cells[p.det].logical else { continue };
        let g = gt_locs[p.gt];
        let hits =
            [l.row_start == g.row_start, l.row_end == g.row_end, l.col_start == g.col_start, l.col_end == g.col_end];
        for (c, h) in correct.iter_mut().zip(hits) {
            *c += usize::from(h);
        }
        correct[4] += usize::from(hits.iter().all(|&h| h));
    }
    Ok((matching.len(), correct))
}

/// Logical-index accuracies over all ground-truth cells; unmatched ground
/// truth counts as wrong.
pub fn logical_accuracy(pred: &TableGraph, gt: &TableGraph, threshold: f64) -> Result<LogicalAccuracy> {
    let (_, correct) = logical_counts(pred, gt, threshold)?;
    let n = gt.cells.len();
    let a = |i: usize| ratio(correct[i], n);
    Ok(LogicalAccuracy { row_start: a(0), row_end: a(1), col_start: a(2), col_end: a(3), all: a(4) })
}

/// `(1 + beta^2) H A / (beta^2 H + A)` with beta = 0.5.
pub fn f_beta(hmean: f64, a_all: f64) -> f64 {
    let b2 = F_BETA * F_BETA;
    let den = b2 * hmean + a_all;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + b2) * hmean * a_all / den
    }
}

/// Counts for one prediction against its ground truth.
pub fn table_counts(pred: &TableGraph, gt: &TableGraph) -> Result<EvalCounts> {
    let (tp, correct) = logical_counts(pred, gt, DETECTION_IOU)?;
    Ok(EvalCounts {
        tables: 1,
        detections: pred.cells.len(),
        ground_truth: gt.cells.len(),
        true_positives: tp,
        correct,
        relations: relations::relation_counts(pred, gt)?,
    })
}

pub const REPORT_FORMAT: &str = "tgraph-report/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub tables: usize,
    pub precision: f64,
    pub recall: f64,
    pub hmean: f64,
    pub a_row_start: f64,
    pub a_row_end: f64,
    pub a_col_start: f64,
    pub a_col_end: f64,
    pub a_all: f64,
    pub f_beta: f64,
    pub waf: f64,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization is infallible")
    }
}

pub fn full_report(pred: &TableGraph, gt: &TableGraph) -> Result<EvalReport> {
    Ok(table_counts(pred, gt)?.report())
}

/// Micro-averaged report over `(prediction, ground truth)` pairs.
pub fn evaluate_dataset<'a, I>(pairs: I) -> Result<EvalReport>
where
    I: IntoIterator<Item = (&'a TableGraph, &'a TableGraph)>,
{
    let mut total = EvalCounts::default();
    for (pred, gt) in pairs {
        let c = table_counts(pred, gt).map_err(|e| match e {
            Error::MissingLabels(id) => {
                Error::Config(format!("table {}: ground-truth cell {id} is unlabeled", gt.table_id))
            }
            other => other,
        })?;
        total.add(&c);
    }
    Ok(total.report())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{CellNode, LogicalLocation};

    fn cb(x: f64, y: f64, w: f64, h: f64) -> CornerBox {
        CornerBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = cb(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &cb(5.0, 5.0, 1.0, 1.0)), 0.0);
        assert_eq!(iou(&a, &cb(2.0, 0.0, 2.0, 2.0)), 0.0);
        assert!((iou(&a, &cb(1.0, 0.0, 2.0, 2.0)) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn prh_examples() {
        let gts = vec![
            cb(0.0, 0.0, 10.0, 10.0),
            cb(20.0, 0.0, 10.0, 10.0),
            cb(40.0, 0.0, 10.0, 10.0),
            cb(60.0, 0.0, 10.0, 10.0),
        ];
        assert_eq!(detection_prh(&gts, &gts, 0.5), (1.0, 1.0, 1.0));
        let dets = vec![cb(0.0, 0.0, 10.0, 10.0), cb(100.0, 100.0, 5.0, 5.0)];
        let (p, r, h) = detection_prh(&dets, &gts, 0.5);
        assert_eq!((p, r), (0.5, 0.25));
        assert!((h - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(detection_prh(&[], &gts, 0.5), (0.0, 0.0, 0.0));
    }

    #[test]
    fn matching_threshold_and_ties() {
        let gts = vec![cb(0.0, 0.0, 10.0, 10.0)];
        let dets = vec![cb(5.0, 0.0, 10.0, 10.0), cb(0.0, 0.0, 10.0, 10.0)];
        assert!(match_boxes(&dets[..1], &gts, 0.5).is_empty());
        let m = match_boxes(&dets, &gts, 0.3);
        assert_eq!((m.pairs[0].det, m.pairs[0].gt), (1, 0));
        // identical detections: the lower index wins the tie
        let dup = vec![gts[0], gts[0]];
        assert_eq!(match_boxes(&dup, &gts, 0.5).pairs[0].det, 0);
    }

    fn two_cells() -> TableGraph {
        let mut t = TableGraph::new("t", 100, 100);
        t.cells.push(
            CellNode::new(0, cb(0.0, 0.0, 40.0, 40.0).to_center().unwrap()).with_logical(LogicalLocation::unit(0, 0)),
        );
        t.cells.push(
            CellNode::new(1, cb(50.0, 0.0, 40.0, 40.0).to_center().unwrap()).with_logical(LogicalLocation::unit(0, 1)),
        );
        t
    }

    #[test]
    fn logical_accuracy_examples() {
        let gt = two_cells();
        let perfect = logical_accuracy(&gt, &gt, 0.5).unwrap();
        assert_eq!(perfect, LogicalAccuracy { row_start: 1.0, row_end: 1.0, col_start: 1.0, col_end: 1.0, all: 1.0 });

        let mut pred = gt.clone();
        pred.cells.remove(0);
        pred.cells[0].logical = Some(LogicalLocation::new(1, 0, 1, 1));
        let a = logical_accuracy(&pred, &gt, 0.5).unwrap();
        assert_eq!(a, LogicalAccuracy { row_start: 0.0, row_end: 0.5, col_start: 0.5, col_end: 0.5, all: 0.0 });

        // both matched, one start-row wrong
        let mut pred = gt.clone();
        pred.cells[1].logical = Some(LogicalLocation::new(1, 0, 1, 1));
        let a = logical_accuracy(&pred, &gt, 0.5).unwrap();
        assert_eq!(a, LogicalAccuracy { row_start: 0.5, row_end: 1.0, col_start: 1.0, col_end: 1.0, all: 0.5 });

        let empty = TableGraph::new("t", 100, 100);
        let z = logical_accuracy(&empty, &gt, 0.5).unwrap();
        assert_eq!(z, LogicalAccuracy { row_start: 0.0, row_end: 0.0, col_start: 0.0, col_end: 0.0, all: 0.0 });

        let mut unlabeled = gt.clone();
        unlabeled.cells[1].logical = None;
        assert!(matches!(logical_accuracy(&gt, &unlabeled, 0.5), Err(Error::MissingLabels(1))));
    }

    #[test]
    fn f_beta_table_values() {
        assert!((f_beta(0.667, 0.275) - 0.519).abs() <= 0.0005);
        assert!((f_beta(0.906, 0.832) - 0.890).abs() <= 0.0005);
        for x in [0.0, 0.1, 0.5, 0.93, 1.0] {
            assert!((f_beta(x, x) - x).abs() < 1e-15);
        }
    }

    #[test]
    fn self_report_is_perfect() {
        let gt = two_cells();
        let r = full_report(&gt, &gt).unwrap();
        for v in [
            r.precision,
            r.recall,
            r.hmean,
            r.a_row_start,
            r.a_row_end,
            r.a_col_start,
            r.a_col_end,
            r.a_all,
            r.f_beta,
            r.waf,
        ] {
            assert_eq!(v, 1.0);
        }
        let pooled = evaluate_dataset([(&gt, &gt), (&gt, &gt)]).unwrap();
        assert_eq!(pooled.tables, 2);
        assert_eq!(EvalReport { tables: 1, ..pooled }, r);
    }

    #[test]
    fn report_json_field_order() {
        let gt = two_cells();
        let json = full_report(&gt, &gt).unwrap().to_json();
        let keys: Vec<&str> =
            json.lines().filter_map(|l| l.trim().strip_prefix('"')).map(|l| l.split('"').next().unwrap()).collect();
        assert_eq!(
            keys,
            [
                "format",
                "tables",
                "precision",
                "recall",
                "hmean",
                "a_row_start",
                "a_row_end",
                "a_col_start",
                "a_col_end",
                "a_all",
                "f_beta",
                "waf"
            ]
        );
    }
}
