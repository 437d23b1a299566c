//! Learning-ready graphs built from a [`TableGraph`]: geometric node features,
//! distance-weighted row/column adjacency, pruning, GCN normalization,
//! training-node selection and node ablation.

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::iou;
use crate::segmap::SegMap;
use crate::table::{CellNode, CornerBox, TableGraph};

/// Row-major `N x d` node feature matrix.
pub type NodeFeatures = Array2<f64>;

pub const DEFAULT_ALPHA: f64 = 3.0;
pub const HISTORICAL_ALPHA: f64 = 10.0;
pub const HISTORICAL_PRUNE_K: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub include_log_size: bool,
    /// Side of the mean-intensity grid sampled from an image inside each box.
    pub patch_grid: Option<usize>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { include_log_size: true, patch_grid: None }
    }
}

impl FeatureConfig {
    pub fn dim(&self) -> usize {
        4 + if self.include_log_size { 2 } else { 0 } + self.patch_grid.map_or(0, |g| g * g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_grid == Some(0) {
            return Err(Error::Config("patch_grid must be at least 1".into()));
        }
        Ok(())
    }
}

/// Grayscale raster with intensities in `[0, 1]`, used for patch features.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Raster {
    /// Maps class ids 0/1/2 to intensities 0/0.5/1.
    pub fn from_segmap(m: &SegMap) -> Self {
        Raster { width: m.width, height: m.height, data: m.labels().iter().map(|&l| f64::from(l) / 2.0).collect() }
    }

    fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row.min(self.height - 1) * self.width + col.min(self.width - 1)]
    }

    /// Mean over pixels whose centers fall inside the rectangle; falls back to
    /// the pixel under the rectangle center when none does.
    fn mean_in(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> f64 {
        let c0 = (x0 - 0.5).ceil().max(0.0) as usize;
        let r0 = (y0 - 0.5).ceil().max(0.0) as usize;
        let c1 = ((x1 - 0.5).floor() as isize).min(self.width as isize - 1);
        let r1 = ((y1 - 0.5).floor() as isize).min(self.height as isize - 1);
        if c1 < c0 as isize || r1 < r0 as isize {
            let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
            return self.at(cy.max(0.0) as usize, cx.max(0.0) as usize);
        }
        let (mut sum, mut n) = (0.0, 0usize);
        for r in r0..=r1 as usize {
            for c in c0..=c1 as usize {
                sum += self.data[r * self.width + c];
                n += 1;
            }
        }
        sum / n as f64
    }
}

/// Geometric node features: `(cx/W, cy/H, w/W, h/H)`, then optionally
/// `(ln(w/W), ln(h/H))`, then optionally `g*g` patch means.
pub fn node_features(t: &TableGraph, cfg: &FeatureConfig, image: Option<&Raster>) -> Result<NodeFeatures> {
    cfg.validate()?;
    if cfg.patch_grid.is_some() && image.is_none() {
        return Err(Error::MissingImage);
    }
    let (w_img, h_img) = (f64::from(t.width), f64::from(t.height));
    let d = cfg.dim();
    let mut x = Array2::zeros((t.cells.len(), d));
    for (i, cell) in t.cells.iter().enumerate() {
        let b = cell.bbox;
        let mut row = vec![b.cx / w_img, b.cy / h_img, b.w / w_img, b.h / h_img];
        if cfg.include_log_size {
            row.push((b.w / w_img).ln());
            row.push((b.h / h_img).ln());
        }
        if let (Some(g), Some(img)) = (cfg.patch_grid, image) {
            let c = cell.corner();
            let (sw, sh) = (c.width / g as f64, c.height / g as f64);
            for gy in 0..g {
                for gx in 0..g {
                    let x0 = c.x_min + gx as f64 * sw;
                    let y0 = c.y_min + gy as f64 * sh;
                    row.push(img.mean_in(x0, y0, x0 + sw, y0 + sh));
                }
            }
        }
        for (j, v) in row.into_iter().enumerate() {
            x[[i, j]] = v;
        }
    }
    Ok(x)
}

/// Pair of `N x N` edge-weight matrices for the row and column graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedAdjacency {
    pub a_row: Array2<f64>,
    pub a_col: Array2<f64>,
}

/// Gaussian-of-distance edge weights between cell centers:
/// `a_row = exp(-((y_i - y_j) / H * alpha)^2)`, `a_col` likewise on x / W.
pub fn build_adjacency(t: &TableGraph, alpha: f64) -> Result<WeightedAdjacency> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidAlpha(alpha));
    }
    let n = t.cells.len();
    let (w_img, h_img) = (f64::from(t.width), f64::from(t.height));
    let mut a_row = Array2::zeros((n, n));
    let mut a_col = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let (bi, bj) = (t.cells[i].bbox, t.cells[j].bbox);
            let dy = (bi.cy - bj.cy) / h_img * alpha;
            let dx = (bi.cx - bj.cx) / w_img * alpha;
            let (r, c) = ((-dy * dy).exp(), (-dx * dx).exp());
            a_row[[i, j]] = r;
            a_row[[j, i]] = r;
            a_col[[i, j]] = c;
            a_col[[j, i]] = c;
        }
    }
    Ok(WeightedAdjacency { a_row, a_col })
}

/// Keeps the `k * N` heaviest undirected edges of each graph independently.
/// Ties at the cutoff go to the smaller `(i, j)` pair.
pub fn prune_edges(a: &WeightedAdjacency, k: usize) -> Result<WeightedAdjacency> {
    if k < 1 {
        return Err(Error::InvalidK(k));
    }
    Ok(WeightedAdjacency { a_row: prune_matrix(&a.a_row, k), a_col: prune_matrix(&a.a_col, k) })
}

fn prune_matrix(m: &Array2<f64>, k: usize) -> Array2<f64> {
    keep_heaviest(m, k * m.nrows())
}

fn keep_heaviest(m: &Array2<f64>, budget: usize) -> Array2<f64> {
    let n = m.nrows();
    if budget >= n * n.saturating_sub(1) / 2 {
        return m.clone();
    }
    let mut edges: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    edges.sort_by(|&(a, b), &(c, d)| m[[c, d]].total_cmp(&m[[a, b]]).then((a, b).cmp(&(c, d))));
    let mut out = Array2::zeros((n, n));
    for &(i, j) in &edges[..budget] {
        out[[i, j]] = m[[i, j]];
        out[[j, i]] = m[[j, i]];
    }
    out
}

/// `D^-1/2 (A + I) D^-1/2` with `D` the degree matrix of `A + I`.
pub fn normalize_adjacency(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut with_loops = a.clone();
    for i in 0..n {
        with_loops[[i, i]] += 1.0;
    }
    let degree: Array1<f64> = with_loops.sum_axis(ndarray::Axis(1));
    Array2::from_shape_fn((n, n), |(i, j)| with_loops[[i, j]] / (degree[i] * degree[j]).sqrt())
}

/// How a table becomes model input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub alpha: f64,
    pub prune_k: Option<usize>,
    pub features: FeatureConfig,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig { alpha: DEFAULT_ALPHA, prune_k: None, features: FeatureConfig::default() }
    }
}

/// Node features together with the normalized row and column operators.
#[derive(Debug, Clone)]
pub struct GraphInput {
    pub features: NodeFeatures,
    pub norm_row: Array2<f64>,
    pub norm_col: Array2<f64>,
}

impl GraphInput {
    pub fn build(t: &TableGraph, cfg: &GraphConfig, image: Option<&Raster>) -> Result<Self> {
        let features = node_features(t, &cfg.features, image)?;
        let mut adj = build_adjacency(t, cfg.alpha)?;
        if let Some(k) = cfg.prune_k {
            adj = prune_edges(&adj, k)?;
        }
        Ok(GraphInput {
            features,
            norm_row: normalize_adjacency(&adj.a_row),
            norm_col: normalize_adjacency(&adj.a_col),
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Greedy one-to-one matching of candidate boxes to ground-truth cells by
/// descending IoU, keeping pairs with IoU strictly above 0.5.
/// Returns `(candidate index, gt cell id)` pairs in matching order.
pub fn select_training_nodes(candidates: &[CornerBox], gt: &TableGraph) -> Vec<(usize, u32)> {
    let gt_boxes = gt.corner_boxes();
    let mut pairs = Vec::new();
    for (ci, c) in candidates.iter().enumerate() {
        for (gi, g) in gt_boxes.iter().enumerate() {
            let v = iou(c, g);
            if v > 0.5 {
                pairs.push((v, ci, gt.cells[gi].id, gi));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut used_c = vec![false; candidates.len()];
    let mut used_g = vec![false; gt_boxes.len()];
    let mut out = Vec::new();
    for (_, ci, gid, gi) in pairs {
        if !used_c[ci] && !used_g[gi] {
            used_c[ci] = true;
            used_g[gi] = true;
            out.push((ci, gid));
        }
    }
    out
}

/// Training table whose nodes are the selected candidates, labeled with the
/// logical location and text of their matched ground-truth cell. Node ids are
/// the candidate indices.
pub fn training_table_from_candidates(candidates: &[CornerBox], gt: &TableGraph) -> Result<TableGraph> {
    let mut matched = select_training_nodes(candidates, gt);
    matched.sort_unstable();
    let mut t = TableGraph::new(gt.table_id.clone(), gt.width, gt.height);
    for (ci, gid) in matched {
        let g = gt.cell(gid).expect("matched id comes from gt");
        t.cells.push(CellNode {
            id: ci as u32,
            bbox: candidates[ci].to_center()?,
            logical: g.logical,
            text: g.text.clone(),
        });
    }
    Ok(t)
}

/// Keeps `ceil(keep_fraction * N)` cells drawn uniformly without replacement,
/// preserving the original cell order.
pub fn ablate_nodes(t: &TableGraph, keep_fraction: f64, seed: u64) -> Result<TableGraph> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::InvalidFraction(keep_fraction));
    }
    let n = t.cells.len();
    // 0.7 * 10 is 7.000000000000001 in binary floating point
    let keep = ((keep_fraction * n as f64) - 1e-9).ceil().clamp(0.0, n as f64) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, keep).into_vec();
    idx.sort_unstable();
    let mut out = TableGraph::new(t.table_id.clone(), t.width, t.height);
    out.cells = idx.into_iter().map(|i| t.cells[i].clone()).collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{CenterBox, LogicalLocation};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn table(w: u32, h: u32, boxes: &[(f64, f64, f64, f64)]) -> TableGraph {
        let mut t = TableGraph::new("t", w, h);
        for (i, &(cx, cy, bw, bh)) in boxes.iter().enumerate() {
            t.cells.push(CellNode::new(i as u32, CenterBox::new(cx, cy, bw, bh).unwrap()));
        }
        t
    }

    #[test]
    fn features_full_cover_and_log_size() {
        let t = table(200, 100, &[(100.0, 50.0, 200.0, 100.0), (100.0, 50.0, 100.0, 50.0)]);
        let plain = FeatureConfig { include_log_size: false, patch_grid: None };
        let x = node_features(&t, &plain, None).unwrap();
        assert_eq!(x.row(0).to_vec(), vec![0.5, 0.5, 1.0, 1.0]);
        let x = node_features(&t, &FeatureConfig { include_log_size: true, patch_grid: None }, None).unwrap();
        let r = x.row(1);
        assert_eq!(&r.to_vec()[..4], &[0.5, 0.5, 0.5, 0.5]);
        assert!(close(r[4], -std::f64::consts::LN_2, 1e-4) && close(r[5], -std::f64::consts::LN_2, 1e-4));
    }

    #[test]
    fn features_empty_and_missing_image() {
        let t = TableGraph::new("e", 10, 10);
        assert_eq!(node_features(&t, &FeatureConfig::default(), None).unwrap().dim(), (0, 6));
        let cfg = FeatureConfig { include_log_size: false, patch_grid: Some(2) };
        assert!(matches!(node_features(&t, &cfg, None), Err(Error::MissingImage)));
    }

    #[test]
    fn patch_features_sample_the_raster() {
        // left half cell class, right half boundary
        let m = SegMap::from_ascii(&["##++", "##++", "##++", "##++"]);
        let img = Raster::from_segmap(&m);
        let t = table(4, 4, &[(2.0, 2.0, 4.0, 4.0)]);
        let cfg = FeatureConfig { include_log_size: false, patch_grid: Some(2) };
        let x = node_features(&t, &cfg, Some(&img)).unwrap();
        assert_eq!(x.row(0).to_vec()[4..], [0.5, 1.0, 0.5, 1.0]);
    }

    #[test]
    fn adjacency_examples() {
        let t = table(480, 480, &[(100.0, 100.0, 10.0, 10.0), (100.0, 100.0, 10.0, 10.0)]);
        let a = build_adjacency(&t, 3.0).unwrap();
        assert_eq!((a.a_row[[0, 1]], a.a_col[[0, 1]], a.a_row[[0, 0]]), (1.0, 1.0, 0.0));

        let t = table(480, 480, &[(100.0, 100.0, 10.0, 10.0), (100.0, 260.0, 10.0, 10.0)]);
        let a = build_adjacency(&t, 3.0).unwrap();
        assert!(close(a.a_row[[0, 1]], 0.36787944117144233, 1e-12));
        assert_eq!(a.a_col[[1, 0]], 1.0);

        let t = table(480, 480, &[(0.0 + 5.0, 10.0, 10.0, 10.0), (485.0, 10.0, 10.0, 10.0)]);
        let a = build_adjacency(&t, 3.0).unwrap();
        assert!(close(a.a_col[[0, 1]], 1.2340980408667956e-4, 1e-15));

        assert!(matches!(build_adjacency(&t, 0.0), Err(Error::InvalidAlpha(_))));
        assert!(matches!(build_adjacency(&t, -1.0), Err(Error::InvalidAlpha(_))));
    }

    fn adjacency_from(weights: &[((usize, usize), f64)], n: usize) -> WeightedAdjacency {
        let mut m = Array2::zeros((n, n));
        for &((i, j), w) in weights {
            m[[i, j]] = w;
            m[[j, i]] = w;
        }
        WeightedAdjacency { a_row: m.clone(), a_col: m }
    }

    #[test]
    fn prune_budget_covering_all_edges_is_identity() {
        let a = adjacency_from(&[((0, 1), 0.9), ((0, 2), 0.5), ((1, 2), 0.1)], 3);
        assert_eq!(prune_edges(&a, 1).unwrap(), a);
        assert!(matches!(prune_edges(&a, 0), Err(Error::InvalidK(0))));
    }

    #[test]
    fn prune_drops_lightest_edge_at_budget_two() {
        let a = adjacency_from(&[((0, 1), 0.9), ((0, 2), 0.5), ((1, 2), 0.1)], 3);
        let kept = keep_heaviest(&a.a_row, 2);
        assert_eq!(kept[[1, 2]], 0.0);
        assert_eq!((kept[[0, 1]], kept[[0, 2]]), (0.9, 0.5));
    }

    #[test]
    fn prune_ties_prefer_smaller_pair() {
        let a = adjacency_from(&[((0, 1), 0.5), ((0, 2), 0.5), ((1, 2), 0.5)], 3);
        let kept = keep_heaviest(&a.a_row, 2);
        assert_eq!((kept[[0, 1]], kept[[0, 2]], kept[[1, 2]]), (0.5, 0.5, 0.0));
    }

    #[test]
    fn prune_k_times_n_budget() {
        // 6 nodes, 15 edges, k = 2 keeps 12
        let mut w = Vec::new();
        let mut v = 1.0;
        for i in 0..6 {
            for j in i + 1..6 {
                w.push(((i, j), v));
                v -= 0.05;
            }
        }
        let a = adjacency_from(&w, 6);
        let p = prune_edges(&a, 2).unwrap();
        let kept = p.a_row.iter().filter(|&&x| x > 0.0).count() / 2;
        assert_eq!(kept, 12);
        assert_eq!(p.a_row, p.a_row.t());
        assert_eq!(p.a_row[[4, 5]], 0.0);
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_adjacency(&Array2::zeros((1, 1))), Array2::from_elem((1, 1), 1.0));
        let two = Array2::from_shape_vec((2, 2), vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(normalize_adjacency(&two), Array2::from_elem((2, 2), 0.5));
        assert_eq!(normalize_adjacency(&Array2::zeros((4, 4))), Array2::<f64>::eye(4));
    }

    fn cb(x: f64, y: f64, w: f64, h: f64) -> CornerBox {
        CornerBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn training_nodes_identity_and_threshold() {
        let gt = table(100, 100, &[(10.0, 10.0, 10.0, 10.0), (50.0, 50.0, 20.0, 20.0)]);
        let cands = gt.corner_boxes();
        assert_eq!(select_training_nodes(&cands, &gt), vec![(0, 0), (1, 1)]);

        // IoU exactly 0.5: a half-width box inside the gt box
        let half = vec![cb(5.0, 5.0, 5.0, 10.0)];
        assert!((iou(&half[0], &gt.cells[0].corner()) - 0.5).abs() < 1e-15);
        assert!(select_training_nodes(&half, &gt).is_empty());
    }

    #[test]
    fn training_nodes_higher_iou_wins() {
        let gt = table(100, 100, &[(50.0, 50.0, 20.0, 20.0)]);
        let cands = vec![cb(42.0, 40.0, 20.0, 20.0), cb(41.0, 40.0, 20.0, 20.0)];
        // exhaustive: the best single pairing is the candidate with larger IoU
        let best = (0..2)
            .max_by(|&a, &b| iou(&cands[a], &gt.cells[0].corner()).total_cmp(&iou(&cands[b], &gt.cells[0].corner())))
            .unwrap();
        assert_eq!(best, 1);
        assert_eq!(select_training_nodes(&cands, &gt), vec![(1, 0)]);
    }

    #[test]
    fn training_table_carries_labels() {
        let mut gt = table(100, 100, &[(10.0, 10.0, 10.0, 10.0), (50.0, 50.0, 20.0, 20.0)]);
        gt.cells[1].logical = Some(LogicalLocation::unit(1, 1));
        let cands = vec![cb(0.0, 0.0, 3.0, 3.0), cb(41.0, 40.0, 20.0, 20.0)];
        let t = training_table_from_candidates(&cands, &gt).unwrap();
        assert_eq!(t.cells.len(), 1);
        assert_eq!((t.cells[0].id, t.cells[0].logical), (1, Some(LogicalLocation::unit(1, 1))));
    }

    #[test]
    fn ablation_counts_and_determinism() {
        let boxes: Vec<_> = (0..10).map(|i| (5.0 + 10.0 * i as f64, 5.0, 8.0, 8.0)).collect();
        let t = table(100, 10, &boxes);
        assert_eq!(ablate_nodes(&t, 1.0, 3).unwrap(), t);
        let a = ablate_nodes(&t, 0.8, 3).unwrap();
        assert_eq!(a.cells.len(), 8);
        assert_eq!(a, ablate_nodes(&t, 0.8, 3).unwrap());
        assert_eq!(ablate_nodes(&t, 0.7, 1).unwrap().cells.len(), 7);
        assert_eq!(ablate_nodes(&t, 0.05, 1).unwrap().cells.len(), 1);
        for bad in [0.0, -0.1, 1.01, f64::NAN] {
            assert!(matches!(ablate_nodes(&t, bad, 0), Err(Error::InvalidFraction(_))));
        }
    }
}
