//! Deterministic synthetic tables with ground-truth boxes and logical
//! locations, plus segmentation-map rendering.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`): table `i` of a run seeded
//! with `s` draws from `ChaCha8Rng::seed_from_u64(s)` on stream `i`, so tables
//! can be generated in any order or in parallel with identical output.
//! Coordinates are quantized to 1/16 px so corner/center conversions are exact.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetRecord;
use crate::error::{Error, Result};
use crate::segmap::{SegMap, BACKGROUND, BOUNDARY, CELL};
use crate::table::{CellNode, CornerBox, LogicalLocation, TableGraph};

/// Gap left between a cell box and the separators around it.
const MARGIN: f64 = 1.0;
const MIN_CELL_PX: f64 = 3.0;
const QUANTUM: f64 = 16.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowWeighting {
    Uniform,
    /// Table sizes drawn with probability proportional to `1 / size`.
    LongTail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub count: usize,
    pub max_rows: usize,
    pub max_cols: usize,
    pub span_prob: f64,
    pub image_w: u32,
    pub image_h: u32,
    /// Separator displacement as a fraction of the nominal slot size.
    pub jitter: f64,
    pub row_weighting: RowWeighting,
    pub seed: u64,
    /// Fill texts with `r{row}c{col}`.
    pub with_text: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            count: 100,
            max_rows: 8,
            max_cols: 8,
            span_prob: 0.0,
            image_w: 480,
            image_h: 480,
            jitter: 0.1,
            row_weighting: RowWeighting::Uniform,
            seed: 0,
            with_text: false,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.count < 1 {
            return bad("count must be at least 1");
        }
        if self.max_rows < 1 || self.max_cols < 1 {
            return bad("max_rows and max_cols must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.span_prob) {
            return bad("span_prob must lie in [0, 1]");
        }
        if !(0.0..0.4).contains(&self.jitter) {
            return bad("jitter must lie in [0, 0.4)");
        }
        if self.image_w == 0 || self.image_h == 0 {
            return bad("image size must be positive");
        }
        Ok(())
    }
}

fn quantize(v: f64) -> f64 {
    (v * QUANTUM).round() / QUANTUM
}

fn draw_size(rng: &mut ChaCha8Rng, max: usize, weighting: RowWeighting) -> usize {
    match weighting {
        RowWeighting::Uniform => rng.gen_range(1..=max),
        RowWeighting::LongTail => {
            let w = WeightedIndex::new((1..=max).map(|n| 1.0 / n as f64)).expect("weights are positive");
            w.sample(rng) + 1
        }
    }
}

fn separators(rng: &mut ChaCha8Rng, n: usize, length: f64, jitter: f64) -> Vec<f64> {
    let nominal = length / n as f64;
    let mut s = Vec::with_capacity(n + 1);
    s.push(0.0);
    for k in 1..n {
        let u: f64 = rng.gen::<f64>() - 0.5;
        s.push(quantize(k as f64 * nominal + u * jitter * nominal));
    }
    s.push(length);
    s
}

/// Greedy rectangular merging over slots in row-major order: each free slot
/// starts a cell that grows right, then down, one accepted merge at a time.
fn partition(rng: &mut ChaCha8Rng, rows: usize, cols: usize, span_prob: f64) -> Vec<LogicalLocation> {
    let mut taken = vec![false; rows * cols];
    let mut cells = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if taken[r * cols + c] {
                continue;
            }
            let mut ce = c;
            while ce + 1 < cols && !taken[r * cols + ce + 1] && span_prob > 0.0 && rng.gen::<f64>() < span_prob {
                ce += 1;
            }
            let mut re = r;
            while re + 1 < rows
                && (c..=ce).all(|cc| !taken[(re + 1) * cols + cc])
                && span_prob > 0.0
                && rng.gen::<f64>() < span_prob
            {
                re += 1;
            }
            for rr in r..=re {
                for cc in c..=ce {
                    taken[rr * cols + cc] = true;
                }
            }
            cells.push(LogicalLocation::new(r, re, c, ce));
        }
    }
    cells
}

fn table_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Generates table `index` of the run described by `cfg`.
pub fn generate_table(cfg: &GenConfig, index: usize) -> Result<TableGraph> {
    let mut rng = table_rng(cfg.seed, index);
    let rows = draw_size(&mut rng, cfg.max_rows, cfg.row_weighting);
    let cols = draw_size(&mut rng, cfg.max_cols, cfg.row_weighting);
    let ys = separators(&mut rng, rows, f64::from(cfg.image_h), cfg.jitter);
    let xs = separators(&mut rng, cols, f64::from(cfg.image_w), cfg.jitter);
    let thinnest = ys.windows(2).chain(xs.windows(2)).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    if thinnest - 2.0 * MARGIN < MIN_CELL_PX {
        return Err(Error::GeometryError(format!(
            "table {index}: a {rows}x{cols} grid on {}x{} px leaves cells {:.2} px thin",
            cfg.image_w,
            cfg.image_h,
            thinnest - 2.0 * MARGIN
        )));
    }
    let mut t = TableGraph::new(format!("s{}-{index:06}", cfg.seed), cfg.image_w, cfg.image_h);
    for (id, l) in partition(&mut rng, rows, cols, cfg.span_prob).into_iter().enumerate() {
        let (x0, x1) = (xs[l.col_start] + MARGIN, xs[l.col_end + 1] - MARGIN);
        let (y0, y1) = (ys[l.row_start] + MARGIN, ys[l.row_end + 1] - MARGIN);
        let bbox = CornerBox::new(x0, y0, x1 - x0, y1 - y0)?.to_center()?;
        let mut cell = CellNode::new(id as u32, bbox).with_logical(l);
        if cfg.with_text {
            cell.text = Some(format!("r{}c{}", l.row_start, l.col_start));
        }
        t.cells.push(cell);
    }
    Ok(t)
}

/// Generates `cfg.count` labeled tables. Runs on the current rayon pool; the
/// output does not depend on its size.
pub fn generate(cfg: &GenConfig) -> Result<Vec<DatasetRecord>> {
    cfg.validate()?;
    (0..cfg.count).into_par_iter().map(|i| generate_table(cfg, i).map(DatasetRecord::new)).collect()
}

/// Pixel columns (or rows) whose centers fall strictly inside `(lo, hi)`.
fn interior_span(lo: f64, hi: f64, limit: usize) -> Option<(usize, usize)> {
    let first = ((lo - 0.5).floor() + 1.0).max(0.0);
    let last = ((hi - 0.5).ceil() - 1.0).min(limit as f64 - 1.0);
    (first <= last).then_some((first as usize, last as usize))
}

/// Paints cell interiors as class 1 and a one-pixel frame around each as
/// class 2. Cells whose boxes overlap are rejected.
pub fn render_segmap(t: &TableGraph) -> Result<SegMap> {
    let boxes = t.corner_boxes();
    for i in 0..boxes.len() {
        for j in i + 1..boxes.len() {
            let (a, b) = (&boxes[i], &boxes[j]);
            let iw = a.x_max().min(b.x_max()) - a.x_min.max(b.x_min);
            let ih = a.y_max().min(b.y_max()) - a.y_min.max(b.y_min);
            if iw > 0.0 && ih > 0.0 {
                return Err(Error::GeometryError(format!("cells {} and {} overlap", t.cells[i].id, t.cells[j].id)));
            }
        }
    }
    let (w, h) = (t.width as usize, t.height as usize);
    let mut m = SegMap::new(w, h);
    let mut spans = Vec::new();
    for b in &boxes {
        let (Some(cs), Some(rs)) = (interior_span(b.x_min, b.x_max(), w), interior_span(b.y_min, b.y_max(), h)) else {
            continue;
        };
        for r in rs.0..=rs.1 {
            for c in cs.0..=cs.1 {
                m.set(r, c, CELL);
            }
        }
        spans.push((rs, cs));
    }
    for ((r0, r1), (c0, c1)) in spans {
        let (fr0, fr1) = (r0.saturating_sub(1), (r1 + 1).min(h - 1));
        let (fc0, fc1) = (c0.saturating_sub(1), (c1 + 1).min(w - 1));
        for r in fr0..=fr1 {
            for c in fc0..=fc1 {
                if m.get(r, c) == BACKGROUND {
                    m.set(r, c, BOUNDARY);
                }
            }
        }
    }
    Ok(m)
}
