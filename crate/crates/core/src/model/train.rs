//! Full-batch momentum training and prediction.

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{FeatureConfig, GraphConfig, GraphInput, Raster, DEFAULT_ALPHA};
use crate::table::{LogicalLocation, TableGraph};

use super::net::{forward_propagated, loss_and_grad_sum, HeadProbs, Objective};
use super::ordinal::{class_priors, decode, FocalVariant, LossKind};
use super::params::{Head, Model, ModelParams};

/// Epochs used when none are configured; calibrated on synthetic tables.
pub const DEFAULT_EPOCHS: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub seed: u64,
    pub hidden: usize,
    pub loss: LossKind,
    pub focal_variant: FocalVariant,
    pub decode_threshold: f64,
    pub alpha: f64,
    pub prune_k: Option<usize>,
    pub features: FeatureConfig,
    /// Class counts; taken from the training data maxima when absent.
    pub t_row: Option<usize>,
    pub t_col: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            epochs: DEFAULT_EPOCHS,
            seed: 0,
            hidden: 64,
            loss: LossKind::Focal,
            focal_variant: FocalVariant::Conventional,
            decode_threshold: 0.5,
            alpha: DEFAULT_ALPHA,
            prune_k: None,
            features: FeatureConfig::default(),
            t_row: None,
            t_col: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.hidden == 0 {
            return bad("hidden width must be at least 1".into());
        }
        if !(self.decode_threshold > 0.0 && self.decode_threshold < 1.0) {
            return bad(format!("decode threshold must lie in (0, 1), got {}", self.decode_threshold));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidAlpha(self.alpha));
        }
        if self.prune_k == Some(0) {
            return Err(Error::InvalidK(0));
        }
        if let Some(t) = self.t_row.into_iter().chain(self.t_col).find(|&t| t < 2) {
            return bad(format!("class counts must be at least 2, got {t}"));
        }
        self.features.validate()
    }

    pub fn graph(&self) -> GraphConfig {
        GraphConfig { alpha: self.alpha, prune_k: self.prune_k, features: self.features }
    }
}

struct Prepared {
    ax_row: Array2<f64>,
    ax_col: Array2<f64>,
    labels: Vec<LogicalLocation>,
}

fn prepare(t: &TableGraph, image: Option<&Raster>, graph: &GraphConfig) -> Result<Prepared> {
    let labels = t.logical_locations()?;
    let g = GraphInput::build(t, graph, image)?;
    Ok(Prepared { ax_row: g.norm_row.dot(&g.features), ax_col: g.norm_col.dot(&g.features), labels })
}

fn class_counts(dataset: &[TableGraph], cfg: &TrainConfig) -> Result<(usize, usize)> {
    let mut rows = 0;
    let mut cols = 0;
    for t in dataset {
        for l in t.logical_locations()? {
            rows = rows.max(l.row_start.max(l.row_end) + 1);
            cols = cols.max(l.col_start.max(l.col_end) + 1);
        }
    }
    Ok((cfg.t_row.unwrap_or(rows.max(2)), cfg.t_col.unwrap_or(cols.max(2))))
}

pub fn train(dataset: &[TableGraph], cfg: &TrainConfig) -> Result<Model> {
    train_with(dataset, None, cfg, |_, _| {})
}

/// Trains on `dataset`, with optional per-table rasters for patch features.
/// `on_epoch(epoch, loss)` sees the loss at the parameters before each update.
///
/// Graph construction runs on the current rayon pool; the optimization itself
/// is sequential, so the result does not depend on the pool size.
pub fn train_with(
    dataset: &[TableGraph],
    images: Option<&[Raster]>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<Model> {
    cfg.validate()?;
    if let Some(imgs) = images {
        if imgs.len() != dataset.len() {
            return Err(Error::ShapeError(format!("{} images for {} tables", imgs.len(), dataset.len())));
        }
    }
    let graph = cfg.graph();
    let prepared: Vec<Prepared> = dataset
        .par_iter()
        .enumerate()
        .filter(|(_, t)| !t.is_empty())
        .map(|(i, t)| prepare(t, images.map(|im| &im[i]), &graph))
        .collect::<Result<_>>()?;
    let total: usize = prepared.iter().map(|p| p.labels.len()).sum();
    if total == 0 {
        return Err(Error::EmptyBatch);
    }
    let (t_row, t_col) = class_counts(dataset, cfg)?;
    let objective = match cfg.loss {
        LossKind::Ce => Objective::cross_entropy(t_row, t_col),
        LossKind::Focal => Objective::new(cfg.loss, cfg.focal_variant, &class_priors(dataset, t_row, t_col)?)?,
    };

    // Past the propagation step every node is independent, so the whole
    // dataset trains as one stacked batch.
    let stack = |f: fn(&Prepared) -> &Array2<f64>| {
        let views: Vec<_> = prepared.iter().map(|p| f(p).view()).collect();
        ndarray::concatenate(Axis(0), &views).expect("feature widths agree")
    };
    let ax_row = stack(|p| &p.ax_row);
    let ax_col = stack(|p| &p.ax_col);
    let labels: Vec<LogicalLocation> = prepared.iter().flat_map(|p| p.labels.iter().copied()).collect();
    drop(prepared);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init(cfg.features.dim(), cfg.hidden, t_row, t_col, &mut rng)?;
    let mut velocity = params.zeros_like();
    let inv_total = 1.0 / total as f64;
    for epoch in 0..cfg.epochs {
        let (loss, grads) = loss_and_grad_sum(&params, &ax_row, &ax_col, &labels, &objective)?;
        let loss = loss * inv_total;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch, loss });
        }
        on_epoch(epoch, loss);
        velocity.scale(cfg.momentum);
        velocity.add_scaled(&grads, -cfg.learning_rate * inv_total);
        params.add_scaled(&velocity, 1.0);
        if !params.is_finite() {
            return Err(Error::TrainingDiverged { epoch, loss: f64::NAN });
        }
    }
    Ok(Model { params, graph, decode_threshold: cfg.decode_threshold })
}

/// Head probabilities for every cell of `t`.
pub fn predict_probs(model: &Model, t: &TableGraph, image: Option<&Raster>) -> Result<HeadProbs> {
    let g = GraphInput::build(t, &model.graph, image)?;
    if g.features.ncols() != model.params.input_dim() {
        return Err(Error::ShapeError(format!(
            "{} node features, model expects {}",
            g.features.ncols(),
            model.params.input_dim()
        )));
    }
    Ok(forward_propagated(&model.params, &g.norm_row.dot(&g.features), &g.norm_col.dot(&g.features)))
}

/// `t` with every cell's logical location decoded from the four heads.
/// Inverted intervals are left as predicted.
pub fn predict(model: &Model, t: &TableGraph, image: Option<&Raster>) -> Result<TableGraph> {
    if t.is_empty() {
        return Ok(t.clone());
    }
    let probs = predict_probs(model, t, image)?;
    let tau = model.decode_threshold;
    let mut out = t.clone();
    for (i, cell) in out.cells.iter_mut().enumerate() {
        let idx = |h: Head| decode(probs.head(h).row(i), tau);
        cell.logical =
            Some(LogicalLocation::new(idx(Head::RowStart), idx(Head::RowEnd), idx(Head::ColStart), idx(Head::ColEnd)));
    }
    Ok(out)
}

/// Number of cells whose predicted start index exceeds the end index.
pub fn inverted_count(t: &TableGraph) -> usize {
    t.cells.iter().filter(|c| c.logical.is_some_and(|l| !l.is_ordered())).count()
}
