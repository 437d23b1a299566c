//! Parameter storage, initialization and the model file.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{FeatureConfig, GraphConfig};

pub const MODEL_FORMAT: &str = "tgraph-model/1";

/// Affine map `x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense { weight: Array2::zeros((fan_in, fan_out)), bias: Array1::zeros(fan_out) }
    }

    /// Uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || rng.gen_range(-bound..=bound));
        Dense { weight, bias: Array1::zeros(fan_out) }
    }

    fn fan_out(&self) -> usize {
        self.bias.len()
    }
}

/// Index of each output head in [`ModelParams::heads`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    RowStart = 0,
    RowEnd = 1,
    ColStart = 2,
    ColEnd = 3,
}

impl Head {
    pub const ALL: [Head; 4] = [Head::RowStart, Head::RowEnd, Head::ColStart, Head::ColEnd];

    pub fn name(self) -> &'static str {
        match self {
            Head::RowStart => "start_row",
            Head::RowEnd => "end_row",
            Head::ColStart => "start_col",
            Head::ColEnd => "end_col",
        }
    }

    pub fn is_row(self) -> bool {
        matches!(self, Head::RowStart | Head::RowEnd)
    }
}

/// Two parallel one-layer GCNs (row and column) and four ordinal output maps.
/// The same layout holds gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub row_gcn: Dense,
    pub col_gcn: Dense,
    /// Indexed by [`Head`].
    pub heads: [Dense; 4],
    pub t_row: usize,
    pub t_col: usize,
}

impl ModelParams {
    fn check_dims(d: usize, h: usize, t_row: usize, t_col: usize) -> Result<()> {
        if d == 0 || h == 0 {
            return Err(Error::Config(format!("feature and hidden widths must be positive (d={d}, h={h})")));
        }
        if t_row < 2 || t_col < 2 {
            return Err(Error::Config(format!(
                "row and column class counts must be at least 2 (T_row={t_row}, T_col={t_col})"
            )));
        }
        Ok(())
    }

    pub fn zeros(d: usize, h: usize, t_row: usize, t_col: usize) -> Result<Self> {
        Self::check_dims(d, h, t_row, t_col)?;
        Ok(ModelParams {
            row_gcn: Dense::zeros(d, h),
            col_gcn: Dense::zeros(d, h),
            heads: [
                Dense::zeros(h, t_row - 1),
                Dense::zeros(h, t_row - 1),
                Dense::zeros(h, t_col - 1),
                Dense::zeros(h, t_col - 1),
            ],
            t_row,
            t_col,
        })
    }

    /// Glorot-uniform initialization, drawn in the order
    /// row GCN, column GCN, start-row, end-row, start-col, end-col.
    pub fn init(d: usize, h: usize, t_row: usize, t_col: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Self::check_dims(d, h, t_row, t_col)?;
        let row_gcn = Dense::glorot(d, h, rng);
        let col_gcn = Dense::glorot(d, h, rng);
        let heads = [
            Dense::glorot(h, t_row - 1, rng),
            Dense::glorot(h, t_row - 1, rng),
            Dense::glorot(h, t_col - 1, rng),
            Dense::glorot(h, t_col - 1, rng),
        ];
        Ok(ModelParams { row_gcn, col_gcn, heads, t_row, t_col })
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams::zeros(self.input_dim(), self.hidden_dim(), self.t_row, self.t_col)
            .expect("dimensions already validated")
    }

    pub fn input_dim(&self) -> usize {
        self.row_gcn.weight.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.row_gcn.fan_out()
    }

    fn dense(&self) -> [&Dense; 6] {
        let [a, b, c, d] = &self.heads;
        [&self.row_gcn, &self.col_gcn, a, b, c, d]
    }

    fn dense_mut(&mut self) -> [&mut Dense; 6] {
        let [a, b, c, d] = &mut self.heads;
        [&mut self.row_gcn, &mut self.col_gcn, a, b, c, d]
    }

    const NAMES: [&'static str; 6] = ["row_gcn", "col_gcn", "start_row", "end_row", "start_col", "end_col"];

    /// Every scalar, in a fixed order.
    pub fn flatten(&self) -> Vec<f64> {
        self.dense().iter().flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.dense().iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Mutable access to scalar `index` in [`flatten`](Self::flatten) order.
    pub fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for l in self.dense_mut() {
            let n = l.weight.len();
            if index < n {
                return l.weight.iter_mut().nth(index).expect("index within weight");
            }
            index -= n;
            let n = l.bias.len();
            if index < n {
                return &mut l.bias[index];
            }
            index -= n;
        }
        panic!("parameter index out of range");
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for (a, b) in self.dense_mut().into_iter().zip(other.dense()) {
            a.weight.scaled_add(scale, &b.weight);
            a.bias.scaled_add(scale, &b.bias);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in self.dense_mut() {
            l.weight *= s;
            l.bias *= s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.dense().iter().all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

/// Parameters together with everything needed to rebuild inputs and decode.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: ModelParams,
    pub graph: GraphConfig,
    pub decode_threshold: f64,
}

#[derive(Serialize, Deserialize)]
struct TensorJson {
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigJson {
    d: usize,
    h: usize,
    #[serde(rename = "T_row")]
    t_row: usize,
    #[serde(rename = "T_col")]
    t_col: usize,
    feature_config: FeatureConfig,
    alpha: f64,
    prune_k: Option<usize>,
    decode_threshold: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelJson {
    format: String,
    config: ConfigJson,
    params: BTreeMap<String, TensorJson>,
}

fn tensor(a: &Array2<f64>) -> TensorJson {
    TensorJson { shape: [a.nrows(), a.ncols()], data: a.iter().copied().collect() }
}

fn take(
    params: &mut BTreeMap<String, TensorJson>,
    name: &str,
    shape: [usize; 2],
) -> std::result::Result<Array2<f64>, String> {
    let t = params.remove(name).ok_or_else(|| format!("missing parameter {name}"))?;
    if t.shape != shape {
        return Err(format!("parameter {name} has shape {:?}, expected {:?}", t.shape, shape));
    }
    if t.data.iter().any(|v| !v.is_finite()) {
        return Err(format!("parameter {name} has non-finite entries"));
    }
    Array2::from_shape_vec((shape[0], shape[1]), t.data).map_err(|e| format!("parameter {name}: {e}"))
}

impl Model {
    pub fn to_json(&self) -> String {
        let p = &self.params;
        let mut params = BTreeMap::new();
        for (name, l) in ModelParams::NAMES.iter().zip(p.dense()) {
            params.insert(format!("{name}.weight"), tensor(&l.weight));
            params.insert(format!("{name}.bias"), tensor(&l.bias.clone().insert_axis(ndarray::Axis(0))));
        }
        let doc = ModelJson {
            format: MODEL_FORMAT.to_string(),
            config: ConfigJson {
                d: p.input_dim(),
                h: p.hidden_dim(),
                t_row: p.t_row,
                t_col: p.t_col,
                feature_config: self.graph.features,
                alpha: self.graph.alpha,
                prune_k: self.graph.prune_k,
                decode_threshold: self.decode_threshold,
            },
            params,
        };
        serde_json::to_string(&doc).expect("model serializes")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let mut doc: ModelJson = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if doc.format != MODEL_FORMAT {
            return Err(format!("unsupported model format {:?}", doc.format));
        }
        let c = &doc.config;
        let (d, h) = (c.d, c.h);
        if c.feature_config.dim() != d {
            return Err(format!("feature config yields {} features but d = {d}", c.feature_config.dim()));
        }
        let mut params = ModelParams::zeros(d, h, c.t_row, c.t_col).map_err(|e| e.to_string())?;
        for (name, l) in ModelParams::NAMES.iter().zip(params.dense_mut()) {
            let (fan_in, fan_out) = l.weight.dim();
            l.weight = take(&mut doc.params, &format!("{name}.weight"), [fan_in, fan_out])?;
            l.bias = take(&mut doc.params, &format!("{name}.bias"), [1, fan_out])?.remove_axis(ndarray::Axis(0));
        }
        if let Some(extra) = doc.params.keys().next() {
            return Err(format!("unexpected parameter {extra}"));
        }
        let graph = GraphConfig { alpha: c.alpha, prune_k: c.prune_k, features: c.feature_config };
        Ok(Model { params, graph, decode_threshold: c.decode_threshold })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Model::from_json(&text).map_err(|m| Error::parse(path.display().to_string(), m))
    }
}
