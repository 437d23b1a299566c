//! Ordinal coding of logical indices and the losses over the resulting
//! `T - 1` binary sub-problems.
//!
//! Index `r` of `T` classes becomes the target `q` with `q_t = 1` iff `t < r`.
//! `p_t` is the predicted probability that the index exceeds `t`; the decoded
//! index is the number of thresholds with `p_t > tau`.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::TableGraph;

/// Probabilities are clamped to `[EPS, 1 - EPS]` inside the losses.
pub const PROB_EPS: f64 = 1e-7;
/// Upper clip of the focal exponent.
pub const GAMMA_MAX: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrdinalTarget(pub Vec<u8>);

impl OrdinalTarget {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The target read as hard probabilities.
    pub fn as_probabilities(&self) -> Vec<f64> {
        self.0.iter().map(|&b| f64::from(b)).collect()
    }
}

pub fn encode(r: usize, classes: usize) -> Result<OrdinalTarget> {
    if classes < 2 || r >= classes {
        return Err(Error::InvalidIndex { index: r, classes });
    }
    Ok(OrdinalTarget((0..classes - 1).map(|t| u8::from(t < r)).collect()))
}

/// Counts thresholds with `p_t > tau`. No monotonicity repair.
pub fn decode(p: ArrayView1<'_, f64>, tau: f64) -> usize {
    p.iter().filter(|&&v| v > tau).count()
}

pub fn decode_slice(p: &[f64], tau: f64) -> usize {
    decode(ArrayView1::from(p), tau)
}

/// `min(2, -(1 - lambda)^2 ln(lambda) + 1)`.
pub fn focal_gamma(lambda: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::InvalidPrior(lambda));
    }
    let one_minus = 1.0 - lambda;
    Ok((-(one_minus * one_minus) * lambda.ln() + 1.0).min(GAMMA_MAX))
}

/// [`focal_gamma`] with absent classes (`lambda = 0`) mapped to the clip value.
pub fn gamma_for_prior(lambda: f64) -> Result<f64> {
    if lambda == 0.0 {
        Ok(GAMMA_MAX)
    } else {
        focal_gamma(lambda)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Ce,
    #[default]
    Focal,
}

/// Modulating factor on the `q = 0` term of the focal loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FocalVariant {
    /// `(1 - p)^gamma` on both terms. For a `q = 0` term the loss then falls
    /// as `p -> 1` once `p > 1 - exp(-1 / gamma)`, so gradient descent drives
    /// confident negatives the wrong way; kept for comparison only.
    AsPrinted,
    /// `(1 - p)^gamma` on `q = 1` terms, `p^gamma` on `q = 0` terms.
    #[default]
    Conventional,
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

fn check_batch(p: &Array2<f64>, r: &[usize]) -> Result<()> {
    if p.nrows() == 0 {
        return Err(Error::EmptyBatch);
    }
    if p.nrows() != r.len() {
        return Err(Error::ShapeError(format!("{} probability rows for {} labels", p.nrows(), r.len())));
    }
    let classes = p.ncols() + 1;
    if let Some(&bad) = r.iter().find(|&&ri| ri >= classes) {
        return Err(Error::InvalidIndex { index: bad, classes });
    }
    Ok(())
}

/// Mean over nodes of the summed binary cross-entropies.
pub fn ordinal_ce_loss(p: &Array2<f64>, r: &[usize]) -> Result<f64> {
    check_batch(p, r)?;
    let mut total = 0.0;
    for (row, &ri) in p.rows().into_iter().zip(r) {
        for (t, &pt) in row.iter().enumerate() {
            let pt = clamp_prob(pt);
            total -= if t < ri { pt.ln() } else { (1.0 - pt).ln() };
        }
    }
    Ok(total / r.len() as f64)
}

/// Focal-modulated ordinal loss with per-threshold exponents `gamma`.
pub fn ordinal_focal_loss(p: &Array2<f64>, r: &[usize], gamma: &[f64], variant: FocalVariant) -> Result<f64> {
    check_batch(p, r)?;
    if gamma.len() != p.ncols() {
        return Err(Error::ShapeError(format!("{} exponents for {} thresholds", gamma.len(), p.ncols())));
    }
    let mut total = 0.0;
    for (row, &ri) in p.rows().into_iter().zip(r) {
        for (t, &pt) in row.iter().enumerate() {
            total += focal_term(pt, t < ri, gamma[t], variant).0;
        }
    }
    Ok(total / r.len() as f64)
}

/// Loss contribution (sign already flipped, so nonnegative) of one binary
/// sub-problem and its derivative with respect to the logit.
/// `p_raw` is the unclamped probability; clamped entries carry no gradient.
pub(crate) fn focal_term(p_raw: f64, positive: bool, gamma: f64, variant: FocalVariant) -> (f64, f64) {
    let p = clamp_prob(p_raw);
    let live = p == p_raw;
    let (loss, dz) = if positive {
        let m = (1.0 - p).powf(gamma);
        (-m * p.ln(), gamma * p * m * p.ln() - (1.0 - p) * m)
    } else {
        match variant {
            FocalVariant::AsPrinted => {
                let m = (1.0 - p).powf(gamma);
                let l1 = (1.0 - p).ln();
                (-m * l1, p * m * (gamma * l1 + 1.0))
            }
            FocalVariant::Conventional => {
                let m = p.powf(gamma);
                let l1 = (1.0 - p).ln();
                (-m * l1, -gamma * m * (1.0 - p) * l1 + p * m)
            }
        }
    };
    (loss, if live { dz } else { 0.0 })
}

/// Cross-entropy contribution and logit derivative `p - q`.
pub(crate) fn ce_term(p_raw: f64, positive: bool) -> (f64, f64) {
    let p = clamp_prob(p_raw);
    let live = p == p_raw;
    let (loss, dz) = if positive { (-p.ln(), p - 1.0) } else { (-(1.0 - p).ln(), p) };
    (loss, if live { dz } else { 0.0 })
}

/// Empirical index frequencies of one head.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrior(pub Vec<f64>);

impl ClassPrior {
    pub fn classes(&self) -> usize {
        self.0.len()
    }

    /// Focal exponents for thresholds `0..T-1`.
    pub fn gammas(&self) -> Result<Vec<f64>> {
        let n = self.0.len().saturating_sub(1);
        self.0[..n].iter().map(|&l| gamma_for_prior(l)).collect()
    }
}

/// Per-head priors `[start-row, end-row, start-col, end-col]`, each the
/// fraction of all cells whose index equals `t`.
pub fn class_priors(dataset: &[TableGraph], t_row: usize, t_col: usize) -> Result<[ClassPrior; 4]> {
    let mut counts = [vec![0usize; t_row], vec![0usize; t_row], vec![0usize; t_col], vec![0usize; t_col]];
    let mut total = 0usize;
    for t in dataset {
        for l in t.logical_locations()? {
            for (k, idx) in l.to_array().into_iter().enumerate() {
                let classes = counts[k].len();
                *counts[k].get_mut(idx).ok_or(Error::InvalidIndex { index: idx, classes })? += 1;
            }
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::EmptyBatch);
    }
    Ok(counts.map(|c| ClassPrior(c.into_iter().map(|n| n as f64 / total as f64).collect())))
}
