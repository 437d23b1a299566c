//! Forward pass and exact gradients of the summed ordinal loss.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::table::LogicalLocation;

use super::ordinal::{ce_term, focal_term, ClassPrior, FocalVariant, LossKind};
use super::params::{Head, ModelParams};

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Probabilities of the four heads, each `N x (T - 1)`, indexed by [`Head`].
#[derive(Debug, Clone, PartialEq)]
pub struct HeadProbs(pub [Array2<f64>; 4]);

impl HeadProbs {
    pub fn head(&self, h: Head) -> &Array2<f64> {
        &self.0[h as usize]
    }
}

/// Loss selection with the per-head focal exponents already resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub kind: LossKind,
    pub variant: FocalVariant,
    /// Per head, one exponent per threshold. Unused for cross-entropy.
    pub gammas: [Vec<f64>; 4],
}

impl Objective {
    pub fn cross_entropy(t_row: usize, t_col: usize) -> Self {
        let z = |t: usize| vec![0.0; t - 1];
        Objective {
            kind: LossKind::Ce,
            variant: FocalVariant::AsPrinted,
            gammas: [z(t_row), z(t_row), z(t_col), z(t_col)],
        }
    }

    pub fn new(kind: LossKind, variant: FocalVariant, priors: &[ClassPrior; 4]) -> Result<Self> {
        let [a, b, c, d] = priors;
        Ok(Objective { kind, variant, gammas: [a.gammas()?, b.gammas()?, c.gammas()?, d.gammas()?] })
    }

    fn term(&self, head: usize, t: usize, p: f64, positive: bool) -> (f64, f64) {
        match self.kind {
            LossKind::Ce => ce_term(p, positive),
            LossKind::Focal => focal_term(p, positive, self.gammas[head][t], self.variant),
        }
    }
}

fn check_shapes(
    params: &ModelParams,
    x: ArrayView2<'_, f64>,
    a_row: ArrayView2<'_, f64>,
    a_col: ArrayView2<'_, f64>,
) -> Result<()> {
    let n = x.nrows();
    if x.ncols() != params.input_dim() {
        return Err(Error::ShapeError(format!("{} node features, model expects {}", x.ncols(), params.input_dim())));
    }
    for (name, a) in [("row", a_row), ("column", a_col)] {
        if a.dim() != (n, n) {
            return Err(Error::ShapeError(format!("{name} operator is {:?} for {n} nodes", a.dim())));
        }
    }
    Ok(())
}

struct Activations {
    // pre-activation and hidden state of the row and column GCNs
    pre: [Array2<f64>; 2],
    hidden: [Array2<f64>; 2],
    probs: [Array2<f64>; 4],
}

fn gcn_index(h: usize) -> usize {
    usize::from(!Head::ALL[h].is_row())
}

/// `ax` holds the propagated features `A_row X` and `A_col X`.
fn activations(params: &ModelParams, ax: [&Array2<f64>; 2]) -> Activations {
    let pre = [
        ax[0].dot(&params.row_gcn.weight) + &params.row_gcn.bias,
        ax[1].dot(&params.col_gcn.weight) + &params.col_gcn.bias,
    ];
    let hidden = [pre[0].mapv(|v| v.max(0.0)), pre[1].mapv(|v| v.max(0.0))];
    let probs = std::array::from_fn(|k| {
        let head = &params.heads[k];
        (hidden[gcn_index(k)].dot(&head.weight) + &head.bias).mapv(sigmoid)
    });
    Activations { pre, hidden, probs }
}

pub fn forward(
    params: &ModelParams,
    x: ArrayView2<'_, f64>,
    a_row: ArrayView2<'_, f64>,
    a_col: ArrayView2<'_, f64>,
) -> Result<HeadProbs> {
    check_shapes(params, x, a_row, a_col)?;
    Ok(forward_propagated(params, &a_row.dot(&x), &a_col.dot(&x)))
}

pub(crate) fn forward_propagated(params: &ModelParams, ax_row: &Array2<f64>, ax_col: &Array2<f64>) -> HeadProbs {
    HeadProbs(activations(params, [ax_row, ax_col]).probs)
}

fn targets(labels: &[LogicalLocation], params: &ModelParams) -> Result<Vec<[usize; 4]>> {
    labels
        .iter()
        .map(|l| {
            let r = l.to_array();
            for (k, &idx) in r.iter().enumerate() {
                let classes = if k < 2 { params.t_row } else { params.t_col };
                if idx >= classes {
                    return Err(Error::InvalidIndex { index: idx, classes });
                }
            }
            Ok(r)
        })
        .collect()
}

/// Loss summed (not averaged) over nodes, and its gradient.
pub(crate) fn loss_and_grad_sum(
    params: &ModelParams,
    ax_row: &Array2<f64>,
    ax_col: &Array2<f64>,
    labels: &[LogicalLocation],
    objective: &Objective,
) -> Result<(f64, ModelParams)> {
    if ax_row.nrows() != labels.len() {
        return Err(Error::ShapeError(format!("{} nodes but {} labels", ax_row.nrows(), labels.len())));
    }
    let r = targets(labels, params)?;
    let act = activations(params, [ax_row, ax_col]);
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    let mut d_hidden = [Array2::zeros(act.hidden[0].dim()), Array2::zeros(act.hidden[1].dim())];
    for (k, p) in act.probs.iter().enumerate() {
        let mut dz = Array2::zeros(p.dim());
        for ((i, t), &pv) in p.indexed_iter() {
            let (l, g) = objective.term(k, t, pv, t < r[i][k]);
            loss += l;
            dz[[i, t]] = g;
        }
        let g = gcn_index(k);
        grads.heads[k].weight = act.hidden[g].t().dot(&dz);
        grads.heads[k].bias = dz.sum_axis(Axis(0));
        d_hidden[g] = &d_hidden[g] + &dz.dot(&params.heads[k].weight.t());
    }
    for (g, ax) in [ax_row, ax_col].into_iter().enumerate() {
        let mut d_pre = std::mem::take(&mut d_hidden[g]);
        d_pre.zip_mut_with(&act.pre[g], |d, &z| {
            if z <= 0.0 {
                *d = 0.0;
            }
        });
        let layer = if g == 0 { &mut grads.row_gcn } else { &mut grads.col_gcn };
        layer.weight = ax.t().dot(&d_pre);
        layer.bias = d_pre.sum_axis(Axis(0));
    }
    Ok((loss, grads))
}

/// Sum of the four heads' ordinal losses, each averaged over nodes, and its
/// exact gradient with respect to every parameter.
pub fn loss_and_grad(
    params: &ModelParams,
    x: ArrayView2<'_, f64>,
    a_row: ArrayView2<'_, f64>,
    a_col: ArrayView2<'_, f64>,
    labels: &[LogicalLocation],
    objective: &Objective,
) -> Result<(f64, ModelParams)> {
    check_shapes(params, x, a_row, a_col)?;
    if labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (loss, mut grads) = loss_and_grad_sum(params, &a_row.dot(&x), &a_col.dot(&x), labels, objective)?;
    let inv = 1.0 / labels.len() as f64;
    grads.scale(inv);
    Ok((loss * inv, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ordinal::{ordinal_ce_loss, ordinal_focal_loss};
    use ndarray::{array, Array1};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_with_zero_heads_gives_half() {
        let mut p = ModelParams::zeros(3, 3, 4, 3).unwrap();
        p.row_gcn.weight = Array2::eye(3);
        p.col_gcn.weight = Array2::eye(3);
        let x = array![[1.0, 2.0, 3.0], [-1.0, 0.5, 0.0]];
        let eye = Array2::eye(2);
        let out = forward(&p, x.view(), eye.view(), eye.view()).unwrap();
        assert_eq!(out.head(Head::RowStart).dim(), (2, 3));
        assert_eq!(out.head(Head::ColEnd).dim(), (2, 2));
        assert!(out.0.iter().all(|m| m.iter().all(|&v| v == 0.5)));
    }

    #[test]
    fn single_node_by_hand() {
        // d = 2, h = 2, T = 3
        let mut p = ModelParams::zeros(2, 2, 3, 3).unwrap();
        p.row_gcn.weight = array![[1.0, -1.0], [0.5, 2.0]];
        p.row_gcn.bias = Array1::from(vec![0.0, -0.5]);
        p.heads[0].weight = array![[1.0, 0.0], [0.0, 1.0]];
        p.heads[0].bias = Array1::from(vec![0.0, -1.0]);
        let x = array![[2.0, 1.0]];
        let one = array![[1.0]];
        let out = forward(&p, x.view(), one.view(), one.view()).unwrap();
        // pre = (2 + 0.5, -2 + 2 - 0.5) = (2.5, -0.5); hidden = (2.5, 0)
        // logits = (2.5, -1)
        let want = [1.0 / (1.0 + (-2.5f64).exp()), 1.0 / (1.0 + 1.0f64.exp())];
        let got = out.head(Head::RowStart);
        assert!((got[[0, 0]] - want[0]).abs() < 1e-15);
        assert!((got[[0, 1]] - want[1]).abs() < 1e-15);
        // column GCN is all zeros
        assert!(out.head(Head::ColStart).iter().all(|&v| v == 0.5));
    }

    #[test]
    fn shape_errors() {
        let p = ModelParams::zeros(3, 2, 2, 2).unwrap();
        let x = Array2::zeros((2, 4));
        let eye = Array2::eye(2);
        assert!(matches!(forward(&p, x.view(), eye.view(), eye.view()), Err(Error::ShapeError(_))));
        let x = Array2::zeros((2, 3));
        let eye3: Array2<f64> = Array2::eye(3);
        assert!(matches!(forward(&p, x.view(), eye.view(), eye3.view()), Err(Error::ShapeError(_))));
    }

    #[test]
    fn output_bias_gradient_with_zero_heads() {
        let p = ModelParams::zeros(2, 2, 3, 2).unwrap();
        let x = array![[1.0, 1.0]];
        let one = array![[1.0]];
        let labels = [LogicalLocation::new(1, 2, 0, 1)];
        let obj = Objective::cross_entropy(3, 2);
        let (loss, g) = loss_and_grad(&p, x.view(), one.view(), one.view(), &labels, &obj).unwrap();
        // logistic(0) - q per threshold
        assert_eq!(g.heads[0].bias.to_vec(), vec![-0.5, 0.5]);
        assert_eq!(g.heads[1].bias.to_vec(), vec![-0.5, -0.5]);
        assert_eq!(g.heads[2].bias.to_vec(), vec![0.5]);
        assert_eq!(g.heads[3].bias.to_vec(), vec![-0.5]);
        assert!((loss - 6.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn loss_matches_standalone_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (n, d, h, tr, tc) = (5, 4, 3, 4, 3);
        let p = ModelParams::init(d, h, tr, tc, &mut rng).unwrap();
        let x = Array2::from_shape_simple_fn((n, d), || rng.gen_range(-1.0..1.0));
        let a = Array2::from_shape_simple_fn((n, n), || rng.gen_range(0.0..0.4));
        let labels: Vec<_> = (0..n).map(|i| LogicalLocation::new(i % tr, (i + 1) % tr, i % tc, (i * 2) % tc)).collect();
        let probs = forward(&p, x.view(), a.view(), a.view()).unwrap();
        let idx = |k: usize| labels.iter().map(|l| l.to_array()[k]).collect::<Vec<_>>();

        let ce = Objective::cross_entropy(tr, tc);
        let (loss, _) = loss_and_grad(&p, x.view(), a.view(), a.view(), &labels, &ce).unwrap();
        let want: f64 = (0..4).map(|k| ordinal_ce_loss(&probs.0[k], &idx(k)).unwrap()).sum();
        assert!((loss - want).abs() < 1e-12);

        let gammas = [vec![1.0, 1.5, 2.0], vec![2.0, 1.2, 1.0], vec![1.1, 1.9], vec![1.3, 1.0]];
        for variant in [FocalVariant::AsPrinted, FocalVariant::Conventional] {
            let obj = Objective { kind: LossKind::Focal, variant, gammas: gammas.clone() };
            let (loss, _) = loss_and_grad(&p, x.view(), a.view(), a.view(), &labels, &obj).unwrap();
            let want: f64 =
                (0..4).map(|k| ordinal_focal_loss(&probs.0[k], &idx(k), &gammas[k], variant).unwrap()).sum();
            assert!((loss - want).abs() < 1e-12);
        }
    }

    #[test]
    fn labels_must_fit_heads() {
        let p = ModelParams::zeros(2, 2, 2, 2).unwrap();
        let x = array![[1.0, 1.0]];
        let one = array![[1.0]];
        let obj = Objective::cross_entropy(2, 2);
        let bad = [LogicalLocation::new(0, 2, 0, 0)];
        assert!(matches!(
            loss_and_grad(&p, x.view(), one.view(), one.view(), &bad, &obj),
            Err(Error::InvalidIndex { index: 2, .. })
        ));
        assert!(matches!(
            loss_and_grad(
                &p,
                Array2::zeros((0, 2)).view(),
                Array2::zeros((0, 0)).view(),
                Array2::zeros((0, 0)).view(),
                &[],
                &obj
            ),
            Err(Error::EmptyBatch)
        ));
    }
}
