//! Analytic gradients against central finite differences, plus forward-pass
//! properties that hold for any parameters.

use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tgraph::graph::normalize_adjacency;
use tgraph::model::{decode_slice, encode, forward, loss_and_grad, FocalVariant, LossKind, ModelParams, Objective};
use tgraph::LogicalLocation;

struct Instance {
    params: ModelParams,
    x: Array2<f64>,
    a_row: Array2<f64>,
    a_col: Array2<f64>,
    labels: Vec<LogicalLocation>,
    gammas: [Vec<f64>; 4],
}

fn random_adjacency(n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let w = rng.gen_range(0.0..1.0);
            a[[i, j]] = w;
            a[[j, i]] = w;
        }
    }
    normalize_adjacency(&a)
}

fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=12);
    let d = rng.gen_range(1..=8);
    let h = rng.gen_range(1..=8);
    let t_row = rng.gen_range(2..=6);
    let t_col = rng.gen_range(2..=6);
    let mut params = ModelParams::init(d, h, t_row, t_col, &mut rng).unwrap();
    // nonzero biases so that every parameter is exercised
    let count = params.num_params();
    for i in 0..count {
        *params.param_mut(i) += rng.gen_range(-0.3..0.3);
    }
    let x = Array2::from_shape_simple_fn((n, d), || rng.gen_range(-1.0..1.0));
    let labels = (0..n)
        .map(|_| {
            LogicalLocation::new(
                rng.gen_range(0..t_row),
                rng.gen_range(0..t_row),
                rng.gen_range(0..t_col),
                rng.gen_range(0..t_col),
            )
        })
        .collect();
    let mut g = |t: usize| (0..t - 1).map(|_| rng.gen_range(1.0..=2.0)).collect::<Vec<_>>();
    let gammas = [g(t_row), g(t_row), g(t_col), g(t_col)];
    let a_row = random_adjacency(n, &mut rng);
    let a_col = random_adjacency(n, &mut rng);
    Instance { params, x, a_row, a_col, labels, gammas }
}

fn objectives(inst: &Instance) -> Vec<Objective> {
    let mut out = vec![Objective::cross_entropy(inst.params.t_row, inst.params.t_col)];
    for variant in [FocalVariant::AsPrinted, FocalVariant::Conventional] {
        out.push(Objective { kind: LossKind::Focal, variant, gammas: inst.gammas.clone() });
    }
    out
}

fn loss(inst: &Instance, params: &ModelParams, obj: &Objective) -> f64 {
    loss_and_grad(params, inst.x.view(), inst.a_row.view(), inst.a_col.view(), &inst.labels, obj).unwrap().0
}

#[test]
fn analytic_gradients_match_central_differences() {
    const STEP: f64 = 1e-5;
    let mut checked = 0;
    for seed in 0..25 {
        let inst = instance(seed);
        for obj in objectives(&inst) {
            let (_, grads) =
                loss_and_grad(&inst.params, inst.x.view(), inst.a_row.view(), inst.a_col.view(), &inst.labels, &obj)
                    .unwrap();
            let analytic = grads.flatten();
            for (i, &g) in analytic.iter().enumerate() {
                let mut plus = inst.params.clone();
                *plus.param_mut(i) += STEP;
                let mut minus = inst.params.clone();
                *minus.param_mut(i) -= STEP;
                let numeric = (loss(&inst, &plus, &obj) - loss(&inst, &minus, &obj)) / (2.0 * STEP);
                let rel = (g - numeric).abs() / g.abs().max(1.0);
                assert!(
                    rel <= 1e-4,
                    "seed {seed} {:?}/{:?} param {i}: analytic {g} numeric {numeric}",
                    obj.kind,
                    obj.variant
                );
            }
            checked += 1;
        }
    }
    assert!(checked >= 60);
}

#[test]
fn one_small_step_lowers_the_loss() {
    for seed in 100..110 {
        let inst = instance(seed);
        for obj in objectives(&inst) {
            let (before, grads) =
                loss_and_grad(&inst.params, inst.x.view(), inst.a_row.view(), inst.a_col.view(), &inst.labels, &obj)
                    .unwrap();
            let mut stepped = inst.params.clone();
            stepped.add_scaled(&grads, -1e-2);
            assert!(loss(&inst, &stepped, &obj) < before, "seed {seed}");
        }
    }
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        p.swap(i, rng.gen_range(0..=i));
    }
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_is_permutation_equivariant(seed in 0u64..10_000, perm_seed in 0u64..10_000) {
        let inst = instance(seed);
        let n = inst.x.nrows();
        let p = permutation(n, perm_seed);
        let x = Array2::from_shape_fn(inst.x.dim(), |(i, j)| inst.x[[p[i], j]]);
        let conj = |a: &Array2<f64>| Array2::from_shape_fn((n, n), |(i, j)| a[[p[i], p[j]]]);
        let base = forward(&inst.params, inst.x.view(), inst.a_row.view(), inst.a_col.view()).unwrap();
        let moved = forward(&inst.params, x.view(), conj(&inst.a_row).view(), conj(&inst.a_col).view()).unwrap();
        for (b, m) in base.0.iter().zip(&moved.0) {
            for i in 0..n {
                for t in 0..b.ncols() {
                    prop_assert!((m[[i, t]] - b[[p[i], t]]).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn decode_inverts_encode(classes in 2usize..=60, pick in 0usize..60) {
        let r = pick % classes;
        let q = encode(r, classes).unwrap();
        prop_assert!(q.0.windows(2).all(|w| w[0] >= w[1]));
        prop_assert_eq!(decode_slice(&q.as_probabilities(), 0.5), r);
    }
}
