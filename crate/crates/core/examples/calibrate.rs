//! Trains on generated tables and reports held-out logical accuracy at
//! several epoch counts. Used to pick the default epoch budget.
//!
//! Settings come from environment variables:
//! `SPAN` (span probability, 0.0), `LOSS` (`ce` | `focal`), `VARIANT`
//! (`as-printed` | `conventional`), `EPOCHS` (comma list, `100,300`),
//! `HIDDEN` (64), `LR` (0.1), `ALPHA` (3), `LOG_SIZE` (1), `TRAIN` (500), `TEST` (100).

use std::env;
use std::time::Instant;

use tgraph::datagen::{generate, GenConfig};
use tgraph::metrics::evaluate_dataset;
use tgraph::model::{predict, train_with, FocalVariant, LossKind, TrainConfig};
use tgraph::TableGraph;

fn var<T: std::str::FromStr>(name: &str, default: T) -> T {
    env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn tables(count: usize, seed: u64, span_prob: f64) -> Vec<TableGraph> {
    let cfg = GenConfig { count, seed, span_prob, ..GenConfig::default() };
    generate(&cfg).expect("generation succeeds").into_iter().map(|r| r.table).collect()
}

fn main() {
    let span: f64 = var("SPAN", 0.0);
    let train_set = tables(var("TRAIN", 500), 1, span);
    let test_set = tables(var("TEST", 100), 2, span);
    let mut cfg = TrainConfig {
        hidden: var("HIDDEN", 64),
        learning_rate: var("LR", 0.1),
        alpha: var("ALPHA", 3.0),
        ..TrainConfig::default()
    };
    cfg.features.include_log_size = var("LOG_SIZE", 1u8) == 1;
    cfg.loss = match env::var("LOSS").as_deref() {
        Ok("ce") => LossKind::Ce,
        _ => LossKind::Focal,
    };
    cfg.focal_variant = match env::var("VARIANT").as_deref() {
        Ok("conventional") => FocalVariant::Conventional,
        _ => FocalVariant::AsPrinted,
    };
    let budgets: Vec<usize> = env::var("EPOCHS")
        .unwrap_or_else(|_| "100,300".into())
        .split(',')
        .filter_map(|s| s.trim().parse().ok())
        .collect();
    for epochs in budgets {
        let start = Instant::now();
        let mut last = f64::NAN;
        let model = match train_with(&train_set, None, &TrainConfig { epochs, ..cfg.clone() }, |_, l| last = l) {
            Ok(m) => m,
            Err(e) => {
                println!("epochs {epochs}: {e}");
                continue;
            }
        };
        let preds: Vec<TableGraph> =
            test_set.iter().map(|t| predict(&model, t, None).expect("prediction succeeds")).collect();
        let fit: Vec<TableGraph> =
            train_set.iter().map(|t| predict(&model, t, None).expect("prediction succeeds")).collect();
        let held = evaluate_dataset(preds.iter().zip(&test_set)).expect("evaluation succeeds");
        let seen = evaluate_dataset(fit.iter().zip(&train_set)).expect("evaluation succeeds");
        println!(
            "epochs {epochs:5}  loss {last:.5}  train A_all {:.4}  held-out A_all {:.4} (rs {:.3} re {:.3} cs {:.3} ce {:.3})  {:.1}s",
            seen.a_all,
            held.a_all,
            held.a_row_start,
            held.a_row_end,
            held.a_col_start,
            held.a_col_end,
            start.elapsed().as_secs_f64()
        );
    }
}
