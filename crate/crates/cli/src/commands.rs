use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use tgraph::datagen::{generate, render_segmap, GenConfig};
use tgraph::dataset::{base_dir, read_jsonl, write_jsonl, DatasetRecord};
use tgraph::graph::{
    ablate_nodes, training_table_from_candidates, FeatureConfig, Raster, DEFAULT_ALPHA, HISTORICAL_ALPHA,
    HISTORICAL_PRUNE_K,
};
use tgraph::metrics::evaluate_dataset;
use tgraph::model::{inverted_count, predict, train_with, Model, TrainConfig};
use tgraph::segmap::SegMap;
use tgraph::spatial::detect_cells;
use tgraph::table::validate_table;
use tgraph::transform::{same_axis_matrix, to_csv, to_html, to_xml, Axis};
use tgraph::{CellNode, Error, Result, TableGraph};

use crate::{
    BoxesArgs, Command, ConvertArgs, DatagenArgs, DetectArgs, EvalArgs, Format, PredictArgs, Profile, TrainArgs,
    ValidateArgs,
};

pub(crate) fn dispatch(c: Command) -> Result<()> {
    match c {
        Command::Datagen(a) => datagen(&a),
        Command::Train(a) => train(&a),
        Command::Predict(a) => predict_cmd(&a),
        Command::Boxes(a) => boxes(&a),
        Command::Eval(a) => eval(&a),
        Command::Convert(a) => convert(&a),
        Command::Validate(a) => validate(&a),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn write_stdout(bytes: &[u8]) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(bytes).and_then(|_| out.flush()).map_err(|e| Error::Io { path: PathBuf::from("<stdout>"), source: e })
}

fn read(path: &Path, lenient: bool) -> Result<Vec<DatasetRecord>> {
    read_jsonl(path, !lenient)
}

fn opening(profile: Profile, d: &DetectArgs) -> bool {
    d.open || profile == Profile::Historical
}

fn keep_fraction(drop: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&drop) {
        return Err(Error::Config(format!("drop fraction must lie in [0, 1), got {drop}")));
    }
    Ok(1.0 - drop)
}

fn segmap_of(rec: &DatasetRecord, base: &Path) -> Result<SegMap> {
    rec.load_segmap(base)?.ok_or_else(|| Error::Parse {
        path: rec.table.table_id.clone(),
        message: "table has no segmentation map".into(),
    })
}

/// Table whose cells are the boxes detected in `map`, numbered in detection order.
fn detected_table(rec: &DatasetRecord, map: &SegMap, open: bool, min_area: usize) -> Result<TableGraph> {
    let mut t = TableGraph::new(rec.table.table_id.clone(), rec.table.width, rec.table.height);
    for (i, b) in detect_cells(map, open, min_area).into_iter().enumerate() {
        t.cells.push(CellNode::new(i as u32, b.to_center()?));
    }
    Ok(t)
}

fn datagen(a: &DatagenArgs) -> Result<()> {
    let cfg = GenConfig {
        count: a.count,
        max_rows: a.max_rows,
        max_cols: a.max_cols,
        span_prob: a.span_prob,
        image_w: a.image_w,
        image_h: a.image_h,
        jitter: a.jitter,
        row_weighting: a.row_weighting.into(),
        seed: a.seed,
        with_text: a.with_text,
    };
    let mut records = generate(&cfg)?;
    if a.segmaps {
        let dir = base_dir(&a.out);
        let maps: Vec<SegMap> = records.par_iter().map(|r| render_segmap(&r.table)).collect::<Result<_>>()?;
        for (rec, map) in records.iter_mut().zip(&maps) {
            let name = format!("{}.pgm", rec.table.table_id);
            map.write_pgm(&dir.join(&name))?;
            rec.segmap_path = Some(name);
        }
    }
    write_jsonl(&a.out, &records)?;
    eprintln!("wrote {} tables to {}", records.len(), a.out.display());
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let historical = a.profile == Profile::Historical;
    let cfg = TrainConfig {
        learning_rate: a.learning_rate,
        momentum: a.momentum,
        epochs: a.epochs,
        seed: a.seed,
        hidden: a.hidden,
        loss: a.loss.into(),
        focal_variant: a.focal_variant.into(),
        decode_threshold: a.decode_threshold,
        alpha: a.alpha.unwrap_or(if historical { HISTORICAL_ALPHA } else { DEFAULT_ALPHA }),
        prune_k: a.prune_k.or(historical.then_some(HISTORICAL_PRUNE_K)),
        features: FeatureConfig { include_log_size: !a.no_log_size, patch_grid: a.patch_grid },
        t_row: a.t_row,
        t_col: a.t_col,
    };
    cfg.validate()?;
    let records = read(&a.data, a.common.lenient)?;
    let base = base_dir(&a.data);
    let need_maps = a.from_segmaps || a.patch_grid.is_some();
    let maps: Vec<Option<SegMap>> = if need_maps {
        records.par_iter().map(|r| segmap_of(r, &base).map(Some)).collect::<Result<_>>()?
    } else {
        vec![None; records.len()]
    };
    let open = opening(a.profile, &a.detect);
    let tables: Vec<TableGraph> = if a.from_segmaps {
        records
            .par_iter()
            .zip(&maps)
            .map(|(r, m)| {
                let m = m.as_ref().expect("maps loaded for segmap training");
                let cands = detect_cells(m, open, a.detect.min_area);
                training_table_from_candidates(&cands, &r.table)
            })
            .collect::<Result<_>>()?
    } else {
        records.iter().map(|r| r.table.clone()).collect()
    };
    let rasters: Option<Vec<Raster>> =
        a.patch_grid.map(|_| maps.iter().map(|m| Raster::from_segmap(m.as_ref().expect("maps loaded"))).collect());
    let log_every = a.log_every.filter(|&n| n > 0);
    let model = train_with(&tables, rasters.as_deref(), &cfg, |epoch, loss| {
        if log_every.is_some_and(|n| epoch % n == 0) {
            eprintln!("epoch {epoch}: loss {loss:.6}");
        }
    })?;
    model.save(&a.out)?;
    eprintln!(
        "trained on {} tables ({} cells), T_row {}, T_col {}; model written to {}",
        tables.len(),
        tables.iter().map(TableGraph::len).sum::<usize>(),
        model.params.t_row,
        model.params.t_col,
        a.out.display()
    );
    Ok(())
}

fn predict_cmd(a: &PredictArgs) -> Result<()> {
    let model = Model::load(&a.model)?;
    let records = read(&a.data, a.common.lenient)?;
    let base = base_dir(&a.data);
    let keep = a.drop_fraction.map(keep_fraction).transpose()?;
    let open = opening(a.profile, &a.detect);
    let needs_image = model.graph.features.patch_grid.is_some();
    let out: Vec<DatasetRecord> = records
        .par_iter()
        .map(|rec| {
            let map = if a.from_segmaps || needs_image { Some(segmap_of(rec, &base)?) } else { None };
            let mut input = match (&map, a.from_segmaps) {
                (Some(m), true) => detected_table(rec, m, open, a.detect.min_area)?,
                _ => {
                    let mut t = rec.table.clone();
                    t.cells.iter_mut().for_each(|c| c.logical = None);
                    t
                }
            };
            if let Some(k) = keep {
                input = ablate_nodes(&input, k, a.drop_seed)?;
            }
            let raster = map.as_ref().filter(|_| needs_image).map(Raster::from_segmap);
            let table = predict(&model, &input, raster.as_ref())?;
            Ok(DatasetRecord { table, segmap_path: rec.segmap_path.clone() })
        })
        .collect::<Result<_>>()?;
    write_jsonl(&a.out, &out)?;
    let inverted: usize = out.iter().map(|r| inverted_count(&r.table)).sum();
    let cells: usize = out.iter().map(|r| r.table.len()).sum();
    eprintln!("predicted {cells} cells in {} tables; {inverted} with start after end", out.len());
    Ok(())
}

fn boxes(a: &BoxesArgs) -> Result<()> {
    let map = SegMap::read_pgm(&a.segmap)?;
    let found = detect_cells(&map, opening(a.profile, &a.detect), a.detect.min_area);
    let list: Vec<[f64; 4]> = found.iter().map(|b| b.to_array()).collect();
    let mut text = serde_json::to_string(&list).expect("box list serializes");
    text.push('\n');
    match &a.out {
        Some(p) => write_file(p, text.as_bytes()),
        None => write_stdout(text.as_bytes()),
    }
}

fn eval(a: &EvalArgs) -> Result<()> {
    let gt = read(&a.gt, a.common.lenient)?;
    let pred = read(&a.pred, a.common.lenient)?;
    let keep = a.drop_fraction.map(keep_fraction).transpose()?;
    let mut by_id: HashMap<&str, &TableGraph> = HashMap::new();
    for r in &pred {
        if by_id.insert(r.table.table_id.as_str(), &r.table).is_some() {
            return Err(Error::Parse {
                path: a.pred.display().to_string(),
                message: format!("table id {} appears twice", r.table.table_id),
            });
        }
    }
    let mut paired = Vec::with_capacity(gt.len());
    for g in &gt {
        let p = match by_id.remove(g.table.table_id.as_str()) {
            Some(p) => p.clone(),
            None => {
                eprintln!("warning: no prediction for table {}; scoring it as empty", g.table.table_id);
                TableGraph::new(g.table.table_id.clone(), g.table.width, g.table.height)
            }
        };
        paired.push(match keep {
            Some(k) => ablate_nodes(&p, k, a.drop_seed)?,
            None => p,
        });
    }
    if !by_id.is_empty() {
        eprintln!("warning: {} predicted tables have no ground truth and were ignored", by_id.len());
    }
    let report = evaluate_dataset(paired.iter().zip(gt.iter().map(|r| &r.table)))?;
    let mut text = report.to_json();
    text.push('\n');
    match &a.report {
        Some(p) => write_file(p, text.as_bytes()),
        None => write_stdout(text.as_bytes()),
    }
}

fn adjacency_json(t: &TableGraph) -> Result<String> {
    let bits =
        |m: Vec<Vec<bool>>| -> Vec<Vec<u8>> { m.into_iter().map(|r| r.into_iter().map(u8::from).collect()).collect() };
    let doc = serde_json::json!({
        "id": t.table_id,
        "cells": t.cells.iter().map(|c| c.id).collect::<Vec<_>>(),
        "same_row": bits(same_axis_matrix(t, Axis::Row)?),
        "same_col": bits(same_axis_matrix(t, Axis::Column)?),
    });
    Ok(format!("{doc}\n"))
}

fn convert(a: &ConvertArgs) -> Result<()> {
    let records = read(&a.input, a.common.lenient)?;
    let ext = match a.format {
        Format::Csv => "csv",
        Format::Xml => "xml",
        Format::Html => "html",
        Format::Adjacency => "json",
    };
    if let Some(dir) = &a.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
    }
    let mut stdout = Vec::new();
    for r in &records {
        let t = &r.table;
        let text = match a.format {
            Format::Csv => to_csv(t),
            Format::Xml => Ok(to_xml(t)),
            Format::Html => to_html(t),
            Format::Adjacency => adjacency_json(t),
        }
        .map_err(|e| match e {
            Error::OverlapConflict { a, b, row, col } => Error::GeometryError(format!(
                "table {}: cells {a} and {b} both claim row {row}, column {col}",
                t.table_id
            )),
            other => other,
        })?;
        match &a.out_dir {
            Some(dir) => write_file(&dir.join(format!("{}.{ext}", t.table_id)), text.as_bytes())?,
            None => stdout.extend_from_slice(text.as_bytes()),
        }
    }
    if a.out_dir.is_none() {
        write_stdout(&stdout)?;
    }
    Ok(())
}

fn validate(a: &ValidateArgs) -> Result<()> {
    let records = read(&a.data, a.common.lenient)?;
    let mut lines = String::new();
    let mut bad_tables = 0;
    for r in &records {
        let v = validate_table(&r.table, !a.allow_unlabeled, !a.no_grid_check);
        if !v.is_empty() {
            bad_tables += 1;
        }
        for violation in v {
            lines.push_str(&format!("{}: {violation}\n", r.table.table_id));
        }
    }
    write_stdout(lines.as_bytes())?;
    if bad_tables > 0 {
        return Err(Error::GeometryError(format!("{bad_tables} of {} tables failed validation", records.len())));
    }
    eprintln!("{} tables valid", records.len());
    Ok(())
}
