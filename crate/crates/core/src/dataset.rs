//! JSON-lines dataset files, one table per line.
//!
//! ```text
//! {"id": str, "width": int, "height": int,
//!  "cells": [{"id": int, "bbox": [x_min, y_min, width, height],
//!             "logical": [rs, re, cs, ce] | null, "text": str | null}],
//!  "segmap": str | null}
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::segmap::SegMap;
use crate::table::{corner_to_center, CellNode, CornerBox, LogicalLocation, TableGraph};

/// A table plus the (optional) path of its segmentation map, as written in the file.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub table: TableGraph,
    pub segmap_path: Option<String>,
}

impl DatasetRecord {
    pub fn new(table: TableGraph) -> Self {
        DatasetRecord { table, segmap_path: None }
    }

    /// Loads the referenced segmentation map, resolving relative paths against
    /// `base_dir`, and checks that its size matches the table.
    pub fn load_segmap(&self, base_dir: &Path) -> Result<Option<SegMap>> {
        let Some(rel) = &self.segmap_path else { return Ok(None) };
        let path = base_dir.join(rel);
        let map = SegMap::read_pgm(&path)?;
        if map.width != self.table.width as usize || map.height != self.table.height as usize {
            return Err(Error::parse(
                path.display().to_string(),
                format!(
                    "segmentation map is {}x{} but table {} is {}x{}",
                    map.width, map.height, self.table.table_id, self.table.width, self.table.height
                ),
            ));
        }
        Ok(Some(map))
    }
}

#[derive(Serialize, Deserialize)]
struct CellJson {
    id: u32,
    bbox: [f64; 4],
    #[serde(default)]
    logical: Option<[usize; 4]>,
    #[serde(default)]
    text: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct TableJson {
    id: String,
    width: u32,
    height: u32,
    cells: Vec<CellJson>,
    #[serde(default)]
    segmap: Option<String>,
}

const TABLE_KEYS: &[&str] = &["id", "width", "height", "cells", "segmap"];
const CELL_KEYS: &[&str] = &["id", "bbox", "logical", "text"];

fn reject_unknown(obj: &Value, allowed: &[&str], what: &str) -> std::result::Result<(), String> {
    if let Some(map) = obj.as_object() {
        if let Some(k) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(format!("unknown {what} field {k:?}"));
        }
    }
    Ok(())
}

/// Parses one JSONL line. In strict mode unknown fields are an error;
/// otherwise they are ignored.
pub fn parse_record(line: &str, strict: bool) -> std::result::Result<DatasetRecord, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if strict {
        reject_unknown(&value, TABLE_KEYS, "table")?;
        if let Some(cells) = value.get("cells").and_then(Value::as_array) {
            for c in cells {
                reject_unknown(c, CELL_KEYS, "cell")?;
            }
        }
    }
    let raw: TableJson = serde_json::from_value(value).map_err(|e| e.to_string())?;
    if raw.width == 0 || raw.height == 0 {
        return Err(format!("table {}: width and height must be positive", raw.id));
    }
    let mut table = TableGraph::new(raw.id, raw.width, raw.height);
    for c in raw.cells {
        let [x, y, w, h] = c.bbox;
        let bbox = corner_to_center(CornerBox { x_min: x, y_min: y, width: w, height: h })
            .map_err(|e| format!("cell {}: {e}", c.id))?;
        table.cells.push(CellNode {
            id: c.id,
            bbox,
            logical: c.logical.map(|[rs, re, cs, ce]| LogicalLocation::new(rs, re, cs, ce)),
            text: c.text,
        });
    }
    Ok(DatasetRecord { table, segmap_path: raw.segmap })
}

/// Serializes a record as one JSON line (no trailing newline).
pub fn record_to_line(rec: &DatasetRecord) -> String {
    let t = &rec.table;
    let json = TableJson {
        id: t.table_id.clone(),
        width: t.width,
        height: t.height,
        cells: t
            .cells
            .iter()
            .map(|c| CellJson {
                id: c.id,
                bbox: c.corner().to_array(),
                logical: c.logical.map(|l| l.to_array()),
                text: c.text.clone(),
            })
            .collect(),
        segmap: rec.segmap_path.clone(),
    };
    serde_json::to_string(&json).expect("table serialization is infallible")
}

pub fn read_jsonl(path: &Path, strict: bool) -> Result<Vec<DatasetRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_record(&line, strict).map_err(|m| Error::parse(format!("{}:{}", path.display(), i + 1), m))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    let mut buf = Vec::new();
    write_records(&mut buf, records).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn write_records<W: Write>(mut out: W, records: &[DatasetRecord]) -> std::io::Result<()> {
    for r in records {
        writeln!(out, "{}", record_to_line(r))?;
    }
    Ok(())
}

/// Directory against which a dataset's relative segmap paths resolve.
pub fn base_dir(dataset: &Path) -> PathBuf {
    dataset.parent().map(Path::to_path_buf).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: &str = r#"{"id":"a","width":100,"height":50,"cells":[{"id":0,"bbox":[10.0,20.0,30.0,20.0],"logical":[0,0,0,1],"text":"x,y"},{"id":1,"bbox":[50.0,5.0,10.0,10.0],"logical":null,"text":null}],"segmap":null}"#;

    #[test]
    fn parses_and_writes_field_order() {
        let rec = parse_record(LINE, true).unwrap();
        assert_eq!(rec.table.cells[0].bbox.cx, 25.0);
        assert_eq!(rec.table.cells[0].logical, Some(LogicalLocation::new(0, 0, 0, 1)));
        assert_eq!(rec.table.cells[1].logical, None);
        assert_eq!(record_to_line(&rec), LINE);
    }

    #[test]
    fn strict_rejects_unknown_fields() {
        let extra = LINE.replacen("\"segmap\":null", "\"segmap\":null,\"source\":\"x\"", 1);
        assert!(parse_record(&extra, true).unwrap_err().contains("source"));
        assert!(parse_record(&extra, false).is_ok());
        let cell_extra = LINE.replacen("\"text\":\"x,y\"", "\"text\":\"x,y\",\"score\":0.5", 1);
        assert!(parse_record(&cell_extra, true).is_err());
        assert!(parse_record(&cell_extra, false).is_ok());
    }

    #[test]
    fn bad_box_is_a_parse_error() {
        let bad = LINE.replacen("[10.0,20.0,30.0,20.0]", "[10.0,20.0,0.0,20.0]", 1);
        assert!(parse_record(&bad, false).unwrap_err().contains("cell 0"));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        let rec = parse_record(LINE, true).unwrap();
        write_jsonl(&p, &[rec.clone(), rec.clone()]).unwrap();
        assert_eq!(read_jsonl(&p, true).unwrap(), vec![rec.clone(), rec]);
    }

    #[test]
    fn segmap_size_checked() {
        let dir = tempfile::tempdir().unwrap();
        SegMap::new(10, 10).write_pgm(&dir.path().join("a.pgm")).unwrap();
        let mut rec = parse_record(LINE, true).unwrap();
        rec.segmap_path = Some("a.pgm".into());
        assert!(rec.load_segmap(dir.path()).is_err());
        rec.table.width = 10;
        rec.table.height = 10;
        assert!(rec.load_segmap(dir.path()).unwrap().is_some());
    }
}
