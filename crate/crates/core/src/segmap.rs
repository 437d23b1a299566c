//! Segmentation maps over the classes background / cell / boundary, stored as
//! binary PGM (`P5`, maxval 255) with the class id as the gray value.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const BACKGROUND: u8 = 0;
pub const CELL: u8 = 1;
pub const BOUNDARY: u8 = 2;
pub const NUM_CLASSES: u8 = 3;

/// Row-major `height x width` grid of class ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegMap {
    pub width: usize,
    pub height: usize,
    labels: Vec<u8>,
}

impl SegMap {
    /// All-background map.
    pub fn new(width: usize, height: usize) -> Self {
        SegMap { width, height, labels: vec![BACKGROUND; width * height] }
    }

    pub fn from_labels(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::ShapeError(format!("{} labels for a {width}x{height} map", labels.len())));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= NUM_CLASSES) {
            return Err(Error::parse("segmap", format!("class id {bad} outside {{0, 1, 2}}")));
        }
        Ok(SegMap { width, height, labels })
    }

    /// Builds a map from text rows where `.`/`0` = background, `#`/`1` = cell,
    /// `+`/`2` = boundary. Handy for tests.
    pub fn from_ascii(rows: &[&str]) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let labels = rows
            .iter()
            .flat_map(|r| {
                assert_eq!(r.len(), width, "ragged ascii map");
                r.bytes().map(|b| match b {
                    b'#' | b'1' => CELL,
                    b'+' | b'2' => BOUNDARY,
                    _ => BACKGROUND,
                })
            })
            .collect();
        SegMap { width, height, labels }
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    /// Panics on a class id outside `{0, 1, 2}`.
    #[inline]
    pub fn set(&mut self, row: usize, col: usize, class: u8) {
        assert!(class < NUM_CLASSES, "class id {class} out of range");
        self.labels[row * self.width + col] = class;
    }

    pub fn count(&self, class: u8) -> usize {
        self.labels.iter().filter(|&&l| l == class).count()
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.labels);
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_pgm()).map_err(|e| Error::io(path, e))
    }

    pub fn read_pgm(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::parse_pgm(&bytes).map_err(|m| Error::parse(path.display().to_string(), m))
    }

    pub fn parse_pgm(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut pos = 0;
        let magic = header_token(bytes, &mut pos)?;
        if magic != "P5" {
            return Err(format!("expected binary PGM magic P5, found {magic:?}"));
        }
        let width: usize = parse_num(&header_token(bytes, &mut pos)?, "width")?;
        let height: usize = parse_num(&header_token(bytes, &mut pos)?, "height")?;
        let maxval: usize = parse_num(&header_token(bytes, &mut pos)?, "maxval")?;
        if maxval != 255 {
            return Err(format!("maxval must be 255, found {maxval}"));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let need = width * height;
        let raster = bytes
            .get(pos..pos + need)
            .ok_or_else(|| format!("raster truncated: need {need} bytes, have {}", bytes.len().saturating_sub(pos)))?;
        if let Some(i) = raster.iter().position(|&v| v >= NUM_CLASSES) {
            return Err(format!(
                "gray value {} at row {}, col {} is not a class id",
                raster[i],
                i / width.max(1),
                i % width.max(1)
            ));
        }
        Ok(SegMap { width, height, labels: raster.to_vec() })
    }
}

fn header_token(bytes: &[u8], pos: &mut usize) -> std::result::Result<String, String> {
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(_) => break,
            None => return Err("unexpected end of PGM header".into()),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn parse_num(tok: &str, what: &str) -> std::result::Result<usize, String> {
    tok.parse().map_err(|_| format!("bad PGM {what} {tok:?}"))
}
