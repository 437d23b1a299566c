//! Conversions from a table graph to other representations: the logical
//! grid, same-row/same-column matrices, CSV, XML and HTML.

use quick_xml::escape::{escape, unescape};
use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use crate::error::{Error, Result};
use crate::table::{CellNode, CenterBox, CornerBox, LogicalLocation, TableGraph};

/// Slot occupancy of the logical grid. Slots hold cell ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogicalGrid {
    pub rows: usize,
    pub cols: usize,
    slots: Vec<Option<u32>>,
}

impl LogicalGrid {
    pub fn get(&self, row: usize, col: usize) -> Option<u32> {
        self.slots[row * self.cols + col]
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[Option<u32>]> {
        self.slots.chunks(self.cols.max(1)).take(self.rows)
    }

    /// Recovers each cell's logical rectangle from the slots it occupies,
    /// as `(id, location)` sorted by id.
    pub fn occupied_rectangles(&self) -> Vec<(u32, LogicalLocation)> {
        let mut found: std::collections::BTreeMap<u32, LogicalLocation> = Default::default();
        for r in 0..self.rows {
            for c in 0..self.cols {
                if let Some(id) = self.get(r, c) {
                    found
                        .entry(id)
                        .and_modify(|l| {
                            l.row_start = l.row_start.min(r);
                            l.row_end = l.row_end.max(r);
                            l.col_start = l.col_start.min(c);
                            l.col_end = l.col_end.max(c);
                        })
                        .or_insert(LogicalLocation::unit(r, c));
                }
            }
        }
        found.into_iter().collect()
    }
}

pub(crate) fn labeled_cells(t: &TableGraph) -> Result<Vec<(u32, LogicalLocation)>> {
    t.cells
        .iter()
        .map(|c| {
            let l = c.logical.ok_or(Error::MissingLabels(c.id))?;
            if !l.is_ordered() {
                return Err(Error::InvertedInterval(c.id));
            }
            Ok((c.id, l))
        })
        .collect()
}

/// Writes every cell's id into its logical rectangle.
pub fn to_grid(t: &TableGraph) -> Result<LogicalGrid> {
    let cells = labeled_cells(t)?;
    let rows = cells.iter().map(|(_, l)| l.row_end + 1).max().unwrap_or(0);
    let cols = cells.iter().map(|(_, l)| l.col_end + 1).max().unwrap_or(0);
    let mut slots = vec![None; rows * cols];
    for (id, l) in cells {
        for r in l.row_start..=l.row_end {
            for c in l.col_start..=l.col_end {
                let slot = &mut slots[r * cols + c];
                if let Some(other) = *slot {
                    return Err(Error::OverlapConflict { a: other, b: id, row: r, col: c });
                }
                *slot = Some(id);
            }
        }
    }
    Ok(LogicalGrid { rows, cols, slots })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Row,
    Column,
}

/// `m[i][j]` is true iff cells `i` and `j` share a row (or column), i.e.
/// their index intervals on that axis intersect.
pub fn same_axis_matrix(t: &TableGraph, axis: Axis) -> Result<Vec<Vec<bool>>> {
    let locs = t.logical_locations()?;
    let interval = |l: &LogicalLocation| match axis {
        Axis::Row => (l.row_start, l.row_end),
        Axis::Column => (l.col_start, l.col_end),
    };
    Ok(locs
        .iter()
        .map(|a| {
            let (a0, a1) = interval(a);
            locs.iter()
                .map(|b| {
                    let (b0, b1) = interval(b);
                    a0 <= b1 && b0 <= a1
                })
                .collect()
        })
        .collect())
}

/// One line per grid row; a spanning cell's text sits in its top-left slot.
pub fn to_csv(t: &TableGraph) -> Result<String> {
    let grid = to_grid(t)?;
    let mut w =
        csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).flexible(true).from_writer(Vec::new());
    for r in 0..grid.rows {
        let record: Vec<&str> = (0..grid.cols).map(|c| top_left_text(t, &grid, r, c).unwrap_or("")).collect();
        w.write_record(&record).expect("writing to memory");
    }
    let bytes = w.into_inner().expect("flush to memory");
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields is utf-8"))
}

fn top_left_text<'a>(t: &'a TableGraph, grid: &LogicalGrid, r: usize, c: usize) -> Option<&'a str> {
    let id = grid.get(r, c)?;
    let cell = t.cell(id)?;
    let l = cell.logical?;
    if l.row_start == r && l.col_start == c {
        cell.text.as_deref()
    } else {
        None
    }
}

/// XML document with one `<cell>` per cell in id order. Boxes are written in
/// corner form; unlabeled cells omit the index attributes and cells without
/// text are self-closing.
pub fn to_xml(t: &TableGraph) -> String {
    let labeled: Vec<LogicalLocation> = t.cells.iter().filter_map(|c| c.logical).collect();
    let rows = labeled.iter().map(|l| l.row_end.max(l.row_start) + 1).max().unwrap_or(0);
    let cols = labeled.iter().map(|l| l.col_end.max(l.col_start) + 1).max().unwrap_or(0);
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str(&format!(
        "<table id=\"{}\" width=\"{}\" height=\"{}\" rows=\"{rows}\" cols=\"{cols}\">\n",
        escape(t.table_id.as_str()),
        t.width,
        t.height
    ));
    let mut cells: Vec<&CellNode> = t.cells.iter().collect();
    cells.sort_by_key(|c| c.id);
    for c in cells {
        out.push_str(&format!("  <cell id=\"{}\"", c.id));
        if let Some(l) = c.logical {
            out.push_str(&format!(
                " start-row=\"{}\" end-row=\"{}\" start-col=\"{}\" end-col=\"{}\"",
                l.row_start, l.row_end, l.col_start, l.col_end
            ));
        }
        let b = c.corner();
        out.push_str(&format!(" x=\"{}\" y=\"{}\" w=\"{}\" h=\"{}\"", b.x_min, b.y_min, b.width, b.height));
        match &c.text {
            Some(text) => out.push_str(&format!(">{}</cell>\n", escape(text.as_str()))),
            None => out.push_str("/>\n"),
        }
    }
    out.push_str("</table>\n");
    out
}

fn attrs(e: &BytesStart<'_>) -> Result<Vec<(String, String)>> {
    e.attributes()
        .map(|a| {
            let a = a.map_err(|err| Error::parse("xml", err.to_string()))?;
            let key = String::from_utf8_lossy(a.key.as_ref()).into_owned();
            let value = a.unescape_value().map_err(|err| Error::parse("xml", err.to_string()))?;
            Ok((key, value.into_owned()))
        })
        .collect()
}

fn attr<T: std::str::FromStr>(list: &[(String, String)], key: &str) -> Result<Option<T>> {
    match list.iter().find(|(k, _)| k == key) {
        None => Ok(None),
        Some((_, v)) => {
            v.parse().map(Some).map_err(|_| Error::parse("xml", format!("bad value {v:?} for attribute {key}")))
        }
    }
}

fn required<T: std::str::FromStr>(list: &[(String, String)], key: &str) -> Result<T> {
    attr(list, key)?.ok_or_else(|| Error::parse("xml", format!("missing attribute {key}")))
}

fn cell_from_attrs(list: &[(String, String)]) -> Result<CellNode> {
    let id = required(list, "id")?;
    let b = CornerBox::new(required(list, "x")?, required(list, "y")?, required(list, "w")?, required(list, "h")?)?;
    let bbox: CenterBox = b.to_center()?;
    let idx: [Option<usize>; 4] =
        [attr(list, "start-row")?, attr(list, "end-row")?, attr(list, "start-col")?, attr(list, "end-col")?];
    let logical = match idx {
        [Some(rs), Some(re), Some(cs), Some(ce)] => Some(LogicalLocation::new(rs, re, cs, ce)),
        [None, None, None, None] => None,
        _ => return Err(Error::parse("xml", format!("cell {id}: partial logical location"))),
    };
    Ok(CellNode { id, bbox, logical, text: None })
}

/// Parses the document produced by [`to_xml`].
pub fn from_xml(text: &str) -> Result<TableGraph> {
    let mut reader = Reader::from_str(text);
    let mut table: Option<TableGraph> = None;
    let mut open_cell: Option<CellNode> = None;
    loop {
        let event = reader.read_event().map_err(|e| Error::parse("xml", e.to_string()))?;
        match event {
            Event::Start(e) | Event::Empty(e) if e.name().as_ref() == b"table" => {
                let a = attrs(&e)?;
                table = Some(TableGraph::new(
                    required::<String>(&a, "id")?,
                    required(&a, "width")?,
                    required(&a, "height")?,
                ));
            }
            Event::Empty(e) if e.name().as_ref() == b"cell" => {
                let t = table.as_mut().ok_or_else(|| Error::parse("xml", "cell outside table"))?;
                t.cells.push(cell_from_attrs(&attrs(&e)?)?);
            }
            Event::Start(e) if e.name().as_ref() == b"cell" => {
                let mut cell = cell_from_attrs(&attrs(&e)?)?;
                cell.text = Some(String::new());
                open_cell = Some(cell);
            }
            Event::Text(e) => {
                if let Some(cell) = open_cell.as_mut() {
                    let raw = std::str::from_utf8(e.as_ref()).map_err(|err| Error::parse("xml", err.to_string()))?;
                    let s = unescape(raw).map_err(|err| Error::parse("xml", err.to_string()))?;
                    cell.text.get_or_insert_with(String::new).push_str(&s);
                }
            }
            Event::End(e) if e.name().as_ref() == b"cell" => {
                let t = table.as_mut().ok_or_else(|| Error::parse("xml", "cell outside table"))?;
                t.cells.extend(open_cell.take());
            }
            Event::Eof => break,
            _ => {}
        }
    }
    table.ok_or_else(|| Error::parse("xml", "no <table> element"))
}

fn html_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(ch),
        }
    }
    out
}

/// HTML fragment: one `<tr>` per grid row, spanning cells carry
/// `rowspan`/`colspan`, covered slots are skipped and empty slots become
/// `<td></td>`.
pub fn to_html(t: &TableGraph) -> Result<String> {
    let grid = to_grid(t)?;
    let mut out = String::from("<table>\n");
    for r in 0..grid.rows {
        out.push_str("<tr>");
        for c in 0..grid.cols {
            let Some(id) = grid.get(r, c) else {
                out.push_str("<td></td>");
                continue;
            };
            let cell = t.cell(id).expect("grid ids come from the table");
            let l = cell.logical.expect("grid cells are labeled");
            if l.row_start != r || l.col_start != c {
                continue;
            }
            out.push_str("<td");
            if l.row_span() > 1 {
                out.push_str(&format!(" rowspan=\"{}\"", l.row_span()));
            }
            if l.col_span() > 1 {
                out.push_str(&format!(" colspan=\"{}\"", l.col_span()));
            }
            out.push('>');
            out.push_str(&html_escape(cell.text.as_deref().unwrap_or("")));
            out.push_str("</td>");
        }
        out.push_str("</tr>\n");
    }
    out.push_str("</table>\n");
    Ok(out)
}
