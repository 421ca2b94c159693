//! Table transforms: evidence highlighting, sub-table extraction and
//! row-by-row linearization.
//!
//! Linearized form:
//!
//! ```text
//! title : <title>            (omitted when the title is empty)
//! col : h1 | h2 | ...
//! row 1 : c1 | c2 | ...
//! ```
//!
//! Inside cells `\`, `|` and any `#` directly following another `#` are
//! backslash-escaped, so the rendering is injective and never contains `###`.

use thiserror::Error;

use crate::table::{Evidence, Table, TableError};

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("sub-table requires non-empty evidence")]
    EmptyEvidence,
    #[error(transparent)]
    Range(#[from] TableError),
}

const STAR: char = '*';

/// Wraps every cell of each evidence row in `*`. All other cells are untouched.
pub fn highlight(table: &Table, evidence: &Evidence) -> Result<Table, TransformError> {
    evidence.check_range(table.n_rows())?;
    let rows = table
        .rows()
        .iter()
        .enumerate()
        .map(|(i, row)| {
            if evidence.contains(i + 1) {
                row.cells().iter().map(|c| format!("{STAR}{c}{STAR}")).collect()
            } else {
                row.cells().to_vec()
            }
        })
        .collect();
    Ok(Table::from_parts(
        table.title().to_string(),
        table.header().to_vec(),
        rows,
    ))
}

/// Inverse of [`highlight`] on the given rows.
pub fn strip_highlight(table: &Table, evidence: &Evidence) -> Result<Table, TransformError> {
    evidence.check_range(table.n_rows())?;
    let rows = table
        .rows()
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.cells()
                .iter()
                .map(|c| {
                    if evidence.contains(i + 1) {
                        strip_stars(c).unwrap_or(c).to_string()
                    } else {
                        c.clone()
                    }
                })
                .collect()
        })
        .collect();
    Ok(Table::from_parts(
        table.title().to_string(),
        table.header().to_vec(),
        rows,
    ))
}

/// Returns the inner text of a `*cell*`, or `None` if the cell is not starred.
pub fn strip_stars(cell: &str) -> Option<&str> {
    if cell.len() >= 2 && cell.starts_with(STAR) && cell.ends_with(STAR) {
        Some(&cell[1..cell.len() - 1])
    } else {
        None
    }
}

/// Keeps the header and only the evidence rows, in original order.
pub fn subtable(table: &Table, evidence: &Evidence) -> Result<Table, TransformError> {
    if evidence.is_empty() {
        return Err(TransformError::EmptyEvidence);
    }
    evidence.check_range(table.n_rows())?;
    let rows = evidence
        .indices()
        .iter()
        .map(|&i| table.rows()[i - 1].cells().to_vec())
        .collect();
    Ok(Table::from_parts(
        table.title().to_string(),
        table.header().to_vec(),
        rows,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearStyle {
    Plain,
    Highlighted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinearizedTable {
    pub text: String,
    pub style: LinearStyle,
}

pub const TITLE_PREFIX: &str = "title : ";
pub const HEADER_PREFIX: &str = "col : ";
const SEP: &str = " | ";

fn escape_into(out: &mut String, cell: &str) {
    let mut prev = None;
    for ch in cell.chars() {
        match ch {
            '\\' | '|' => out.push('\\'),
            '#' if prev == Some('#') => out.push('\\'),
            _ => {}
        }
        out.push(ch);
        prev = Some(ch);
    }
}

fn push_cells(out: &mut String, cells: &[String]) {
    for (k, c) in cells.iter().enumerate() {
        if k > 0 {
            out.push_str(SEP);
        }
        escape_into(out, c);
    }
}

/// Renders a table as text, one line per row. No trailing newline.
pub fn linearize(table: &Table) -> LinearizedTable {
    let mut text = String::new();
    if !table.title().is_empty() {
        text.push_str(TITLE_PREFIX);
        escape_into(&mut text, table.title());
        text.push('\n');
    }
    text.push_str(HEADER_PREFIX);
    push_cells(&mut text, table.header());
    for (i, row) in table.rows().iter().enumerate() {
        text.push('\n');
        text.push_str(&format!("row {} : ", i + 1));
        push_cells(&mut text, row.cells());
    }
    LinearizedTable {
        text,
        style: LinearStyle::Plain,
    }
}

/// Highlights with `evidence` (when given) and linearizes.
pub fn linearize_with_evidence(table: &Table, evidence: Option<&Evidence>) -> Result<LinearizedTable, TransformError> {
    match evidence {
        None => Ok(linearize(table)),
        Some(e) => {
            let mut lin = linearize(&highlight(table, e)?);
            lin.style = LinearStyle::Highlighted;
            Ok(lin)
        }
    }
}

/// Table lines recovered from arbitrary text (e.g. a rendered prompt).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedTableLines {
    pub title: Option<String>,
    pub header: Option<Vec<String>>,
    /// (row number as printed, cells)
    pub rows: Vec<(usize, Vec<String>)>,
}

impl ParsedTableLines {
    pub fn is_empty(&self) -> bool {
        self.header.is_none() && self.rows.is_empty()
    }
}

fn unescape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(ch) = chars.next() {
        if ch == '\\' {
            if let Some(next) = chars.next() {
                out.push(next);
                continue;
            }
        }
        out.push(ch);
    }
    out
}

fn split_cells(body: &str) -> Vec<String> {
    let mut segments = Vec::new();
    let mut current = String::new();
    let mut chars = body.chars();
    while let Some(ch) = chars.next() {
        match ch {
            '\\' => {
                current.push(ch);
                if let Some(next) = chars.next() {
                    current.push(next);
                }
            }
            '|' => segments.push(std::mem::take(&mut current)),
            _ => current.push(ch),
        }
    }
    segments.push(current);

    let last = segments.len() - 1;
    segments
        .into_iter()
        .enumerate()
        .map(|(k, seg)| {
            let mut s = seg.as_str();
            if k > 0 {
                s = s.strip_prefix(' ').unwrap_or(s);
            }
            if k < last {
                s = s.strip_suffix(' ').unwrap_or(s);
            }
            unescape(s)
        })
        .collect()
}

fn row_line(line: &str) -> Option<(usize, &str)> {
    let rest = line.strip_prefix("row ")?;
    let (num, body) = rest.split_once(" : ")?;
    let n = num.parse::<usize>().ok()?;
    Some((n, body))
}

/// Scans `text` for linearized table lines.
pub fn parse_table_lines(text: &str) -> ParsedTableLines {
    let mut parsed = ParsedTableLines::default();
    for line in text.lines() {
        if let Some(t) = line.strip_prefix(TITLE_PREFIX) {
            parsed.title = Some(unescape(t));
        } else if let Some(h) = line.strip_prefix(HEADER_PREFIX) {
            parsed.header = Some(split_cells(h));
        } else if let Some((n, body)) = row_line(line) {
            parsed.rows.push((n, split_cells(body)));
        }
    }
    parsed
}

/// Parses a [`linearize`] rendering back into a table.
pub fn delinearize(text: &str) -> Result<Table, TableError> {
    let parsed = parse_table_lines(text);
    let header = parsed.header.ok_or(TableError::EmptyHeader)?;
    Table::new(
        parsed.title.unwrap_or_default(),
        header,
        parsed.rows.into_iter().map(|(_, cells)| cells).collect(),
    )
}
