//! Table and sample data model, validation, and dataset ingestion.
//!
//! Data rows are addressed by 1-based indices everywhere an index is visible
//! (evidence, prompts, reports). The header is not indexable.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("schema error in field `{field}`: {detail}")]
    Schema { field: String, detail: String },
    #[error("row {row} has {found} cells, header has {expected}")]
    RaggedTable { row: usize, expected: usize, found: usize },
    #[error("evidence index {index} out of range [1, {n_rows}]")]
    EvidenceRange { index: usize, n_rows: usize },
    #[error("table has no data rows")]
    EmptyTable,
    #[error("table header is empty")]
    EmptyHeader,
    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),
    #[error("line {line}: {source}")]
    Line {
        line: usize,
        #[source]
        source: Box<TableError>,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl TableError {
    fn schema(field: &str, detail: impl Into<String>) -> Self {
        TableError::Schema {
            field: field.to_string(),
            detail: detail.into(),
        }
    }
}

/// Collapses whitespace runs (including tabs and newlines) to one space and trims.
pub fn normalize_cell(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Row {
    cells: Vec<String>,
}

impl Row {
    pub fn cells(&self) -> &[String] {
        &self.cells
    }
}

/// A header plus at least one data row, all of the same arity.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Table {
    title: String,
    header: Vec<String>,
    rows: Vec<Row>,
}

impl Table {
    /// Builds a table, normalizing every cell and checking arity.
    pub fn new(title: impl AsRef<str>, header: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self, TableError> {
        if header.is_empty() {
            return Err(TableError::EmptyHeader);
        }
        if rows.is_empty() {
            return Err(TableError::EmptyTable);
        }
        let arity = header.len();
        let mut out = Vec::with_capacity(rows.len());
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != arity {
                return Err(TableError::RaggedTable {
                    row: i + 1,
                    expected: arity,
                    found: row.len(),
                });
            }
            out.push(Row {
                cells: row.iter().map(|c| normalize_cell(c)).collect(),
            });
        }
        Ok(Table {
            title: normalize_cell(title.as_ref()),
            header: header.iter().map(|c| normalize_cell(c)).collect(),
            rows: out,
        })
    }

    pub fn title(&self) -> &str {
        &self.title
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    /// Data row by 1-based index.
    pub fn row(&self, index: usize) -> Option<&Row> {
        index.checked_sub(1).and_then(|i| self.rows.get(i))
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.header.len()
    }

    /// Rebuilds a table from already-normalized parts. Used by transforms,
    /// whose outputs inherit the invariants of their input.
    pub(crate) fn from_parts(title: String, header: Vec<String>, rows: Vec<Vec<String>>) -> Self {
        debug_assert!(!rows.is_empty());
        debug_assert!(rows.iter().all(|r| r.len() == header.len()));
        Table {
            title,
            header,
            rows: rows.into_iter().map(|cells| Row { cells }).collect(),
        }
    }
}

/// Strictly ascending set of 1-based data-row indices. May be empty.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Evidence(Vec<usize>);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvidenceError {
    #[error("evidence indices must be strictly ascending: {0:?}")]
    NotAscending(Vec<usize>),
    #[error("evidence index 0 is not a data row (indices are 1-based)")]
    ZeroIndex,
}

impl Evidence {
    pub fn empty() -> Self {
        Evidence(Vec::new())
    }

    /// Accepts only strictly ascending, 1-based indices.
    pub fn new(indices: Vec<usize>) -> Result<Self, EvidenceError> {
        if indices.contains(&0) {
            return Err(EvidenceError::ZeroIndex);
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EvidenceError::NotAscending(indices));
        }
        Ok(Evidence(indices))
    }

    /// Sorts and deduplicates; zero entries are dropped.
    pub fn from_unsorted<I: IntoIterator<Item = usize>>(indices: I) -> Self {
        let mut v: Vec<usize> = indices.into_iter().filter(|&i| i > 0).collect();
        v.sort_unstable();
        v.dedup();
        Evidence(v)
    }

    pub fn singleton(index: usize) -> Self {
        Evidence::from_unsorted([index])
    }

    pub fn union(&self, other: &Evidence) -> Evidence {
        Evidence::from_unsorted(self.0.iter().chain(other.0.iter()).copied())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.0.binary_search(&index).is_ok()
    }

    /// Checks every index against a table with `n_rows` data rows.
    pub fn check_range(&self, n_rows: usize) -> Result<(), TableError> {
        match self.0.iter().find(|&&i| i > n_rows) {
            Some(&index) => Err(TableError::EvidenceRange { index, n_rows }),
            None => Ok(()),
        }
    }
}

impl TryFrom<Vec<usize>> for Evidence {
    type Error = EvidenceError;

    fn try_from(v: Vec<usize>) -> Result<Self, Self::Error> {
        Evidence::new(v)
    }
}

impl From<Evidence> for Vec<usize> {
    fn from(e: Evidence) -> Self {
        e.0
    }
}

/// Renders as `{1, 3}`; the empty set is `{}`.
impl fmt::Display for Evidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (k, i) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{i}")?;
        }
        f.write_str("}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub table: Table,
    pub query: String,
    pub reference: String,
    pub manual_evidence: Option<Evidence>,
    /// Source-format extras that are not part of the model (e.g. cell highlights).
    pub metadata: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self, TableError> {
        let mut seen = HashSet::new();
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(TableError::DuplicateId(s.id.clone()));
            }
        }
        Ok(Dataset { samples })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }
}

// ---------------------------------------------------------------------------
// Record parsing
// ---------------------------------------------------------------------------

fn req<'a>(obj: &'a Map<String, Value>, field: &str) -> Result<&'a Value, TableError> {
    obj.get(field)
        .filter(|v| !v.is_null())
        .ok_or_else(|| TableError::schema(field, "missing"))
}

fn req_str(obj: &Map<String, Value>, field: &str) -> Result<String, TableError> {
    match req(obj, field)? {
        Value::String(s) => Ok(s.clone()),
        other => Err(TableError::schema(
            field,
            format!("expected string, got {}", kind(other)),
        )),
    }
}

fn non_empty(field: &str, s: String) -> Result<String, TableError> {
    if s.trim().is_empty() {
        Err(TableError::schema(field, "must be non-empty"))
    } else {
        Ok(s)
    }
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "bool",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

/// Cell text; numbers are accepted and rendered as written.
fn cell_text(field: &str, v: &Value) -> Result<String, TableError> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        other => Err(TableError::schema(
            field,
            format!("expected cell text, got {}", kind(other)),
        )),
    }
}

fn string_list(field: &str, v: &Value) -> Result<Vec<String>, TableError> {
    match v {
        Value::Array(items) => items.iter().map(|c| cell_text(field, c)).collect(),
        other => Err(TableError::schema(
            field,
            format!("expected array, got {}", kind(other)),
        )),
    }
}

fn rows_of(field: &str, v: &Value) -> Result<Vec<Vec<String>>, TableError> {
    match v {
        Value::Array(rows) => rows.iter().map(|r| string_list(field, r)).collect(),
        other => Err(TableError::schema(
            field,
            format!("expected array of rows, got {}", kind(other)),
        )),
    }
}

fn index_list(field: &str, v: &Value) -> Result<Vec<usize>, TableError> {
    let Value::Array(items) = v else {
        return Err(TableError::schema(field, format!("expected array, got {}", kind(v))));
    };
    items
        .iter()
        .map(|x| {
            x.as_u64()
                .map(|u| u as usize)
                .ok_or_else(|| TableError::schema(field, format!("expected non-negative integer, got {x}")))
        })
        .collect()
}

fn as_object(record: &Value) -> Result<&Map<String, Value>, TableError> {
    record
        .as_object()
        .ok_or_else(|| TableError::schema("<record>", format!("expected object, got {}", kind(record))))
}

/// Parses one record in the canonical schema.
pub fn parse_sample(record: &Value) -> Result<Sample, TableError> {
    let obj = as_object(record)?;
    let id = non_empty("id", req_str(obj, "id")?)?;
    let title = match obj.get("title") {
        None | Some(Value::Null) => String::new(),
        Some(v) => cell_text("title", v)?,
    };
    let header = string_list("header", req(obj, "header")?)?;
    let rows = rows_of("rows", req(obj, "rows")?)?;
    let query = non_empty("query", req_str(obj, "query")?)?;
    let reference = non_empty("reference", req_str(obj, "reference")?)?;
    let table = Table::new(title, header, rows)?;

    let manual_evidence = match obj.get("evidence") {
        None | Some(Value::Null) => None,
        Some(v) => {
            let idx = index_list("evidence", v)?;
            let ev = Evidence::new(idx).map_err(|e| TableError::schema("evidence", e.to_string()))?;
            ev.check_range(table.n_rows())?;
            Some(ev)
        }
    };
    let metadata = match obj.get("meta") {
        None | Some(Value::Null) => BTreeMap::new(),
        Some(Value::Object(m)) => m.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        Some(other) => {
            return Err(TableError::schema(
                "meta",
                format!("expected object, got {}", kind(other)),
            ))
        }
    };

    Ok(Sample {
        id,
        table,
        query,
        reference,
        manual_evidence,
        metadata,
    })
}

/// Canonical record for a sample. `meta` is only written when non-empty.
pub fn sample_to_record(sample: &Sample) -> Value {
    let t = &sample.table;
    let mut rec = json!({
        "id": sample.id,
        "title": t.title(),
        "header": t.header(),
        "rows": t.rows().iter().map(|r| r.cells()).collect::<Vec<_>>(),
        "query": sample.query,
        "reference": sample.reference,
        "evidence": sample.manual_evidence.as_ref().map(|e| e.indices().to_vec()),
    });
    if !sample.metadata.is_empty() {
        rec["meta"] = Value::Object(sample.metadata.clone().into_iter().collect());
    }
    rec
}

/// FeTaQA release record: first `table_array` row is the header.
pub fn adapt_fetaqa(record: &Value) -> Result<Sample, TableError> {
    let obj = as_object(record)?;
    let id = match req(obj, "feta_id")? {
        Value::Number(n) => n.to_string(),
        Value::String(s) => non_empty("feta_id", s.clone())?,
        other => {
            return Err(TableError::schema(
                "feta_id",
                format!("expected id, got {}", kind(other)),
            ))
        }
    };
    let mut array = rows_of("table_array", req(obj, "table_array")?)?;
    if array.is_empty() {
        return Err(TableError::schema("table_array", "no header row"));
    }
    let header = array.remove(0);
    let page = obj.get("table_page_title").and_then(Value::as_str).unwrap_or("");
    let section = obj.get("table_section_title").and_then(Value::as_str).unwrap_or("");
    let title = match (page.trim().is_empty(), section.trim().is_empty()) {
        (false, false) => format!("{page} - {section}"),
        (false, true) => page.to_string(),
        (true, false) => section.to_string(),
        (true, true) => String::new(),
    };
    let query = non_empty("question", req_str(obj, "question")?)?;
    let reference = non_empty("answer", req_str(obj, "answer")?)?;
    let table = Table::new(title, header, array)?;

    let mut metadata = BTreeMap::new();
    if let Some(h) = obj.get("highlighted_cell_ids").filter(|v| !v.is_null()) {
        metadata.insert("highlighted_cell_ids".to_string(), h.clone());
    }
    if let Some(u) = obj.get("page_wikipedia_url").filter(|v| !v.is_null()) {
        metadata.insert("page_wikipedia_url".to_string(), u.clone());
    }

    Ok(Sample {
        id,
        table,
        query,
        reference,
        manual_evidence: None,
        metadata,
    })
}

/// QTSumm record; its 0-based `row_ids` become 1-based manual evidence.
pub fn adapt_qtsumm(record: &Value) -> Result<Sample, TableError> {
    let obj = as_object(record)?;
    let id = non_empty("example_id", req_str(obj, "example_id")?)?;
    let table_obj = req(obj, "table")?
        .as_object()
        .ok_or_else(|| TableError::schema("table", "expected object"))?;
    let title = match table_obj.get("title") {
        None | Some(Value::Null) => String::new(),
        Some(v) => cell_text("table.title", v)?,
    };
    let header = string_list("table.header", req(table_obj, "header")?)?;
    let rows = rows_of("table.rows", req(table_obj, "rows")?)?;
    let query = non_empty("query", req_str(obj, "query")?)?;
    let reference = non_empty("summary", req_str(obj, "summary")?)?;
    let table = Table::new(title, header, rows)?;

    let manual_evidence = match obj.get("row_ids") {
        None | Some(Value::Null) => None,
        Some(v) => {
            let ev = Evidence::from_unsorted(index_list("row_ids", v)?.into_iter().map(|i| i + 1));
            ev.check_range(table.n_rows())?;
            Some(ev)
        }
    };
    let mut metadata = BTreeMap::new();
    if let Some(t) = table_obj.get("table_id").filter(|v| !v.is_null()) {
        metadata.insert("table_id".to_string(), t.clone());
    }

    Ok(Sample {
        id,
        table,
        query,
        reference,
        manual_evidence,
        metadata,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    #[default]
    Canonical,
    Fetaqa,
    Qtsumm,
}

impl FromStr for DatasetFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "canonical" => Ok(DatasetFormat::Canonical),
            "fetaqa" => Ok(DatasetFormat::Fetaqa),
            "qtsumm" => Ok(DatasetFormat::Qtsumm),
            other => Err(format!("unknown dataset format `{other}`")),
        }
    }
}

impl DatasetFormat {
    pub fn parse_record(self, record: &Value) -> Result<Sample, TableError> {
        match self {
            DatasetFormat::Canonical => parse_sample(record),
            DatasetFormat::Fetaqa => adapt_fetaqa(record),
            DatasetFormat::Qtsumm => adapt_qtsumm(record),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadMode {
    /// Abort on the first bad line.
    Strict,
    /// Skip bad lines and report them.
    Lenient,
}

#[derive(Debug, Default)]
pub struct ParseReport {
    /// (1-based line number, error)
    pub failures: Vec<(usize, TableError)>,
    pub warnings: Vec<String>,
}

impl ParseReport {
    pub fn is_clean(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Loads a JSON Lines dataset, preserving file order. Blank lines are skipped.
pub fn load_dataset(path: &Path, format: DatasetFormat, mode: LoadMode) -> Result<(Dataset, ParseReport), TableError> {
    let io_err = |source| TableError::Io {
        path: path.display().to_string(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut report = ParseReport::default();
    let mut samples = Vec::new();
    let mut seen = HashSet::new();

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<Value>(&line)
            .map_err(|e| TableError::schema("<record>", format!("invalid JSON: {e}")))
            .and_then(|v| format.parse_record(&v))
            .and_then(|s| {
                if seen.contains(&s.id) {
                    Err(TableError::DuplicateId(s.id))
                } else {
                    Ok(s)
                }
            });
        match parsed {
            Ok(s) => {
                seen.insert(s.id.clone());
                samples.push(s);
            }
            Err(e) => match mode {
                LoadMode::Strict => {
                    return Err(TableError::Line {
                        line: line_no,
                        source: Box::new(e),
                    })
                }
                LoadMode::Lenient => {
                    log::warn!("{}:{}: {}", path.display(), line_no, e);
                    report.failures.push((line_no, e));
                }
            },
        }
    }
    if samples.is_empty() && report.failures.is_empty() {
        report.warnings.push(format!("{} contains no records", path.display()));
        log::warn!("{} contains no records", path.display());
    }
    Ok((Dataset { samples }, report))
}

/// Writes the dataset as canonical JSON Lines.
pub fn write_dataset<W: Write>(dataset: &Dataset, mut out: W) -> std::io::Result<()> {
    for s in dataset.samples() {
        serde_json::to_writer(&mut out, &sample_to_record(s))?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
