//! Table and instance data model: file ingestion, mask application and token counting.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LoadError, MaskError};
use crate::sql::Value;

/// A typed table cell. Numbers keep the text they were parsed from so that
/// rendering reproduces the source verbatim.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Empty,
    Text(String),
    Number { value: f64, raw: String },
}

impl Cell {
    /// Types a raw cell: blank → empty, decimal-looking → number, else text.
    pub fn parse(raw: &str) -> Cell {
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            return Cell::Empty;
        }
        match parse_number(trimmed) {
            Some(value) => Cell::Number {
                value,
                raw: trimmed.to_string(),
            },
            None => Cell::Text(trimmed.to_string()),
        }
    }

    pub fn number(value: f64) -> Cell {
        Cell::Number {
            value,
            raw: format_number(value),
        }
    }

    pub fn text(&self) -> &str {
        match self {
            Cell::Empty => "",
            Cell::Text(s) => s,
            Cell::Number { raw, .. } => raw,
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Cell::Number { value, .. } => Some(*value),
            _ => None,
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, Cell::Empty)
    }

    /// The cell as an answer value.
    pub fn to_value(&self) -> Value {
        match self {
            Cell::Empty => Value::Empty,
            Cell::Text(s) => Value::Text(s.clone()),
            Cell::Number { value, .. } => Value::Number(*value),
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.text())
    }
}

/// Parses a decimal number with optional sign and fraction. Comma thousands
/// separators are stripped first. Exponents, `inf` and `nan` are rejected.
pub fn parse_number(s: &str) -> Option<f64> {
    let stripped: String = s.trim().chars().filter(|c| *c != ',').collect();
    let body = stripped
        .strip_prefix('-')
        .or_else(|| stripped.strip_prefix('+'))
        .unwrap_or(&stripped);
    let (int, frac) = match body.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (body, None),
    };
    let digits = |p: &str| p.bytes().all(|b| b.is_ascii_digit());
    let ok = match frac {
        None => !int.is_empty() && digits(int),
        Some(f) => digits(int) && digits(f) && !(int.is_empty() && f.is_empty()),
    };
    if !ok || (s.contains(',') && int.is_empty()) {
        return None;
    }
    stripped.parse::<f64>().ok()
}

/// Renders a number without a trailing `.0` when it is integral.
pub fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Lowercases and collapses internal whitespace; used for header lookups.
pub fn normalize_name(s: &str) -> String {
    s.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Rectangular table with ordered, unique headers.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    id: String,
    headers: Vec<String>,
    rows: Vec<Vec<Cell>>,
}

impl Table {
    /// Builds a table, disambiguating duplicate headers. Panics on ragged rows
    /// or empty headers; use [`load_table`] for untrusted input.
    pub fn new(id: impl Into<String>, headers: Vec<String>, rows: Vec<Vec<Cell>>) -> Table {
        assert!(
            headers.iter().all(|h| !h.trim().is_empty()),
            "headers must be non-empty"
        );
        assert!(
            rows.iter().all(|r| r.len() == headers.len()),
            "every row needs one cell per header"
        );
        Table {
            id: id.into(),
            headers: disambiguate_headers(headers),
            rows,
        }
    }

    /// Convenience constructor typing every cell with [`Cell::parse`].
    pub fn from_strings(id: &str, headers: &[&str], rows: &[&[&str]]) -> Table {
        Table::new(
            id,
            headers.iter().map(|h| h.to_string()).collect(),
            rows.iter()
                .map(|r| r.iter().map(|c| Cell::parse(c)).collect())
                .collect(),
        )
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn headers(&self) -> &[String] {
        &self.headers
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn n_columns(&self) -> usize {
        self.headers.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn cell(&self, row: usize, col: usize) -> &Cell {
        &self.rows[row][col]
    }

    /// Case- and whitespace-insensitive header lookup.
    pub fn column_index(&self, name: &str) -> Option<usize> {
        let wanted = normalize_name(name);
        self.headers.iter().position(|h| normalize_name(h) == wanted)
    }

    pub fn full_mask(&self) -> ItemMask {
        ItemMask::full(self.n_columns(), self.n_rows())
    }

    /// Keeps the first `n` rows.
    pub fn truncated(&self, n: usize) -> Table {
        Table {
            id: self.id.clone(),
            headers: self.headers.clone(),
            rows: self.rows[..n.min(self.rows.len())].to_vec(),
        }
    }

    /// Whitespace tokens of the header row.
    pub fn header_tokens(&self) -> usize {
        self.headers.iter().map(|h| count_tokens(h)).sum()
    }

    /// Whitespace tokens of one data row.
    pub fn row_tokens(&self, row: usize) -> usize {
        self.rows[row].iter().map(|c| count_tokens(c.text())).sum()
    }

    /// Writes the table as CSV (or TSV) with a header record.
    pub fn write_delimited(&self, path: &Path, format: TableFormat) -> Result<(), LoadError> {
        let csv_err = |e: csv::Error| LoadError::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let mut w = csv::WriterBuilder::new()
            .delimiter(format.delimiter())
            .from_path(path)
            .map_err(csv_err)?;
        w.write_record(&self.headers).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|c| c.text())).map_err(csv_err)?;
        }
        w.flush().map_err(|source| LoadError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn disambiguate_headers(headers: Vec<String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(headers.len());
    for h in headers {
        let h = h.trim().to_string();
        let taken = |name: &str, out: &[String]| {
            let n = normalize_name(name);
            out.iter().any(|o| normalize_name(o) == n)
        };
        if !taken(&h, &out) {
            out.push(h);
            continue;
        }
        let mut k = 2;
        while taken(&format!("{h}_{k}"), &out) {
            k += 1;
        }
        out.push(format!("{h}_{k}"));
    }
    out
}

fn count_tokens(s: &str) -> usize {
    s.split_whitespace().count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Tsv,
}

impl TableFormat {
    fn delimiter(self) -> u8 {
        match self {
            TableFormat::Csv => b',',
            TableFormat::Tsv => b'\t',
        }
    }

    /// Guesses the format from a file extension; anything but `.tsv` is csv.
    pub fn from_path(path: &Path) -> TableFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("tsv") => TableFormat::Tsv,
            _ => TableFormat::Csv,
        }
    }
}

/// Loads a csv/tsv file whose first record is the header row. The table id
/// is the file stem.
pub fn load_table(path: &Path, format: TableFormat) -> Result<Table, LoadError> {
    let text = fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string();
    parse_table(&id, &text, format).map_err(|e| e.with_path(path))
}

/// Parses table text; errors carry an empty path until [`load_table`] fills it in.
pub fn parse_table(id: &str, text: &str, format: TableFormat) -> Result<Table, LoadError> {
    let path = std::path::PathBuf::new();
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(format.delimiter())
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| LoadError::Csv {
            path: path.clone(),
            message: e.to_string(),
        })?,
        None => return Err(LoadError::MissingHeader { path }),
    };
    let headers: Vec<String> = header.iter().map(|h| h.trim().to_string()).collect();
    if let Some(column) = headers.iter().position(|h| h.is_empty()) {
        return Err(LoadError::EmptyHeader { path, column });
    }
    let mut rows = Vec::new();
    for (i, rec) in records.enumerate() {
        let rec = rec.map_err(|e| LoadError::Csv {
            path: path.clone(),
            message: e.to_string(),
        })?;
        if rec.len() != headers.len() {
            return Err(LoadError::RaggedRow {
                path,
                row: i + 1,
                found: rec.len(),
                expected: headers.len(),
            });
        }
        rows.push(rec.iter().map(Cell::parse).collect());
    }
    Ok(Table::new(id, headers, rows))
}

impl LoadError {
    fn with_path(self, p: &Path) -> LoadError {
        let path = p.to_path_buf();
        match self {
            LoadError::Csv { message, .. } => LoadError::Csv { path, message },
            LoadError::MissingHeader { .. } => LoadError::MissingHeader { path },
            LoadError::EmptyHeader { column, .. } => LoadError::EmptyHeader { path, column },
            LoadError::RaggedRow {
                row,
                found,
                expected,
                ..
            } => LoadError::RaggedRow {
                path,
                row,
                found,
                expected,
            },
            other => other,
        }
    }
}

/// A set of kept column ids and row ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ItemMask {
    pub columns: BTreeSet<usize>,
    pub rows: BTreeSet<usize>,
}

impl ItemMask {
    pub fn new(
        columns: impl IntoIterator<Item = usize>,
        rows: impl IntoIterator<Item = usize>,
    ) -> ItemMask {
        ItemMask {
            columns: columns.into_iter().collect(),
            rows: rows.into_iter().collect(),
        }
    }

    pub fn full(n_columns: usize, n_rows: usize) -> ItemMask {
        ItemMask::new(0..n_columns, 0..n_rows)
    }

    pub fn check_bounds(&self, table: &Table) -> Result<(), MaskError> {
        if let Some(&id) = self.columns.iter().find(|&&c| c >= table.n_columns()) {
            return Err(MaskError::ColumnOutOfBounds {
                id,
                len: table.n_columns(),
            });
        }
        if let Some(&id) = self.rows.iter().find(|&&r| r >= table.n_rows()) {
            return Err(MaskError::RowOutOfBounds {
                id,
                len: table.n_rows(),
            });
        }
        Ok(())
    }

    /// Maps a mask expressed in the coordinates of `apply_mask(t, self)` back
    /// to coordinates of `t`. Ids past the reduced bounds are dropped.
    pub fn lift(&self, inner: &ItemMask) -> ItemMask {
        let cols: Vec<usize> = self.columns.iter().copied().collect();
        let rows: Vec<usize> = self.rows.iter().copied().collect();
        ItemMask {
            columns: inner.columns.iter().filter_map(|&c| cols.get(c).copied()).collect(),
            rows: inner.rows.iter().filter_map(|&r| rows.get(r).copied()).collect(),
        }
    }

    pub fn intersection(&self, other: &ItemMask) -> ItemMask {
        ItemMask {
            columns: self.columns.intersection(&other.columns).copied().collect(),
            rows: self.rows.intersection(&other.rows).copied().collect(),
        }
    }
}

/// Materializes the reduced table, keeping the original relative order of
/// the retained columns and rows.
pub fn apply_mask(table: &Table, mask: &ItemMask) -> Result<Table, MaskError> {
    if mask.columns.is_empty() {
        return Err(MaskError::NoColumns);
    }
    mask.check_bounds(table)?;
    let headers = mask
        .columns
        .iter()
        .map(|&c| table.headers[c].clone())
        .collect();
    let rows = mask
        .rows
        .iter()
        .map(|&r| {
            mask.columns
                .iter()
                .map(|&c| table.rows[r][c].clone())
                .collect()
        })
        .collect();
    Ok(Table {
        id: table.id.clone(),
        headers,
        rows,
    })
}

/// Number of whitespace-delimited tokens in the serialized table (headers
/// followed by every cell). Empty cells contribute nothing.
pub fn token_count(table: &Table) -> usize {
    table.header_tokens() + (0..table.n_rows()).map(|r| table.row_tokens(r)).sum::<usize>()
}

/// A question over one table, with optional SQL annotation and gold mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaInstance {
    pub id: String,
    pub question: String,
    pub table_id: String,
    #[serde(rename = "sql", default, skip_serializing_if = "Option::is_none")]
    pub gold_sql: Option<String>,
    #[serde(rename = "answer", default, skip_serializing_if = "Option::is_none")]
    pub gold_answer: Option<Value>,
    #[serde(rename = "mask", default, skip_serializing_if = "Option::is_none")]
    pub gold_mask: Option<ItemMask>,
}

impl QaInstance {
    pub fn new(id: impl Into<String>, question: impl Into<String>, table_id: impl Into<String>) -> Self {
        QaInstance {
            id: id.into(),
            question: question.into(),
            table_id: table_id.into(),
            gold_sql: None,
            gold_answer: None,
            gold_mask: None,
        }
    }

    pub fn with_sql(mut self, sql: impl Into<String>) -> Self {
        self.gold_sql = Some(sql.into());
        self
    }

    pub fn with_answer(mut self, answer: Value) -> Self {
        self.gold_answer = Some(answer);
        self
    }
}

/// Reads one JSON object per line; blank lines are skipped.
pub fn read_instances(path: &Path) -> Result<Vec<QaInstance>, LoadError> {
    let file = fs::File::open(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| LoadError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: QaInstance = serde_json::from_str(&line).map_err(|e| LoadError::Instance {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(inst);
    }
    Ok(out)
}

pub fn write_instances(path: &Path, instances: &[QaInstance]) -> Result<(), LoadError> {
    let io = |source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    for inst in instances {
        let line = serde_json::to_string(inst).expect("instance serializes");
        writeln!(f, "{line}").map_err(io)?;
    }
    f.flush().map_err(io)
}

/// Loads every `.csv`/`.tsv` file in a directory, sorted by table id.
pub fn load_table_dir(dir: &Path) -> Result<Vec<Table>, LoadError> {
    let entries = fs::read_dir(dir).map_err(|source| LoadError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| LoadError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let p = entry.path();
        let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("");
        if ext.eq_ignore_ascii_case("csv") || ext.eq_ignore_ascii_case("tsv") {
            paths.push(p);
        }
    }
    paths.sort();
    paths
        .iter()
        .map(|p| load_table(p, TableFormat::from_path(p)))
        .collect()
}
