//! Corpus ingestion: delimited-text parsing, label canonicalization
//! into a configurable class schema, and corpus cleaning with exact
//! bookkeeping.
//!
//! The parser handles quoted fields (embedded delimiters, doubled
//! quotes, embedded newlines), tracks physical line numbers for error
//! reporting, and accepts LF or CRLF terminators.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("input has no header row")]
    NoHeader,
    #[error("column {0:?} not found in header")]
    MissingColumn(String),
    #[error("malformed quoting in row starting at line {row}")]
    MalformedQuoting { row: usize },
    #[error("row at line {row} has {found} fields, header has {expected}")]
    UnevenRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("schema error: {0}")]
    BadSchema(String),
}

/// One raw row of interest: narrative text, raw phase label, and the
/// physical line the row started on (header is line 1).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawRecord {
    pub summary: String,
    pub phase_raw: String,
    pub source_row: usize,
}

/// A cleaned narrative with its canonical class index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OccurrenceRecord {
    pub narrative: String,
    pub label: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningStats {
    pub input_count: usize,
    pub retained_count: usize,
    pub dropped_empty_narrative: usize,
    pub dropped_unmappable_label: usize,
}

fn default_delimiter() -> char {
    ','
}
fn default_summary_column() -> String {
    "Summary".to_string()
}
fn default_phase_column() -> String {
    "PhaseOfFlight".to_string()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadOptions {
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default = "default_summary_column")]
    pub summary_column: String,
    #[serde(default = "default_phase_column")]
    pub phase_column: String,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            delimiter: default_delimiter(),
            summary_column: default_summary_column(),
            phase_column: default_phase_column(),
        }
    }
}

/// Ordered class list plus the mapping from normalized raw label text to
/// class name. Class index = position in `classes`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelSchema {
    pub classes: Vec<String>,
    pub raw_to_class: BTreeMap<String, String>,
    pub unknown_class: String,
    #[serde(default)]
    pub drop_unknown: bool,
}

impl Default for LabelSchema {
    fn default() -> Self {
        let classes = [
            "Approach",
            "Climb",
            "Cruise",
            "Landing",
            "Manoeuvring/airwork",
            "Take-off",
            "Unknown",
        ];
        let map = [
            ("take-off", "Take-off"),
            ("initial climb", "Climb"),
            ("climb", "Climb"),
            ("approach", "Approach"),
            ("landing", "Landing"),
            ("manoeuvring", "Manoeuvring/airwork"),
            ("cruise", "Cruise"),
        ];
        LabelSchema {
            classes: classes.iter().map(|s| s.to_string()).collect(),
            raw_to_class: map
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            unknown_class: "Unknown".to_string(),
            drop_unknown: false,
        }
    }
}

fn canonical_key(raw: &str) -> String {
    raw.trim().to_lowercase()
}

impl LabelSchema {
    pub fn m(&self) -> usize {
        self.classes.len()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    pub fn unknown_index(&self) -> usize {
        self.class_index(&self.unknown_class)
            .expect("validated schema contains its unknown class")
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.m() < 2 {
            return Err(IngestError::BadSchema(format!(
                "need at least 2 classes, found {}",
                self.m()
            )));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if self.classes[..i].contains(c) {
                return Err(IngestError::BadSchema(format!("duplicate class {c:?}")));
            }
        }
        if self.class_index(&self.unknown_class).is_none() {
            return Err(IngestError::BadSchema(format!(
                "unknown_class {:?} is not in the class list",
                self.unknown_class
            )));
        }
        for (key, value) in &self.raw_to_class {
            if canonical_key(key) != *key {
                return Err(IngestError::BadSchema(format!(
                    "map key {key:?} must be lower-case and trimmed"
                )));
            }
            if self.class_index(value).is_none() {
                return Err(IngestError::BadSchema(format!(
                    "map value {value:?} is not in the class list"
                )));
            }
        }
        Ok(())
    }
}

/// Lower-case and trim, then look the label up; if that misses, retry
/// with the first segment before any of `;`, `,`, `/` (multi-phase
/// rows keep their first phase); anything still unmapped is Unknown.
pub fn canonicalize_label(raw: &str, schema: &LabelSchema) -> usize {
    let key = canonical_key(raw);
    if let Some(class) = schema.raw_to_class.get(&key) {
        return schema.class_index(class).expect("validated schema");
    }
    if let Some(first) = key.split([';', ',', '/']).next() {
        let first = first.trim();
        if first != key {
            if let Some(class) = schema.raw_to_class.get(first) {
                return schema.class_index(class).expect("validated schema");
            }
        }
    }
    schema.unknown_index()
}

/// Drop records with empty narratives, canonicalize the rest; records
/// mapping to the unknown class are dropped only when the schema says
/// so. The stats identity input = retained + dropped_empty +
/// dropped_unmappable always holds.
pub fn clean_corpus(
    records: &[RawRecord],
    schema: &LabelSchema,
) -> (Vec<OccurrenceRecord>, CleaningStats) {
    let mut stats = CleaningStats {
        input_count: records.len(),
        ..CleaningStats::default()
    };
    let unknown = schema.unknown_index();
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let narrative = r.summary.trim();
        if narrative.is_empty() {
            stats.dropped_empty_narrative += 1;
            continue;
        }
        let label = canonicalize_label(&r.phase_raw, schema);
        if label == unknown && schema.drop_unknown {
            stats.dropped_unmappable_label += 1;
            continue;
        }
        out.push(OccurrenceRecord {
            narrative: narrative.to_string(),
            label,
        });
        stats.retained_count += 1;
    }
    (out, stats)
}

/// A parsed delimited row with the physical line it started on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsvRow {
    pub fields: Vec<String>,
    pub source_row: usize,
}

enum FieldState {
    Start,
    Unquoted,
    Quoted,
    AfterQuote,
}

/// Parse delimited text into rows of fields. Quoted fields may contain
/// the delimiter, doubled quotes, and newlines; blank lines are
/// skipped; LF and CRLF both terminate rows.
pub fn parse_delimited(text: &str, delimiter: char) -> Result<Vec<CsvRow>, IngestError> {
    let mut rows = Vec::new();
    let mut fields: Vec<String> = Vec::new();
    let mut field = String::new();
    let mut state = FieldState::Start;
    let mut line = 1usize;
    let mut row_start = 1usize;
    let mut saw_content = false;

    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match state {
            FieldState::Quoted => {
                if c == '"' {
                    if chars.peek() == Some(&'"') {
                        chars.next();
                        field.push('"');
                    } else {
                        state = FieldState::AfterQuote;
                    }
                } else {
                    if c == '\n' {
                        line += 1;
                    }
                    field.push(c);
                }
                continue;
            }
            FieldState::AfterQuote => match c {
                _ if c == delimiter => {
                    fields.push(std::mem::take(&mut field));
                    state = FieldState::Start;
                    continue;
                }
                '\n' | '\r' => {} // falls through to the terminator handling below
                _ => {
                    return Err(IngestError::MalformedQuoting { row: row_start });
                }
            },
            _ => {}
        }

        let is_terminator = match c {
            '\n' => true,
            '\r' if chars.peek() == Some(&'\n') => {
                chars.next();
                true
            }
            _ => false,
        };
        if is_terminator {
            line += 1;
            let blank = fields.is_empty() && field.is_empty() && !saw_content;
            if !blank {
                fields.push(std::mem::take(&mut field));
                rows.push(CsvRow {
                    fields: std::mem::take(&mut fields),
                    source_row: row_start,
                });
            }
            state = FieldState::Start;
            row_start = line;
            saw_content = false;
            continue;
        }

        match state {
            FieldState::Start => {
                saw_content = true;
                if c == '"' {
                    state = FieldState::Quoted;
                } else if c == delimiter {
                    fields.push(String::new());
                } else {
                    field.push(c);
                    state = FieldState::Unquoted;
                }
            }
            FieldState::Unquoted => {
                if c == delimiter {
                    fields.push(std::mem::take(&mut field));
                    state = FieldState::Start;
                } else {
                    field.push(c);
                }
            }
            FieldState::Quoted | FieldState::AfterQuote => unreachable!("handled above"),
        }
    }

    match state {
        FieldState::Quoted => return Err(IngestError::MalformedQuoting { row: row_start }),
        FieldState::Start if fields.is_empty() && !saw_content => {}
        _ => {
            fields.push(field);
            rows.push(CsvRow {
                fields,
                source_row: row_start,
            });
        }
    }
    Ok(rows)
}

/// Quote a field if it contains the delimiter, a quote, or a line
/// break; doubled quotes escape quotes.
pub fn escape_field(field: &str, delimiter: char) -> String {
    if field.contains(delimiter)
        || field.contains('"')
        || field.contains('\n')
        || field.contains('\r')
    {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

pub fn write_row(out: &mut String, fields: &[&str], delimiter: char) {
    for (i, f) in fields.iter().enumerate() {
        if i > 0 {
            out.push(delimiter);
        }
        out.push_str(&escape_field(f, delimiter));
    }
    out.push('\n');
}

/// Load one RawRecord per data row, in file order.
pub fn load_corpus(path: &Path, options: &LoadOptions) -> Result<Vec<RawRecord>, IngestError> {
    let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus_text(&text, options)
}

pub fn parse_corpus_text(
    text: &str,
    options: &LoadOptions,
) -> Result<Vec<RawRecord>, IngestError> {
    let rows = parse_delimited(text, options.delimiter)?;
    let Some((header, data)) = rows.split_first() else {
        return Err(IngestError::NoHeader);
    };
    let col = |name: &str| {
        header
            .fields
            .iter()
            .position(|f| f == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    };
    let summary_idx = col(&options.summary_column)?;
    let phase_idx = col(&options.phase_column)?;

    let mut out = Vec::with_capacity(data.len());
    for row in data {
        if row.fields.len() != header.fields.len() {
            return Err(IngestError::UnevenRow {
                row: row.source_row,
                expected: header.fields.len(),
                found: row.fields.len(),
            });
        }
        out.push(RawRecord {
            summary: row.fields[summary_idx].clone(),
            phase_raw: row.fields[phase_idx].clone(),
            source_row: row.source_row,
        });
    }
    Ok(out)
}
