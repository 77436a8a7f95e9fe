//! Dataset and schema loading.
//!
//! A dataset is a delimited text file with a mandatory header row. Columns are
//! bound to the schema by name, so the file may list them in any order; cells
//! are re-ordered into schema order on load. A cell that is missing because the
//! row is short is recorded as null, a cell that is present but has no
//! characters is recorded as empty.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::format::{Item, StrftimeItems};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_DATE_FORMAT: &str = "%Y-%m-%d";
pub const DEFAULT_EPOCH: &str = "1970-01-01";

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("cannot read schema {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema parse error: {0}")]
    Parse(String),
    #[error("column `{column}` has unknown role `{role}` (expected categorical, date, numeric, target or ignore)")]
    UnknownRole { column: String, role: String },
    #[error("schema has no target column")]
    NoTarget,
    #[error("multiple targets: {0:?}")]
    MultipleTargets(Vec<String>),
    #[error("duplicate column name `{0}`")]
    DuplicateColumn(String),
    #[error("column name must be non-empty (column #{0})")]
    EmptyColumnName(usize),
    #[error("target_name `{declared}` does not match target column `{actual}`")]
    TargetNameMismatch { declared: String, actual: String },
    #[error("invalid date format `{0}`")]
    InvalidDateFormat(String),
    #[error("invalid epoch `{0}`")]
    InvalidEpoch(String),
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("file has no header row")]
    MissingHeader,
    #[error("header does not match schema (missing: {missing:?}, unexpected: {unexpected:?})")]
    HeaderMismatch {
        missing: Vec<String>,
        unexpected: Vec<String>,
    },
    #[error("row {row_id} has {found} cells but the schema has {expected} columns")]
    TooManyCells {
        row_id: usize,
        found: usize,
        expected: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Categorical,
    Date,
    Numeric,
    Target,
    Ignore,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Categorical => "categorical",
            Role::Date => "date",
            Role::Numeric => "numeric",
            Role::Target => "target",
            Role::Ignore => "ignore",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        Some(match s {
            "categorical" => Role::Categorical,
            "date" => Role::Date,
            "numeric" => Role::Numeric,
            "target" => Role::Target,
            "ignore" => Role::Ignore,
            _ => return None,
        })
    }

    /// Columns with this role contribute one entry to the feature vector.
    pub fn is_feature(self) -> bool {
        matches!(self, Role::Categorical | Role::Date | Role::Numeric)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSpec {
    pub name: String,
    pub role: Role,
    pub nullable: bool,
    pub empty_allowed: bool,
    /// Optional closed value domain; checked by the `value-not-in-domain` rule.
    pub allowed_values: Option<Vec<String>>,
}

impl ColumnSpec {
    pub fn new(name: impl Into<String>, role: Role) -> Self {
        ColumnSpec {
            name: name.into(),
            role,
            nullable: false,
            empty_allowed: false,
            allowed_values: None,
        }
    }

    pub fn nullable(mut self, yes: bool) -> Self {
        self.nullable = yes;
        self
    }

    pub fn empty_allowed(mut self, yes: bool) -> Self {
        self.empty_allowed = yes;
        self
    }

    pub fn allowed_values<I, S>(mut self, values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.allowed_values = Some(values.into_iter().map(Into::into).collect());
        self
    }
}

/// Validated column-role declarations for one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaConfig {
    columns: Vec<ColumnSpec>,
    date_format: String,
    epoch: NaiveDate,
    target_index: usize,
}

impl SchemaConfig {
    pub fn new(columns: Vec<ColumnSpec>) -> Result<Self, SchemaError> {
        Self::with_dates(columns, DEFAULT_DATE_FORMAT, default_epoch())
    }

    pub fn with_dates(columns: Vec<ColumnSpec>, date_format: &str, epoch: NaiveDate) -> Result<Self, SchemaError> {
        let mut seen = HashSet::new();
        for (i, c) in columns.iter().enumerate() {
            if c.name.is_empty() {
                return Err(SchemaError::EmptyColumnName(i));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(SchemaError::DuplicateColumn(c.name.clone()));
            }
        }
        let targets: Vec<usize> = columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.role == Role::Target)
            .map(|(i, _)| i)
            .collect();
        let target_index = match targets.as_slice() {
            [] => return Err(SchemaError::NoTarget),
            [i] => *i,
            many => {
                return Err(SchemaError::MultipleTargets(
                    many.iter().map(|&i| columns[i].name.clone()).collect(),
                ))
            }
        };
        validate_date_format(date_format)?;
        Ok(SchemaConfig {
            columns,
            date_format: date_format.to_string(),
            epoch,
            target_index,
        })
    }

    pub fn columns(&self) -> &[ColumnSpec] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn date_format(&self) -> &str {
        &self.date_format
    }

    pub fn epoch(&self) -> NaiveDate {
        self.epoch
    }

    pub fn target_index(&self) -> usize {
        self.target_index
    }

    pub fn target_name(&self) -> &str {
        &self.columns[self.target_index].name
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Indices of the columns that feed the feature vector, in schema order.
    pub fn feature_indices(&self) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.role.is_feature())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn feature_names(&self) -> Vec<&str> {
        self.feature_indices()
            .into_iter()
            .map(|i| self.columns[i].name.as_str())
            .collect()
    }

    /// Parse the TOML schema document.
    pub fn from_toml_str(text: &str) -> Result<Self, SchemaError> {
        let doc: SchemaDoc = toml::from_str(text).map_err(|e| SchemaError::Parse(e.to_string()))?;
        let mut columns = Vec::with_capacity(doc.columns.len());
        for c in doc.columns {
            let role = Role::parse(&c.role).ok_or_else(|| SchemaError::UnknownRole {
                column: c.name.clone(),
                role: c.role.clone(),
            })?;
            columns.push(ColumnSpec {
                name: c.name,
                role,
                nullable: c.nullable,
                empty_allowed: c.empty_allowed,
                allowed_values: c.allowed_values,
            });
        }
        let epoch = match &doc.epoch {
            Some(e) => NaiveDate::parse_from_str(e, "%Y-%m-%d").map_err(|_| SchemaError::InvalidEpoch(e.clone()))?,
            None => default_epoch(),
        };
        let schema = SchemaConfig::with_dates(
            columns,
            doc.date_format.as_deref().unwrap_or(DEFAULT_DATE_FORMAT),
            epoch,
        )?;
        if let Some(declared) = doc.target_name {
            if declared != schema.target_name() {
                return Err(SchemaError::TargetNameMismatch {
                    declared,
                    actual: schema.target_name().to_string(),
                });
            }
        }
        Ok(schema)
    }

    pub fn to_toml_string(&self) -> String {
        let doc = SchemaDoc {
            target_name: Some(self.target_name().to_string()),
            date_format: Some(self.date_format.clone()),
            epoch: Some(self.epoch.format("%Y-%m-%d").to_string()),
            columns: self
                .columns
                .iter()
                .map(|c| ColumnDoc {
                    name: c.name.clone(),
                    role: c.role.as_str().to_string(),
                    nullable: c.nullable,
                    empty_allowed: c.empty_allowed,
                    allowed_values: c.allowed_values.clone(),
                })
                .collect(),
        };
        toml::to_string(&doc).expect("schema document serializes")
    }
}

fn default_epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(1970, 1, 1).unwrap()
}

fn validate_date_format(fmt: &str) -> Result<(), SchemaError> {
    if fmt.is_empty() || StrftimeItems::new(fmt).any(|item| matches!(item, Item::Error)) {
        return Err(SchemaError::InvalidDateFormat(fmt.to_string()));
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    date_format: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    epoch: Option<String>,
    columns: Vec<ColumnDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ColumnDoc {
    name: String,
    role: String,
    #[serde(default)]
    nullable: bool,
    #[serde(default)]
    empty_allowed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    allowed_values: Option<Vec<String>>,
}

pub fn load_schema(path: &Path) -> Result<SchemaConfig, SchemaError> {
    let text = fs::read_to_string(path).map_err(|source| SchemaError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    SchemaConfig::from_toml_str(&text)
}

/// One cell as read from the file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Null,
    Empty,
    Value,
}

pub fn cell_kind(cell: Option<&str>) -> CellKind {
    match cell {
        None => CellKind::Null,
        Some("") => CellKind::Empty,
        Some(_) => CellKind::Value,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub row_id: usize,
    /// Cells in schema order. `None` is a null cell, `Some("")` an empty one.
    pub cells: Vec<Option<String>>,
}

impl RawRecord {
    pub fn cell(&self, index: usize) -> Option<&str> {
        self.cells.get(index).and_then(|c| c.as_deref())
    }
}

pub fn load_dataset(path: &Path, schema: &SchemaConfig, delimiter: u8) -> Result<Vec<RawRecord>, IngestError> {
    let bytes = fs::read(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_dataset(&bytes, schema, delimiter)
}

/// Parse dataset bytes (the file body of [`load_dataset`]).
pub fn parse_dataset(bytes: &[u8], schema: &SchemaConfig, delimiter: u8) -> Result<Vec<RawRecord>, IngestError> {
    let bytes = bytes.strip_prefix(b"\xEF\xBB\xBF").unwrap_or(bytes);
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(false)
        .flexible(true)
        .from_reader(bytes);
    let mut records = reader.records();

    let header = match records.next() {
        Some(h) => h?,
        None => return Err(IngestError::MissingHeader),
    };
    // file position -> schema position
    let mapping = bind_header(&header, schema)?;
    let width = schema.len();

    let mut out = Vec::new();
    for (row_id, rec) in records.enumerate() {
        let rec = rec?;
        if rec.len() > width {
            return Err(IngestError::TooManyCells {
                row_id,
                found: rec.len(),
                expected: width,
            });
        }
        let mut cells = vec![None; width];
        for (file_pos, value) in rec.iter().enumerate() {
            cells[mapping[file_pos]] = Some(value.to_string());
        }
        out.push(RawRecord { row_id, cells });
    }
    Ok(out)
}

fn bind_header(header: &csv::StringRecord, schema: &SchemaConfig) -> Result<Vec<usize>, IngestError> {
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    let mut mapping = Vec::with_capacity(names.len());
    let mut unexpected = Vec::new();
    let mut seen = HashSet::new();
    for name in &names {
        match schema.column_index(name) {
            Some(i) if seen.insert(i) => mapping.push(i),
            _ => unexpected.push(name.to_string()),
        }
    }
    let missing: Vec<String> = schema
        .columns()
        .iter()
        .enumerate()
        .filter(|(i, _)| !seen.contains(i))
        .map(|(_, c)| c.name.clone())
        .collect();
    if !missing.is_empty() || !unexpected.is_empty() {
        return Err(IngestError::HeaderMismatch { missing, unexpected });
    }
    Ok(mapping)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ab_schema() -> SchemaConfig {
        SchemaConfig::new(vec![
            ColumnSpec::new("a", Role::Categorical),
            ColumnSpec::new("b", Role::Target),
        ])
        .unwrap()
    }

    fn cells(r: &RawRecord) -> Vec<Option<&str>> {
        r.cells.iter().map(|c| c.as_deref()).collect()
    }

    #[test]
    fn single_row() {
        let recs = parse_dataset(b"a,b\nx,y\n", &ab_schema(), b',').unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].row_id, 0);
        assert_eq!(cells(&recs[0]), vec![Some("x"), Some("y")]);
    }

    #[test]
    fn trailing_delimiter_is_empty_short_row_is_null() {
        let recs = parse_dataset(b"a,b\nx,\nz\n", &ab_schema(), b',').unwrap();
        assert_eq!(cells(&recs[0]), vec![Some("x"), Some("")]);
        assert_eq!(cells(&recs[1]), vec![Some("z"), None]);
        assert_eq!(recs[1].row_id, 1);
    }

    #[test]
    fn header_only_is_empty_dataset() {
        assert!(parse_dataset(b"a,b\n", &ab_schema(), b',').unwrap().is_empty());
    }

    #[test]
    fn no_header_is_error() {
        assert!(matches!(
            parse_dataset(b"", &ab_schema(), b','),
            Err(IngestError::MissingHeader)
        ));
    }

    #[test]
    fn reordered_header_is_rebound() {
        let recs = parse_dataset(b"b,a\n1,x\n", &ab_schema(), b',').unwrap();
        assert_eq!(cells(&recs[0]), vec![Some("x"), Some("1")]);
    }

    #[test]
    fn header_mismatch_lists_names() {
        let err = parse_dataset(b"a,c\n", &ab_schema(), b',').unwrap_err();
        match err {
            IngestError::HeaderMismatch { missing, unexpected } => {
                assert_eq!(missing, vec!["b"]);
                assert_eq!(unexpected, vec!["c"]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn too_many_cells_reports_row() {
        let err = parse_dataset(b"a,b\n1,2\n1,2,3\n", &ab_schema(), b',').unwrap_err();
        assert!(matches!(
            err,
            IngestError::TooManyCells {
                row_id: 1,
                found: 3,
                ..
            }
        ));
    }

    #[test]
    fn quoted_fields_and_custom_delimiter() {
        let recs = parse_dataset(b"a;b\n\"DEPT; \"\"PARKS\"\"\";\"\"\n", &ab_schema(), b';').unwrap();
        assert_eq!(cells(&recs[0]), vec![Some("DEPT; \"PARKS\""), Some("")]);
    }

    #[test]
    fn minimal_schema_parses() {
        let s = SchemaConfig::from_toml_str(
            r#"
            [[columns]]
            name = "agency"
            role = "categorical"
            [[columns]]
            name = "annual_salary"
            role = "target"
            "#,
        )
        .unwrap();
        assert_eq!(s.target_name(), "annual_salary");
        assert_eq!(s.feature_names(), vec!["agency"]);
        assert_eq!(s.epoch(), NaiveDate::from_ymd_opt(1970, 1, 1).unwrap());
    }

    #[test]
    fn two_targets_rejected() {
        let err = SchemaConfig::from_toml_str(
            r#"
            [[columns]]
            name = "a"
            role = "target"
            [[columns]]
            name = "b"
            role = "target"
            "#,
        )
        .unwrap_err();
        assert!(err.to_string().starts_with("multiple targets"));
    }

    #[test]
    fn unknown_role_names_column() {
        let err = SchemaConfig::from_toml_str(
            r#"
            [[columns]]
            name = "salary"
            role = "money"
            "#,
        )
        .unwrap_err();
        assert!(matches!(&err, SchemaError::UnknownRole { column, .. } if column == "salary"));
        assert!(err.to_string().contains("salary"));
    }

    #[test]
    fn duplicate_and_missing_target() {
        let dup = SchemaConfig::new(vec![
            ColumnSpec::new("a", Role::Target),
            ColumnSpec::new("a", Role::Numeric),
        ]);
        assert!(matches!(dup, Err(SchemaError::DuplicateColumn(_))));
        let none = SchemaConfig::new(vec![ColumnSpec::new("a", Role::Numeric)]);
        assert!(matches!(none, Err(SchemaError::NoTarget)));
    }

    #[test]
    fn bad_date_format_rejected() {
        let r = SchemaConfig::with_dates(vec![ColumnSpec::new("t", Role::Target)], "%Q", default_epoch());
        assert!(matches!(r, Err(SchemaError::InvalidDateFormat(_))));
    }

    #[test]
    fn cell_kinds_are_exhaustive() {
        assert_eq!(cell_kind(None), CellKind::Null);
        assert_eq!(cell_kind(Some("")), CellKind::Empty);
        assert_eq!(cell_kind(Some(" ")), CellKind::Value);
    }
}
