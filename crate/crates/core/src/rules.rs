//! Basic quality rules checked on raw cells before modeling.
//!
//! Every rule is registered under a stable id. A row with any finding is routed
//! out of the modeling path; findings are data, never errors.

use std::collections::HashSet;
use std::io::Write;

use crate::encode::{date_to_days, parse_decimal};
use crate::ingest::{cell_kind, CellKind, ColumnSpec, RawRecord, Role, SchemaConfig};

pub const NULL_NOT_ALLOWED: &str = "null-not-allowed";
pub const EMPTY_NOT_ALLOWED: &str = "empty-not-allowed";
pub const INVALID_DATE: &str = "invalid-date";
pub const NOT_NUMERIC: &str = "not-numeric";
pub const TARGET_NOT_NUMERIC: &str = "target-not-numeric";
pub const VALUE_NOT_IN_DOMAIN: &str = "value-not-in-domain";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleViolation {
    pub row_id: usize,
    pub column: String,
    pub column_index: usize,
    pub rule_id: &'static str,
    pub observed: Option<String>,
    pub detail: String,
}

impl RuleViolation {
    pub fn new(
        record: &RawRecord,
        column_index: usize,
        schema: &SchemaConfig,
        rule_id: &'static str,
        detail: impl Into<String>,
    ) -> Self {
        RuleViolation {
            row_id: record.row_id,
            column: schema.columns()[column_index].name.clone(),
            column_index,
            rule_id,
            observed: record.cell(column_index).map(str::to_string),
            detail: detail.into(),
        }
    }
}

/// A cell-level check. Returns a detail message when the cell violates it.
pub trait Rule: Send + Sync {
    fn id(&self) -> &'static str;
    fn check(&self, column: &ColumnSpec, cell: Option<&str>, schema: &SchemaConfig) -> Option<String>;
}

struct NullNotAllowed;

impl Rule for NullNotAllowed {
    fn id(&self) -> &'static str {
        NULL_NOT_ALLOWED
    }

    fn check(&self, column: &ColumnSpec, cell: Option<&str>, _: &SchemaConfig) -> Option<String> {
        (cell.is_none() && !column.nullable).then(|| format!("`{}` cannot be null", column.name))
    }
}

struct EmptyNotAllowed;

impl Rule for EmptyNotAllowed {
    fn id(&self) -> &'static str {
        EMPTY_NOT_ALLOWED
    }

    fn check(&self, column: &ColumnSpec, cell: Option<&str>, _: &SchemaConfig) -> Option<String> {
        (cell == Some("") && !column.empty_allowed).then(|| format!("`{}` cannot be empty", column.name))
    }
}

struct InvalidDate;

impl Rule for InvalidDate {
    fn id(&self) -> &'static str {
        INVALID_DATE
    }

    fn check(&self, column: &ColumnSpec, cell: Option<&str>, schema: &SchemaConfig) -> Option<String> {
        if column.role != Role::Date || cell_kind(cell) != CellKind::Value {
            return None;
        }
        date_to_days(cell, schema.date_format(), schema.epoch())
            .err()
            .map(|e| e.to_string())
    }
}

struct NotNumeric;

impl Rule for NotNumeric {
    fn id(&self) -> &'static str {
        NOT_NUMERIC
    }

    fn check(&self, column: &ColumnSpec, cell: Option<&str>, _: &SchemaConfig) -> Option<String> {
        match (column.role, cell) {
            (Role::Numeric, Some(text)) if !text.is_empty() && parse_decimal(text).is_none() => {
                Some(format!("`{text}` is not a decimal number"))
            }
            _ => None,
        }
    }
}

/// The target must always carry a number. Null or empty targets are reported
/// here only when the null/empty rules would let them through.
struct TargetNotNumeric;

impl Rule for TargetNotNumeric {
    fn id(&self) -> &'static str {
        TARGET_NOT_NUMERIC
    }

    fn check(&self, column: &ColumnSpec, cell: Option<&str>, _: &SchemaConfig) -> Option<String> {
        if column.role != Role::Target {
            return None;
        }
        match cell {
            None if column.nullable => Some("target is null".to_string()),
            Some("") if column.empty_allowed => Some("target is empty".to_string()),
            Some(text) if !text.is_empty() && parse_decimal(text).is_none() => {
                Some(format!("`{text}` is not a decimal number"))
            }
            _ => None,
        }
    }
}

struct ValueNotInDomain;

impl Rule for ValueNotInDomain {
    fn id(&self) -> &'static str {
        VALUE_NOT_IN_DOMAIN
    }

    fn check(&self, column: &ColumnSpec, cell: Option<&str>, _: &SchemaConfig) -> Option<String> {
        let allowed = column.allowed_values.as_ref()?;
        match cell {
            Some(text) if !text.is_empty() && !allowed.iter().any(|a| a == text) => {
                Some(format!("`{text}` is not one of {allowed:?} for `{}`", column.name))
            }
            _ => None,
        }
    }
}

/// An ordered set of registered rules.
pub struct RuleSet {
    rules: Vec<Box<dyn Rule>>,
}

impl Default for RuleSet {
    fn default() -> Self {
        RuleSet {
            rules: vec![
                Box::new(NullNotAllowed),
                Box::new(EmptyNotAllowed),
                Box::new(InvalidDate),
                Box::new(NotNumeric),
                Box::new(TargetNotNumeric),
                Box::new(ValueNotInDomain),
            ],
        }
    }
}

impl RuleSet {
    pub fn empty() -> Self {
        RuleSet { rules: Vec::new() }
    }

    /// Registers a rule; panics on a duplicate id.
    pub fn register(&mut self, rule: Box<dyn Rule>) {
        assert!(
            !self.ids().contains(&rule.id()),
            "rule `{}` already registered",
            rule.id()
        );
        self.rules.push(rule);
    }

    pub fn ids(&self) -> Vec<&'static str> {
        self.rules.iter().map(|r| r.id()).collect()
    }

    pub fn check_row(&self, record: &RawRecord, schema: &SchemaConfig) -> Vec<RuleViolation> {
        let mut out = Vec::new();
        for (i, column) in schema.columns().iter().enumerate() {
            if column.role == Role::Ignore {
                continue;
            }
            let cell = record.cell(i);
            for rule in &self.rules {
                if let Some(detail) = rule.check(column, cell, schema) {
                    out.push(RuleViolation::new(record, i, schema, rule.id(), detail));
                }
            }
        }
        out
    }

    pub fn run(&self, records: &[RawRecord], schema: &SchemaConfig) -> (Vec<RawRecord>, Vec<RuleViolation>) {
        let mut clean = Vec::with_capacity(records.len());
        let mut violations = Vec::new();
        for rec in records {
            let found = self.check_row(rec, schema);
            if found.is_empty() {
                clean.push(rec.clone());
            } else {
                violations.extend(found);
            }
        }
        (clean, violations)
    }
}

pub fn check_row(record: &RawRecord, schema: &SchemaConfig) -> Vec<RuleViolation> {
    RuleSet::default().check_row(record, schema)
}

/// Partition records into clean rows and the findings of the rejected ones.
pub fn run_cbqr(records: &[RawRecord], schema: &SchemaConfig) -> (Vec<RawRecord>, Vec<RuleViolation>) {
    RuleSet::default().run(records, schema)
}

/// Distinct row ids that carry at least one finding, ascending.
pub fn flagged_rows(violations: &[RuleViolation]) -> Vec<usize> {
    let mut ids: Vec<usize> = violations.iter().map(|v| v.row_id).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// Sort by (row_id, column index) and drop repeated (row, column, rule) triples.
pub fn normalize(mut violations: Vec<RuleViolation>) -> Vec<RuleViolation> {
    violations.sort_by_key(|v| (v.row_id, v.column_index));
    let mut seen = HashSet::new();
    violations.retain(|v| seen.insert((v.row_id, v.column_index, v.rule_id)));
    violations
}

pub fn write_violations<W: Write>(out: W, violations: &[RuleViolation]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["row_id", "column", "rule_id", "observed", "detail"])?;
    for v in violations {
        w.write_record([
            v.row_id.to_string().as_str(),
            &v.column,
            v.rule_id,
            v.observed.as_deref().unwrap_or(""),
            &v.detail,
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schema() -> SchemaConfig {
        SchemaConfig::new(vec![
            ColumnSpec::new("agency", Role::Categorical),
            ColumnSpec::new("note", Role::Ignore),
            ColumnSpec::new("hired", Role::Date).nullable(true),
            ColumnSpec::new("sex", Role::Categorical).allowed_values(["M", "F"]),
            ColumnSpec::new("salary", Role::Target),
        ])
        .unwrap()
    }

    fn rec(row_id: usize, cells: [Option<&str>; 5]) -> RawRecord {
        RawRecord {
            row_id,
            cells: cells.iter().map(|c| c.map(str::to_string)).collect(),
        }
    }

    fn ok_row(id: usize) -> RawRecord {
        rec(id, [Some("X"), Some("n"), Some("2001-05-01"), Some("F"), Some("1")])
    }

    fn ids(v: &[RuleViolation]) -> Vec<&str> {
        v.iter().map(|v| v.rule_id).collect()
    }

    #[test]
    fn null_in_non_nullable() {
        let mut r = ok_row(0);
        r.cells[0] = None;
        assert_eq!(ids(&check_row(&r, &schema())), vec!["null-not-allowed"]);
    }

    #[test]
    fn empty_not_allowed() {
        let mut r = ok_row(0);
        r.cells[0] = Some(String::new());
        assert_eq!(ids(&check_row(&r, &schema())), vec!["empty-not-allowed"]);
    }

    #[test]
    fn clean_row() {
        assert!(check_row(&ok_row(0), &schema()).is_empty());
        let mut r = ok_row(0);
        r.cells[2] = None; // nullable date
        assert!(check_row(&r, &schema()).is_empty());
    }

    #[test]
    fn date_numeric_and_domain_rules() {
        let r = rec(4, [Some("X"), None, Some("2016-02-30"), Some("Q"), Some("12k")]);
        let v = check_row(&r, &schema());
        assert_eq!(
            ids(&v),
            vec!["invalid-date", "value-not-in-domain", "target-not-numeric"]
        );
        assert_eq!(v[0].observed.as_deref(), Some("2016-02-30"));
        assert_eq!(v[1].column, "sex");
    }

    #[test]
    fn ignore_columns_never_flagged() {
        let mut r = ok_row(0);
        r.cells[1] = None;
        assert!(check_row(&r, &schema()).is_empty());
    }

    #[test]
    fn partition_and_multiplicity() {
        let mut bad = ok_row(1);
        bad.cells[0] = None;
        let rows = vec![ok_row(0), bad, ok_row(2)];
        let (clean, v) = run_cbqr(&rows, &schema());
        assert_eq!(clean.iter().map(|r| r.row_id).collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(flagged_rows(&v), vec![1]);

        let two = rec(7, [None, None, Some("nope"), Some("F"), Some("1")]);
        let (clean, v) = run_cbqr(&[two], &schema());
        assert!(clean.is_empty());
        assert_eq!(v.len(), 2);
        assert_eq!(flagged_rows(&v), vec![7]);

        let (c, v) = run_cbqr(&[], &schema());
        assert!(c.is_empty() && v.is_empty());
    }

    #[test]
    fn nullable_target_still_needs_a_number() {
        let s = SchemaConfig::new(vec![ColumnSpec::new("t", Role::Target).nullable(true)]).unwrap();
        let r = RawRecord {
            row_id: 0,
            cells: vec![None],
        };
        assert_eq!(ids(&check_row(&r, &s)), vec!["target-not-numeric"]);
    }

    #[test]
    fn custom_rule_registration() {
        struct NoLowercase;
        impl Rule for NoLowercase {
            fn id(&self) -> &'static str {
                "no-lowercase"
            }
            fn check(&self, _: &ColumnSpec, cell: Option<&str>, _: &SchemaConfig) -> Option<String> {
                cell.filter(|c| c.chars().any(char::is_lowercase))
                    .map(|_| "lowercase".into())
            }
        }
        let mut set = RuleSet::empty();
        set.register(Box::new(NoLowercase));
        let v = set.check_row(&ok_row(0), &schema());
        // "n" sits in the ignored column and is skipped
        assert!(v.is_empty());
        let mut r = ok_row(0);
        r.cells[0] = Some("x".into());
        assert_eq!(ids(&set.check_row(&r, &schema())), vec!["no-lowercase"]);
    }

    #[test]
    fn normalize_sorts_and_dedups() {
        let mut a = check_row(&rec(2, [None, None, None, None, None]), &schema());
        let b = check_row(&rec(1, [None, None, None, None, None]), &schema());
        a.extend(b.clone());
        a.extend(b);
        let n = normalize(a);
        assert!(n
            .windows(2)
            .all(|w| (w[0].row_id, w[0].column_index) <= (w[1].row_id, w[1].column_index)));
        assert_eq!(n.len(), 6);
    }

    #[test]
    fn report_format() {
        let v = check_row(&rec(3, [None, None, None, Some("M"), Some("1")]), &schema());
        let mut buf = Vec::new();
        write_violations(&mut buf, &v).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "row_id,column,rule_id,observed,detail\n3,agency,null-not-allowed,,`agency` cannot be null\n"
        );
    }

    fn cell() -> impl Strategy<Value = Option<String>> {
        prop_oneof![
            Just(None),
            Just(Some(String::new())),
            Just(Some("M".to_string())),
            Just(Some("2020-01-01".to_string())),
            Just(Some("12.5".to_string())),
            "[a-z0-9-]{1,6}".prop_map(Some),
        ]
    }

    proptest! {
        #[test]
        fn partition_property(rows in proptest::collection::vec(proptest::collection::vec(cell(), 5), 0..30)) {
            let records: Vec<RawRecord> = rows
                .into_iter()
                .enumerate()
                .map(|(row_id, cells)| RawRecord { row_id, cells })
                .collect();
            let (clean, v) = run_cbqr(&records, &schema());
            let flagged = flagged_rows(&v);
            let mut all: Vec<usize> = clean.iter().map(|r| r.row_id).chain(flagged.iter().copied()).collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..records.len()).collect::<Vec<_>>());
            prop_assert!(v.iter().all(|v| v.column != "note"));
            // pure
            prop_assert_eq!(run_cbqr(&records, &schema()).1, v);
        }
    }
}
