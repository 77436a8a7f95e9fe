//! Numeric encoding of raw cells.
//!
//! Categorical cells become 32-bit polynomial string hashes, date cells become
//! signed day counts from the schema epoch, numeric cells are parsed as
//! decimals. Null and empty cells keep the sentinel codes -1 and 0 so they stay
//! visible to the model after encoding.

use std::io::Write;

use chrono::NaiveDate;
use thiserror::Error;

use crate::ingest::{RawRecord, Role, SchemaConfig};
use crate::rules::{self, RuleViolation};

pub const NULL_CODE: i32 = -1;
pub const EMPTY_CODE: i32 = 0;

/// Polynomial base-31 hash over UTF-16 code units with wrapping 32-bit
/// arithmetic (`h = 31*h + c`). Null hashes to -1 and the empty string to 0.
pub fn string_hash(value: Option<&str>) -> i32 {
    match value {
        None => NULL_CODE,
        Some(s) => s
            .encode_utf16()
            .fold(0i32, |h, unit| h.wrapping_mul(31).wrapping_add(i32::from(unit))),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("`{value}` is not a valid date for format `{format}`")]
pub struct DateError {
    pub value: String,
    pub format: String,
}

/// Whole days from `epoch` to the date in `value`, negative before the epoch.
pub fn date_to_days(value: Option<&str>, format: &str, epoch: NaiveDate) -> Result<i64, DateError> {
    match value {
        None => Ok(i64::from(NULL_CODE)),
        Some("") => Ok(i64::from(EMPTY_CODE)),
        Some(text) => NaiveDate::parse_from_str(text.trim(), format)
            .map(|d| (d - epoch).num_days())
            .map_err(|_| DateError {
                value: text.to_string(),
                format: format.to_string(),
            }),
    }
}

/// Finite decimal parse; surrounding whitespace is ignored.
pub fn parse_decimal(text: &str) -> Option<f64> {
    text.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedRow {
    pub row_id: usize,
    pub features: Vec<f64>,
    pub target: f64,
    /// Integer code of each feature cell before scaling. Numeric cells hold
    /// their value truncated toward zero (saturating).
    pub raw_hashes: Vec<i32>,
}

enum CellCode {
    Ok(f64, i32),
    Bad { rule_id: &'static str, detail: String },
}

fn encode_cell(cell: Option<&str>, role: Role, schema: &SchemaConfig) -> CellCode {
    match role {
        Role::Categorical => {
            let h = string_hash(cell);
            CellCode::Ok(f64::from(h), h)
        }
        Role::Date => match date_to_days(cell, schema.date_format(), schema.epoch()) {
            Ok(days) => {
                let code = days.clamp(i64::from(i32::MIN), i64::from(i32::MAX)) as i32;
                CellCode::Ok(days as f64, code)
            }
            Err(e) => CellCode::Bad {
                rule_id: rules::INVALID_DATE,
                detail: e.to_string(),
            },
        },
        Role::Numeric => match cell {
            None => CellCode::Ok(f64::from(NULL_CODE), NULL_CODE),
            Some("") => CellCode::Ok(f64::from(EMPTY_CODE), EMPTY_CODE),
            Some(text) => match parse_decimal(text) {
                Some(v) => CellCode::Ok(v, v as i32),
                None => CellCode::Bad {
                    rule_id: rules::NOT_NUMERIC,
                    detail: format!("`{text}` is not a decimal number"),
                },
            },
        },
        Role::Target | Role::Ignore => unreachable!("not a feature role"),
    }
}

/// Encode every record; rows with an unparsable date, numeric or target cell
/// are left out of the encoded output and reported as violations instead.
pub fn encode_dataset(records: &[RawRecord], schema: &SchemaConfig) -> (Vec<EncodedRow>, Vec<RuleViolation>) {
    let feature_idx = schema.feature_indices();
    let target_idx = schema.target_index();
    let mut rows = Vec::with_capacity(records.len());
    let mut violations = Vec::new();

    for rec in records {
        let mut features = Vec::with_capacity(feature_idx.len());
        let mut raw = Vec::with_capacity(feature_idx.len());
        let mut bad = Vec::new();
        for &i in &feature_idx {
            let col = &schema.columns()[i];
            match encode_cell(rec.cell(i), col.role, schema) {
                CellCode::Ok(v, code) => {
                    features.push(v);
                    raw.push(code);
                }
                CellCode::Bad { rule_id, detail } => {
                    bad.push(RuleViolation::new(rec, i, schema, rule_id, detail));
                }
            }
        }
        let target_cell = rec.cell(target_idx);
        let target = target_cell.and_then(parse_decimal);
        if target.is_none() {
            let detail = match target_cell {
                None => "target is null".to_string(),
                Some("") => "target is empty".to_string(),
                Some(t) => format!("`{t}` is not a decimal number"),
            };
            bad.push(RuleViolation::new(
                rec,
                target_idx,
                schema,
                rules::TARGET_NOT_NUMERIC,
                detail,
            ));
        }
        match target {
            Some(target) if bad.is_empty() => rows.push(EncodedRow {
                row_id: rec.row_id,
                features,
                target,
                raw_hashes: raw,
            }),
            _ => violations.extend(bad),
        }
    }
    (rows, violations)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScalingError {
    #[error("need at least 2 rows to fit scaling, got {0}")]
    TooFewRows(usize),
    #[error("feature arity mismatch: expected {expected}, got {found}")]
    Arity { expected: usize, found: usize },
}

/// Per-column z-score parameters. A stddev of 0 marks a constant column.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingParams {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
}

impl ScalingParams {
    /// Mean 0, stddev 1 for every column: scaling is a no-op.
    pub fn identity(arity: usize) -> Self {
        ScalingParams {
            feature_mean: vec![0.0; arity],
            feature_std: vec![1.0; arity],
            target_mean: 0.0,
            target_std: 1.0,
        }
    }

    pub fn arity(&self) -> usize {
        self.feature_mean.len()
    }

    pub fn scale_features(&self, features: &[f64]) -> Result<Vec<f64>, ScalingError> {
        if features.len() != self.arity() {
            return Err(ScalingError::Arity {
                expected: self.arity(),
                found: features.len(),
            });
        }
        Ok(features
            .iter()
            .zip(self.feature_mean.iter().zip(&self.feature_std))
            .map(|(&x, (&m, &s))| standardize(x, m, s))
            .collect())
    }

    pub fn scale_target(&self, target: f64) -> f64 {
        standardize(target, self.target_mean, self.target_std)
    }

    pub fn unscale_target(&self, scaled: f64) -> f64 {
        scaled * self.target_std + self.target_mean
    }
}

fn standardize(x: f64, mean: f64, std: f64) -> f64 {
    if std == 0.0 {
        0.0
    } else {
        (x - mean) / std
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = values.clone().sum::<f64>() / nf;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
    (mean, var.sqrt())
}

/// Population (divisor n) mean and stddev of every feature and the target.
pub fn fit_scaling(rows: &[EncodedRow]) -> Result<ScalingParams, ScalingError> {
    if rows.len() < 2 {
        return Err(ScalingError::TooFewRows(rows.len()));
    }
    let arity = rows[0].features.len();
    if let Some(r) = rows.iter().find(|r| r.features.len() != arity) {
        return Err(ScalingError::Arity {
            expected: arity,
            found: r.features.len(),
        });
    }
    let n = rows.len();
    let (feature_mean, feature_std) = (0..arity)
        .map(|j| mean_std(rows.iter().map(move |r| r.features[j]), n))
        .unzip();
    let (target_mean, target_std) = mean_std(rows.iter().map(|r| r.target), n);
    Ok(ScalingParams {
        feature_mean,
        feature_std,
        target_mean,
        target_std,
    })
}

pub fn apply_scaling(row: &EncodedRow, params: &ScalingParams) -> Result<EncodedRow, ScalingError> {
    Ok(EncodedRow {
        row_id: row.row_id,
        features: params.scale_features(&row.features)?,
        target: params.scale_target(row.target),
        raw_hashes: row.raw_hashes.clone(),
    })
}

/// Write the encoded matrix: `row_id,f0..f{k-1},target`.
pub fn write_encoded<W: Write>(out: W, rows: &[EncodedRow], arity: usize) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["row_id".to_string()];
    header.extend((0..arity).map(|j| format!("f{j}")));
    header.push("target".to_string());
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.row_id.to_string()];
        rec.extend(r.features.iter().map(f64::to_string));
        rec.push(r.target.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
