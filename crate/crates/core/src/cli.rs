//! Pipeline orchestration: ingest, rule checks, encoding, training,
//! whole-dataset scoring, control limits and report output.
//!
//! Every output is fully computed before anything is written. If a write
//! fails, files already written by the run are removed again.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::encode::{encode_dataset, write_encoded, EncodedRow};
use crate::ingest::{load_dataset, load_schema, RawRecord, SchemaConfig};
use crate::mlp::{self, save_model, EvalMetrics, MlpModel, SweepReport, TrainConfig};
use crate::rules::{self, RuleViolation};
use crate::spc::{
    self, chart_points, classify, estimate_limits, render_svg, write_chart_data, write_report, Classification,
    ControlLimits, EstimationMode, OutlierRecord, ResidualRow,
};

pub const TOOL_VERSION: &str = concat!("dqprof ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Ingest,
    Training,
    Spc,
}

impl Stage {
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config => 1,
            Stage::Ingest => 2,
            Stage::Training => 3,
            Stage::Spc => 4,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Training => "training",
            Stage::Spc => "spc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

impl PipelineError {
    fn new(stage: Stage, message: impl fmt::Display) -> Self {
        PipelineError {
            stage,
            message: message.to_string(),
        }
    }
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.stage.name(), self.message)
    }
}

impl std::error::Error for PipelineError {}

#[derive(Debug, Clone, PartialEq)]
pub struct SpcConfig {
    pub mode: EstimationMode,
    pub sample_size: usize,
    pub seed: u64,
}

impl Default for SpcConfig {
    fn default() -> Self {
        SpcConfig {
            mode: EstimationMode::CltSample,
            sample_size: 100,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OutputPaths {
    pub violations: Option<PathBuf>,
    pub report: Option<PathBuf>,
    /// SVG chart; its plot data goes to `chart_data`, or next to the chart as
    /// `<stem>.points.csv` when that is unset.
    pub chart: Option<PathBuf>,
    pub chart_data: Option<PathBuf>,
    pub sweep_report: Option<PathBuf>,
    pub encoded: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
}

impl OutputPaths {
    fn chart_data_path(&self) -> Option<PathBuf> {
        self.chart_data
            .clone()
            .or_else(|| self.chart.as_ref().map(|c| c.with_extension("points.csv")))
    }

    fn all(&self) -> Vec<&Path> {
        [
            &self.violations,
            &self.report,
            &self.chart,
            &self.sweep_report,
            &self.encoded,
            &self.model,
            &self.predictions,
        ]
        .into_iter()
        .filter_map(|p| p.as_deref())
        .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub schema: PathBuf,
    pub delimiter: u8,
    pub train: TrainConfig,
    pub spc: SpcConfig,
    pub outputs: OutputPaths,
    pub verbosity: u8,
}

impl PipelineConfig {
    pub fn new(input: impl Into<PathBuf>, schema: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            input: input.into(),
            schema: schema.into(),
            delimiter: b',',
            train: TrainConfig::default(),
            spc: SpcConfig::default(),
            outputs: OutputPaths::default(),
            verbosity: 0,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let mut paths = vec![self.input.as_path(), self.schema.as_path()];
        paths.extend(self.outputs.all());
        let data = self.outputs.chart_data_path();
        if let Some(d) = data.as_deref() {
            paths.push(d);
        }
        let mut seen = HashSet::new();
        for p in paths {
            if !seen.insert(p) {
                return Err(PipelineError::new(
                    Stage::Config,
                    format!("path {} is used more than once", p.display()),
                ));
            }
        }
        self.train
            .validate()
            .map_err(|e| PipelineError::new(Stage::Config, e))?;
        if self.spc.mode == EstimationMode::CltSample && self.spc.sample_size < 2 {
            return Err(PipelineError::new(Stage::Config, "sample size must be at least 2"));
        }
        Ok(())
    }

    /// Short SHA-256 over everything that determines the results. Output
    /// paths are left out so reruns into another directory match.
    pub fn digest(&self) -> String {
        let canonical = format!(
            "input={}\nschema={}\ndelimiter={}\ntrain={:?}\nspc={:?}\n",
            self.input.display(),
            self.schema.display(),
            self.delimiter,
            self.train,
            self.spc
        );
        hex::encode(Sha256::digest(canonical.as_bytes()))[..16].to_string()
    }

    /// Comment lines placed at the top of every output file.
    pub fn header_lines(&self, what: &str) -> Vec<String> {
        vec![
            format!("tool: {TOOL_VERSION}"),
            format!("output: {what}"),
            format!("config-digest: {}", self.digest()),
            format!("train-seed: {}", self.train.seed),
            format!(
                "spc: mode={} sample-size={} seed={}",
                self.spc.mode, self.spc.sample_size, self.spc.seed
            ),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSummary {
    pub rows_in: usize,
    pub clean_rows: usize,
    pub violating_rows: usize,
    pub violations: usize,
    pub train_rows: usize,
    pub test_rows: usize,
    pub metrics: EvalMetrics,
    pub predicted_rows: usize,
    pub limits: ControlLimits,
    pub outliers: usize,
    pub undefined_ratios: usize,
    pub report_rows: usize,
}

impl fmt::Display for PipelineSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rows in:          {}", self.rows_in)?;
        writeln!(f, "clean rows:       {}", self.clean_rows)?;
        writeln!(
            f,
            "violating rows:   {} ({} findings)",
            self.violating_rows, self.violations
        )?;
        writeln!(f, "train/test:       {}/{}", self.train_rows, self.test_rows)?;
        writeln!(
            f,
            "test metrics:     r={} mae={:.4} rmse={:.4}",
            self.metrics
                .correlation
                .map_or("undefined".to_string(), |r| format!("{r:.4}")),
            self.metrics.mean_absolute_error,
            self.metrics.root_mean_squared_error
        )?;
        writeln!(f, "predicted rows:   {}", self.predicted_rows)?;
        writeln!(
            f,
            "limits ({}):  mu={:.6} sigma={:.6} UCL={:.6} CL={:.6} LCL={:.6}",
            self.limits.mode, self.limits.mu, self.limits.sigma, self.limits.ucl, self.limits.cl, self.limits.lcl
        )?;
        writeln!(f, "outliers:         {}", self.outliers)?;
        writeln!(f, "undefined ratios: {}", self.undefined_ratios)?;
        write!(f, "report rows:      {}", self.report_rows)
    }
}

/// Everything the pipeline computed, before any file is written.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub summary: PipelineSummary,
    pub violations: Vec<RuleViolation>,
    pub encoded: Vec<EncodedRow>,
    pub model: MlpModel,
    pub records: Vec<OutlierRecord>,
    pub limits: ControlLimits,
}

struct Prepared {
    schema: SchemaConfig,
    rows_in: usize,
    violations: Vec<RuleViolation>,
    encoded: Vec<EncodedRow>,
}

fn prepare(cfg: &PipelineConfig) -> Result<Prepared, PipelineError> {
    cfg.validate()?;
    let schema = load_schema(&cfg.schema).map_err(|e| PipelineError::new(Stage::Config, e))?;
    let records: Vec<RawRecord> =
        load_dataset(&cfg.input, &schema, cfg.delimiter).map_err(|e| PipelineError::new(Stage::Ingest, e))?;
    if records.is_empty() {
        return Err(PipelineError::new(Stage::Ingest, "no data rows"));
    }
    let (clean, mut violations) = rules::run_cbqr(&records, &schema);
    let (encoded, encode_violations) = encode_dataset(&clean, &schema);
    violations.extend(encode_violations);
    let violations = rules::normalize(violations);
    log::info!(
        "ingest: {} rows, {} clean after rules, {} encoded",
        records.len(),
        clean.len(),
        encoded.len()
    );
    if encoded.len() < 2 {
        return Err(PipelineError::new(
            Stage::Ingest,
            format!("only {} clean rows; need at least 2", encoded.len()),
        ));
    }
    Ok(Prepared {
        schema,
        rows_in: records.len(),
        violations,
        encoded,
    })
}

/// Run every stage and return the results without writing anything.
pub fn compute_pipeline(cfg: &PipelineConfig) -> Result<(PipelineRun, SchemaConfig), PipelineError> {
    let prepared = prepare(cfg)?;
    let (model, metrics) =
        mlp::train(&prepared.encoded, &cfg.train).map_err(|e| PipelineError::new(Stage::Training, e))?;
    let predictions = prepared
        .encoded
        .iter()
        .map(|r| model.predict(&r.features))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| PipelineError::new(Stage::Training, e))?;

    let actuals: Vec<f64> = prepared.encoded.iter().map(|r| r.target).collect();
    let ids: Vec<usize> = prepared.encoded.iter().map(|r| r.row_id).collect();
    let (records, limits) = score(&actuals, &predictions, &ids, &cfg.spc)?;

    let n_encoded = prepared.encoded.len();
    let summary = PipelineSummary {
        rows_in: prepared.rows_in,
        clean_rows: n_encoded,
        violating_rows: prepared.rows_in - n_encoded,
        violations: prepared.violations.len(),
        train_rows: n_encoded - metrics.n_test,
        test_rows: metrics.n_test,
        metrics,
        predicted_rows: predictions.len(),
        limits,
        outliers: spc::count(&records, Classification::Outlier),
        undefined_ratios: spc::count(&records, Classification::UndefinedRatio),
        report_rows: records.len(),
    };
    Ok((
        PipelineRun {
            summary,
            violations: prepared.violations,
            encoded: prepared.encoded,
            model,
            records,
            limits,
        },
        prepared.schema,
    ))
}

/// Residuals, control limits and classification for scored rows.
pub fn score(
    actuals: &[f64],
    predictions: &[f64],
    row_ids: &[usize],
    cfg: &SpcConfig,
) -> Result<(Vec<OutlierRecord>, ControlLimits), PipelineError> {
    let rows: Vec<ResidualRow> =
        spc::residuals(actuals, predictions, row_ids).map_err(|e| PipelineError::new(Stage::Spc, e))?;
    let ratios: Vec<f64> = rows.iter().filter_map(|r| r.difference_ratio).collect();
    let limits =
        estimate_limits(&ratios, cfg.mode, cfg.sample_size, cfg.seed).map_err(|e| PipelineError::new(Stage::Spc, e))?;
    Ok((classify(&rows, &limits), limits))
}

/// Collects written files so a failed run can remove them.
struct OutputSet {
    written: Vec<PathBuf>,
}

impl OutputSet {
    fn new() -> Self {
        OutputSet { written: Vec::new() }
    }

    fn write(&mut self, path: &Path, bytes: Vec<u8>, stage: Stage) -> Result<(), PipelineError> {
        match fs::write(path, bytes) {
            Ok(()) => {
                self.written.push(path.to_path_buf());
                Ok(())
            }
            Err(e) => {
                self.rollback();
                Err(PipelineError::new(
                    stage,
                    format!("cannot write {}: {e}", path.display()),
                ))
            }
        }
    }

    fn rollback(&mut self) {
        for p in self.written.drain(..) {
            let _ = fs::remove_file(p);
        }
    }
}

fn commented(lines: &[String]) -> Vec<u8> {
    lines
        .iter()
        .map(|l| format!("# {l}\n"))
        .collect::<String>()
        .into_bytes()
}

fn csv_bytes<F>(cfg: &PipelineConfig, what: &str, body: F) -> Result<Vec<u8>, String>
where
    F: FnOnce(&mut Vec<u8>) -> csv::Result<()>,
{
    let mut buf = commented(&cfg.header_lines(what));
    body(&mut buf).map_err(|e| e.to_string())?;
    Ok(buf)
}

fn emit<F>(
    out: &mut OutputSet,
    cfg: &PipelineConfig,
    path: &Path,
    what: &str,
    stage: Stage,
    body: F,
) -> Result<(), PipelineError>
where
    F: FnOnce(&mut Vec<u8>) -> csv::Result<()>,
{
    match csv_bytes(cfg, what, body) {
        Ok(bytes) => out.write(path, bytes, stage),
        Err(e) => {
            out.rollback();
            Err(PipelineError::new(stage, e))
        }
    }
}

pub fn write_predictions<W: std::io::Write>(out: W, records: &[OutlierRecord]) -> csv::Result<()> {
    let mut sorted: Vec<&ResidualRow> = records.iter().map(|r| &r.residual).collect();
    sorted.sort_by_key(|r| r.row_id);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["row_id", "actual", "predicted"])?;
    for r in sorted {
        w.write_record([r.row_id.to_string(), r.actual.to_string(), r.predicted.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Row ids, actual values and predictions, in file order.
pub type Predictions = (Vec<usize>, Vec<f64>, Vec<f64>);

/// Read a `row_id,actual,predicted` file; `#` lines are comments.
pub fn read_predictions(path: &Path) -> Result<Predictions, PipelineError> {
    let err = |e: &dyn fmt::Display| PipelineError::new(Stage::Ingest, format!("{}: {e}", path.display()));
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| err(&e))?;
    let headers = reader.headers().map_err(|e| err(&e))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| err(&format!("missing column `{name}`")))
    };
    let (ci, ca, cp) = (col("row_id")?, col("actual")?, col("predicted")?);
    let (mut ids, mut actual, mut predicted) = (Vec::new(), Vec::new(), Vec::new());
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| err(&e))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let bad = |what: &str| err(&format!("data row {line}: bad {what}"));
        ids.push(field(ci).trim().parse().map_err(|_| bad("row_id"))?);
        actual.push(crate::encode::parse_decimal(field(ca)).ok_or_else(|| bad("actual"))?);
        predicted.push(crate::encode::parse_decimal(field(cp)).ok_or_else(|| bad("predicted"))?);
    }
    Ok((ids, actual, predicted))
}

fn write_spc_outputs(
    out: &mut OutputSet,
    cfg: &PipelineConfig,
    records: &[OutlierRecord],
    limits: &ControlLimits,
    target_name: &str,
) -> Result<(), PipelineError> {
    let limit_lines = |mut lines: Vec<String>| {
        lines.push(format!(
            "limits: mu={} sigma={} ucl={} cl={} lcl={}",
            limits.mu, limits.sigma, limits.ucl, limits.cl, limits.lcl
        ));
        lines
    };
    if let Some(p) = &cfg.outputs.report {
        let mut bytes = commented(&limit_lines(cfg.header_lines("outlier report")));
        write_report(&mut bytes, records, target_name).map_err(|e| PipelineError::new(Stage::Spc, e))?;
        out.write(p, bytes, Stage::Spc)?;
    }
    if let Some(p) = &cfg.outputs.predictions {
        emit(out, cfg, p, "predictions", Stage::Spc, |b| {
            write_predictions(b, records)
        })?;
    }
    if let Some(p) = &cfg.outputs.chart {
        let series = chart_points(records, limits);
        let svg = render_svg(&series, &limit_lines(cfg.header_lines("control chart")));
        out.write(p, svg.into_bytes(), Stage::Spc)?;
        let data_path = cfg.outputs.chart_data_path().expect("chart path set");
        let mut bytes = commented(&limit_lines(cfg.header_lines("control chart data")));
        write_chart_data(&mut bytes, &series).map_err(|e| PipelineError::new(Stage::Spc, e))?;
        out.write(&data_path, bytes, Stage::Spc)?;
    }
    Ok(())
}

/// Full pipeline: compute everything, then write the requested outputs.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineSummary, PipelineError> {
    let (run, schema) = compute_pipeline(cfg)?;
    let mut out = OutputSet::new();
    if let Some(p) = &cfg.outputs.violations {
        emit(&mut out, cfg, p, "violations", Stage::Ingest, |b| {
            rules::write_violations(b, &run.violations)
        })?;
    }
    if let Some(p) = &cfg.outputs.encoded {
        let arity = schema.feature_indices().len();
        emit(&mut out, cfg, p, "encoded matrix", Stage::Ingest, |b| {
            write_encoded(b, &run.encoded, arity)
        })?;
    }
    if let Some(p) = &cfg.outputs.model {
        let mut bytes = Vec::new();
        mlp::write_model(&mut bytes, &run.model, &cfg.header_lines("model"))
            .map_err(|e| PipelineError::new(Stage::Training, e))?;
        out.write(p, bytes, Stage::Training)?;
    }
    write_spc_outputs(&mut out, cfg, &run.records, &run.limits, schema.target_name())?;
    Ok(run.summary)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckSummary {
    pub rows_in: usize,
    pub clean_rows: usize,
    pub violations: Vec<RuleViolation>,
    pub encoded: Vec<EncodedRow>,
}

/// Rule checks and encoding only; writes violations and the encoded matrix
/// when requested.
pub fn run_check(cfg: &PipelineConfig) -> Result<CheckSummary, PipelineError> {
    let prepared = prepare(cfg)?;
    let mut out = OutputSet::new();
    if let Some(p) = &cfg.outputs.violations {
        emit(&mut out, cfg, p, "violations", Stage::Ingest, |b| {
            rules::write_violations(b, &prepared.violations)
        })?;
    }
    if let Some(p) = &cfg.outputs.encoded {
        let arity = prepared.schema.feature_indices().len();
        emit(&mut out, cfg, p, "encoded matrix", Stage::Ingest, |b| {
            write_encoded(b, &prepared.encoded, arity)
        })?;
    }
    Ok(CheckSummary {
        rows_in: prepared.rows_in,
        clean_rows: prepared.encoded.len(),
        violations: prepared.violations,
        encoded: prepared.encoded,
    })
}

/// Train one model and save it when a model path is set.
pub fn run_train(cfg: &PipelineConfig) -> Result<(MlpModel, EvalMetrics), PipelineError> {
    let prepared = prepare(cfg)?;
    let (model, metrics) =
        mlp::train(&prepared.encoded, &cfg.train).map_err(|e| PipelineError::new(Stage::Training, e))?;
    if let Some(p) = &cfg.outputs.model {
        save_model(p, &model, &cfg.header_lines("model")).map_err(|e| PipelineError::new(Stage::Training, e))?;
    }
    Ok((model, metrics))
}

/// Architecture sweep over the clean rows.
pub fn run_sweep(cfg: &PipelineConfig, architectures: &[Vec<usize>]) -> Result<SweepReport, PipelineError> {
    for a in architectures {
        if a.contains(&0) {
            return Err(PipelineError::new(Stage::Config, "hidden layer sizes must be positive"));
        }
    }
    let prepared = prepare(cfg)?;
    let report =
        mlp::sweep(&prepared.encoded, architectures, &cfg.train).map_err(|e| PipelineError::new(Stage::Training, e))?;
    if let Some(p) = &cfg.outputs.sweep_report {
        let mut out = OutputSet::new();
        emit(&mut out, cfg, p, "sweep report", Stage::Training, |b| {
            mlp::write_sweep_report(b, &report)
        })?;
    }
    Ok(report)
}

/// Control limits and classification for an existing predictions file.
pub fn run_spc(
    cfg: &PipelineConfig,
    predictions: &Path,
    target_name: &str,
) -> Result<(Vec<OutlierRecord>, ControlLimits), PipelineError> {
    let (ids, actual, predicted) = read_predictions(predictions)?;
    let (records, limits) = score(&actual, &predicted, &ids, &cfg.spc)?;
    let mut out = OutputSet::new();
    write_spc_outputs(&mut out, cfg, &records, &limits, target_name)?;
    Ok((records, limits))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_paths_required() {
        let mut cfg = PipelineConfig::new("in.csv", "schema.toml");
        cfg.outputs.report = Some("out.csv".into());
        cfg.outputs.violations = Some("out.csv".into());
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.stage, Stage::Config);

        let mut cfg = PipelineConfig::new("in.csv", "schema.toml");
        cfg.outputs.chart = Some("chart.svg".into());
        cfg.outputs.report = Some("chart.points.csv".into());
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn digest_ignores_output_paths() {
        let a = PipelineConfig::new("in.csv", "s.toml");
        let mut b = a.clone();
        b.outputs.report = Some("elsewhere.csv".into());
        assert_eq!(a.digest(), b.digest());
        let mut c = a.clone();
        c.train.seed = 7;
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn exit_codes() {
        let codes: Vec<_> = [Stage::Config, Stage::Ingest, Stage::Training, Stage::Spc]
            .iter()
            .map(|s| s.exit_code())
            .collect();
        assert_eq!(codes, vec![1, 2, 3, 4]);
        assert_eq!(
            PipelineError::new(Stage::Ingest, "no data rows").to_string(),
            "ingest: no data rows"
        );
    }
}
