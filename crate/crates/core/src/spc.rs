//! Residual control chart.
//!
//! Each scored row yields `error = predicted - actual` and
//! `difference_ratio = error / actual`. Control limits sit at `mu ± 3 sigma`
//! of the ratio distribution; rows outside them are outliers.
//!
//! Two estimators are available. `CltSample` draws a seeded sample of ratios
//! and takes `sigma = sqrt(n) * s` where `s` is the sample standard deviation,
//! i.e. it treats `s` as the standard error of a mean and inverts
//! `s = sigma / sqrt(n)`. `Direct` uses the mean and standard deviation of all
//! ratios. Both use the n-1 divisor.

use std::fmt;
use std::fmt::Write as _;
use std::io::Write;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpcError {
    #[error("length mismatch: {actuals} actuals, {predictions} predictions, {ids} row ids")]
    LengthMismatch {
        actuals: usize,
        predictions: usize,
        ids: usize,
    },
    #[error("non-finite value in row {0}")]
    NonFinite(usize),
    #[error("insufficient data: {available} ratios for a sample of {needed}")]
    InsufficientData { available: usize, needed: usize },
    #[error("unknown estimation mode `{0}` (expected clt-sample or direct)")]
    UnknownMode(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualRow {
    pub row_id: usize,
    pub actual: f64,
    pub predicted: f64,
    pub error: f64,
    /// `None` when the actual value is zero.
    pub difference_ratio: Option<f64>,
}

impl ResidualRow {
    pub fn new(row_id: usize, actual: f64, predicted: f64) -> Self {
        let error = predicted - actual;
        ResidualRow {
            row_id,
            actual,
            predicted,
            error,
            difference_ratio: (actual != 0.0).then(|| error / actual),
        }
    }
}

pub fn residuals(actuals: &[f64], predictions: &[f64], row_ids: &[usize]) -> Result<Vec<ResidualRow>, SpcError> {
    if actuals.len() != predictions.len() || actuals.len() != row_ids.len() {
        return Err(SpcError::LengthMismatch {
            actuals: actuals.len(),
            predictions: predictions.len(),
            ids: row_ids.len(),
        });
    }
    actuals
        .iter()
        .zip(predictions)
        .zip(row_ids)
        .map(|((&a, &p), &id)| {
            if !a.is_finite() || !p.is_finite() {
                return Err(SpcError::NonFinite(id));
            }
            Ok(ResidualRow::new(id, a, p))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EstimationMode {
    #[default]
    CltSample,
    Direct,
}

impl EstimationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimationMode::CltSample => "clt-sample",
            EstimationMode::Direct => "direct",
        }
    }
}

impl fmt::Display for EstimationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimationMode {
    type Err = SpcError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "clt-sample" => Ok(EstimationMode::CltSample),
            "direct" => Ok(EstimationMode::Direct),
            other => Err(SpcError::UnknownMode(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlLimits {
    pub mu: f64,
    pub sigma: f64,
    pub ucl: f64,
    pub cl: f64,
    pub lcl: f64,
    pub mode: EstimationMode,
    pub sample_size: usize,
    pub seed: u64,
}

impl ControlLimits {
    /// Limits at `mu ± 3 sigma` around centre line `mu`.
    pub fn from_moments(mu: f64, sigma: f64, mode: EstimationMode, sample_size: usize, seed: u64) -> Self {
        ControlLimits {
            mu,
            sigma,
            ucl: mu + 3.0 * sigma,
            cl: mu,
            lcl: mu - 3.0 * sigma,
            mode,
            sample_size,
            seed,
        }
    }

    /// Limits from a sample's mean and standard deviation, scaling the
    /// standard deviation by `sqrt(n)`.
    pub fn from_sample(sample_mean: f64, sample_std: f64, n: usize, seed: u64) -> Self {
        let sigma = (n as f64).sqrt() * sample_std;
        Self::from_moments(sample_mean, sigma, EstimationMode::CltSample, n, seed)
    }

    pub fn is_outside(&self, ratio: f64) -> bool {
        ratio > self.ucl || ratio < self.lcl
    }
}

/// Mean and n-1 standard deviation.
fn sample_moments(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let naive = values.iter().sum::<f64>() / n;
    let mean = naive + values.iter().map(|v| v - naive).sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Estimate control limits from difference ratios (undefined ratios must
/// already be removed). `sample_size` is only used by `CltSample`, which
/// draws without replacement from a ChaCha8 generator seeded with `seed`.
pub fn estimate_limits(
    ratios: &[f64],
    mode: EstimationMode,
    sample_size: usize,
    seed: u64,
) -> Result<ControlLimits, SpcError> {
    if let Some(i) = ratios.iter().position(|r| !r.is_finite()) {
        return Err(SpcError::NonFinite(i));
    }
    match mode {
        EstimationMode::CltSample => {
            let needed = sample_size.max(2);
            if ratios.len() < needed {
                return Err(SpcError::InsufficientData {
                    available: ratios.len(),
                    needed,
                });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked = index::sample(&mut rng, ratios.len(), sample_size).into_vec();
            picked.sort_unstable();
            let sample: Vec<f64> = picked.iter().map(|&i| ratios[i]).collect();
            let (mean, std) = sample_moments(&sample);
            Ok(ControlLimits::from_sample(mean, std, sample_size, seed))
        }
        EstimationMode::Direct => {
            if ratios.len() < 2 {
                return Err(SpcError::InsufficientData {
                    available: ratios.len(),
                    needed: 2,
                });
            }
            let (mean, std) = sample_moments(ratios);
            Ok(ControlLimits::from_moments(mean, std, mode, ratios.len(), seed))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Inlier,
    Outlier,
    UndefinedRatio,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Classification::Inlier => "inlier",
            Classification::Outlier => "outlier",
            Classification::UndefinedRatio => "undefined-ratio",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutlierRecord {
    pub residual: ResidualRow,
    pub classification: Classification,
}

/// Classify against the limits (strictly outside is an outlier) and order by
/// descending |ratio|. Undefined ratios follow all defined ones; ties keep
/// input order.
pub fn classify(rows: &[ResidualRow], limits: &ControlLimits) -> Vec<OutlierRecord> {
    let mut out: Vec<OutlierRecord> = rows
        .iter()
        .map(|&residual| {
            let classification = match residual.difference_ratio {
                None => Classification::UndefinedRatio,
                Some(r) if limits.is_outside(r) => Classification::Outlier,
                Some(_) => Classification::Inlier,
            };
            OutlierRecord {
                residual,
                classification,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        let key = |r: &OutlierRecord| r.residual.difference_ratio.map(f64::abs);
        match (key(a), key(b)) {
            (Some(x), Some(y)) => y.total_cmp(&x),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => std::cmp::Ordering::Equal,
        }
    });
    out
}

pub fn count(records: &[OutlierRecord], class: Classification) -> usize {
    records.iter().filter(|r| r.classification == class).count()
}

/// Outlier report with the residual table columns plus the classification.
pub fn write_report<W: Write>(out: W, records: &[OutlierRecord], target_name: &str) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "id".to_string(),
        format!("actual_{target_name}"),
        format!("predicted_{target_name}"),
        "error".to_string(),
        "difference_ratio".to_string(),
        "classification".to_string(),
    ])?;
    for r in records {
        let res = &r.residual;
        w.write_record([
            res.row_id.to_string(),
            res.actual.to_string(),
            res.predicted.to_string(),
            res.error.to_string(),
            res.difference_ratio.map_or("undefined".to_string(), |v| v.to_string()),
            r.classification.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChartPoint {
    pub index: usize,
    pub row_id: usize,
    pub ratio: f64,
    pub outlier: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChartSeries {
    pub points: Vec<ChartPoint>,
    pub ucl: f64,
    pub cl: f64,
    pub lcl: f64,
}

/// Plot-ready control chart: one point per defined ratio in row-id order,
/// plus the three reference lines.
pub fn chart_points(rows: &[OutlierRecord], limits: &ControlLimits) -> ChartSeries {
    let mut defined: Vec<(usize, f64, bool)> = rows
        .iter()
        .filter_map(|r| {
            r.residual
                .difference_ratio
                .map(|ratio| (r.residual.row_id, ratio, r.classification == Classification::Outlier))
        })
        .collect();
    defined.sort_by_key(|&(id, _, _)| id);
    ChartSeries {
        points: defined
            .into_iter()
            .enumerate()
            .map(|(index, (row_id, ratio, outlier))| ChartPoint {
                index,
                row_id,
                ratio,
                outlier,
            })
            .collect(),
        ucl: limits.ucl,
        cl: limits.cl,
        lcl: limits.lcl,
    }
}

/// Chart data as `kind,index,row_id,value,outlier` rows; reference lines use
/// kinds `ucl`, `cl` and `lcl` with empty index and row id.
pub fn write_chart_data<W: Write>(out: W, series: &ChartSeries) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["kind", "index", "row_id", "value", "outlier"])?;
    for (kind, v) in [("ucl", series.ucl), ("cl", series.cl), ("lcl", series.lcl)] {
        w.write_record([kind, "", "", &v.to_string(), ""])?;
    }
    for p in &series.points {
        w.write_record([
            "point",
            &p.index.to_string(),
            &p.row_id.to_string(),
            &p.ratio.to_string(),
            if p.outlier { "true" } else { "false" },
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Signed log scale; keeps ratios near zero and ratios of 1e5 on one axis.
fn symlog(v: f64) -> f64 {
    v.signum() * (1.0 + v.abs()).log10()
}

/// Render the chart as a standalone SVG document. The y axis is
/// `sign(v) * log10(1 + |v|)`.
pub fn render_svg(series: &ChartSeries, comments: &[String]) -> String {
    const W: f64 = 960.0;
    const H: f64 = 420.0;
    const LEFT: f64 = 80.0;
    const RIGHT: f64 = 110.0;
    const TOP: f64 = 30.0;
    const BOTTOM: f64 = 40.0;

    let mut lo = symlog(series.lcl).min(symlog(series.cl));
    let mut hi = symlog(series.ucl).max(symlog(series.cl));
    for p in &series.points {
        lo = lo.min(symlog(p.ratio));
        hi = hi.max(symlog(p.ratio));
    }
    if hi - lo < 1e-9 {
        lo -= 1.0;
        hi += 1.0;
    }
    let pad = (hi - lo) * 0.05;
    let (lo, hi) = (lo - pad, hi + pad);
    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;
    let n = series.points.len().max(2);
    let x = |i: usize| LEFT + plot_w * i as f64 / (n - 1) as f64;
    let y = |v: f64| TOP + plot_h * (hi - symlog(v)) / (hi - lo);

    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    for c in comments {
        let _ = writeln!(s, "<!-- {} -->", c.replace("--", "- -"));
    }
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"11\">"
    );
    let _ = writeln!(s, "<rect x=\"0\" y=\"0\" width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{plot_w}\" height=\"{plot_h}\" fill=\"none\" stroke=\"#444\"/>"
    );
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">Difference ratio control chart</text>",
        W / 2.0
    );

    // y ticks at 0 and signed powers of ten inside the range
    let mut ticks = vec![0.0];
    for e in 0..12 {
        let m = 10f64.powi(e);
        ticks.push(m);
        ticks.push(-m);
    }
    for t in ticks.into_iter().filter(|&t| symlog(t) >= lo && symlog(t) <= hi) {
        let ty = y(t);
        let _ = writeln!(
            s,
            "<line x1=\"{:.2}\" y1=\"{ty:.2}\" x2=\"{LEFT}\" y2=\"{ty:.2}\" stroke=\"#444\"/><text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
            LEFT - 4.0,
            LEFT - 6.0,
            ty + 4.0,
            t
        );
    }

    for (label, v, colour, dash) in [
        ("UCL", series.ucl, "#c0392b", " stroke-dasharray=\"6,4\""),
        ("CL", series.cl, "#27ae60", ""),
        ("LCL", series.lcl, "#c0392b", " stroke-dasharray=\"6,4\""),
    ] {
        let ly = y(v);
        let _ = writeln!(
            s,
            "<line x1=\"{LEFT}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{colour}\"{dash}/><text x=\"{:.2}\" y=\"{:.2}\" fill=\"{colour}\">{label} = {}</text>",
            LEFT + plot_w,
            LEFT + plot_w + 6.0,
            ly + 4.0,
            format_sig(v)
        );
    }

    if !series.points.is_empty() {
        let path: Vec<String> = series
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", x(p.index), y(p.ratio)))
            .collect();
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"#7f8c8d\" stroke-width=\"0.6\" points=\"{}\"/>",
            path.join(" ")
        );
        for p in &series.points {
            let (r, fill) = if p.outlier { (3.5, "#c0392b") } else { (1.8, "#2c3e50") };
            let _ = writeln!(
                s,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{r}\" fill=\"{fill}\"><title>row {}: {}</title></circle>",
                x(p.index),
                y(p.ratio),
                p.row_id,
                p.ratio
            );
        }
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">observation (row order), y = sign(r)*log10(1+|r|)</text>",
        LEFT + plot_w / 2.0,
        H - 10.0
    );
    s.push_str("</svg>\n");
    s
}

fn format_sig(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e6 || v.abs() < 1e-3) {
        format!("{v:.3e}")
    } else {
        format!("{v:.4}")
    }
}
