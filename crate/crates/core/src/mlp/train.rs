use std::io::Write;

use log::debug;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::encode::{apply_scaling, fit_scaling, EncodedRow};

use super::{
    evaluate, init_model, seeded_rng, EvalMetrics, MlpError, MlpModel, TrainConfig, STREAM_EPOCH, STREAM_SPLIT,
};

/// Hidden-layer layouts compared by `sweep` when none are given.
pub const REFERENCE_ARCHITECTURES: [&[usize]; 12] = [
    &[12, 18, 12],
    &[12, 18, 12, 10],
    &[12, 18, 12, 10, 10],
    &[12, 18, 12, 10, 8],
    &[12, 18, 24, 10],
    &[12, 18, 24],
    &[12, 36, 24],
    &[12, 36, 24, 10],
    &[24, 18, 12, 10],
    &[12, 18, 10, 10],
    &[12, 18, 16, 10],
    &[10, 18, 12, 10],
];

/// Percentage split: optional seeded shuffle, then the first
/// `ceil(n * train_fraction)` rows train and the rest test.
pub fn split(rows: &[EncodedRow], cfg: &TrainConfig) -> Result<(Vec<EncodedRow>, Vec<EncodedRow>), MlpError> {
    cfg.validate()?;
    let n = rows.len();
    let mut order: Vec<usize> = (0..n).collect();
    if cfg.shuffle {
        order.shuffle(&mut seeded_rng(cfg.seed, STREAM_SPLIT));
    }
    // 1e-9 absorbs representation error, e.g. 50 * 0.66 = 33.000000000000004
    let n_train = ((n as f64 * cfg.train_fraction) - 1e-9).ceil().max(0.0) as usize;
    let n_train = n_train.min(n);
    if n_train == 0 || n_train == n {
        return Err(MlpError::EmptySplit {
            train: n_train,
            test: n - n_train,
        });
    }
    let pick = |idx: &[usize]| idx.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>();
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}

/// Run `epochs` passes of online SGD with momentum over already-scaled rows.
/// The visiting order is reshuffled every epoch when `cfg.shuffle` is set.
pub fn fit_epochs(model: &mut MlpModel, scaled: &[EncodedRow], cfg: &TrainConfig) -> Result<(), MlpError> {
    if let Some(r) = scaled.iter().find(|r| r.features.len() != model.arity()) {
        return Err(MlpError::Arity {
            expected: model.arity(),
            found: r.features.len(),
        });
    }
    let mut scratch = model.scratch();
    let mut grads = model.zero_gradients();
    let mut velocity = model.zero_gradients();
    let mut rng = seeded_rng(cfg.seed, STREAM_EPOCH);
    let mut order: Vec<usize> = (0..scaled.len()).collect();

    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        for &i in &order {
            let row = &scaled[i];
            let loss = model.backward_into(&row.features, row.target, &mut scratch, &mut grads);
            if !loss.is_finite() {
                return Err(MlpError::NonFiniteLoss { epoch });
            }
            total += loss;
            for ((layer, g), v) in model.layers.iter_mut().zip(&grads.layers).zip(&mut velocity.layers) {
                step(&mut layer.weights, &g.weights, &mut v.weights, cfg);
                step(&mut layer.biases, &g.biases, &mut v.biases, cfg);
            }
        }
        if epoch % 100 == 0 || epoch + 1 == cfg.epochs {
            debug!("epoch {epoch}: mean loss {:.6}", total / scaled.len().max(1) as f64);
        }
    }
    Ok(())
}

fn step(params: &mut [f64], grads: &[f64], velocity: &mut [f64], cfg: &TrainConfig) {
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity) {
        *v = cfg.momentum * *v - cfg.learning_rate * g;
        *p += *v;
    }
}

/// Split, fit scaling on the training rows, train, and score the test rows
/// in original units.
pub fn train(rows: &[EncodedRow], cfg: &TrainConfig) -> Result<(MlpModel, EvalMetrics), MlpError> {
    if rows.len() < 2 {
        return Err(MlpError::TooFewRows(rows.len()));
    }
    let arity = rows[0].features.len();
    let (train_rows, test_rows) = split(rows, cfg)?;
    let scaling = fit_scaling(&train_rows)?;
    let scaled = train_rows
        .iter()
        .map(|r| apply_scaling(r, &scaling))
        .collect::<Result<Vec<_>, _>>()?;

    let mut model = init_model(arity, cfg);
    model.scaling = scaling;
    fit_epochs(&mut model, &scaled, cfg)?;
    let metrics = evaluate(&model, &test_rows)?;
    Ok((model, metrics))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub no: usize,
    pub hidden: Vec<usize>,
    pub outcome: Result<EvalMetrics, MlpError>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    /// Index of the row with the highest correlation; undefined r and failed
    /// rows rank last, ties keep the earlier row.
    pub fn best(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, row) in self.rows.iter().enumerate() {
            if let Ok(EvalMetrics {
                correlation: Some(r), ..
            }) = row.outcome
            {
                if best.is_none_or(|(_, b)| r > b) {
                    best = Some((i, r));
                }
            }
        }
        best.map(|(i, _)| i)
    }
}

/// Train one model per architecture with otherwise identical config. Failures
/// are recorded per row.
pub fn sweep(rows: &[EncodedRow], architectures: &[Vec<usize>], cfg: &TrainConfig) -> Result<SweepReport, MlpError> {
    if architectures.is_empty() {
        return Err(MlpError::NoArchitectures);
    }
    let rows = architectures
        .par_iter()
        .enumerate()
        .map(|(i, hidden)| {
            let cfg = TrainConfig {
                hidden_sizes: hidden.clone(),
                ..cfg.clone()
            };
            SweepRow {
                no: i + 1,
                hidden: hidden.clone(),
                outcome: train(rows, &cfg).map(|(_, m)| m),
            }
        })
        .collect();
    Ok(SweepReport { rows })
}

pub fn format_hidden(hidden: &[usize]) -> String {
    hidden.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

/// Table-shaped sweep report. Undefined r prints as `undefined`; a failed
/// architecture prints `NaN` metrics and its error in the `error` column.
pub fn write_sweep_report<W: Write>(out: W, report: &SweepReport) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "no",
        "hidden_layers",
        "correlation_coefficient",
        "mean_absolute_error",
        "root_mean_squared_error",
        "error",
    ])?;
    for row in &report.rows {
        let hidden = format_hidden(&row.hidden);
        let fields = match &row.outcome {
            Ok(m) => [
                m.correlation.map_or("undefined".to_string(), |r| r.to_string()),
                m.mean_absolute_error.to_string(),
                m.root_mean_squared_error.to_string(),
                String::new(),
            ],
            Err(e) => ["NaN".into(), "NaN".into(), "NaN".into(), e.to_string()],
        };
        w.write_record(
            [row.no.to_string(), hidden]
                .iter()
                .chain(fields.iter())
                .map(String::as_str),
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{gradient_check, regression_metrics};

    fn rows(n: usize) -> Vec<EncodedRow> {
        (0..n)
            .map(|i| EncodedRow {
                row_id: i,
                features: vec![i as f64],
                target: i as f64,
                raw_hashes: vec![i as i32],
            })
            .collect()
    }

    /// y = 3x + 1 on an even grid over [0, 1], shuffled by the split.
    fn line(n: usize) -> Vec<EncodedRow> {
        (0..n)
            .map(|i| {
                let x = i as f64 / (n - 1) as f64;
                EncodedRow {
                    row_id: i,
                    features: vec![x],
                    target: 3.0 * x + 1.0,
                    raw_hashes: vec![0],
                }
            })
            .collect()
    }

    #[test]
    fn split_ceiling() {
        let cfg = TrainConfig::default();
        let (tr, te) = split(&rows(10), &cfg).unwrap();
        assert_eq!((tr.len(), te.len()), (7, 3));
        let (tr, _) = split(&rows(50), &cfg).unwrap();
        assert_eq!(tr.len(), 33);
    }

    #[test]
    fn split_is_partition_and_deterministic() {
        let cfg = TrainConfig::default();
        let a = split(&rows(25), &cfg).unwrap();
        let b = split(&rows(25), &cfg).unwrap();
        assert_eq!(a, b);
        let mut ids: Vec<usize> = a.0.iter().chain(&a.1).map(|r| r.row_id).collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..25).collect::<Vec<_>>());

        let plain = TrainConfig { shuffle: false, ..cfg };
        let (tr, _) = split(&rows(10), &plain).unwrap();
        assert_eq!(
            tr.iter().map(|r| r.row_id).collect::<Vec<_>>(),
            (0..7).collect::<Vec<_>>()
        );
    }

    #[test]
    fn degenerate_split() {
        let err = split(&rows(1), &TrainConfig::default()).unwrap_err();
        assert_eq!(err, MlpError::EmptySplit { train: 1, test: 0 });
    }

    #[test]
    fn zero_epochs_leaves_init_weights() {
        let cfg = TrainConfig {
            epochs: 0,
            hidden_sizes: vec![4],
            ..TrainConfig::default()
        };
        let (model, metrics) = train(&line(30), &cfg).unwrap();
        assert_eq!(model.layers, init_model(1, &cfg).layers);
        assert_eq!(metrics.n_test, 10);
        assert!(metrics.root_mean_squared_error.is_finite());
    }

    #[test]
    fn single_sample_step_is_minus_lr_gradient() {
        let cfg = TrainConfig {
            hidden_sizes: vec![3, 2],
            momentum: 0.0,
            epochs: 1,
            learning_rate: 0.25,
            ..TrainConfig::default()
        };
        let before = init_model(2, &cfg);
        let sample = EncodedRow {
            row_id: 0,
            features: vec![0.3, -1.2],
            target: 0.8,
            raw_hashes: vec![0, 0],
        };
        let (grads, _) = before.gradients(&sample.features, sample.target).unwrap();
        assert!(gradient_check(&before, &sample, 1e-5).unwrap() < 1e-4);

        let mut after = before.clone();
        fit_epochs(&mut after, std::slice::from_ref(&sample), &cfg).unwrap();
        for ((a, b), g) in after.layers.iter().zip(&before.layers).zip(&grads.layers) {
            for ((wa, wb), gw) in a.weights.iter().zip(&b.weights).zip(&g.weights) {
                assert_eq!(*wa, wb - 0.25 * gw);
            }
            for ((ba, bb), gb) in a.biases.iter().zip(&b.biases).zip(&g.biases) {
                assert_eq!(*ba, bb - 0.25 * gb);
            }
        }
    }

    /// Least-squares line through the training rows, the best any model can
    /// do on noise-free linear data up to float error.
    fn ols_rmse(train: &[EncodedRow], test: &[EncodedRow]) -> f64 {
        let n = train.len() as f64;
        let mx = train.iter().map(|r| r.features[0]).sum::<f64>() / n;
        let my = train.iter().map(|r| r.target).sum::<f64>() / n;
        let sxy: f64 = train.iter().map(|r| (r.features[0] - mx) * (r.target - my)).sum();
        let sxx: f64 = train.iter().map(|r| (r.features[0] - mx).powi(2)).sum();
        let slope = sxy / sxx;
        let p: Vec<f64> = test.iter().map(|r| my + slope * (r.features[0] - mx)).collect();
        let t: Vec<f64> = test.iter().map(|r| r.target).collect();
        regression_metrics(&p, &t).root_mean_squared_error
    }

    #[test]
    fn recovers_a_line() {
        let data = line(200);
        let cfg = TrainConfig {
            hidden_sizes: vec![8],
            ..TrainConfig::default()
        };
        let (train_rows, test_rows) = split(&data, &cfg).unwrap();
        assert!(ols_rmse(&train_rows, &test_rows) < 1e-9);

        let (_, m) = train(&data, &cfg).unwrap();
        let t: Vec<f64> = data.iter().map(|r| r.target).collect();
        let mean = t.iter().sum::<f64>() / t.len() as f64;
        let std = (t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t.len() as f64).sqrt();
        assert!(
            m.root_mean_squared_error < 0.05 * std,
            "rmse {} vs std {}",
            m.root_mean_squared_error,
            std
        );
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = TrainConfig {
            hidden_sizes: vec![5, 3],
            epochs: 20,
            ..TrainConfig::default()
        };
        let a = train(&line(60), &cfg).unwrap();
        let b = train(&line(60), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let cfg = TrainConfig {
            hidden_sizes: vec![],
            learning_rate: 50.0,
            epochs: 200,
            ..TrainConfig::default()
        };
        let err = train(&line(60), &cfg).unwrap_err();
        assert!(matches!(err, MlpError::NonFiniteLoss { .. }), "{err:?}");
    }

    #[test]
    fn sweep_rows_follow_input_order() {
        let cfg = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let archs = vec![vec![4], vec![4], vec![2, 2]];
        let report = sweep(&line(40), &archs, &cfg).unwrap();
        assert_eq!(report.rows.len(), 3);
        assert_eq!(report.rows[0].outcome, report.rows[1].outcome);
        assert_eq!(report.rows[2].hidden, vec![2, 2]);
        assert_eq!(report.rows.iter().map(|r| r.no).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert!(sweep(&line(40), &[], &cfg).is_err());
    }

    #[test]
    fn sweep_isolates_failures_and_ranks_undefined_last() {
        let ok = EvalMetrics {
            correlation: Some(0.5),
            mean_absolute_error: 1.0,
            root_mean_squared_error: 1.0,
            n_test: 3,
        };
        let report = SweepReport {
            rows: vec![
                SweepRow {
                    no: 1,
                    hidden: vec![1],
                    outcome: Ok(EvalMetrics {
                        correlation: None,
                        ..ok
                    }),
                },
                SweepRow {
                    no: 2,
                    hidden: vec![2],
                    outcome: Err(MlpError::NonFiniteLoss { epoch: 3 }),
                },
                SweepRow {
                    no: 3,
                    hidden: vec![3, 1],
                    outcome: Ok(ok),
                },
            ],
        };
        assert_eq!(report.best(), Some(2));
        let mut buf = Vec::new();
        write_sweep_report(&mut buf, &report).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "no,hidden_layers,correlation_coefficient,mean_absolute_error,root_mean_squared_error,error"
        );
        assert_eq!(lines[1], "1,1,undefined,1,1,");
        assert_eq!(lines[2], "2,2,NaN,NaN,NaN,non-finite loss at epoch 3");
        assert_eq!(lines[3], "3,\"3,1\",0.5,1,1,");
    }
}
