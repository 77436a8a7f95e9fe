use crate::encode::EncodedRow;

use super::{MlpError, MlpModel};

/// Test-set metrics in original target units. `correlation` is `None` when
/// either the predictions or the targets have zero variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub correlation: Option<f64>,
    pub mean_absolute_error: f64,
    pub root_mean_squared_error: f64,
    pub n_test: usize,
}

/// MAE, RMSE and Pearson r of `predicted` against `actual`.
///
/// Panics if the slices differ in length or are empty.
pub fn regression_metrics(predicted: &[f64], actual: &[f64]) -> EvalMetrics {
    assert_eq!(predicted.len(), actual.len(), "prediction/target length mismatch");
    assert!(!predicted.is_empty(), "metrics need at least one row");
    let n = predicted.len() as f64;

    let (abs_sum, sq_sum) = predicted.iter().zip(actual).fold((0.0, 0.0), |(a, s), (p, t)| {
        let d = p - t;
        (a + d.abs(), s + d * d)
    });

    let mean_p = predicted.iter().sum::<f64>() / n;
    let mean_t = actual.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, t) in predicted.iter().zip(actual) {
        let dp = p - mean_p;
        let dt = t - mean_t;
        sxy += dp * dt;
        sxx += dp * dp;
        syy += dt * dt;
    }
    let correlation = if sxx > 0.0 && syy > 0.0 {
        Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
    } else {
        None
    };

    EvalMetrics {
        correlation,
        mean_absolute_error: abs_sum / n,
        root_mean_squared_error: (sq_sum / n).sqrt(),
        n_test: predicted.len(),
    }
}

/// Metrics of the model's original-unit predictions on unscaled rows.
pub fn evaluate(model: &MlpModel, test: &[EncodedRow]) -> Result<EvalMetrics, MlpError> {
    if test.is_empty() {
        return Err(MlpError::EmptyEvaluation);
    }
    let predicted = test
        .iter()
        .map(|r| model.predict(&r.features))
        .collect::<Result<Vec<_>, _>>()?;
    let actual: Vec<f64> = test.iter().map(|r| r.target).collect();
    Ok(regression_metrics(&predicted, &actual))
}
