//! Feed-forward regressor trained by backpropagation.
//!
//! Hidden units use the logistic sigmoid, the single output unit is linear.
//! Training is online SGD with momentum on `0.5 * (p - t)^2` in z-scored
//! space; features and target are standardized with parameters fitted on the
//! training split and stored with the model.

mod io;
mod metrics;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::encode::{EncodedRow, ScalingError, ScalingParams};

pub use io::{load_model, read_model, save_model, write_model, ModelFileError};
pub use metrics::{evaluate, regression_metrics, EvalMetrics};
pub use train::{
    fit_epochs, format_hidden, split, sweep, train, write_sweep_report, SweepReport, SweepRow, REFERENCE_ARCHITECTURES,
};

/// RNG stream ids; one seed drives all three independently.
pub(crate) const STREAM_SPLIT: u64 = 0;
pub(crate) const STREAM_INIT: u64 = 1;
pub(crate) const STREAM_EPOCH: u64 = 2;

pub(crate) fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MlpError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("split leaves {train} training and {test} test rows; both must be non-empty")]
    EmptySplit { train: usize, test: usize },
    #[error("need at least 2 rows to train, got {0}")]
    TooFewRows(usize),
    #[error("feature arity mismatch: expected {expected}, got {found}")]
    Arity { expected: usize, found: usize },
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("evaluation set is empty")]
    EmptyEvaluation,
    #[error("no architectures to sweep")]
    NoArchitectures,
    #[error(transparent)]
    Scaling(#[from] ScalingError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden_sizes: Vec<usize>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub train_fraction: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_sizes: vec![12, 18, 12, 10],
            learning_rate: 0.3,
            momentum: 0.2,
            epochs: 500,
            train_fraction: 0.66,
            seed: 42,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), MlpError> {
        if self.hidden_sizes.contains(&0) {
            return Err(MlpError::Config("hidden layer sizes must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(MlpError::Config(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(MlpError::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(MlpError::Config(format!(
                "train fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

/// Dense layer; `weights[i * fan_out + j]` connects input `i` to output `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Layer {
            fan_in,
            fan_out,
            weights: vec![0.0; fan_in * fan_out],
            biases: vec![0.0; fan_out],
        }
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.fan_out + j]
    }

    fn propagate(&self, input: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.biases);
        for (i, &x) in input.iter().enumerate() {
            let row = &self.weights[i * self.fan_out..(i + 1) * self.fan_out];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += x * w;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layer_sizes: Vec<usize>,
    pub layers: Vec<Layer>,
    pub scaling: ScalingParams,
    pub config: TrainConfig,
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Fresh network: weights uniform in [-0.5, 0.5] from the seeded init stream,
/// zero biases, identity scaling.
pub fn init_model(feature_arity: usize, cfg: &TrainConfig) -> MlpModel {
    let mut layer_sizes = Vec::with_capacity(cfg.hidden_sizes.len() + 2);
    layer_sizes.push(feature_arity);
    layer_sizes.extend_from_slice(&cfg.hidden_sizes);
    layer_sizes.push(1);

    let mut rng = seeded_rng(cfg.seed, STREAM_INIT);
    let layers = layer_sizes
        .windows(2)
        .map(|w| {
            let mut layer = Layer::zeros(w[0], w[1]);
            for v in &mut layer.weights {
                *v = rng.random_range(-0.5..=0.5);
            }
            layer
        })
        .collect();
    MlpModel {
        layer_sizes,
        layers,
        scaling: ScalingParams::identity(feature_arity),
        config: cfg.clone(),
    }
}

/// Per-layer activation buffers reused across samples.
#[derive(Debug, Clone)]
pub struct Scratch {
    activations: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

/// Loss gradients with the same shapes as the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl MlpModel {
    pub fn arity(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn scratch(&self) -> Scratch {
        Scratch {
            activations: self.layer_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            deltas: self.layer_sizes[1..].iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            layers: self.layers.iter().map(|l| Layer::zeros(l.fan_in, l.fan_out)).collect(),
        }
    }

    fn check_arity(&self, features: &[f64]) -> Result<(), MlpError> {
        if features.len() != self.arity() {
            return Err(MlpError::Arity {
                expected: self.arity(),
                found: features.len(),
            });
        }
        Ok(())
    }

    fn forward_into(&self, features: &[f64], scratch: &mut Scratch) -> f64 {
        scratch.activations[0].copy_from_slice(features);
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let (before, after) = scratch.activations.split_at_mut(k + 1);
            let out = &mut after[0];
            layer.propagate(&before[k], out);
            if k != last {
                out.iter_mut().for_each(|z| *z = sigmoid(*z));
            }
        }
        scratch.activations[last + 1][0]
    }

    /// Prediction in scaled space for already-scaled features.
    pub fn forward(&self, features: &[f64]) -> Result<f64, MlpError> {
        self.check_arity(features)?;
        Ok(self.forward_into(features, &mut self.scratch()))
    }

    /// Prediction in original target units for raw (unscaled) features.
    pub fn predict(&self, features: &[f64]) -> Result<f64, MlpError> {
        let scaled = self.scaling.scale_features(features)?;
        Ok(self.scaling.unscale_target(self.forward(&scaled)?))
    }

    /// Forward and backward pass; fills `grads` and returns the loss
    /// `0.5 * (p - t)^2`. Inputs are in scaled space.
    pub fn backward_into(&self, features: &[f64], target: f64, scratch: &mut Scratch, grads: &mut Gradients) -> f64 {
        let p = self.forward_into(features, scratch);
        let err = p - target;
        let n = self.layers.len();
        scratch.deltas[n - 1][0] = err;

        for k in (0..n).rev() {
            let layer = &self.layers[k];
            let g = &mut grads.layers[k];
            let input = &scratch.activations[k];
            {
                let delta = &scratch.deltas[k];
                g.biases.copy_from_slice(delta);
                for (i, &a) in input.iter().enumerate() {
                    let row = &mut g.weights[i * layer.fan_out..(i + 1) * layer.fan_out];
                    for (gw, &d) in row.iter_mut().zip(delta) {
                        *gw = a * d;
                    }
                }
            }
            if k > 0 {
                let (lower, upper) = scratch.deltas.split_at_mut(k);
                let delta = &upper[0];
                for (i, d_in) in lower[k - 1].iter_mut().enumerate() {
                    let row = &layer.weights[i * layer.fan_out..(i + 1) * layer.fan_out];
                    let back: f64 = row.iter().zip(delta).map(|(w, d)| w * d).sum();
                    let a = input[i];
                    *d_in = back * a * (1.0 - a);
                }
            }
        }
        0.5 * err * err
    }

    pub fn gradients(&self, features: &[f64], target: f64) -> Result<(Gradients, f64), MlpError> {
        self.check_arity(features)?;
        let mut grads = self.zero_gradients();
        let loss = self.backward_into(features, target, &mut self.scratch(), &mut grads);
        Ok((grads, loss))
    }

    pub fn loss(&self, features: &[f64], target: f64) -> Result<f64, MlpError> {
        let p = self.forward(features)?;
        Ok(0.5 * (p - target) * (p - target))
    }
}

/// Largest relative gap between backprop gradients and central differences
/// `(f(w+h) - f(w-h)) / 2h` over every weight and bias. `sample` is taken in
/// scaled space. The denominator is `max(|analytic|, |numeric|, 1e-8)`.
pub fn gradient_check(model: &MlpModel, sample: &EncodedRow, h: f64) -> Result<f64, MlpError> {
    let (analytic, _) = model.gradients(&sample.features, sample.target)?;
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;

    let mut compare = |a: f64, numeric: f64| {
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    };

    for k in 0..model.layers.len() {
        for idx in 0..model.layers[k].weights.len() {
            let numeric = central_difference(&mut probe, h, sample, |m| &mut m.layers[k].weights[idx])?;
            compare(analytic.layers[k].weights[idx], numeric);
        }
        for idx in 0..model.layers[k].biases.len() {
            let numeric = central_difference(&mut probe, h, sample, |m| &mut m.layers[k].biases[idx])?;
            compare(analytic.layers[k].biases[idx], numeric);
        }
    }
    Ok(worst)
}

fn central_difference(
    model: &mut MlpModel,
    h: f64,
    sample: &EncodedRow,
    param: impl Fn(&mut MlpModel) -> &mut f64,
) -> Result<f64, MlpError> {
    let orig = *param(model);
    *param(model) = orig + h;
    let plus = model.loss(&sample.features, sample.target)?;
    *param(model) = orig - h;
    let minus = model.loss(&sample.features, sample.target)?;
    *param(model) = orig;
    Ok((plus - minus) / (2.0 * h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn cfg(hidden: &[usize], seed: u64) -> TrainConfig {
        TrainConfig {
            hidden_sizes: hidden.to_vec(),
            seed,
            ..TrainConfig::default()
        }
    }

    fn sample(features: Vec<f64>, target: f64) -> EncodedRow {
        EncodedRow {
            row_id: 0,
            raw_hashes: vec![0; features.len()],
            features,
            target,
        }
    }

    #[test]
    fn init_shapes_for_reference_layout() {
        let m = init_model(10, &cfg(&[12, 18, 12, 10], 1));
        assert_eq!(m.layer_sizes, vec![10, 12, 18, 12, 10, 1]);
        let shapes: Vec<_> = m.layers.iter().map(|l| (l.fan_in, l.fan_out)).collect();
        assert_eq!(shapes, vec![(10, 12), (12, 18), (18, 12), (12, 10), (10, 1)]);
        assert!(m.layers.iter().all(|l| l.biases.iter().all(|&b| b == 0.0)));
        assert!(m
            .layers
            .iter()
            .flat_map(|l| &l.weights)
            .all(|w| (-0.5..=0.5).contains(w)));
    }

    #[test]
    fn init_is_seeded() {
        let a = init_model(4, &cfg(&[3], 9));
        let b = init_model(4, &cfg(&[3], 9));
        let c = init_model(4, &cfg(&[3], 10));
        assert_eq!(a, b);
        assert_ne!(a.layers, c.layers);
    }

    #[test]
    fn no_hidden_layers_is_linear() {
        let m = init_model(10, &cfg(&[], 1));
        assert_eq!(m.layers.len(), 1);
        assert_eq!((m.layers[0].fan_in, m.layers[0].fan_out), (10, 1));
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut m = init_model(3, &cfg(&[4, 2], 1));
        m.layers.iter_mut().for_each(|l| l.weights.fill(0.0));
        assert_eq!(m.forward(&[5.0, -3.0, 1e6]).unwrap(), 0.0);
    }

    #[test]
    fn affine_single_unit() {
        let mut m = init_model(1, &cfg(&[], 1));
        m.layers[0].weights[0] = 2.5;
        m.layers[0].biases[0] = -1.0;
        assert_eq!(m.forward(&[3.0]).unwrap(), 2.5 * 3.0 - 1.0);
    }

    #[test]
    fn arity_mismatch() {
        let m = init_model(3, &cfg(&[2], 1));
        assert_eq!(m.forward(&[1.0]), Err(MlpError::Arity { expected: 3, found: 1 }));
    }

    /// Layer-by-layer evaluation written out with explicit loops and indices.
    fn oracle_forward(m: &MlpModel, x: &[f64]) -> f64 {
        let mut a: Vec<f64> = x.to_vec();
        for (k, layer) in m.layers.iter().enumerate() {
            let mut z = Vec::new();
            for j in 0..layer.fan_out {
                let mut s = layer.biases[j];
                for i in 0..layer.fan_in {
                    s += a[i] * layer.weight(i, j);
                }
                z.push(s);
            }
            a = if k + 1 < m.layers.len() {
                z.iter().map(|v| 1.0 / (1.0 + f64::exp(-v))).collect()
            } else {
                z
            };
        }
        a[0]
    }

    #[test]
    fn forward_matches_layerwise_oracle() {
        let mut rng = seeded_rng(7, 0);
        for seed in 0..20 {
            let mut m = init_model(5, &cfg(&[6, 4, 3], seed));
            for l in &mut m.layers {
                l.biases.iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
            }
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let got = m.forward(&x).unwrap();
            let want = oracle_forward(&m, &x);
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{got} vs {want}");
        }
    }

    #[test]
    fn gradient_check_linear_model_near_exact() {
        let mut m = init_model(1, &cfg(&[], 3));
        m.layers[0].weights[0] = 0.7;
        m.layers[0].biases[0] = 0.1;
        let err = gradient_check(&m, &sample(vec![1.3], -0.4), 1e-5).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn gradient_check_stationary_point() {
        let mut m = init_model(2, &cfg(&[3], 3));
        m.layers.iter_mut().for_each(|l| l.weights.fill(0.0));
        let s = sample(vec![0.0, 0.0], 0.0);
        let (g, loss) = m.gradients(&s.features, s.target).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g
            .layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|&v| v == 0.0)));
        assert_eq!(gradient_check(&m, &s, 1e-5).unwrap(), 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn gradient_check_random_nets(
            seed in any::<u64>(),
            arity in 1usize..=5,
            hidden in proptest::collection::vec(1usize..=7, 0..=2),
            x in proptest::collection::vec(-2.0f64..2.0, 5),
            t in -2.0f64..2.0,
        ) {
            let m = init_model(arity, &cfg(&hidden, seed));
            let err = gradient_check(&m, &sample(x[..arity].to_vec(), t), 1e-5).unwrap();
            prop_assert!(err < 1e-4, "max relative error {}", err);
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig {
                momentum: 1.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                learning_rate: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                train_fraction: 1.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                hidden_sizes: vec![3, 0],
                ..TrainConfig::default()
            },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(MlpError::Config(_))), "{c:?}");
        }
    }
}
