//! Data-quality profiling by model residuals.
//!
//! Rows of a tabular dataset are encoded to numbers (string hashes, day
//! counts, decimals), screened by element-level quality rules, and used to
//! train a small feed-forward regressor for one numeric target column. Each
//! row's relative prediction error is then placed on a 3-sigma control chart
//! and rows outside the limits are reported as outliers.
//!
//! Modules follow the data flow: [`ingest`] → [`rules`] → [`encode`] →
//! [`mlp`] → [`spc`], with [`cli`] wiring them together and [`synth`]
//! generating fault-injected test data.

pub mod cli;
pub mod encode;
pub mod ingest;
pub mod mlp;
pub mod rules;
pub mod spc;
pub mod synth;

pub use encode::{string_hash, EncodedRow, ScalingParams};
pub use ingest::{RawRecord, Role, SchemaConfig};
pub use mlp::{EvalMetrics, MlpModel, TrainConfig};
pub use rules::RuleViolation;
pub use spc::{ControlLimits, EstimationMode, OutlierRecord};
