//! Plain-text model file.
//!
//! One `key value...` record per line, `#` starts a comment line. Floats are
//! stored as the hex of their IEEE-754 bits (`0x3fd3333333333333`) so a
//! save/load round trip is bit-exact.
//!
//! ```text
//! dqprof-model 1
//! layer_sizes 10 12 18 12 10 1
//! hidden_sizes 12 18 12 10
//! learning_rate 0x3fd3333333333333
//! ...
//! layer 0 weights 0x... 0x...
//! layer 0 biases 0x... 0x...
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;

use thiserror::Error;

use crate::encode::ScalingParams;

use super::{Layer, MlpModel, TrainConfig};

const MAGIC: &str = "dqprof-model";
const VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("missing key `{0}`")]
    Missing(String),
    #[error("inconsistent model: {0}")]
    Shape(String),
}

fn hex(v: f64) -> String {
    format!("0x{:016x}", v.to_bits())
}

fn hex_list(vs: &[f64]) -> String {
    vs.iter().map(|&v| hex(v)).collect::<Vec<_>>().join(" ")
}

fn join<T: ToString>(vs: &[T]) -> String {
    vs.iter().map(T::to_string).collect::<Vec<_>>().join(" ")
}

pub fn write_model<W: Write>(mut out: W, model: &MlpModel, comments: &[String]) -> io::Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    let cfg = &model.config;
    let s = &model.scaling;
    writeln!(out, "{MAGIC} {VERSION}")?;
    writeln!(out, "layer_sizes {}", join(&model.layer_sizes))?;
    writeln!(out, "hidden_sizes {}", join(&cfg.hidden_sizes))?;
    writeln!(out, "learning_rate {}", hex(cfg.learning_rate))?;
    writeln!(out, "momentum {}", hex(cfg.momentum))?;
    writeln!(out, "epochs {}", cfg.epochs)?;
    writeln!(out, "train_fraction {}", hex(cfg.train_fraction))?;
    writeln!(out, "seed {}", cfg.seed)?;
    writeln!(out, "shuffle {}", cfg.shuffle)?;
    writeln!(out, "feature_mean {}", hex_list(&s.feature_mean))?;
    writeln!(out, "feature_std {}", hex_list(&s.feature_std))?;
    writeln!(out, "target_mean {}", hex(s.target_mean))?;
    writeln!(out, "target_std {}", hex(s.target_std))?;
    for (k, layer) in model.layers.iter().enumerate() {
        writeln!(out, "layer {k} weights {}", hex_list(&layer.weights))?;
        writeln!(out, "layer {k} biases {}", hex_list(&layer.biases))?;
    }
    out.flush()
}

pub fn save_model(path: &Path, model: &MlpModel, comments: &[String]) -> io::Result<()> {
    let mut buf = Vec::new();
    write_model(&mut buf, model, comments)?;
    fs::write(path, buf)
}

pub fn load_model(path: &Path) -> Result<MlpModel, ModelFileError> {
    read_model(io::BufReader::new(fs::File::open(path)?))
}

fn parse_hex(tok: &str, line: usize) -> Result<f64, ModelFileError> {
    tok.strip_prefix("0x")
        .and_then(|h| u64::from_str_radix(h, 16).ok())
        .map(f64::from_bits)
        .ok_or_else(|| ModelFileError::Syntax {
            line,
            msg: format!("bad hex float `{tok}`"),
        })
}

fn parse_int<T: std::str::FromStr>(tok: &str, line: usize) -> Result<T, ModelFileError> {
    tok.parse().map_err(|_| ModelFileError::Syntax {
        line,
        msg: format!("bad integer `{tok}`"),
    })
}

pub fn read_model<R: BufRead>(input: R) -> Result<MlpModel, ModelFileError> {
    // key -> (line number, tokens)
    let mut fields: HashMap<String, (usize, Vec<String>)> = HashMap::new();
    let mut saw_magic = false;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut toks = trimmed.split_whitespace().map(str::to_string);
        let mut key = toks.next().unwrap_or_default();
        if key == MAGIC {
            if toks.next().as_deref() != Some(VERSION) {
                return Err(ModelFileError::Syntax {
                    line: lineno,
                    msg: "unsupported model version".into(),
                });
            }
            saw_magic = true;
            continue;
        }
        if key == "layer" {
            let k = toks.next().unwrap_or_default();
            let what = toks.next().unwrap_or_default();
            key = format!("layer {k} {what}");
        }
        if fields.insert(key.clone(), (lineno, toks.collect())).is_some() {
            return Err(ModelFileError::Syntax {
                line: lineno,
                msg: format!("duplicate key `{key}`"),
            });
        }
    }
    if !saw_magic {
        return Err(ModelFileError::Missing(MAGIC.into()));
    }

    let get = |key: &str| fields.get(key).ok_or_else(|| ModelFileError::Missing(key.to_string()));
    let floats = |key: &str| -> Result<Vec<f64>, ModelFileError> {
        let (line, toks) = get(key)?;
        toks.iter().map(|t| parse_hex(t, *line)).collect()
    };
    let float = |key: &str| -> Result<f64, ModelFileError> {
        match floats(key)?.as_slice() {
            [v] => Ok(*v),
            _ => Err(ModelFileError::Syntax {
                line: get(key)?.0,
                msg: format!("`{key}` takes one value"),
            }),
        }
    };
    let ints = |key: &str| -> Result<Vec<usize>, ModelFileError> {
        let (line, toks) = get(key)?;
        toks.iter().map(|t| parse_int(t, *line)).collect()
    };
    let single = |key: &str| -> Result<(usize, String), ModelFileError> {
        let (line, toks) = get(key)?;
        match toks.as_slice() {
            [t] => Ok((*line, t.clone())),
            _ => Err(ModelFileError::Syntax {
                line: *line,
                msg: format!("`{key}` takes one value"),
            }),
        }
    };

    let layer_sizes = ints("layer_sizes")?;
    let (l, epochs) = single("epochs")?;
    let epochs = parse_int(&epochs, l)?;
    let (l, seed) = single("seed")?;
    let seed = parse_int(&seed, l)?;
    let (l, shuffle) = single("shuffle")?;
    let shuffle = shuffle.parse().map_err(|_| ModelFileError::Syntax {
        line: l,
        msg: format!("bad bool `{shuffle}`"),
    })?;
    let config = TrainConfig {
        hidden_sizes: ints("hidden_sizes")?,
        learning_rate: float("learning_rate")?,
        momentum: float("momentum")?,
        epochs,
        train_fraction: float("train_fraction")?,
        seed,
        shuffle,
    };
    let scaling = ScalingParams {
        feature_mean: floats("feature_mean")?,
        feature_std: floats("feature_std")?,
        target_mean: float("target_mean")?,
        target_std: float("target_std")?,
    };

    if layer_sizes.len() < 2 || layer_sizes[layer_sizes.len() - 1] != 1 {
        return Err(ModelFileError::Shape(
            "layer_sizes must end with a single output".into(),
        ));
    }
    if layer_sizes[1..layer_sizes.len() - 1] != config.hidden_sizes[..] {
        return Err(ModelFileError::Shape("hidden_sizes disagree with layer_sizes".into()));
    }
    if scaling.feature_mean.len() != layer_sizes[0] || scaling.feature_std.len() != layer_sizes[0] {
        return Err(ModelFileError::Shape("scaling arity differs from input size".into()));
    }
    let mut layers = Vec::with_capacity(layer_sizes.len() - 1);
    for (k, w) in layer_sizes.windows(2).enumerate() {
        let weights = floats(&format!("layer {k} weights"))?;
        let biases = floats(&format!("layer {k} biases"))?;
        if weights.len() != w[0] * w[1] || biases.len() != w[1] {
            return Err(ModelFileError::Shape(format!("layer {k} is not {}x{}", w[0], w[1])));
        }
        layers.push(Layer {
            fan_in: w[0],
            fan_out: w[1],
            weights,
            biases,
        });
    }
    if fields.contains_key(&format!("layer {} weights", layers.len())) {
        return Err(ModelFileError::Shape("more layers than layer_sizes describes".into()));
    }
    Ok(MlpModel {
        layer_sizes,
        layers,
        scaling,
        config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::init_model;
    use proptest::prelude::*;

    fn model(seed: u64, hidden: Vec<usize>) -> MlpModel {
        let cfg = TrainConfig {
            hidden_sizes: hidden,
            seed,
            ..TrainConfig::default()
        };
        let mut m = init_model(3, &cfg);
        m.scaling = ScalingParams {
            feature_mean: vec![1.0 / 3.0, -2.5e9, 0.0],
            feature_std: vec![0.1, 7.7e8, 0.0],
            target_mean: 51234.56,
            target_std: 1e-300,
        };
        m.layers[0].biases[0] = f64::MIN_POSITIVE;
        m
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>(), hidden in proptest::collection::vec(1usize..6, 0..3)) {
            let m = model(seed, hidden);
            let mut buf = Vec::new();
            write_model(&mut buf, &m, &["tool: test".into()]).unwrap();
            let back = read_model(buf.as_slice()).unwrap();
            prop_assert_eq!(&back, &m);
            let mut again = Vec::new();
            write_model(&mut again, &back, &["tool: test".into()]).unwrap();
            prop_assert_eq!(buf, again);
        }
    }

    #[test]
    fn rejects_truncated_file() {
        let mut buf = Vec::new();
        write_model(&mut buf, &model(1, vec![2]), &[]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut: String = text
            .lines()
            .filter(|l| !l.starts_with("layer 1 biases"))
            .map(|l| format!("{l}\n"))
            .collect();
        assert!(matches!(read_model(cut.as_bytes()), Err(ModelFileError::Missing(k)) if k == "layer 1 biases"));
        assert!(matches!(
            read_model("layer_sizes 1 1\n".as_bytes()),
            Err(ModelFileError::Missing(_))
        ));
    }
}
