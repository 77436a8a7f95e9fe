use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use dqprof::cli::{self, PipelineConfig, PipelineError, SpcConfig, Stage};
use dqprof::mlp::{format_hidden, TrainConfig, REFERENCE_ARCHITECTURES};
use dqprof::spc::{self, Classification, EstimationMode};
use dqprof::synth::{self, SynthConfig};

#[derive(Parser)]
#[command(
    name = "dqprof",
    version,
    about = "Find outlier rows by model residuals on a 3-sigma control chart"
)]
struct Cli {
    /// Increase log output (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the whole pipeline: rules, encoding, training, scoring, control chart
    Profile {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        spc: SpcArgs,
        /// Outlier report (CSV)
        #[arg(long)]
        report: Option<PathBuf>,
        /// Rule violations report (CSV)
        #[arg(long)]
        violations: Option<PathBuf>,
        /// Control chart (SVG); plot data is written next to it
        #[arg(long)]
        chart: Option<PathBuf>,
        /// Control chart plot data (CSV)
        #[arg(long)]
        chart_data: Option<PathBuf>,
        /// Trained model file
        #[arg(long)]
        model: Option<PathBuf>,
        /// Per-row predictions (row_id, actual, predicted), input for `spc`
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Encoded feature matrix (CSV)
        #[arg(long)]
        dump_encoded: Option<PathBuf>,
    },
    /// Encode the dataset and dump the numeric matrix
    Encode {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        dump_encoded: PathBuf,
        #[arg(long)]
        violations: Option<PathBuf>,
    },
    /// Run the basic quality rules only
    Check {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        violations: Option<PathBuf>,
    },
    /// Train one model and report test metrics
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Compare hidden-layer layouts
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Layouts separated by ';', e.g. "12,18,12;12,18,12,10" (default: the twelve reference layouts)
        #[arg(long)]
        architectures: Option<String>,
        #[arg(long)]
        sweep_report: Option<PathBuf>,
    },
    /// Control limits and outliers for an existing predictions file
    Spc {
        /// CSV with row_id, actual, predicted columns
        #[arg(long)]
        predictions: PathBuf,
        /// Target name used in report column headers
        #[arg(long, default_value = "annual_salary")]
        target_name: String,
        #[command(flatten)]
        spc: SpcArgs,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        chart: Option<PathBuf>,
        #[arg(long)]
        chart_data: Option<PathBuf>,
    },
    /// Write a synthetic salary roster with planted errors and its schema
    Synth {
        #[arg(long, default_value_t = 2000)]
        rows: usize,
        #[arg(long, default_value_t = 20)]
        planted: usize,
        #[arg(long, default_value_t = 12)]
        dirty: usize,
        #[arg(long, default_value_t = 2016)]
        seed: u64,
        /// Dataset output path
        #[arg(long)]
        out: PathBuf,
        /// Schema output path
        #[arg(long)]
        schema_out: PathBuf,
        /// Planted row ids output path
        #[arg(long)]
        truth_out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
}

#[derive(Args)]
struct TrainArgs {
    /// Hidden layer sizes, comma separated
    #[arg(long, default_value = "12,18,12,10")]
    hidden: String,
    #[arg(long, default_value_t = 0.3)]
    lr: f64,
    #[arg(long, default_value_t = 0.2)]
    momentum: f64,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 0.66)]
    train_fraction: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Keep file order for the split and epochs
    #[arg(long)]
    no_shuffle: bool,
}

#[derive(Args)]
struct SpcArgs {
    #[arg(long, default_value = "clt-sample")]
    spc_mode: String,
    #[arg(long, default_value_t = 100)]
    sample_size: usize,
    #[arg(long, default_value_t = 42)]
    spc_seed: u64,
}

fn config_err(msg: impl std::fmt::Display) -> PipelineError {
    PipelineError {
        stage: Stage::Config,
        message: msg.to_string(),
    }
}

fn parse_hidden(text: &str) -> Result<Vec<usize>, PipelineError> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| config_err(format!("bad layer size `{t}`")))
        })
        .collect()
}

impl TrainArgs {
    fn config(&self) -> Result<TrainConfig, PipelineError> {
        Ok(TrainConfig {
            hidden_sizes: parse_hidden(&self.hidden)?,
            learning_rate: self.lr,
            momentum: self.momentum,
            epochs: self.epochs,
            train_fraction: self.train_fraction,
            seed: self.seed,
            shuffle: !self.no_shuffle,
        })
    }
}

impl SpcArgs {
    fn config(&self) -> Result<SpcConfig, PipelineError> {
        Ok(SpcConfig {
            mode: self.spc_mode.parse::<EstimationMode>().map_err(config_err)?,
            sample_size: self.sample_size,
            seed: self.spc_seed,
        })
    }
}

fn base_config(data: &DataArgs, verbosity: u8) -> Result<PipelineConfig, PipelineError> {
    let delimiter = u8::try_from(data.delimiter)
        .ok()
        .filter(u8::is_ascii)
        .ok_or_else(|| config_err("delimiter must be a single ASCII character"))?;
    let mut cfg = PipelineConfig::new(&data.input, &data.schema);
    cfg.delimiter = delimiter;
    cfg.verbosity = verbosity;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let v = cli.verbose;
    match cli.command {
        Command::Profile {
            data,
            train,
            spc,
            report,
            violations,
            chart,
            chart_data,
            model,
            predictions,
            dump_encoded,
        } => {
            let mut cfg = base_config(&data, v)?;
            cfg.train = train.config()?;
            cfg.spc = spc.config()?;
            cfg.outputs.report = report;
            cfg.outputs.violations = violations;
            cfg.outputs.chart = chart;
            cfg.outputs.chart_data = chart_data;
            cfg.outputs.model = model;
            cfg.outputs.predictions = predictions;
            cfg.outputs.encoded = dump_encoded;
            let summary = cli::run_pipeline(&cfg)?;
            println!("{summary}");
        }
        Command::Encode {
            data,
            dump_encoded,
            violations,
        } => {
            let mut cfg = base_config(&data, v)?;
            cfg.outputs.encoded = Some(dump_encoded);
            cfg.outputs.violations = violations;
            let s = cli::run_check(&cfg)?;
            println!(
                "rows in: {}, encoded: {}, findings: {}",
                s.rows_in,
                s.clean_rows,
                s.violations.len()
            );
        }
        Command::Check { data, violations } => {
            let mut cfg = base_config(&data, v)?;
            cfg.outputs.violations = violations;
            let s = cli::run_check(&cfg)?;
            println!(
                "rows in: {}, clean: {}, violating: {}",
                s.rows_in,
                s.clean_rows,
                s.rows_in - s.clean_rows
            );
            let mut by_rule: std::collections::BTreeMap<&str, usize> = Default::default();
            for viol in &s.violations {
                *by_rule.entry(viol.rule_id).or_default() += 1;
            }
            for (rule, n) in by_rule {
                println!("  {rule}: {n}");
            }
        }
        Command::Train { data, train, model } => {
            let mut cfg = base_config(&data, v)?;
            cfg.train = train.config()?;
            cfg.outputs.model = model;
            let (_, m) = cli::run_train(&cfg)?;
            println!(
                "n_test={} r={} mae={} rmse={}",
                m.n_test,
                m.correlation.map_or("undefined".to_string(), |r| r.to_string()),
                m.mean_absolute_error,
                m.root_mean_squared_error
            );
        }
        Command::Sweep {
            data,
            train,
            architectures,
            sweep_report,
        } => {
            let mut cfg = base_config(&data, v)?;
            cfg.train = train.config()?;
            cfg.outputs.sweep_report = sweep_report;
            let archs: Vec<Vec<usize>> = match architectures {
                Some(text) => text.split(';').map(parse_hidden).collect::<Result<_, _>>()?,
                None => REFERENCE_ARCHITECTURES.iter().map(|a| a.to_vec()).collect(),
            };
            let report = cli::run_sweep(&cfg, &archs)?;
            println!("{:>3}  {:<18} {:>12} {:>14} {:>14}", "no", "hidden", "r", "mae", "rmse");
            for row in &report.rows {
                match &row.outcome {
                    Ok(m) => println!(
                        "{:>3}  {:<18} {:>12} {:>14.4} {:>14.4}",
                        row.no,
                        format_hidden(&row.hidden),
                        m.correlation.map_or("undefined".to_string(), |r| format!("{r:.4}")),
                        m.mean_absolute_error,
                        m.root_mean_squared_error
                    ),
                    Err(e) => println!("{:>3}  {:<18} failed: {e}", row.no, format_hidden(&row.hidden)),
                }
            }
            match report.best() {
                Some(i) => println!("best: {}", format_hidden(&report.rows[i].hidden)),
                None => println!("best: none (no defined correlation)"),
            }
        }
        Command::Spc {
            predictions,
            target_name,
            spc,
            report,
            chart,
            chart_data,
        } => {
            let mut cfg = PipelineConfig::new(&predictions, "");
            cfg.spc = spc.config()?;
            cfg.outputs.report = report;
            cfg.outputs.chart = chart;
            cfg.outputs.chart_data = chart_data;
            let (records, limits) = cli::run_spc(&cfg, &predictions, &target_name)?;
            println!(
                "limits ({}): mu={} sigma={} UCL={} LCL={}",
                limits.mode, limits.mu, limits.sigma, limits.ucl, limits.lcl
            );
            println!(
                "rows: {}, outliers: {}, undefined ratios: {}",
                records.len(),
                spc::count(&records, Classification::Outlier),
                spc::count(&records, Classification::UndefinedRatio)
            );
        }
        Command::Synth {
            rows,
            planted,
            dirty,
            seed,
            out,
            schema_out,
            truth_out,
        } => {
            if planted + dirty > rows {
                return Err(config_err("planted + dirty exceeds rows"));
            }
            let data = synth::generate(&SynthConfig {
                rows,
                planted,
                dirty,
                seed,
                ..SynthConfig::default()
            });
            write_synth(&data, &out, &schema_out, truth_out.as_deref()).map_err(config_err)?;
            println!(
                "wrote {rows} rows ({} planted, {} dirty)",
                data.planted.len(),
                data.dirty.len()
            );
        }
    }
    Ok(())
}

fn write_synth(
    data: &synth::SynthDataset,
    out: &std::path::Path,
    schema_out: &std::path::Path,
    truth_out: Option<&std::path::Path>,
) -> anyhow::Result<()> {
    std::fs::write(out, &data.csv).with_context(|| format!("writing {}", out.display()))?;
    std::fs::write(schema_out, data.schema.to_toml_string())
        .with_context(|| format!("writing {}", schema_out.display()))?;
    if let Some(p) = truth_out {
        let text: String = std::iter::once("row_id\n".to_string())
            .chain(data.planted.iter().map(|id| format!("{id}\n")))
            .collect();
        std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.stage.exit_code() as u8)
        }
    }
}
