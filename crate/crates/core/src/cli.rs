//! The `egat` command line.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bench::{edge_attention_scaling, BenchOptions};
use crate::data::{generate_synthetic_trade, load_dataset, save_checkpoint, load_checkpoint, save_dataset, DataOptions, Dataset, NodeFeatureMode, Preset};
use crate::error::{EgatError, Result};
use crate::gradcheck::{finite_diff_check, GradCheckOptions};
use crate::model::{GraphInputs, Model, ModelConfig, NodeClassifier};
use crate::train::{evaluate, fit, masked_loss, EpochMetrics, TrainConfig};

/// Gradient checks pass below this maximum relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Parser)]
#[command(name = "egat", version, about = "Edge-featured graph attention networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the sparse adjacency and mapping tensors and cache them as JSON.
    Preprocess {
        dir: PathBuf,
        /// Output file, `<dir>/structures.json` by default.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic trade-network dataset.
    Generate {
        #[arg(long)]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Give every node the same constant features.
        #[arg(long)]
        constant_node_features: bool,
        /// Fraction of labels flipped to another class.
        #[arg(long)]
        label_noise: Option<f64>,
    },
    /// Train a model and write metrics, checkpoint and resolved config.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated `F_H':F_E'` pairs, one run directory each.
        #[arg(long)]
        ratios: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Report the accuracy of a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Compare tape gradients of the training loss with finite differences.
    Gradcheck {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Coordinates sampled per parameter; all by default.
        #[arg(long)]
        max_coords: Option<usize>,
    },
    /// Time edge attention on star graphs and fit the scaling exponent.
    Benchmark {
        #[arg(long, value_delimiter = ',', default_values_t = vec![20usize, 40, 80])]
        degrees: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        trials: usize,
    },
}

/// Everything needed to replay a training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub data: DataOptions,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| EgatError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| EgatError::json(path, e))
    }
}

#[derive(Debug, Serialize)]
struct MetricsFile<'a> {
    epochs: &'a [EpochMetrics],
    test_acc: Option<f64>,
    config: &'a RunConfig,
    seed: u64,
}

/// Exit status for an error: 1 for bad input, 2 for internal failures.
pub fn exit_code(err: &EgatError) -> i32 {
    match err {
        EgatError::MissingSelfLoop(_)
        | EgatError::EmptySegment(_)
        | EgatError::MissingSlotFeature { .. }
        | EgatError::NonScalarBackward { .. }
        | EgatError::NonFinite(_)
        | EgatError::NonDeterministic { .. }
        | EgatError::Diverged { .. } => 2,
        _ => 1,
    }
}

/// Parses `8:4,6:6` into `[(8, 4), (6, 6)]`.
pub fn parse_ratios(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(',')
        .map(|part| {
            let bad = || EgatError::InvalidConfig(format!("ratio {part:?} is not of the form H:E"));
            let (h, e) = part.trim().split_once(':').ok_or_else(bad)?;
            let h: usize = h.trim().parse().map_err(|_| bad())?;
            let e: usize = e.trim().parse().map_err(|_| bad())?;
            if h == 0 || e == 0 {
                return Err(bad());
            }
            Ok((h, e))
        })
        .collect()
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| EgatError::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| EgatError::io(path, e))
}

fn line(out: &mut dyn Write, value: &serde_json::Value) -> Result<()> {
    writeln!(out, "{value}").map_err(|e| EgatError::io("<stdout>", e))
}

/// Runs the command line and returns the process exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    0
                }
                _ => {
                    let _ = write!(err, "{e}");
                    1
                }
            };
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Preprocess { dir, out: file } => preprocess(&dir, file, out),
        Command::Generate {
            preset,
            seed,
            out: dir,
            constant_node_features,
            label_noise,
        } => {
            let preset = Preset::parse(&preset).ok_or_else(|| {
                EgatError::InvalidConfig(format!("unknown preset {preset:?}; expected trade-b or trade-m"))
            })?;
            let mut cfg = preset.config(seed);
            if constant_node_features {
                cfg.node_features = NodeFeatureMode::Constant;
            }
            if let Some(noise) = label_noise {
                cfg.label_noise = noise;
            }
            let ds = generate_synthetic_trade(&cfg)?;
            save_dataset(&ds, &dir)?;
            let (train, val, test) = ds.masks.sizes();
            line(
                out,
                &json!({
                    "name": ds.name,
                    "nodes": ds.num_nodes(),
                    "edges": ds.graph.num_edges(),
                    "labeled": ds.labeled_ids().len(),
                    "num_classes": ds.num_classes,
                    "split": [train, val, test],
                    "out": dir,
                }),
            )?;
            Ok(0)
        }
        Command::Train {
            data,
            config,
            out: dir,
            ratios,
            seed,
        } => train(data, config, &dir, ratios, seed, out),
        Command::Eval { checkpoint, data } => {
            let model = load_checkpoint(&checkpoint)?;
            let ds = load_dataset(&data, &DataOptions::default())?;
            if model.config().num_classes != ds.num_classes {
                return Err(EgatError::dims(format!(
                    "checkpoint predicts {} classes, dataset has {}",
                    model.config().num_classes,
                    ds.num_classes
                )));
            }
            let inputs = ds.inputs(model.config().standardize_inputs)?;
            let acc = |mask: &[bool]| -> Result<Option<f64>> {
                if mask.iter().any(|m| *m) {
                    evaluate(&model, &inputs, &ds.labels, mask).map(Some)
                } else {
                    Ok(None)
                }
            };
            line(
                out,
                &json!({
                    "test_acc": acc(&ds.masks.test)?,
                    "val_acc": acc(&ds.masks.val)?,
                    "train_acc": acc(&ds.masks.train)?,
                }),
            )?;
            Ok(0)
        }
        Command::Gradcheck {
            data,
            config,
            max_coords,
        } => {
            let run_cfg = match config {
                Some(path) => RunConfig::load(&path)?,
                None => RunConfig::default(),
            };
            let ds = load_dataset(&data, &run_cfg.data)?;
            let mut cfg = run_cfg.model.clone();
            cfg.num_classes = ds.num_classes;
            let model = Model::init(cfg, ds.node_feats.cols(), ds.edge_feats.cols())?;
            let inputs = ds.inputs(model.config().standardize_inputs)?;
            let opts = GradCheckOptions {
                max_coords_per_param: max_coords,
                seed: model.config().seed,
                ..Default::default()
            };
            let report = gradcheck_model(&model, &inputs, &ds, &opts)?;
            let passed = report.max_relative_error < GRADCHECK_TOLERANCE;
            line(
                out,
                &json!({
                    "max_relative_error": report.max_relative_error,
                    "coordinates_checked": report.coordinates_checked,
                    "tolerance": GRADCHECK_TOLERANCE,
                    "passed": passed,
                }),
            )?;
            Ok(if passed { 0 } else { 2 })
        }
        Command::Benchmark { degrees, trials } => {
            let opts = BenchOptions {
                trials,
                ..Default::default()
            };
            let report = edge_attention_scaling(&degrees, &opts)?;
            line(out, &serde_json::to_value(&report).expect("report serializes"))?;
            Ok(0)
        }
    }
}

/// Finite-difference check of the full training loss (dropout off) with
/// respect to every model parameter.
pub fn gradcheck_model(
    model: &Model,
    inputs: &GraphInputs,
    ds: &Dataset,
    opts: &GradCheckOptions,
) -> Result<crate::gradcheck::GradCheckReport> {
    let params: Vec<_> = model.parameters().into_iter().cloned().collect();
    let regularized = model.regularized();
    let l2 = model.config().l2;
    finite_diff_check(
        &params,
        |tape, vars| {
            let logits = model.logits_tape(tape, vars, inputs, None)?;
            let reg: Vec<_> = vars.iter().zip(&regularized).filter(|(_, r)| **r).map(|(v, _)| *v).collect();
            masked_loss(tape, logits, &ds.labels, &ds.masks.train, l2, &reg)
        },
        opts,
    )
}

fn preprocess(dir: &Path, file: Option<PathBuf>, out: &mut dyn Write) -> Result<i32> {
    let ds = load_dataset(dir, &DataOptions::default())?;
    let inputs = ds.inputs(false)?;
    let s = &inputs.structures;
    let path = file.unwrap_or_else(|| dir.join("structures.json"));
    let text = serde_json::to_string(&json!({
        "num_nodes": s.num_nodes(),
        "num_edges": s.num_edges(),
        "a_h": s.a_h,
        "m_e": s.m_e,
        "a_e": s.a_e,
        "m_h": s.m_h,
    }))
    .map_err(|e| EgatError::json(&path, e))?;
    fs::write(&path, text).map_err(|e| EgatError::io(&path, e))?;
    line(
        out,
        &json!({
            "num_nodes": s.num_nodes(),
            "num_edges_with_self_loops": s.num_edges(),
            "nnz": {"a_h": s.a_h.nnz(), "m_e": s.m_e.nnz(), "a_e": s.a_e.nnz(), "m_h": s.m_h.nnz()},
            "out": path,
        }),
    )?;
    Ok(0)
}

fn train(
    data: Option<PathBuf>,
    config: Option<PathBuf>,
    dir: &Path,
    ratios: Option<String>,
    seed: Option<u64>,
    out: &mut dyn Write,
) -> Result<i32> {
    let mut base = match &config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(d) = data {
        base.dataset = Some(d);
    }
    let data_dir = base
        .dataset
        .clone()
        .ok_or_else(|| EgatError::InvalidConfig("no dataset: pass --data or set \"dataset\" in the config".into()))?;
    if let Some(s) = seed {
        base.model.seed = s;
    }
    let ds = load_dataset(&data_dir, &base.data)?;
    base.model.num_classes = ds.num_classes;
    let inputs = ds.inputs(base.model.standardize_inputs)?;

    let runs: Vec<(RunConfig, PathBuf)> = match ratios {
        None => vec![(base.clone(), dir.to_path_buf())],
        Some(spec) => parse_ratios(&spec)?
            .into_iter()
            .map(|(h, e)| {
                let mut cfg = base.clone();
                cfg.model.node_hidden = h;
                cfg.model.edge_hidden = e;
                (cfg, dir.join(format!("h{h}_e{e}")))
            })
            .collect(),
    };
    for (cfg, run_dir) in runs {
        fs::create_dir_all(&run_dir).map_err(|e| EgatError::io(&run_dir, e))?;
        write_json(&run_dir.join("config.json"), &cfg)?;
        let mut model = Model::init(cfg.model.clone(), ds.node_feats.cols(), ds.edge_feats.cols())?;
        let report = fit(&mut model, &inputs, &ds.labels, &ds.masks, &cfg.train)?;
        let test_acc = if ds.masks.test.iter().any(|m| *m) {
            Some(evaluate(&model, &inputs, &ds.labels, &ds.masks.test)?)
        } else {
            None
        };
        write_json(
            &run_dir.join("metrics.json"),
            &MetricsFile {
                epochs: &report.history,
                test_acc,
                config: &cfg,
                seed: cfg.model.seed,
            },
        )?;
        save_checkpoint(&model, &run_dir.join("checkpoint.bin"))?;
        line(
            out,
            &json!({
                "run": run_dir,
                "node_hidden": cfg.model.node_hidden,
                "edge_hidden": cfg.model.edge_hidden,
                "epochs": report.history.len(),
                "best_epoch": report.best_epoch,
                "test_acc": test_acc,
            }),
        )?;
    }
    Ok(0)
}
