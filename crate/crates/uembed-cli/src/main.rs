//! Command-line driver: reproducible training, evaluation, corruption
//! sweeps, gradient checks, soft-label and projection exports.
//!
//! Configuration comes from a flat key = value file with dotted section keys
//! plus command-line overrides (flags win). Every command writes a resolved
//! copy of its configuration and seed into the output directory, so a run
//! can be replayed from that file alone.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use uembed::corrupt::{self, CorruptionKind};
use uembed::data::{
    generate_synthetic, index_market_dir, split, Dataset, Split, SplitPolicy, SyntheticMode,
    SyntheticSpec,
};
use uembed::eval::DistanceMode;
use uembed::gradcheck;
use uembed::loss::LossConfig;
use uembed::model::{
    load_checkpoint_file, save_checkpoint_file, EmbedModel, HeadKind, ModelConfig,
};
use uembed::pipeline::{self, PipelineError};
use uembed::project::{self, ProjectionMethod};
use uembed::train::{LossMode, TargetKind, TrainConfig, TrainError};

enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Data(m) => write!(f, "data: {m}"),
            CliError::Numeric(m) => write!(f, "numeric: {m}"),
        }
    }
}

impl From<uembed::data::DataError> for CliError {
    fn from(e: uembed::data::DataError) -> Self {
        match e {
            uembed::data::DataError::InvalidConfig { .. } => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<uembed::model::ModelError> for CliError {
    fn from(e: uembed::model::ModelError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig { .. } => CliError::Usage(e.to_string()),
            TrainError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<corrupt::CorruptError> for CliError {
    fn from(e: corrupt::CorruptError) -> Self {
        match e {
            corrupt::CorruptError::BadSpec { .. } | corrupt::CorruptError::InvalidConfig { .. } => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Train(t) => t.into(),
            PipelineError::Model(m) => m.into(),
            PipelineError::Corrupt(c) => c.into(),
            PipelineError::Data(d) => d.into(),
            PipelineError::Eval(e) => CliError::Data(e.to_string()),
            PipelineError::Invalid { detail } => CliError::Usage(detail),
        }
    }
}

impl From<project::ProjectError> for CliError {
    fn from(e: project::ProjectError) -> Self {
        match e {
            project::ProjectError::CapabilityMissing { .. } => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

const USAGE: &str = "uembed <command> [flags]

commands:
  train       two-stage training on synthetic or directory data
  eval        retrieval evaluation of a checkpoint, optionally with a
              corrupted query set
  gradcheck   central-difference checks for every differentiable component
  softlabels  export the prior-derived soft-label matrix as CSV
  project     2D projection of the class priors as SVG + CSV

common flags:
  --config PATH      key = value configuration file (flags override it)
  --seed N           global seed
  --out DIR          output directory (default uembed_out)
  --loss MODE        distribution | gm | ce
  --variance-head H  sigma | bm | mlp | none
  --stage2 / --no-stage2
  --tau X            soft-label temperature
  --lambda X         KL regularizer weight
  --distance D       euclidean | cosine | wasserstein
  --synthetic SPEC   e.g. k=10,per_class=60,mode=image
  --dataset PATH     market-style image directory
  --corrupt SPEC     e.g. gaussian-blur:k=5 (eval only, queries only)
  --train-label-noise F
  --channels N, --epochs N, --stage2-epochs N, --lr X, --batch N, --warmup N
  --checkpoint PATH  (eval / softlabels / project)
  --samples N, --ids a,b,c, --points, --method pca (project)
";

// ---- flat configuration ----

#[derive(Debug, Clone)]
struct Config {
    values: BTreeMap<String, String>,
}

const CONFIG_KEYS: [&str; 22] = [
    "seed",
    "out",
    "data.source",
    "data.synthetic",
    "data.dataset",
    "model.channels",
    "model.head",
    "train.stage1_epochs",
    "train.stage2_epochs",
    "train.base_lr",
    "train.warmup_epochs",
    "train.decay_epochs",
    "train.decay_factor",
    "train.batch_size",
    "train.label_noise",
    "loss.mode",
    "loss.lambda",
    "loss.tau",
    "loss.smoothing_epsilon",
    "eval.distance",
    "eval.corrupt",
    "eval.checkpoint",
];

impl Config {
    fn defaults() -> Self {
        let mut values = BTreeMap::new();
        let mut set = |k: &str, v: &str| {
            values.insert(k.to_string(), v.to_string());
        };
        set("seed", "0");
        set("out", "uembed_out");
        set("data.source", "synthetic");
        set("data.synthetic", "k=10,per_class=60,mode=image");
        set("data.dataset", "");
        set("model.channels", "64");
        set("model.head", "sigma");
        set("train.stage1_epochs", "40");
        set("train.stage2_epochs", "10");
        set("train.base_lr", "3.5e-4");
        set("train.warmup_epochs", "5");
        set("train.decay_epochs", "20,30");
        set("train.decay_factor", "3");
        set("train.batch_size", "32");
        set("train.label_noise", "0");
        set("loss.mode", "distribution");
        set("loss.lambda", "0.1");
        set("loss.tau", "0.17");
        set("loss.smoothing_epsilon", "0.1");
        set("eval.distance", "euclidean");
        set("eval.corrupt", "none");
        set("eval.checkpoint", "");
        Config { values }
    }

    fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!(
                    "{}:{}: expected key = value",
                    path.display(),
                    line_no + 1
                ))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !CONFIG_KEYS.contains(&key) {
            return Err(CliError::Usage(format!("unknown config key {key:?}")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    fn get(&self, key: &str) -> &str {
        self.values.get(key).map(|s| s.as_str()).unwrap_or("")
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)
            .parse()
            .map_err(|_| CliError::Usage(format!("bad value {:?} for {key}", self.get(key))))
    }

    fn resolved_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

// ---- flag parsing ----

struct Args {
    flags: BTreeMap<String, String>,
    switches: Vec<String>,
}

const VALUE_FLAGS: [&str; 22] = [
    "--config",
    "--seed",
    "--out",
    "--loss",
    "--variance-head",
    "--tau",
    "--lambda",
    "--distance",
    "--synthetic",
    "--dataset",
    "--corrupt",
    "--train-label-noise",
    "--channels",
    "--epochs",
    "--stage2-epochs",
    "--lr",
    "--warmup",
    "--batch",
    "--checkpoint",
    "--samples",
    "--ids",
    "--method",
];
const SWITCH_FLAGS: [&str; 4] = ["--stage2", "--no-stage2", "--points", "--help"];

fn parse_args(args: &[String]) -> Result<Args> {
    let mut flags = BTreeMap::new();
    let mut switches = Vec::new();
    let mut i = 0;
    while i < args.len() {
        let arg = &args[i];
        if SWITCH_FLAGS.contains(&arg.as_str()) {
            switches.push(arg.clone());
            i += 1;
        } else if VALUE_FLAGS.contains(&arg.as_str()) {
            let value = args
                .get(i + 1)
                .ok_or_else(|| CliError::Usage(format!("{arg} needs a value")))?;
            flags.insert(arg.clone(), value.clone());
            i += 2;
        } else {
            return Err(CliError::Usage(format!("unknown flag {arg:?}")));
        }
    }
    Ok(Args { flags, switches })
}

impl Args {
    fn get(&self, flag: &str) -> Option<&str> {
        self.flags.get(flag).map(|s| s.as_str())
    }

    fn has(&self, switch: &str) -> bool {
        self.switches.iter().any(|s| s == switch)
    }
}

fn resolve_config(args: &Args) -> Result<Config> {
    let mut config = Config::defaults();
    if let Some(path) = args.get("--config") {
        config.load_file(Path::new(path))?;
    }
    let direct = [
        ("--seed", "seed"),
        ("--out", "out"),
        ("--loss", "loss.mode"),
        ("--variance-head", "model.head"),
        ("--tau", "loss.tau"),
        ("--lambda", "loss.lambda"),
        ("--distance", "eval.distance"),
        ("--corrupt", "eval.corrupt"),
        ("--train-label-noise", "train.label_noise"),
        ("--channels", "model.channels"),
        ("--epochs", "train.stage1_epochs"),
        ("--stage2-epochs", "train.stage2_epochs"),
        ("--lr", "train.base_lr"),
        ("--warmup", "train.warmup_epochs"),
        ("--batch", "train.batch_size"),
        ("--checkpoint", "eval.checkpoint"),
    ];
    for (flag, key) in direct {
        if let Some(value) = args.get(flag) {
            config.set(key, value)?;
        }
    }
    if let Some(spec) = args.get("--synthetic") {
        config.set("data.source", "synthetic")?;
        config.set("data.synthetic", spec)?;
    }
    if let Some(path) = args.get("--dataset") {
        config.set("data.source", "directory")?;
        config.set("data.dataset", path)?;
    }
    if args.has("--no-stage2") {
        config.set("train.stage2_epochs", "0")?;
    } else if args.has("--stage2") && config.parse::<usize>("train.stage2_epochs")? == 0 {
        config.set("train.stage2_epochs", "10")?;
    }
    Ok(config)
}

// ---- config -> typed structs ----

fn parse_synthetic_spec(text: &str, seed: u64) -> Result<SyntheticSpec> {
    let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
    for part in text.split(',').filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("bad synthetic field {part:?}")))?;
        fields.insert(k.trim(), v.trim());
    }
    let get_usize = |key: &str, default: usize| -> Result<usize> {
        fields
            .get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| CliError::Usage(format!("bad synthetic {key}={v}")))
            })
            .unwrap_or(Ok(default))
    };
    let get_f64 = |key: &str, default: f64| -> Result<f64> {
        fields
            .get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| CliError::Usage(format!("bad synthetic {key}={v}")))
            })
            .unwrap_or(Ok(default))
    };
    let classes = get_usize("k", 10)?;
    let per_class = get_usize("per_class", 60)?;
    let train_default = per_class * 2 / 3;
    let query_default = ((per_class - train_default) / 3).max(1);
    let train_per_class = get_usize("train", train_default)?;
    let query_per_class = get_usize("query", query_default)?;
    let mode = match fields.get("mode").copied().unwrap_or("image") {
        "image" => SyntheticMode::Image {
            height: get_usize("h", 64)?,
            width: get_usize("w", 32)?,
            noise_std: get_f64("noise", 0.12)?,
        },
        "vector" => SyntheticMode::Vector {
            dim: get_usize("dim", 16)?,
            mean_scale: get_f64("scale", 3.0)?,
            std: get_f64("std", 0.4)?,
        },
        other => return Err(CliError::Usage(format!("unknown synthetic mode {other:?}"))),
    };
    Ok(SyntheticSpec {
        classes,
        per_class,
        train_per_class,
        query_per_class,
        mode,
        seed,
    })
}

fn build_dataset(config: &Config) -> Result<Dataset> {
    let seed: u64 = config.parse("seed")?;
    match config.get("data.source") {
        "synthetic" => {
            let spec = parse_synthetic_spec(config.get("data.synthetic"), seed)?;
            Ok(generate_synthetic(&spec)?)
        }
        "directory" => {
            let root = PathBuf::from(config.get("data.dataset"));
            let mut index = index_market_dir(&root)?;
            if index.split_indices(Split::Query).is_empty() {
                index = split(
                    &index,
                    &SplitPolicy::IdentitySplit {
                        train_fraction: 0.5,
                        seed,
                    },
                )?;
            }
            Ok(Dataset::load(index)?)
        }
        other => Err(CliError::Usage(format!("unknown data source {other:?}"))),
    }
}

fn head_kind(config: &Config) -> Result<HeadKind> {
    match config.get("model.head") {
        "sigma" => Ok(HeadKind::Sigma),
        "bm" => Ok(HeadKind::Bilinear),
        "mlp" => Ok(HeadKind::Mlp),
        "none" => Ok(HeadKind::None),
        other => Err(CliError::Usage(format!("unknown variance head {other:?}"))),
    }
}

fn loss_mode(config: &Config) -> Result<LossMode> {
    match config.get("loss.mode") {
        "distribution" => Ok(LossMode::Distribution),
        "gm" => Ok(LossMode::Gm),
        "ce" => Ok(LossMode::CrossEntropy),
        other => Err(CliError::Usage(format!("unknown loss mode {other:?}"))),
    }
}

fn distance_mode(config: &Config) -> Result<DistanceMode> {
    match config.get("eval.distance") {
        "euclidean" => Ok(DistanceMode::Euclidean),
        "cosine" => Ok(DistanceMode::Cosine),
        "wasserstein" => Ok(DistanceMode::Wasserstein),
        other => Err(CliError::Usage(format!("unknown distance {other:?}"))),
    }
}

fn model_config(config: &Config, dataset: &Dataset) -> Result<ModelConfig> {
    let classes = dataset.index.classes;
    if classes == 0 {
        return Err(CliError::Data("dataset defines no training classes".into()));
    }
    let head = head_kind(config)?;
    let loss = loss_mode(config)?;
    // the dataset's first training tensor decides the backbone
    let sample = dataset
        .train_samples()
        .first()
        .map(|s| s.input.shape().to_vec())
        .ok_or_else(|| CliError::Data("dataset has no training samples".into()))?;
    let mut model_config = match sample.as_slice() {
        [h, w, 3] => {
            let channels: usize = config.parse("model.channels")?;
            let mut c = ModelConfig::tiny_conv(channels, classes);
            c.input_hw = (*h, *w);
            c
        }
        [dim] => ModelConfig::identity_vector(*dim, classes),
        other => {
            return Err(CliError::Data(format!(
                "unsupported sample shape {other:?}"
            )))
        }
    };
    model_config.head = head;
    model_config.with_classifier = loss == LossMode::CrossEntropy;
    Ok(model_config)
}

fn train_config(config: &Config) -> Result<TrainConfig> {
    let decay_epochs: Vec<usize> = {
        let text = config.get("train.decay_epochs").trim().to_string();
        if text.is_empty() || text == "none" {
            vec![]
        } else {
            text.split(',')
                .map(|p| {
                    p.trim()
                        .parse()
                        .map_err(|_| CliError::Usage(format!("bad decay epoch {p:?}")))
                })
                .collect::<Result<_>>()?
        }
    };
    Ok(TrainConfig {
        stage1_epochs: config.parse("train.stage1_epochs")?,
        stage2_epochs: config.parse("train.stage2_epochs")?,
        base_lr: config.parse("train.base_lr")?,
        warmup_epochs: config.parse("train.warmup_epochs")?,
        decay_epochs,
        decay_factor: config.parse("train.decay_factor")?,
        batch_size: config.parse("train.batch_size")?,
        seed: config.parse("seed")?,
        loss_mode: loss_mode(config)?,
        loss: LossConfig {
            lambda: config.parse("loss.lambda")?,
            tau: config.parse("loss.tau")?,
            smoothing_epsilon: config.parse("loss.smoothing_epsilon")?,
        },
        stage1_targets: TargetKind::Smoothed,
        stage2_targets: TargetKind::Soft,
    })
}

fn prepare_out_dir(config: &Config) -> Result<PathBuf> {
    let out = PathBuf::from(config.get("out"));
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("config.resolved.txt"), config.resolved_text())?;
    Ok(out)
}

// ---- commands ----

fn cmd_train(args: &Args) -> Result<()> {
    let config = resolve_config(args)?;
    let out = prepare_out_dir(&config)?;
    let dataset = build_dataset(&config)?;
    let mc = model_config(&config, &dataset)?;
    let tc = train_config(&config)?;
    let distance = distance_mode(&config)?;
    let noise: f64 = config.parse("train.label_noise")?;
    let noise = (noise > 0.0).then_some(noise);

    let seed: u64 = config.parse("seed")?;
    let mut model = EmbedModel::init(mc, seed).map_err(CliError::from)?;
    let outcome = pipeline::train_and_evaluate(&mut model, &dataset, &tc, distance, noise)?;

    let checkpoint = pipeline::run_checkpoint(&model, &outcome.adam, outcome.epochs_run);
    save_checkpoint_file(&out.join("checkpoint.gckp"), &checkpoint)?;
    std::fs::write(out.join("trainlog.csv"), outcome.log.to_csv())?;
    std::fs::write(out.join("trainlog.json"), outcome.log.to_json())?;
    std::fs::write(out.join("eval.json"), outcome.report.to_json())?;
    std::fs::write(
        out.join("eval.csv"),
        format!("{}\n", outcome.report.csv_summary()),
    )?;
    println!(
        "train done: {} epochs, rank1 {:.4}, mAP {:.4} -> {}",
        outcome.epochs_run,
        outcome.report.rank(1),
        outcome.report.map,
        out.display()
    );
    Ok(())
}

fn cmd_eval(args: &Args) -> Result<()> {
    let config = resolve_config(args)?;
    let out = prepare_out_dir(&config)?;
    let checkpoint_path = config.get("eval.checkpoint");
    if checkpoint_path.is_empty() {
        return Err(CliError::Usage("eval needs --checkpoint".into()));
    }
    let distance = distance_mode(&config)?;
    let seed: u64 = config.parse("seed")?;
    // validate user input before touching the filesystem
    let corruption: Option<CorruptionKind> = match config.get("eval.corrupt") {
        "" | "none" => None,
        spec => Some(corrupt::parse_spec(spec)?),
    };
    let checkpoint = load_checkpoint_file(Path::new(checkpoint_path))?;
    let model = pipeline::restore_model(&checkpoint)?;
    let dataset = build_dataset(&config)?;
    let report = pipeline::evaluate_model(
        &model,
        &dataset,
        distance,
        corruption.as_ref().map(|kind| (kind, seed)),
    )?;
    std::fs::write(out.join("eval.json"), report.to_json())?;
    std::fs::write(out.join("eval.csv"), format!("{}\n", report.csv_summary()))?;
    println!(
        "eval done: rank1 {:.4}, rank5 {:.4}, mAP {:.4}{} -> {}",
        report.rank(1),
        report.rank(5),
        report.map,
        corruption
            .map(|c| format!(" under {}", c.spec_string()))
            .unwrap_or_default(),
        out.display()
    );
    Ok(())
}

fn cmd_gradcheck(args: &Args) -> Result<()> {
    let config = resolve_config(args)?;
    let out = prepare_out_dir(&config)?;
    let seed: u64 = config.parse("seed")?;
    let reports = gradcheck::run_component_suites(seed);
    let mut failed = false;
    for report in &reports {
        let status = if report.passed() { "PASS" } else { "FAIL" };
        println!(
            "{status} {:<20} max_rel_err {:.3e} (tolerance {:.1e}, {} probes)",
            report.component, report.max_rel_err, report.tolerance, report.checked
        );
        failed |= !report.passed();
    }
    std::fs::write(
        out.join("gradcheck.json"),
        serde_json::to_string_pretty(&reports).expect("reports serialize"),
    )?;
    if failed {
        return Err(CliError::Numeric("gradient check tolerance exceeded".into()));
    }
    Ok(())
}

fn cmd_softlabels(args: &Args) -> Result<()> {
    let config = resolve_config(args)?;
    let out = prepare_out_dir(&config)?;
    let checkpoint_path = config.get("eval.checkpoint");
    if checkpoint_path.is_empty() {
        return Err(CliError::Usage("softlabels needs --checkpoint".into()));
    }
    let checkpoint = load_checkpoint_file(Path::new(checkpoint_path))?;
    let model = pipeline::restore_model(&checkpoint)?;
    let tau: f64 = config.parse("loss.tau")?;
    let matrix = model
        .bank
        .soft_labels(tau)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let csv = uembed::loss::soft_labels_csv(&matrix);
    std::fs::write(out.join("softlabels.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn cmd_project(args: &Args) -> Result<()> {
    let config = resolve_config(args)?;
    let out = prepare_out_dir(&config)?;
    let checkpoint_path = config.get("eval.checkpoint");
    if checkpoint_path.is_empty() {
        return Err(CliError::Usage("project needs --checkpoint".into()));
    }
    let checkpoint = load_checkpoint_file(Path::new(checkpoint_path))?;
    let model = pipeline::restore_model(&checkpoint)?;
    let seed: u64 = config.parse("seed")?;
    let samples: usize = args
        .get("--samples")
        .map(|v| {
            v.parse()
                .map_err(|_| CliError::Usage(format!("bad --samples {v:?}")))
        })
        .unwrap_or(Ok(2000))?;
    let method = match args.get("--method").unwrap_or("pca") {
        "pca" => ProjectionMethod::Pca,
        "tsne" => ProjectionMethod::Tsne,
        other => return Err(CliError::Usage(format!("unknown method {other:?}"))),
    };
    let ids: Vec<usize> = match args.get("--ids") {
        Some(list) => list
            .split(',')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|_| CliError::Usage(format!("bad id {p:?}")))
            })
            .collect::<Result<_>>()?,
        None => (0..model.bank.classes()).collect(),
    };
    let mut distributions = Vec::with_capacity(ids.len());
    for id in ids {
        let prior = model
            .bank
            .prior(id)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        distributions.push((format!("id{id}"), prior));
    }
    let projected = project::project_distributions(&distributions, samples, method, seed)?;
    project::export_ellipses(&projected, args.has("--points"), &out.join("projection.svg"))?;
    std::fs::write(out.join("projection.csv"), project::ellipses_csv(&projected))?;
    println!(
        "projected {} distributions -> {}",
        projected.len(),
        out.display()
    );
    Ok(())
}

fn run(args: &[String]) -> Result<()> {
    let Some(command) = args.first() else {
        return Err(CliError::Usage(format!("missing command\n\n{USAGE}")));
    };
    let rest = parse_args(&args[1..])?;
    if rest.has("--help") {
        println!("{USAGE}");
        return Ok(());
    }
    match command.as_str() {
        "train" => cmd_train(&rest),
        "eval" => cmd_eval(&rest),
        "gradcheck" => cmd_gradcheck(&rest),
        "softlabels" => cmd_softlabels(&rest),
        "project" => cmd_project(&rest),
        "--help" | "help" => {
            println!("{USAGE}");
            Ok(())
        }
        other => Err(CliError::Usage(format!("unknown command {other:?}\n\n{USAGE}"))),
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
