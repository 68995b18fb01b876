//! The `blindcount` command line.
//!
//! Every command takes an optional `--config` JSON file; flags given on the
//! command line override its fields, and the merged configuration is written
//! to `config.json` in the output directory.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::densitymap::{integrate, write_dmap, DmapSidecar};
use crate::discovery::{discover_examples, DiscoveryConfig, ExampleSet};
use crate::error::{Error, Result};
use crate::matching::{
    deployment_postprocess, head_utilization, write_match_log, PostprocessConfig, PredictionSet, SubclassCombine,
    DEFAULT_UTILIZATION_THRESHOLD,
};
use crate::metrics::{
    baseline_predict, compute_metrics, constant_predictions, write_csv, BaselineMode, CountPair, MetricReport,
    MetricRow,
};
use crate::model::{
    evaluate, load_checkpoint, samples_from_labels, save_checkpoint, train_from, EpochLog, EvalOptions, ModelParams,
    Sample, TrainConfig,
};
use crate::raster::Raster;
use crate::scenegen::{generate_split, load_split, GenConfig, Split, SplitSummary};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "BLINDCOUNT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "blindcount", version, about = "Exemplar-free multi-class object counting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train/val/test splits of synthetic scenes.
    Generate(GenerateArgs),
    /// Train a multi-head counter.
    Train(TrainArgs),
    /// Score a checkpoint (or baselines) on a split.
    Eval(EvalArgs),
    /// Count objects in one image and find examples of each count.
    Count(CountArgs),
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn required(path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    path.clone().ok_or_else(|| Error::Config(format!("missing {what} (flag or config field)")))
}

macro_rules! override_fields {
    ($args:expr, $cfg:expr, [$($field:ident),* $(,)?]) => {
        $(if let Some(v) = $args.$field.clone() { $cfg.$field = v; })*
    };
}

// ---------------------------------------------------------------- generate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateConfig {
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Keep only single-class scenes.
    pub m1: bool,
    #[serde(flatten)]
    pub scene: GenConfig,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            out: None,
            seed: 7,
            train: 200,
            val: 50,
            test: 50,
            m1: false,
            scene: GenConfig::default(),
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub val: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
    /// Single-class scenes only.
    #[arg(long)]
    pub m1: bool,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub classes_min: Option<usize>,
    #[arg(long)]
    pub classes_max: Option<usize>,
    #[arg(long)]
    pub mean_classes: Option<f64>,
    #[arg(long)]
    pub instances_min: Option<usize>,
    #[arg(long)]
    pub instances_max: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
}

impl GenerateArgs {
    pub fn resolve(&self) -> Result<GenerateConfig> {
        let mut cfg: GenerateConfig = read_config(self.config.as_deref())?;
        if self.out.is_some() {
            cfg.out = self.out.clone();
        }
        override_fields!(self, cfg, [seed, train, val, test]);
        cfg.m1 |= self.m1;
        let s = &mut cfg.scene;
        override_fields!(self, s, [width, height, classes_min, classes_max, mean_classes, instances_min, instances_max, sigma]);
        if (self.classes_min.is_some() || self.classes_max.is_some()) && self.mean_classes.is_none() {
            s.mean_classes = s.mean_classes.clamp(s.classes_min as f64, s.classes_max as f64);
        }
        if cfg.m1 {
            s.classes_min = 1;
        }
        cfg.scene.validate()?;
        Ok(cfg)
    }
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<Vec<SplitSummary>> {
    let cfg = args.resolve()?;
    let out = required(&cfg.out, "output directory (--out)")?;
    create_dir(&out)?;
    write_json(&out.join("config.json"), &cfg)?;
    let mut summaries = Vec::new();
    for (split, n) in [(Split::Train, cfg.train), (Split::Val, cfg.val), (Split::Test, cfg.test)] {
        if n == 0 {
            continue;
        }
        let s = generate_split(split, n, &cfg.scene, cfg.seed, cfg.m1, &out.join(split.name()))?;
        println!(
            "{split}: {} images, classes per image {:?} (mean {:.2}), mean instances per class {:.2}, counts {}..={}",
            s.images, s.class_histogram, s.mean_classes, s.mean_instances_per_class, s.min_count, s.max_count
        );
        summaries.push(s);
    }
    write_json(&out.join("summary.json"), &summaries)?;
    Ok(summaries)
}

// ------------------------------------------------------------------- train

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct TrainRunConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Continue from this checkpoint instead of a fresh initialisation.
    pub init: Option<PathBuf>,
    /// Use only the first this many training images.
    pub max_images: Option<usize>,
    #[serde(flatten)]
    pub train: TrainConfig,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset root written by `generate`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub max_images: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long = "lr-halving")]
    pub lr_halving_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long = "mhat")]
    pub m_hat: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train only the heads.
    #[arg(long)]
    pub freeze_backbone: bool,
}

impl TrainArgs {
    pub fn resolve(&self) -> Result<TrainRunConfig> {
        let mut cfg: TrainRunConfig = read_config(self.config.as_deref())?;
        for (dst, src) in [(&mut cfg.data, &self.data), (&mut cfg.out, &self.out), (&mut cfg.init, &self.init)] {
            if src.is_some() {
                *dst = src.clone();
            }
        }
        if self.max_images.is_some() {
            cfg.max_images = self.max_images;
        }
        let t = &mut cfg.train;
        override_fields!(self, t, [epochs, learning_rate, lr_halving_epochs, batch_size, m_hat, seed]);
        t.freeze_backbone |= self.freeze_backbone;
        t.validate()?;
        Ok(cfg)
    }
}

fn load_samples(split_dir: &Path, sigma: Option<f64>) -> Result<(Vec<Sample>, f64)> {
    let (manifest, labels) = load_split(split_dir)?;
    let sigma = sigma.unwrap_or(manifest.config.sigma);
    Ok((samples_from_labels(&labels, sigma)?, sigma))
}

pub fn cmd_train(args: &TrainArgs) -> Result<Vec<EpochLog>> {
    let cfg = args.resolve()?;
    let data = required(&cfg.data, "dataset directory (--data)")?;
    let out = required(&cfg.out, "output directory (--out)")?;
    let (mut samples, _) = load_samples(&data.join(Split::Train.name()), None)?;
    if let Some(n) = cfg.max_images {
        samples.truncate(n);
    }
    let first = samples.first().ok_or_else(|| Error::InvalidInput("training split is empty".into()))?;
    let params = match &cfg.init {
        Some(p) => {
            let params = load_checkpoint(p)?;
            if params.m_hat() != cfg.train.m_hat {
                return Err(Error::Config(format!(
                    "checkpoint has {} heads but m_hat is {}",
                    params.m_hat(),
                    cfg.train.m_hat
                )));
            }
            params
        }
        None => ModelParams::init(
            cfg.train.model_config(first.image.height(), first.image.width()),
            cfg.train.seed,
        )?,
    };
    create_dir(&out)?;
    write_json(&out.join("config.json"), &cfg)?;
    let log_path = out.join("train_log.jsonl");
    let mut log_file = BufWriter::new(File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
    let mut io_error = None;
    let outcome = train_from(params, &samples, &cfg.train, |entry| {
        let line = serde_json::to_string(entry).expect("log entries serialize");
        if let Err(e) = writeln!(log_file, "{line}").and_then(|_| log_file.flush()) {
            io_error.get_or_insert(e);
        }
        println!(
            "epoch {:>3}  loss {:.5}  lr {:.2e}  utilization {:.0}%",
            entry.epoch,
            entry.loss,
            entry.lr,
            entry.head_utilization * 100.0
        );
    })?;
    if let Some(e) = io_error {
        return Err(Error::io(&log_path, e));
    }
    save_checkpoint(&out.join("checkpoint.bckp"), &outcome.params)?;
    let match_path = out.join("match_log.jsonl");
    let file = File::create(&match_path).map_err(|e| Error::io(&match_path, e))?;
    write_match_log(BufWriter::new(file), &outcome.match_log).map_err(|e| Error::io(&match_path, e))?;
    Ok(outcome.log)
}

// -------------------------------------------------------------------- eval

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalRunConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub split: Split,
    pub baselines: Vec<BaselineMode>,
    /// Score the ground-truth maps themselves instead of a model.
    pub gt_as_pred: bool,
    /// Kernel width for the ground-truth maps; defaults to the dataset's.
    pub sigma: Option<f64>,
    #[serde(flatten)]
    pub eval: EvalOptions,
}

impl Default for EvalRunConfig {
    fn default() -> Self {
        Self {
            data: None,
            out: None,
            checkpoint: None,
            split: Split::Test,
            baselines: Vec::new(),
            gt_as_pred: false,
            sigma: None,
            eval: EvalOptions::default(),
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_parser = parse_split)]
    pub split: Option<Split>,
    /// Add a constant-prediction row (repeatable).
    #[arg(long = "baseline", value_parser = parse_baseline)]
    pub baselines: Vec<BaselineMode>,
    #[arg(long, value_parser = parse_combine)]
    pub combine: Option<SubclassCombine>,
    #[arg(long)]
    pub attach_threshold: Option<f64>,
    #[arg(long)]
    pub zero_threshold: Option<f64>,
    #[arg(long)]
    pub gt_as_pred: bool,
    #[arg(long)]
    pub sigma: Option<f64>,
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_baseline(s: &str) -> std::result::Result<BaselineMode, String> {
    match s {
        "mean" => Ok(BaselineMode::Mean),
        "median" => Ok(BaselineMode::Median),
        _ => Err(format!("expected mean or median, got {s:?}")),
    }
}

fn parse_combine(s: &str) -> std::result::Result<SubclassCombine, String> {
    match s {
        "none" => Ok(SubclassCombine::None),
        "sum" => Ok(SubclassCombine::Sum),
        "max" => Ok(SubclassCombine::Max),
        _ => Err(format!("expected none, sum or max, got {s:?}")),
    }
}

impl EvalArgs {
    pub fn resolve(&self) -> Result<EvalRunConfig> {
        let mut cfg: EvalRunConfig = read_config(self.config.as_deref())?;
        for (dst, src) in [(&mut cfg.data, &self.data), (&mut cfg.out, &self.out), (&mut cfg.checkpoint, &self.checkpoint)] {
            if src.is_some() {
                *dst = src.clone();
            }
        }
        override_fields!(self, cfg, [split]);
        if self.sigma.is_some() {
            cfg.sigma = self.sigma;
        }
        for b in &self.baselines {
            if !cfg.baselines.contains(b) {
                cfg.baselines.push(*b);
            }
        }
        cfg.gt_as_pred |= self.gt_as_pred;
        let e = &mut cfg.eval;
        override_fields!(self, e, [combine, attach_threshold, zero_threshold]);
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub rows: Vec<MetricRow>,
    /// Fraction of heads matched more often than the frequency threshold on
    /// this split; absent without a model.
    pub head_utilization: Option<f64>,
    pub utilization_threshold: f64,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalReport> {
    let cfg = args.resolve()?;
    let data = required(&cfg.data, "dataset directory (--data)")?;
    let out = required(&cfg.out, "output directory (--out)")?;
    let (samples, sigma) = load_samples(&data.join(cfg.split.name()), cfg.sigma)?;
    let split_name = cfg.split.name().to_string();
    let mut rows = Vec::new();
    let mut utilization = None;

    let reference: Vec<CountPair> = samples
        .iter()
        .flat_map(|s| {
            s.gts
                .iter()
                .enumerate()
                .map(|(j, g)| CountPair::new(integrate(g), integrate(g), s.image_id.clone(), j))
        })
        .collect();

    let mut match_log = Vec::new();
    if cfg.gt_as_pred {
        rows.push(MetricRow {
            method: "ground-truth".into(),
            split: split_name.clone(),
            report: compute_metrics(&reference)?,
        });
    }
    if let Some(ckpt) = &cfg.checkpoint {
        let params = load_checkpoint(ckpt)?;
        let outcome = evaluate(&params, &samples, &cfg.eval)?;
        let assignments: Vec<_> = outcome.match_log.iter().map(|e| e.assignment()).collect();
        utilization = Some(head_utilization(&assignments, params.m_hat(), DEFAULT_UTILIZATION_THRESHOLD)?);
        let method = match cfg.eval.combine {
            SubclassCombine::None => "model".to_string(),
            SubclassCombine::Sum => "model+sum".to_string(),
            SubclassCombine::Max => "model+max".to_string(),
        };
        rows.push(MetricRow {
            method,
            split: split_name.clone(),
            report: compute_metrics(&outcome.pairs)?,
        });
        match_log = outcome.match_log;
    } else if !cfg.gt_as_pred && cfg.baselines.is_empty() {
        return Err(Error::Config("nothing to evaluate: give --checkpoint, --baseline or --gt-as-pred".into()));
    }
    if !cfg.baselines.is_empty() {
        let (train, _) = load_samples(&data.join(Split::Train.name()), Some(sigma))?;
        let train_counts: Vec<f64> = train.iter().flat_map(|s| s.gts.iter().map(integrate)).collect();
        for &mode in &cfg.baselines {
            let value = baseline_predict(&train_counts, mode)?;
            rows.push(MetricRow {
                method: mode.to_string(),
                split: split_name.clone(),
                report: compute_metrics(&constant_predictions(&reference, value))?,
            });
        }
    }

    create_dir(&out)?;
    write_json(&out.join("config.json"), &cfg)?;
    let report = EvalReport {
        split: cfg.split,
        rows,
        head_utilization: utilization,
        utilization_threshold: DEFAULT_UTILIZATION_THRESHOLD,
    };
    write_json(&out.join("metrics.json"), &report)?;
    let csv_path = out.join("metrics.csv");
    let file = File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    write_csv(BufWriter::new(file), &report.rows).map_err(|e| Error::io(&csv_path, e))?;
    if !match_log.is_empty() {
        let path = out.join("match_log.jsonl");
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_match_log(BufWriter::new(file), &match_log).map_err(|e| Error::io(&path, e))?;
    }
    for r in &report.rows {
        print_row(r);
    }
    if let Some(u) = report.head_utilization {
        println!("head utilization: {:.0}%", u * 100.0);
    }
    Ok(report)
}

fn print_row(r: &MetricRow) {
    let MetricReport { mae, rmse, nae, sre, pair_count } = r.report;
    println!(
        "{:<14} {:<5} MAE {mae:.3}  RMSE {rmse:.3}  NAE {nae:.3}  SRE {sre:.3}  ({pair_count} pairs)",
        r.method, r.split
    );
}

// ------------------------------------------------------------------- count

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct CountRunConfig {
    pub checkpoint: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub no_discovery: bool,
    #[serde(flatten)]
    pub postprocess: PostprocessConfig,
    #[serde(flatten)]
    pub discovery: DiscoveryConfig,
}

#[derive(Debug, Args)]
pub struct CountArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Skip seed points and crops.
    #[arg(long)]
    pub no_discovery: bool,
    #[arg(long)]
    pub similarity_threshold: Option<f64>,
    #[arg(long)]
    pub zero_threshold: Option<f64>,
    #[arg(long)]
    pub n_per_head: Option<usize>,
    #[arg(long)]
    pub peak_fraction: Option<f64>,
    #[arg(long)]
    pub margin: Option<usize>,
}

impl CountArgs {
    pub fn resolve(&self) -> Result<CountRunConfig> {
        let mut cfg: CountRunConfig = read_config(self.config.as_deref())?;
        for (dst, src) in [(&mut cfg.checkpoint, &self.checkpoint), (&mut cfg.image, &self.image), (&mut cfg.out, &self.out)] {
            if src.is_some() {
                *dst = src.clone();
            }
        }
        cfg.no_discovery |= self.no_discovery;
        let p = &mut cfg.postprocess;
        override_fields!(self, p, [similarity_threshold, zero_threshold]);
        let d = &mut cfg.discovery;
        override_fields!(self, d, [n_per_head, peak_fraction, margin]);
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountEntry {
    pub head_index: usize,
    pub count: f64,
    pub density_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountReport {
    pub image: String,
    /// Descending by count.
    pub counts: Vec<CountEntry>,
}

pub fn cmd_count(args: &CountArgs) -> Result<(CountReport, Vec<ExampleSet>)> {
    let cfg = args.resolve()?;
    let ckpt = required(&cfg.checkpoint, "checkpoint (--checkpoint)")?;
    let image_path = required(&cfg.image, "image (--image)")?;
    let out = required(&cfg.out, "output directory (--out)")?;
    let params = load_checkpoint(&ckpt)?;
    let image = Raster::load_png(&image_path)?;
    let (raw, cache) = params.forward_cached(&image)?;
    let preds: PredictionSet =
        deployment_postprocess(&raw, cfg.postprocess.similarity_threshold, cfg.postprocess.zero_threshold)?;

    create_dir(&out)?;
    write_json(&out.join("config.json"), &cfg)?;
    let image_id = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    let mut counts = Vec::with_capacity(preds.len());
    for ((map, &count), &head) in preds.maps().iter().zip(preds.counts()).zip(preds.heads()) {
        let name = format!("density_{head}.dmap");
        let side = DmapSidecar {
            image_id: image_id.clone(),
            class_id: None,
            head_index: Some(head),
        };
        write_dmap(&out.join(&name), map, Some(&side))?;
        counts.push(CountEntry {
            head_index: head,
            count,
            density_file: name,
        });
    }
    let report = CountReport {
        image: image_path.display().to_string(),
        counts,
    };
    write_json(&out.join("counts.json"), &report)?;
    for c in &report.counts {
        println!("head {}: {:.2}", c.head_index, c.count);
    }
    if report.counts.is_empty() {
        println!("no objects counted");
    }

    let mut examples = Vec::new();
    if !cfg.no_discovery {
        examples = discover_examples(&image, &preds, &cache.features, &cfg.discovery)?;
        for set in &examples {
            for (idx, crop) in set.crops.iter().enumerate() {
                crop.save_png(&out.join(format!("crop_{}_{idx}.png", set.head_index)))?;
            }
        }
        write_json(&out.join("examples.json"), &examples)?;
    }
    Ok((report, examples))
}

// -------------------------------------------------------------------- main

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        // Ignore a pool that was already built, e.g. by an embedding program.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let result = configure_threads().and_then(|_| match &cli.command {
        Command::Generate(a) => cmd_generate(a).map(|_| ()),
        Command::Train(a) => cmd_train(a).map(|_| ()),
        Command::Eval(a) => cmd_eval(a).map(|_| ()),
        Command::Count(a) => cmd_count(a).map(|_| ()),
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}
