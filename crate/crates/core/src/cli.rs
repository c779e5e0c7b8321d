//! Command-line front end: run configuration and one function per verb.
//!
//! Configuration files are flat `section.key=value` text. Sections:
//! `preprocess`, `model`, `mask`, `schedule` (pretraining), `finetune`
//! (fine-tuning schedule), `task`, `synth`, `paths`, plus the top-level
//! `seed`. `model.preset` (`base`, `small`, `tiny`) is applied before any
//! other model key.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::eeg_io::{generate_synthetic, read_container, read_sample_set, write_sample_set, SampleSet, SyntheticSpec};
use crate::error::{ensure, Error, Result};
use crate::finetune::{self, EvalReport, FinetuneOptions, Splits, TaskSpec};
use crate::kv::{parse_value, KvDoc};
use crate::model::params::{encoder_specs, HEAD_PREFIX};
use crate::model::{count_flops, count_params, AttentionVariant, Checkpoint, Encoder, ModelConfig, ParameterSet};
use crate::patching::{MaskSpec, MaskToken};
use crate::preprocess::{run_pipeline, PreprocessConfig};
use crate::training::gradcheck::{gradcheck, GradcheckConfig};
use crate::training::{pretrain_continuing, PretrainConfig, ScheduleConfig, TrainLog, TrainState};
use crate::util::{derive_seed, stream};
use crate::verify::run_oracles;

pub const CONFIG_ENV: &str = "CROSSBRAIN_CONFIG";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub splits: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

/// Every setting a command may read, validated as a whole.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preprocess: PreprocessConfig,
    pub model: ModelConfig,
    /// Some `model.*` key was given explicitly.
    pub model_explicit: bool,
    pub mask: MaskSpec,
    pub schedule: ScheduleConfig,
    pub finetune: ScheduleConfig,
    pub task: TaskSpec,
    pub synth: SyntheticSpec,
    pub paths: Paths,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preprocess: PreprocessConfig::default(),
            model: ModelConfig::base(),
            model_explicit: false,
            mask: MaskSpec::default(),
            schedule: ScheduleConfig::pretrain(),
            finetune: ScheduleConfig::finetune(),
            task: TaskSpec::default(),
            synth: SyntheticSpec::default(),
            paths: Paths::default(),
            seed: 0,
        }
    }
}

fn preset(name: &str) -> Result<ModelConfig> {
    match name.trim() {
        "base" => Ok(ModelConfig::base()),
        "small" => Ok(ModelConfig::small()),
        "tiny" => Ok(ModelConfig::tiny()),
        other => Err(Error::Config(format!("unknown model preset `{other}` (base, small, tiny)"))),
    }
}

impl RunConfig {
    /// Apply one `section.key=value` setting.
    pub fn apply(&mut self, key: &str, raw: &str) -> Result<()> {
        if key == "seed" {
            self.seed = parse_value(key, raw)?;
            return Ok(());
        }
        let (section, field) = key
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
        match section {
            "preprocess" => self.preprocess.apply(field, raw),
            "model" => {
                self.model_explicit = true;
                if field == "preset" {
                    self.model = preset(raw)?;
                    Ok(())
                } else {
                    self.model.apply(field, raw)
                }
            }
            "mask" => {
                match field {
                    "ratio" => self.mask.ratio = parse_value(key, raw)?,
                    "token" => self.mask.token = raw.trim().parse()?,
                    _ => return Err(Error::Config(format!("unknown key `{key}`"))),
                }
                Ok(())
            }
            "schedule" => self.schedule.apply(field, raw),
            "finetune" => self.finetune.apply(field, raw),
            "task" => self.task.apply(field, raw),
            "synth" => self.synth.apply(field, raw),
            "paths" => {
                let p = Some(PathBuf::from(raw.trim()));
                match field {
                    "data" => self.paths.data = p,
                    "checkpoint" => self.paths.checkpoint = p,
                    "splits" => self.paths.splits = p,
                    "out_dir" => self.paths.out_dir = p,
                    _ => return Err(Error::Config(format!("unknown key `{key}`"))),
                }
                Ok(())
            }
            _ => Err(Error::Config(format!("unknown config section `{section}` in `{key}`"))),
        }
    }

    /// Defaults overlaid with `doc`; the model preset goes first.
    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(p) = doc.get("model.preset") {
            cfg.apply("model.preset", p)?;
        }
        for (k, v) in doc.iter().filter(|(k, _)| *k != "model.preset") {
            cfg.apply(k, v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv(&KvDoc::read(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.model.validate()?;
        self.mask.validate()?;
        ensure!(self.mask.ratio > 0.0, Config, "mask.ratio must be > 0 for pretraining");
        ensure!(
            self.model.learnable_mask_token == (self.mask.token == MaskToken::Learnable),
            Config,
            "mask.token={} conflicts with model.learnable_mask_token={}",
            self.mask.token,
            self.model.learnable_mask_token
        );
        self.schedule.validate()?;
        self.finetune.validate()?;
        self.task.validate()?;
        self.synth.validate()
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.set("seed", self.seed);
        doc.extend_prefixed("preprocess", &self.preprocess.to_kv());
        doc.extend_prefixed("model", &self.model.to_kv());
        doc.set("mask.ratio", self.mask.ratio);
        doc.set("mask.token", self.mask.token);
        doc.extend_prefixed("schedule", &self.schedule.to_kv());
        doc.extend_prefixed("finetune", &self.finetune.to_kv());
        doc.extend_prefixed("task", &self.task.to_kv());
        doc.extend_prefixed("synth", &self.synth.to_kv());
        for (k, v) in [
            ("data", &self.paths.data),
            ("checkpoint", &self.paths.checkpoint),
            ("splits", &self.paths.splits),
            ("out_dir", &self.paths.out_dir),
        ] {
            if let Some(p) = v {
                doc.set(format!("paths.{k}"), p.display());
            }
        }
        doc
    }

    pub fn out_dir(&self) -> PathBuf {
        self.paths.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            sched: self.schedule.clone(),
            mask_ratio: self.mask.ratio,
            seed: self.seed,
        }
    }
}

// ---------------------------------------------------------------------------
// Argument parsing

#[derive(Debug, Parser)]
#[command(name = "crossbrain", version, about = "Criss-cross EEG transformer: preprocessing, pretraining, fine-tuning, verification")]
pub struct Cli {
    /// Flat key=value configuration file.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Master seed (overrides `seed` in the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides `paths.out_dir`).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads for sample-parallel work.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Extra `section.key=value` setting, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean raw recording containers into one sample set.
    Preprocess {
        /// A recording container, or a directory of them.
        input: PathBuf,
        /// Sample-set container to write.
        output: PathBuf,
    },
    /// Masked-reconstruction pretraining.
    Pretrain {
        /// Sample set (default: `paths.data`, else synthetic data from `synth.*`).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint directory to resume from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Fine-tune a task head (and the encoder unless frozen).
    Finetune {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Directory with train.txt, val.txt, test.txt.
        #[arg(long)]
        splits: Option<PathBuf>,
        /// Train the head only on a fixed encoder.
        #[arg(long)]
        frozen: bool,
        /// Fraction of the training split to use.
        #[arg(long, default_value_t = 1.0)]
        data_fraction: f64,
    },
    /// Evaluate a checkpoint on the test split without training.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        splits: Option<PathBuf>,
    },
    /// Per-component FLOPs and parameter counts of every attention variant.
    Flops {
        #[arg(long, default_value_t = 16)]
        channels: usize,
        #[arg(long, default_value_t = 10.0)]
        seconds: f64,
    },
    /// Finite-difference gradient check of the tiny model.
    Gradcheck {
        #[arg(long, default_value_t = 200)]
        coords: usize,
        #[arg(long, hide = true)]
        corrupt: Option<f64>,
    },
    /// Brute-force oracle suite.
    Oracle,
    /// Write a synthetic labelled sample set from `synth.*`.
    Synth {
        output: PathBuf,
        /// Also write a shuffled 60/20/20 train/val/test split here.
        #[arg(long)]
        splits: Option<PathBuf>,
    },
}

/// Configuration from the file, overrides and global flags, validated.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut extra = KvDoc::new();
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{o}`")))?;
        extra.set(k.trim(), v.trim());
    }
    if let Some(p) = extra.get("model.preset") {
        cfg.apply("model.preset", p)?;
    }
    for (k, v) in extra.iter().filter(|(k, _)| *k != "model.preset") {
        cfg.apply(k, v)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out_dir {
        cfg.paths.out_dir = Some(o.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parse-free entry point; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    if let Some(n) = cli.threads {
        ensure!(n >= 1, Config, "--threads must be >= 1");
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let cfg = resolve_config(&cli)?;
    println!("seed={}", cfg.seed);
    match cli.command {
        Command::Preprocess { input, output } => {
            print!("{}", cmd_preprocess(&cfg, &input, &output)?);
            Ok(0)
        }
        Command::Pretrain { data, resume } => {
            let s = cmd_pretrain(&cfg, data.as_deref(), resume.as_deref())?;
            print!("{s}");
            Ok(0)
        }
        Command::Finetune {
            checkpoint,
            data,
            splits,
            frozen,
            data_fraction,
        } => {
            let args = FinetuneArgs {
                checkpoint,
                data,
                splits,
                frozen,
                data_fraction,
            };
            println!("{}", cmd_finetune(&cfg, &args)?);
            Ok(0)
        }
        Command::Evaluate { checkpoint, data, splits } => {
            let args = FinetuneArgs {
                checkpoint,
                data,
                splits,
                ..FinetuneArgs::default()
            };
            println!("{}", cmd_evaluate(&cfg, &args)?);
            Ok(0)
        }
        Command::Flops { channels, seconds } => {
            print!("{}", cmd_flops(&cfg, channels, seconds)?);
            Ok(0)
        }
        Command::Gradcheck { coords, corrupt } => {
            let (text, passed) = cmd_gradcheck(&cfg, coords, corrupt)?;
            println!("{text}");
            Ok(if passed { 0 } else { 3 })
        }
        Command::Oracle => {
            let (text, passed) = cmd_oracle(&cfg)?;
            println!("{text}");
            Ok(if passed { 0 } else { 3 })
        }
        Command::Synth { output, splits } => {
            print!("{}", cmd_synth(&cfg, &output, splits.as_deref())?);
            Ok(0)
        }
    }
}

// ---------------------------------------------------------------------------
// Commands

fn is_container(dir: &Path) -> bool {
    dir.join("manifest.txt").is_file()
}

/// Run the cleaning chain over one container or every container directly
/// under `input`; the kept samples of all recordings go to `output`.
pub fn cmd_preprocess(cfg: &RunConfig, input: &Path, output: &Path) -> Result<String> {
    let mut dirs = if is_container(input) {
        vec![input.to_path_buf()]
    } else {
        let entries = std::fs::read_dir(input).map_err(|e| Error::io(input, e))?;
        let mut dirs = Vec::new();
        for e in entries {
            let p = e.map_err(|e| Error::io(input, e))?.path();
            if is_container(&p) {
                dirs.push(p);
            }
        }
        dirs
    };
    dirs.sort();
    ensure!(!dirs.is_empty(), Invalid, "no recording containers under {}", input.display());
    let mut out = String::new();
    let mut samples = Vec::new();
    let (mut segments, mut rejected) = (0, 0);
    for dir in &dirs {
        let rec = read_container(dir)?;
        let (set, report) = run_pipeline(&rec, &cfg.preprocess)?;
        let name = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
        writeln!(out, "{name}: {report}").expect("string write");
        segments += report.segments;
        rejected += report.rejected;
        samples.extend(set.samples);
    }
    writeln!(out, "total: {segments} segments, {rejected} rejected").expect("string write");
    if samples.is_empty() {
        writeln!(out, "no samples kept; nothing written").expect("string write");
    } else {
        let set = SampleSet::new(samples, None, cfg.preprocess.target_rate)?;
        write_sample_set(&set, output)?;
        writeln!(out, "wrote {} samples to {}", set.len(), output.display()).expect("string write");
    }
    Ok(out)
}

fn load_data(cfg: &RunConfig, data: Option<&Path>) -> Result<SampleSet> {
    match data.or(cfg.paths.data.as_deref()) {
        Some(p) => read_sample_set(p),
        None => generate_synthetic(&cfg.synth),
    }
}

/// Pretrain (or resume) and write checkpoints, `train_log.csv` and
/// `loss_curve.csv` (step, loss, smoothed loss) under the output directory.
pub fn cmd_pretrain(cfg: &RunConfig, data: Option<&Path>, resume: Option<&Path>) -> Result<String> {
    let set = load_data(cfg, data)?;
    let out = cfg.out_dir();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    cfg.to_kv().write(&out.join("config.txt"))?;
    let pcfg = cfg.pretrain_config();
    let (model, state, prior) = match resume {
        Some(dir) => {
            let ck = Checkpoint::load(dir)?;
            ensure!(
                !cfg.model_explicit || encoder_specs(&cfg.model) == encoder_specs(&ck.config),
                Shape,
                "checkpoint model does not match the configured model"
            );
            let state = TrainState::from_checkpoint(&ck, cfg.schedule.weight_decay);
            let log_path = out.join("train_log.csv");
            let prior = if log_path.is_file() {
                TrainLog::read(&log_path)?
            } else {
                TrainLog::default()
            };
            (ck.config, state, prior)
        }
        None => {
            let state = TrainState::fresh(&cfg.model, cfg.seed, cfg.schedule.weight_decay)?;
            (cfg.model.clone(), state, TrainLog::default())
        }
    };
    let encoder = Encoder::new(model)?;
    let (state, log) = pretrain_continuing(&encoder, &set, &pcfg, state, prior, Some(&out))?;
    write_loss_curve(&log, &out.join("loss_curve.csv"))?;
    let mut s = String::new();
    writeln!(s, "steps={}", state.step).expect("string write");
    if let Some((first, last)) = log.smoothed_endpoints(SMOOTHING_WINDOW) {
        writeln!(s, "smoothed_loss_first={first:.6}\nsmoothed_loss_last={last:.6}").expect("string write");
    }
    writeln!(s, "checkpoint={}", out.join("checkpoints").join("final").display()).expect("string write");
    Ok(s)
}

/// Moving-average window of the plotted loss curve.
pub const SMOOTHING_WINDOW: usize = 20;

fn write_loss_curve(log: &TrainLog, path: &Path) -> Result<()> {
    let smooth = log.smoothed(SMOOTHING_WINDOW);
    let mut text = String::from("step,loss,smoothed\n");
    for (r, s) in log.records.iter().zip(smooth) {
        writeln!(text, "{},{:?},{:?}", r.step, r.loss, s).expect("string write");
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Default)]
pub struct FinetuneArgs {
    pub checkpoint: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub splits: Option<PathBuf>,
    pub frozen: bool,
    pub data_fraction: f64,
}

/// Model and parameters from the checkpoint, or a fresh encoder.
fn load_model(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<(ModelConfig, ParameterSet)> {
    match checkpoint.or(cfg.paths.checkpoint.as_deref()) {
        Some(dir) => {
            let ck = Checkpoint::load(dir)?;
            ensure!(
                !cfg.model_explicit || encoder_specs(&cfg.model) == encoder_specs(&ck.config),
                Shape,
                "checkpoint {} does not match the configured model",
                dir.display()
            );
            Ok((ck.config, ck.params))
        }
        None => {
            let params = ParameterSet::init(&cfg.model, derive_seed(cfg.seed, &[stream::INIT]))?;
            Ok((cfg.model.clone(), params))
        }
    }
}

fn load_splits(cfg: &RunConfig, splits: Option<&Path>, n: usize) -> Result<Splits> {
    let dir = splits
        .or(cfg.paths.splits.as_deref())
        .ok_or_else(|| Error::Config("no split files given (--splits or paths.splits)".into()))?;
    let s = Splits::read(dir)?;
    s.validate(n)?;
    Ok(s)
}

fn write_eval(out: &Path, report: &EvalReport, preds: &finetune::Predictions) -> Result<()> {
    report.write(&out.join("report.txt"))?;
    preds.write(&out.join("predictions.csv"))
}

/// Fine-tune and write the report, predictions, log and final checkpoint.
pub fn cmd_finetune(cfg: &RunConfig, args: &FinetuneArgs) -> Result<EvalReport> {
    let (model, params) = load_model(cfg, args.checkpoint.as_deref())?;
    let encoder_params = {
        let mut p = params;
        let heads: Vec<String> = p.names().filter(|n| n.starts_with(HEAD_PREFIX)).map(String::from).collect();
        for h in heads {
            p.remove(&h);
        }
        p
    };
    let data = load_data(cfg, args.data.as_deref())?;
    let out = cfg.out_dir();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    cfg.to_kv().write(&out.join("config.txt"))?;
    let splits = load_splits(cfg, args.splits.as_deref(), data.len())?;
    let encoder = Encoder::new(model.clone())?;
    let opts = FinetuneOptions {
        sched: cfg.finetune.clone(),
        seed: cfg.seed,
        frozen: args.frozen,
        data_fraction: args.data_fraction,
    };
    let result = finetune::finetune(&encoder, &encoder_params, &data, &splits, &cfg.task, &opts)?;
    write_eval(&out, &result.test, &result.test_predictions)?;
    result.log.write(&out.join("finetune_log.csv"))?;
    let mut ck = Checkpoint::new(model, result.params);
    ck.epoch = result.best_epoch + 1;
    ck.meta.extend_prefixed("task", &cfg.task.to_kv());
    ck.meta.set("train_samples", result.train_used.len());
    ck.meta.set("frozen", args.frozen);
    ck.save(&out.join("checkpoint"))?;
    Ok(result.test)
}

/// Evaluation only; a checkpoint without head tensors gets a fresh head.
pub fn cmd_evaluate(cfg: &RunConfig, args: &FinetuneArgs) -> Result<EvalReport> {
    let (model, mut params) = load_model(cfg, args.checkpoint.as_deref())?;
    let data = load_data(cfg, args.data.as_deref())?;
    let out = cfg.out_dir();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let splits = load_splits(cfg, args.splits.as_deref(), data.len())?;
    let encoder = Encoder::new(model)?;
    let grid = finetune::grid_of(&encoder, &data)?;
    let head_specs = cfg.task.head_specs(grid.0 * grid.1 * encoder.config().d);
    if params.contains("head.w1") {
        params.check_specs(&head_specs)?;
    } else {
        for (k, t) in finetune::init_head(&encoder, grid, &cfg.task, cfg.seed).iter() {
            params.insert(k, t.clone());
        }
    }
    let (report, preds) = finetune::evaluate(&encoder, &params, &data, &splits.test, &cfg.task)?;
    write_eval(&out, &report, &preds)?;
    Ok(report)
}

/// FLOP breakdown and parameter count of every attention variant.
pub fn cmd_flops(cfg: &RunConfig, channels: usize, seconds: f64) -> Result<String> {
    ensure!(channels >= 1, Config, "channels must be >= 1");
    let patch_s = cfg.model.patch_len as f64 / cfg.preprocess.target_rate;
    let seq_len = (seconds / patch_s).floor() as usize;
    ensure!(seq_len >= 1, Config, "{seconds} s is shorter than one patch");
    let mut s = String::new();
    writeln!(s, "grid: {channels} channels x {seq_len} patches").expect("string write");
    let mut totals = Vec::new();
    for variant in AttentionVariant::ALL {
        let model = ModelConfig {
            attention: variant,
            ..cfg.model.clone()
        };
        let report = count_flops(&model, channels, seq_len);
        writeln!(s, "[{variant}]").expect("string write");
        for (k, v) in &report.components {
            writeln!(s, "  {k:<16} {v:>14}").expect("string write");
        }
        writeln!(s, "  {:<16} {:>14}", "total", report.total()).expect("string write");
        writeln!(s, "  {:<16} {:>14}", "params", count_params(&model)).expect("string write");
        totals.push((variant, report.total()));
    }
    let full = totals.iter().find(|t| t.0 == AttentionVariant::Full).map_or(1, |t| t.1);
    for (v, t) in &totals {
        writeln!(s, "ratio {v}/full = {:.4}", *t as f64 / full as f64).expect("string write");
    }
    Ok(s)
}

pub fn cmd_gradcheck(cfg: &RunConfig, coords: usize, corrupt: Option<f64>) -> Result<(String, bool)> {
    let gc = GradcheckConfig {
        coords,
        seed: cfg.seed,
        corrupt,
        ..GradcheckConfig::default()
    };
    let report = gradcheck(&gc)?;
    let mut text = report.to_string();
    if !report.passed() {
        if let Some((fam, _, worst)) = report.by_family().into_iter().max_by(|a, b| a.2.total_cmp(&b.2)) {
            write!(text, "\nFAIL family={fam} worst={worst:.3e}").expect("string write");
        }
    }
    Ok((text, report.passed()))
}

pub fn cmd_oracle(cfg: &RunConfig) -> Result<(String, bool)> {
    let report = run_oracles(cfg.seed)?;
    Ok((report.to_string(), report.passed()))
}

/// Synthetic sample set and, optionally, a seeded split of it.
pub fn cmd_synth(cfg: &RunConfig, output: &Path, splits: Option<&Path>) -> Result<String> {
    let set = generate_synthetic(&cfg.synth)?;
    write_sample_set(&set, output)?;
    let mut s = format!("wrote {} samples to {}\n", set.len(), output.display());
    if let Some(dir) = splits {
        let sp = Splits::shuffled(set.len(), 0.6, 0.2, cfg.seed)?;
        sp.write(dir)?;
        writeln!(s, "wrote splits {}/{}/{} to {}", sp.train.len(), sp.val.len(), sp.test.len(), dir.display()).expect("string write");
    }
    Ok(s)
}
