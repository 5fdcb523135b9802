//! Command-line front end: `generate`, `train`, `eval`, `infer`, `plot`.
//!
//! Every flag can also be given as an environment variable `STED_<FLAG>`.
//! `--config FILE` (JSON, or TOML by extension) is overlaid on the flags,
//! so values in the file win.
//!
//! Exit codes: 0 success, 2 usage error, 3 data-format error, 4 numerical
//! failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::data::{self, DatasetSpec};
use crate::error::{Result, StedError};
use crate::events::EventSimConfig;
use crate::geometry::{read_raw_f32, write_raw_f32, DisparityMap};
use crate::plot;
use crate::tensor::Tensor;
use crate::train::{self, evaluate, load_checkpoint, prepare, EvalReport, GtPassthrough, JsonLog, ModelPredictor, Predictor, TrainConfig, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FORMAT: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "sted", version, about = "Stereo event-guided motion deblurring")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic dataset.
    Generate(GenerateArgs),
    /// Train from a dataset directory.
    Train(TrainArgs),
    /// Score a checkpoint (or the ground truth itself) on a dataset.
    Eval(EvalArgs),
    /// Run one sample and write its frames and disparity.
    Infer(InferArgs),
    /// Render PNG panels from `infer` output or an `eval` report.
    Plot(PlotArgs),
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct GenerateArgs {
    #[arg(long, env = "STED_OUT")]
    pub out: PathBuf,
    #[arg(long, env = "STED_SAMPLES", default_value_t = 8)]
    pub samples: usize,
    /// `HxW`, both multiples of 8.
    #[arg(long, env = "STED_SIZE", default_value = "64x64")]
    pub size: String,
    #[arg(long, env = "STED_LAYERS", default_value_t = 2)]
    pub layers: usize,
    #[arg(long, env = "STED_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "STED_THRESHOLD", default_value_t = 0.2)]
    pub threshold: f64,
    /// Ground-truth frames per sample.
    #[arg(long, env = "STED_FRAMES", default_value_t = 7)]
    pub frames: usize,
    #[arg(long, env = "STED_CHANNELS", default_value_t = 3)]
    pub channels: usize,
    #[arg(long, env = "STED_MAX_DISPARITY", default_value_t = 16.0)]
    pub max_disparity: f64,
    #[arg(long, env = "STED_CONFIG")]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[arg(long, env = "STED_DATA")]
    pub data: PathBuf,
    /// Checkpoint directory; also receives `train_log.jsonl`.
    #[arg(long, env = "STED_OUT")]
    pub out: PathBuf,
    #[arg(long, env = "STED_EPOCHS")]
    pub epochs: Option<usize>,
    /// Stop after this many updates instead of the epoch budget.
    #[arg(long, env = "STED_STEPS")]
    pub steps: Option<u64>,
    #[arg(long, env = "STED_LR")]
    pub lr: Option<f64>,
    #[arg(long, env = "STED_BATCH")]
    pub batch: Option<usize>,
    #[arg(long, env = "STED_CROP")]
    pub crop: Option<usize>,
    #[arg(long, env = "STED_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "STED_NO_DISPNET")]
    pub no_dispnet: bool,
    #[arg(long, env = "STED_NO_DUAL_PATH")]
    pub no_dual_path: bool,
    #[arg(long, env = "STED_NO_BDE")]
    pub no_bde: bool,
    #[arg(long, env = "STED_NO_AFF")]
    pub no_aff: bool,
    #[arg(long, env = "STED_CONFIG")]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    #[arg(long, env = "STED_DATA")]
    pub data: PathBuf,
    #[arg(long, env = "STED_CHECKPOINT", required_unless_present = "passthrough")]
    pub checkpoint: Option<PathBuf>,
    /// Score the ground truth against itself (harness check).
    #[arg(long)]
    pub passthrough: bool,
    /// Report file (JSON).
    #[arg(long, env = "STED_OUT")]
    pub out: PathBuf,
    #[arg(long, env = "STED_CONFIG")]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct InferArgs {
    #[arg(long, env = "STED_DATA")]
    pub data: PathBuf,
    /// Sample id (defaults to the first in the manifest).
    #[arg(long, env = "STED_SAMPLE")]
    pub sample: Option<String>,
    #[arg(long, env = "STED_CHECKPOINT")]
    pub checkpoint: PathBuf,
    #[arg(long, env = "STED_OUT")]
    pub out: PathBuf,
    #[arg(long, env = "STED_CONFIG")]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct PlotArgs {
    /// `infer` output directory or `eval` report file.
    #[arg(long, env = "STED_INPUT")]
    pub input: PathBuf,
    #[arg(long, env = "STED_OUT")]
    pub out: PathBuf,
    #[arg(long, env = "STED_CONFIG")]
    pub config: Option<PathBuf>,
}

/// Diagnostics written by `infer`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferMeta {
    pub sample: String,
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub stage_magnitudes: Vec<(f64, f64)>,
}

/// Maps an error to its process exit code.
pub fn exit_code(e: &StedError) -> i32 {
    match e {
        StedError::Shape(_) | StedError::InvalidArgument(_) => EXIT_USAGE,
        StedError::Numerical(_) => EXIT_NUMERICAL,
        StedError::Format(_) | StedError::MissingParam(_) | StedError::Io(_) | StedError::Json(_) | StedError::Image(_) => EXIT_FORMAT,
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code. Errors are reported on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate(a) => cmd_generate(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Infer(a) => cmd_infer(&a),
        Command::Plot(a) => cmd_plot(&a),
    }
}

fn read_config_value(path: &Path) -> Result<serde_json::Value> {
    let text = fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e == "toml") {
        let v: toml::Value = toml::from_str(&text).map_err(|e| StedError::format(format!("{}: {e}", path.display())))?;
        serde_json::to_value(v).map_err(StedError::from)
    } else {
        serde_json::from_str(&text).map_err(|e| StedError::format(format!("{}: {e}", path.display())))
    }
}

fn merge(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}

/// `base` with the keys of the config file laid over it.
pub fn overlay<T: Serialize + DeserializeOwned>(base: &T, config: Option<&Path>) -> Result<T> {
    let Some(path) = config else {
        return serde_json::from_value(serde_json::to_value(base)?).map_err(StedError::from);
    };
    let mut v = serde_json::to_value(base)?;
    merge(&mut v, read_config_value(path)?);
    serde_json::from_value(v).map_err(|e| StedError::invalid(format!("{}: {e}", path.display())))
}

/// Parses `HxW`, both positive multiples of 8.
pub fn parse_size(s: &str) -> Result<(usize, usize)> {
    let bad = || StedError::invalid(format!("size `{s}` must be HxW with both multiples of 8"));
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
        return Err(bad());
    }
    Ok((h, w))
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let a = overlay(a, a.config.as_deref())?;
    let (height, width) = parse_size(&a.size)?;
    let spec = DatasetSpec {
        samples: a.samples,
        height,
        width,
        channels: a.channels,
        layers: a.layers,
        frames: a.frames,
        seed: a.seed,
        max_disparity: a.max_disparity,
        sim: EventSimConfig {
            threshold_c: a.threshold,
            ..Default::default()
        },
    };
    let samples = data::generate(&spec)?;
    data::write_dataset(&samples, &a.out)?;
    println!("wrote {} samples to {}", samples.len(), a.out.display());
    Ok(())
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut c = TrainConfig::default();
    if let Some(v) = a.epochs {
        c.max_epochs = v;
    }
    if let Some(v) = a.lr {
        c.lr0 = v;
    }
    if let Some(v) = a.batch {
        c.batch = v;
    }
    if let Some(v) = a.crop {
        c.crop = v;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    c.flags.use_dispnet = !a.no_dispnet;
    c.flags.use_dual_path = !a.no_dual_path;
    c.flags.use_bde = !a.no_bde;
    c.flags.use_aff = !a.no_aff;
    overlay(&c, a.config.as_deref())
}

/// Adapts image channels, bins and frame count to the dataset.
fn fit_to_data(cfg: &mut TrainConfig, samples: &[data::Sample]) -> Result<()> {
    let s = samples.first().ok_or_else(|| StedError::invalid("dataset is empty"))?;
    cfg.dblrnet.out_channels = s.meta.channels;
    cfg.dispnet.image_channels = s.meta.channels;
    cfg.dblrnet.frames = s.meta.frames;
    cfg.dispnet.bins = cfg.dblrnet.bins;
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut cfg = train_config(a)?;
    let samples = data::read_dataset(&a.data)?;
    fit_to_data(&mut cfg, &samples)?;
    let items = prepare(&samples, cfg.dblrnet.bins)?;
    let mut trainer = Trainer::new(cfg)?;
    fs::create_dir_all(&a.out)?;
    let mut log = JsonLog::new(std::io::BufWriter::new(fs::File::create(a.out.join("train_log.jsonl"))?));
    let mut io_err = None;
    let mut sink = |r: &train::StepReport| {
        if let Err(e) = log.write(r) {
            io_err.get_or_insert(e);
        }
    };
    match a.steps {
        Some(n) => trainer.train_steps(&items, n, &mut sink)?,
        None => trainer.fit(&items, &mut sink)?,
    }
    if let Some(e) = io_err {
        return Err(e);
    }
    trainer.save(&a.out)?;
    println!("trained {} steps; checkpoint in {}", trainer.steps(), a.out.display());
    Ok(())
}

/// Report file written by `eval`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalFile {
    pub metrics: Vec<crate::metrics::MetricReport>,
    pub report: EvalReport,
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let samples = data::read_dataset(&a.data)?;
    let report = if a.passthrough {
        evaluate(&samples, &GtPassthrough, "passthrough")?
    } else {
        let dir = a.checkpoint.as_ref().ok_or_else(|| StedError::invalid("--checkpoint is required"))?;
        let (cfg, params) = load_checkpoint(dir)?;
        let cfg = overlay(&cfg, a.config.as_deref())?;
        let trainer = Trainer::with_params(cfg, params)?;
        let pred = ModelPredictor {
            model: &trainer.model,
            params: &trainer.params,
        };
        evaluate(&samples, &pred, &trainer.cfg.hash()?)?
    };
    let file = EvalFile {
        metrics: report.metric_reports(),
        report,
    };
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(&a.out, serde_json::to_vec_pretty(&file)?)?;
    for m in &file.metrics {
        println!("{:<12} {:.6}", m.metric, m.value);
    }
    Ok(())
}

pub fn cmd_infer(a: &InferArgs) -> Result<()> {
    let (cfg, params) = load_checkpoint(&a.checkpoint)?;
    let cfg = overlay(&cfg, a.config.as_deref())?;
    let manifest = data::read_manifest(&a.data)?;
    let id = match &a.sample {
        Some(s) => s.clone(),
        None => manifest.ids.first().cloned().ok_or_else(|| StedError::invalid("dataset is empty"))?,
    };
    if !manifest.ids.contains(&id) {
        return Err(StedError::invalid(format!("sample `{id}` not in dataset")));
    }
    let sample = data::read_sample(&a.data, &id)?;
    let trainer = Trainer::with_params(cfg, params)?;
    let pred = ModelPredictor {
        model: &trainer.model,
        params: &trainer.params,
    }
    .predict(&sample)?;
    fs::create_dir_all(&a.out)?;
    for (m, f) in pred.frames.iter().enumerate() {
        write_raw_f32(&a.out.join(format!("frame_{m}.raw")), f.data())?;
    }
    write_raw_f32(&a.out.join("blurry.raw"), sample.blurry.tensor().data())?;
    DisparityMap::from_tensor(pred.disparity.clone())?.write(&a.out.join("disparity.raw"))?;
    let (h, w) = sample.dims();
    let meta = InferMeta {
        sample: id,
        frames: pred.frames.len(),
        channels: sample.blurry.channels(),
        height: h,
        width: w,
        stage_magnitudes: pred.stage_magnitudes,
    };
    fs::write(a.out.join("infer.json"), serde_json::to_vec_pretty(&meta)?)?;
    println!("wrote {} frames to {}", meta.frames, a.out.display());
    Ok(())
}

/// Figures written by `plot` and the number of BDE curve points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotSummary {
    pub files: Vec<PathBuf>,
    pub curve_points: usize,
}

pub fn plot_files(input: &Path, out: &Path) -> Result<PlotSummary> {
    fs::create_dir_all(out)?;
    let mut files = Vec::new();
    let magnitudes = if input.is_dir() {
        let meta: InferMeta = serde_json::from_slice(&fs::read(input.join("infer.json"))?)
            .map_err(|e| StedError::format(format!("infer.json: {e}")))?;
        let (c, h, w) = (meta.channels, meta.height, meta.width);
        let load = |name: String| -> Result<Tensor<f32>> { Tensor::from_vec([1, c, h, w], read_raw_f32(&input.join(name), c * h * w)?) };
        let mut row = vec![load("blurry.raw".into())?];
        for m in 0..meta.frames {
            row.push(load(format!("frame_{m}.raw"))?);
        }
        let grid = plot::image_grid(&[row])?;
        files.push(out.join("frames.png"));
        plot::save_png(&grid, files.last().expect("pushed"))?;
        let disp = DisparityMap::read(&input.join("disparity.raw"))?;
        files.push(out.join("disparity.png"));
        plot::save_png(&plot::disparity_image(disp.tensor())?, files.last().expect("pushed"))?;
        meta.stage_magnitudes
    } else {
        let f: EvalFile = serde_json::from_slice(&fs::read(input)?).map_err(|e| StedError::format(format!("{}: {e}", input.display())))?;
        f.report.mean.stage_magnitudes
    };
    let mut curve_points = 0;
    if !magnitudes.is_empty() {
        let (img, n) = plot::stage_curve(&magnitudes)?;
        files.push(out.join("bde_magnitude.png"));
        plot::save_png(&img, files.last().expect("pushed"))?;
        curve_points = n;
    }
    Ok(PlotSummary { files, curve_points })
}

pub fn cmd_plot(a: &PlotArgs) -> Result<()> {
    let s = plot_files(&a.input, &a.out)?;
    for f in &s.files {
        println!("wrote {}", f.display());
    }
    println!("bde curve points: {}", s.curve_points);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_parsing() {
        assert_eq!(parse_size("64x128").unwrap(), (64, 128));
        assert!(parse_size("60x64").is_err());
        assert!(parse_size("64").is_err());
        assert!(parse_size("0x8").is_err());
    }

    #[test]
    fn overlay_replaces_nested_keys() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        fs::write(&p, "batch = 2\n[dblrnet]\nstages = 3\n").unwrap();
        let c = overlay(&TrainConfig::default(), Some(&p)).unwrap();
        assert_eq!((c.batch, c.dblrnet.stages, c.dblrnet.channels), (2, 3, 48));
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["sted", "bogus"]), EXIT_USAGE);
        assert_eq!(exit_code(&StedError::Numerical("x".into())), EXIT_NUMERICAL);
    }
}
