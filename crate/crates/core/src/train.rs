//! Training loop, evaluation and ablation runs.
//!
//! Training is single-threaded and fully determined by the seed: parameter
//! initialisation, shuffling and crops each draw from their own seeded
//! stream. Training reads blurry images, events and sharp frames only;
//! ground-truth disparity is touched by evaluation alone.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::checkpoint::{self, config_hash};
use crate::data::Sample;
use crate::dblrnet::DblrNetConfig;
use crate::dispnet::DispNetConfig;
use crate::error::{Result, StedError};
use crate::events::voxelize;
use crate::losses::{self, LossBreakdown, LossWeights};
use crate::metrics::{self, MetricReport};
use crate::model::{stage_magnitudes, ModelConfig, StedModel};
use crate::nn::ParamStore;
use crate::optim::Adam;
use crate::perceptual::{PerceptualConfig, PerceptualExtractor};
use crate::tensor::Tensor;

/// Component switches for ablation runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AblationFlags {
    pub use_dispnet: bool,
    pub use_dual_path: bool,
    pub use_bde: bool,
    pub use_aff: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self {
            use_dispnet: true,
            use_dual_path: true,
            use_bde: true,
            use_aff: true,
        }
    }
}

impl AblationFlags {
    /// All 16 combinations, full model first.
    pub fn grid() -> Vec<Self> {
        (0..16u8)
            .map(|i| Self {
                use_dispnet: i & 8 == 0,
                use_dual_path: i & 4 == 0,
                use_bde: i & 2 == 0,
                use_aff: i & 1 == 0,
            })
            .collect()
    }

    pub fn label(&self) -> String {
        let mark = |b: bool| if b { '+' } else { '-' };
        format!(
            "DispNet{} DP{} BDE{} AFF{}",
            mark(self.use_dispnet),
            mark(self.use_dual_path),
            mark(self.use_bde),
            mark(self.use_aff)
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr0: f64,
    /// First epoch at the decayed rate.
    pub decay_start: usize,
    pub decay_every: usize,
    pub decay_factor: f64,
    pub max_epochs: usize,
    pub batch: usize,
    pub crop: usize,
    pub seed: u64,
    /// Override the sub-network switches of `dispnet`/`dblrnet`.
    pub flags: AblationFlags,
    pub weights: LossWeights,
    /// Apply TV to the per-stage group disparities too.
    pub tv_on_bde: bool,
    pub dispnet: DispNetConfig,
    pub dblrnet: DblrNetConfig,
    /// Extractor for the perceptual term; `None` uses the seeded desk
    /// extractor.
    pub perceptual: Option<PerceptualConfig>,
    pub grad_clip: Option<f64>,
    /// Where to write a diagnostic dump if the loss turns non-finite.
    pub dump_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-4,
            decay_start: 40,
            decay_every: 20,
            decay_factor: 0.5,
            max_epochs: 120,
            batch: 6,
            crop: 256,
            seed: 0,
            flags: AblationFlags::default(),
            weights: LossWeights::default(),
            tv_on_bde: false,
            dispnet: DispNetConfig::default(),
            dblrnet: DblrNetConfig::default(),
            perceptual: None,
            grad_clip: Some(10.0),
            dump_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.decay_factor > 0.0) || self.decay_every == 0 {
            return Err(StedError::invalid("learning rate, decay factor and decay period must be positive"));
        }
        if self.max_epochs == 0 || self.batch == 0 || self.crop == 0 || self.crop % 8 != 0 {
            return Err(StedError::invalid("epochs and batch must be positive, crop a positive multiple of 8"));
        }
        self.weights.validate()?;
        self.model_config().validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        let mut dblrnet = self.dblrnet.clone();
        dblrnet.use_dual_path = self.flags.use_dual_path;
        dblrnet.use_bde = self.flags.use_bde;
        dblrnet.use_aff = self.flags.use_aff;
        ModelConfig {
            dispnet: self.dispnet.clone(),
            dblrnet,
            use_dispnet: self.flags.use_dispnet,
        }
    }

    pub fn hash(&self) -> Result<String> {
        config_hash(self)
    }

    /// Reads JSON, or TOML when the extension is `.toml`.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| StedError::format(format!("{}: {e}", path.display())))
        } else {
            serde_json::from_str(&text).map_err(|e| StedError::format(format!("{}: {e}", path.display())))
        }
    }
}

/// Rate for `epoch`: `lr0` before `decay_start`, then multiplied by
/// `decay_factor` once per started `decay_every` epochs.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    if epoch < cfg.decay_start {
        return cfg.lr0;
    }
    let k = (epoch - cfg.decay_start) / cfg.decay_every + 1;
    cfg.lr0 * cfg.decay_factor.powi(k as i32)
}

/// Network-ready tensors of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainItem {
    pub id: String,
    /// `[1, C, H, W]`.
    pub blurry: Tensor<f32>,
    /// `[1, bins, H, W]`.
    pub voxel: Tensor<f32>,
    /// `[1, M*C, H, W]`.
    pub gt: Tensor<f32>,
}

impl TrainItem {
    /// Uses the blurry image, events and sharp frames only.
    pub fn from_sample(s: &Sample, bins: usize) -> Result<Self> {
        let voxel = voxelize(&s.events, bins)?;
        let frames: Vec<&Tensor<f32>> = s.gt_frames.iter().map(|f| f.tensor()).collect();
        Ok(Self {
            id: s.id.clone(),
            blurry: s.blurry.tensor().clone(),
            voxel: voxel.tensor().cast(),
            gt: Tensor::concat_channels(&frames)?,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.blurry.h(), self.blurry.w())
    }

    fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Self {
        let c = |t: &Tensor<f32>| Tensor::from_fn([1, t.c(), h, w], |_, ch, y, x| t.at(0, ch, y + y0, x + x0));
        Self {
            id: self.id.clone(),
            blurry: c(&self.blurry),
            voxel: c(&self.voxel),
            gt: c(&self.gt),
        }
    }
}

pub fn prepare(samples: &[Sample], bins: usize) -> Result<Vec<TrainItem>> {
    samples.iter().map(|s| TrainItem::from_sample(s, bins)).collect()
}

/// Logged result of one optimisation step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub dblr: f64,
    pub perc: f64,
    pub tv: f64,
    pub total: f64,
    pub grad_norm: f64,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: StedModel,
    pub params: ParamStore<f32>,
    adam: Adam<f32>,
    extractor: Option<PerceptualExtractor<f32>>,
    data_rng: ChaCha8Rng,
    step: u64,
    epoch: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = StedModel::new(cfg.model_config())?;
        let params = model.init(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
        Self::with_params(cfg, params)
    }

    /// Resumes from given parameters (fresh optimiser state).
    pub fn with_params(cfg: TrainConfig, params: ParamStore<f32>) -> Result<Self> {
        cfg.validate()?;
        let model = StedModel::new(cfg.model_config())?;
        let extractor = if cfg.weights.perc > 0.0 {
            let pc = cfg
                .perceptual
                .clone()
                .unwrap_or_else(|| PerceptualConfig::desk(cfg.dblrnet.out_channels, cfg.seed ^ 0x5eed));
            Some(PerceptualExtractor::new(pc)?)
        } else {
            None
        };
        let mut adam = Adam::new();
        adam.clip_norm = cfg.grad_clip;
        let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        data_rng.set_stream(7);
        Ok(Self {
            model,
            params,
            adam,
            extractor,
            data_rng,
            step: 0,
            epoch: 0,
            cfg,
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn lr(&self) -> f64 {
        lr_schedule(self.epoch, &self.cfg)
    }

    /// Loss and gradients for a batch without updating anything.
    pub fn loss(&self, batch: &[TrainItem]) -> Result<(LossBreakdown, std::collections::BTreeMap<String, Tensor<f32>>)> {
        if batch.is_empty() {
            return Err(StedError::invalid("empty batch"));
        }
        let (h, w) = batch[0].dims();
        if h % 8 != 0 || w % 8 != 0 {
            return Err(StedError::shape(format!("batch dims {h}x{w} not divisible by 8")));
        }
        let stack = |f: fn(&TrainItem) -> &Tensor<f32>| -> Result<Tensor<f32>> {
            let v: Vec<Tensor<f32>> = batch.iter().map(|i| f(i).clone()).collect();
            Tensor::stack_batch(&v)
        };
        let g = Graph::new();
        let blurry = g.input(stack(|i| &i.blurry)?);
        let voxel = g.input(stack(|i| &i.voxel)?);
        let gt = g.input(stack(|i| &i.gt)?);
        let out = self.model.forward(&g, &self.params, blurry, voxel)?;
        let extra: Vec<_> = if self.cfg.tv_on_bde {
            out.dblr
                .stages
                .iter()
                .filter_map(|s| s.disparities)
                .flat_map(|d| [d.b_to_e, d.e_to_b])
                .collect()
        } else {
            Vec::new()
        };
        let (loss, breakdown) = losses::total(
            &g,
            &self.cfg.weights,
            self.extractor.as_ref(),
            out.frames,
            gt,
            self.cfg.dblrnet.out_channels,
            out.disparity,
            &extra,
        )?;
        if !breakdown.total.is_finite() {
            return Err(self.numerical_failure(&breakdown));
        }
        let grads = g.backward(loss)?;
        Ok((breakdown, grads.named(&g)))
    }

    fn numerical_failure(&self, b: &LossBreakdown) -> StedError {
        let bad: Vec<&String> = self.params.iter().filter(|(_, t)| !t.is_finite()).map(|(n, _)| n).collect();
        let msg = format!(
            "non-finite loss at step {} (dblr {}, perc {}, tv {}); non-finite parameters: {:?}",
            self.step, b.dblr, b.perc, b.tv, bad
        );
        if let Some(dir) = &self.cfg.dump_dir {
            let dump = serde_json::json!({
                "step": self.step,
                "epoch": self.epoch,
                "loss": b,
                "non_finite_params": bad,
            });
            let _ = std::fs::create_dir_all(dir);
            let _ = std::fs::write(dir.join(format!("nan_step{}.json", self.step)), dump.to_string());
        }
        StedError::Numerical(msg)
    }

    /// One Adam update on `batch` at the current epoch's rate.
    pub fn train_step(&mut self, batch: &[TrainItem]) -> Result<StepReport> {
        let (b, grads) = self.loss(batch)?;
        let lr = self.lr();
        let grad_norm = self
            .adam
            .step(&mut self.params, &grads, lr)
            .map_err(|e| match self.numerical_failure(&b) {
                StedError::Numerical(m) => StedError::Numerical(format!("{m}: {e}")),
                other => other,
            })?;
        self.step += 1;
        Ok(StepReport {
            step: self.step,
            epoch: self.epoch,
            lr,
            dblr: b.dblr,
            perc: b.perc,
            tv: b.tv,
            total: b.total,
            grad_norm,
        })
    }

    /// Random crop of side `min(crop, dims)` rounded down to a multiple of 8.
    fn random_crop(&mut self, item: &TrainItem) -> Result<TrainItem> {
        let (h, w) = item.dims();
        let ch = self.cfg.crop.min(h) / 8 * 8;
        let cw = self.cfg.crop.min(w) / 8 * 8;
        if ch == 0 || cw == 0 {
            return Err(StedError::shape(format!("sample {h}x{w} too small to crop")));
        }
        if (ch, cw) == (h, w) {
            return Ok(item.clone());
        }
        let y0 = self.data_rng.random_range(0..=h - ch);
        let x0 = self.data_rng.random_range(0..=w - cw);
        Ok(item.crop(y0, x0, ch, cw))
    }

    /// One pass over `items` in shuffled batches; the last short batch is
    /// kept.
    pub fn train_epoch(&mut self, items: &[TrainItem], log: &mut dyn FnMut(&StepReport)) -> Result<()> {
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut self.data_rng);
        for chunk in order.chunks(self.cfg.batch) {
            let batch = chunk.iter().map(|&i| self.random_crop(&items[i])).collect::<Result<Vec<_>>>()?;
            let r = self.train_step(&batch)?;
            log(&r);
        }
        self.epoch += 1;
        Ok(())
    }

    /// Trains until `steps` updates have been made (epochs advance as the
    /// data is exhausted).
    pub fn train_steps(&mut self, items: &[TrainItem], steps: u64, log: &mut dyn FnMut(&StepReport)) -> Result<()> {
        if items.is_empty() {
            return Err(StedError::invalid("no training data"));
        }
        while self.step < steps {
            let mut order: Vec<usize> = (0..items.len()).collect();
            order.shuffle(&mut self.data_rng);
            for chunk in order.chunks(self.cfg.batch) {
                if self.step >= steps {
                    return Ok(());
                }
                let batch = chunk.iter().map(|&i| self.random_crop(&items[i])).collect::<Result<Vec<_>>>()?;
                let r = self.train_step(&batch)?;
                log(&r);
            }
            self.epoch += 1;
        }
        Ok(())
    }

    /// Full schedule of `max_epochs` epochs.
    pub fn fit(&mut self, items: &[TrainItem], log: &mut dyn FnMut(&StepReport)) -> Result<()> {
        while self.epoch < self.cfg.max_epochs {
            self.train_epoch(items, log)?;
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_checkpoint(dir, &self.cfg, &self.params)
    }
}

/// Writes JSON lines of step reports.
pub struct JsonLog<W: Write> {
    out: W,
}

impl<W: Write> JsonLog<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write(&mut self, r: &StepReport) -> Result<()> {
        serde_json::to_writer(&mut self.out, r)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }
}

pub fn save_checkpoint(dir: &Path, cfg: &TrainConfig, params: &ParamStore<f32>) -> Result<()> {
    checkpoint::write_params(dir, params, serde_json::to_value(cfg)?, &cfg.hash()?)
}

pub fn load_checkpoint(dir: &Path) -> Result<(TrainConfig, ParamStore<f32>)> {
    let m = checkpoint::read_manifest(dir)?;
    let cfg: TrainConfig = serde_json::from_value(m.config).map_err(|e| StedError::format(format!("checkpoint config: {e}")))?;
    if cfg.hash()? != m.config_hash {
        return Err(StedError::format("checkpoint config hash mismatch"));
    }
    let params = checkpoint::read_params(dir)?;
    Ok((cfg, params))
}

/// Frames and coarse disparity for one sample.
#[derive(Clone, Debug)]
pub struct Prediction {
    /// `M` frames, each `[1, C, H, W]`.
    pub frames: Vec<Tensor<f32>>,
    /// `[1, 1, H, W]`.
    pub disparity: Tensor<f32>,
    pub stage_magnitudes: Vec<(f64, f64)>,
}

pub trait Predictor {
    fn predict(&self, sample: &Sample) -> Result<Prediction>;
}

/// The trained network.
pub struct ModelPredictor<'a> {
    pub model: &'a StedModel,
    pub params: &'a ParamStore<f32>,
}

impl Predictor for ModelPredictor<'_> {
    fn predict(&self, s: &Sample) -> Result<Prediction> {
        let item = TrainItem::from_sample(s, self.model.cfg.bins())?;
        let frozen = self.params.clone().frozen();
        let g = Graph::new();
        let b = g.input(item.blurry);
        let v = g.input(item.voxel);
        let out = self.model.forward(&g, &frozen, b, v)?;
        let all = g.value(out.frames);
        if !all.is_finite() {
            return Err(StedError::Numerical(format!("non-finite prediction for {}", s.id)));
        }
        let c = self.model.cfg.image_channels();
        Ok(Prediction {
            frames: (0..self.model.cfg.frames()).map(|m| all.channels(m * c, c)).collect(),
            disparity: (*g.value(out.disparity)).clone(),
            stage_magnitudes: stage_magnitudes(&g, &out.dblr),
        })
    }
}

/// Returns the ground truth itself.
pub struct GtPassthrough;

impl Predictor for GtPassthrough {
    fn predict(&self, s: &Sample) -> Result<Prediction> {
        Ok(Prediction {
            frames: s.gt_frames.iter().map(|f| f.tensor().clone()).collect(),
            disparity: s.gt_disparity().tensor().clone(),
            stage_magnitudes: Vec::new(),
        })
    }
}

/// Repeats the blurry input `frames` times with zero disparity.
pub struct BlurryRepeat {
    pub frames: usize,
}

impl Predictor for BlurryRepeat {
    fn predict(&self, s: &Sample) -> Result<Prediction> {
        let (h, w) = s.dims();
        Ok(Prediction {
            frames: vec![s.blurry.tensor().clone(); self.frames],
            disparity: Tensor::zeros([1, 1, h, w]),
            stage_magnitudes: Vec::new(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: String,
    pub psnr_mid: f64,
    pub ssim_mid: f64,
    pub psnr_seq: f64,
    pub ssim_seq: f64,
    /// Blurry input against the middle ground-truth frame.
    pub psnr_blurry: f64,
    pub epe: f64,
    pub bad1: f64,
    pub bad3: f64,
    pub bad5: f64,
    pub stage_magnitudes: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    pub config_hash: String,
    pub per_sample: Vec<SampleMetrics>,
    pub mean: SampleMetrics,
}

impl EvalReport {
    pub fn metric_reports(&self) -> Vec<MetricReport> {
        let m = &self.mean;
        [
            ("psnr_mid", m.psnr_mid),
            ("ssim_mid", m.ssim_mid),
            ("psnr_seq", m.psnr_seq),
            ("ssim_seq", m.ssim_seq),
            ("psnr_blurry", m.psnr_blurry),
            ("epe", m.epe),
            ("bad1", m.bad1),
            ("bad3", m.bad3),
            ("bad5", m.bad5),
        ]
        .into_iter()
        .map(|(k, v)| MetricReport {
            metric: k.to_string(),
            value: v,
            n_samples: self.n_samples,
            config_hash: self.config_hash.clone(),
        })
        .collect()
    }
}

fn clip01(t: &Tensor<f32>) -> Tensor<f32> {
    t.map(|v| v.clamp(0.0, 1.0))
}

/// Middle-frame and whole-sequence image quality plus disparity accuracy.
/// Frames are clipped to `[0, 1]` before scoring.
pub fn evaluate(samples: &[Sample], predictor: &dyn Predictor, config_hash: &str) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(StedError::invalid("empty evaluation set"));
    }
    let mut per = Vec::with_capacity(samples.len());
    for s in samples {
        let p = predictor.predict(s)?;
        let m = s.gt_frames.len();
        if p.frames.len() != m {
            return Err(StedError::shape(format!("{} predicted frames for {m} targets", p.frames.len())));
        }
        let mid = m / 2;
        let pred: Vec<Tensor<f32>> = p.frames.iter().map(clip01).collect();
        let gt: Vec<&Tensor<f32>> = s.gt_frames.iter().map(|f| f.tensor()).collect();
        let mut psnr_seq = 0.0;
        let mut ssim_seq = 0.0;
        for (a, b) in pred.iter().zip(&gt) {
            psnr_seq += metrics::psnr(a, b, 1.0)?;
            ssim_seq += metrics::ssim(a, b, 1.0)?;
        }
        let gd = s.gt_disparity().tensor();
        per.push(SampleMetrics {
            id: s.id.clone(),
            psnr_mid: metrics::psnr(&pred[mid], gt[mid], 1.0)?,
            ssim_mid: metrics::ssim(&pred[mid], gt[mid], 1.0)?,
            psnr_seq: psnr_seq / m as f64,
            ssim_seq: ssim_seq / m as f64,
            psnr_blurry: metrics::psnr(s.blurry.tensor(), gt[mid], 1.0)?,
            epe: metrics::epe(&p.disparity, gd, None)?,
            bad1: metrics::bad_pixel_ratio(&p.disparity, gd, 1.0, None)?,
            bad3: metrics::bad_pixel_ratio(&p.disparity, gd, 3.0, None)?,
            bad5: metrics::bad_pixel_ratio(&p.disparity, gd, 5.0, None)?,
            stage_magnitudes: p.stage_magnitudes,
        });
    }
    let n = per.len() as f64;
    let avg = |f: fn(&SampleMetrics) -> f64| per.iter().map(f).sum::<f64>() / n;
    let stages = per[0].stage_magnitudes.len();
    let mean = SampleMetrics {
        id: "mean".into(),
        psnr_mid: avg(|s| s.psnr_mid),
        ssim_mid: avg(|s| s.ssim_mid),
        psnr_seq: avg(|s| s.psnr_seq),
        ssim_seq: avg(|s| s.ssim_seq),
        psnr_blurry: avg(|s| s.psnr_blurry),
        epe: avg(|s| s.epe),
        bad1: avg(|s| s.bad1),
        bad3: avg(|s| s.bad3),
        bad5: avg(|s| s.bad5),
        stage_magnitudes: (0..stages)
            .map(|i| {
                let a = per.iter().map(|s| s.stage_magnitudes.get(i).map_or(0.0, |v| v.0)).sum::<f64>() / n;
                let b = per.iter().map(|s| s.stage_magnitudes.get(i).map_or(0.0, |v| v.1)).sum::<f64>() / n;
                (a, b)
            })
            .collect(),
    };
    Ok(EvalReport {
        n_samples: per.len(),
        config_hash: config_hash.to_string(),
        per_sample: per,
        mean,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub flags: AblationFlags,
    pub first_loss: f64,
    pub final_loss: f64,
    pub psnr_mid: f64,
    pub psnr_seq: f64,
    pub ssim_mid: f64,
    pub epe: f64,
    /// Mean |BDE disparity| over stages and directions.
    pub bde_magnitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub steps: u64,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// Plain-text table, one row per flag combination.
    pub fn table(&self) -> String {
        let mut s = String::from("DispNet | DP | BDE | AFF | first loss | final loss | PSNR mid | PSNR seq | SSIM mid | EPE\n");
        let mark = |b: bool| if b { "x" } else { " " };
        for r in &self.rows {
            let f = r.flags;
            s.push_str(&format!(
                "{:^7} | {:^2} | {:^3} | {:^3} | {:>10.5} | {:>10.5} | {:>8.3} | {:>8.3} | {:>8.4} | {:>6.3}\n",
                mark(f.use_dispnet),
                mark(f.use_dual_path),
                mark(f.use_bde),
                mark(f.use_aff),
                r.first_loss,
                r.final_loss,
                r.psnr_mid,
                r.psnr_seq,
                r.ssim_mid,
                r.epe
            ));
        }
        s
    }
}

/// Trains and evaluates every flag combination in `grid` for `steps` steps
/// from the same seed.
pub fn run_ablation(samples: &[Sample], base: &TrainConfig, grid: &[AblationFlags], steps: u64) -> Result<AblationReport> {
    let items = prepare(samples, base.dblrnet.bins)?;
    let mut rows = Vec::with_capacity(grid.len());
    for &flags in grid {
        let cfg = TrainConfig { flags, ..base.clone() };
        let mut t = Trainer::new(cfg)?;
        let mut losses = Vec::new();
        t.train_steps(&items, steps, &mut |r| losses.push(r.total))?;
        let pred = ModelPredictor {
            model: &t.model,
            params: &t.params,
        };
        let rep = evaluate(samples, &pred, &t.cfg.hash()?)?;
        let mags = &rep.mean.stage_magnitudes;
        let bde_magnitude = if mags.is_empty() {
            0.0
        } else {
            mags.iter().map(|(a, b)| a + b).sum::<f64>() / (2 * mags.len()) as f64
        };
        rows.push(AblationRow {
            flags,
            first_loss: losses.first().copied().unwrap_or(f64::NAN),
            final_loss: losses.last().copied().unwrap_or(f64::NAN),
            psnr_mid: rep.mean.psnr_mid,
            psnr_seq: rep.mean.psnr_seq,
            ssim_mid: rep.mean.ssim_mid,
            epe: rep.mean.epe,
            bde_magnitude,
        });
    }
    Ok(AblationReport { steps, rows })
}
