//! Synthetic stereo scenes: layered translating textures rendered from an
//! intensity viewpoint and a horizontally displaced event viewpoint, with
//! exact sharp frames and disparity.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::config_hash;
use crate::error::{Result, StedError};
use crate::events::{read_events, simulate_events, synthesize_blur, write_events, EventSimConfig, EventStream};
use crate::geometry::{read_raw_f32, write_raw_f32, DisparityMap, ImageTensor};
use crate::tensor::Tensor;

/// Exposure length in rendered frames.
pub const EXPOSURE_FRAMES: usize = 49;
pub const FRAME_PERIOD_US: u64 = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum MaskSpec {
    Full,
    Rect { x: f64, y: f64, w: f64, h: f64 },
    Disk { cx: f64, cy: f64, r: f64 },
}

impl MaskSpec {
    fn covers(&self, u: f64, v: f64) -> bool {
        match *self {
            MaskSpec::Full => true,
            MaskSpec::Rect { x, y, w, h } => u >= x && u < x + w && v >= y && v < y + h,
            MaskSpec::Disk { cx, cy, r } => (u - cx).powi(2) + (v - cy).powi(2) <= r * r,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub texture_seed: u64,
    /// Horizontal displacement of the event view (pixels).
    pub disparity: f64,
    /// Motion in pixels per rendered frame.
    pub velocity: (f64, f64),
    pub mask: MaskSpec,
}

/// Texture statistics shared by all layers of a scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextureStyle {
    pub waves: usize,
    pub min_wavelength: f64,
    pub max_wavelength: f64,
    pub primitives: usize,
    /// `[base, gx, gy]`: replaces the procedural texture with the linear
    /// ramp `base + gx*u + gy*v`.
    #[serde(default)]
    pub ramp: Option<[f64; 3]>,
}

impl Default for TextureStyle {
    fn default() -> Self {
        Self {
            waves: 6,
            min_wavelength: 6.0,
            max_wavelength: 40.0,
            primitives: 4,
            ramp: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// Back to front.
    pub layers: Vec<LayerSpec>,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Rendered frames `K`.
    pub frames: usize,
    /// Frames averaged into the blurry image.
    pub exposure: usize,
    pub frame_period_us: u64,
    pub max_disparity: f64,
    pub texture: TextureStyle,
}

impl SceneSpec {
    pub fn new(height: usize, width: usize, channels: usize, layers: Vec<LayerSpec>) -> Self {
        Self {
            layers,
            height,
            width,
            channels,
            frames: EXPOSURE_FRAMES,
            exposure: EXPOSURE_FRAMES,
            frame_period_us: FRAME_PERIOD_US,
            max_disparity: 48.0,
            texture: TextureStyle::default(),
        }
    }

    /// Background plane plus `layers - 1` foreground rectangles or disks,
    /// nearer layers with larger disparity.
    pub fn random(rng: &mut impl Rng, height: usize, width: usize, channels: usize, layers: usize, max_disparity: f64) -> Self {
        let (hf, wf) = (height as f64, width as f64);
        let mut out = Vec::with_capacity(layers);
        let cap = max_disparity.min(wf / 4.0);
        for i in 0..layers {
            let lo = cap * i as f64 / layers as f64;
            let hi = cap * (i + 1) as f64 / layers as f64;
            let mask = if i == 0 {
                MaskSpec::Full
            } else if rng.random_bool(0.5) {
                MaskSpec::Rect {
                    x: rng.random_range(0.0..wf * 0.6),
                    y: rng.random_range(0.0..hf * 0.6),
                    w: rng.random_range(wf * 0.2..wf * 0.5),
                    h: rng.random_range(hf * 0.2..hf * 0.5),
                }
            } else {
                MaskSpec::Disk {
                    cx: rng.random_range(wf * 0.2..wf * 0.8),
                    cy: rng.random_range(hf * 0.2..hf * 0.8),
                    r: rng.random_range(hf.min(wf) * 0.1..hf.min(wf) * 0.3),
                }
            };
            out.push(LayerSpec {
                texture_seed: rng.random(),
                disparity: rng.random_range(lo..hi.max(lo + 1e-6)),
                velocity: (rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4)),
                mask,
            });
        }
        Self {
            max_disparity,
            ..Self::new(height, width, channels, out)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || !(self.channels == 1 || self.channels == 3) {
            return Err(StedError::invalid("scene needs positive dims and 1 or 3 channels"));
        }
        if self.exposure < 2 || self.frames < self.exposure {
            return Err(StedError::invalid(format!(
                "need 2 <= exposure ({}) <= frames ({})",
                self.exposure, self.frames
            )));
        }
        if self.frame_period_us == 0 {
            return Err(StedError::invalid("frame period must be positive"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if !(l.disparity >= 0.0 && l.disparity <= self.max_disparity) {
                return Err(StedError::invalid(format!(
                    "layer {i} disparity {} outside [0, {}]",
                    l.disparity, self.max_disparity
                )));
            }
            if !(l.velocity.0.is_finite() && l.velocity.1.is_finite()) {
                return Err(StedError::invalid(format!("layer {i} velocity is not finite")));
            }
        }
        Ok(())
    }

    pub fn timestamps(&self) -> Vec<u64> {
        (0..self.frames as u64).map(|k| k * self.frame_period_us).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum View {
    Intensity,
    Event,
}

#[derive(Clone, Debug)]
struct Texture {
    /// (kx, ky, phase, amplitude)
    waves: Vec<(f64, f64, f64, f64)>,
    /// (cx, cy, radius, value, square)
    shapes: Vec<(f64, f64, f64, f64, bool)>,
    base: f64,
    tint: [f64; 3],
    ramp: Option<[f64; 3]>,
}

impl Texture {
    fn new(seed: u64, style: &TextureStyle, h: f64, w: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves: Vec<_> = (0..style.waves)
            .map(|_| {
                let lambda = rng.random_range(style.min_wavelength..=style.max_wavelength.max(style.min_wavelength));
                let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
                let k = std::f64::consts::TAU / lambda;
                (k * theta.cos(), k * theta.sin(), rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.5..1.0))
            })
            .collect();
        let total: f64 = waves.iter().map(|w| w.3).sum::<f64>().max(1e-9);
        let waves = waves.into_iter().map(|(a, b, c, d)| (a, b, c, 0.3 * d / total)).collect();
        let shapes = (0..style.primitives)
            .map(|_| {
                (
                    rng.random_range(-0.25 * w..1.25 * w),
                    rng.random_range(-0.25 * h..1.25 * h),
                    rng.random_range(3.0..(h.min(w) * 0.25).max(4.0)),
                    rng.random_range(-0.3..0.3),
                    rng.random_bool(0.5),
                )
            })
            .collect();
        Self {
            waves,
            shapes,
            base: rng.random_range(0.35..0.65),
            tint: [rng.random_range(0.7..1.0), rng.random_range(0.7..1.0), rng.random_range(0.7..1.0)],
            ramp: style.ramp,
        }
    }

    fn luminance(&self, u: f64, v: f64) -> f64 {
        if let Some([b, gx, gy]) = self.ramp {
            return (b + gx * u + gy * v).clamp(0.02, 0.98);
        }
        let mut s = self.base;
        for &(kx, ky, ph, a) in &self.waves {
            s += a * (kx * u + ky * v + ph).sin();
        }
        for &(cx, cy, r, val, square) in &self.shapes {
            let dist = if square { (u - cx).abs().max((v - cy).abs()) } else { ((u - cx).powi(2) + (v - cy).powi(2)).sqrt() };
            // 1.5 px soft edge
            let t = ((r - dist) / 1.5 + 0.5).clamp(0.0, 1.0);
            s += val * t * t * (3.0 - 2.0 * t);
        }
        s.clamp(0.02, 0.98)
    }
}

fn build_textures(spec: &SceneSpec) -> Vec<Texture> {
    let (h, w) = (spec.height as f64, spec.width as f64);
    spec.layers.iter().map(|l| Texture::new(l.texture_seed, &spec.texture, h, w)).collect()
}

/// Layer-local coordinates of pixel `(x, y)` of `view` at frame `k`.
fn layer_coords(l: &LayerSpec, view: View, x: usize, y: usize, k: usize) -> (f64, f64) {
    let shift = match view {
        View::Intensity => 0.0,
        View::Event => l.disparity,
    };
    (x as f64 + shift - l.velocity.0 * k as f64, y as f64 - l.velocity.1 * k as f64)
}

/// Index of the front-most layer covering pixel `(x, y)`.
fn front_layer(spec: &SceneSpec, view: View, x: usize, y: usize, k: usize) -> Option<usize> {
    (0..spec.layers.len()).rev().find(|&i| {
        let (u, v) = layer_coords(&spec.layers[i], view, x, y, k);
        spec.layers[i].mask.covers(u, v)
    })
}

fn render_frame(spec: &SceneSpec, tex: &[Texture], view: View, k: usize) -> Result<ImageTensor> {
    let (h, w, c) = (spec.height, spec.width, spec.channels);
    let mut t = Tensor::<f32>::zeros([1, c, h, w]);
    for y in 0..h {
        for x in 0..w {
            let Some(i) = front_layer(spec, view, x, y, k) else { continue };
            let (u, v) = layer_coords(&spec.layers[i], view, x, y, k);
            let lum = tex[i].luminance(u, v);
            for ch in 0..c {
                let val = if c == 1 { lum } else { lum * tex[i].tint[ch] };
                t.set(0, ch, y, x, val as f32);
            }
        }
    }
    ImageTensor::intensity(t)
}

/// All `K` frames of one view.
pub fn render_scene(spec: &SceneSpec, view: View) -> Result<Vec<ImageTensor>> {
    spec.validate()?;
    let tex = build_textures(spec);
    (0..spec.frames).map(|k| render_frame(spec, &tex, view, k)).collect()
}

/// Disparity of the front-most layer in the intensity view at frame `k`
/// (zero where no layer covers).
pub fn scene_disparity(spec: &SceneSpec, k: usize) -> Result<DisparityMap> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut data = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            if let Some(i) = front_layer(spec, View::Intensity, x, y, k) {
                data[y * w + x] = spec.layers[i].disparity as f32;
            }
        }
    }
    DisparityMap::new(h, w, data)
}

/// Frame indices of `m` uniformly spaced targets within an exposure of
/// `exposure` frames (the middle frame when `m == 1`).
pub fn gt_indices(exposure: usize, m: usize) -> Vec<usize> {
    if m == 1 {
        return vec![(exposure - 1) / 2];
    }
    (0..m)
        .map(|j| ((j * (exposure - 1)) as f64 / (m - 1) as f64).round() as usize)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub frames: usize,
    pub gt_timestamps: Vec<u64>,
    pub window: (u64, u64),
    pub config_hash: String,
    pub sim: EventSimConfig,
    pub scene: Option<SceneSpec>,
}

/// One training record. Ground-truth disparity is held behind an audited
/// accessor so that training code can prove it never reads it.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub blurry: ImageTensor,
    pub events: EventStream,
    pub gt_frames: Vec<ImageTensor>,
    gt_disparity: DisparityMap,
    pub meta: SampleMeta,
    audit: Arc<AtomicUsize>,
}

impl PartialEq for Sample {
    fn eq(&self, o: &Self) -> bool {
        self.id == o.id
            && self.blurry == o.blurry
            && self.events == o.events
            && self.gt_frames == o.gt_frames
            && self.gt_disparity == o.gt_disparity
            && self.meta == o.meta
    }
}

impl Sample {
    pub fn new(
        id: impl Into<String>,
        blurry: ImageTensor,
        events: EventStream,
        gt_frames: Vec<ImageTensor>,
        gt_disparity: DisparityMap,
        meta: SampleMeta,
    ) -> Result<Self> {
        let (h, w) = blurry.dims();
        if gt_frames.is_empty() || gt_frames.len() != meta.frames {
            return Err(StedError::invalid(format!(
                "{} ground-truth frames, meta says {}",
                gt_frames.len(),
                meta.frames
            )));
        }
        let c = blurry.channels();
        if gt_frames.iter().any(|f| f.dims() != (h, w) || f.channels() != c)
            || (events.height(), events.width()) != (h, w)
            || (gt_disparity.height(), gt_disparity.width()) != (h, w)
        {
            return Err(StedError::shape("sample components disagree on dimensions"));
        }
        Ok(Self {
            id: id.into(),
            blurry,
            events,
            gt_frames,
            gt_disparity,
            meta,
            audit: Arc::new(AtomicUsize::new(0)),
        })
    }

    /// Evaluation-only ground truth; every call is counted.
    pub fn gt_disparity(&self) -> &DisparityMap {
        self.audit.fetch_add(1, Ordering::Relaxed);
        &self.gt_disparity
    }

    /// Number of [`Sample::gt_disparity`] reads so far (shared by clones).
    pub fn disparity_reads(&self) -> usize {
        self.audit.load(Ordering::Relaxed)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.blurry.dims()
    }
}

/// Renders both views, blurs the intensity exposure, simulates events on
/// the event view and samples `m` ground-truth frames.
pub fn make_sample(id: impl Into<String>, spec: &SceneSpec, sim: &EventSimConfig, m: usize) -> Result<Sample> {
    spec.validate()?;
    sim.validate()?;
    if m == 0 {
        return Err(StedError::invalid("at least one ground-truth frame is required"));
    }
    let tex = build_textures(spec);
    let exposure: Vec<usize> = (0..spec.exposure).collect();
    let intensity = exposure
        .iter()
        .map(|&k| render_frame(spec, &tex, View::Intensity, k))
        .collect::<Result<Vec<_>>>()?;
    let event_view = exposure
        .iter()
        .map(|&k| render_frame(spec, &tex, View::Event, k))
        .collect::<Result<Vec<_>>>()?;
    let ts: Vec<u64> = spec.timestamps()[..spec.exposure].to_vec();
    let blurry = synthesize_blur(&intensity)?;
    let events = simulate_events(&event_view, &ts, sim)?;
    let idx = gt_indices(spec.exposure, m);
    let gt_frames = idx.iter().map(|&k| intensity[k].clone()).collect();
    let disparity = scene_disparity(spec, spec.exposure / 2)?;
    let meta = SampleMeta {
        height: spec.height,
        width: spec.width,
        channels: spec.channels,
        frames: m,
        gt_timestamps: idx.iter().map(|&k| ts[k]).collect(),
        window: (ts[0], *ts.last().expect("exposure >= 2")),
        config_hash: config_hash(&(spec, sim, m))?,
        sim: *sim,
        scene: Some(spec.clone()),
    };
    Sample::new(id, blurry, events, gt_frames, disparity, meta)
}

/// Generator settings for a whole dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub samples: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub layers: usize,
    pub frames: usize,
    pub seed: u64,
    pub max_disparity: f64,
    pub sim: EventSimConfig,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            samples: 8,
            height: 64,
            width: 64,
            channels: 3,
            layers: 2,
            frames: 7,
            seed: 0,
            max_disparity: 16.0,
            sim: EventSimConfig::default(),
        }
    }
}

/// Random scenes from `spec.seed`; sample `i` only depends on `(seed, i)`,
/// so generation runs in parallel without affecting the result.
pub fn generate(spec: &DatasetSpec) -> Result<Vec<Sample>> {
    if spec.layers == 0 {
        return Err(StedError::invalid("at least one layer is required"));
    }
    (0..spec.samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64 + 1);
            let scene = SceneSpec::random(&mut rng, spec.height, spec.width, spec.channels, spec.layers, spec.max_disparity);
            make_sample(sample_id(i), &scene, &spec.sim, spec.frames)
        })
        .collect()
}

pub fn sample_id(i: usize) -> String {
    format!("s{i:05}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub count: usize,
    pub ids: Vec<String>,
}

const DATASET_FORMAT: &str = "sted-dataset-v1";

pub fn write_dataset(samples: &[Sample], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for s in samples {
        let d = dir.join(&s.id);
        fs::create_dir_all(&d)?;
        write_raw_f32(&d.join("blurry.raw"), s.blurry.tensor().data())?;
        write_events(&d.join("events.stev"), &s.events, Some(s.meta.sim))?;
        for (m, f) in s.gt_frames.iter().enumerate() {
            write_raw_f32(&d.join(format!("gt_{m}.raw")), f.tensor().data())?;
        }
        s.gt_disparity.write(&d.join("disp.raw"))?;
        fs::write(d.join("meta.json"), serde_json::to_vec_pretty(&s.meta)?)?;
    }
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        count: samples.len(),
        ids: samples.iter().map(|s| s.id.clone()).collect(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

fn read_image(path: &Path, c: usize, h: usize, w: usize) -> Result<ImageTensor> {
    let data = read_raw_f32(path, c * h * w)?;
    ImageTensor::intensity(Tensor::from_vec([1, c, h, w], data)?).map_err(|e| StedError::format(format!("{}: {e}", path.display())))
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let m: DatasetManifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)
        .map_err(|e| StedError::format(format!("dataset manifest: {e}")))?;
    if m.format != DATASET_FORMAT || m.count != m.ids.len() {
        return Err(StedError::format("dataset manifest is inconsistent"));
    }
    Ok(m)
}

pub fn read_sample(dir: &Path, id: &str) -> Result<Sample> {
    let d = dir.join(id);
    let meta: SampleMeta = serde_json::from_slice(&fs::read(d.join("meta.json"))?)
        .map_err(|e| StedError::format(format!("{id}/meta.json: {e}")))?;
    let (c, h, w) = (meta.channels, meta.height, meta.width);
    let blurry = read_image(&d.join("blurry.raw"), c, h, w)?;
    let events = read_events(&d.join("events.stev"))?;
    let gt = (0..meta.frames)
        .map(|m| read_image(&d.join(format!("gt_{m}.raw")), c, h, w))
        .collect::<Result<Vec<_>>>()?;
    let disp = DisparityMap::read(&d.join("disp.raw"))?;
    Sample::new(id, blurry, events, gt, disp, meta).map_err(|e| StedError::format(format!("{id}: {e}")))
}

pub fn read_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let m = read_manifest(dir)?;
    m.ids.iter().map(|id| read_sample(dir, id)).collect()
}
