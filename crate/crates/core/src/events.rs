//! Polarity events, voxel encoding, the contrast-threshold simulator, blur
//! synthesis and the classical double-integral deblurring baseline.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, StedError};
use crate::geometry::ImageTensor;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    /// Microseconds.
    pub t: u64,
    pub x: u16,
    pub y: u16,
    /// `+1` or `-1`.
    pub p: i8,
}

/// Time-ordered events on a `width x height` sensor within `[t_start, t_end]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EventStream {
    events: Vec<Event>,
    width: usize,
    height: usize,
    t_start: u64,
    t_end: u64,
}

impl EventStream {
    pub fn new(width: usize, height: usize, t_start: u64, t_end: u64, events: Vec<Event>) -> Result<Self> {
        if width == 0 || height == 0 || width > u16::MAX as usize || height > u16::MAX as usize {
            return Err(StedError::invalid(format!("bad sensor size {width}x{height}")));
        }
        if t_start >= t_end {
            return Err(StedError::invalid(format!("empty window [{t_start}, {t_end}]")));
        }
        let mut prev = t_start;
        for e in &events {
            if e.t < prev || e.t > t_end {
                return Err(StedError::invalid(format!(
                    "event at t={} breaks ordering or window [{t_start}, {t_end}]",
                    e.t
                )));
            }
            if e.p != 1 && e.p != -1 {
                return Err(StedError::invalid(format!("polarity {} not in {{-1, +1}}", e.p)));
            }
            if e.x as usize >= width || e.y as usize >= height {
                return Err(StedError::invalid(format!("event at ({}, {}) outside {width}x{height}", e.x, e.y)));
            }
            prev = e.t;
        }
        Ok(Self {
            events,
            width,
            height,
            t_start,
            t_end,
        })
    }

    pub fn empty(width: usize, height: usize, t_start: u64, t_end: u64) -> Result<Self> {
        Self::new(width, height, t_start, t_end, Vec::new())
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn window(&self) -> (u64, u64) {
        (self.t_start, self.t_end)
    }

    pub fn polarity_sum(&self) -> i64 {
        self.events.iter().map(|e| e.p as i64).sum()
    }

    /// Same stream with every polarity negated.
    pub fn flipped(&self) -> Self {
        let mut s = self.clone();
        for e in &mut s.events {
            e.p = -e.p;
        }
        s
    }

    /// Events restricted to the rectangle `[x0, x0+w) x [y0, y0+h)`, re-based.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(StedError::invalid("crop outside sensor"));
        }
        let events = self
            .events
            .iter()
            .filter(|e| (x0..x0 + w).contains(&(e.x as usize)) && (y0..y0 + h).contains(&(e.y as usize)))
            .map(|e| Event {
                x: (e.x as usize - x0) as u16,
                y: (e.y as usize - y0) as u16,
                ..*e
            })
            .collect();
        Self::new(w, h, self.t_start, self.t_end, events)
    }
}

/// Signed spatio-temporal histogram, `bins x H x W` stored as `[1, bins, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    data: Tensor<f64>,
    window: (u64, u64),
}

impl VoxelGrid {
    pub fn from_tensor(data: Tensor<f64>, window: (u64, u64)) -> Result<Self> {
        if data.n() != 1 || data.c() == 0 {
            return Err(StedError::shape(format!("voxel grid must be [1, B>0, H, W], got {:?}", data.shape())));
        }
        Ok(Self { data, window })
    }

    pub fn tensor(&self) -> &Tensor<f64> {
        &self.data
    }

    pub fn bins(&self) -> usize {
        self.data.c()
    }

    pub fn window(&self) -> (u64, u64) {
        self.window
    }

    pub fn at(&self, bin: usize, y: usize, x: usize) -> f64 {
        self.data.at(0, bin, y, x)
    }

    pub fn total_mass(&self) -> f64 {
        self.data.sum()
    }

    /// Spatial crop `[x0, x0+w) x [y0, y0+h)` of every bin.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.data.w() || y0 + h > self.data.h() {
            return Err(StedError::invalid("crop outside voxel grid"));
        }
        let data = Tensor::from_fn([1, self.bins(), h, w], |_, b, y, x| self.data.at(0, b, y + y0, x + x0));
        Self::from_tensor(data, self.window)
    }
}

/// Contrast-threshold event generation parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventSimConfig {
    pub threshold_c: f64,
    pub log_eps: f64,
    #[serde(default)]
    pub refractory_us: u64,
}

impl Default for EventSimConfig {
    fn default() -> Self {
        Self {
            threshold_c: 0.2,
            log_eps: 1e-3,
            refractory_us: 0,
        }
    }
}

impl EventSimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold_c > 0.0 && self.threshold_c.is_finite()) {
            return Err(StedError::invalid(format!("threshold_c must be > 0, got {}", self.threshold_c)));
        }
        if !(self.log_eps > 0.0 && self.log_eps.is_finite()) {
            return Err(StedError::invalid(format!("log_eps must be > 0, got {}", self.log_eps)));
        }
        Ok(())
    }
}

/// Encodes a stream into `bins` temporal bins. Bin centres sit uniformly on
/// `[t_start, t_end]` (first at `t_start`, last at `t_end`); each event
/// splits its polarity linearly between the two nearest centres.
pub fn voxelize(stream: &EventStream, bins: usize) -> Result<VoxelGrid> {
    if bins < 1 {
        return Err(StedError::invalid("voxelize needs at least one bin"));
    }
    let (w, h) = (stream.width(), stream.height());
    let (t0, t1) = stream.window();
    let span = (t1 - t0) as f64;
    let mut data = Tensor::<f64>::zeros([1, bins, h, w]);
    let hw = h * w;
    let grid = data.data_mut();
    for e in stream.events() {
        let (x, y) = (e.x as usize, e.y as usize);
        if x >= w || y >= h {
            return Err(StedError::invalid(format!("event at ({x}, {y}) outside {w}x{h}")));
        }
        let p = e.p as f64;
        let pix = y * w + x;
        if bins == 1 {
            grid[pix] += p;
            continue;
        }
        let tn = (bins - 1) as f64 * (e.t - t0) as f64 / span;
        let b0 = (tn.floor() as usize).min(bins - 1);
        let a = tn - b0 as f64;
        grid[b0 * hw + pix] += p * (1.0 - a);
        if a > 0.0 && b0 + 1 < bins {
            grid[(b0 + 1) * hw + pix] += p * a;
        }
    }
    VoxelGrid::from_tensor(data, (t0, t1))
}

/// Tolerance (log units) under which a level counts as reached.
const LEVEL_TOL: f64 = 1e-9;

/// Linear interpolation of log intensity at integer time `t` in `[t0, t1]`.
#[inline]
pub fn interp_log(l0: f64, l1: f64, t0: u64, t1: u64, t: u64) -> f64 {
    l0 + (l1 - l0) * (t - t0) as f64 / (t1 - t0) as f64
}

/// First integer time in `(t0, t1]` at which the interpolated log intensity
/// reaches `level` (from below when `up`, from above otherwise).
fn first_crossing(l0: f64, l1: f64, t0: u64, t1: u64, level: f64, up: bool) -> u64 {
    let reached = |t: u64| {
        let v = interp_log(l0, l1, t0, t1, t);
        if up {
            v >= level - LEVEL_TOL
        } else {
            v <= level + LEVEL_TOL
        }
    };
    let target = if up { level - LEVEL_TOL } else { level + LEVEL_TOL };
    let frac = ((target - l0) / (l1 - l0)).clamp(0.0, 1.0);
    let mut t = (t0 as f64 + frac * (t1 - t0) as f64).ceil() as u64;
    t = t.clamp(t0 + 1, t1);
    while t > t0 + 1 && reached(t - 1) {
        t -= 1;
    }
    while t < t1 && !reached(t) {
        t += 1;
    }
    t
}

/// Generates events from a video with the per-pixel contrast-threshold
/// model on `log(luma + log_eps)`.
///
/// Each pixel keeps a reference level `L_ref = L(0) + k*c` for integer `k`.
/// Between consecutive frames the log intensity is interpolated linearly in
/// time; every time it reaches `L_ref ± c` an event is emitted at the first
/// integer microsecond where the level is reached and `k` advances by one.
pub fn simulate_events(frames: &[ImageTensor], timestamps: &[u64], cfg: &EventSimConfig) -> Result<EventStream> {
    cfg.validate()?;
    if frames.len() < 2 {
        return Err(StedError::invalid("event simulation needs at least two frames"));
    }
    if frames.len() != timestamps.len() {
        return Err(StedError::invalid("one timestamp per frame required"));
    }
    if timestamps.windows(2).any(|p| p[1] <= p[0]) {
        return Err(StedError::invalid("timestamps must be strictly increasing"));
    }
    let (h, w) = frames[0].dims();
    if frames.iter().any(|f| f.dims() != (h, w) || f.channels() != frames[0].channels()) {
        return Err(StedError::shape("frames must share dimensions"));
    }
    let logs: Vec<Vec<f64>> = frames
        .iter()
        .map(|f| f.luma().into_iter().map(|v| (v + cfg.log_eps).ln()).collect())
        .collect();
    let c = cfg.threshold_c;
    let mut events = Vec::new();
    for pix in 0..h * w {
        let (x, y) = ((pix % w) as u16, (pix / w) as u16);
        let base = logs[0][pix];
        let mut k: i64 = 0;
        let mut last_t: Option<u64> = None;
        for f in 1..frames.len() {
            let (l0, l1) = (logs[f - 1][pix], logs[f][pix]);
            let (t0, t1) = (timestamps[f - 1], timestamps[f]);
            if l1 == l0 {
                continue;
            }
            let up = l1 > l0;
            loop {
                let step = if up { 1 } else { -1 };
                let level = base + (k + step) as f64 * c;
                let crossed = if up { l1 >= level - LEVEL_TOL } else { l1 <= level + LEVEL_TOL };
                if !crossed {
                    break;
                }
                let t = first_crossing(l0, l1, t0, t1, level, up);
                k += step;
                let refractory = last_t.is_some_and(|lt| t - lt < cfg.refractory_us);
                if !refractory {
                    events.push(Event { t, x, y, p: step as i8 });
                    last_t = Some(t);
                }
            }
        }
    }
    events.sort_by_key(|e| (e.t, e.y, e.x));
    EventStream::new(w, h, timestamps[0], *timestamps.last().unwrap(), events)
}

/// Pixel-wise arithmetic mean of a frame sequence.
pub fn synthesize_blur(frames: &[ImageTensor]) -> Result<ImageTensor> {
    let first = frames
        .first()
        .ok_or_else(|| StedError::invalid("blur synthesis needs at least one frame"))?;
    let shape = first.tensor().shape();
    let mut acc = vec![0.0f64; first.tensor().numel()];
    for f in frames {
        f.tensor().expect_shape(shape)?;
        for (a, &v) in acc.iter_mut().zip(f.tensor().data()) {
            *a += v as f64;
        }
    }
    let n = frames.len() as f64;
    let data = acc.into_iter().map(|a| ((a / n) as f32).clamp(0.0, 1.0)).collect();
    ImageTensor::intensity(Tensor::from_vec(shape, data)?)
}

/// Uniformly spaced times for `m` frames over `[t0, t1]` (`m == 1` gives
/// the midpoint).
pub fn uniform_times(t0: u64, t1: u64, m: usize) -> Vec<f64> {
    let span = (t1 - t0) as f64;
    if m == 1 {
        return vec![t0 as f64 + span / 2.0];
    }
    (0..m).map(|j| t0 as f64 + span * j as f64 / (m - 1) as f64).collect()
}

/// Event-based double-integral deblurring baseline.
///
/// With `S(t)` the signed event count up to `t` at a pixel, the latent frame
/// at `f` satisfies `B = L(f) / T * ∫ exp(c (S(t) - S(f))) dt`. The integral is
/// exact for the piecewise-constant `S`. Outputs are at [`uniform_times`].
pub fn edi_deblur(blurry: &ImageTensor, stream: &EventStream, c: f64, m: usize) -> Result<Vec<ImageTensor>> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(StedError::invalid(format!("threshold must be > 0, got {c}")));
    }
    if m == 0 {
        return Err(StedError::invalid("need at least one output frame"));
    }
    let (h, w) = blurry.dims();
    if (stream.height(), stream.width()) != (h, w) {
        return Err(StedError::shape("event stream and blurry frame disagree in size"));
    }
    let (t0, t1) = stream.window();
    let span = (t1 - t0) as f64;
    let times = uniform_times(t0, t1, m);
    let mut per_pixel: Vec<Vec<(u64, i8)>> = vec![Vec::new(); h * w];
    for e in stream.events() {
        per_pixel[e.y as usize * w + e.x as usize].push((e.t, e.p));
    }
    let channels = blurry.channels();
    let mut outs: Vec<Tensor<f32>> = vec![Tensor::zeros([1, channels, h, w]); m];
    for (pix, evs) in per_pixel.iter().enumerate() {
        // segments [start, end) with constant signed count
        let mut segs: Vec<(f64, f64, i64)> = Vec::with_capacity(evs.len() + 1);
        let mut s = 0i64;
        let mut start = t0 as f64;
        for &(t, p) in evs {
            if t as f64 > start {
                segs.push((start, t as f64, s));
            }
            start = start.max(t as f64);
            s += p as i64;
        }
        if (t1 as f64) > start {
            segs.push((start, t1 as f64, s));
        }
        for (j, &tf) in times.iter().enumerate() {
            let sf: i64 = evs.iter().filter(|(t, _)| (*t as f64) <= tf).map(|(_, p)| *p as i64).sum();
            let integral: f64 = segs
                .iter()
                .map(|&(a, b, sv)| (b - a) * (c * (sv - sf) as f64).exp())
                .sum::<f64>()
                / span;
            for ch in 0..channels {
                let b = blurry.tensor().plane(0, ch)[pix] as f64;
                outs[j].plane_mut(0, ch)[pix] = (b / integral) as f32;
            }
        }
    }
    outs.into_iter()
        .map(|t| ImageTensor::new(t, crate::geometry::Role::Feature))
        .collect()
}

pub const STEV_MAGIC: &[u8; 6] = b"STEV1\0";
pub const STEV_HEADER_LEN: usize = 26;
pub const STEV_RECORD_LEN: usize = 13;

/// JSON sidecar written next to an event file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventSidecar {
    pub count: usize,
    pub positive: usize,
    pub negative: usize,
    pub width: usize,
    pub height: usize,
    pub t_start: u64,
    pub t_end: u64,
    pub config: Option<EventSimConfig>,
}

/// Serializes a stream: header (magic, width u16, height u16, t_start u64,
/// t_end u64) then packed little-endian `(t u64, x u16, y u16, p i8)` records.
pub fn encode_stev(stream: &EventStream) -> Vec<u8> {
    let mut buf = Vec::with_capacity(STEV_HEADER_LEN + stream.len() * STEV_RECORD_LEN);
    buf.extend_from_slice(STEV_MAGIC);
    buf.extend_from_slice(&(stream.width() as u16).to_le_bytes());
    buf.extend_from_slice(&(stream.height() as u16).to_le_bytes());
    buf.extend_from_slice(&stream.t_start.to_le_bytes());
    buf.extend_from_slice(&stream.t_end.to_le_bytes());
    for e in stream.events() {
        buf.extend_from_slice(&e.t.to_le_bytes());
        buf.extend_from_slice(&e.x.to_le_bytes());
        buf.extend_from_slice(&e.y.to_le_bytes());
        buf.push(e.p as u8);
    }
    buf
}

pub fn decode_stev(bytes: &[u8]) -> Result<EventStream> {
    if bytes.len() < STEV_HEADER_LEN || &bytes[..6] != STEV_MAGIC {
        return Err(StedError::format("missing STEV1 header"));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let (width, height) = (u16_at(6) as usize, u16_at(8) as usize);
    let (t_start, t_end) = (u64_at(10), u64_at(18));
    let body = &bytes[STEV_HEADER_LEN..];
    if body.len() % STEV_RECORD_LEN != 0 {
        return Err(StedError::format(format!(
            "event payload of {} bytes is not a whole number of records",
            body.len()
        )));
    }
    let events = body
        .chunks_exact(STEV_RECORD_LEN)
        .map(|r| Event {
            t: u64::from_le_bytes(r[..8].try_into().expect("8 bytes")),
            x: u16::from_le_bytes([r[8], r[9]]),
            y: u16::from_le_bytes([r[10], r[11]]),
            p: r[12] as i8,
        })
        .collect();
    EventStream::new(width, height, t_start, t_end, events).map_err(|e| StedError::format(e.to_string()))
}

/// Writes `<path>` (binary) and `<path>.json` (sidecar).
pub fn write_events(path: &Path, stream: &EventStream, config: Option<EventSimConfig>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_stev(stream))?;
    let positive = stream.events().iter().filter(|e| e.p > 0).count();
    let side = EventSidecar {
        count: stream.len(),
        positive,
        negative: stream.len() - positive,
        width: stream.width(),
        height: stream.height(),
        t_start: stream.t_start,
        t_end: stream.t_end,
        config,
    };
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&side)?)?;
    Ok(())
}

pub fn read_events(path: &Path) -> Result<EventStream> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let stream = decode_stev(&bytes)?;
    let side_path = sidecar_path(path);
    if side_path.exists() {
        let side: EventSidecar = serde_json::from_slice(&fs::read(side_path)?)?;
        if side.count != stream.len() {
            return Err(StedError::format(format!(
                "sidecar reports {} events, file holds {}",
                side.count,
                stream.len()
            )));
        }
    }
    Ok(stream)
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t: u64, x: u16, y: u16, p: i8) -> Event {
        Event { t, x, y, p }
    }

    #[test]
    fn empty_stream_gives_zero_grid() {
        let s = EventStream::empty(5, 3, 0, 100).unwrap();
        let v = voxelize(&s, 4).unwrap();
        assert_eq!(v.tensor().shape(), [1, 4, 3, 5]);
        assert!(v.tensor().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn event_at_window_start_lands_in_first_bin() {
        let s = EventStream::new(4, 4, 10, 70, vec![ev(10, 2, 1, 1)]).unwrap();
        let v = voxelize(&s, 4).unwrap();
        assert_eq!(v.at(0, 1, 2), 1.0);
        assert_eq!(v.tensor().data().iter().filter(|&&x| x != 0.0).count(), 1);
    }

    #[test]
    fn midway_event_splits_evenly() {
        // bins=4 over [0, 60]: centres at 0, 20, 40, 60; midway 1..2 is t=30
        let s = EventStream::new(4, 4, 0, 60, vec![ev(30, 3, 0, -1)]).unwrap();
        let v = voxelize(&s, 4).unwrap();
        assert!((v.at(1, 0, 3) + 0.5).abs() < 1e-12);
        assert!((v.at(2, 0, 3) + 0.5).abs() < 1e-12);
        assert!((v.total_mass() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn stream_validation() {
        assert!(voxelize(&EventStream::empty(2, 2, 0, 10).unwrap(), 0).is_err());
        assert!(EventStream::new(2, 2, 0, 10, vec![ev(5, 2, 0, 1)]).is_err());
        assert!(EventStream::new(2, 2, 0, 10, vec![ev(5, 0, 0, 1), ev(4, 0, 0, 1)]).is_err());
        assert!(EventStream::new(2, 2, 0, 10, vec![ev(11, 0, 0, 1)]).is_err());
        assert!(EventStream::new(2, 2, 0, 10, vec![ev(1, 0, 0, 0)]).is_err());
        assert!(EventStream::new(2, 2, 10, 10, vec![]).is_err());
    }

    fn frame(v: f32) -> ImageTensor {
        ImageTensor::constant(1, 2, 2, v).unwrap()
    }

    #[test]
    fn constant_video_has_no_events() {
        let frames = vec![frame(0.4); 5];
        let s = simulate_events(&frames, &[0, 10, 20, 30, 40], &EventSimConfig::default()).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn simulator_rejects_bad_input() {
        let cfg = EventSimConfig::default();
        assert!(simulate_events(&[frame(0.1)], &[0], &cfg).is_err());
        assert!(simulate_events(&[frame(0.1), frame(0.2)], &[5, 5], &cfg).is_err());
        let other = ImageTensor::constant(1, 3, 2, 0.2).unwrap();
        assert!(simulate_events(&[frame(0.1), other], &[0, 5], &cfg).is_err());
        let bad = EventSimConfig { threshold_c: 0.0, ..cfg };
        assert!(simulate_events(&[frame(0.1), frame(0.2)], &[0, 5], &bad).is_err());
    }

    #[test]
    fn refractory_period_drops_close_events() {
        let cfg = EventSimConfig {
            threshold_c: 0.1,
            log_eps: 1e-3,
            refractory_us: 1000,
        };
        let frames = vec![frame(0.1), frame(0.9)];
        let all = simulate_events(&frames, &[0, 100], &EventSimConfig { refractory_us: 0, ..cfg }).unwrap();
        let some = simulate_events(&frames, &[0, 100], &cfg).unwrap();
        assert!(all.len() > 4);
        assert_eq!(some.len(), 4); // one per pixel
    }

    #[test]
    fn blur_of_constants_and_pairs() {
        let c = synthesize_blur(&vec![frame(0.3); 49]).unwrap();
        assert!(c.tensor().data().iter().all(|&v| (v - 0.3).abs() < 1e-7));
        let p = synthesize_blur(&[frame(0.0), frame(1.0)]).unwrap();
        assert!(p.tensor().data().iter().all(|&v| v == 0.5));
        assert!(synthesize_blur(&[]).is_err());
    }

    #[test]
    fn edi_without_events_returns_blurry() {
        let b = ImageTensor::new(Tensor::from_fn([1, 3, 4, 4], |_, c, y, x| (c + y + x) as f32 / 12.0), crate::geometry::Role::Intensity).unwrap();
        let s = EventStream::empty(4, 4, 0, 4800).unwrap();
        for m in [1, 3, 7] {
            let out = edi_deblur(&b, &s, 0.2, m).unwrap();
            assert_eq!(out.len(), m);
            for o in out {
                assert_eq!(o.tensor(), b.tensor());
            }
        }
        assert!(edi_deblur(&b, &s, 0.0, 3).is_err());
    }

    #[test]
    fn stev_round_trip_and_corruption() {
        let s = EventStream::new(8, 4, 100, 900, vec![ev(100, 1, 2, 1), ev(450, 7, 3, -1), ev(900, 0, 0, 1)]).unwrap();
        let bytes = encode_stev(&s);
        assert_eq!(bytes.len(), STEV_HEADER_LEN + 3 * STEV_RECORD_LEN);
        assert_eq!(decode_stev(&bytes).unwrap(), s);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_stev(&bad), Err(StedError::Format(_))));
        assert!(matches!(decode_stev(&bytes[..bytes.len() - 1]), Err(StedError::Format(_))));
    }
}
