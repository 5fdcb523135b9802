//! Coarse cross-modal disparity estimation.
//!
//! Both modalities are fed at four resolutions produced by pixel unshuffle
//! (factors 8, 4, 2, 1). Every scale encodes the blurry image and the voxel
//! grid separately, fuses them with a pyramid attention gate and decodes
//! with the upsampled decoder state of the coarser scale. The 1/8 scale
//! predicts an initial map; finer scales add residuals on top of the ×2
//! bilinear upsampled (and ×2 rescaled) coarser estimate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Result, StedError};
use crate::nn::{Conv2d, ParamStore};
use crate::tensor::Real;

/// Unshuffle factors, coarse to fine.
pub const SCALES: [usize; 4] = [8, 4, 2, 1];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DispNetConfig {
    /// Feature width per scale, fine to coarse (1, 1/2, 1/4, 1/8).
    pub widths: [usize; 4],
    pub pa_kernel_sizes: [usize; 3],
    /// Upper clamp of the full-resolution disparity (pixels).
    pub max_disparity: f64,
    pub image_channels: usize,
    pub bins: usize,
}

impl Default for DispNetConfig {
    fn default() -> Self {
        Self {
            widths: [32, 48, 64, 96],
            pa_kernel_sizes: [1, 3, 5],
            max_disparity: 48.0,
            image_channels: 3,
            bins: 6,
        }
    }
}

impl DispNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pa_kernel_sizes != [1, 3, 5] {
            return Err(StedError::invalid("pyramid attention uses 1x1, 3x3 and 5x5 branches"));
        }
        if self.widths.contains(&0) || self.image_channels == 0 || self.bins == 0 {
            return Err(StedError::invalid("dispnet widths and channel counts must be positive"));
        }
        if !(self.max_disparity > 0.0) {
            return Err(StedError::invalid("max_disparity must be positive"));
        }
        Ok(())
    }

    fn width_at(&self, level: usize) -> usize {
        // level 0 is the coarsest (1/8) scale
        self.widths[3 - level]
    }
}

/// Per-scale layers.
#[derive(Clone, Debug)]
struct ScaleBlock {
    factor: usize,
    enc_img: [Conv2d; 2],
    enc_evt: [Conv2d; 2],
    pa: [Conv2d; 3],
    dec: Conv2d,
    head: Conv2d,
}

/// Result of one forward pass.
#[derive(Clone, Debug)]
pub struct DispOutput {
    /// Final clamped full-resolution disparity `[N, 1, H, W]`.
    pub disparity: Var,
    /// Unclamped full-resolution disparity.
    pub raw: Var,
    /// Full-resolution contributions of each scale (coarse to fine); they sum
    /// to `raw`.
    pub terms: Vec<Var>,
    /// Per-scale estimates in that scale's pixel units, coarse to fine.
    pub per_scale: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct DispNet {
    pub cfg: DispNetConfig,
    blocks: Vec<ScaleBlock>,
}

impl DispNet {
    pub fn new(cfg: DispNetConfig) -> Result<Self> {
        cfg.validate()?;
        let mut blocks = Vec::with_capacity(4);
        for (level, &factor) in SCALES.iter().enumerate() {
            let w = cfg.width_at(level);
            let p = format!("dispnet.s{factor}");
            let img_in = cfg.image_channels * factor * factor;
            let evt_in = cfg.bins * factor * factor;
            let dec_in = if level == 0 { 2 * w } else { 2 * w + cfg.width_at(level - 1) };
            let [k1, k3, k5] = cfg.pa_kernel_sizes;
            blocks.push(ScaleBlock {
                factor,
                enc_img: [
                    Conv2d::new(format!("{p}.enc_img.0"), img_in, w, 3),
                    Conv2d::new(format!("{p}.enc_img.1"), w, w, 3),
                ],
                enc_evt: [
                    Conv2d::new(format!("{p}.enc_evt.0"), evt_in, w, 3),
                    Conv2d::new(format!("{p}.enc_evt.1"), w, w, 3),
                ],
                pa: [
                    Conv2d::new(format!("{p}.pa.k{k1}"), 2 * w, 2, k1),
                    Conv2d::new(format!("{p}.pa.k{k3}"), 2 * w, 2, k3),
                    Conv2d::new(format!("{p}.pa.k{k5}"), 2 * w, 2, k5),
                ],
                dec: Conv2d::new(format!("{p}.dec"), dec_in, w, 3),
                head: Conv2d::new(format!("{p}.head"), w, 1, 3),
            });
        }
        Ok(Self { cfg, blocks })
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) {
        for b in &self.blocks {
            for c in b.enc_img.iter().chain(&b.enc_evt).chain(std::iter::once(&b.dec)) {
                c.init(store, rng);
            }
            for c in &b.pa {
                c.init(store, rng);
            }
            // small heads: the initial estimate starts near zero disparity
            b.head.init_scaled(store, rng, 1e-3);
        }
    }

    /// Names of every parameter this network owns.
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for b in &self.blocks {
            for c in b.enc_img.iter().chain(&b.enc_evt).chain(&b.pa).chain([&b.dec, &b.head]) {
                out.push(c.weight_name());
                out.push(c.bias_name());
            }
        }
        out
    }

    /// `blurry`: `[N, image_channels, H, W]`, `voxel`: `[N, bins, H, W]`.
    pub fn forward<T: Real>(&self, g: &Graph<T>, p: &ParamStore<T>, blurry: Var, voxel: Var) -> Result<DispOutput> {
        let [n, ic, h, w] = g.shape(blurry);
        let [vn, bins, vh, vw] = g.shape(voxel);
        if (vn, vh, vw) != (n, h, w) {
            return Err(StedError::shape(format!(
                "dispnet: image {:?} and voxel {:?} disagree",
                g.shape(blurry),
                g.shape(voxel)
            )));
        }
        if ic != self.cfg.image_channels || bins != self.cfg.bins {
            return Err(StedError::shape(format!(
                "dispnet expects {} image channels and {} bins, got {ic} and {bins}",
                self.cfg.image_channels, self.cfg.bins
            )));
        }
        if h % 8 != 0 || w % 8 != 0 {
            return Err(StedError::shape(format!("dispnet needs H, W divisible by 8, got {h}x{w}")));
        }
        let two = T::lit(2.0);
        let mut dec_prev: Option<Var> = None;
        let mut disp_prev: Option<Var> = None;
        let mut per_scale = Vec::with_capacity(4);
        let mut residuals = Vec::with_capacity(4);
        for b in &self.blocks {
            let img = g.pixel_unshuffle(blurry, b.factor)?;
            let evt = g.pixel_unshuffle(voxel, b.factor)?;
            let fi = b.enc_img[0].forward_act(g, p, img)?;
            let fi = b.enc_img[1].forward_act(g, p, fi)?;
            let fe = b.enc_evt[0].forward_act(g, p, evt)?;
            let fe = b.enc_evt[1].forward_act(g, p, fe)?;
            let fused = pyramid_attention(g, p, &b.pa, fi, fe)?;
            let dec_in = match dec_prev {
                None => fused,
                Some(prev) => {
                    let up = g.upsample2x(prev);
                    g.concat(&[fused, up])?
                }
            };
            let dec = b.dec.forward_act(g, p, dec_in)?;
            let head = b.head.forward(g, p, dec)?;
            let disp = match disp_prev {
                None => head,
                Some(prev) => {
                    let up = g.scale(g.upsample2x(prev), two);
                    g.add(up, head)?
                }
            };
            residuals.push(head);
            per_scale.push(disp);
            dec_prev = Some(dec);
            disp_prev = Some(disp);
        }
        let raw = disp_prev.expect("four scales");
        // contribution of each scale's head at full resolution
        let mut terms = Vec::with_capacity(4);
        for (level, &r) in residuals.iter().enumerate() {
            let mut t = r;
            for _ in level..3 {
                t = g.scale(g.upsample2x(t), two);
            }
            terms.push(t);
        }
        let disparity = g.clamp(raw, T::zero(), T::lit(self.cfg.max_disparity));
        Ok(DispOutput {
            disparity,
            raw,
            terms,
            per_scale,
        })
    }
}

/// Gate logits are the sum of three parallel convolutions over the joint
/// features; the two sigmoid gates scale the image and event branches.
fn pyramid_attention<T: Real>(g: &Graph<T>, p: &ParamStore<T>, pa: &[Conv2d; 3], fi: Var, fe: Var) -> Result<Var> {
    let joint = g.concat(&[fi, fe])?;
    let mut logits = pa[0].forward(g, p, joint)?;
    for c in &pa[1..] {
        let l = c.forward(g, p, joint)?;
        logits = g.add(logits, l)?;
    }
    let gates = g.sigmoid(logits);
    let gi = g.slice_channels(gates, 0, 1)?;
    let ge = g.slice_channels(gates, 1, 1)?;
    let ai = g.mul_bcast(fi, gi)?;
    let ae = g.mul_bcast(fe, ge)?;
    g.concat(&[ai, ae])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> DispNetConfig {
        DispNetConfig {
            widths: [4, 4, 6, 8],
            image_channels: 1,
            bins: 2,
            ..Default::default()
        }
    }

    fn inputs(n: usize, h: usize, w: usize, seed: u64) -> (Tensor<f64>, Tensor<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Tensor::from_fn([n, 1, h, w], |_, _, _, _| rng.random::<f64>());
        let b = Tensor::from_fn([n, 2, h, w], |_, _, _, _| rng.random::<f64>() * 2.0 - 1.0);
        (a, b)
    }

    #[test]
    fn rejects_bad_dims() {
        let net = DispNet::new(small()).unwrap();
        let mut p = ParamStore::<f64>::new();
        net.init(&mut p, &mut ChaCha8Rng::seed_from_u64(0));
        let g = Graph::new();
        let (a, b) = inputs(1, 12, 16, 1);
        let (a, b) = (g.input(a), g.input(b));
        assert!(net.forward(&g, &p, a, b).is_err());
        let (a, _) = inputs(1, 16, 16, 1);
        let (_, b) = inputs(1, 8, 16, 1);
        let (a, b) = (g.input(a), g.input(b));
        assert!(net.forward(&g, &p, a, b).is_err());
    }

    #[test]
    fn rejects_wrong_pa_kernels() {
        let cfg = DispNetConfig {
            pa_kernel_sizes: [1, 3, 7],
            ..small()
        };
        assert!(DispNet::new(cfg).is_err());
    }

    #[test]
    fn param_names_match_init() {
        let net = DispNet::new(small()).unwrap();
        let mut p = ParamStore::<f32>::new();
        net.init(&mut p, &mut ChaCha8Rng::seed_from_u64(0));
        let mut names = net.param_names();
        names.sort();
        assert_eq!(names, p.names().cloned().collect::<Vec<_>>());
    }

    #[test]
    fn residual_terms_telescope() {
        let net = DispNet::new(small()).unwrap();
        let mut p = ParamStore::<f64>::new();
        net.init(&mut p, &mut ChaCha8Rng::seed_from_u64(3));
        // make the heads non-trivial
        for (k, t) in p.iter_mut() {
            if k.contains("head") {
                *t = t.map(|v| v * 1000.0);
            }
        }
        let g = Graph::new();
        let (a, b) = inputs(2, 16, 24, 5);
        let out = net.forward(&g, &p, g.input(a), g.input(b)).unwrap();
        let raw = g.value(out.raw);
        let mut sum = Tensor::zeros(raw.shape());
        for t in &out.terms {
            sum.add_inplace(&g.value(*t));
        }
        for (x, y) in raw.data().iter().zip(sum.data()) {
            assert!((x - y).abs() < 1e-6);
        }
        assert!(raw.max_abs() > 1e-3);
    }
}
