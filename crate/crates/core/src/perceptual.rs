//! Frozen feature extractor for the perceptual loss.
//!
//! A VGG-style stack of 3×3 convolutions with ReLU and 2×2 pooling,
//! truncated after the third block's third convolution. Weights are either
//! seeded-random or loaded from a checkpoint file; they never receive
//! gradients.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::checkpoint;
use crate::error::{Result, StedError};
use crate::nn::{Conv2d, ParamStore};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layer {
    /// 3×3 convolution with this many output channels, followed by the
    /// activation.
    Conv(usize),
    /// 2×2 average pooling.
    Pool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Weights {
    Seeded(u64),
    File(std::path::PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerceptualConfig {
    pub plan: Vec<Layer>,
    pub in_channels: usize,
    /// Slope of the activation for negative inputs: 0 is ReLU, 1 makes the
    /// extractor affine.
    pub negative_slope: f64,
    pub weights: Weights,
}

impl PerceptualConfig {
    /// Reduced-width conv3-3 stack with seeded weights.
    pub fn desk(in_channels: usize, seed: u64) -> Self {
        use Layer::*;
        Self {
            plan: vec![Conv(8), Conv(8), Pool, Conv(16), Conv(16), Pool, Conv(32), Conv(32), Conv(32)],
            in_channels,
            negative_slope: 0.0,
            weights: Weights::Seeded(seed),
        }
    }

    /// Full-width conv3-3 stack (64-64-128-128-256-256-256) for externally
    /// supplied weights.
    pub fn vgg_conv3_3(in_channels: usize, path: impl Into<std::path::PathBuf>) -> Self {
        use Layer::*;
        Self {
            plan: vec![Conv(64), Conv(64), Pool, Conv(128), Conv(128), Pool, Conv(256), Conv(256), Conv(256)],
            in_channels,
            negative_slope: 0.0,
            weights: Weights::File(path.into()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PerceptualExtractor<T: Real> {
    pub cfg: PerceptualConfig,
    convs: Vec<Conv2d>,
    params: ParamStore<T>,
}

impl<T: Real> PerceptualExtractor<T> {
    pub fn new(cfg: PerceptualConfig) -> Result<Self> {
        let convs = Self::layers(&cfg)?;
        let params = match &cfg.weights {
            Weights::Seeded(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let mut p = ParamStore::new();
                for c in &convs {
                    // He init for ReLU
                    let std = (2.0 / (c.cin * 9) as f64).sqrt();
                    c.init_scaled(&mut p, &mut rng, std);
                }
                p
            }
            Weights::File(path) => Self::load(&convs, path)?,
        };
        Ok(Self {
            cfg,
            convs,
            params: params.frozen(),
        })
    }

    fn layers(cfg: &PerceptualConfig) -> Result<Vec<Conv2d>> {
        if cfg.in_channels == 0 || !cfg.plan.iter().any(|l| matches!(l, Layer::Conv(_))) {
            return Err(StedError::invalid("perceptual extractor needs input channels and a conv layer"));
        }
        let mut cin = cfg.in_channels;
        let mut convs = Vec::new();
        for layer in &cfg.plan {
            if let Layer::Conv(w) = *layer {
                if w == 0 {
                    return Err(StedError::invalid("zero-width perceptual layer"));
                }
                convs.push(Conv2d::new(format!("perc.conv{}", convs.len()), cin, w, 3));
                cin = w;
            }
        }
        Ok(convs)
    }

    fn load(convs: &[Conv2d], path: &Path) -> Result<ParamStore<T>> {
        let stored = checkpoint::read_params(path)?;
        let mut p = ParamStore::new();
        for c in convs {
            for (name, shape) in [
                (c.weight_name(), [c.cout, c.cin, 3, 3]),
                (c.bias_name(), [1, c.cout, 1, 1]),
            ] {
                let t = stored.get(&name).ok_or_else(|| StedError::MissingParam(name.clone()))?;
                t.expect_shape(shape)?;
                p.insert(name, t.cast());
            }
        }
        Ok(p)
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    /// Features of `[N, in_channels, H, W]` images.
    pub fn features(&self, g: &Graph<T>, x: Var) -> Result<Var> {
        let c = g.shape(x)[1];
        if c != self.cfg.in_channels {
            return Err(StedError::shape(format!(
                "perceptual extractor expects {} channels, got {c}",
                self.cfg.in_channels
            )));
        }
        let slope = T::lit(self.cfg.negative_slope);
        let mut convs = self.convs.iter();
        let mut h = x;
        for layer in &self.cfg.plan {
            h = match layer {
                Layer::Conv(_) => {
                    let conv = convs.next().expect("one conv per plan entry");
                    let y = conv.forward(g, &self.params, h)?;
                    g.leaky_relu(y, slope)
                }
                Layer::Pool => g.avg_pool2(h),
            };
        }
        Ok(h)
    }
}
