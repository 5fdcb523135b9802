//! The full pipeline: coarse disparity, event pre-alignment, deblurring.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::dblrnet::{DblrNet, DblrNetConfig, DblrOutput};
use crate::dispnet::{DispNet, DispNetConfig, DispOutput};
use crate::error::{Result, StedError};
use crate::events::VoxelGrid;
use crate::geometry::{DisparityMap, ImageTensor, Role};
use crate::nn::ParamStore;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dispnet: DispNetConfig,
    pub dblrnet: DblrNetConfig,
    /// When false the coarse disparity is fixed at zero.
    pub use_dispnet: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dispnet: DispNetConfig::default(),
            dblrnet: DblrNetConfig::default(),
            use_dispnet: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.dispnet.validate()?;
        self.dblrnet.validate()?;
        if self.dispnet.image_channels != self.dblrnet.out_channels || self.dispnet.bins != self.dblrnet.bins {
            return Err(StedError::invalid(format!(
                "sub-network channel mismatch: dispnet ({} image, {} bins) vs dblrnet ({} image, {} bins)",
                self.dispnet.image_channels, self.dispnet.bins, self.dblrnet.out_channels, self.dblrnet.bins
            )));
        }
        Ok(())
    }

    pub fn image_channels(&self) -> usize {
        self.dblrnet.out_channels
    }

    pub fn bins(&self) -> usize {
        self.dblrnet.bins
    }

    pub fn frames(&self) -> usize {
        self.dblrnet.frames
    }
}

#[derive(Clone, Debug)]
pub struct ModelOutput {
    /// `[N, M*C, H, W]`.
    pub frames: Var,
    /// Coarse disparity used for alignment, `[N, 1, H, W]`.
    pub disparity: Var,
    pub aligned_voxel: Var,
    pub dispnet: Option<DispOutput>,
    pub dblr: DblrOutput,
}

#[derive(Clone, Debug)]
pub struct StedModel {
    pub cfg: ModelConfig,
    pub dispnet: DispNet,
    pub dblrnet: DblrNet,
}

/// Plain-tensor inference result.
#[derive(Clone, Debug)]
pub struct Inference {
    /// Unclipped frames, role `Feature`.
    pub frames: Vec<ImageTensor>,
    pub disparity: DisparityMap,
    /// Per-stage mean |disparity| of the two BDE directions (b->e, e->b).
    pub stage_magnitudes: Vec<(f64, f64)>,
}

impl StedModel {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            dispnet: DispNet::new(cfg.dispnet.clone())?,
            dblrnet: DblrNet::new(cfg.dblrnet.clone())?,
            cfg,
        })
    }

    /// Fresh parameters. DispNet weights are drawn first, then DblrNet, so a
    /// seed fixes both.
    pub fn init<T: Real>(&self, rng: &mut impl Rng) -> ParamStore<T> {
        let mut p = ParamStore::new();
        if self.cfg.use_dispnet {
            self.dispnet.init(&mut p, rng);
        }
        self.dblrnet.init(&mut p, rng);
        p
    }

    pub fn forward<T: Real>(&self, g: &Graph<T>, p: &ParamStore<T>, blurry: Var, voxel: Var) -> Result<ModelOutput> {
        if self.cfg.use_dispnet {
            let d = self.dispnet.forward(g, p, blurry, voxel)?;
            self.finish(g, p, blurry, voxel, d.disparity, Some(d))
        } else {
            let [n, _, h, w] = g.shape(blurry);
            let zero = g.input(Tensor::zeros([n, 1, h, w]));
            self.finish(g, p, blurry, voxel, zero, None)
        }
    }

    /// Forward with an externally supplied coarse disparity.
    pub fn forward_with_disparity<T: Real>(&self, g: &Graph<T>, p: &ParamStore<T>, blurry: Var, voxel: Var, disparity: Var) -> Result<ModelOutput> {
        self.finish(g, p, blurry, voxel, disparity, None)
    }

    fn finish<T: Real>(&self, g: &Graph<T>, p: &ParamStore<T>, blurry: Var, voxel: Var, disparity: Var, d: Option<DispOutput>) -> Result<ModelOutput> {
        let aligned = g.warp(voxel, disparity)?;
        let dblr = self.dblrnet.forward(g, p, blurry, aligned)?;
        Ok(ModelOutput {
            frames: dblr.frames,
            disparity,
            aligned_voxel: aligned,
            dispnet: d,
            dblr,
        })
    }

    /// Runs one sample through the network without gradient tracking.
    pub fn infer(&self, p: &ParamStore<f32>, blurry: &ImageTensor, voxel: &VoxelGrid) -> Result<Inference> {
        let frozen = p.clone().frozen();
        let g = Graph::<f32>::new();
        let b = g.input(blurry.tensor().clone());
        let v = g.input(voxel.tensor().cast());
        let out = self.forward(&g, &frozen, b, v)?;
        let all = g.value(out.frames);
        if !all.is_finite() {
            return Err(StedError::Numerical("non-finite network output".into()));
        }
        let c = self.cfg.image_channels();
        let frames = (0..self.cfg.frames())
            .map(|m| ImageTensor::new(all.channels(m * c, c), Role::Feature))
            .collect::<Result<Vec<_>>>()?;
        let disparity = DisparityMap::from_tensor((*g.value(out.disparity)).clone())?;
        let stage_magnitudes = stage_magnitudes(&g, &out.dblr);
        Ok(Inference {
            frames,
            disparity,
            stage_magnitudes,
        })
    }
}

/// Mean |disparity| per stage and direction; zeros when BDE is disabled.
pub fn stage_magnitudes<T: Real>(g: &Graph<T>, out: &DblrOutput) -> Vec<(f64, f64)> {
    let mag = |v: Var| {
        let t = g.value(v);
        t.data().iter().map(|x| x.as_f64().abs()).sum::<f64>() / t.numel() as f64
    };
    out.stages
        .iter()
        .map(|s| match s.disparities {
            Some(d) => (mag(d.b_to_e), mag(d.e_to_b)),
            None => (0.0, 0.0),
        })
        .collect()
}
