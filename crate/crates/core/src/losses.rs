//! Training objectives on graph values.
//!
//! Frame stacks are `[N, M*C, H, W]` with frame `m` in channels
//! `m*C..(m+1)*C`. The slice-based helpers evaluate the same objectives on
//! plain tensors.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Result, StedError};
use crate::perceptual::PerceptualExtractor;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub dblr: f64,
    pub perc: f64,
    pub tv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            dblr: 1.0,
            perc: 0.002,
            tv: 0.0005,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (n, v) in [("dblr", self.dblr), ("perc", self.perc), ("tv", self.tv)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(StedError::invalid(format!("loss weight {n} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Values of every term, for logging.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub dblr: f64,
    pub perc: f64,
    pub tv: f64,
    pub total: f64,
}

/// Mean absolute frame error averaged over frames.
pub fn dblr<T: Real>(g: &Graph<T>, pred: Var, gt: Var) -> Result<Var> {
    let d = g.sub(pred, gt)?;
    Ok(g.mean_abs(d))
}

/// Mean squared feature distance averaged over frames. `channels` is the
/// per-frame channel count.
pub fn perc<T: Real>(g: &Graph<T>, ex: &PerceptualExtractor<T>, pred: Var, gt: Var, channels: usize) -> Result<Var> {
    let [n, mc, h, w] = g.shape(pred);
    if g.shape(gt) != [n, mc, h, w] {
        return Err(StedError::shape(format!("perceptual loss: {:?} vs {:?}", g.shape(pred), g.shape(gt))));
    }
    if channels == 0 || mc % channels != 0 {
        return Err(StedError::shape(format!("{mc} channels do not split into frames of {channels}")));
    }
    let frames = [n * mc / channels, channels, h, w];
    let fp = ex.features(g, g.reshape(pred, frames)?)?;
    let fg = ex.features(g, g.reshape(gt, frames)?)?;
    let d = g.sub(fp, fg)?;
    Ok(g.mean_square(d))
}

/// Anisotropic TV with forward differences, normalised by element count.
pub fn tv<T: Real>(g: &Graph<T>, disp: Var) -> Var {
    g.total_variation(disp)
}

/// Weighted sum. Terms with zero weight are skipped entirely (the
/// extractor is then not needed). `extra_tv` adds further disparity fields
/// to the TV term, averaged with the main one.
pub fn total<T: Real>(
    g: &Graph<T>,
    weights: &LossWeights,
    ex: Option<&PerceptualExtractor<T>>,
    pred: Var,
    gt: Var,
    channels: usize,
    disp: Var,
    extra_tv: &[Var],
) -> Result<(Var, LossBreakdown)> {
    weights.validate()?;
    let l_dblr = dblr(g, pred, gt)?;
    let mut loss = g.scale(l_dblr, T::lit(weights.dblr));
    let mut out = LossBreakdown {
        dblr: g.scalar(l_dblr).as_f64(),
        ..Default::default()
    };
    if weights.perc != 0.0 {
        let ex = ex.ok_or_else(|| StedError::invalid("perceptual weight set without an extractor"))?;
        let l = perc(g, ex, pred, gt, channels)?;
        out.perc = g.scalar(l).as_f64();
        loss = g.add(loss, g.scale(l, T::lit(weights.perc)))?;
    }
    let mut l_tv = tv(g, disp);
    if !extra_tv.is_empty() {
        for &d in extra_tv {
            l_tv = g.add(l_tv, tv(g, d))?;
        }
        l_tv = g.scale(l_tv, T::lit(1.0 / (1 + extra_tv.len()) as f64));
    }
    out.tv = g.scalar(l_tv).as_f64();
    if weights.tv != 0.0 {
        loss = g.add(loss, g.scale(l_tv, T::lit(weights.tv)))?;
    }
    out.total = g.scalar(loss).as_f64();
    Ok((loss, out))
}

fn stack_frames<T: Real>(frames: &[Tensor<T>]) -> Result<Tensor<T>> {
    if frames.is_empty() {
        return Err(StedError::invalid("no frames"));
    }
    let refs: Vec<&Tensor<T>> = frames.iter().collect();
    Tensor::concat_channels(&refs)
}

fn check_pair<T: Real>(pred: &[Tensor<T>], gt: &[Tensor<T>]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(StedError::shape(format!("{} predicted frames vs {} targets", pred.len(), gt.len())));
    }
    for (a, b) in pred.iter().zip(gt) {
        if a.shape() != b.shape() {
            return Err(StedError::shape(format!("frame shapes {:?} vs {:?}", a.shape(), b.shape())));
        }
    }
    Ok(())
}

/// Deblurring loss of two frame lists.
pub fn l_dblr<T: Real>(pred: &[Tensor<T>], gt: &[Tensor<T>]) -> Result<f64> {
    check_pair(pred, gt)?;
    let g = Graph::new();
    let p = g.input(stack_frames(pred)?);
    let t = g.input(stack_frames(gt)?);
    Ok(g.scalar(dblr(&g, p, t)?).as_f64())
}

/// Perceptual loss of two frame lists.
pub fn l_perc<T: Real>(pred: &[Tensor<T>], gt: &[Tensor<T>], ex: &PerceptualExtractor<T>) -> Result<f64> {
    check_pair(pred, gt)?;
    let g = Graph::new();
    let c = pred[0].c();
    let p = g.input(stack_frames(pred)?);
    let t = g.input(stack_frames(gt)?);
    Ok(g.scalar(perc(&g, ex, p, t, c)?).as_f64())
}

/// TV of a disparity tensor.
pub fn l_tv<T: Real>(disp: &Tensor<T>) -> f64 {
    crate::autograd::tv_value(disp)
}

/// Total loss of two frame lists and a disparity field.
pub fn total_loss<T: Real>(
    pred: &[Tensor<T>],
    gt: &[Tensor<T>],
    disp: &Tensor<T>,
    weights: &LossWeights,
    ex: Option<&PerceptualExtractor<T>>,
) -> Result<LossBreakdown> {
    check_pair(pred, gt)?;
    let g = Graph::new();
    let c = pred[0].c();
    let p = g.input(stack_frames(pred)?);
    let t = g.input(stack_frames(gt)?);
    let d = g.input(disp.clone());
    Ok(total(&g, weights, ex, p, t, c, d, &[])?.1)
}
