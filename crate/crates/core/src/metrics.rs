//! Image and disparity quality metrics. All accumulation is in `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, StedError};
use crate::tensor::{Real, Tensor};

/// PSNR reported for identical inputs.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

fn same<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(StedError::shape(format!("metric inputs {:?} vs {:?}", a.shape(), b.shape())));
    }
    if a.numel() == 0 {
        return Err(StedError::invalid("metric on empty tensor"));
    }
    Ok(())
}

pub fn mse<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same(a, b)?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    Ok(s / a.numel() as f64)
}

/// `10 log10(peak^2 / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr<T: Real>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m <= 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / m).log10()).min(PSNR_CAP))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let x = i as f64 - r;
            (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of one plane.
fn filter_valid(x: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for xo in 0..ow {
            rows[y * ow + xo] = (0..n).map(|i| k[i] * x[y * w + xo + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for yo in 0..oh {
        for xo in 0..ow {
            out[yo * ow + xo] = (0..n).map(|i| k[i] * rows[(yo + i) * ow + xo]).sum();
        }
    }
    out
}

/// Mean SSIM over valid window positions, channels and batch items, with
/// an 11×11 Gaussian window (σ = 1.5) and stabilisers `(0.01 L)^2`,
/// `(0.03 L)^2`.
pub fn ssim<T: Real>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    same(a, b)?;
    let [n, c, h, w] = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(StedError::shape(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}")));
    }
    let k = gaussian_window();
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        for j in 0..c {
            let pa: Vec<f64> = a.plane(i, j).iter().map(|v| v.as_f64()).collect();
            let pb: Vec<f64> = b.plane(i, j).iter().map(|v| v.as_f64()).collect();
            let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
            let mu_a = filter_valid(&pa, h, w, &k);
            let mu_b = filter_valid(&pb, h, w, &k);
            let aa = filter_valid(&prod(&pa, &pa), h, w, &k);
            let bb = filter_valid(&prod(&pb, &pb), h, w, &k);
            let ab = filter_valid(&prod(&pa, &pb), h, w, &k);
            for p in 0..mu_a.len() {
                let (ma, mb) = (mu_a[p], mu_b[p]);
                let va = aa[p] - ma * ma;
                let vb = bb[p] - mb * mb;
                let cov = ab[p] - ma * mb;
                let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
                let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
                total += num / den;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

fn masked_errors<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>, mask: Option<&[bool]>) -> Result<Vec<f64>> {
    same(pred, gt)?;
    if let Some(m) = mask {
        if m.len() != pred.numel() {
            return Err(StedError::shape(format!("mask has {} entries for {} pixels", m.len(), pred.numel())));
        }
    }
    let errs: Vec<f64> = pred
        .data()
        .iter()
        .zip(gt.data())
        .enumerate()
        .filter(|(i, _)| mask.is_none_or(|m| m[*i]))
        .map(|(_, (p, g))| (p.as_f64() - g.as_f64()).abs())
        .collect();
    if errs.is_empty() {
        return Err(StedError::invalid("empty evaluation mask"));
    }
    Ok(errs)
}

/// Mean absolute disparity error over the mask (pixels).
pub fn epe<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>, mask: Option<&[bool]>) -> Result<f64> {
    let e = masked_errors(pred, gt, mask)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

/// Percentage of masked pixels whose error exceeds `tau`.
pub fn bad_pixel_ratio<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>, tau: f64, mask: Option<&[bool]>) -> Result<f64> {
    let e = masked_errors(pred, gt, mask)?;
    Ok(100.0 * e.iter().filter(|&&v| v > tau).count() as f64 / e.len() as f64)
}

/// One serialised metric value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub n_samples: usize,
    pub config_hash: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_is_normalised() {
        let k = gaussian_window();
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(k[0], k[10]);
    }

    #[test]
    fn empty_mask_is_error() {
        let a = Tensor::<f64>::zeros([1, 1, 2, 2]);
        assert!(epe(&a, &a, Some(&[false; 4])).is_err());
        assert!(epe(&a, &a, Some(&[true; 3])).is_err());
        assert_eq!(epe(&a, &a, Some(&[true, false, false, false])).unwrap(), 0.0);
    }

    #[test]
    fn ssim_needs_window() {
        let a = Tensor::<f64>::zeros([1, 1, 8, 8]);
        assert!(ssim(&a, &a, 1.0).is_err());
    }
}
