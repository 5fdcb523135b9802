//! Images, disparity maps, horizontal backward warping and pixel
//! (un)shuffling.
//!
//! Disparity convention (`x_minus_d`): a warped output samples its source at
//! `(y, x - d(y, x))`, so a positive disparity pulls content from the left.
//! Samples that fall outside `[0, W-1]` read zero.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, StedError};
use crate::events::VoxelGrid;
use crate::kernels;
use crate::tensor::{Real, Tensor};

pub const DISPARITY_CONVENTION: &str = "x_minus_d";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Intensity,
    Feature,
    Voxel,
}

/// `C x H x W` image stored as a `[1, C, H, W]` f32 tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    tensor: Tensor<f32>,
    role: Role,
}

impl ImageTensor {
    pub fn new(tensor: Tensor<f32>, role: Role) -> Result<Self> {
        let [n, c, h, w] = tensor.shape();
        if n != 1 || c == 0 || h == 0 || w == 0 {
            return Err(StedError::shape(format!(
                "image tensor must be [1, C>0, H>0, W>0], got {:?}",
                tensor.shape()
            )));
        }
        if role == Role::Intensity && !tensor.data().iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(StedError::invalid("intensity values must lie in [0, 1]"));
        }
        Ok(Self { tensor, role })
    }

    pub fn intensity(tensor: Tensor<f32>) -> Result<Self> {
        Self::new(tensor, Role::Intensity)
    }

    /// Intensity image from unconstrained values, clipped to `[0, 1]`.
    pub fn intensity_clipped(tensor: Tensor<f32>) -> Result<Self> {
        Self::new(tensor.map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) }), Role::Intensity)
    }

    pub fn constant(channels: usize, height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(Tensor::full([1, channels, height, width], value), Role::Intensity)
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        self.tensor
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn channels(&self) -> usize {
        self.tensor.c()
    }

    pub fn height(&self) -> usize {
        self.tensor.h()
    }

    pub fn width(&self) -> usize {
        self.tensor.w()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.tensor.h(), self.tensor.w())
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.tensor.at(0, c, y, x)
    }

    /// Rec. 601 luma for 3-channel images, identity for 1 channel.
    pub fn luma(&self) -> Vec<f64> {
        let (h, w) = self.dims();
        match self.channels() {
            3 => {
                let (r, g, b) = (self.tensor.plane(0, 0), self.tensor.plane(0, 1), self.tensor.plane(0, 2));
                (0..h * w)
                    .map(|i| 0.299 * r[i] as f64 + 0.587 * g[i] as f64 + 0.114 * b[i] as f64)
                    .collect()
            }
            _ => {
                let c = self.channels() as f64;
                (0..h * w)
                    .map(|i| (0..self.channels()).map(|k| self.tensor.plane(0, k)[i] as f64).sum::<f64>() / c)
                    .collect()
            }
        }
    }
}

/// Per-pixel horizontal displacement field, `H x W`.
#[derive(Clone, Debug, PartialEq)]
pub struct DisparityMap {
    data: Tensor<f32>,
}

impl DisparityMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let data = Tensor::from_vec([1, 1, height, width], data)?;
        Self::from_tensor(data)
    }

    pub fn from_tensor(data: Tensor<f32>) -> Result<Self> {
        let [n, c, h, w] = data.shape();
        if n != 1 || c != 1 || h == 0 || w == 0 {
            return Err(StedError::shape(format!("disparity must be [1,1,H,W], got {:?}", data.shape())));
        }
        if !data.is_finite() {
            return Err(StedError::Numerical("disparity contains non-finite values".into()));
        }
        Ok(Self { data })
    }

    pub fn constant(height: usize, width: usize, d: f32) -> Result<Self> {
        Self::new(height, width, vec![d; height * width])
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            data: Tensor::zeros([1, 1, height, width]),
        }
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.data
    }

    pub fn values(&self) -> &[f32] {
        self.data.data()
    }

    pub fn height(&self) -> usize {
        self.data.h()
    }

    pub fn width(&self) -> usize {
        self.data.w()
    }

    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.data.at(0, 0, y, x)
    }

    pub fn mean_abs(&self) -> f64 {
        self.data.data().iter().map(|v| v.abs() as f64).sum::<f64>() / self.data.numel() as f64
    }

    /// Raw little-endian f32 row-major payload plus a JSON sidecar
    /// (`<stem>.raw`, `<stem>.json`).
    pub fn write(&self, raw_path: &Path) -> Result<()> {
        write_raw_f32(raw_path, self.values())?;
        let side = DisparitySidecar {
            height: self.height(),
            width: self.width(),
            convention: DISPARITY_CONVENTION.to_string(),
            dtype: "float32".to_string(),
        };
        fs::write(raw_path.with_extension("json"), serde_json::to_vec_pretty(&side)?)?;
        Ok(())
    }

    pub fn read(raw_path: &Path) -> Result<Self> {
        let side: DisparitySidecar = serde_json::from_slice(&fs::read(raw_path.with_extension("json"))?)?;
        if side.convention != DISPARITY_CONVENTION {
            return Err(StedError::format(format!(
                "unsupported disparity convention `{}`",
                side.convention
            )));
        }
        let data = read_raw_f32(raw_path, side.height * side.width)?;
        Self::new(side.height, side.width, data)
    }
}

#[derive(Serialize, Deserialize)]
struct DisparitySidecar {
    height: usize,
    width: usize,
    convention: String,
    dtype: String,
}

pub(crate) fn write_raw_f32(path: &Path, values: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

pub(crate) fn read_raw_f32(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path)?;
    if bytes.len() != expected * 4 {
        return Err(StedError::format(format!(
            "{}: expected {} bytes, found {}",
            path.display(),
            expected * 4,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Warps every channel of `src` (`[N, C, H, W]`) with a single-channel
/// disparity (`[N, 1, H, W]`).
pub fn warp_tensor<T: Real>(src: &Tensor<T>, disp: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = src.shape();
    let [dn, dc, dh, dw] = disp.shape();
    if dn != n || dh != h || dw != w || dc == 0 || c % dc != 0 {
        return Err(StedError::shape(format!(
            "warp: disparity {:?} incompatible with source {:?}",
            disp.shape(),
            src.shape()
        )));
    }
    if !disp.is_finite() {
        return Err(StedError::Numerical("non-finite disparity".into()));
    }
    let mut out = Tensor::zeros(src.shape());
    let (sp, dp) = (c * h * w, dc * h * w);
    for i in 0..n {
        kernels::warp_forward(
            &src.data()[i * sp..(i + 1) * sp],
            &disp.data()[i * dp..(i + 1) * dp],
            c,
            dc,
            h,
            w,
            &mut out.data_mut()[i * sp..(i + 1) * sp],
        );
    }
    Ok(out)
}

/// Horizontal bilinear backward warp of an image by a disparity map.
pub fn backward_warp(src: &ImageTensor, disp: &DisparityMap) -> Result<ImageTensor> {
    if src.dims() != (disp.height(), disp.width()) {
        return Err(StedError::shape(format!(
            "warp: image {:?} vs disparity {}x{}",
            src.dims(),
            disp.height(),
            disp.width()
        )));
    }
    let out = warp_tensor(src.tensor(), disp.tensor())?;
    match src.role() {
        // convex blends of [0, 1] values; clipping only absorbs rounding
        Role::Intensity => ImageTensor::intensity_clipped(out),
        role => ImageTensor::new(out, role),
    }
}

/// Warps every temporal bin of `voxel` with the single exposure disparity.
pub fn align_events(voxel: &VoxelGrid, disp: &DisparityMap) -> Result<VoxelGrid> {
    let t = voxel.tensor();
    if (t.h(), t.w()) != (disp.height(), disp.width()) {
        return Err(StedError::shape(format!(
            "align_events: voxel {}x{} vs disparity {}x{}",
            t.h(),
            t.w(),
            disp.height(),
            disp.width()
        )));
    }
    let d: Tensor<f64> = disp.tensor().cast();
    let out = warp_tensor(t, &d)?;
    VoxelGrid::from_tensor(out, voxel.window())
}

fn unshuffle_tensor<T: Real>(t: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = t.shape();
    if r == 0 || h % r != 0 || w % r != 0 {
        return Err(StedError::shape(format!("pixel_unshuffle: {h}x{w} not divisible by {r}")));
    }
    let mut out = Tensor::zeros([n, c * r * r, h / r, w / r]);
    let per = c * h * w;
    for i in 0..n {
        kernels::pixel_unshuffle(&t.data()[i * per..(i + 1) * per], c, h, w, r, &mut out.data_mut()[i * per..(i + 1) * per]);
    }
    Ok(out)
}

fn shuffle_tensor<T: Real>(t: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = t.shape();
    if r == 0 || c % (r * r) != 0 {
        return Err(StedError::shape(format!("pixel_shuffle: {c} channels not divisible by {}", r * r)));
    }
    let oc = c / (r * r);
    let mut out = Tensor::zeros([n, oc, h * r, w * r]);
    let per = c * h * w;
    for i in 0..n {
        kernels::pixel_shuffle(&t.data()[i * per..(i + 1) * per], oc, h * r, w * r, r, &mut out.data_mut()[i * per..(i + 1) * per]);
    }
    Ok(out)
}

/// Space-to-depth: `(C, H, W) -> (C*r*r, H/r, W/r)`. Output channel
/// `c*r*r + i*r + j` holds the pixels at row offset `i`, column offset `j`.
pub fn pixel_unshuffle(t: &ImageTensor, r: usize) -> Result<ImageTensor> {
    let out = unshuffle_tensor(t.tensor(), r)?;
    ImageTensor::new(out, t.role())
}

/// Depth-to-space, the inverse of [`pixel_unshuffle`].
pub fn pixel_shuffle(t: &ImageTensor, r: usize) -> Result<ImageTensor> {
    let out = shuffle_tensor(t.tensor(), r)?;
    ImageTensor::new(out, t.role())
}
