//! Raw forward/backward kernels over contiguous slices. Shared by the
//! autograd graph and the plain data-level API so both agree bitwise.

use crate::tensor::Real;

/// Unfolds a `C x H x W` plane stack into `(C*k*k) x (H*W)` columns for a
/// stride-1 convolution with `k/2` zero padding.
pub(crate) fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, k: usize, col: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize - pad;
            for kx in 0..k {
                let dx = kx as isize - pad;
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * hw..(row + 1) * hw];
                let (lo, hi) = valid_range(w, dx);
                for y in 0..h {
                    let sy = y as isize + dy;
                    let drow = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize || lo >= hi {
                        drow.fill(T::zero());
                        continue;
                    }
                    let srow = &plane[sy as usize * w..(sy as usize + 1) * w];
                    drow[..lo].fill(T::zero());
                    drow[hi..].fill(T::zero());
                    let s0 = (lo as isize + dx) as usize;
                    drow[lo..hi].copy_from_slice(&srow[s0..s0 + (hi - lo)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into `dx`.
pub(crate) fn col2im<T: Real>(col: &[T], c: usize, h: usize, w: usize, k: usize, dx: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize - pad;
            for kx in 0..k {
                let ddx = kx as isize - pad;
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * hw..(row + 1) * hw];
                let (lo, hi) = valid_range(w, ddx);
                if lo >= hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s0 = (lo as isize + ddx) as usize;
                    let prow = &mut plane[sy as usize * w + s0..sy as usize * w + s0 + (hi - lo)];
                    for (p, &v) in prow.iter_mut().zip(&src[y * w + lo..y * w + hi]) {
                        *p += v;
                    }
                }
            }
        }
    }
}

/// Output columns `lo..hi` whose source column `x + dx` lies inside `0..w`.
fn valid_range(w: usize, dx: isize) -> (usize, usize) {
    let lo = (-dx).max(0) as usize;
    let hi = (w as isize - dx).min(w as isize).max(0) as usize;
    (lo.min(w), hi)
}

/// Stride-1 "same" convolution of one batch item.
/// `x`: `cin x h x w`, `weight`: `cout x (cin*k*k)`, `out`: `cout x h x w`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_forward<T: Real>(
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: usize,
    scratch: &mut Vec<T>,
    out: &mut [T],
) {
    let hw = h * w;
    let ckk = cin * k * k;
    let cols: &[T] = if k == 1 {
        x
    } else {
        scratch.resize(ckk * hw, T::zero());
        im2col(x, cin, h, w, k, scratch);
        scratch
    };
    T::gemm(cout, ckk, hw, weight, ckk as isize, 1, cols, hw as isize, 1, T::zero(), out, hw as isize, 1);
    if let Some(b) = bias {
        for (o, &bv) in b.iter().enumerate() {
            for v in &mut out[o * hw..(o + 1) * hw] {
                *v += bv;
            }
        }
    }
}

/// Horizontal bilinear backward warp: `out(c, y, x) = src(c, y, x - d(g, y, x))`
/// where channel `c` belongs to group `g = c / (C / G)`. Samples outside
/// `[0, W-1]` contribute zero.
pub(crate) fn warp_forward<T: Real>(
    src: &[T],
    disp: &[T],
    c: usize,
    groups: usize,
    h: usize,
    w: usize,
    out: &mut [T],
) {
    let hw = h * w;
    let per_group = c / groups;
    for ch in 0..c {
        let g = ch / per_group;
        let s = &src[ch * hw..(ch + 1) * hw];
        let d = &disp[g * hw..(g + 1) * hw];
        let o = &mut out[ch * hw..(ch + 1) * hw];
        for y in 0..h {
            let row = &s[y * w..(y + 1) * w];
            for x in 0..w {
                let i = y * w + x;
                let (x0, a) = sample_pos(x, d[i]);
                o[i] = lerp_row(row, x0, a);
            }
        }
    }
}

/// Accumulates gradients of [`warp_forward`] into `dsrc` and `ddisp`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn warp_backward<T: Real>(
    src: &[T],
    disp: &[T],
    grad_out: &[T],
    c: usize,
    groups: usize,
    h: usize,
    w: usize,
    mut dsrc: Option<&mut [T]>,
    mut ddisp: Option<&mut [T]>,
) {
    let hw = h * w;
    let per_group = c / groups;
    for ch in 0..c {
        let g = ch / per_group;
        let s = &src[ch * hw..(ch + 1) * hw];
        let d = &disp[g * hw..(g + 1) * hw];
        let go = &grad_out[ch * hw..(ch + 1) * hw];
        for y in 0..h {
            let row = &s[y * w..(y + 1) * w];
            for x in 0..w {
                let i = y * w + x;
                let gv = go[i];
                if gv == T::zero() {
                    continue;
                }
                let (x0, a) = sample_pos(x, d[i]);
                if let Some(ds) = dsrc.as_deref_mut() {
                    let drow = &mut ds[ch * hw + y * w..ch * hw + (y + 1) * w];
                    if in_row(x0, w) {
                        drow[x0 as usize] += (T::one() - a) * gv;
                    }
                    if in_row(x0 + 1, w) {
                        drow[(x0 + 1) as usize] += a * gv;
                    }
                }
                if let Some(dd) = ddisp.as_deref_mut() {
                    let left = fetch(row, x0);
                    let right = fetch(row, x0 + 1);
                    // d(sample)/d(disp) = -1
                    dd[g * hw + i] -= gv * (right - left);
                }
            }
        }
    }
}

#[inline]
fn sample_pos<T: Real>(x: usize, d: T) -> (isize, T) {
    let s = T::lit(x as f64) - d;
    let f = s.floor();
    (f.to_isize().unwrap_or(isize::MIN / 2), s - f)
}

#[inline]
fn in_row(i: isize, w: usize) -> bool {
    i >= 0 && (i as usize) < w
}

#[inline]
fn fetch<T: Real>(row: &[T], i: isize) -> T {
    if in_row(i, row.len()) {
        row[i as usize]
    } else {
        T::zero()
    }
}

#[inline]
fn lerp_row<T: Real>(row: &[T], x0: isize, a: T) -> T {
    let left = fetch(row, x0);
    if a == T::zero() {
        return left;
    }
    (T::one() - a) * left + a * fetch(row, x0 + 1)
}

/// Space-to-depth for one batch item: `(C, H, W) -> (C*r*r, H/r, W/r)` with
/// output channel `c*r*r + i*r + j` holding input pixel `(i + r*y, j + r*x)`.
pub(crate) fn pixel_unshuffle<T: Real>(x: &[T], c: usize, h: usize, w: usize, r: usize, out: &mut [T]) {
    let (oh, ow) = (h / r, w / r);
    for ci in 0..c {
        for i in 0..r {
            for j in 0..r {
                let oc = (ci * r + i) * r + j;
                for y in 0..oh {
                    for xx in 0..ow {
                        out[(oc * oh + y) * ow + xx] = x[(ci * h + y * r + i) * w + xx * r + j];
                    }
                }
            }
        }
    }
}

/// Inverse of [`pixel_unshuffle`]; `c` is the output channel count.
pub(crate) fn pixel_shuffle<T: Real>(x: &[T], c: usize, h: usize, w: usize, r: usize, out: &mut [T]) {
    let (ih, iw) = (h / r, w / r);
    for ci in 0..c {
        for i in 0..r {
            for j in 0..r {
                let ic = (ci * r + i) * r + j;
                for y in 0..ih {
                    for xx in 0..iw {
                        out[(ci * h + y * r + i) * w + xx * r + j] = x[(ic * ih + y) * iw + xx];
                    }
                }
            }
        }
    }
}

/// Interpolation taps for ×2 bilinear upsampling along one axis
/// (half-pixel centres, edge clamped).
pub(crate) fn upsample_taps(len: usize) -> Vec<(usize, usize, f64)> {
    (0..len * 2)
        .map(|o| {
            let s = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

pub(crate) fn upsample2x_forward<T: Real>(x: &[T], planes: usize, h: usize, w: usize, out: &mut [T]) {
    let ty = upsample_taps(h);
    let tx = upsample_taps(w);
    let (oh, ow) = (2 * h, 2 * w);
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            let ly = T::lit(ly);
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let lx = T::lit(lx);
                let top = src[y0 * w + x0] * (T::one() - lx) + src[y0 * w + x1] * lx;
                let bot = src[y1 * w + x0] * (T::one() - lx) + src[y1 * w + x1] * lx;
                dst[oy * ow + ox] = top * (T::one() - ly) + bot * ly;
            }
        }
    }
}

pub(crate) fn upsample2x_backward<T: Real>(g: &[T], planes: usize, h: usize, w: usize, dx: &mut [T]) {
    let ty = upsample_taps(h);
    let tx = upsample_taps(w);
    let (oh, ow) = (2 * h, 2 * w);
    for p in 0..planes {
        let go = &g[p * oh * ow..(p + 1) * oh * ow];
        let d = &mut dx[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            let ly = T::lit(ly);
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let lx = T::lit(lx);
                let v = go[oy * ow + ox];
                d[y0 * w + x0] += v * (T::one() - ly) * (T::one() - lx);
                d[y0 * w + x1] += v * (T::one() - ly) * lx;
                d[y1 * w + x0] += v * ly * (T::one() - lx);
                d[y1 * w + x1] += v * ly * lx;
            }
        }
    }
}
