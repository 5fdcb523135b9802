//! PNG figures: image grids, disparity colormaps and per-stage BDE
//! magnitude curves.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Result, StedError};
use crate::tensor::Tensor;

const BORDER: u32 = 12;
const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);

/// 3×5 glyphs, one row per `u8` (low three bits, MSB left).
fn glyph(c: char) -> Option<[u8; 5]> {
    Some(match c {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 1, 1],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        '.' => [0, 0, 0, 0, 2],
        '-' => [0, 0, 7, 0, 0],
        'e' => [0, 7, 7, 4, 7],
        ' ' => [0; 5],
        _ => return None,
    })
}

/// Draws `text` with its top-left corner at `(x, y)`; unsupported
/// characters are skipped.
pub fn draw_text(img: &mut RgbImage, x: u32, y: u32, text: &str, color: Rgb<u8>) {
    let mut cx = x;
    for ch in text.chars() {
        if let Some(rows) = glyph(ch) {
            for (dy, row) in rows.iter().enumerate() {
                for dx in 0..3u32 {
                    if row & (4 >> dx) != 0 {
                        let (px, py) = (cx + dx, y + dy as u32);
                        if px < img.width() && py < img.height() {
                            img.put_pixel(px, py, color);
                        }
                    }
                }
            }
        }
        cx += 4;
    }
}

/// Perceptually ordered dark-blue to yellow ramp, `t` in `[0, 1]`.
pub fn colormap(t: f64) -> Rgb<u8> {
    const STOPS: [[f64; 3]; 5] = [
        [68.0, 1.0, 84.0],
        [59.0, 82.0, 139.0],
        [33.0, 145.0, 140.0],
        [94.0, 201.0, 98.0],
        [253.0, 231.0, 37.0],
    ];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let s = t * (STOPS.len() - 1) as f64;
    let i = (s.floor() as usize).min(STOPS.len() - 2);
    let f = s - i as f64;
    let mix = |k: usize| (STOPS[i][k] * (1.0 - f) + STOPS[i + 1][k] * f).round() as u8;
    Rgb([mix(0), mix(1), mix(2)])
}

fn to_rgb(t: &Tensor<f32>, x0: u32, y0: u32, img: &mut RgbImage) {
    let (c, h, w) = (t.c(), t.h(), t.w());
    for y in 0..h {
        for x in 0..w {
            let v = |ch: usize| (t.at(0, ch.min(c - 1), y, x).clamp(0.0, 1.0) * 255.0).round() as u8;
            let px = if c >= 3 { Rgb([v(0), v(1), v(2)]) } else { Rgb([v(0), v(0), v(0)]) };
            img.put_pixel(x0 + x as u32, y0 + y as u32, px);
        }
    }
}

/// Grid of `[1, C, H, W]` images (C = 1 or 3), `rows[r][c]`, values clipped
/// to `[0, 1]`, separated by a 2-pixel white gutter.
pub fn image_grid(rows: &[Vec<Tensor<f32>>]) -> Result<RgbImage> {
    let first = rows
        .iter()
        .flat_map(|r| r.first())
        .next()
        .ok_or_else(|| StedError::invalid("empty image grid"))?;
    let (h, w) = (first.h() as u32, first.w() as u32);
    if rows.iter().flatten().any(|t| (t.h() as u32, t.w() as u32) != (h, w) || t.n() != 1) {
        return Err(StedError::shape("grid images must share dimensions"));
    }
    let cols = rows.iter().map(|r| r.len()).max().unwrap_or(0) as u32;
    let gap = 2;
    let mut img = RgbImage::from_pixel(cols * (w + gap) + gap, rows.len() as u32 * (h + gap) + gap, WHITE);
    for (r, row) in rows.iter().enumerate() {
        for (c, t) in row.iter().enumerate() {
            to_rgb(t, gap + c as u32 * (w + gap), gap + r as u32 * (h + gap), &mut img);
        }
    }
    Ok(img)
}

/// Colormapped disparity with its minimum and maximum printed in the top
/// border and a ramp in the bottom border.
pub fn disparity_image(disp: &Tensor<f32>) -> Result<RgbImage> {
    if disp.n() != 1 || disp.c() != 1 {
        return Err(StedError::shape(format!("disparity plot needs [1, 1, H, W], got {:?}", disp.shape())));
    }
    let (h, w) = (disp.h() as u32, disp.w() as u32);
    let vals = disp.data();
    let lo = vals.iter().copied().fold(f32::INFINITY, f32::min) as f64;
    let hi = vals.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let span = if hi > lo { hi - lo } else { 1.0 };
    let width = w.max(64);
    let mut img = RgbImage::from_pixel(width, h + 2 * BORDER, WHITE);
    for y in 0..h {
        for x in 0..w {
            let v = disp.at(0, 0, y as usize, x as usize) as f64;
            img.put_pixel(x, y + BORDER, colormap((v - lo) / span));
        }
    }
    draw_text(&mut img, 1, 3, &format_number(lo), BLACK);
    let max_txt = format_number(hi);
    let tx = width.saturating_sub(4 * max_txt.len() as u32 + 1);
    draw_text(&mut img, tx, 3, &max_txt, BLACK);
    for x in 0..width {
        let c = colormap(x as f64 / (width - 1).max(1) as f64);
        for y in h + BORDER + 3..h + 2 * BORDER - 3 {
            img.put_pixel(x, y, c);
        }
    }
    Ok(img)
}

/// Short decimal rendering for annotations.
pub fn format_number(v: f64) -> String {
    if !v.is_finite() {
        return "-".into();
    }
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

/// Per-stage magnitude curve with one marker per stage for each direction
/// (b->e dark, e->b light). Returns the image and the number of stages
/// drawn.
pub fn stage_curve(magnitudes: &[(f64, f64)]) -> Result<(RgbImage, usize)> {
    if magnitudes.is_empty() {
        return Err(StedError::invalid("no stages to plot"));
    }
    let (pw, ph) = (240u32, 120u32);
    let mut img = RgbImage::from_pixel(pw + 2 * BORDER, ph + 2 * BORDER, WHITE);
    let hi = magnitudes
        .iter()
        .flat_map(|&(a, b)| [a, b])
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max)
        .max(1e-12);
    for x in 0..pw {
        img.put_pixel(BORDER + x, BORDER + ph, BLACK);
    }
    for y in 0..=ph {
        img.put_pixel(BORDER, BORDER + y, BLACK);
    }
    let n = magnitudes.len();
    let pos = |i: usize, v: f64| {
        let x = if n == 1 { pw / 2 } else { (i as f64 * (pw - 8) as f64 / (n - 1) as f64) as u32 + 4 };
        let y = ph - ((v / hi).clamp(0.0, 1.0) * (ph - 4) as f64) as u32;
        (BORDER + x, BORDER + y)
    };
    for (series, color) in [(0usize, colormap(0.0)), (1, colormap(0.75))] {
        let pts: Vec<(u32, u32)> = magnitudes
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| pos(i, if series == 0 { a } else { b }))
            .collect();
        for pair in pts.windows(2) {
            line(&mut img, pair[0], pair[1], color);
        }
        for &(x, y) in &pts {
            for dy in 0..3 {
                for dx in 0..3 {
                    let (px, py) = ((x + dx).saturating_sub(1), (y + dy).saturating_sub(1));
                    if px < img.width() && py < img.height() {
                        img.put_pixel(px, py, color);
                    }
                }
            }
        }
    }
    draw_text(&mut img, BORDER + 2, 3, &format_number(hi), BLACK);
    Ok((img, n))
}

fn line(img: &mut RgbImage, a: (u32, u32), b: (u32, u32), color: Rgb<u8>) {
    let steps = (a.0.abs_diff(b.0)).max(a.1.abs_diff(b.1)).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = a.0 as f64 + (b.0 as f64 - a.0 as f64) * t;
        let y = a.1 as f64 + (b.1 as f64 - a.1 as f64) * t;
        img.put_pixel(x.round() as u32, y.round() as u32, color);
    }
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_endpoints() {
        assert_eq!(colormap(0.0), Rgb([68, 1, 84]));
        assert_eq!(colormap(1.0), Rgb([253, 231, 37]));
        assert_eq!(colormap(f64::NAN), colormap(0.0));
    }

    #[test]
    fn curve_counts_stages() {
        let (_, n) = stage_curve(&[(1.0, 0.5), (0.5, 0.2)]).unwrap();
        assert_eq!(n, 2);
        assert!(stage_curve(&[]).is_err());
    }

    #[test]
    fn grid_dims() {
        let t = Tensor::full([1, 1, 4, 6], 0.5f32);
        let img = image_grid(&[vec![t.clone(), t.clone()], vec![t]]).unwrap();
        assert_eq!((img.width(), img.height()), (2 * 8 + 2, 2 * 6 + 2));
    }

    #[test]
    fn annotation_digits() {
        assert_eq!(format_number(4.0), "4.00");
        assert_eq!(format_number(0.001), "1.0e-3");
    }
}
