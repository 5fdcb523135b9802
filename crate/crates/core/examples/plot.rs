//! Writes PNG panels: a frame grid, a disparity map and a stage curve.
//!
//! `cargo run --release --example plot -- [out_dir]`

use std::path::PathBuf;

use sted::data::{generate, DatasetSpec};
use sted::plot::{disparity_image, image_grid, save_png, stage_curve};

fn main() -> sted::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("sted-example-plots"));
    std::fs::create_dir_all(&dir)?;
    let samples = generate(&DatasetSpec { samples: 2, frames: 3, seed: 5, ..Default::default() })?;
    let rows: Vec<Vec<_>> = samples
        .iter()
        .map(|s| std::iter::once(s.blurry.tensor().clone()).chain(s.gt_frames.iter().map(|f| f.tensor().clone())).collect())
        .collect();
    save_png(&image_grid(&rows)?, &dir.join("frames.png"))?;
    save_png(&disparity_image(samples[0].gt_disparity().tensor())?, &dir.join("disparity.png"))?;
    let (curve, points) = stage_curve(&[(0.8, 0.7), (0.5, 0.45), (0.3, 0.32), (0.2, 0.18)])?;
    save_png(&curve, &dir.join("stages.png"))?;
    println!("wrote frames.png, disparity.png and stages.png ({points} points) to {}", dir.display());
    Ok(())
}
