//! Trains every combination of the four component switches for a few steps
//! and prints the comparison table.
//!
//! `cargo run --release --example ablation -- [steps]`

use sted::data::{generate, DatasetSpec};
use sted::dblrnet::DblrNetConfig;
use sted::dispnet::DispNetConfig;
use sted::train::{run_ablation, AblationFlags, TrainConfig};

fn main() -> sted::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let samples = generate(&DatasetSpec { samples: 4, height: 32, width: 32, frames: 3, max_disparity: 6.0, seed: 1, ..Default::default() })?;
    let base = TrainConfig {
        lr0: 1e-3,
        batch: 2,
        crop: 32,
        dispnet: DispNetConfig { widths: [4, 6, 8, 8], bins: 2, max_disparity: 8.0, ..Default::default() },
        dblrnet: DblrNetConfig {
            channels: 8,
            stages: 2,
            groups: 2,
            frames: 3,
            bins: 2,
            growth: 4,
            dense_layers: 2,
            ..Default::default()
        },
        ..Default::default()
    };
    let rep = run_ablation(&samples, &base, &AblationFlags::grid(), steps)?;
    print!("{}", rep.table());
    Ok(())
}
