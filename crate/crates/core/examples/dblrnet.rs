//! Full forward pass: coarse disparity, event pre-alignment and the
//! cascaded deblurring network, with per-stage group disparities.
//!
//! `cargo run --release --example dblrnet`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sted::data::{generate, DatasetSpec};
use sted::dblrnet::DblrNetConfig;
use sted::dispnet::DispNetConfig;
use sted::events::voxelize;
use sted::model::{ModelConfig, StedModel};

fn main() -> sted::Result<()> {
    let sample = generate(&DatasetSpec { samples: 1, frames: 3, ..Default::default() })?.remove(0);
    let cfg = ModelConfig {
        dispnet: DispNetConfig { widths: [8, 12, 16, 24], bins: 4, max_disparity: 16.0, ..Default::default() },
        dblrnet: DblrNetConfig { channels: 16, stages: 3, groups: 4, frames: 3, bins: 4, ..Default::default() },
        use_dispnet: true,
    };
    let model = StedModel::new(cfg)?;
    let p = model.init::<f32>(&mut ChaCha8Rng::seed_from_u64(0));
    println!("{} parameter tensors", p.iter().count());
    let inf = model.infer(&p, &sample.blurry, &voxelize(&sample.events, 4)?)?;
    for (m, f) in inf.frames.iter().enumerate() {
        let diff = f.tensor().zip_map(sample.blurry.tensor(), |a, b| a - b)?.max_abs();
        println!("frame {m}: {:?}, max |frame - blurry| {diff:.2e}", f.tensor().shape());
    }
    for (k, (be, eb)) in inf.stage_magnitudes.iter().enumerate() {
        println!("stage {k}: mean |D_b->e| {be:.2e}, |D_e->b| {eb:.2e}");
    }
    Ok(())
}
