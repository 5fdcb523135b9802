//! Runs the coarse disparity network on one sample and prints its
//! coarse-to-fine estimates.
//!
//! `cargo run --release --example dispnet`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sted::autograd::Graph;
use sted::data::{generate, DatasetSpec};
use sted::dispnet::{DispNet, DispNetConfig, SCALES};
use sted::events::voxelize;
use sted::nn::ParamStore;

fn main() -> sted::Result<()> {
    let sample = generate(&DatasetSpec { samples: 1, frames: 3, ..Default::default() })?.remove(0);
    let cfg = DispNetConfig { widths: [8, 12, 16, 24], bins: 4, max_disparity: 16.0, ..Default::default() };
    let net = DispNet::new(cfg.clone())?;
    let mut p = ParamStore::<f32>::new();
    net.init(&mut p, &mut ChaCha8Rng::seed_from_u64(0));
    println!("{} parameters", p.iter().map(|(_, t)| t.numel()).sum::<usize>());

    let g = Graph::new();
    let b = g.input(sample.blurry.tensor().clone());
    let v = g.input(voxelize(&sample.events, cfg.bins)?.tensor().cast());
    let out = net.forward(&g, &p, b, v)?;
    for (s, d) in SCALES.iter().zip(&out.per_scale) {
        let t = g.value(*d);
        println!("1/{s} scale {:?}, max |d| {:.2e}", t.shape(), t.max_abs());
    }
    let d = g.value(out.disparity);
    let (lo, hi) = d.data().iter().fold((f32::MAX, f32::MIN), |(a, b), &x| (a.min(x), b.max(x)));
    println!("untrained disparity in [{lo:.4}, {hi:.4}], clamp [0, {}]", cfg.max_disparity);
    Ok(())
}
