//! Overfits eight synthetic scenes end to end and reports deblurring quality
//! and the disparity the network found without ever seeing it.
//!
//! `cargo run --release --example overfit -- [steps] [lr]`

use std::time::Instant;

use sted::data::{generate, DatasetSpec};
use sted::dblrnet::DblrNetConfig;
use sted::dispnet::DispNetConfig;
use sted::train::{evaluate, prepare, ModelPredictor, TrainConfig, Trainer};

fn main() -> sted::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(300);
    let lr: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let samples = generate(&DatasetSpec { samples: 8, frames: 3, seed: 400, ..Default::default() })?;
    let cfg = TrainConfig {
        lr0: lr,
        decay_start: usize::MAX,
        batch: 8,
        crop: 64,
        seed: 1,
        dispnet: DispNetConfig { widths: [16, 16, 24, 32], bins: 4, max_disparity: 16.0, ..Default::default() },
        dblrnet: DblrNetConfig { channels: 16, stages: 2, groups: 4, frames: 3, bins: 4, ..Default::default() },
        ..Default::default()
    };
    let items = prepare(&samples, cfg.dblrnet.bins)?;
    let mut trainer = Trainer::new(cfg)?;
    let t0 = Instant::now();
    trainer.train_steps(&items, steps, &mut |r| {
        if r.step == 1 || r.step % 25 == 0 {
            println!(
                "step {:4}  total {:.5}  dblr {:.5}  perc {:.5}  tv {:.4}  ({:.0}s)",
                r.step,
                r.total,
                r.dblr,
                r.perc,
                r.tv,
                t0.elapsed().as_secs_f64()
            );
        }
    })?;
    let rep = evaluate(&samples, &ModelPredictor { model: &trainer.model, params: &trainer.params }, "overfit")?;
    for m in &rep.per_sample {
        println!("  {}  PSNR mid {:.2} (blurry {:.2})  EPE {:.2}", m.id, m.psnr_mid, m.psnr_blurry, m.epe);
    }
    let m = &rep.mean;
    println!(
        "mean: PSNR mid {:.2} dB vs blurry {:.2} dB, sequence {:.2} dB, SSIM {:.4}, EPE {:.3} px",
        m.psnr_mid, m.psnr_blurry, m.psnr_seq, m.ssim_mid, m.epe
    );
    Ok(())
}
