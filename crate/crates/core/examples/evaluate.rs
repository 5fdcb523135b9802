//! Scores the reference predictors: ground truth, the repeated blurry
//! input and an untrained network.
//!
//! `cargo run --release --example evaluate`

use sted::data::{generate, DatasetSpec};
use sted::dblrnet::DblrNetConfig;
use sted::dispnet::DispNetConfig;
use sted::train::{evaluate, BlurryRepeat, GtPassthrough, ModelPredictor, Predictor, TrainConfig, Trainer};

fn main() -> sted::Result<()> {
    let samples = generate(&DatasetSpec { samples: 4, frames: 3, seed: 9, ..Default::default() })?;
    let cfg = TrainConfig {
        dispnet: DispNetConfig { widths: [8, 8, 12, 16], bins: 4, max_disparity: 16.0, ..Default::default() },
        dblrnet: DblrNetConfig { channels: 8, stages: 2, groups: 2, frames: 3, bins: 4, ..Default::default() },
        ..Default::default()
    };
    let t = Trainer::new(cfg)?;
    let untrained = ModelPredictor { model: &t.model, params: &t.params };
    let predictors: [(&str, &dyn Predictor); 3] =
        [("ground truth", &GtPassthrough), ("blurry x3", &BlurryRepeat { frames: 3 }), ("untrained", &untrained)];
    for (name, p) in predictors {
        let rep = evaluate(&samples, p, name)?;
        let m = &rep.mean;
        println!(
            "{name:>12}: PSNR mid {:6.2}  seq {:6.2}  SSIM mid {:.4}  EPE {:6.3}  >1px {:5.1}%  >3px {:5.1}%",
            m.psnr_mid, m.psnr_seq, m.ssim_mid, m.epe, m.bad1, m.bad3
        );
    }
    Ok(())
}
