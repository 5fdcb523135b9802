//! Event-based double-integral deblurring on a single-camera setup and on
//! a stereo pair where the events come from a displaced viewpoint.
//!
//! `cargo run --release --example edi`

use sted::data::{make_sample, LayerSpec, MaskSpec, SceneSpec};
use sted::events::{edi_deblur, EventSimConfig};
use sted::metrics::psnr;

fn main() -> sted::Result<()> {
    let sim = EventSimConfig::default();
    for d in [0.0, 4.0] {
        let layer = LayerSpec { texture_seed: 5, disparity: d, velocity: (0.3, 0.15), mask: MaskSpec::Full };
        let s = make_sample("edi", &SceneSpec::new(48, 64, 1, vec![layer]), &sim, 3)?;
        let frames = edi_deblur(&s.blurry, &s.events, sim.threshold_c, 3)?;
        let mid = &s.gt_frames[1];
        let blurry = psnr(s.blurry.tensor(), mid.tensor(), 1.0)?;
        let edi = psnr(&frames[1].tensor().map(|v| v.clamp(0.0, 1.0)), mid.tensor(), 1.0)?;
        println!("disparity {d}: blurry {blurry:.2} dB, EDI middle frame {edi:.2} dB");
    }
    Ok(())
}
