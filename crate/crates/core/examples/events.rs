//! Renders a moving scene, simulates its event stream and builds the blurry
//! exposure and voxel grid the network consumes.
//!
//! `cargo run --release --example events`

use sted::data::{render_scene, LayerSpec, MaskSpec, SceneSpec, View};
use sted::events::{encode_stev, simulate_events, synthesize_blur, voxelize, EventSimConfig};

fn main() -> sted::Result<()> {
    let layers = vec![
        LayerSpec { texture_seed: 7, disparity: 3.0, velocity: (0.25, 0.1), mask: MaskSpec::Full },
        LayerSpec {
            texture_seed: 8,
            disparity: 9.0,
            velocity: (-0.3, 0.0),
            mask: MaskSpec::Disk { cx: 40.0, cy: 32.0, r: 14.0 },
        },
    ];
    let spec = SceneSpec::new(64, 96, 3, layers);
    let frames = render_scene(&spec, View::Event)?;
    let ts = spec.timestamps();
    let cfg = EventSimConfig::default();
    let stream = simulate_events(&frames, &ts, &cfg)?;
    let (t0, t1) = stream.window();
    let positive = stream.events().iter().filter(|e| e.p > 0).count();
    println!("{} frames over {t0}..{t1} us", frames.len());
    println!("{} events ({positive} positive), polarity sum {}", stream.len(), stream.polarity_sum());

    let blurry = synthesize_blur(&render_scene(&spec, View::Intensity)?)?;
    let mean = blurry.tensor().data().iter().map(|&v| v as f64).sum::<f64>() / blurry.tensor().numel() as f64;
    println!("blurry exposure {:?}, mean intensity {mean:.3}", blurry.tensor().shape());

    for bins in [2, 6] {
        let v = voxelize(&stream, bins)?;
        let per_bin: Vec<String> = (0..bins)
            .map(|b| {
                let plane = v.tensor().channels(b, 1);
                format!("{:.0}", plane.data().iter().map(|x| x.abs()).sum::<f64>())
            })
            .collect();
        println!("{bins} bins: mass {:.1}, |mass| per bin [{}]", v.total_mass(), per_bin.join(", "));
    }
    println!("STEV encoding: {} bytes", encode_stev(&stream).len());
    Ok(())
}
