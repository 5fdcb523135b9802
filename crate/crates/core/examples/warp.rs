//! Aligns the event view to the intensity view with a disparity map and
//! shows how the residual shrinks as the disparity approaches the truth.
//!
//! `cargo run --release --example warp`

use sted::data::{render_scene, scene_disparity, LayerSpec, MaskSpec, SceneSpec, View};
use sted::geometry::{backward_warp, DisparityMap};

fn main() -> sted::Result<()> {
    let layers = vec![
        LayerSpec { texture_seed: 3, disparity: 4.0, velocity: (0.0, 0.0), mask: MaskSpec::Full },
        LayerSpec {
            texture_seed: 4,
            disparity: 10.0,
            velocity: (0.0, 0.0),
            mask: MaskSpec::Rect { x: 20.0, y: 12.0, w: 24.0, h: 20.0 },
        },
    ];
    let mut spec = SceneSpec::new(48, 64, 1, layers);
    spec.frames = 2;
    spec.exposure = 2;
    let left = &render_scene(&spec, View::Intensity)?[0];
    let right = &render_scene(&spec, View::Event)?[0];
    let (h, w) = left.dims();
    // compare away from the zero-filled border
    let residual = |img: &sted::geometry::ImageTensor| {
        let mut s = 0.0;
        let mut n = 0;
        for y in 0..h {
            for x in 12..w {
                s += (img.at(0, y, x) - left.at(0, y, x)).abs() as f64;
                n += 1;
            }
        }
        s / n as f64
    };
    for d in [0.0, 2.0, 4.0, 6.0] {
        let out = backward_warp(right, &DisparityMap::constant(h, w, d)?)?;
        println!("constant d = {d:3.1}: mean |aligned - intensity| {:.4}", residual(&out));
    }
    let truth = scene_disparity(&spec, 0)?;
    let out = backward_warp(right, &truth)?;
    println!("true layered disparity:  mean |aligned - intensity| {:.4}", residual(&out));
    Ok(())
}
