//! Generates a synthetic stereo dataset, writes it to disk and reads it back.
//!
//! `cargo run --release --example dataset -- [out_dir]`

use std::path::PathBuf;

use sted::data::{generate, read_dataset, read_manifest, write_dataset, DatasetSpec};

fn main() -> sted::Result<()> {
    let tmp;
    let dir = match std::env::args().nth(1) {
        Some(d) => PathBuf::from(d),
        None => {
            tmp = std::env::temp_dir().join("sted-example-dataset");
            tmp.clone()
        }
    };
    let spec = DatasetSpec { samples: 4, frames: 3, seed: 42, ..Default::default() };
    let samples = generate(&spec)?;
    write_dataset(&samples, &dir)?;
    let manifest = read_manifest(&dir)?;
    println!("wrote {} samples to {}", manifest.count, dir.display());
    let back = read_dataset(&dir)?;
    for (a, b) in samples.iter().zip(&back) {
        let scene = a.meta.scene.as_ref().expect("generated samples keep their scene");
        let ds: Vec<String> = scene.layers.iter().map(|l| format!("{:.1}", l.disparity)).collect();
        println!(
            "{}: {} events, layer disparities [{}], identical after reload: {}",
            a.id,
            a.events.len(),
            ds.join(", "),
            a == b
        );
    }
    Ok(())
}
