//! Render one sample and write its ground-truth heatmaps as PGM images.
//!
//! ```text
//! cargo run --release --example dump_heatmaps
//! ```

use stickpose::pgm::dump_stack;
use stickpose::skeleton::Skeleton;
use stickpose::synth::{sample_pose, SynthConfig};

fn main() -> stickpose::Result<()> {
    let skeleton = Skeleton::lsp14();
    let sample = sample_pose(&skeleton, 42, &SynthConfig::default())?;
    let dir = std::env::temp_dir().join("stickpose-example").join("heatmaps");
    let names: Vec<String> = skeleton.names().iter().map(|s| s.to_string()).collect();
    dump_stack(&sample.gt_heatmaps, &names, &dir, "gt")?;

    // the input image is also just a [H, W] map
    let (h, w) = sample.image_size();
    let image = stickpose::tensor::Tensor::new(vec![h, w], sample.image.data().to_vec())?;
    stickpose::pgm::write_pgm(&image, &dir.join("image.pgm"))?;

    println!("wrote image.pgm and {} joint maps to {}", names.len(), dir.display());
    println!("scale sidecar: {}", dir.join("gt_scale.txt").display());
    Ok(())
}
