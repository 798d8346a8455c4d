//! Generate a small synthetic dataset, write it to disk, read it back, and
//! print what ended up inside.
//!
//! ```text
//! cargo run --release --example generate_dataset
//! ```

use stickpose::dataset::{generate, read_dataset, write_dataset};
use stickpose::skeleton::Skeleton;
use stickpose::synth::SynthConfig;

fn main() -> stickpose::Result<()> {
    let skeleton = Skeleton::lsp14();
    let cfg = SynthConfig::default();
    let samples = generate(&skeleton, &cfg, 7, 64, 0)?;

    let dir = std::env::temp_dir().join("stickpose-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("demo.pgnd");
    let header = write_dataset(&samples, &path)?;
    println!(
        "wrote {} samples to {} ({} bytes, {} floats per record)",
        header.count,
        path.display(),
        header.file_bytes(),
        header.record_floats()
    );

    let back = read_dataset(&path)?;
    let s = &back[0];
    println!(
        "sample 0: {} joints, image {:?}, maps {:?}, head {:.2}px, torso {:.2}px",
        s.num_joints(),
        s.image_size(),
        s.map_size(),
        s.head_len,
        s.torso_len
    );
    let occluded = back.iter().filter(|s| s.visible.iter().any(|v| !v)).count();
    println!("{occluded} of {} samples have at least one occluded joint", back.len());
    for (k, &(x, y)) in s.joints.iter().enumerate() {
        println!("  {:<11} ({x:5.2}, {y:5.2}) {}", skeleton.name(k), if s.visible[k] { "" } else { "occluded" });
    }
    Ok(())
}
