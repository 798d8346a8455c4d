//! Save, reload, and evaluate a model; print the per-joint score table.
//!
//! ```text
//! cargo run --release --example evaluate_checkpoint
//! ```

use stickpose::checkpoint;
use stickpose::dataset::generate;
use stickpose::metrics::{evaluate, RunMeta};
use stickpose::model::{ModelConfig, PoseModel};
use stickpose::skeleton::Skeleton;
use stickpose::synth::SynthConfig;

fn main() -> stickpose::Result<()> {
    let skeleton = Skeleton::lsp14();
    let synth = SynthConfig { map_h: 16, map_w: 16, ..SynthConfig::default() };
    let val_set = generate(&skeleton, &synth, 5, 100, 0)?;

    // an untrained model scores poorly; the point here is the round trip
    let model = PoseModel::new(&ModelConfig {
        map_h: 16,
        map_w: 16,
        stages: 2,
        width: 8,
        steps: 2,
        ..ModelConfig::default()
    })?;
    let path = std::env::temp_dir().join("stickpose-example").join("eval-demo.pgck");
    std::fs::create_dir_all(path.parent().unwrap())?;
    checkpoint::save(&model, &path)?;
    let loaded = checkpoint::load(&path)?;

    let report = evaluate(&loaded, &val_set, 0.5, 0.2, 0, RunMeta::default())?;
    println!("{:<12} {:>8} {:>8}", "joint", "PCKh", "PCK");
    for ((name, h), p) in report
        .joint_names
        .iter()
        .zip(&report.pckh_per_joint)
        .zip(&report.pck_per_joint)
    {
        println!("{name:<12} {h:>8.4} {p:>8.4}");
    }
    println!("{:<12} {:>8.4} {:>8.4}", "mean", report.mean_pckh, report.mean_pck);
    println!("\nmetrics CSV:\n{}", report.to_csv());
    Ok(())
}
