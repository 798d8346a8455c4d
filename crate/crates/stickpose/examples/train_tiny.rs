//! Train a small fused model on generated data and save a checkpoint.
//!
//! ```text
//! cargo run --release --example train_tiny
//! ```

use stickpose::checkpoint;
use stickpose::dataset::generate;
use stickpose::metrics::RunMeta;
use stickpose::model::{ModelConfig, PoseModel};
use stickpose::skeleton::Skeleton;
use stickpose::synth::SynthConfig;
use stickpose::train::{curve_to_csv, train, TrainConfig};

fn main() -> stickpose::Result<()> {
    let skeleton = Skeleton::lsp14();
    let synth = SynthConfig { map_h: 16, map_w: 16, ..SynthConfig::default() };
    let train_set = generate(&skeleton, &synth, 1, 400, 0)?;
    let val_set = generate(&skeleton, &synth, 2, 100, 0)?;

    let model_cfg = ModelConfig {
        map_h: 16,
        map_w: 16,
        stages: 2,
        width: 8,
        steps: 2,
        ..ModelConfig::default()
    };
    let mut model = PoseModel::new(&model_cfg)?;
    println!("{}", model.param_report());

    let train_cfg = TrainConfig {
        epochs: 6,
        batch_size: 8,
        lr: 2.5e-3,
        augment: None,
        val_every: 2,
        ..TrainConfig::default()
    };
    let outcome = train(&mut model, &train_set, &val_set, &train_cfg, RunMeta::default())?;
    print!("{}", curve_to_csv(&outcome.curve));
    println!(
        "final mean PCKh@0.5 {:.4}, per-stage {:?}",
        outcome.final_report.mean_pckh, outcome.final_report.stage_pckh
    );

    let path = std::env::temp_dir().join("stickpose-example").join("tiny.pgck");
    std::fs::create_dir_all(path.parent().unwrap())?;
    checkpoint::save(&model, &path)?;
    println!("checkpoint saved to {}", path.display());
    Ok(())
}
