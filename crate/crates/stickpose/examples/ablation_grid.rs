//! A miniature ablation: fusion on/off and step counts 0/2 on a small
//! dataset, one seed. Prints the grid CSV. The `stickpose ablate`
//! subcommand runs the full 16-cell version.
//!
//! ```text
//! cargo run --release --example ablation_grid
//! ```

use stickpose::ablate::{grid_to_csv, run_grid, AblationCell};
use stickpose::dataset::generate;
use stickpose::graph::GraphKind;
use stickpose::model::ModelConfig;
use stickpose::skeleton::Skeleton;
use stickpose::synth::SynthConfig;
use stickpose::train::TrainConfig;

fn main() -> stickpose::Result<()> {
    let skeleton = Skeleton::lsp14();
    let synth = SynthConfig { map_h: 16, map_w: 16, ..SynthConfig::default() };
    let train_set = generate(&skeleton, &synth, 11, 300, 0)?;
    let val_set = generate(&skeleton, &synth, 12, 100, 0)?;

    let model_cfg = ModelConfig {
        map_h: 16,
        map_w: 16,
        stages: 2,
        width: 8,
        ..ModelConfig::default()
    };
    let train_cfg = TrainConfig {
        epochs: 4,
        batch_size: 8,
        augment: None,
        val_every: 0,
        ..TrainConfig::default()
    };
    let cells = [
        AblationCell { cpf: false, steps: 0, graph: GraphKind::Tree },
        AblationCell { cpf: true, steps: 0, graph: GraphKind::Tree },
        AblationCell { cpf: true, steps: 2, graph: GraphKind::Tree },
        AblationCell { cpf: true, steps: 2, graph: GraphKind::Loopy },
    ];
    let rows = run_grid(
        &train_set,
        &val_set,
        &model_cfg,
        &train_cfg,
        &cells,
        &[0],
        |cell, seed, report| {
            println!("{} seed {}: mean PCKh {:.4}", cell.tag(), seed, report.mean_pckh);
        },
    )?;
    println!("\n{}", grid_to_csv(&rows));
    Ok(())
}
