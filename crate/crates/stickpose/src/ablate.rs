//! Ablation grids: retrain from identical seeds per cell, share the data
//! split, report mean PCKh and per-stage accuracy.

use crate::error::Result;
use crate::graph::GraphKind;
use crate::metrics::{EvalReport, RunMeta};
use crate::model::{ModelConfig, PoseModel};
use crate::synth::Sample;
use crate::train::{train, TrainConfig};
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationCell {
    pub cpf: bool,
    pub steps: usize,
    pub graph: GraphKind,
}

impl AblationCell {
    pub fn tag(&self) -> String {
        format!(
            "cpf-{}_T{}_{}",
            if self.cpf { "on" } else { "off" },
            self.steps,
            self.graph.as_str()
        )
    }
}

/// The full grid: {off, on} x {0..3} x {tree, loopy} = 16 cells.
pub fn default_grid() -> Vec<AblationCell> {
    let mut cells = Vec::new();
    for &cpf in &[false, true] {
        for steps in 0..=3usize {
            for &graph in &[GraphKind::Tree, GraphKind::Loopy] {
                cells.push(AblationCell { cpf, steps, graph });
            }
        }
    }
    cells
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub cell: AblationCell,
    pub seed: u64,
    pub report: EvalReport,
}

/// Train one model per (cell, seed) on the shared split. Every cell reuses
/// the run seed for parameter init, shuffling and augmentation, so cells
/// differing only in one knob start from identical shared tensors.
pub fn run_grid(
    train_set: &[Sample],
    val_set: &[Sample],
    base_model: &ModelConfig,
    base_train: &TrainConfig,
    grid: &[AblationCell],
    seeds: &[u64],
    mut progress: impl FnMut(&AblationCell, u64, &EvalReport),
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(grid.len() * seeds.len());
    for cell in grid {
        for &seed in seeds {
            let model_cfg = ModelConfig {
                cpf: cell.cpf,
                steps: cell.steps,
                graph: cell.graph,
                seed,
                ..base_model.clone()
            };
            let train_cfg = TrainConfig { seed, ..base_train.clone() };
            let mut model = PoseModel::new(&model_cfg)?;
            let meta = RunMeta {
                tag: cell.tag(),
                cpf: cell.cpf,
                graph: cell.graph.as_str().to_string(),
                steps: cell.steps,
                seed,
            };
            let outcome = train(&mut model, train_set, val_set, &train_cfg, meta)?;
            progress(cell, seed, &outcome.final_report);
            rows.push(AblationRow { cell: *cell, seed, report: outcome.final_report });
        }
    }
    Ok(rows)
}

/// One row per (cell, seed): mean PCKh plus per-stage PCKh columns.
pub fn grid_to_csv(rows: &[AblationRow]) -> String {
    let stages = rows.first().map(|r| r.report.stage_pckh.len()).unwrap_or(0);
    let mut s = String::from("tag,cpf,graph,T,seed,mean_pckh");
    for i in 1..=stages {
        let _ = write!(s, ",stage{i}_pckh");
    }
    s.push('\n');
    for r in rows {
        let _ = write!(
            s,
            "{},{},{},{},{},{:.6}",
            r.cell.tag(),
            if r.cell.cpf { "on" } else { "off" },
            r.cell.graph.as_str(),
            r.cell.steps,
            r.seed,
            r.report.mean_pckh
        );
        for v in &r.report.stage_pckh {
            let _ = write!(s, ",{v:.6}");
        }
        s.push('\n');
    }
    s
}

/// Median of an odd (or even: middle-pair averaged) sample of scores.
pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
