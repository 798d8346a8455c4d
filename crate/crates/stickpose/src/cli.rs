//! Subcommand front end. The binary is a thin wrapper around [`run`];
//! everything here delegates to the library modules.
//!
//! Exit codes: 0 success, 1 validation error (bad flags, files, shapes),
//! 2 runtime or numeric failure.

use crate::ablate::{default_grid, grid_to_csv, run_grid};
use crate::checkpoint;
use crate::config::RunConfig;
use crate::dataset::{generate, read_dataset, write_dataset};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, RunMeta};
use crate::model::PoseModel;
use crate::pgm::dump_stack;
use crate::skeleton::Skeleton;
use crate::synth::Sample;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::train::{curve_to_csv, train};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "stickpose",
    about = "Synthetic stick-figure pose estimation: data generation, training, evaluation, ablations",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; they override config-file values.
#[derive(Args, Clone, Default)]
struct Overrides {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed for everything the command randomizes.
    #[arg(long)]
    seed: Option<u64>,
    /// Propagation step count.
    #[arg(long = "T")]
    steps: Option<usize>,
    /// Graph preset: tree | loopy.
    #[arg(long)]
    graph: Option<String>,
    /// Prediction fusion: on | off.
    #[arg(long)]
    cpf: Option<String>,
    /// Worker thread cap (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.steps {
            cfg.steps = t;
        }
        if let Some(g) = &self.graph {
            cfg.set("graph", g)?;
        }
        if let Some(c) = &self.cpf {
            cfg.set("cpf", c)?;
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset file.
    Gen {
        #[command(flatten)]
        common: Overrides,
        /// Number of samples.
        #[arg(long)]
        count: usize,
        /// Output dataset path (.pgnd).
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint plus CSV logs.
    Train {
        #[command(flatten)]
        common: Overrides,
        /// Training dataset (.pgnd).
        #[arg(long)]
        data: PathBuf,
        /// Validation dataset; defaults to the tail 20% of --data.
        #[arg(long)]
        val: Option<PathBuf>,
        /// Checkpoint output path (.pgck).
        #[arg(long)]
        out: PathBuf,
        /// Loss-curve CSV path (default: <out>.curve.csv).
        #[arg(long)]
        curve_out: Option<PathBuf>,
        /// Metrics CSV path (default: <out>.metrics.csv).
        #[arg(long)]
        metrics_out: Option<PathBuf>,
        /// Epoch count override.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a checkpoint on a dataset and write a metrics CSV.
    Eval {
        #[command(flatten)]
        common: Overrides,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Metrics CSV path (default: stdout only).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Tag recorded in the CSV rows.
        #[arg(long, default_value = "eval")]
        tag: String,
    },
    /// Train the full {cpf} x {T} x {graph} grid and write one CSV row per cell.
    Ablate {
        #[command(flatten)]
        common: Overrides,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated seeds, one run per cell per seed.
        #[arg(long, default_value = "0")]
        seeds: String,
    },
    /// Finite-difference verification of every op and a tiny fused model.
    Gradcheck {
        /// Central-difference step.
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        /// Maximum relative error.
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Write per-joint heatmaps of one sample as 8-bit PGM files.
    DumpHeatmaps {
        #[command(flatten)]
        common: Overrides,
        #[arg(long)]
        data: PathBuf,
        /// Sample index within the dataset.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Dump this checkpoint's predictions instead of the ground truth.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

/// Parse argv and execute. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version via this path with code 0
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { common, count, out } => cmd_gen(&common, count, &out),
        Command::Train { common, data, val, out, curve_out, metrics_out, epochs } => {
            cmd_train(&common, &data, val.as_deref(), &out, curve_out, metrics_out, epochs)
        }
        Command::Eval { common, checkpoint, data, out, tag } => {
            cmd_eval(&common, &checkpoint, &data, out.as_deref(), &tag)
        }
        Command::Ablate { common, train, val, out, seeds } => {
            cmd_ablate(&common, &train, &val, &out, &seeds)
        }
        Command::Gradcheck { eps, tol } => cmd_gradcheck(eps, tol),
        Command::DumpHeatmaps { common, data, index, out, checkpoint } => {
            cmd_dump(&common, &data, index, &out, checkpoint.as_deref())
        }
    }
}

fn cmd_gen(common: &Overrides, count: usize, out: &Path) -> Result<()> {
    if count == 0 {
        return Err(Error::Config("--count must be positive".to_string()));
    }
    let cfg = common.resolve()?;
    let samples = generate(&Skeleton::lsp14(), &cfg.synth_config(), cfg.seed, count, cfg.threads)?;
    let header = write_dataset(&samples, out)?;
    println!(
        "wrote {} samples ({} joints, {}x{} maps, {}x{} images) to {}",
        header.count,
        header.num_joints,
        header.map_h,
        header.map_w,
        header.img_h,
        header.img_w,
        out.display()
    );
    Ok(())
}

fn check_dataset_matches(model: &PoseModel, samples: &[Sample], what: &str) -> Result<()> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Dataset(format!("{what} dataset is empty")))?;
    if first.num_joints() != model.num_joints() {
        return Err(Error::JointCountMismatch {
            context: "checkpoint vs dataset",
            expected: model.num_joints(),
            got: first.num_joints(),
        });
    }
    if first.map_size() != model.map_size() {
        return Err(Error::Shape {
            op: "dataset check",
            detail: format!(
                "{what} maps are {:?}, model expects {:?}",
                first.map_size(),
                model.map_size()
            ),
        });
    }
    let expect_img = model.expected_image_size();
    if first.image_size() != expect_img {
        return Err(Error::Shape {
            op: "dataset check",
            detail: format!(
                "{what} images are {:?}, model expects {:?}",
                first.image_size(),
                expect_img
            ),
        });
    }
    Ok(())
}

fn cmd_train(
    common: &Overrides,
    data: &Path,
    val: Option<&Path>,
    out: &Path,
    curve_out: Option<PathBuf>,
    metrics_out: Option<PathBuf>,
    epochs: Option<usize>,
) -> Result<()> {
    let cfg = common.resolve()?;
    let mut train_cfg = cfg.train_config();
    if let Some(e) = epochs {
        train_cfg.epochs = e;
    }
    let all = read_dataset(data)?;
    let (train_set, val_set): (Vec<Sample>, Vec<Sample>) = match val {
        Some(vp) => (all, read_dataset(vp)?),
        None => {
            let cut = (all.len() * 4).div_euclid(5).max(1);
            let (a, b) = all.split_at(cut.min(all.len().saturating_sub(1)).max(1));
            (a.to_vec(), b.to_vec())
        }
    };
    let mut model = PoseModel::new(&cfg.model_config())?;
    check_dataset_matches(&model, &train_set, "train")?;
    check_dataset_matches(&model, &val_set, "val")?;
    println!("{}", model.param_report());

    let meta = RunMeta {
        tag: "train".to_string(),
        cpf: cfg.cpf,
        graph: cfg.graph.as_str().to_string(),
        steps: cfg.steps,
        seed: cfg.seed,
    };
    let outcome = train(&mut model, &train_set, &val_set, &train_cfg, meta)?;
    checkpoint::save(&model, out)?;

    let curve_path = curve_out.unwrap_or_else(|| suffix_path(out, ".curve.csv"));
    std::fs::write(&curve_path, curve_to_csv(&outcome.curve))?;
    let metrics_path = metrics_out.unwrap_or_else(|| suffix_path(out, ".metrics.csv"));
    std::fs::write(&metrics_path, outcome.final_report.to_csv())?;

    println!(
        "final: mean PCKh@{} {:.4}, mean PCK@{} {:.4} over {} samples",
        train_cfg.pckh_threshold,
        outcome.final_report.mean_pckh,
        train_cfg.pck_threshold,
        outcome.final_report.mean_pck,
        outcome.final_report.num_samples
    );
    println!("checkpoint: {}", out.display());
    println!("curves: {}", curve_path.display());
    println!("metrics: {}", metrics_path.display());
    Ok(())
}

fn suffix_path(base: &Path, suffix: &str) -> PathBuf {
    let mut s = base.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_eval(
    common: &Overrides,
    ckpt: &Path,
    data: &Path,
    out: Option<&Path>,
    tag: &str,
) -> Result<()> {
    let cfg = common.resolve()?;
    let model = checkpoint::load(ckpt)?;
    let samples = read_dataset(data)?;
    check_dataset_matches(&model, &samples, "eval")?;
    let meta = RunMeta {
        tag: tag.to_string(),
        cpf: model.backbone.cpf_enabled(),
        graph: model.pgnn.graph().kind().as_str().to_string(),
        steps: model.pgnn.steps,
        seed: cfg.seed,
    };
    let report = evaluate(
        &model,
        &samples,
        cfg.pckh_threshold,
        cfg.pck_threshold,
        cfg.threads,
        meta,
    )?;
    let csv = report.to_csv();
    match out {
        Some(p) => {
            std::fs::write(p, &csv)?;
            println!("metrics written to {}", p.display());
        }
        None => print!("{csv}"),
    }
    println!(
        "mean PCKh@{} {:.4} | mean PCK@{} {:.4} | stages: {}",
        cfg.pckh_threshold,
        report.mean_pckh,
        cfg.pck_threshold,
        report.mean_pck,
        report
            .stage_pckh
            .iter()
            .map(|v| format!("{v:.4}"))
            .collect::<Vec<_>>()
            .join(" ")
    );
    Ok(())
}

fn cmd_ablate(common: &Overrides, train_p: &Path, val_p: &Path, out: &Path, seeds: &str) -> Result<()> {
    let cfg = common.resolve()?;
    let seeds: Vec<u64> = seeds
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("bad seed '{s}' in --seeds")))
        })
        .collect::<Result<_>>()?;
    if seeds.is_empty() {
        return Err(Error::Config("--seeds must name at least one seed".to_string()));
    }
    let train_set = read_dataset(train_p)?;
    let val_set = read_dataset(val_p)?;
    let probe = PoseModel::new(&cfg.model_config())?;
    check_dataset_matches(&probe, &train_set, "train")?;
    check_dataset_matches(&probe, &val_set, "val")?;

    let grid = default_grid();
    println!("running {} cells x {} seeds", grid.len(), seeds.len());
    let rows = run_grid(
        &train_set,
        &val_set,
        &cfg.model_config(),
        &cfg.train_config(),
        &grid,
        &seeds,
        |cell, seed, report| {
            println!("  {} seed {}: mean PCKh {:.4}", cell.tag(), seed, report.mean_pckh);
        },
    )?;
    std::fs::write(out, grid_to_csv(&rows))?;
    println!("grid written to {}", out.display());
    Ok(())
}

fn cmd_gradcheck(eps: f64, tol: f64) -> Result<()> {
    let reports = crate::gradcheck::standard_suite(eps, tol)?;
    let mut failed = 0usize;
    for r in &reports {
        println!("{r}");
        if !r.passed() {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(Error::GradCheckFailed { failed, total: reports.len() });
    }
    println!("all {} checks passed", reports.len());
    Ok(())
}

fn cmd_dump(
    common: &Overrides,
    data: &Path,
    index: usize,
    out: &Path,
    ckpt: Option<&Path>,
) -> Result<()> {
    let cfg = common.resolve()?;
    let samples = read_dataset(data)?;
    let sample = samples
        .get(index)
        .ok_or_else(|| Error::Dataset(format!("index {index} out of range ({} samples)", samples.len())))?;
    let names: Vec<String> = if sample.num_joints() == 14 {
        Skeleton::lsp14().names().iter().map(|s| s.to_string()).collect()
    } else {
        (0..sample.num_joints()).map(|i| format!("joint{i}")).collect()
    };
    match ckpt {
        None => {
            dump_stack(&sample.gt_heatmaps, &names, out, "gt")?;
            println!("ground-truth heatmaps for sample {index} written to {}", out.display());
        }
        Some(ckpt) => {
            let model = checkpoint::load(ckpt)?;
            check_dataset_matches(&model, std::slice::from_ref(sample), "dump")?;
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape, false);
            let (ih, iw) = sample.image_size();
            let image =
                tape.leaf(Tensor::new(vec![1, 1, ih, iw], sample.image.data().to_vec())?, false);
            let fwd = model.forward(&mut tape, &bound, image)?;
            let (mh, mw) = sample.map_size();
            let refined = Tensor::new(
                vec![model.num_joints(), mh, mw],
                tape.value(fwd.refined).data().to_vec(),
            )?;
            dump_stack(&refined, &names, out, "pred")?;
            let _ = cfg;
            println!("predicted heatmaps for sample {index} written to {}", out.display());
        }
    }
    Ok(())
}
