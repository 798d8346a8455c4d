//! Training: per-sample forward/backward through the unrolled propagation
//! steps, gradient averaging over the batch, RMSProp updates, and the step
//! learning-rate schedule.
//!
//! Reference-mode determinism: sample order comes from a seeded shuffle,
//! per-sample gradients are reduced in batch index order, and augmentation
//! seeds derive from (seed, epoch, dataset index). Parallelism only spreads
//! the independent per-sample passes across threads.

use crate::error::{Error, Result};
use crate::metrics::{decode, evaluate, pckh, EvalReport, RunMeta};
use crate::model::PoseModel;
use crate::optim::RmsProp;
use crate::rng::{stream, subseed};
use crate::skeleton::Skeleton;
use crate::synth::{augment, AugmentConfig, Sample};
use crate::tape::Tape;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use std::fmt::Write as _;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    /// Epoch index at which lr is multiplied by `lr_drop_factor`.
    /// `None` applies the default rule: 0.8 of the total epoch count.
    pub lr_drop_epoch: Option<usize>,
    pub lr_drop_factor: f64,
    pub seed: u64,
    /// Train-time augmentation; `None` trains on the raw samples.
    pub augment: Option<AugmentConfig>,
    /// Gaussian width used when augmentation re-renders ground truth.
    pub sigma: f64,
    pub threads: usize,
    pub pckh_threshold: f64,
    pub pck_threshold: f64,
    /// Run validation every N epochs (0: only after the last epoch).
    pub val_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 8,
            lr: 2.5e-3,
            rho: 0.99,
            eps: 1e-8,
            lr_drop_epoch: None,
            lr_drop_factor: 0.1,
            seed: 0,
            augment: Some(AugmentConfig::default()),
            sigma: 1.0,
            threads: 0,
            pckh_threshold: 0.5,
            pck_threshold: 0.2,
            val_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn effective_drop_epoch(&self) -> usize {
        self.lr_drop_epoch.unwrap_or(self.epochs * 4 / 5)
    }
}

#[derive(Debug, Clone)]
pub struct CurveRow {
    pub epoch: usize,
    pub split: &'static str,
    pub loss: f64,
    pub mean_pckh: f64,
}

/// Loss-curve CSV with header `epoch,split,loss,mean_pckh`.
pub fn curve_to_csv(rows: &[CurveRow]) -> String {
    let mut s = String::from("epoch,split,loss,mean_pckh\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:.6},{:.6}", r.epoch, r.split, r.loss, r.mean_pckh);
    }
    s
}

pub struct TrainOutcome {
    pub curve: Vec<CurveRow>,
    pub final_report: EvalReport,
}

struct StepOut {
    loss: f64,
    grads: Vec<Tensor>,
    correct: usize,
    joints: usize,
}

fn sample_step(model: &PoseModel, sample: &Sample, pckh_thr: f64) -> Result<StepOut> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let (ih, iw) = sample.image_size();
    let image = tape.leaf(Tensor::new(vec![1, 1, ih, iw], sample.image.data().to_vec())?, false);
    let out = model.forward(&mut tape, &bound, image)?;
    let (mh, mw) = sample.map_size();
    let gt = tape.leaf(
        Tensor::new(vec![1, model.num_joints(), mh, mw], sample.gt_heatmaps.data().to_vec())?,
        false,
    );
    let loss_var = model.loss(&mut tape, &out, gt)?;
    let loss = tape.value(loss_var).item();

    let coords = decode(tape.value(out.refined));
    let correct = pckh(&coords, &sample.joints, sample.head_len, pckh_thr)?
        .iter()
        .filter(|&&b| b)
        .count();

    tape.backward(loss_var)?;
    let grads = model
        .param_vars(&bound)
        .into_iter()
        .map(|v| tape.grad(v))
        .collect::<Result<Vec<_>>>()?;
    Ok(StepOut { loss, grads, correct, joints: sample.num_joints() })
}

/// Train in place. The loss curve gets one `train` row per epoch (mean batch
/// loss and running PCKh of the refined output) and `val` rows per the
/// `val_every` schedule; the returned report is the final validation pass.
pub fn train(
    model: &mut PoseModel,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
    meta: RunMeta,
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::Dataset("training set is empty".to_string()));
    }
    if val_set.is_empty() {
        return Err(Error::Dataset("validation set is empty".to_string()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".to_string()));
    }
    if cfg.augment.is_some() && model.num_joints() != 14 {
        return Err(Error::Config(
            "augmentation needs the 14-joint skeleton's mirror pairs".to_string(),
        ));
    }
    let skeleton = Skeleton::lsp14();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;

    let mut opt = RmsProp::new(cfg.lr, cfg.rho, cfg.eps);
    let drop_at = cfg.effective_drop_epoch();
    let mut curve = Vec::new();

    for epoch in 0..cfg.epochs {
        if epoch == drop_at && epoch > 0 {
            opt.lr *= cfg.lr_drop_factor;
        }
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut stream(cfg.seed, &format!("shuffle/{epoch}")));

        let mut epoch_loss = 0.0;
        let mut epoch_correct = 0usize;
        let mut epoch_joints = 0usize;
        let mut batches = 0usize;

        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let steps: Vec<Result<StepOut>> = pool.install(|| {
                batch
                    .par_iter()
                    .map(|&idx| {
                        let sample = &train_set[idx];
                        let step = match &cfg.augment {
                            Some(aug) => {
                                let aseed = subseed(cfg.seed, &format!("aug/{epoch}/{idx}"));
                                let s = augment(sample, &skeleton, aseed, aug, cfg.sigma)?;
                                sample_step(model, &s, cfg.pckh_threshold)
                            }
                            None => sample_step(model, sample, cfg.pckh_threshold),
                        };
                        step
                    })
                    .collect()
            });

            // deterministic reduction in batch index order
            let mut batch_loss = 0.0;
            let mut summed: Option<Vec<Tensor>> = None;
            for step in steps {
                let step = step?;
                batch_loss += step.loss;
                epoch_correct += step.correct;
                epoch_joints += step.joints;
                summed = Some(match summed {
                    None => step.grads,
                    Some(mut acc) => {
                        for (a, g) in acc.iter_mut().zip(&step.grads) {
                            for (av, gv) in a.data_mut().iter_mut().zip(g.data()) {
                                *av += gv;
                            }
                        }
                        acc
                    }
                });
            }
            let n = batch.len() as f64;
            batch_loss /= n;
            let mut grads = summed.expect("non-empty batch");
            for g in &mut grads {
                for v in g.data_mut() {
                    *v /= n;
                }
            }

            if !batch_loss.is_finite() {
                let max_abs_grad = grads.iter().map(|g| g.max_abs()).fold(0.0f64, f64::max);
                return Err(Error::NanLoss { epoch, batch: batch_idx, max_abs_grad });
            }

            let mut params = model.named_params_mut();
            opt.step(&mut params, &grads)?;
            epoch_loss += batch_loss;
            batches += 1;
        }

        let train_pckh = epoch_correct as f64 / epoch_joints.max(1) as f64;
        curve.push(CurveRow {
            epoch,
            split: "train",
            loss: epoch_loss / batches.max(1) as f64,
            mean_pckh: train_pckh,
        });

        let want_val = cfg.val_every > 0 && (epoch + 1) % cfg.val_every == 0;
        if want_val && epoch + 1 < cfg.epochs {
            let report = evaluate(
                model,
                val_set,
                cfg.pckh_threshold,
                cfg.pck_threshold,
                cfg.threads,
                meta.clone(),
            )?;
            curve.push(CurveRow {
                epoch,
                split: "val",
                loss: report.mean_loss,
                mean_pckh: report.mean_pckh,
            });
        }
    }

    let final_report = evaluate(
        model,
        val_set,
        cfg.pckh_threshold,
        cfg.pck_threshold,
        cfg.threads,
        meta,
    )?;
    if cfg.epochs > 0 {
        curve.push(CurveRow {
            epoch: cfg.epochs - 1,
            split: "val",
            loss: final_report.mean_loss,
            mean_pckh: final_report.mean_pckh,
        });
    }
    Ok(TrainOutcome { curve, final_report })
}
