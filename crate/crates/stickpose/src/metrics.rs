//! Heatmap decoding and PCK/PCKh evaluation.

use crate::error::{Error, Result};
use crate::model::PoseModel;
use crate::synth::Sample;
use crate::tape::Tape;
use crate::tensor::Tensor;
use rayon::prelude::*;
use std::fmt::Write as _;

/// Argmax decoding of a [K, H, W] (or [1, K, H, W]) stack into per-joint
/// (x, y) coordinates. Ties break toward the smallest row, then column.
pub fn decode(stack: &Tensor) -> Vec<(f64, f64)> {
    let sh = stack.shape();
    let (k, h, w) = match sh.len() {
        3 => (sh[0], sh[1], sh[2]),
        4 => (sh[1], sh[2], sh[3]),
        _ => panic!("decode expects [K,H,W] or [1,K,H,W], got {:?}", sh),
    };
    let data = stack.data();
    (0..k)
        .map(|c| {
            let plane = &data[c * h * w..(c + 1) * h * w];
            let mut best = 0usize;
            let mut best_v = f64::NEG_INFINITY;
            for (i, &v) in plane.iter().enumerate() {
                if v > best_v {
                    best_v = v;
                    best = i;
                }
            }
            ((best % w) as f64, (best / w) as f64)
        })
        .collect()
}

fn per_joint_within(
    pred: &[(f64, f64)],
    gt: &[(f64, f64)],
    context: &'static str,
    norm_len: f64,
    threshold: f64,
) -> Result<Vec<bool>> {
    if !(norm_len > 0.0) {
        return Err(Error::BadNormLength(norm_len));
    }
    if pred.len() != gt.len() {
        return Err(Error::JointCountMismatch { context, expected: gt.len(), got: pred.len() });
    }
    let limit = threshold * norm_len;
    Ok(pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let d = ((p.0 - g.0).powi(2) + (p.1 - g.1).powi(2)).sqrt();
            d <= limit // boundary counts as correct
        })
        .collect())
}

/// Head-normalized correctness: joint k is correct iff
/// dist(pred_k, gt_k) <= threshold * head_len.
pub fn pckh(
    pred: &[(f64, f64)],
    gt: &[(f64, f64)],
    head_len: f64,
    threshold: f64,
) -> Result<Vec<bool>> {
    per_joint_within(pred, gt, "pckh", head_len, threshold)
}

/// Torso-normalized correctness: dist <= threshold * torso_len.
pub fn pck(
    pred: &[(f64, f64)],
    gt: &[(f64, f64)],
    torso_len: f64,
    threshold: f64,
) -> Result<Vec<bool>> {
    per_joint_within(pred, gt, "pck", torso_len, threshold)
}

/// Run descriptor carried into reports and CSV rows.
#[derive(Debug, Clone)]
pub struct RunMeta {
    pub tag: String,
    pub cpf: bool,
    pub graph: String,
    pub steps: usize,
    pub seed: u64,
}

impl Default for RunMeta {
    fn default() -> Self {
        RunMeta { tag: "run".to_string(), cpf: true, graph: "tree".to_string(), steps: 2, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub meta: RunMeta,
    pub joint_names: Vec<String>,
    /// PCKh rate per joint, refined output.
    pub pckh_per_joint: Vec<f64>,
    pub mean_pckh: f64,
    /// PCK rate per joint, refined output.
    pub pck_per_joint: Vec<f64>,
    pub mean_pck: f64,
    /// Mean PCKh decoded from each backbone stage's prediction.
    pub stage_pckh: Vec<f64>,
    pub mean_loss: f64,
    pub num_samples: usize,
}

impl EvalReport {
    /// Metrics CSV with header `tag,cpf,graph,T,seed,joint,metric,value`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("tag,cpf,graph,T,seed,joint,metric,value\n");
        let meta = &self.meta;
        let mut row = |joint: &str, metric: &str, value: f64| {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{:.6}",
                meta.tag,
                if meta.cpf { "on" } else { "off" },
                meta.graph,
                meta.steps,
                meta.seed,
                joint,
                metric,
                value
            );
        };
        for (name, &v) in self.joint_names.iter().zip(&self.pckh_per_joint) {
            row(name, "pckh", v);
        }
        row("mean", "pckh", self.mean_pckh);
        for (name, &v) in self.joint_names.iter().zip(&self.pck_per_joint) {
            row(name, "pck", v);
        }
        row("mean", "pck", self.mean_pck);
        for (i, &v) in self.stage_pckh.iter().enumerate() {
            row(&format!("stage{}", i + 1), "pckh", v);
        }
        row("all", "loss", self.mean_loss);
        s
    }
}

/// Per-sample forward results needed by the evaluator.
struct SampleEval {
    correct_pckh: Vec<bool>,
    correct_pck: Vec<bool>,
    stage_correct: Vec<Vec<bool>>,
    loss: f64,
}

fn eval_one(
    model: &PoseModel,
    sample: &Sample,
    pckh_thr: f64,
    pck_thr: f64,
) -> Result<SampleEval> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let img_shape = {
        let (h, w) = sample.image_size();
        vec![1, 1, h, w]
    };
    let image = tape.leaf(
        Tensor::new(img_shape, sample.image.data().to_vec())?,
        false,
    );
    let out = model.forward(&mut tape, &bound, image)?;
    let (mh, mw) = sample.map_size();
    let gt = tape.leaf(
        Tensor::new(vec![1, model.num_joints(), mh, mw], sample.gt_heatmaps.data().to_vec())?,
        false,
    );
    let loss_var = model.loss(&mut tape, &out, gt)?;
    let loss = tape.value(loss_var).item();

    let refined = decode(tape.value(out.refined));
    let correct_pckh = pckh(&refined, &sample.joints, sample.head_len, pckh_thr)?;
    let correct_pck = pck(&refined, &sample.joints, sample.torso_len, pck_thr)?;
    let stage_correct = out
        .stage_preds
        .iter()
        .map(|&p| {
            let coords = decode(tape.value(p));
            pckh(&coords, &sample.joints, sample.head_len, pckh_thr)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SampleEval { correct_pckh, correct_pck, stage_correct, loss })
}

/// Evaluate a model over a dataset. Pure: repeated calls give identical
/// reports. Samples are processed in parallel and reduced in index order.
pub fn evaluate(
    model: &PoseModel,
    samples: &[Sample],
    pckh_thr: f64,
    pck_thr: f64,
    threads: usize,
    meta: RunMeta,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Dataset("cannot evaluate on an empty dataset".to_string()));
    }
    let k = model.num_joints();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let evals: Vec<SampleEval> = pool.install(|| {
        samples
            .par_iter()
            .map(|s| eval_one(model, s, pckh_thr, pck_thr))
            .collect::<Result<Vec<_>>>()
    })?;

    let n = samples.len() as f64;
    let stages = evals[0].stage_correct.len();
    let mut pckh_counts = vec![0usize; k];
    let mut pck_counts = vec![0usize; k];
    let mut stage_counts = vec![vec![0usize; k]; stages];
    let mut loss_sum = 0.0;
    for e in &evals {
        for (j, &ok) in e.correct_pckh.iter().enumerate() {
            pckh_counts[j] += ok as usize;
        }
        for (j, &ok) in e.correct_pck.iter().enumerate() {
            pck_counts[j] += ok as usize;
        }
        for (si, sc) in e.stage_correct.iter().enumerate() {
            for (j, &ok) in sc.iter().enumerate() {
                stage_counts[si][j] += ok as usize;
            }
        }
        loss_sum += e.loss;
    }
    let rates = |counts: &[usize]| -> Vec<f64> { counts.iter().map(|&c| c as f64 / n).collect() };
    let mean = |r: &[f64]| r.iter().sum::<f64>() / r.len() as f64;
    let pckh_per_joint = rates(&pckh_counts);
    let pck_per_joint = rates(&pck_counts);
    let stage_pckh: Vec<f64> = stage_counts.iter().map(|c| mean(&rates(c))).collect();
    let joint_names = crate::skeleton::Skeleton::lsp14()
        .names()
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>();
    let joint_names = if k == 14 {
        joint_names
    } else {
        (0..k).map(|i| format!("joint{i}")).collect()
    };
    Ok(EvalReport {
        meta,
        joint_names,
        mean_pckh: mean(&pckh_per_joint),
        pckh_per_joint,
        mean_pck: mean(&pck_per_joint),
        pck_per_joint,
        stage_pckh,
        mean_loss: loss_sum / n,
        num_samples: samples.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn delta_stack(peaks: &[(usize, usize)], h: usize, w: usize) -> Tensor {
        let mut data = vec![0.0; peaks.len() * h * w];
        for (k, &(y, x)) in peaks.iter().enumerate() {
            data[k * h * w + y * w + x] = 1.0;
        }
        Tensor::new(vec![peaks.len(), h, w], data).unwrap()
    }

    #[test]
    fn decode_finds_delta_peaks() {
        let stack = delta_stack(&[(2, 3), (0, 0), (7, 5)], 8, 8);
        assert_eq!(decode(&stack), vec![(3.0, 2.0), (0.0, 0.0), (5.0, 7.0)]);
    }

    #[test]
    fn decode_uniform_map_ties_to_origin() {
        let stack = Tensor::filled(&[1, 4, 4], 0.25);
        assert_eq!(decode(&stack), vec![(0.0, 0.0)]);
    }

    #[test]
    fn decode_round_trips_generator_output() {
        let sk = crate::skeleton::Skeleton::lsp14();
        for seed in 0..10 {
            let s = crate::synth::sample_pose(&sk, seed, &crate::synth::SynthConfig::default())
                .unwrap();
            let decoded = decode(&s.gt_heatmaps);
            for (d, g) in decoded.iter().zip(&s.joints) {
                assert_eq!(d.0, g.0.round());
                assert_eq!(d.1, g.1.round());
            }
        }
    }

    #[test]
    fn identical_joints_are_all_correct() {
        let gt = vec![(1.0, 2.0), (3.0, 4.0)];
        assert!(pckh(&gt, &gt, 2.0, 0.5).unwrap().iter().all(|&b| b));
        assert!(pck(&gt, &gt, 5.0, 0.2).unwrap().iter().all(|&b| b));
    }

    #[test]
    fn boundary_is_inclusive() {
        let head = 4.0;
        let thr = 0.5;
        let gt = vec![(10.0, 10.0)];
        let exactly = vec![(10.0 + thr * head, 10.0)];
        assert!(pckh(&exactly, &gt, head, thr).unwrap()[0]);
        let just_over = vec![(10.0 + thr * head + 1e-6, 10.0)];
        assert!(!pckh(&just_over, &gt, head, thr).unwrap()[0]);
    }

    #[test]
    fn hand_counted_batch_rate() {
        // four single-joint samples, two within threshold
        let gt = vec![(5.0, 5.0)];
        let preds = [
            vec![(5.0, 5.0)],      // correct
            vec![(5.4, 5.0)],      // correct (dist 0.4 <= 0.5 * 1.0)
            vec![(7.0, 5.0)],      // wrong
            vec![(5.0, 9.0)],      // wrong
        ];
        let mut correct = 0;
        for p in &preds {
            correct += pckh(p, &gt, 1.0, 0.5).unwrap()[0] as usize;
        }
        assert_eq!(correct as f64 / preds.len() as f64, 0.5);
    }

    #[test]
    fn scale_covariance() {
        let gt = vec![(3.0, 4.0), (10.0, 2.0)];
        let pred = vec![(3.5, 4.5), (11.0, 2.0)];
        let base = pckh(&pred, &gt, 2.0, 0.5).unwrap();
        for factor in [0.5, 2.0, 7.3] {
            let scale = |v: &[(f64, f64)]| -> Vec<(f64, f64)> {
                v.iter().map(|&(x, y)| (x * factor, y * factor)).collect()
            };
            let scaled = pckh(&scale(&pred), &scale(&gt), 2.0 * factor, 0.5).unwrap();
            assert_eq!(base, scaled, "factor {factor}");
        }
    }

    #[test]
    fn nonpositive_norm_length_is_rejected() {
        let gt = vec![(0.0, 0.0)];
        assert!(matches!(pckh(&gt, &gt, 0.0, 0.5), Err(Error::BadNormLength(_))));
        assert!(matches!(pck(&gt, &gt, -1.0, 0.2), Err(Error::BadNormLength(_))));
    }

    #[test]
    fn evaluation_is_pure() {
        use crate::model::{ModelConfig, PoseModel};
        let sk = crate::skeleton::Skeleton::lsp14();
        let synth = crate::synth::SynthConfig { map_h: 8, map_w: 8, ..Default::default() };
        let samples: Vec<_> = (0..6)
            .map(|i| crate::synth::sample_pose(&sk, i, &synth).unwrap())
            .collect();
        let model = PoseModel::new(&ModelConfig {
            map_h: 8,
            map_w: 8,
            stages: 2,
            width: 4,
            steps: 1,
            ..ModelConfig::default()
        })
        .unwrap();
        let a = evaluate(&model, &samples, 0.5, 0.2, 0, RunMeta::default()).unwrap();
        let b = evaluate(&model, &samples, 0.5, 0.2, 0, RunMeta::default()).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn flip_consistency_gives_perfect_pck() {
        let sk = crate::skeleton::Skeleton::lsp14();
        let s = crate::synth::sample_pose(&sk, 3, &crate::synth::SynthConfig::default()).unwrap();
        let flipped = crate::synth::apply_augment(&s, &sk, 1.0, 0.0, true, 1.0, 1.0).unwrap();
        let restored = crate::synth::apply_augment(&flipped, &sk, 1.0, 0.0, true, 1.0, 1.0).unwrap();
        let correct = pck(&restored.joints, &s.joints, s.torso_len, 0.2).unwrap();
        assert!(correct.iter().all(|&b| b));
    }
}
