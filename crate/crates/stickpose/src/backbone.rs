//! Multi-stage fully-convolutional backbone with cascaded prediction fusion.
//!
//! A strided stem brings the image to map resolution; each stage is two 3x3
//! convs (relu) followed by a 1x1 prediction head. With fusion enabled, the
//! previous stage's prediction map is lifted back to feature width by a 1x1
//! conv and added element-wise into the next stage's input features, so
//! early predictions act as priors for later ones. Every stage's prediction
//! is returned for deep supervision; the last one is the unary stack for
//! message passing.

use crate::error::{Error, Result};
use crate::pgnn::heatmap_loss;
use crate::rng::stream;
use crate::tape::{ConvSpec, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct StageParams {
    pub conv1_k: Tensor,
    pub conv1_b: Tensor,
    pub conv2_k: Tensor,
    pub conv2_b: Tensor,
    pub head_k: Tensor,
    pub head_b: Tensor,
    /// Present from stage 2 on when fusion is enabled.
    pub lift_k: Option<Tensor>,
    pub lift_b: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct Backbone {
    pub stem_k: Tensor,
    pub stem_b: Tensor,
    pub stages: Vec<StageParams>,
    width: usize,
    num_joints: usize,
    stem_stride: usize,
    cpf: bool,
}

pub struct BoundStage {
    pub conv1: (Var, Var),
    pub conv2: (Var, Var),
    pub head: (Var, Var),
    pub lift: Option<(Var, Var)>,
}

pub struct BoundBackbone {
    pub stem: (Var, Var),
    pub stages: Vec<BoundStage>,
}

impl Backbone {
    pub fn new(
        num_joints: usize,
        width: usize,
        num_stages: usize,
        cpf: bool,
        stem_stride: usize,
        seed: u64,
    ) -> Result<Backbone> {
        if num_stages < 1 {
            return Err(Error::Config("backbone needs at least one stage".to_string()));
        }
        if width < 1 || num_joints < 1 || stem_stride < 1 {
            return Err(Error::Config("width, joints and stem stride must be positive".to_string()));
        }
        let init = |shape: &[usize], fan_in: usize, name: String| {
            Tensor::uniform_fan_in(shape, fan_in, &mut stream(seed, &name))
        };
        let stem_k = init(&[width, 1, 3, 3], 9, "init/backbone/stem/kernel".to_string());
        let stem_b = Tensor::zeros(&[width]);
        let stages = (0..num_stages)
            .map(|i| {
                let tag = |part: &str| format!("init/backbone/stage{i}/{part}");
                let lift = (cpf && i > 0).then(|| {
                    (
                        init(&[width, num_joints, 1, 1], num_joints, tag("lift")),
                        Tensor::zeros(&[width]),
                    )
                });
                let (lift_k, lift_b) = match lift {
                    Some((k, b)) => (Some(k), Some(b)),
                    None => (None, None),
                };
                StageParams {
                    conv1_k: init(&[width, width, 3, 3], width * 9, tag("conv1")),
                    conv1_b: Tensor::zeros(&[width]),
                    conv2_k: init(&[width, width, 3, 3], width * 9, tag("conv2")),
                    conv2_b: Tensor::zeros(&[width]),
                    head_k: init(&[num_joints, width, 1, 1], width, tag("head")),
                    head_b: Tensor::zeros(&[num_joints]),
                    lift_k,
                    lift_b,
                }
            })
            .collect();
        Ok(Backbone { stem_k, stem_b, stages, width, num_joints, stem_stride, cpf })
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn num_joints(&self) -> usize {
        self.num_joints
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn stem_stride(&self) -> usize {
        self.stem_stride
    }

    pub fn cpf_enabled(&self) -> bool {
        self.cpf
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("backbone/stem/kernel".to_string(), &self.stem_k),
            ("backbone/stem/bias".to_string(), &self.stem_b),
        ];
        for (i, s) in self.stages.iter().enumerate() {
            let tag = |part: &str| format!("backbone/stage{i}/{part}");
            out.push((tag("conv1/kernel"), &s.conv1_k));
            out.push((tag("conv1/bias"), &s.conv1_b));
            out.push((tag("conv2/kernel"), &s.conv2_k));
            out.push((tag("conv2/bias"), &s.conv2_b));
            out.push((tag("head/kernel"), &s.head_k));
            out.push((tag("head/bias"), &s.head_b));
            if let (Some(k), Some(b)) = (&s.lift_k, &s.lift_b) {
                out.push((tag("lift/kernel"), k));
                out.push((tag("lift/bias"), b));
            }
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("backbone/stem/kernel".to_string(), &mut self.stem_k),
            ("backbone/stem/bias".to_string(), &mut self.stem_b),
        ];
        for (i, s) in self.stages.iter_mut().enumerate() {
            let tag = |part: &str| format!("backbone/stage{i}/{part}");
            out.push((tag("conv1/kernel"), &mut s.conv1_k));
            out.push((tag("conv1/bias"), &mut s.conv1_b));
            out.push((tag("conv2/kernel"), &mut s.conv2_k));
            out.push((tag("conv2/bias"), &mut s.conv2_b));
            out.push((tag("head/kernel"), &mut s.head_k));
            out.push((tag("head/bias"), &mut s.head_b));
            if let (Some(k), Some(b)) = (&mut s.lift_k, &mut s.lift_b) {
                out.push((tag("lift/kernel"), k));
                out.push((tag("lift/bias"), b));
            }
        }
        out
    }

    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> BoundBackbone {
        let mut leaf = |t: &Tensor| tape.leaf(t.clone(), requires_grad);
        let stem = (leaf(&self.stem_k), leaf(&self.stem_b));
        let stages = self
            .stages
            .iter()
            .map(|s| BoundStage {
                conv1: (leaf(&s.conv1_k), leaf(&s.conv1_b)),
                conv2: (leaf(&s.conv2_k), leaf(&s.conv2_b)),
                head: (leaf(&s.head_k), leaf(&s.head_b)),
                lift: match (&s.lift_k, &s.lift_b) {
                    (Some(k), Some(b)) => Some((leaf(k), leaf(b))),
                    _ => None,
                },
            })
            .collect();
        BoundBackbone { stem, stages }
    }

    pub fn param_vars(&self, bound: &BoundBackbone) -> Vec<Var> {
        let mut out = vec![bound.stem.0, bound.stem.1];
        for s in &bound.stages {
            out.extend_from_slice(&[s.conv1.0, s.conv1.1, s.conv2.0, s.conv2.1, s.head.0, s.head.1]);
            if let Some((k, b)) = s.lift {
                out.push(k);
                out.push(b);
            }
        }
        out
    }

    /// Run the image [B, 1, H_img, W_img] through every stage. Returns the
    /// per-stage prediction stacks (for deep supervision) and the final
    /// stage's features.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundBackbone,
        image: Var,
    ) -> Result<(Vec<Var>, Var)> {
        let ish = tape.value(image).shape().to_vec();
        if ish.len() != 4 || ish[1] != 1 {
            return Err(Error::Shape {
                op: "backbone",
                detail: format!("image must be [B,1,H,W], got {:?}", ish),
            });
        }
        let stem_spec = ConvSpec::new(self.stem_stride, 1, 1);
        let stem_out = tape.conv2d(image, bound.stem.0, bound.stem.1, stem_spec)?;
        let mut feat = tape.relu(stem_out)?;
        let same3 = ConvSpec::same(3);
        let same1 = ConvSpec::same(1);
        let mut preds = Vec::with_capacity(self.stages.len());
        for (i, stage) in bound.stages.iter().enumerate() {
            let input = if i == 0 {
                feat
            } else if let Some((lift_k, lift_b)) = stage.lift {
                let prior = tape.conv2d(preds[i - 1], lift_k, lift_b, same1)?;
                tape.add(feat, prior)?
            } else {
                feat
            };
            let c1 = tape.conv2d(input, stage.conv1.0, stage.conv1.1, same3)?;
            let a1 = tape.relu(c1)?;
            let c2 = tape.conv2d(a1, stage.conv2.0, stage.conv2.1, same3)?;
            feat = tape.relu(c2)?;
            preds.push(tape.conv2d(feat, stage.head.0, stage.head.1, same1)?);
        }
        Ok((preds, feat))
    }
}

/// Deep supervision: the per-stage losses plus the refined-output loss, all
/// in the mean-over-joints squared-error form, equally weighted.
pub fn deep_supervision_loss(
    tape: &mut Tape,
    preds: &[Var],
    refined: Var,
    gt: Var,
) -> Result<Var> {
    let mut total = heatmap_loss(tape, refined, gt)?;
    for &p in preds {
        let l = heatmap_loss(tape, p, gt)?;
        total = tape.add(total, l)?;
    }
    Ok(total)
}
