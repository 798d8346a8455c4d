//! The full model: backbone stages feeding the message-passing refiner.

use crate::backbone::{deep_supervision_loss, Backbone, BoundBackbone};
use crate::error::{Error, Result};
use crate::graph::{GraphKind, PoseGraph};
use crate::pgnn::{BoundPgnn, PgnnMode, PgnnModel};
use crate::rng::subseed;
use crate::skeleton::Skeleton;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Everything needed to build (or rebuild) a model.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub num_joints: usize,
    pub map_h: usize,
    pub map_w: usize,
    pub stem_stride: usize,
    pub stages: usize,
    pub width: usize,
    pub msg_kernel: usize,
    pub gate_kernel: usize,
    pub steps: usize,
    pub graph: GraphKind,
    pub cpf: bool,
    pub mode: PgnnMode,
    pub literal_t0_residual: bool,
    /// Hidden state width per node; 1 keeps states as plain score maps.
    pub hidden_channels: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_joints: 14,
            map_h: 32,
            map_w: 32,
            stem_stride: 2,
            stages: 3,
            width: 32,
            msg_kernel: 3,
            gate_kernel: 3,
            steps: 2,
            graph: GraphKind::Tree,
            cpf: true,
            mode: PgnnMode::Gru,
            literal_t0_residual: false,
            hidden_channels: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PoseModel {
    pub backbone: Backbone,
    pub pgnn: PgnnModel,
    map_h: usize,
    map_w: usize,
}

pub struct BoundModel {
    pub backbone: BoundBackbone,
    pub pgnn: BoundPgnn,
}

pub struct ForwardOut {
    /// One prediction stack per stage, [B, K, H, W] each.
    pub stage_preds: Vec<Var>,
    /// Refined output of the message-passing steps (the model's prediction).
    pub refined: Var,
}

/// Parameter accounting for one run, printed so model size stays visible.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamReport {
    pub backbone: usize,
    pub pgnn: usize,
}

impl ParamReport {
    pub fn total(&self) -> usize {
        self.backbone + self.pgnn
    }

    pub fn pgnn_fraction(&self) -> f64 {
        self.pgnn as f64 / self.backbone.max(1) as f64
    }
}

impl std::fmt::Display for ParamReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "params: backbone {} + graph refiner {} = {} (refiner adds {:.2}%)",
            self.backbone,
            self.pgnn,
            self.total(),
            100.0 * self.pgnn_fraction()
        )
    }
}

impl PoseModel {
    /// Build from presets. `GraphKind::Custom` here means a plain chain over
    /// `num_joints` nodes (handy for small test models); arbitrary graphs go
    /// through [`with_graph`](Self::with_graph).
    pub fn new(cfg: &ModelConfig) -> Result<PoseModel> {
        if cfg.num_joints != 14 && cfg.graph != GraphKind::Custom {
            return Err(Error::Config(format!(
                "tree/loopy presets are defined for the 14-joint skeleton, got K={}",
                cfg.num_joints
            )));
        }
        let graph = match cfg.graph {
            GraphKind::Tree => PoseGraph::tree(&Skeleton::lsp14()),
            GraphKind::Loopy => PoseGraph::loopy(&Skeleton::lsp14()),
            GraphKind::Custom => PoseGraph::chain(cfg.num_joints),
        };
        Self::with_graph(cfg, graph)
    }

    /// Build with an explicit graph (its node count wins over `num_joints`).
    pub fn with_graph(cfg: &ModelConfig, graph: PoseGraph) -> Result<PoseModel> {
        let k = graph.num_nodes();
        let backbone = Backbone::new(
            k,
            cfg.width,
            cfg.stages,
            cfg.cpf,
            cfg.stem_stride,
            subseed(cfg.seed, "model/backbone"),
        )?;
        if cfg.mode == PgnnMode::Mrf && cfg.hidden_channels != 1 {
            return Err(Error::Config(
                "the product-form mode requires hidden_channels = 1".to_string(),
            ));
        }
        let mut pgnn = PgnnModel::with_hidden_channels(
            graph,
            cfg.msg_kernel,
            cfg.gate_kernel,
            cfg.steps,
            cfg.mode,
            cfg.hidden_channels,
            subseed(cfg.seed, "model/pgnn"),
        );
        pgnn.literal_t0_residual = cfg.literal_t0_residual;
        Ok(PoseModel { backbone, pgnn, map_h: cfg.map_h, map_w: cfg.map_w })
    }

    pub fn map_size(&self) -> (usize, usize) {
        (self.map_h, self.map_w)
    }

    pub fn num_joints(&self) -> usize {
        self.backbone.num_joints()
    }

    pub fn expected_image_size(&self) -> (usize, usize) {
        (self.map_h * self.backbone.stem_stride(), self.map_w * self.backbone.stem_stride())
    }

    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> BoundModel {
        BoundModel {
            backbone: self.backbone.bind(tape, requires_grad),
            pgnn: self.pgnn.bind(tape, requires_grad),
        }
    }

    /// Bound parameter vars, backbone first then refiner, matching
    /// [`named_params`](Self::named_params).
    pub fn param_vars(&self, bound: &BoundModel) -> Vec<Var> {
        let mut out = self.backbone.param_vars(&bound.backbone);
        out.extend(self.pgnn.param_vars(&bound.pgnn));
        out
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.backbone.named_params();
        out.extend(self.pgnn.named_params());
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.backbone.named_params_mut();
        out.extend(self.pgnn.named_params_mut());
        out
    }

    pub fn param_report(&self) -> ParamReport {
        ParamReport { backbone: self.backbone.param_count(), pgnn: self.pgnn.param_count() }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &BoundModel, image: Var) -> Result<ForwardOut> {
        let ish = tape.value(image).shape().to_vec();
        let (eh, ew) = self.expected_image_size();
        if ish.len() != 4 || ish[2] != eh || ish[3] != ew {
            return Err(Error::Shape {
                op: "model forward",
                detail: format!("image {:?} does not match expected [B,1,{eh},{ew}]", ish),
            });
        }
        let (stage_preds, _feat) = self.backbone.forward(tape, &bound.backbone, image)?;
        let unary = *stage_preds.last().expect("at least one stage");
        let refined = self.pgnn.propagate(tape, &bound.pgnn, unary)?;
        let osh = tape.value(refined).shape();
        if osh[2] != self.map_h || osh[3] != self.map_w {
            return Err(Error::Shape {
                op: "model forward",
                detail: format!(
                    "prediction resolution {}x{} does not match configured map {}x{}",
                    osh[2], osh[3], self.map_h, self.map_w
                ),
            });
        }
        Ok(ForwardOut { stage_preds, refined })
    }

    /// Deep-supervision objective against a ground-truth stack leaf.
    pub fn loss(&self, tape: &mut Tape, out: &ForwardOut, gt: Var) -> Result<Var> {
        deep_supervision_loss(tape, &out.stage_preds, out.refined, gt)
    }
}
