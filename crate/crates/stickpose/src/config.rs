//! Flat `key = value` run configuration.
//!
//! Every key has a default; a config file overrides defaults and command
//! line flags override the file. Unknown keys are rejected and all values
//! are validated before any compute starts.

use crate::error::{Error, Result};
use crate::graph::GraphKind;
use crate::model::ModelConfig;
use crate::pgnn::PgnnMode;
use crate::synth::{AugmentConfig, SynthConfig};
use crate::train::TrainConfig;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub joints: usize,
    pub map_size: usize,
    pub image_stride: usize,
    pub sigma: f64,
    pub stages: usize,
    pub width: usize,
    pub msg_kernel: usize,
    pub gate_kernel: usize,
    pub steps: usize,
    pub graph: GraphKind,
    pub cpf: bool,
    pub mode: PgnnMode,
    pub literal_t0_residual: bool,
    pub hidden_channels: usize,

    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch: usize,
    /// `None` = the 0.8-of-epochs default rule.
    pub lr_drop_epoch: Option<usize>,
    pub lr_drop_factor: f64,
    pub seed: u64,
    pub val_every: usize,

    pub augment: bool,
    pub aug_scale_min: f64,
    pub aug_scale_max: f64,
    pub aug_rotation: f64,
    pub aug_flip_prob: f64,
    pub aug_gain_min: f64,
    pub aug_gain_max: f64,

    pub angle_scale: f64,
    pub length_jitter: f64,
    pub center_jitter: f64,
    pub figure_scale: f64,
    pub thickness: f64,
    pub intensity_min: f64,
    pub intensity_max: f64,
    pub occluders: bool,
    pub max_occluders: usize,
    pub occluder_intensity_min: f64,
    pub occluder_intensity_max: f64,

    pub pckh_threshold: f64,
    pub pck_threshold: f64,
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        // full-scale settings, for reference: 256x256 crops to 64x64 maps
        // (stride 8), 250 epochs, batch 8, lr 1e-3 dropped 10x at epoch 200
        RunConfig {
            joints: 14,
            map_size: 32,
            image_stride: 2,
            sigma: 1.0,
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
            lr: 2.5e-3,
            rho: 0.99,
            eps: 1e-8,
            epochs: 30,
            batch: 8,
            lr_drop_epoch: None,
            lr_drop_factor: 0.1,
            seed: 0,
            val_every: 1,
            augment: true,
            aug_scale_min: 0.75,
            aug_scale_max: 1.25,
            aug_rotation: 30.0,
            aug_flip_prob: 0.5,
            aug_gain_min: 0.7,
            aug_gain_max: 1.3,
            angle_scale: 1.0,
            length_jitter: 0.1,
            center_jitter: 1.5,
            figure_scale: 1.0,
            thickness: 2.2,
            intensity_min: 0.55,
            intensity_max: 1.0,
            occluders: true,
            max_occluders: 2,
            occluder_intensity_min: 0.18,
            occluder_intensity_max: 0.5,
            pckh_threshold: 0.5,
            pck_threshold: 0.2,
            threads: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::Config(format!("bad value '{value}' for key '{key}'")))
}

fn parse_switch(key: &str, value: &str) -> Result<bool> {
    match value {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        _ => Err(Error::Config(format!("bad value '{value}' for key '{key}' (use on|off)"))),
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value', got '{raw}'", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "joints" => self.joints = parse(key, value)?,
            "map_size" => self.map_size = parse(key, value)?,
            "image_stride" => self.image_stride = parse(key, value)?,
            "sigma" => self.sigma = parse(key, value)?,
            "stages" => self.stages = parse(key, value)?,
            "width" => self.width = parse(key, value)?,
            "msg_kernel" => self.msg_kernel = parse(key, value)?,
            "gate_kernel" => self.gate_kernel = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "graph" => self.graph = value.parse()?,
            "cpf" => self.cpf = parse_switch(key, value)?,
            "mode" => self.mode = value.parse()?,
            "literal_t0_residual" => self.literal_t0_residual = parse_switch(key, value)?,
            "hidden_channels" => self.hidden_channels = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "rho" => self.rho = parse(key, value)?,
            "eps" => self.eps = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "lr_drop_epoch" => {
                self.lr_drop_epoch =
                    if value == "auto" { None } else { Some(parse(key, value)?) }
            }
            "lr_drop_factor" => self.lr_drop_factor = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "val_every" => self.val_every = parse(key, value)?,
            "augment" => self.augment = parse_switch(key, value)?,
            "aug_scale_min" => self.aug_scale_min = parse(key, value)?,
            "aug_scale_max" => self.aug_scale_max = parse(key, value)?,
            "aug_rotation" => self.aug_rotation = parse(key, value)?,
            "aug_flip_prob" => self.aug_flip_prob = parse(key, value)?,
            "aug_gain_min" => self.aug_gain_min = parse(key, value)?,
            "aug_gain_max" => self.aug_gain_max = parse(key, value)?,
            "angle_scale" => self.angle_scale = parse(key, value)?,
            "length_jitter" => self.length_jitter = parse(key, value)?,
            "center_jitter" => self.center_jitter = parse(key, value)?,
            "figure_scale" => self.figure_scale = parse(key, value)?,
            "thickness" => self.thickness = parse(key, value)?,
            "intensity_min" => self.intensity_min = parse(key, value)?,
            "intensity_max" => self.intensity_max = parse(key, value)?,
            "occluders" => self.occluders = parse_switch(key, value)?,
            "max_occluders" => self.max_occluders = parse(key, value)?,
            "occluder_intensity_min" => self.occluder_intensity_min = parse(key, value)?,
            "occluder_intensity_max" => self.occluder_intensity_max = parse(key, value)?,
            "pckh_threshold" => self.pckh_threshold = parse(key, value)?,
            "pck_threshold" => self.pck_threshold = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.joints != 14 {
            return fail(format!("joints must be 14 (built-in skeleton), got {}", self.joints));
        }
        if self.map_size < 4 {
            return fail(format!("map_size {} is too small", self.map_size));
        }
        if self.image_stride < 1 {
            return fail("image_stride must be >= 1".to_string());
        }
        if !(self.sigma > 0.0) {
            return fail(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.stages < 1 {
            return fail("stages must be >= 1".to_string());
        }
        if self.width < 1 {
            return fail("width must be >= 1".to_string());
        }
        for (name, k) in [("msg_kernel", self.msg_kernel), ("gate_kernel", self.gate_kernel)] {
            if k < 1 || k % 2 == 0 {
                return fail(format!("{name} must be odd and >= 1, got {k}"));
            }
        }
        if self.hidden_channels < 1 {
            return fail("hidden_channels must be >= 1".to_string());
        }
        if self.mode == PgnnMode::Mrf && self.hidden_channels != 1 {
            return fail("mode = mrf requires hidden_channels = 1".to_string());
        }
        if !(self.lr > 0.0) || !(self.lr_drop_factor > 0.0) {
            return fail("lr and lr_drop_factor must be positive".to_string());
        }
        if !(0.0..1.0).contains(&self.rho) {
            return fail(format!("rho must be in [0, 1), got {}", self.rho));
        }
        if self.batch < 1 {
            return fail("batch must be >= 1".to_string());
        }
        if self.aug_scale_min > self.aug_scale_max
            || self.aug_gain_min > self.aug_gain_max
            || self.intensity_min > self.intensity_max
            || self.occluder_intensity_min > self.occluder_intensity_max
        {
            return fail("range keys must satisfy min <= max".to_string());
        }
        if !(0.0..=1.0).contains(&self.aug_flip_prob) {
            return fail("aug_flip_prob must be in [0, 1]".to_string());
        }
        if !(self.aug_scale_min > 0.0) {
            return fail("aug_scale_min must be positive".to_string());
        }
        if !(self.figure_scale > 0.0) {
            return fail("figure_scale must be positive".to_string());
        }
        if !(self.pckh_threshold > 0.0) || !(self.pck_threshold > 0.0) {
            return fail("metric thresholds must be positive".to_string());
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            num_joints: self.joints,
            map_h: self.map_size,
            map_w: self.map_size,
            stem_stride: self.image_stride,
            stages: self.stages,
            width: self.width,
            msg_kernel: self.msg_kernel,
            gate_kernel: self.gate_kernel,
            steps: self.steps,
            graph: self.graph,
            cpf: self.cpf,
            mode: self.mode,
            literal_t0_residual: self.literal_t0_residual,
            hidden_channels: self.hidden_channels,
            seed: self.seed,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            map_h: self.map_size,
            map_w: self.map_size,
            stride: self.image_stride,
            sigma: self.sigma,
            angle_scale: self.angle_scale,
            length_jitter: self.length_jitter,
            center_jitter: self.center_jitter,
            figure_scale: self.figure_scale,
            thickness: self.thickness,
            intensity: (self.intensity_min, self.intensity_max),
            occluders: self.occluders,
            max_occluders: self.max_occluders,
            occluder_intensity: (self.occluder_intensity_min, self.occluder_intensity_max),
        }
    }

    pub fn augment_config(&self) -> Option<AugmentConfig> {
        self.augment.then_some(AugmentConfig {
            scale: (self.aug_scale_min, self.aug_scale_max),
            rotation_deg: self.aug_rotation,
            flip_prob: self.aug_flip_prob,
            gain: (self.aug_gain_min, self.aug_gain_max),
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            lr: self.lr,
            rho: self.rho,
            eps: self.eps,
            lr_drop_epoch: self.lr_drop_epoch,
            lr_drop_factor: self.lr_drop_factor,
            seed: self.seed,
            augment: self.augment_config(),
            sigma: self.sigma,
            threads: self.threads,
            pckh_threshold: self.pckh_threshold,
            pck_threshold: self.pck_threshold,
            val_every: self.val_every,
        }
    }
}
