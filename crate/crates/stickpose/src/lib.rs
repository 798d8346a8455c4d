//! Keypoint heatmap regression on synthetic stick figures.
//!
//! The crate bundles everything needed to study spatial context in heatmap
//! based pose estimation at desk scale:
//!
//! - a small reverse-mode autodiff core over dense f64 tensors ([`tape`]),
//! - a procedural stick-figure dataset with Gaussian ground-truth heatmaps
//!   and the usual augmentation recipe ([`synth`], [`dataset`]),
//! - pose graphs over the joint set, kinematic-tree and loopy presets
//!   ([`graph`]),
//! - gated convolutional message passing over the graph, with a product-form
//!   marginal mode and its brute-force reference ([`pgnn`]),
//! - a multi-stage convolutional backbone with cascaded prediction fusion
//!   ([`backbone`]),
//! - training (RMSProp + unrolled backprop), PCK/PCKh evaluation and an
//!   ablation grid runner ([`train`], [`metrics`], [`ablate`]).
//!
//! Start with the runnable examples (`cargo run --release --example
//! train_tiny`) or the `stickpose` binary, which exposes the same
//! functionality as subcommands.


pub mod ablate;
pub mod backbone;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pgm;
pub mod pgnn;
pub mod rng;
pub mod skeleton;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tape::{ConvSpec, Tape, Var};
pub use tensor::Tensor;
