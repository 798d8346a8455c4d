use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A tensor operation received inputs whose shapes do not line up.
    /// `detail` names the offending dimension(s).
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Convolution output would be empty for the given geometry.
    #[error(
        "conv2d: non-positive output size for input {h}x{w} with kernel {k}, \
         stride {stride}, padding {padding}, dilation {dilation}"
    )]
    EmptyConvOutput {
        h: usize,
        w: usize,
        k: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
    },

    #[error("conv2d: {0} must be >= 1")]
    BadConvParam(&'static str),

    #[error("backward: objective must be a scalar, got shape {0:?}")]
    NonScalarObjective(Vec<usize>),

    #[error("backward: already called on this tape; create a fresh tape per step")]
    BackwardAlreadyRun,

    #[error("backward has not been run on this tape")]
    BackwardNotRun,

    #[error("tensor id {0} is not on this tape")]
    NotOnTape(usize),

    #[error("gradcheck: function is not deterministic (re-evaluation mismatch at element {index}: {first} vs {second})")]
    NonDeterministic { index: usize, first: f64, second: f64 },

    #[error("gradcheck: {failed} of {total} checks exceeded tolerance")]
    GradCheckFailed { failed: usize, total: usize },

    #[error("graph: {0}")]
    Graph(String),

    #[error("pose graph validation failed:\n{}", .0.join("\n"))]
    GraphInvalid(Vec<String>),

    #[error("{context}: expected {expected} joints, got {got}")]
    JointCountMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("mrf: product of incoming messages is zero everywhere at node {node}; marginal is degenerate")]
    DegenerateMarginal { node: usize },

    #[error("render_gaussian: sigma must be positive, got {0}")]
    BadSigma(f64),

    #[error("synth: {0}")]
    Synth(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("metric normalization length must be positive, got {0}")]
    BadNormLength(f64),

    #[error("training diverged: loss is not finite at epoch {epoch}, batch {batch} (max |grad| {max_abs_grad:.3e})")]
    NanLoss {
        epoch: usize,
        batch: usize,
        max_abs_grad: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code per the CLI contract: 1 for validation problems,
    /// 2 for runtime/numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NanLoss { .. }
            | Error::NonDeterministic { .. }
            | Error::GradCheckFailed { .. }
            | Error::Io(_) => 2,
            _ => 1,
        }
    }
}
