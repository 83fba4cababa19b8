//! Error types shared across the crate.

use thiserror::Error;

/// Errors raised by tensor construction and tape operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} does not match data length {len}")]
    ShapeDataMismatch { shape: Vec<usize>, len: usize },
    #[error("expected rank {expected}, got shape {shape:?}")]
    BadRank { expected: usize, shape: Vec<usize> },
    #[error("extent mismatch: {context} (lhs {lhs:?}, rhs {rhs:?})")]
    ExtentMismatch {
        context: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("kernel extents must be odd, got {kh}x{kw}")]
    EvenKernel { kh: usize, kw: usize },
    #[error("pool factor {factor} does not divide extents {h}x{w}")]
    NonDivisiblePool { factor: usize, h: usize, w: usize },
    #[error("groups {groups} does not divide channel count {channels}")]
    BadGroupCount { groups: usize, channels: usize },
    #[error("zero extent in target shape {shape:?}")]
    ZeroExtent { shape: Vec<usize> },
    #[error("upsample target {out_h}x{out_w} smaller than input {h}x{w}")]
    DownscaleTarget {
        out_h: usize,
        out_w: usize,
        h: usize,
        w: usize,
    },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("scale index {k} out of range 1..={scales}")]
    ScaleOutOfRange { k: usize, scales: usize },
    #[error("row index {row} out of range for table with {rows} rows")]
    RowOutOfRange { row: usize, rows: usize },
    #[error("{0}")]
    Invalid(String),
}

/// Errors raised by the PDE simulators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("state blew up at step {step}: max |value| = {max_abs:.3e}")]
    BlowUp { step: usize, max_abs: f64 },
    #[error("lattice relaxation time {tau:.6} <= 0.5 is unstable")]
    UnstableRelaxation { tau: f64 },
    #[error("invalid simulation config: {0}")]
    BadConfig(String),
    #[error("downsample factor {factor} invalid for trajectory of length {len}")]
    BadDownsample { factor: usize, len: usize },
}

/// Errors raised by dataset/checkpoint I/O and splitting.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad file {path}: {reason}")]
    BadFile { path: String, reason: String },
    #[error("trajectories have heterogeneous shapes: {0:?} vs {1:?}")]
    HeterogeneousShapes(Vec<usize>, Vec<usize>),
    #[error("empty trajectory list")]
    Empty,
    #[error("need at least {min} trajectories to split, got {got}")]
    TooFewTrajectories { min: usize, got: usize },
}

/// Errors raised by training and model evaluation.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss diverged (non-finite) at stage {stage} epoch {epoch}")]
    Diverged { stage: &'static str, epoch: usize },
    #[error("adaptive solver exceeded {max_steps} steps")]
    SolverMaxSteps { max_steps: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid training config: {0}")]
    BadConfig(String),
}

/// Errors raised by metric computations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("shape mismatch: {lhs:?} vs {rhs:?}")]
    ShapeMismatch { lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("truth is identically zero; NMSE undefined")]
    ZeroTruth,
    #[error("constant input; Pearson correlation undefined")]
    ConstantInput,
    #[error("need at least {min} values, got {got}")]
    TooFewValues { min: usize, got: usize },
    #[error("empty metric input")]
    Empty,
}
