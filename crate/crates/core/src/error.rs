use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid map dimensions {width}x{height}")]
    InvalidDimensions { width: usize, height: usize },

    #[error("buffer holds {actual} values, expected {expected}")]
    BufferLength { expected: usize, actual: usize },

    #[error("observer count must be in 1..=255, got {0}")]
    InvalidObserverCount(usize),

    #[error("agreement value {value} at pixel {index} exceeds observer count {n_observers}")]
    AgreementOutOfRange {
        index: usize,
        value: u8,
        n_observers: u8,
    },

    #[error("stack is not nested: slice {slice} is set at pixel {index} but slice {} is not", slice - 1)]
    NotNested { slice: usize, index: usize },

    #[error("stack has {actual} slices but {expected} observers")]
    SliceCount { expected: usize, actual: usize },

    #[error("slice index {k} outside 1..={n}")]
    SliceIndexOutOfRange { k: usize, n: usize },

    #[error("saliency value {value} at pixel {index} outside [0, 1]")]
    SaliencyOutOfRange { index: usize, value: f64 },

    #[error("binary map value {value} at pixel {index} is neither 0 nor {on}")]
    NotBinary { index: usize, value: u16, on: u16 },

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("no salient objects: instance map has no nonzero labels")]
    NoInstances,

    #[error("cannot resample {from:?} to {to:?}: {reason}")]
    Resample {
        from: (usize, usize),
        to: (usize, usize),
        reason: &'static str,
    },

    #[error("rank vectors cover different instance ids")]
    InstanceIdMismatch,

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("no valid results to aggregate")]
    NothingToAggregate,

    #[error("ground truth is degenerate ({0}); TPR or FPR is undefined")]
    DegenerateGroundTruth(&'static str),

    #[error("threshold count must be at least 2, got {0}")]
    ThresholdCount(usize),

    #[error("every ground-truth slice is degenerate")]
    AllSlicesDegenerate,

    #[error("count {count} has no class under the {scheme} scheme")]
    CountOutsideScheme { count: usize, scheme: &'static str },

    #[error("average precision is undefined without positives")]
    NoPositives,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("class sets differ between APs and counts")]
    ClassMismatch,

    #[error("tensor shape error: {0}")]
    Shape(String),

    #[error("input {height}x{width} is not divisible by {factor}; pad the image first")]
    NotDivisible {
        height: usize,
        width: usize,
        factor: usize,
    },

    #[error("trace was computed with parameter generation {trace}, parameters are at {params}")]
    StaleTrace { trace: u64, params: u64 },

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },

    #[error("image {id}: {reason}")]
    Record { id: String, reason: String },

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error(
        "could not place {shapes} shapes on a {width}x{height} canvas after {attempts} attempts"
    )]
    Placement {
        shapes: usize,
        width: usize,
        height: usize,
        attempts: usize,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Whether the error stems from bad input data rather than bad usage.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Config(_) | Error::ThresholdCount(_))
    }
}
