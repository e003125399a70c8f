use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Errors surfaced by the detection stack.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A box was constructed with negative extent or non-finite coordinates.
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },
    /// A score outside [0,1] or non-finite was supplied where one is required.
    InvalidScore(f64),
    /// Box regression was asked to encode against a zero-width or zero-height box.
    DegenerateBox { what: &'static str },
    /// A decoded value left the representable range (overflowing exp, etc.).
    NumericRange(&'static str),
    /// A configuration value violates its documented invariant.
    InvalidConfig { field: &'static str, message: String },
    /// Tensor shapes do not chain.
    ShapeMismatch { context: &'static str, expected: Vec<usize>, got: Vec<usize> },
    /// A non-finite activation or update was produced.
    NonFinite { layer: String },
    /// Minibatch sampling found neither positives nor negatives.
    EmptyBatch,
    /// Rejection sampling could not place an object within the attempt budget.
    PlacementInfeasible { image_index: usize, relax: &'static str },
    /// Training data left some image without a single positive example.
    NoPositives { image_ids: Vec<usize> },
    /// A required upstream artifact (checkpoint, proposal set) is missing.
    MissingDependency { what: String },
    /// A referenced image id does not exist in the dataset.
    UnknownImageId(String),
    /// A textual record failed to parse.
    Parse { line: usize, message: String },
    /// Recall is undefined because the ground-truth set is empty.
    UndefinedRecall,
    /// A named layer or head does not exist in the network.
    UnknownLayer(String),
    /// Generic usage error (unknown format, unknown axis, ...).
    Usage(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidBox { x1, y1, x2, y2 } => {
                write!(f, "invalid box ({x1}, {y1}, {x2}, {y2}): extents must be non-negative and finite")
            }
            Error::InvalidScore(s) => write!(f, "score {s} is not a finite value in [0, 1]"),
            Error::DegenerateBox { what } => write!(f, "{what} has zero width or height"),
            Error::NumericRange(what) => write!(f, "numeric range exceeded in {what}"),
            Error::InvalidConfig { field, message } => write!(f, "invalid config field `{field}`: {message}"),
            Error::ShapeMismatch { context, expected, got } => {
                write!(f, "shape mismatch in {context}: expected {expected:?}, got {got:?}")
            }
            Error::NonFinite { layer } => write!(f, "non-finite value produced by `{layer}`"),
            Error::EmptyBatch => write!(f, "no positive or negative candidates to sample"),
            Error::PlacementInfeasible { image_index, relax } => {
                write!(f, "could not place objects in image {image_index} after 1000 attempts; relax {relax}")
            }
            Error::NoPositives { image_ids } => {
                write!(f, "images with ground truth but zero positive anchors: {image_ids:?}")
            }
            Error::MissingDependency { what } => write!(f, "missing dependency: {what}"),
            Error::UnknownImageId(id) => write!(f, "unknown image id `{id}`"),
            Error::Parse { line, message } => write!(f, "parse error at line {line}: {message}"),
            Error::UndefinedRecall => write!(f, "recall is undefined for an empty ground-truth set"),
            Error::UnknownLayer(name) => write!(f, "unknown layer `{name}`"),
            Error::Usage(msg) => write!(f, "{msg}"),
        }
    }
}

impl core::error::Error for Error {}
