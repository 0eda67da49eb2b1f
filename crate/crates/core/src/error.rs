use alloc::string::String;

use crate::hemithorax::Side;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("{0} is empty")]
    EmptyMask(&'static str),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("degenerate ellipse fit: member pixels are collinear")]
    DegenerateFit,
    #[error("shrunken occluder does not overlap the frame")]
    EmptyOverlap,
    #[error("snake optimization diverged at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("contour must have at least 8 distinct vertices, got {0}")]
    InvalidContour(usize),
    #[error("spine mask spans {rows} rows, need at least {required}")]
    SpineTooShort { rows: usize, required: usize },
    #[error("spine direction is more than 45 degrees from vertical")]
    SpineNotVertical,
    #[error("{0} side of the rib mask is empty")]
    EmptySide(Side),
    #[error("histogram bin counts differ: {0} vs {1}")]
    BinMismatch(usize, usize),
    #[error("histogram is not normalized")]
    Unnormalized,
    #[error("negative value {0} where a non-negative one is required")]
    Negative(f64),
    #[error("training data must contain both classes")]
    SingleClass,
    #[error("non-finite feature value")]
    NonFinite,
    #[error("class {label} has {count} rows, fewer than k = {k}")]
    TooFewRows { label: u8, count: usize, k: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid phantom spec: {0}")]
    InvalidPhantom(&'static str),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}
