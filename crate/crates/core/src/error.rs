use thiserror::Error;

/// Errors produced by scene construction, rendering, optimization, and I/O.
#[derive(Debug, Error)]
pub enum LrfError {
    /// A batch operation received no elements.
    #[error("empty pair batch")]
    EmptyPairBatch,

    /// Two cameras share (numerically) the same center, so no fundamental
    /// matrix exists.
    #[error("degenerate baseline: camera centers coincide (|t| = {baseline:.3e})")]
    DegenerateBaseline { baseline: f64 },

    /// A point projected behind the camera near plane.
    #[error("behind camera: depth {depth:.6} <= near plane {near}")]
    BehindCamera { depth: f64, near: f64 },

    /// A quaternion with (near-)zero norm cannot define a rotation.
    #[error("invalid rotation: quaternion norm {norm:.3e}")]
    InvalidRotation { norm: f64 },

    /// Spherical harmonics evaluation requires a unit direction.
    #[error("unnormalized direction: |dir| = {norm:.9}")]
    UnnormalizedDirection { norm: f64 },

    /// Scene initialization requires at least one point.
    #[error("empty initialization: no points supplied")]
    EmptyInitialization,

    /// Normalization requires at least one view.
    #[error("empty dataset")]
    EmptyDataset,

    /// Decoder fitting requires at least one sample.
    #[error("empty sample list")]
    EmptySampleList,

    /// Tensor-shaped operands disagree on dimensions.
    #[error("shape mismatch: {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    /// A pixel coordinate fell outside the addressed image.
    #[error("pixel ({x:.3}, {y:.3}) out of bounds for {width}x{height} image")]
    PixelOutOfBounds {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },

    /// A correspondence referenced a view with no latent map.
    #[error("missing view '{id}'")]
    MissingView { id: String },

    /// SSIM needs at least one full window.
    #[error("image {height}x{width} smaller than the {window}x{window} SSIM window")]
    ImageTooSmall {
        height: usize,
        width: usize,
        window: usize,
    },

    /// Domain-value validation failed (invariants of a type or precondition
    /// of an operation).
    #[error("invalid value: {0}")]
    InvalidValue(String),

    /// A file could not be parsed; the message names the offending construct.
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    /// A non-finite number appeared where the pipeline guarantees finiteness.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image codec error: {0}")]
    Image(String),
}

impl From<image::ImageError> for LrfError {
    fn from(e: image::ImageError) -> Self {
        LrfError::Image(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, LrfError>;
