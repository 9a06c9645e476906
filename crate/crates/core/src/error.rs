use crate::map::ValidationReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("validation failed: {0}")]
    Validation(ValidationReport),

    #[error("empty map")]
    EmptyMap,

    #[error("degenerate polyline: {0} point(s), need at least 2")]
    DegeneratePolyline(usize),

    #[error("local overflow: chain {from}-{to} has {interior} interior points, W = {w}")]
    LocalOverflow {
        from: usize,
        to: usize,
        interior: usize,
        w: usize,
    },

    #[error("map ({width:.1} x {height:.1} m) is smaller than the field of view ({fov:.1} m)")]
    MapSmallerThanFov { width: f64, height: f64, fov: f64 },

    #[error("sparse map: no non-empty patch after {attempts} attempts")]
    SparseMap { attempts: usize },

    #[error("coordinate ({x}, {y}) outside the field of view [0, {fov}]")]
    OutOfRange { x: f64, y: f64, fov: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by bad input rather than by a defect; the CLI maps these to exit code 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_)
                | Error::EmptyMap
                | Error::DegeneratePolyline(_)
                | Error::LocalOverflow { .. }
                | Error::MapSmallerThanFov { .. }
                | Error::OutOfRange { .. }
                | Error::Config(_)
                | Error::Dataset(_)
        )
    }
}
