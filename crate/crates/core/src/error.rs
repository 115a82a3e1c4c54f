//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("matrix is not orthonormal (Gram defect {defect:.3e})")]
    NotOrthonormal { defect: f64 },
    #[error("matrix determinant {det} is not +1")]
    BadDeterminant { det: f64 },
    #[error("degenerate input: {what}")]
    DegenerateInput { what: &'static str },
}

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("latent dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("invalid field config: {what}")]
    BadConfig { what: String },
}

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("empty sample batch: {what}")]
    EmptyBatch { what: &'static str },
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("neighborhood around point {index} is degenerate (collinear within 1e-9)")]
    DegenerateNeighborhood { index: usize },
    #[error("normal estimation needs N > k >= 3 (N = {n}, k = {k})")]
    BadNeighborhoodSize { n: usize, k: usize },
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch} on shape {shape_id}")]
    NonFiniteLoss { epoch: usize, shape_id: String },
    #[error("gradient/parameter shape mismatch: {what}")]
    ShapeMismatch { what: String },
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Error)]
pub enum ReconError {
    #[error("non-finite loss at iteration {iter}")]
    NonFiniteLoss { iter: usize },
    #[error("latent dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("pose initialization failed: {diagnostics}")]
    InitFailed { diagnostics: String },
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("grid resolution must be >= 2 per axis, got {0}")]
    BadResolution(usize),
    #[error("grid contains non-finite values")]
    NonFiniteGrid,
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("point set '{which}' is empty")]
    EmptySet { which: &'static str },
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid shape parameters: {what}")]
    BadParams { what: String },
    #[error("surface projection converged for only {converged} of {requested} points")]
    ProjectionFailed { converged: usize, requested: usize },
    #[error("sequence needs at least 2 keyframes, got {0}")]
    TooFewKeyframes(usize),
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error in {path}: {what}")]
    Parse { path: String, what: String },
    #[error("bad checkpoint magic (expected {expected:?})")]
    BadMagic { expected: String },
    #[error("unsupported checkpoint version {got} (supported: {supported})")]
    VersionMismatch { got: u32, supported: u32 },
    #[error("checkpoint config incompatible: {what}")]
    ConfigMismatch { what: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
