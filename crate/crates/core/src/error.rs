use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid algebra: {0}")]
    InvalidAlgebra(&'static str),
    #[error("bracket map into layer {layer} is not surjective (rank {rank} < {dim})")]
    NotSurjective { layer: usize, rank: usize, dim: usize },
    #[error("layer-1 metric block is not positive definite")]
    MetricNotPositive,
    #[error("near-horizontal point: transversality singular value {sigma:e} below {tol:e}")]
    NearHorizontal { sigma: f64, tol: f64 },
    #[error("degenerate immersion: jacobian rank deficient (singular value {sigma:e})")]
    DegenerateImmersion { sigma: f64 },
    #[error("frame orientation flipped at f_{index} across the finite-difference stencil; use a smaller step")]
    FrameFlip { index: usize },
    #[error("degenerate parametrization: zero μ-density")]
    ZeroDensity,
    #[error("input out of domain: {0}")]
    OutOfDomain(&'static str),
    #[error("degenerate subspace: {0}")]
    DegenerateSubspace(&'static str),
    #[error("curve not transverse at t = {t}: vertical velocity vanishes")]
    NotTransverse { t: f64 },
    #[error("b(t) vanishes at t = {t}; split the range or use the ruled branch")]
    VanishingCurvature { t: f64 },
    #[error("characteristic point: horizontal gradient vanishes")]
    CharacteristicPoint,
    #[error("vector is not unit length (norm {norm})")]
    NotUnit { norm: f64 },
    #[error("vector is not in the first layer")]
    WrongLayer,
    #[error("unsupported: {0}")]
    Unsupported(&'static str),
}
