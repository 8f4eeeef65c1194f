use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("subsystem index {index} out of range for {count} subsystems")]
    InvalidSubsystem { index: usize, count: usize },

    #[error("operator is not Hermitian (max deviation {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("state is not normalized (norm² = {norm_sqr})")]
    NotNormalized { norm_sqr: f64 },

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPositive { min_eigenvalue: f64 },

    #[error("step size underflow at t = {time} µs (h = {step:e})")]
    StepSizeUnderflow { time: f64, step: f64 },

    #[error("time grid mismatch: {0}")]
    GridMismatch(String),

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("need at least {required} shots, got {found}")]
    InsufficientShots { required: usize, found: usize },

    #[error("Fock cutoff {cutoff} exceeds the rejection-sampling limit {limit}")]
    CutoffTooLarge { cutoff: usize, limit: usize },

    #[error("inferred ⟨a†a⟩ = {value} is negative beyond 3σ ({sigma}); check the off-measurement calibration")]
    Miscalibration { value: f64, sigma: f64 },

    #[error("degenerate model trace: {0}")]
    Degenerate(String),

    #[error("malformed record file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
