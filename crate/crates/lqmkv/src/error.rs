use thiserror::Error;

/// Errors produced by the solver pipeline and the particle engine.
#[derive(Debug, Error)]
pub enum LqmkvError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("time {t} outside the problem horizon")]
    OutOfHorizon { t: f64 },

    #[error("degenerate control gain at t = {t}: {what} is not positive definite")]
    DegenerateGain { t: f64, what: &'static str },

    #[error("Riccati integration blew up at t = {t}")]
    RiccatiBlowUp { t: f64 },

    #[error("step-halving check failed: refining the grid changed the solution by {change:e} (> {tol:e})")]
    ConvergenceGuard { change: f64, tol: f64 },

    #[error("horizon-limit iteration did not converge by T = {t_max}")]
    HorizonLimitDiverged { t_max: f64 },

    #[error("stationary equation residual {residual:e} exceeds {tol:e}")]
    ResidualTooLarge { residual: f64, tol: f64 },

    #[error("adjoint solution not square-integrable by this route: {0}")]
    InadmissibleAdjoint(String),

    #[error("unsupported coupling: {0}")]
    UnsupportedCoupling(String),

    #[error("truncation horizon too short: tail bound {bound:e} exceeds tolerance {tol:e}")]
    TruncationTooShort { bound: f64, tol: f64 },

    #[error("particle {particle} blew up at t = {t} (non-finite state)")]
    ParticleBlowUp { particle: usize, t: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LqmkvError>;
