use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

/// Every failure mode of the core library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid axis: {0}")]
    InvalidAxis(&'static str),
    #[error("axis index {index} out of range for arity {arity}")]
    AxisOutOfRange { index: usize, arity: usize },
    #[error("field length {got} does not match grid size {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("unsupported kappa {0}; expected 2 or 3")]
    UnsupportedKappa(usize),
    #[error("operation requires kappa = 2, got {0}")]
    RequiresKappaTwo(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("potential pair is not coercive (alpha must exceed |beta|)")]
    NotCoercive,
    #[error("coercivity profile is only available for the quadratic family")]
    CoercivityUnavailable,
    #[error("density has zero or non-finite total mass")]
    ZeroMass,
    #[error("density has negative or non-finite values")]
    InvalidDensity,
    #[error("edge density is not swap-symmetric (defect {0:e})")]
    AsymmetricEdge(f64),
    #[error("series must be sorted by strictly increasing time")]
    UnsortedSeries,
    #[error("series needs at least {needed} entries, got {got}")]
    SeriesTooShort { needed: usize, got: usize },
    #[error("tridiagonal solve failed (zero pivot at row {0})")]
    TridiagonalFailure(usize),
    #[error("mass defect {0:e} exceeds the abort threshold")]
    MassDefect(f64),
    #[error("drift time series does not match the step grid at step {0}")]
    TimeGridMismatch(usize),
    #[error("fixed-point iteration did not converge in {iterations} iterations (last change {last_change:e})")]
    MaxIterExceeded { iterations: usize, last_change: f64 },
    #[error("fixed-point iterate became non-positive or non-finite at iteration {0}")]
    NonPositiveIterate(usize),
    #[error("normalising integral diverged or vanished on the truncated domain")]
    QuadratureDivergence,
    #[error("log-partition overflowed despite rescaling")]
    PartitionOverflow,
    #[error("power iteration stagnated after {0} iterations")]
    PowerIterationStagnation(usize),
    #[error("brute-force grid of {cells} cells exceeds the budget of {budget}")]
    MemoryBudget { cells: u128, budget: u128 },
    #[error("particle estimator needs at least {needed} particles, got {got}")]
    TooFewParticles { needed: usize, got: usize },
}
