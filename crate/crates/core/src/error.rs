use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Vector lengths or indices that do not fit the grid they are paired with.
    #[error("structural mismatch: {0}")]
    Structural(String),

    #[error("degenerate density: {0}")]
    DegenerateDensity(String),

    /// A caller-side precondition was violated (e.g. an unnormalized density).
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Parameter outside the domain of a formula.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("no convergence after {iterations} iterations (last change {last_change:e})")]
    Convergence { iterations: usize, last_change: f64 },

    /// The numerical output violates a quality invariant (e.g. large negative density).
    #[error("solver quality: {0}")]
    SolverQuality(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("step {step} failed: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    /// The quasi-static equilibrium no longer exists (parameter past the fold).
    #[error("fold crossed at t = {t}")]
    FoldCrossed { t: f64 },

    #[error("no equilibrium: {0}")]
    NoEquilibrium(String),

    #[error("physical regime violated: {0}")]
    PhysicalRegime(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("value {value} outside tabulated range [{min}, {max}]")]
    Extrapolation { value: f64, min: f64, max: f64 },

    /// Grid/time-step admissibility failed under strict mode.
    #[error("admissibility check failed: {0}")]
    Admissibility(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::Step {
            step,
            source: Box::new(self),
        }
    }

    /// Strips any step-index wrapping.
    pub fn root(&self) -> &Error {
        match self {
            Error::Step { source, .. } => source.root(),
            other => other,
        }
    }
}
