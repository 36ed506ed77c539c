use thiserror::Error;

/// Errors raised by the numerical kernels.
///
/// Each variant maps to a stable machine-readable code (see [`Error::code`])
/// which the CLI writes next to serialized failures.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid potential: {0}")]
    InvalidPotential(String),
    #[error("derivative order {0} is not supported (max 6)")]
    UnsupportedOrder(usize),
    #[error("no classical orbit: energy {energy} does not exceed V(0) = {v0}")]
    NoOrbit { energy: f64, v0: f64 },
    #[error("position {x} lies outside the classically allowed region [-{q_m}, {q_m}]")]
    OutsideOrbit { x: f64, q_m: f64 },
    #[error("integration failed: {0}")]
    Integration(String),
    #[error("the angle is undefined at the phase-space origin")]
    UndefinedAngle,
    #[error("grid resolution insufficient: {0}")]
    Resolution(String),
    #[error("insufficient dyadic range: {populated} shells populated, need {required}")]
    InsufficientRange { populated: usize, required: usize },
    #[error("homological equation did not converge: residual {residual:.3e} > tolerance {tolerance:.3e}")]
    NonConvergence { residual: f64, tolerance: f64 },
    #[error("rescaling singular: 1 + eps f'(E) = {0:.3e}")]
    RescalingSingular(f64),
    #[error("small denominator at mode {mode:?}: |denominator| = {value:.3e} < bound {bound:.3e}")]
    SmallDenominator {
        mode: Vec<i64>,
        value: f64,
        bound: f64,
    },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("operator contract violated: {0}")]
    Contract(String),
    #[error("quadrature accuracy {achieved:.3e} above requested {requested:.3e}")]
    Accuracy { achieved: f64, requested: f64 },
    #[error("order regression at step {step}: measured {measured:.3} > predicted {predicted:.3} + slack")]
    OrderRegression {
        step: usize,
        measured: f64,
        predicted: f64,
        /// Ledger CSV up to and including the failing step.
        ledger: String,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("hypothesis gate failed: {0} (rerun with --force to proceed)")]
    Gate(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidPotential(_) => "E_POTENTIAL",
            Error::UnsupportedOrder(_) => "E_ORDER",
            Error::NoOrbit { .. } => "E_NO_ORBIT",
            Error::OutsideOrbit { .. } => "E_DOMAIN",
            Error::Integration(_) => "E_INTEGRATION",
            Error::UndefinedAngle => "E_ANGLE",
            Error::Resolution(_) => "E_RESOLUTION",
            Error::InsufficientRange { .. } => "E_RANGE",
            Error::NonConvergence { .. } => "E_NONCONVERGENCE",
            Error::RescalingSingular(_) => "E_RESCALING",
            Error::SmallDenominator { .. } => "E_SMALL_DENOMINATOR",
            Error::GridMismatch(_) => "E_GRID",
            Error::Contract(_) => "E_CONTRACT",
            Error::Accuracy { .. } => "E_ACCURACY",
            Error::OrderRegression { .. } => "E_ORDER_REGRESSION",
            Error::Config(_) => "E_CONFIG",
            Error::Gate(_) => "E_GATE",
            Error::Io(_) => "E_IO",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
