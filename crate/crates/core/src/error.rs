use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("syntax error at offset {offset}: expected {expected}")]
    Syntax { offset: usize, expected: String },
    #[error("field has {found} components but dimension is {expected}")]
    Arity { expected: usize, found: usize },
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("derivative order {requested} exceeds the supported maximum {max}")]
    OrderUnsupported { requested: usize, max: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("point lies outside every chart domain")]
    ChartDomain,
    #[error("integrator failed to meet tolerance at t = {t}")]
    ToleranceFailure { t: f64 },
    #[error("solution blew up at t = {t} (norm {norm:e})")]
    BlowUp { t: f64, norm: f64 },
    #[error("no section crossing within the horizon")]
    NoCrossing,
    #[error("section crossing is tangential (|<X,n>| = {0:e})")]
    TangentialCrossing(f64),
    #[error("points are too far apart for a unique connecting geodesic (distance {0})")]
    GeodesicAmbiguous(f64),
    #[error("return distance {alpha:e} exceeds the admissible limit {limit:e}")]
    AlphaTooLarge { alpha: f64, limit: f64 },
    #[error("blend window too small: {0}")]
    WindowTooSmall(String),
    #[error("curve speed vanishes at t = {0}")]
    ZeroSpeed(f64),
    #[error("tube radius {epsilon} is not below the admissible radius {limit}")]
    RadiusTooLarge { epsilon: f64, limit: f64 },
    #[error("flow box has {0} overlap regions; nonautonomous mode needs none")]
    OverlapPresent(usize),
    #[error("{0} projection branches at a point; at most two are supported")]
    TooManyBranches(usize),
    #[error("field speed {speed:e} at the slow point exceeds the threshold {threshold:e}")]
    NotSlowEnough { speed: f64, threshold: f64 },
    #[error("branch construction failed: {0}")]
    BranchConstruction(String),
    #[error("point does not return to itself (mismatch {0:e})")]
    NotPeriodic(f64),
    #[error("section is tangent to the flow")]
    TangentialSection,
    #[error("eigenvalue is not simple and real: {0}")]
    EigenvalueNotSimple(String),
    #[error("multiplier modulus {modulus} is outside the adjustable window ({lo}, 1)")]
    WindowTooWide { modulus: f64, lo: f64 },
    #[error("a family of at least {needed} orbits is required, got {found}")]
    InsufficientFamily { needed: usize, found: usize },
    #[error("operation not supported on manifold kind {0}")]
    UnsupportedManifold(String),
    #[error("scenario schema error: {0}")]
    Schema(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
