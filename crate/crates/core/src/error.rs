use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("grid size {0} must be a power of two and at least 8")]
    BadGrid(usize),
    #[error("field has nonzero mean {0:e}")]
    NonZeroMean(f64),
    #[error("negative time {0}")]
    NegativeTime(f64),
    #[error("mollifier radius {0} outside (0, 1/2)")]
    BadEpsilon(f64),
    #[error("unsupported norm: {0}")]
    UnsupportedSpec(String),
    #[error("field is not divergence free (relative residual {0:e})")]
    NotDivergenceFree(f64),
    #[error("rank mismatch: expected {expected}, got {got}")]
    RankMismatch { expected: usize, got: usize },
    #[error("grid mismatch: {0} vs {1}")]
    GridMismatch(usize, usize),
    #[error("matrix outside certified ball: norm {norm:e} > radius {radius:e}")]
    OutsideBall { norm: f64, radius: f64 },
    #[error("decomposition basis is singular")]
    SingularBasis,
    #[error("negative input {0}")]
    NegativeInput(f64),
    #[error("gap vanishes: min {0:e}")]
    GapVanishes(f64),
    #[error("gap negative at stage {stage}: {value:e}")]
    GapNegative { stage: String, value: f64 },
    #[error("{0} is not a positive integer")]
    NotInteger(f64),
    #[error("grid Nyquist {nyquist} below oscillation frequency {freq}")]
    UnderResolved { nyquist: f64, freq: f64 },
    #[error("too few samples: {0}")]
    TooFewSamples(usize),
    #[error("wavevector lambda*N*k is not integer")]
    NonIntegerWavevector,
    #[error("shift placement failed after {0} candidates")]
    PlacementFailed(usize),
    #[error("bad time step tau = {0}")]
    BadTau(f64),
    #[error("bad squiggle epsilons eps={0}, eps0={1}")]
    BadEpsilons(f64, f64),
    #[error("CFL violation: dt {dt:e} > limit {limit:e}")]
    CflViolation { dt: f64, limit: f64 },
    #[error("blowup detected at t = {0}")]
    BlowupDetected(f64),
    #[error("magnetic residual is not solenoidal (relative {0:e})")]
    NonSolenoidalResidual(f64),
    #[error("local solutions have mismatched means")]
    MeanMismatch,
    #[error("no stored state at t = {0}")]
    MissingSample(f64),
    #[error("Duhamel quadrature under-resolved: {0}")]
    QuadratureUnderResolved(String),
    #[error("stage {stage}: {source}")]
    Stage { stage: String, source: Box<Error> },
    #[error("io: {0}")]
    Io(String),
    #[error("format: {0}")]
    Format(String),
}

impl Error {
    pub fn at(self, stage: &str) -> Error {
        Error::Stage { stage: stage.to_string(), source: Box::new(self) }
    }

    /// Innermost error, skipping stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn is_resolution(&self) -> bool {
        matches!(self.root(), Error::UnderResolved { .. } | Error::QuadratureUnderResolved(_))
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
