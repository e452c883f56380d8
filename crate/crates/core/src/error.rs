use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("derivative order {0} outside 1..=4")]
    DerivativeOrder(u32),

    #[error("non-finite sample at index {0}")]
    NonFinite(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("profile tail {tail:.3e} at the domain boundary exceeds the wrap tolerance {tol:.1e}")]
    TailWrap { tail: f64, tol: f64 },

    #[error("center {center} is outside the safe region of the domain")]
    OutsideSafeRegion { center: f64 },

    #[error("solitons {i} and {j} are {distance:.3} apart, below the minimum {minimum:.3}")]
    Separation {
        i: usize,
        j: usize,
        distance: f64,
        minimum: f64,
    },

    #[error("no positive real eigenvalue of the linearized operator found")]
    NoPositiveEigenvalue,

    #[error("edge eigenvalue not resolution-converged: {coarse} (n = {n_coarse}) vs {fine} (n = {n_fine})")]
    NotConverged {
        coarse: f64,
        fine: f64,
        n_coarse: usize,
        n_fine: usize,
    },

    #[error("eigensolver failed: {0}")]
    Eigensolver(String),

    #[error("tail decay fit failed: {0}")]
    DecayFit(String),

    #[error("degenerate constraint set (normalized Gram determinant {0:.3e})")]
    DegenerateConstraints(f64),

    #[error("weights are not a partition of unity (max deviation {0:.3e})")]
    Partition(f64),

    #[error("{quantity} drift {drift:.3e} exceeds tolerance {tol:.1e} at t = {t}")]
    ConservationDrift {
        quantity: &'static str,
        drift: f64,
        tol: f64,
        t: f64,
    },

    #[error("blow-up detected at t = {t}: H1 norm {norm:.3e}")]
    BlowUp { t: f64, norm: f64 },

    #[error("solution under-resolved at t = {t}: spectral tail {tail:.3e}")]
    Underresolved { t: f64, tail: f64 },

    #[error("step budget of {0} steps exhausted")]
    StepBudget(usize),

    #[error("modulation Newton iteration did not converge in {iterations} iterations (residual {residual:.3e})")]
    NewtonDivergence { iterations: usize, residual: f64 },

    #[error("field is {distance:.3e} from the soliton sum, outside the modulation radius {radius:.3e}")]
    OutOfRadius { distance: f64, radius: f64 },

    #[error("final-data Newton iteration did not converge (residual {0:.3e})")]
    FinalDataDivergence(f64),

    #[error("shooting bracket not found: {0}")]
    BracketNotFound(String),

    #[error("Broyden iteration stagnated at residual {0:.3e}")]
    BroydenStagnation(f64),

    #[error("tube validation failed: {0}")]
    TubeValidation(String),

    #[error("snapshot has bad magic bytes")]
    BadMagic,

    #[error("snapshot version {found} is not supported (expected {expected})")]
    SnapshotVersion { found: u32, expected: u32 },

    #[error("snapshot truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Numerical failures map to CLI exit code 3; everything else is a
    /// configuration or usage problem.
    pub fn is_numerical(&self) -> bool {
        !matches!(
            self,
            Error::Config(_)
                | Error::Json(_)
                | Error::InvalidGrid(_)
                | Error::InvalidParameter(_)
                | Error::TailWrap { .. }
                | Error::OutsideSafeRegion { .. }
                | Error::Separation { .. }
                | Error::BadMagic
                | Error::SnapshotVersion { .. }
                | Error::Truncated { .. }
        )
    }
}
