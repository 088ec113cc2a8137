use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("resolvent (sI - A) is singular at s = {s}")]
    SingularResolvent { s: Complex64 },

    #[error("ill-posed interconnection: {0}")]
    IllPosed(String),

    #[error("system is not invertible: {0}")]
    NotInvertible(String),

    #[error("matrix is not sectorial; phases are undefined")]
    NotSectorial,

    #[error("operating point has zero voltage magnitude")]
    ZeroVoltage,

    #[error("degenerate branch {from}-{to}: R = L = 0")]
    DegenerateBranch { from: usize, to: usize },

    #[error("network graph is disconnected: bus {0} is unreachable")]
    Disconnected(usize),

    #[error("unknown bus id {0}")]
    UnknownBus(usize),

    #[error("interior admittance block is singular at s = {s}")]
    SingularInterior { s: Complex64 },

    #[error("bus {0} has no shunt capacitance; the impedance realization needs C > 0 at every non-stiff bus")]
    MissingCapacitance(usize),

    #[error("unstable inverse: {0}")]
    UnstableInverse(String),

    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("power flow did not converge after {iterations} iterations (mismatch {mismatch:.3e})")]
    PowerFlow { iterations: usize, mismatch: f64 },

    #[error("open-loop systems are not stable; the criterion is inapplicable: {0}")]
    OpenLoopUnstable(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("csv error: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
