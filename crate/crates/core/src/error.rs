use thiserror::Error;

use crate::field::Side;
use crate::integrator::RunCheckpoint;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// The interface reached a window boundary. Run-level failures carry the
    /// last consistent state so the run can be resumed in a wider window.
    #[error("window overflow on the {side} side at t = {t}")]
    WindowOverflow {
        side: Side,
        t: f64,
        checkpoint: Option<Box<RunCheckpoint>>,
    },

    #[error("numerical blowup at t = {t} (cell {cell}, value {value})")]
    NumericalBlowup {
        t: f64,
        cell: i64,
        value: f64,
        checkpoint: Option<Box<RunCheckpoint>>,
    },

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),

    #[error("numerical error: {0}")]
    Numerical(String),
}
