use thiserror::Error;

use crate::qp::QpError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("expected {expected} step timings, found {found}")]
    MismatchedLengths { expected: usize, found: usize },

    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },

    #[error("time {t} s outside plan range [0, {total}] s")]
    TimeOutOfRange { t: f64, total: f64 },

    #[error("{0}")]
    Domain(String),

    #[error("leg length {length} m is not reachable with links {thigh} m / {shank} m")]
    Unreachable { length: f64, thigh: f64, shank: f64 },

    #[error("outer leg sphere (length {leg_length} m) does not reach the ankle plane {hip_drop} m below the hip")]
    InfeasibleHeight { leg_length: f64, hip_drop: f64 },

    #[error("feasibility region is empty")]
    EmptyRegion,

    #[error("invalid robot parameters: {0}")]
    InvalidParams(String),

    #[error("invalid plan: {0}")]
    InvalidPlan(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("qp: {0}")]
    Qp(#[from] QpError),
}
