//! Crate-wide error type.

use thiserror::Error;

use crate::mdp::MdpViolation;
use crate::operators::Algorithm;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("function kind mismatch: {0}")]
    KindMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid mdp: {}", format_violations(.0))]
    InvalidMdp(Vec<MdpViolation>),

    #[error("invalid algorithm spec: {0}")]
    InvalidSpec(String),

    #[error("{0} is not supported by this operation")]
    UnsupportedAlgorithm(Algorithm),

    #[error("expected operator of {0} is not affine")]
    NotAffine(Algorithm),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("ensembles have unequal sizes: {left} vs {right}")]
    UnequalEnsembles { left: usize, right: usize },

    #[error("ensemble size {n} exceeds the exact-transport cap {cap}")]
    EnsembleTooLarge { n: usize, cap: usize },

    #[error("{count} deterministic policies exceed the enumeration cap {cap}")]
    EnumerationLimit { count: u128, cap: u128 },

    #[error("not episodic within horizon {horizon}: state {state} still accrues reward")]
    NotEpisodic { horizon: usize, state: usize },

    #[error("outcome space exceeds {cap} atoms")]
    OutcomeOverflow { cap: usize },

    #[error("update map is not contractive: ||(1-a)I + aA||_inf = {norm}")]
    NotContractive { norm: f64 },

    #[error("kernel estimation failure: {0}")]
    KernelEstimation(String),

    #[error("internal fault: {0}")]
    Internal(String),
}

fn format_violations(violations: &[MdpViolation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
