//! Stochastic update rules over value functions.
//!
//! Each algorithm is a sampled target plus a step-size blend
//! `f <- (1-alpha) f + alpha target`. [`empirical`] draws one target sample
//! per coordinate from keyed streams; [`expectation`] computes the exact
//! expected target, per-coordinate noise covariance, and the affine form of
//! evaluation targets.

pub mod empirical;
pub mod expectation;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{FiniteMdp, FunctionLayout, FunctionPoint, Policy};

pub use empirical::{apply_empirical_operator, sample_return, synchronous_update};
pub use expectation::{effective_affine_map, expected_target, noise_covariance};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Td0,
    MonteCarlo,
    TdLambda,
    QLearning,
    Sarsa,
    ExpectedSarsa,
    DoubleQLearning,
    Opi,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Algorithm::Td0 => "td0",
            Algorithm::MonteCarlo => "monte-carlo",
            Algorithm::TdLambda => "td-lambda",
            Algorithm::QLearning => "q-learning",
            Algorithm::Sarsa => "sarsa",
            Algorithm::ExpectedSarsa => "expected-sarsa",
            Algorithm::DoubleQLearning => "double-q-learning",
            Algorithm::Opi => "opi",
        };
        f.write_str(name)
    }
}

/// Which kind of point an algorithm's chain lives on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointShape {
    StateValue,
    ActionValue,
    Pair,
}

/// An algorithm plus its parameters. Parameters must be present exactly when
/// the algorithm uses them; `validate` enforces that.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSpec {
    pub algorithm: Algorithm,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_policy: Option<Policy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon_tolerance: Option<f64>,
}

/// Default truncation tolerance for sampled infinite-horizon returns.
pub const DEFAULT_HORIZON_TOLERANCE: f64 = 1e-6;

impl AlgorithmSpec {
    fn bare(algorithm: Algorithm, alpha: f64) -> Self {
        AlgorithmSpec {
            algorithm,
            alpha,
            lambda: None,
            epsilon: None,
            p: None,
            base_policy: None,
            horizon_tolerance: None,
        }
    }

    pub fn td0(alpha: f64, base_policy: Policy) -> Self {
        AlgorithmSpec { base_policy: Some(base_policy), ..Self::bare(Algorithm::Td0, alpha) }
    }

    pub fn monte_carlo(alpha: f64, base_policy: Policy) -> Self {
        AlgorithmSpec { base_policy: Some(base_policy), ..Self::bare(Algorithm::MonteCarlo, alpha) }
    }

    pub fn td_lambda(alpha: f64, lambda: f64, base_policy: Policy) -> Self {
        AlgorithmSpec {
            lambda: Some(lambda),
            base_policy: Some(base_policy),
            ..Self::bare(Algorithm::TdLambda, alpha)
        }
    }

    pub fn q_learning(alpha: f64) -> Self {
        Self::bare(Algorithm::QLearning, alpha)
    }

    pub fn sarsa(alpha: f64, epsilon: f64, base_policy: Policy) -> Self {
        AlgorithmSpec {
            epsilon: Some(epsilon),
            base_policy: Some(base_policy),
            ..Self::bare(Algorithm::Sarsa, alpha)
        }
    }

    pub fn expected_sarsa(alpha: f64, epsilon: f64, base_policy: Policy) -> Self {
        AlgorithmSpec {
            epsilon: Some(epsilon),
            base_policy: Some(base_policy),
            ..Self::bare(Algorithm::ExpectedSarsa, alpha)
        }
    }

    pub fn double_q_learning(alpha: f64, p: f64) -> Self {
        AlgorithmSpec { p: Some(p), ..Self::bare(Algorithm::DoubleQLearning, alpha) }
    }

    pub fn opi(alpha: f64) -> Self {
        Self::bare(Algorithm::Opi, alpha)
    }

    pub fn with_horizon_tolerance(mut self, tol: f64) -> Self {
        self.horizon_tolerance = Some(tol);
        self
    }

    pub fn horizon_tolerance(&self) -> f64 {
        self.horizon_tolerance.unwrap_or(DEFAULT_HORIZON_TOLERANCE)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidSpec(msg));
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return fail(format!("alpha {} outside (0, 1]", self.alpha));
        }
        let uses_lambda = self.algorithm == Algorithm::TdLambda;
        let uses_epsilon = matches!(self.algorithm, Algorithm::Sarsa | Algorithm::ExpectedSarsa);
        let uses_p = self.algorithm == Algorithm::DoubleQLearning;
        let uses_policy = matches!(
            self.algorithm,
            Algorithm::Td0 | Algorithm::MonteCarlo | Algorithm::TdLambda | Algorithm::Sarsa | Algorithm::ExpectedSarsa
        );
        let uses_horizon = matches!(self.algorithm, Algorithm::MonteCarlo | Algorithm::TdLambda | Algorithm::Opi);

        match (self.lambda, uses_lambda) {
            (Some(l), true) if !(0.0..1.0).contains(&l) => return fail(format!("lambda {l} outside [0, 1)")),
            (None, true) => return fail(format!("{} requires lambda", self.algorithm)),
            (Some(_), false) => return fail(format!("{} takes no lambda", self.algorithm)),
            _ => {}
        }
        match (self.epsilon, uses_epsilon) {
            (Some(e), true) if !(0.0..=1.0).contains(&e) => return fail(format!("epsilon {e} outside [0, 1]")),
            (None, true) => return fail(format!("{} requires epsilon", self.algorithm)),
            (Some(_), false) => return fail(format!("{} takes no epsilon", self.algorithm)),
            _ => {}
        }
        match (self.p, uses_p) {
            (Some(p), true) if !(p > 0.0 && p < 1.0) => return fail(format!("p {p} outside (0, 1)")),
            (None, true) => return fail(format!("{} requires p", self.algorithm)),
            (Some(_), false) => return fail(format!("{} takes no p", self.algorithm)),
            _ => {}
        }
        match (&self.base_policy, uses_policy) {
            (None, true) => return fail(format!("{} requires a base policy", self.algorithm)),
            (Some(_), false) => return fail(format!("{} takes no base policy", self.algorithm)),
            _ => {}
        }
        match (self.horizon_tolerance, uses_horizon) {
            (Some(t), true) if !(t > 0.0) => return fail(format!("horizon tolerance {t} must be positive")),
            (Some(_), false) => return fail(format!("{} takes no horizon tolerance", self.algorithm)),
            _ => {}
        }
        Ok(())
    }

    pub fn base_policy(&self) -> Result<&Policy> {
        self.base_policy
            .as_ref()
            .ok_or_else(|| Error::InvalidSpec(format!("{} has no base policy", self.algorithm)))
    }

    pub fn point_shape(&self) -> PointShape {
        match self.algorithm {
            Algorithm::Td0 | Algorithm::MonteCarlo | Algorithm::TdLambda => PointShape::StateValue,
            Algorithm::QLearning | Algorithm::Sarsa | Algorithm::ExpectedSarsa | Algorithm::Opi => {
                PointShape::ActionValue
            }
            Algorithm::DoubleQLearning => PointShape::Pair,
        }
    }

    /// Function layout of a single table under this algorithm on `mdp`.
    pub fn table_layout(&self, mdp: &FiniteMdp) -> FunctionLayout {
        match self.point_shape() {
            PointShape::StateValue => FunctionLayout::StateValue { n_states: mdp.n_states },
            PointShape::ActionValue | PointShape::Pair => FunctionLayout::ActionValue {
                n_states: mdp.n_states,
                n_actions: mdp.n_actions,
            },
        }
    }

    /// Truncation horizon for this spec's sampled returns on `mdp`.
    pub fn horizon(&self, mdp: &FiniteMdp) -> usize {
        truncation_horizon(mdp.gamma, mdp.rmax, self.horizon_tolerance())
    }
}

/// The paired tables maintained by double Q-learning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtendedPoint {
    pub qa: FunctionPoint,
    pub qb: FunctionPoint,
}

impl ExtendedPoint {
    pub fn new(qa: FunctionPoint, qb: FunctionPoint) -> Result<Self> {
        if !qa.same_shape(&qb) {
            return Err(Error::DimensionMismatch("paired tables must share a shape".to_string()));
        }
        Ok(ExtendedPoint { qa, qb })
    }
}

/// A point of the lifted chain: one function, or a pair of tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChainPoint {
    Single(FunctionPoint),
    Pair(ExtendedPoint),
}

impl ChainPoint {
    pub fn dim(&self) -> usize {
        match self {
            ChainPoint::Single(f) => f.dim(),
            ChainPoint::Pair(e) => e.qa.dim() + e.qb.dim(),
        }
    }

    pub fn same_shape(&self, other: &ChainPoint) -> bool {
        match (self, other) {
            (ChainPoint::Single(a), ChainPoint::Single(b)) => a.same_shape(b),
            (ChainPoint::Pair(a), ChainPoint::Pair(b)) => a.qa.same_shape(&b.qa),
            _ => false,
        }
    }

    pub fn as_single(&self) -> Result<&FunctionPoint> {
        match self {
            ChainPoint::Single(f) => Ok(f),
            ChainPoint::Pair(_) => Err(Error::KindMismatch("expected a single function point".to_string())),
        }
    }

    pub fn as_pair(&self) -> Result<&ExtendedPoint> {
        match self {
            ChainPoint::Pair(e) => Ok(e),
            ChainPoint::Single(_) => Err(Error::KindMismatch("expected a paired point".to_string())),
        }
    }

    /// Flat view of all coordinates (pair = `qa` then `qb`).
    pub fn flat_values(&self) -> Vec<f64> {
        match self {
            ChainPoint::Single(f) => f.values().to_vec(),
            ChainPoint::Pair(e) => {
                let mut v = e.qa.values().to_vec();
                v.extend_from_slice(e.qb.values());
                v
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            ChainPoint::Single(f) => f.is_finite(),
            ChainPoint::Pair(e) => e.qa.is_finite() && e.qb.is_finite(),
        }
    }
}

/// Smallest `H` with `gamma^H * rmax / (1 - gamma) < tol`; at least 1.
///
/// Sampled returns truncated at this horizon carry a bias below `tol`.
pub fn truncation_horizon(gamma: f64, rmax: f64, tol: f64) -> usize {
    assert!((0.0..1.0).contains(&gamma), "gamma {gamma} outside [0, 1)");
    assert!(tol > 0.0, "tolerance must be positive");
    assert!(rmax >= 0.0, "rmax must be nonnegative");
    if gamma == 0.0 || rmax == 0.0 {
        return 1;
    }
    let tail = |h: usize| gamma.powi(h as i32) * rmax / (1.0 - gamma);
    let guess = (tol * (1.0 - gamma) / rmax).ln() / gamma.ln();
    let mut h = guess.ceil().max(1.0) as usize;
    // Rounding in the closed form can land one off; settle it directly.
    while h > 1 && tail(h - 1) < tol {
        h -= 1;
    }
    while tail(h) >= tol {
        h += 1;
    }
    h
}

/// Wasserstein contraction factor of one kernel step.
pub fn contraction_factor(spec: &AlgorithmSpec, gamma: f64) -> Result<f64> {
    let a = spec.alpha;
    match spec.algorithm {
        Algorithm::MonteCarlo => Ok(1.0 - a),
        Algorithm::Td0 => Ok(1.0 - a + a * gamma),
        Algorithm::TdLambda => {
            let l = spec.lambda.ok_or_else(|| Error::InvalidSpec("td-lambda requires lambda".to_string()))?;
            Ok(1.0 - a + a * gamma * (1.0 - l) / (1.0 - l * gamma))
        }
        Algorithm::Sarsa | Algorithm::ExpectedSarsa | Algorithm::QLearning => Ok(1.0 - a + a * gamma),
        Algorithm::DoubleQLearning => Ok(0.5 * (2.0 - a + a * gamma)),
        Algorithm::Opi => Err(Error::UnsupportedAlgorithm(Algorithm::Opi)),
    }
}
