//! Quantitative characterization of the invariant law: mean identity,
//! exact stationary covariance via a Kronecker linear system, a Chebyshev
//! concentration bound, and the control-bias dominance check.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::mdp::{FiniteMdp, FunctionPoint};
use crate::operators::expectation::{effective_affine_map, noise_covariance};

/// Induced infinity operator norm: max absolute row sum.
pub fn covariance_opnorm(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows())
        .map(|i| m.row(i).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Outcome of comparing a burned-in ensemble mean against its exact target.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeanCheckReport {
    pub deviations: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub max_deviation: f64,
    pub bias_allowance: f64,
    pub pass: bool,
}

/// Compare per-coordinate ensemble means with `reference`; passes when every
/// deviation is within four standard errors plus `bias_allowance` (the
/// truncation/burn-in slack the caller accounts for).
pub fn stationary_mean_check(
    e: &ParticleEnsemble,
    reference: &FunctionPoint,
    bias_allowance: f64,
) -> Result<MeanCheckReport> {
    let means = e.coordinate_means()?;
    let ses = e.coordinate_standard_errors()?;
    if means.len() != reference.dim() {
        return Err(Error::DimensionMismatch("reference point does not match the ensemble".to_string()));
    }
    let deviations: Vec<f64> = means
        .iter()
        .zip(reference.values())
        .map(|(m, r)| (m - r).abs())
        .collect();
    let pass = deviations
        .iter()
        .zip(&ses)
        .all(|(d, se)| *d <= 4.0 * se + bias_allowance);
    let max_deviation = deviations.iter().copied().fold(0.0, f64::max);
    Ok(MeanCheckReport { deviations, standard_errors: ses, max_deviation, bias_allowance, pass })
}

/// Ensemble estimate of the stationary noise integral: the average of the
/// exact per-particle noise covariance. Diagonal by construction.
pub fn estimate_noise_integral(e: &ParticleEnsemble, mdp: &FiniteMdp) -> Result<DMatrix<f64>> {
    let mut acc: Option<DMatrix<f64>> = None;
    for p in &e.particles {
        let c = noise_covariance(&e.spec, mdp, p.as_single()?)?;
        acc = Some(match acc {
            Some(sum) => sum + c,
            None => c,
        });
    }
    Ok(acc.expect("ensembles are nonempty") / e.len() as f64)
}

const COVARIANCE_RESIDUAL_TOL: f64 = 1e-8;

/// Solve the stationary covariance equation
/// `Sigma = M Sigma M^T + alpha^2 Cbar` with `M = (1-alpha) I + alpha A`,
/// as the dense `d^2 x d^2` linear system `[I - M (x) M] vec(Sigma) = alpha^2 vec(Cbar)`.
///
/// Requires `||M||_inf < 1`, which holds whenever `A` comes from a
/// discounted evaluation target.
pub fn solve_stationary_covariance(a: &DMatrix<f64>, alpha: f64, cbar: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = a.nrows();
    if a.ncols() != d || cbar.nrows() != d || cbar.ncols() != d {
        return Err(Error::DimensionMismatch("covariance solve needs square matching matrices".to_string()));
    }
    let m = DMatrix::identity(d, d) * (1.0 - alpha) + a * alpha;
    let norm = covariance_opnorm(&m);
    if norm >= 1.0 {
        return Err(Error::NotContractive { norm });
    }
    let system = DMatrix::identity(d * d, d * d) - m.kronecker(&m);
    let rhs = DVector::from_iterator(d * d, cbar.iter().map(|c| alpha * alpha * c));
    let vec_sigma = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Internal("stationary covariance system reported singular".to_string()))?;
    let mut sigma = DMatrix::from_column_slice(d, d, vec_sigma.as_slice());
    sigma = (&sigma + sigma.transpose()) * 0.5;

    let residual = (&sigma - &m * &sigma * m.transpose() - cbar * (alpha * alpha)).norm();
    let scale = sigma.norm().max(f64::MIN_POSITIVE);
    if residual > COVARIANCE_RESIDUAL_TOL * scale.max(1e-300) && residual > 1e-14 {
        return Err(Error::Internal(format!("covariance solve residual {residual} exceeds tolerance")));
    }
    Ok(sigma)
}

/// Chebyshev-style bound on `P{ min_i |f(i) - ref(i)| >= eps }` for the
/// invariant law, clamped to 1.
pub fn concentration_bound(alpha: f64, gamma: f64, rmax: f64, d: usize, eps: f64) -> f64 {
    assert!(eps > 0.0, "eps must be positive");
    let c = (2.0 * rmax / (1.0 - gamma)).powi(2);
    let rho = 1.0 - alpha + alpha * gamma;
    let raw = c / (d as f64 * eps * eps) * alpha * alpha / (1.0 - rho * rho);
    raw.min(1.0)
}

/// Fraction of particles whose smallest coordinate deviation from
/// `reference` reaches `eps`.
pub fn empirical_concentration(e: &ParticleEnsemble, reference: &FunctionPoint, eps: f64) -> Result<f64> {
    let mut hits = 0usize;
    for p in &e.particles {
        let f = p.as_single()?;
        if !f.same_shape(reference) {
            return Err(Error::DimensionMismatch("reference point does not match the ensemble".to_string()));
        }
        let min_dev = f
            .values()
            .iter()
            .zip(reference.values())
            .map(|(a, b)| (a - b).abs())
            .fold(f64::INFINITY, f64::min);
        if min_dev >= eps {
            hits += 1;
        }
    }
    Ok(hits as f64 / e.len() as f64)
}

/// Per-coordinate comparison of a control ensemble's mean against the
/// optimal table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ControlBiasReport {
    /// `mean_i - qstar_i` per coordinate.
    pub excess: Vec<f64>,
    pub standard_errors: Vec<f64>,
    /// Mean dominates the optimum within statistical resolution.
    pub dominates: bool,
    /// Coordinates where the excess clears four standard errors.
    pub strict_excess: Vec<usize>,
}

/// Absolute floor below which an excess is treated as numerically zero, so
/// deterministic instances (standard error exactly zero) are not flagged.
const STRICT_EXCESS_FLOOR: f64 = 1e-9;

/// Check `E[f] >= qstar` componentwise (within 4 SE) and record where the
/// overestimation is statistically strict.
pub fn control_bias_check(e: &ParticleEnsemble, qstar: &FunctionPoint) -> Result<ControlBiasReport> {
    let means = e.coordinate_means()?;
    let ses = e.coordinate_standard_errors()?;
    if means.len() != qstar.dim() {
        return Err(Error::DimensionMismatch("optimal table does not match the ensemble".to_string()));
    }
    let excess: Vec<f64> = means.iter().zip(qstar.values()).map(|(m, q)| m - q).collect();
    let dominates = excess.iter().zip(&ses).all(|(x, se)| *x >= -4.0 * se);
    let strict_excess = excess
        .iter()
        .zip(&ses)
        .enumerate()
        .filter(|(_, (x, se))| **x >= 4.0 * **se && **x > STRICT_EXCESS_FLOOR)
        .map(|(i, _)| i)
        .collect();
    Ok(ControlBiasReport { excess, standard_errors: ses, dominates, strict_excess })
}

/// Solved-versus-empirical stationary covariance comparison.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub sigma_solved: Vec<Vec<f64>>,
    pub sigma_empirical: Vec<Vec<f64>>,
    pub cbar: Vec<Vec<f64>>,
    pub opnorm_solved: f64,
    pub relative_frobenius_error: f64,
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Sample covariance of a single-function ensemble about its sample mean.
pub fn empirical_covariance(e: &ParticleEnsemble) -> Result<DMatrix<f64>> {
    let means = e.coordinate_means()?;
    let d = means.len();
    let n = e.len();
    if n < 2 {
        return Err(Error::InvalidArgument("empirical covariance needs at least two particles".to_string()));
    }
    let mut acc = DMatrix::zeros(d, d);
    for p in &e.particles {
        let centered = DVector::from_iterator(d, p.as_single()?.values().iter().zip(&means).map(|(v, m)| v - m));
        acc += &centered * centered.transpose();
    }
    Ok(acc / (n as f64 - 1.0))
}

const PSD_TOL: f64 = 1e-8;

/// Build the full covariance report for a burned-in evaluation ensemble:
/// estimate the noise integral from the particles, solve the stationary
/// equation through the affine map of the expected target, and compare with
/// the empirical covariance.
pub fn covariance_report(e: &ParticleEnsemble, mdp: &FiniteMdp) -> Result<CovarianceReport> {
    let (a, _) = effective_affine_map(&e.spec, mdp)?;
    let cbar = estimate_noise_integral(e, mdp)?;
    let sigma_solved = solve_stationary_covariance(&a, e.spec.alpha, &cbar)?;
    let sigma_empirical = empirical_covariance(e)?;

    let eigen = sigma_solved.clone().symmetric_eigen();
    let min_eig = eigen.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = covariance_opnorm(&sigma_solved).max(1.0);
    if min_eig < -PSD_TOL * scale {
        return Err(Error::Internal(format!("solved covariance has eigenvalue {min_eig}")));
    }

    let rel = (&sigma_solved - &sigma_empirical).norm() / sigma_solved.norm().max(f64::MIN_POSITIVE);
    Ok(CovarianceReport {
        opnorm_solved: covariance_opnorm(&sigma_solved),
        relative_frobenius_error: rel,
        sigma_solved: to_rows(&sigma_solved),
        sigma_empirical: to_rows(&sigma_empirical),
        cbar: to_rows(&cbar),
    })
}
