//! Exact expectations of the sampled targets.
//!
//! For one-step algorithms these are Bellman backups computed from the MDP
//! tables. Truncated-return targets (Monte Carlo and lambda returns) are
//! handled by exact moment recursions over the trajectory distribution, so
//! no outcome enumeration is needed and means/variances are exact under the
//! declared truncation horizon.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mdp::{
    bellman_optimality_backup, bellman_policy_backup, policy_transition_matrix, FiniteMdp, FunctionLayout,
    FunctionPoint, Policy,
};

use super::{Algorithm, AlgorithmSpec};

/// The epsilon-greedy mixture of the greedy policy of `f` and a base policy.
fn epsilon_greedy_mixture(f: &FunctionPoint, base: &Policy, epsilon: f64, n_actions: usize) -> Policy {
    let n_states = f.dim() / n_actions;
    let mut rows = vec![vec![0.0; n_actions]; n_states];
    for s in 0..n_states {
        rows[s][f.argmax_at(s)] += 1.0 - epsilon;
        for a in 0..n_actions {
            rows[s][a] += epsilon * base.prob(s, a);
        }
    }
    Policy::Stochastic(rows)
}

fn lambda_weight(n: usize, h: usize, lambda: f64) -> f64 {
    // (1-lambda) lambda^(n-1) for interior n; the lambda^H tail is folded
    // onto the H-step term, giving lambda^(H-1).
    if n < h {
        (1.0 - lambda) * lambda.powi(n as i32 - 1)
    } else {
        lambda.powi(h as i32 - 1)
    }
}

/// Exact `E[target(f)]` for the supported algorithms.
pub fn expected_target(spec: &AlgorithmSpec, mdp: &FiniteMdp, f: &FunctionPoint) -> Result<FunctionPoint> {
    spec.validate()?;
    if f.layout() != spec.table_layout(mdp) {
        return Err(Error::KindMismatch(format!("{} expects a different point layout", spec.algorithm)));
    }
    match spec.algorithm {
        Algorithm::Td0 => bellman_policy_backup(mdp, spec.base_policy()?, f),
        Algorithm::QLearning => bellman_optimality_backup(mdp, f),
        Algorithm::Sarsa | Algorithm::ExpectedSarsa => {
            let mixture = epsilon_greedy_mixture(f, spec.base_policy()?, spec.epsilon.expect("validated"), mdp.n_actions);
            bellman_policy_backup(mdp, &mixture, f)
        }
        Algorithm::MonteCarlo => {
            let policy = spec.base_policy()?;
            let h = spec.horizon(mdp);
            let mut g = FunctionPoint::zeros(f.layout());
            for _ in 0..h {
                g = bellman_policy_backup(mdp, policy, &g)?;
            }
            Ok(g)
        }
        Algorithm::TdLambda => {
            let policy = spec.base_policy()?;
            let lambda = spec.lambda.expect("validated");
            let h = spec.horizon(mdp);
            let mut g = f.clone();
            let mut acc = vec![0.0; f.dim()];
            for n in 1..=h {
                g = bellman_policy_backup(mdp, policy, &g)?;
                let w = lambda_weight(n, h, lambda);
                for (out, v) in acc.iter_mut().zip(g.values()) {
                    *out += w * v;
                }
            }
            FunctionPoint::from_layout(f.layout(), acc)
        }
        Algorithm::DoubleQLearning | Algorithm::Opi => Err(Error::UnsupportedAlgorithm(spec.algorithm)),
    }
}

struct Moments {
    m1: f64,
    m2: f64,
}

/// First and second moments of a truncated-return target, by backward
/// recursion over `X_k = r + gamma ((1-lambda) f(s') + lambda X_{k-1})`.
/// Monte Carlo is the `lambda = 1, X_0 = 0` instance; the lambda return uses
/// `X_0 = f`, which reproduces the folded tail weight exactly.
fn truncated_target_moments(
    mdp: &FiniteMdp,
    policy: &Policy,
    f: Option<&FunctionPoint>,
    lambda: f64,
    h: usize,
) -> (Vec<f64>, Vec<f64>) {
    let n = mdp.n_states;
    let (mut m1, mut m2): (Vec<f64>, Vec<f64>) = match f {
        Some(f) => (f.values().to_vec(), f.values().iter().map(|v| v * v).collect()),
        None => (vec![0.0; n], vec![0.0; n]),
    };
    let gl = mdp.gamma * lambda;
    for _ in 0..h {
        let mut next_m1 = vec![0.0; n];
        let mut next_m2 = vec![0.0; n];
        for s in 0..n {
            let mut acc = Moments { m1: 0.0, m2: 0.0 };
            for a in 0..mdp.n_actions {
                let pa = policy.prob(s, a);
                if pa == 0.0 {
                    continue;
                }
                for &(r, pr) in mdp.rewards[s][a].atoms() {
                    if pr == 0.0 {
                        continue;
                    }
                    for (sp, &psp) in mdp.transitions[s][a].iter().enumerate() {
                        if psp == 0.0 {
                            continue;
                        }
                        let w = pa * pr * psp;
                        let c = r + match f {
                            Some(f) => mdp.gamma * (1.0 - lambda) * f.at(sp),
                            None => 0.0,
                        };
                        acc.m1 += w * (c + gl * m1[sp]);
                        acc.m2 += w * (c * c + 2.0 * c * gl * m1[sp] + gl * gl * m2[sp]);
                    }
                }
            }
            next_m1[s] = acc.m1;
            next_m2[s] = acc.m2;
        }
        m1 = next_m1;
        m2 = next_m2;
    }
    (m1, m2)
}

fn variance_of<I: IntoIterator<Item = (f64, f64)>>(outcomes: I) -> f64 {
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for (value, prob) in outcomes {
        m1 += prob * value;
        m2 += prob * value * value;
    }
    (m2 - m1 * m1).max(0.0)
}

/// Exact covariance of the target noise `target(f) - E[target(f)]`.
///
/// Coordinates draw independent transitions, so the covariance is diagonal;
/// the diagonal holds per-coordinate target variances.
pub fn noise_covariance(spec: &AlgorithmSpec, mdp: &FiniteMdp, f: &FunctionPoint) -> Result<DMatrix<f64>> {
    spec.validate()?;
    if f.layout() != spec.table_layout(mdp) {
        return Err(Error::KindMismatch(format!("{} expects a different point layout", spec.algorithm)));
    }
    let gamma = mdp.gamma;
    let diag: Vec<f64> = match spec.algorithm {
        Algorithm::Td0 => {
            let policy = spec.base_policy()?;
            (0..mdp.n_states)
                .map(|s| {
                    let mut outcomes = Vec::new();
                    for a in 0..mdp.n_actions {
                        let pa = policy.prob(s, a);
                        if pa == 0.0 {
                            continue;
                        }
                        for &(r, pr) in mdp.rewards[s][a].atoms() {
                            for (sp, &psp) in mdp.transitions[s][a].iter().enumerate() {
                                if psp > 0.0 {
                                    outcomes.push((r + gamma * f.at(sp), pa * pr * psp));
                                }
                            }
                        }
                    }
                    variance_of(outcomes)
                })
                .collect()
        }
        Algorithm::QLearning => pair_variances(mdp, |s, a| {
            let mut outcomes = Vec::new();
            for &(r, pr) in mdp.rewards[s][a].atoms() {
                for (sp, &psp) in mdp.transitions[s][a].iter().enumerate() {
                    if psp > 0.0 {
                        outcomes.push((r + gamma * f.max_at(sp), pr * psp));
                    }
                }
            }
            variance_of(outcomes)
        }),
        Algorithm::Sarsa => {
            let policy = spec.base_policy()?;
            let epsilon = spec.epsilon.expect("validated");
            pair_variances(mdp, |s, a| {
                let mut outcomes = Vec::new();
                for &(r, pr) in mdp.rewards[s][a].atoms() {
                    for (sp, &psp) in mdp.transitions[s][a].iter().enumerate() {
                        if psp == 0.0 {
                            continue;
                        }
                        if epsilon < 1.0 {
                            outcomes.push((r + gamma * f.max_at(sp), (1.0 - epsilon) * pr * psp));
                        }
                        if epsilon > 0.0 {
                            for ap in 0..mdp.n_actions {
                                let pap = policy.prob(sp, ap);
                                if pap > 0.0 {
                                    outcomes.push((r + gamma * f.at_sa(sp, ap), epsilon * pap * pr * psp));
                                }
                            }
                        }
                    }
                }
                variance_of(outcomes)
            })
        }
        Algorithm::ExpectedSarsa => {
            let policy = spec.base_policy()?;
            let epsilon = spec.epsilon.expect("validated");
            pair_variances(mdp, |s, a| {
                let mut outcomes = Vec::new();
                for &(r, pr) in mdp.rewards[s][a].atoms() {
                    for (sp, &psp) in mdp.transitions[s][a].iter().enumerate() {
                        if psp == 0.0 {
                            continue;
                        }
                        let mut mixed = (1.0 - epsilon) * f.max_at(sp);
                        for ap in 0..mdp.n_actions {
                            let pap = policy.prob(sp, ap);
                            if pap > 0.0 {
                                mixed += epsilon * pap * f.at_sa(sp, ap);
                            }
                        }
                        outcomes.push((r + gamma * mixed, pr * psp));
                    }
                }
                variance_of(outcomes)
            })
        }
        Algorithm::MonteCarlo => {
            let policy = spec.base_policy()?;
            let h = spec.horizon(mdp);
            let (m1, m2) = truncated_target_moments(mdp, policy, None, 1.0, h);
            m1.iter().zip(&m2).map(|(a, b)| (b - a * a).max(0.0)).collect()
        }
        Algorithm::TdLambda => {
            let policy = spec.base_policy()?;
            let lambda = spec.lambda.expect("validated");
            let h = spec.horizon(mdp);
            let (m1, m2) = truncated_target_moments(mdp, policy, Some(f), lambda, h);
            m1.iter().zip(&m2).map(|(a, b)| (b - a * a).max(0.0)).collect()
        }
        Algorithm::DoubleQLearning | Algorithm::Opi => {
            return Err(Error::UnsupportedAlgorithm(spec.algorithm));
        }
    };
    Ok(DMatrix::from_diagonal(&DVector::from_vec(diag)))
}

fn pair_variances<F: FnMut(usize, usize) -> f64>(mdp: &FiniteMdp, mut per_pair: F) -> Vec<f64> {
    let mut out = Vec::with_capacity(mdp.n_pairs());
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            out.push(per_pair(s, a));
        }
    }
    out
}

/// Matrix form `E[target(f)] = b + A f` of an evaluation algorithm's
/// expected target. Control targets are not affine and are rejected.
pub fn effective_affine_map(spec: &AlgorithmSpec, mdp: &FiniteMdp) -> Result<(DMatrix<f64>, DVector<f64>)> {
    spec.validate()?;
    let layout = FunctionLayout::StateValue { n_states: mdp.n_states };
    match spec.algorithm {
        Algorithm::Td0 | Algorithm::MonteCarlo | Algorithm::TdLambda => {}
        other => return Err(Error::NotAffine(other)),
    }
    let policy = spec.base_policy()?;
    let offset = expected_target(spec, mdp, &FunctionPoint::zeros(layout))?;
    let b = DVector::from_vec(offset.values().to_vec());
    let n = mdp.n_states;
    let a = match spec.algorithm {
        Algorithm::Td0 => policy_transition_matrix(mdp, policy, layout) * mdp.gamma,
        Algorithm::MonteCarlo => DMatrix::zeros(n, n),
        Algorithm::TdLambda => {
            let lambda = spec.lambda.expect("validated");
            let h = spec.horizon(mdp);
            let m = policy_transition_matrix(mdp, policy, layout) * mdp.gamma;
            let mut power = DMatrix::identity(n, n);
            let mut acc = DMatrix::zeros(n, n);
            for step in 1..=h {
                power = &power * &m;
                acc += &power * lambda_weight(step, h, lambda);
            }
            acc
        }
        _ => unreachable!(),
    };
    Ok((a, b))
}
