//! Finite MDPs, exact Bellman machinery, and classical policy iteration.
//!
//! Everything here is deterministic and exact (dense linear algebra on desk
//! scale problems). The sampled counterparts live in [`crate::operators`].

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Tolerance for probability rows summing to one.
pub const PROB_TOL: f64 = 1e-9;

/// A finite-support distribution over real values, stored as `(value, prob)`
/// atoms. Serializes as `[[value, prob], ...]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DiscreteDistribution {
    atoms: Vec<(f64, f64)>,
}

impl DiscreteDistribution {
    pub fn new(atoms: Vec<(f64, f64)>) -> Self {
        DiscreteDistribution { atoms }
    }

    pub fn dirac(value: f64) -> Self {
        DiscreteDistribution { atoms: vec![(value, 1.0)] }
    }

    pub fn two_point(a: f64, pa: f64, b: f64) -> Self {
        DiscreteDistribution { atoms: vec![(a, pa), (b, 1.0 - pa)] }
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|&(v, p)| v * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let m2: f64 = self.atoms.iter().map(|&(v, p)| v * v * p).sum();
        (m2 - m * m).max(0.0)
    }

    /// Inverse-CDF draw; consumes exactly one uniform.
    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        let u = rng.next_f64();
        let mut acc = 0.0;
        for &(v, p) in &self.atoms {
            acc += p;
            if u < acc {
                return v;
            }
        }
        // Row sums may fall a hair short of 1; land on the last atom.
        self.atoms[self.atoms.len() - 1].0
    }

    fn check(&self, rmax: Option<f64>) -> Vec<String> {
        let mut problems = Vec::new();
        if self.atoms.is_empty() {
            problems.push("distribution has no atoms".to_string());
            return problems;
        }
        let mut total = 0.0;
        for &(v, p) in &self.atoms {
            if !(v.is_finite() && p.is_finite()) {
                problems.push(format!("non-finite atom ({v}, {p})"));
            }
            if p < 0.0 {
                problems.push(format!("negative probability {p}"));
            }
            total += p;
            if let Some(rmax) = rmax {
                if v < 0.0 || v > rmax {
                    problems.push(format!("reward atom {v} outside [0, {rmax}]"));
                }
            }
        }
        if (total - 1.0).abs() > PROB_TOL {
            problems.push(format!("probabilities sum to {total} != 1"));
        }
        problems
    }
}

/// One invariant violation, locatable to a `(state, action)` pair when the
/// defect is local.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdpViolation {
    pub location: Option<(usize, usize)>,
    pub message: String,
}

impl fmt::Display for MdpViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.location {
            Some((s, a)) => write!(f, "{} at ({s},{a})", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

/// A finite MDP: reward distributions and transition rows per state-action
/// pair, a discount in `[0, 1)`, and a declared reward bound `rmax`.
///
/// Immutable after construction; all operations take `&self`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub rmax: f64,
    /// `rewards[s][a]` is the reward distribution of `(s, a)`.
    pub rewards: Vec<Vec<DiscreteDistribution>>,
    /// `transitions[s][a][s']` is the probability of moving to `s'`.
    pub transitions: Vec<Vec<Vec<f64>>>,
}

impl FiniteMdp {
    /// Collect every invariant violation. An empty report means the MDP is
    /// well-formed. Violations are data, not faults.
    pub fn validate(&self) -> Vec<MdpViolation> {
        let mut out = Vec::new();
        let global = |message: String| MdpViolation { location: None, message };
        if self.n_states == 0 {
            out.push(global("n_states must be positive".to_string()));
        }
        if self.n_actions == 0 {
            out.push(global("n_actions must be positive".to_string()));
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            out.push(global(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        if !(self.rmax >= 0.0) {
            out.push(global(format!("rmax {} is negative", self.rmax)));
        }
        if self.rewards.len() != self.n_states || self.transitions.len() != self.n_states {
            out.push(global(format!(
                "expected {} reward/transition rows, found {}/{}",
                self.n_states,
                self.rewards.len(),
                self.transitions.len()
            )));
            return out;
        }
        for s in 0..self.n_states {
            if self.rewards[s].len() != self.n_actions || self.transitions[s].len() != self.n_actions {
                out.push(MdpViolation {
                    location: Some((s, 0)),
                    message: format!(
                        "state {s} has {}/{} action entries, expected {}",
                        self.rewards[s].len(),
                        self.transitions[s].len(),
                        self.n_actions
                    ),
                });
                continue;
            }
            for a in 0..self.n_actions {
                for message in self.rewards[s][a].check(Some(self.rmax)) {
                    out.push(MdpViolation { location: Some((s, a)), message });
                }
                let row = &self.transitions[s][a];
                if row.len() != self.n_states {
                    out.push(MdpViolation {
                        location: Some((s, a)),
                        message: format!("transition row length {} != {}", row.len(), self.n_states),
                    });
                    continue;
                }
                let mut total = 0.0;
                for &p in row {
                    if p < 0.0 {
                        out.push(MdpViolation {
                            location: Some((s, a)),
                            message: format!("negative transition probability {p}"),
                        });
                    }
                    total += p;
                }
                if (total - 1.0).abs() > PROB_TOL {
                    out.push(MdpViolation {
                        location: Some((s, a)),
                        message: format!("row sum {total} != 1"),
                    });
                }
            }
        }
        out
    }

    /// Validate and return `self`, or the full violation report as an error.
    pub fn validated(self) -> Result<Self> {
        let report = self.validate();
        if report.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidMdp(report))
        }
    }

    pub fn mean_reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s][a].mean()
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        &self.transitions[s][a]
    }

    /// Upper bound `rmax / (1 - gamma)` on any discounted return.
    pub fn realizable_bound(&self) -> f64 {
        self.rmax / (1.0 - self.gamma)
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    /// Inverse-CDF draw of a successor state; consumes exactly one uniform.
    pub fn sample_successor(&self, s: usize, a: usize, rng: &mut RngStream) -> usize {
        sample_index(&self.transitions[s][a], rng)
    }
}

/// Draw an index from a probability row; consumes exactly one uniform.
pub(crate) fn sample_index(probs: &[f64], rng: &mut RngStream) -> usize {
    let u = rng.next_f64();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Tolerated rounding slack in the row sum: land on the last positive entry.
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

/// A decision rule: one action per state, or a probability row over actions
/// per state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    Deterministic(Vec<usize>),
    Stochastic(Vec<Vec<f64>>),
}

impl Policy {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let w = 1.0 / n_actions as f64;
        Policy::Stochastic(vec![vec![w; n_actions]; n_states])
    }

    pub fn n_states(&self) -> usize {
        match self {
            Policy::Deterministic(actions) => actions.len(),
            Policy::Stochastic(rows) => rows.len(),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, Policy::Deterministic(_))
    }

    pub fn as_deterministic(&self) -> Option<&[usize]> {
        match self {
            Policy::Deterministic(actions) => Some(actions),
            Policy::Stochastic(_) => None,
        }
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        match self {
            Policy::Deterministic(actions) => {
                if actions[s] == a {
                    1.0
                } else {
                    0.0
                }
            }
            Policy::Stochastic(rows) => rows[s][a],
        }
    }

    /// Draw an action. Deterministic policies consume no randomness;
    /// stochastic policies consume exactly one uniform.
    pub fn sample_action(&self, s: usize, rng: &mut RngStream) -> usize {
        match self {
            Policy::Deterministic(actions) => actions[s],
            Policy::Stochastic(rows) => sample_index(&rows[s], rng),
        }
    }

    pub fn validate(&self, mdp: &FiniteMdp) -> Vec<MdpViolation> {
        let mut out = Vec::new();
        if self.n_states() != mdp.n_states {
            out.push(MdpViolation {
                location: None,
                message: format!("policy covers {} states, mdp has {}", self.n_states(), mdp.n_states),
            });
            return out;
        }
        match self {
            Policy::Deterministic(actions) => {
                for (s, &a) in actions.iter().enumerate() {
                    if a >= mdp.n_actions {
                        out.push(MdpViolation {
                            location: Some((s, a)),
                            message: format!("action index {a} out of range"),
                        });
                    }
                }
            }
            Policy::Stochastic(rows) => {
                for (s, row) in rows.iter().enumerate() {
                    if row.len() != mdp.n_actions {
                        out.push(MdpViolation {
                            location: Some((s, 0)),
                            message: format!("action row length {} != {}", row.len(), mdp.n_actions),
                        });
                        continue;
                    }
                    let mut total = 0.0;
                    for &p in row {
                        if p < 0.0 {
                            out.push(MdpViolation {
                                location: Some((s, 0)),
                                message: format!("negative action probability {p}"),
                            });
                        }
                        total += p;
                    }
                    if (total - 1.0).abs() > PROB_TOL {
                        out.push(MdpViolation {
                            location: Some((s, 0)),
                            message: format!("action row sum {total} != 1"),
                        });
                    }
                }
            }
        }
        out
    }
}

/// Shape of a point in the lifted chain's state space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FunctionLayout {
    StateValue { n_states: usize },
    ActionValue { n_states: usize, n_actions: usize },
}

impl FunctionLayout {
    pub fn dim(&self) -> usize {
        match *self {
            FunctionLayout::StateValue { n_states } => n_states,
            FunctionLayout::ActionValue { n_states, n_actions } => n_states * n_actions,
        }
    }
}

/// A point in `R^d`: a state-value vector or a flat, state-major
/// action-value table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionPoint {
    layout: FunctionLayout,
    values: Vec<f64>,
}

impl FunctionPoint {
    pub fn state_value(values: Vec<f64>) -> Self {
        let layout = FunctionLayout::StateValue { n_states: values.len() };
        FunctionPoint { layout, values }
    }

    pub fn action_value(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(Error::DimensionMismatch(format!(
                "action-value table needs {} entries, got {}",
                n_states * n_actions,
                values.len()
            )));
        }
        Ok(FunctionPoint {
            layout: FunctionLayout::ActionValue { n_states, n_actions },
            values,
        })
    }

    pub fn constant(layout: FunctionLayout, value: f64) -> Self {
        FunctionPoint { layout, values: vec![value; layout.dim()] }
    }

    pub fn zeros(layout: FunctionLayout) -> Self {
        Self::constant(layout, 0.0)
    }

    pub fn from_layout(layout: FunctionLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.dim() {
            return Err(Error::DimensionMismatch(format!(
                "layout dimension {} != value count {}",
                layout.dim(),
                values.len()
            )));
        }
        Ok(FunctionPoint { layout, values })
    }

    pub fn layout(&self) -> FunctionLayout {
        self.layout
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_state_value(&self) -> bool {
        matches!(self.layout, FunctionLayout::StateValue { .. })
    }

    pub fn is_action_value(&self) -> bool {
        matches!(self.layout, FunctionLayout::ActionValue { .. })
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Entries within `[0, rmax/(1-gamma)]` up to `tol` slack.
    pub fn is_realizable(&self, mdp: &FiniteMdp, tol: f64) -> bool {
        let hi = mdp.realizable_bound();
        self.values.iter().all(|&v| v >= -tol && v <= hi + tol)
    }

    #[inline]
    pub fn at(&self, s: usize) -> f64 {
        debug_assert!(self.is_state_value());
        self.values[s]
    }

    #[inline]
    pub fn at_sa(&self, s: usize, a: usize) -> f64 {
        match self.layout {
            FunctionLayout::ActionValue { n_actions, .. } => self.values[s * n_actions + a],
            FunctionLayout::StateValue { .. } => panic!("state-value point indexed by (s,a)"),
        }
    }

    /// Max over actions at `s`; action-value layout only.
    #[inline]
    pub fn max_at(&self, s: usize) -> f64 {
        match self.layout {
            FunctionLayout::ActionValue { n_actions, .. } => {
                let base = s * n_actions;
                let mut best = self.values[base];
                for a in 1..n_actions {
                    let v = self.values[base + a];
                    if v > best {
                        best = v;
                    }
                }
                best
            }
            FunctionLayout::StateValue { .. } => panic!("state-value point has no action axis"),
        }
    }

    /// Lowest-index maximizing action at `s`; action-value layout only.
    #[inline]
    pub fn argmax_at(&self, s: usize) -> usize {
        match self.layout {
            FunctionLayout::ActionValue { n_actions, .. } => {
                let base = s * n_actions;
                let mut best = 0;
                for a in 1..n_actions {
                    if self.values[base + a] > self.values[base + best] {
                        best = a;
                    }
                }
                best
            }
            FunctionLayout::StateValue { .. } => panic!("state-value point has no action axis"),
        }
    }

    pub fn same_shape(&self, other: &FunctionPoint) -> bool {
        self.layout == other.layout
    }
}

/// Lowest-index greedy policy of an action-value table. Ties always break to
/// the smallest action index, so the map is a function of the table alone.
pub fn greedy_policy(q: &FunctionPoint) -> Result<Policy> {
    let FunctionLayout::ActionValue { n_states, .. } = q.layout() else {
        return Err(Error::KindMismatch("greedy policy needs an action-value table".to_string()));
    };
    if !q.is_finite() {
        return Err(Error::NonFinite("greedy policy input".to_string()));
    }
    Ok(Policy::Deterministic((0..n_states).map(|s| q.argmax_at(s)).collect()))
}

fn check_point(mdp: &FiniteMdp, f: &FunctionPoint, what: &str) -> Result<()> {
    let ok = match f.layout() {
        FunctionLayout::StateValue { n_states } => n_states == mdp.n_states,
        FunctionLayout::ActionValue { n_states, n_actions } => {
            n_states == mdp.n_states && n_actions == mdp.n_actions
        }
    };
    if !ok {
        return Err(Error::DimensionMismatch(format!("{what}: point shape does not match the mdp")));
    }
    if !f.is_finite() {
        return Err(Error::NonFinite(what.to_string()));
    }
    Ok(())
}

/// One exact policy backup: expected reward plus discounted expected next
/// value, under `policy`. Handles both layouts.
pub fn bellman_policy_backup(mdp: &FiniteMdp, policy: &Policy, f: &FunctionPoint) -> Result<FunctionPoint> {
    check_point(mdp, f, "policy backup")?;
    if policy.n_states() != mdp.n_states {
        return Err(Error::DimensionMismatch("policy does not match the mdp".to_string()));
    }
    match f.layout() {
        FunctionLayout::StateValue { .. } => {
            let mut out = vec![0.0; mdp.n_states];
            for s in 0..mdp.n_states {
                let mut total = 0.0;
                for a in 0..mdp.n_actions {
                    let pa = policy.prob(s, a);
                    if pa == 0.0 {
                        continue;
                    }
                    let mut next = 0.0;
                    for (sp, &p) in mdp.transitions[s][a].iter().enumerate() {
                        next += p * f.at(sp);
                    }
                    total += pa * (mdp.mean_reward(s, a) + mdp.gamma * next);
                }
                out[s] = total;
            }
            Ok(FunctionPoint::state_value(out))
        }
        FunctionLayout::ActionValue { .. } => {
            let mut out = vec![0.0; mdp.n_pairs()];
            for s in 0..mdp.n_states {
                for a in 0..mdp.n_actions {
                    let mut next = 0.0;
                    for (sp, &p) in mdp.transitions[s][a].iter().enumerate() {
                        if p == 0.0 {
                            continue;
                        }
                        let mut onward = 0.0;
                        for ap in 0..mdp.n_actions {
                            let pap = policy.prob(sp, ap);
                            if pap > 0.0 {
                                onward += pap * f.at_sa(sp, ap);
                            }
                        }
                        next += p * onward;
                    }
                    out[s * mdp.n_actions + a] = mdp.mean_reward(s, a) + mdp.gamma * next;
                }
            }
            FunctionPoint::action_value(mdp.n_states, mdp.n_actions, out)
        }
    }
}

/// One exact optimality backup: the max over actions is taken inside
/// (state-value) or at the successor (action-value).
pub fn bellman_optimality_backup(mdp: &FiniteMdp, f: &FunctionPoint) -> Result<FunctionPoint> {
    check_point(mdp, f, "optimality backup")?;
    match f.layout() {
        FunctionLayout::StateValue { .. } => {
            let mut out = vec![0.0; mdp.n_states];
            for s in 0..mdp.n_states {
                let mut best = f64::NEG_INFINITY;
                for a in 0..mdp.n_actions {
                    let mut next = 0.0;
                    for (sp, &p) in mdp.transitions[s][a].iter().enumerate() {
                        next += p * f.at(sp);
                    }
                    best = best.max(mdp.mean_reward(s, a) + mdp.gamma * next);
                }
                out[s] = best;
            }
            Ok(FunctionPoint::state_value(out))
        }
        FunctionLayout::ActionValue { .. } => {
            let mut out = vec![0.0; mdp.n_pairs()];
            for s in 0..mdp.n_states {
                for a in 0..mdp.n_actions {
                    let mut next = 0.0;
                    for (sp, &p) in mdp.transitions[s][a].iter().enumerate() {
                        if p > 0.0 {
                            next += p * f.max_at(sp);
                        }
                    }
                    out[s * mdp.n_actions + a] = mdp.mean_reward(s, a) + mdp.gamma * next;
                }
            }
            FunctionPoint::action_value(mdp.n_states, mdp.n_actions, out)
        }
    }
}

/// Row-stochastic transition matrix induced by a policy, over states
/// (`StateValue`) or over state-action pairs (`ActionValue`).
pub fn policy_transition_matrix(mdp: &FiniteMdp, policy: &Policy, layout_kind: FunctionLayout) -> DMatrix<f64> {
    match layout_kind {
        FunctionLayout::StateValue { .. } => {
            let n = mdp.n_states;
            DMatrix::from_fn(n, n, |s, sp| {
                (0..mdp.n_actions)
                    .map(|a| policy.prob(s, a) * mdp.transitions[s][a][sp])
                    .sum()
            })
        }
        FunctionLayout::ActionValue { .. } => {
            let na = mdp.n_actions;
            let n = mdp.n_pairs();
            DMatrix::from_fn(n, n, |row, col| {
                let (s, a) = (row / na, row % na);
                let (sp, ap) = (col / na, col % na);
                mdp.transitions[s][a][sp] * policy.prob(sp, ap)
            })
        }
    }
}

const POLICY_VALUE_RESIDUAL: f64 = 1e-10;

/// Exact policy evaluation: solves `(I - gamma P) v = r` by dense LU and
/// derives the action-value table from `v`.
pub fn exact_policy_values(mdp: &FiniteMdp, policy: &Policy) -> Result<(FunctionPoint, FunctionPoint)> {
    let n = mdp.n_states;
    let v_layout = FunctionLayout::StateValue { n_states: n };
    let p = policy_transition_matrix(mdp, policy, v_layout);
    let r = DVector::from_fn(n, |s, _| {
        (0..mdp.n_actions).map(|a| policy.prob(s, a) * mdp.mean_reward(s, a)).sum()
    });
    let system = DMatrix::identity(n, n) - &p * mdp.gamma;
    let v = system
        .lu()
        .solve(&r)
        .ok_or_else(|| Error::Internal("policy evaluation system reported singular".to_string()))?;

    let v_point = FunctionPoint::state_value(v.iter().copied().collect());
    let backed = bellman_policy_backup(mdp, policy, &v_point)?;
    let residual = v_point
        .values()
        .iter()
        .zip(backed.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if residual > POLICY_VALUE_RESIDUAL {
        return Err(Error::Internal(format!("policy evaluation residual {residual} too large")));
    }

    let mut q = vec![0.0; mdp.n_pairs()];
    for s in 0..n {
        for a in 0..mdp.n_actions {
            let next: f64 = mdp.transitions[s][a]
                .iter()
                .enumerate()
                .map(|(sp, &pr)| pr * v_point.at(sp))
                .sum();
            q[s * mdp.n_actions + a] = mdp.mean_reward(s, a) + mdp.gamma * next;
        }
    }
    let q_point = FunctionPoint::action_value(n, mdp.n_actions, q)?;
    Ok((v_point, q_point))
}

/// Classical policy iteration from `pi0`. Returns each visited policy with
/// its exact action-value table; the last entry is optimal.
pub fn policy_iteration(mdp: &FiniteMdp, pi0: &Policy) -> Result<Vec<(Policy, FunctionPoint)>> {
    if !pi0.is_deterministic() {
        return Err(Error::InvalidArgument("policy iteration starts from a deterministic policy".to_string()));
    }
    let mut sequence = Vec::new();
    let mut current = pi0.clone();
    loop {
        let (_, q) = exact_policy_values(mdp, &current)?;
        let next = greedy_policy(&q)?;
        let done = next == current;
        sequence.push((current, q));
        if done {
            return Ok(sequence);
        }
        current = next;
    }
}

/// Optimal policy and its action-value table, via policy iteration from the
/// all-zeros policy.
pub fn optimal_values(mdp: &FiniteMdp) -> Result<(Policy, FunctionPoint)> {
    let start = Policy::Deterministic(vec![0; mdp.n_states]);
    let seq = policy_iteration(mdp, &start)?;
    let (policy, q) = seq.into_iter().next_back().expect("policy iteration returns at least one entry");
    Ok((policy, q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use approx::assert_abs_diff_eq;

    #[test]
    fn m1_is_valid() {
        assert!(catalog::m1().validate().is_empty());
    }

    #[test]
    fn bad_row_sum_is_reported_with_location() {
        let mut mdp = catalog::m1();
        mdp.transitions[0][0] = vec![0.9];
        let report = mdp.validate();
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].location, Some((0, 0)));
        assert!(report[0].message.contains("row sum 0.9"), "{}", report[0].message);
    }

    #[test]
    fn reward_above_rmax_is_reported() {
        let mut mdp = catalog::m1();
        mdp.rewards[0][0] = DiscreteDistribution::dirac(2.0);
        let report = mdp.validate();
        assert_eq!(report.len(), 1);
        assert!(report[0].message.contains("outside [0, 1]"), "{}", report[0].message);
    }

    #[test]
    fn policy_backup_on_m1() {
        let mdp = catalog::m1();
        let pi = Policy::Deterministic(vec![0]);
        let v0 = FunctionPoint::state_value(vec![0.0]);
        let out = bellman_policy_backup(&mdp, &pi, &v0).unwrap();
        assert_eq!(out.values(), &[1.0]);
        let v2 = FunctionPoint::state_value(vec![2.0]);
        let out = bellman_policy_backup(&mdp, &pi, &v2).unwrap();
        assert_eq!(out.values(), &[2.0]);
    }

    #[test]
    fn policy_backup_on_m2_by_hand() {
        // mean reward 1 plus half of v = 4.
        let mdp = catalog::m2();
        let pi = Policy::Deterministic(vec![0]);
        let v = FunctionPoint::state_value(vec![4.0]);
        let out = bellman_policy_backup(&mdp, &pi, &v).unwrap();
        assert_abs_diff_eq!(out.values()[0], 3.0, epsilon = 1e-15);
    }

    #[test]
    fn optimality_backup_on_m4() {
        let mdp = catalog::m4();
        let v = FunctionPoint::state_value(vec![0.0, 0.0]);
        let out = bellman_optimality_backup(&mdp, &v).unwrap();
        assert_eq!(out.values(), &[1.0, 0.0]);
    }

    #[test]
    fn optimality_backup_single_action_reduces_to_policy_backup() {
        let mdp = catalog::m1();
        let v = FunctionPoint::state_value(vec![2.0]);
        let out = bellman_optimality_backup(&mdp, &v).unwrap();
        assert_eq!(out.values(), &[2.0]);
    }

    #[test]
    fn optimality_backup_on_m6_table() {
        // 1 + 0.5 * max(2, 2) per action.
        let mdp = catalog::m6();
        let q = FunctionPoint::action_value(1, 2, vec![2.0, 2.0]).unwrap();
        let out = bellman_optimality_backup(&mdp, &q).unwrap();
        assert_abs_diff_eq!(out.values()[0], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out.values()[1], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn exact_values_on_m1_and_m2() {
        for (mdp, expect) in [(catalog::m1(), 2.0), (catalog::m2(), 2.0)] {
            let pi = Policy::Deterministic(vec![0]);
            let (v, _) = exact_policy_values(&mdp, &pi).unwrap();
            assert_abs_diff_eq!(v.values()[0], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn exact_values_on_m4_arm0() {
        let mdp = catalog::m4();
        let pi = Policy::Deterministic(vec![0, 0]);
        let (v, q) = exact_policy_values(&mdp, &pi).unwrap();
        assert_abs_diff_eq!(v.values()[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v.values()[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q.at_sa(0, 0), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q.at_sa(0, 1), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn greedy_breaks_ties_to_lowest_index() {
        let q = FunctionPoint::action_value(1, 2, vec![1.0, 0.0]).unwrap();
        assert_eq!(greedy_policy(&q).unwrap(), Policy::Deterministic(vec![0]));
        let q = FunctionPoint::action_value(1, 2, vec![1.0, 1.0]).unwrap();
        assert_eq!(greedy_policy(&q).unwrap(), Policy::Deterministic(vec![0]));
        let q = FunctionPoint::action_value(2, 2, vec![0.0, 2.0, 5.0, 5.0]).unwrap();
        assert_eq!(greedy_policy(&q).unwrap(), Policy::Deterministic(vec![1, 0]));
    }

    #[test]
    fn greedy_rejects_non_finite() {
        let q = FunctionPoint::action_value(1, 2, vec![f64::NAN, 0.0]).unwrap();
        assert!(greedy_policy(&q).is_err());
    }

    #[test]
    fn policy_iteration_on_m4_takes_two_rounds() {
        let mdp = catalog::m4();
        let seq = policy_iteration(&mdp, &Policy::Deterministic(vec![1, 0])).unwrap();
        assert_eq!(seq.len(), 2);
        let last = &seq[1].0;
        assert_eq!(last.as_deterministic().unwrap()[0], 0);
    }

    #[test]
    fn policy_iteration_on_m1_is_immediate() {
        let mdp = catalog::m1();
        let seq = policy_iteration(&mdp, &Policy::Deterministic(vec![0])).unwrap();
        assert_eq!(seq.len(), 1);
    }

    #[test]
    fn policy_iteration_on_m6_reaches_the_symmetric_fixed_point() {
        let mdp = catalog::m6();
        for start in [vec![0], vec![1]] {
            let seq = policy_iteration(&mdp, &Policy::Deterministic(start)).unwrap();
            let q = &seq.last().unwrap().1;
            assert_abs_diff_eq!(q.at_sa(0, 0), 2.0, epsilon = 1e-12);
            assert_abs_diff_eq!(q.at_sa(0, 1), 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn policy_iteration_improves_monotonically() {
        let mdp = catalog::random_mdp(4, 3, 0.8, 99);
        let seq = policy_iteration(&mdp, &Policy::Deterministic(vec![2, 1, 0, 2])).unwrap();
        for w in seq.windows(2) {
            for (lo, hi) in w[0].1.values().iter().zip(w[1].1.values()) {
                assert!(hi >= &(lo - 1e-10), "improvement step regressed: {lo} -> {hi}");
            }
        }
    }

    #[test]
    fn transition_matrices_match_the_tables() {
        let m1 = catalog::m1();
        let p = policy_transition_matrix(&m1, &Policy::Deterministic(vec![0]), FunctionLayout::StateValue { n_states: 1 });
        assert_eq!(p[(0, 0)], 1.0);

        let m4 = catalog::m4();
        let p = policy_transition_matrix(
            &m4,
            &Policy::Deterministic(vec![0, 0]),
            FunctionLayout::StateValue { n_states: 2 },
        );
        assert_eq!(p[(0, 1)], 1.0);
        assert_eq!(p[(1, 1)], 1.0);

        let two = catalog::two_state_symmetric(0.3);
        let p = policy_transition_matrix(
            &two,
            &Policy::Deterministic(vec![0, 0]),
            FunctionLayout::StateValue { n_states: 2 },
        );
        assert_eq!(p[(0, 0)], 0.7);
        assert_eq!(p[(0, 1)], 0.3);
        assert_eq!(p[(1, 0)], 0.3);
        assert_eq!(p[(1, 1)], 0.7);
    }

    #[test]
    fn backup_of_exact_values_is_a_fixed_point() {
        let mdp = catalog::random_mdp(5, 3, 0.9, 17);
        let pi = Policy::uniform(5, 3);
        let (v, q) = exact_policy_values(&mdp, &pi).unwrap();
        let vb = bellman_policy_backup(&mdp, &pi, &v).unwrap();
        let qb = bellman_policy_backup(&mdp, &pi, &q).unwrap();
        for (a, b) in v.values().iter().zip(vb.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
        for (a, b) in q.values().iter().zip(qb.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn mdp_round_trips_through_json() {
        let mdp = catalog::m5();
        let text = serde_json::to_string(&mdp).unwrap();
        let back: FiniteMdp = serde_json::from_str(&text).unwrap();
        assert_eq!(mdp, back);
    }
}
