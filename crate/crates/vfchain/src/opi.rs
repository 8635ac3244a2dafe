//! Optimistic policy iteration as a Markov chain on the finite policy set.
//!
//! With a full step (`alpha = 1`) the greedy policy of the sampled return
//! table is a Markov chain on deterministic policies. This module estimates
//! and (for episodic instances) exactly computes its kernel, classifies
//! communicating classes, solves the stationary law restricted to the class
//! of the optimal policy, and checks the structural facts that drive
//! convergence: probabilistic policy improvement, aperiodicity at the
//! optimum, and reachability along the classical policy-iteration path.
//! For `alpha < 1` only plain simulation is offered; no stationarity claims
//! are made there.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{
    exact_policy_values, greedy_policy, optimal_values, FiniteMdp, FunctionPoint, Policy,
};
use crate::operators::{sample_return, AlgorithmSpec};
use crate::rng::RngStream;

/// Cap on the number of deterministic policies we will enumerate.
pub const ENUMERATION_CAP: u128 = 100_000;

/// Cap on exact return-distribution atom counts.
pub const ATOM_CAP: usize = 1_000_000;

/// All deterministic policies in lexicographic order of their action tuples
/// (state 0 is the most significant digit).
pub fn enumerate_policies(mdp: &FiniteMdp) -> Result<Vec<Policy>> {
    let count = (mdp.n_actions as u128).checked_pow(mdp.n_states as u32);
    match count {
        Some(c) if c <= ENUMERATION_CAP => {}
        Some(c) => return Err(Error::EnumerationLimit { count: c, cap: ENUMERATION_CAP }),
        None => return Err(Error::EnumerationLimit { count: u128::MAX, cap: ENUMERATION_CAP }),
    }
    let total = count.unwrap() as usize;
    let mut out = Vec::with_capacity(total);
    let mut actions = vec![0usize; mdp.n_states];
    loop {
        out.push(Policy::Deterministic(actions.clone()));
        // Increment the least significant digit (the last state).
        let mut pos = mdp.n_states;
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            actions[pos] += 1;
            if actions[pos] < mdp.n_actions {
                break;
            }
            actions[pos] = 0;
        }
    }
}

/// Index of a deterministic policy in the lexicographic enumeration.
pub fn policy_index(policy: &Policy, n_actions: usize) -> Result<usize> {
    let actions = policy
        .as_deterministic()
        .ok_or_else(|| Error::InvalidArgument("policy index needs a deterministic policy".to_string()))?;
    let mut idx = 0usize;
    for &a in actions {
        idx = idx * n_actions + a;
    }
    Ok(idx)
}

/// One optimistic step: blend the table toward a fresh sampled-return table
/// of its own greedy policy, then re-extract the greedy policy.
/// Coordinate `(s, a)` draws from `rng.substream(s * n_actions + a)`.
pub fn opi_step(
    q: &FunctionPoint,
    mdp: &FiniteMdp,
    alpha: f64,
    h: usize,
    rng: &RngStream,
) -> Result<(FunctionPoint, Policy)> {
    let policy = greedy_policy(q)?;
    let na = mdp.n_actions;
    let mut values = Vec::with_capacity(mdp.n_pairs());
    for s in 0..mdp.n_states {
        for a in 0..na {
            let mut c = rng.substream((s * na + a) as u64);
            let g = sample_return(mdp, &policy, s, a, h, &mut c);
            values.push(q.at_sa(s, a) + alpha * (g - q.at_sa(s, a)));
        }
    }
    let next = FunctionPoint::action_value(mdp.n_states, na, values)?;
    let next_policy = greedy_policy(&next)?;
    Ok((next, next_policy))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelProvenance {
    MonteCarlo { samples: usize, horizon: usize },
    ExactEnumeration { horizon: usize },
}

/// Row-stochastic kernel over the deterministic policy set.
#[derive(Clone, Debug)]
pub struct PolicyKernel {
    pub policies: Vec<Policy>,
    pub k: DMatrix<f64>,
    pub provenance: KernelProvenance,
    /// Binomial standard errors per entry (sampled kernels only).
    pub standard_error: Option<DMatrix<f64>>,
}

impl PolicyKernel {
    pub fn row_sum_tolerance(&self) -> f64 {
        match self.provenance {
            KernelProvenance::MonteCarlo { .. } => 1e-9,
            KernelProvenance::ExactEnumeration { .. } => 1e-12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.policies.len();
        if self.k.nrows() != n || self.k.ncols() != n {
            return Err(Error::DimensionMismatch("kernel shape does not match the policy list".to_string()));
        }
        let tol = self.row_sum_tolerance();
        for i in 0..n {
            let mut sum = 0.0;
            for j in 0..n {
                let v = self.k[(i, j)];
                if v < 0.0 {
                    return Err(Error::KernelEstimation(format!("negative entry {v} at ({i},{j})")));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > tol {
                return Err(Error::KernelEstimation(format!("row {i} sums to {sum}")));
            }
        }
        Ok(())
    }

    /// Positivity threshold for entry `(i, j)`: zero for exact kernels,
    /// four binomial standard errors for sampled ones.
    pub fn positivity_threshold(&self, i: usize, j: usize) -> f64 {
        match &self.standard_error {
            Some(se) => 4.0 * se[(i, j)],
            None => 0.0,
        }
    }
}

/// Estimate the kernel by sampling `samples` full return tables per policy
/// and recording the greedy policy of each table.
pub fn estimate_policy_kernel(mdp: &FiniteMdp, samples: usize, h: usize, seed: u64) -> Result<PolicyKernel> {
    if samples == 0 {
        return Err(Error::InvalidArgument("kernel estimation needs at least one sample".to_string()));
    }
    let policies = enumerate_policies(mdp)?;
    let n = policies.len();
    let na = mdp.n_actions;
    let prep = crate::operators::empirical::PreparedMdp::new(mdp);
    let root = RngStream::from_seed(seed);
    let mut k = DMatrix::zeros(n, n);
    let mut table = vec![0.0; mdp.n_pairs()];
    for (row, policy) in policies.iter().enumerate() {
        let row_rng = root.substream(row as u64);
        let mut counts = vec![0u64; n];
        for m in 0..samples {
            let draw_rng = row_rng.substream(m as u64);
            for s in 0..mdp.n_states {
                for a in 0..na {
                    let slot = s * na + a;
                    let mut c = draw_rng.substream(slot as u64);
                    table[slot] = prep.rollout_return(policy, s, Some(a), h, &mut c);
                }
            }
            // Greedy index of the sampled table, lowest-index ties.
            let mut idx = 0usize;
            for s in 0..mdp.n_states {
                let base = s * na;
                let mut best = 0usize;
                for a in 1..na {
                    if table[base + a] > table[base + best] {
                        best = a;
                    }
                }
                idx = idx * na + best;
            }
            counts[idx] += 1;
        }
        for (j, &c) in counts.iter().enumerate() {
            k[(row, j)] = c as f64 / samples as f64;
        }
    }
    let se = DMatrix::from_fn(n, n, |i, j| {
        let p: f64 = k[(i, j)];
        (p * (1.0 - p) / samples as f64).sqrt()
    });
    let kernel = PolicyKernel {
        policies,
        k,
        provenance: KernelProvenance::MonteCarlo { samples, horizon: h },
        standard_error: Some(se),
    };
    kernel.validate()?;
    Ok(kernel)
}

/// Is `s` absorbing with zero reward under `policy`?
fn absorbing_zero(mdp: &FiniteMdp, actions: &[usize], s: usize) -> bool {
    let a = actions[s];
    mdp.transitions[s][a][s] == 1.0
        && mdp.rewards[s][a].atoms().iter().all(|&(v, p)| p == 0.0 || v == 0.0)
}

/// Exact distribution of the truncated return from `(s, a)` under a
/// deterministic policy, for episodic instances: every trajectory must sit
/// in an absorbing zero-reward state after `h` steps, so truncation is free.
fn exact_return_distribution(
    mdp: &FiniteMdp,
    actions: &[usize],
    s: usize,
    a: usize,
    h: usize,
) -> Result<Vec<(f64, f64)>> {
    // Atoms keyed by (state, value bits); values are exact partial sums, so
    // bit equality is the right merge rule. BTreeMap keeps the expansion
    // deterministic.
    let mut live: BTreeMap<(usize, u64), f64> = BTreeMap::new();
    let mut settled: BTreeMap<u64, f64> = BTreeMap::new();
    live.insert((s, 0f64.to_bits()), 1.0);
    let mut discount = 1.0;
    for t in 0..h {
        let mut next: BTreeMap<(usize, u64), f64> = BTreeMap::new();
        for (&(state, bits), &prob) in &live {
            if t > 0 && absorbing_zero(mdp, actions, state) {
                *settled.entry(bits).or_insert(0.0) += prob;
                continue;
            }
            let action = if t == 0 { a } else { actions[state] };
            let value = f64::from_bits(bits);
            for &(r, pr) in mdp.rewards[state][action].atoms() {
                if pr == 0.0 {
                    continue;
                }
                let new_value = value + discount * r;
                for (sp, &psp) in mdp.transitions[state][action].iter().enumerate() {
                    if psp == 0.0 {
                        continue;
                    }
                    *next.entry((sp, new_value.to_bits())).or_insert(0.0) += prob * pr * psp;
                }
            }
        }
        if next.len() + settled.len() > ATOM_CAP {
            return Err(Error::OutcomeOverflow { cap: ATOM_CAP });
        }
        live = next;
        discount *= mdp.gamma;
    }
    for (&(state, bits), &prob) in &live {
        if !absorbing_zero(mdp, actions, state) {
            return Err(Error::NotEpisodic { horizon: h, state });
        }
        *settled.entry(bits).or_insert(0.0) += prob;
    }
    Ok(settled.into_iter().map(|(bits, p)| (f64::from_bits(bits), p)).collect())
}

/// Probability that each action wins the lowest-index argmax over
/// independent per-action return draws at one state.
fn greedy_win_probabilities(dists: &[Vec<(f64, f64)>]) -> Result<Vec<f64>> {
    let joint: usize = dists.iter().map(|d| d.len()).try_fold(1usize, |acc, l| acc.checked_mul(l)).unwrap_or(usize::MAX);
    if joint > ATOM_CAP {
        return Err(Error::OutcomeOverflow { cap: ATOM_CAP });
    }
    let na = dists.len();
    let mut wins = vec![0.0; na];
    let mut odometer = vec![0usize; na];
    loop {
        let mut prob = 1.0;
        let mut best = 0usize;
        for (a, &pos) in odometer.iter().enumerate() {
            let (v, p) = dists[a][pos];
            prob *= p;
            if v > dists[best][odometer[best]].0 {
                best = a;
            }
        }
        wins[best] += prob;

        let mut pos = 0;
        loop {
            if pos == na {
                return Ok(wins);
            }
            odometer[pos] += 1;
            if odometer[pos] < dists[pos].len() {
                break;
            }
            odometer[pos] = 0;
            pos += 1;
        }
    }
}

/// Exact kernel by enumerating joint return outcomes; the row for a policy
/// factorizes across states because coordinates draw independent returns.
pub fn exact_policy_kernel(mdp: &FiniteMdp, h: usize) -> Result<PolicyKernel> {
    let policies = enumerate_policies(mdp)?;
    let n = policies.len();
    let mut k = DMatrix::zeros(n, n);
    for (row, policy) in policies.iter().enumerate() {
        let actions = policy.as_deterministic().expect("enumeration yields deterministic policies");
        let mut row_vec = vec![1.0f64];
        for s in 0..mdp.n_states {
            let dists: Vec<Vec<(f64, f64)>> = (0..mdp.n_actions)
                .map(|a| exact_return_distribution(mdp, actions, s, a, h))
                .collect::<Result<_>>()?;
            let wins = greedy_win_probabilities(&dists)?;
            // Kronecker extension keeps the lexicographic policy order.
            let mut extended = Vec::with_capacity(row_vec.len() * wins.len());
            for &r in &row_vec {
                for &w in &wins {
                    extended.push(r * w);
                }
            }
            row_vec = extended;
        }
        for (j, &v) in row_vec.iter().enumerate() {
            k[(row, j)] = v;
        }
    }
    let kernel = PolicyKernel {
        policies,
        k,
        provenance: KernelProvenance::ExactEnumeration { horizon: h },
        standard_error: None,
    };
    kernel.validate()?;
    Ok(kernel)
}

/// One policy's probabilistic-improvement check.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ImprovementCheck {
    pub policy: usize,
    /// Index of the classical policy-improvement target.
    pub improved: usize,
    pub probability: f64,
    pub pass: bool,
}

/// For every policy, the kernel must give positive mass to the classical
/// improvement target `greedy(q^pi)`.
pub fn check_probabilistic_improvement(kernel: &PolicyKernel, mdp: &FiniteMdp) -> Result<Vec<ImprovementCheck>> {
    kernel.validate()?;
    let mut out = Vec::with_capacity(kernel.policies.len());
    for (i, policy) in kernel.policies.iter().enumerate() {
        let (_, q) = exact_policy_values(mdp, policy)?;
        let improved = policy_index(&greedy_policy(&q)?, mdp.n_actions)?;
        let probability = kernel.k[(i, improved)];
        let pass = probability > kernel.positivity_threshold(i, improved);
        out.push(ImprovementCheck { policy: i, improved, probability, pass });
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolicyClass {
    pub members: Vec<usize>,
    pub recurrent: bool,
}

/// Stationary analysis of the policy chain.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolicyChainReport {
    /// Stationary law over all policies (zero off the optimal class).
    pub phi1: Vec<f64>,
    pub classes: Vec<PolicyClass>,
    pub aperiodic_star: bool,
    /// Residual of the balance identity
    /// `phi(star) (1 - K(star,star)) = sum_{pi != star} phi(pi) K(pi,star)`.
    pub identity_residual: f64,
    pub star_index: usize,
}

/// Communicating classes of the positive-entry digraph, the stationary law
/// on the recurrent class containing the optimal policy, and the balance
/// identity at the optimum.
pub fn policy_chain_stationary(kernel: &PolicyKernel, mdp: &FiniteMdp) -> Result<PolicyChainReport> {
    kernel.validate()?;
    let n = kernel.policies.len();
    let (star_policy, _) = optimal_values(mdp)?;
    let star = policy_index(&star_policy, mdp.n_actions)?;

    let mut graph = DiGraph::<(), ()>::with_capacity(n, n);
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for i in 0..n {
        for j in 0..n {
            if kernel.k[(i, j)] > 0.0 {
                graph.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    let mut classes: Vec<PolicyClass> = tarjan_scc(&graph)
        .into_iter()
        .map(|members| {
            let mut members: Vec<usize> = members.into_iter().map(|ix| ix.index()).collect();
            members.sort_unstable();
            PolicyClass { members, recurrent: false }
        })
        .collect();
    classes.sort_by_key(|c| c.members[0]);
    for class in &mut classes {
        class.recurrent = class.members.iter().all(|&i| {
            (0..n).all(|j| kernel.k[(i, j)] == 0.0 || class.members.binary_search(&j).is_ok())
        });
    }

    let star_class = classes
        .iter()
        .find(|c| c.members.binary_search(&star).is_ok())
        .expect("every node lies in a class");
    if !star_class.recurrent {
        return Err(Error::KernelEstimation(
            "the optimal policy's class leaks mass; kernel estimation too coarse".to_string(),
        ));
    }

    // Solve phi K = phi, sum phi = 1 on the recurrent class.
    let members = &star_class.members;
    let m = members.len();
    let mut system = DMatrix::zeros(m, m);
    for (r, &i) in members.iter().enumerate() {
        for (c, &j) in members.iter().enumerate() {
            // (K^T - I) phi = 0 rows.
            system[(r, c)] = kernel.k[(j, i)] - if r == c { 1.0 } else { 0.0 };
        }
    }
    for c in 0..m {
        system[(m - 1, c)] = 1.0;
    }
    let mut rhs = DVector::zeros(m);
    rhs[m - 1] = 1.0;
    let phi_class = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::KernelEstimation("stationary system for the policy chain is singular".to_string()))?;

    let mut phi1 = vec![0.0; n];
    for (r, &i) in members.iter().enumerate() {
        phi1[i] = phi_class[r];
    }

    let inflow: f64 = (0..n).filter(|&j| j != star).map(|j| phi1[j] * kernel.k[(j, star)]).sum();
    let identity_residual = (phi1[star] * (1.0 - kernel.k[(star, star)]) - inflow).abs();
    let aperiodic_star = kernel.k[(star, star)] > 0.0;

    Ok(PolicyChainReport { phi1, classes, aperiodic_star, identity_residual, star_index: star })
}

/// One start's reachability check along the classical policy-iteration path.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReachabilityCheck {
    pub start: usize,
    /// Policy indices from the start to the optimum, inclusive.
    pub path: Vec<usize>,
    pub link_probabilities: Vec<f64>,
    pub pass: bool,
}

/// Verify the kernel carries positive mass along every classical
/// policy-iteration path `pi0 -> greedy(q^{pi0}) -> ... -> star`.
pub fn check_reachability(kernel: &PolicyKernel, mdp: &FiniteMdp) -> Result<Vec<ReachabilityCheck>> {
    kernel.validate()?;
    let mut out = Vec::with_capacity(kernel.policies.len());
    for (start, policy) in kernel.policies.iter().enumerate() {
        let mut path = vec![start];
        let mut link_probabilities = Vec::new();
        let mut pass = true;
        let mut current = policy.clone();
        let mut current_idx = start;
        loop {
            let (_, q) = exact_policy_values(mdp, &current)?;
            let next = greedy_policy(&q)?;
            if next == current {
                break;
            }
            let next_idx = policy_index(&next, mdp.n_actions)?;
            let k = kernel.k[(current_idx, next_idx)];
            pass &= k > kernel.positivity_threshold(current_idx, next_idx);
            link_probabilities.push(k);
            path.push(next_idx);
            current = next;
            current_idx = next_idx;
        }
        out.push(ReachabilityCheck { start, path, link_probabilities, pass });
    }
    Ok(out)
}

/// Trace of `n_chains` independent optimistic runs.
#[derive(Clone, Debug)]
pub struct OpiSimulation {
    /// `frequencies[k][p]`: fraction of chains whose greedy policy after
    /// step `k` is policy `p` (row 0 is the initial greedy policy).
    pub per_step_frequencies: Vec<Vec<f64>>,
    /// Average frequency over the second half of the run.
    pub long_run_frequencies: Vec<f64>,
    /// Final tables, one per chain.
    pub final_tables: Vec<FunctionPoint>,
}

/// Run independent optimistic chains from realizable-uniform starts and
/// record greedy-policy visit frequencies. Descriptive output only.
pub fn simulate_opi(
    mdp: &FiniteMdp,
    alpha: f64,
    n_steps: usize,
    n_chains: usize,
    h: usize,
    seed: u64,
) -> Result<OpiSimulation> {
    if n_chains == 0 {
        return Err(Error::InvalidArgument("simulation needs at least one chain".to_string()));
    }
    let policies = enumerate_policies(mdp)?;
    let n_policies = policies.len();
    let spec = AlgorithmSpec::opi(alpha.max(f64::MIN_POSITIVE));
    let layout = spec.table_layout(mdp);
    let root = RngStream::from_seed(seed);
    let init_lane = root.substream(0);
    let hi = mdp.realizable_bound();

    let mut counts = vec![vec![0u64; n_policies]; n_steps + 1];
    let mut final_tables = Vec::with_capacity(n_chains);
    for chain in 0..n_chains {
        let init_rng = init_lane.substream(chain as u64);
        let values = (0..layout.dim()).map(|c| init_rng.substream(c as u64).uniform(0.0, hi)).collect();
        let mut q = FunctionPoint::from_layout(layout, values)?;
        let mut policy = greedy_policy(&q)?;
        counts[0][policy_index(&policy, mdp.n_actions)?] += 1;
        for step in 1..=n_steps {
            let rng = root.substream(step as u64).substream(chain as u64);
            let (next_q, next_policy) = opi_step(&q, mdp, alpha, h, &rng)?;
            q = next_q;
            policy = next_policy;
            counts[step][policy_index(&policy, mdp.n_actions)?] += 1;
        }
        final_tables.push(q);
    }

    let per_step_frequencies: Vec<Vec<f64>> = counts
        .iter()
        .map(|row| row.iter().map(|&c| c as f64 / n_chains as f64).collect())
        .collect();
    let half = n_steps / 2;
    let tail = &per_step_frequencies[half..];
    let mut long_run_frequencies = vec![0.0; n_policies];
    for row in tail {
        for (acc, f) in long_run_frequencies.iter_mut().zip(row) {
            *acc += f;
        }
    }
    for f in &mut long_run_frequencies {
        *f /= tail.len() as f64;
    }
    Ok(OpiSimulation { per_step_frequencies, long_run_frequencies, final_tables })
}

/// Kernel matrix as CSV (`from` column, then one column per target policy).
pub fn kernel_csv(kernel: &PolicyKernel) -> String {
    let n = kernel.policies.len();
    let mut out = String::from("from");
    for j in 0..n {
        out.push_str(&format!(",p{j}"));
    }
    out.push('\n');
    for i in 0..n {
        out.push_str(&format!("p{i}"));
        for j in 0..n {
            out.push_str(&format!(",{}", kernel.k[(i, j)]));
        }
        out.push('\n');
    }
    out
}

/// Legend mapping policy indices to action tuples.
pub fn kernel_legend_csv(kernel: &PolicyKernel) -> String {
    let mut out = String::from("index,actions\n");
    for (i, policy) in kernel.policies.iter().enumerate() {
        let actions = policy
            .as_deterministic()
            .map(|a| a.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" "))
            .unwrap_or_default();
        out.push_str(&format!("p{i},{actions}\n"));
    }
    out
}
