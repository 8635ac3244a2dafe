//! Built-in benchmark MDPs and a seeded random-MDP generator.
//!
//! The numbered instances are tiny constructions with closed-form values;
//! every experiment in the crate can run against them without external data.

use crate::mdp::{DiscreteDistribution, FiniteMdp};
use crate::rng::RngStream;

/// One state, one action, deterministic reward 1, self-loop, gamma 0.5.
/// Fully deterministic; `v = 2`.
pub fn m1() -> FiniteMdp {
    FiniteMdp {
        n_states: 1,
        n_actions: 1,
        gamma: 0.5,
        rmax: 1.0,
        rewards: vec![vec![DiscreteDistribution::dirac(1.0)]],
        transitions: vec![vec![vec![1.0]]],
    }
}

/// One state, one action, reward 0 or 2 with equal probability, self-loop,
/// gamma 0.5. Same mean chain as `m1` but with unit reward variance.
pub fn m2() -> FiniteMdp {
    FiniteMdp {
        n_states: 1,
        n_actions: 1,
        gamma: 0.5,
        rmax: 2.0,
        rewards: vec![vec![DiscreteDistribution::two_point(0.0, 0.5, 2.0)]],
        transitions: vec![vec![vec![1.0]]],
    }
}

/// Single-arm bandit with deterministic reward 0, self-loop, gamma 0.5.
/// Its only invariant law is the point mass at zero.
pub fn m3() -> FiniteMdp {
    FiniteMdp {
        n_states: 1,
        n_actions: 1,
        gamma: 0.5,
        rmax: 0.0,
        rewards: vec![vec![DiscreteDistribution::dirac(0.0)]],
        transitions: vec![vec![vec![1.0]]],
    }
}

/// Two-armed decision state with deterministic rewards 1 (arm 0) and 0
/// (arm 1); both arms lead to an absorbing zero-reward state. Gamma 0.5.
pub fn m4() -> FiniteMdp {
    FiniteMdp {
        n_states: 2,
        n_actions: 2,
        gamma: 0.5,
        rmax: 1.0,
        rewards: vec![
            vec![DiscreteDistribution::dirac(1.0), DiscreteDistribution::dirac(0.0)],
            vec![DiscreteDistribution::dirac(0.0), DiscreteDistribution::dirac(0.0)],
        ],
        transitions: vec![
            vec![vec![0.0, 1.0], vec![0.0, 1.0]],
            vec![vec![0.0, 1.0], vec![0.0, 1.0]],
        ],
    }
}

/// Like `m4` but arm 0 pays 0 or 2 with equal probability and arm 1 pays a
/// deterministic 0.5, so one sampled pull misranks the arms half the time.
pub fn m5() -> FiniteMdp {
    FiniteMdp {
        n_states: 2,
        n_actions: 2,
        gamma: 0.5,
        rmax: 2.0,
        rewards: vec![
            vec![DiscreteDistribution::two_point(0.0, 0.5, 2.0), DiscreteDistribution::dirac(0.5)],
            vec![DiscreteDistribution::dirac(0.0), DiscreteDistribution::dirac(0.0)],
        ],
        transitions: vec![
            vec![vec![0.0, 1.0], vec![0.0, 1.0]],
            vec![vec![0.0, 1.0], vec![0.0, 1.0]],
        ],
    }
}

/// One state, two symmetric actions, each paying 0 or 2 with equal
/// probability, self-loops, gamma 0.5. `q* = (2, 2)`.
pub fn m6() -> FiniteMdp {
    FiniteMdp {
        n_states: 1,
        n_actions: 2,
        gamma: 0.5,
        rmax: 2.0,
        rewards: vec![vec![
            DiscreteDistribution::two_point(0.0, 0.5, 2.0),
            DiscreteDistribution::two_point(0.0, 0.5, 2.0),
        ]],
        transitions: vec![vec![vec![1.0], vec![1.0]]],
    }
}

/// Two states, one action, deterministic reward 0, and a symmetric chain
/// that switches state with probability `p_switch`. Gamma 0.5.
pub fn two_state_symmetric(p_switch: f64) -> FiniteMdp {
    FiniteMdp {
        n_states: 2,
        n_actions: 1,
        gamma: 0.5,
        rmax: 0.0,
        rewards: vec![
            vec![DiscreteDistribution::dirac(0.0)],
            vec![DiscreteDistribution::dirac(0.0)],
        ],
        transitions: vec![
            vec![vec![1.0 - p_switch, p_switch]],
            vec![vec![p_switch, 1.0 - p_switch]],
        ],
    }
}

/// Two states, one action, deterministic reward 0, uniform successor from
/// either state. Gamma 0.5.
pub fn two_state_uniform() -> FiniteMdp {
    FiniteMdp {
        n_states: 2,
        n_actions: 1,
        gamma: 0.5,
        rmax: 0.0,
        rewards: vec![
            vec![DiscreteDistribution::dirac(0.0)],
            vec![DiscreteDistribution::dirac(0.0)],
        ],
        transitions: vec![vec![vec![0.5, 0.5]], vec![vec![0.5, 0.5]]],
    }
}

/// Seeded random MDP: Dirichlet(1,...,1) transition rows (normalized
/// exponentials) and two-atom reward distributions with values in `[0, 1]`.
pub fn random_mdp(n_states: usize, n_actions: usize, gamma: f64, seed: u64) -> FiniteMdp {
    let root = RngStream::from_seed(seed);
    let mut rewards = Vec::with_capacity(n_states);
    let mut transitions = Vec::with_capacity(n_states);
    for s in 0..n_states {
        let mut reward_row = Vec::with_capacity(n_actions);
        let mut transition_row = Vec::with_capacity(n_actions);
        for a in 0..n_actions {
            let mut rng = root.substream(s as u64).substream(a as u64);
            let mut weights: Vec<f64> = (0..n_states)
                .map(|_| -(1.0 - rng.next_f64()).ln())
                .collect();
            let total: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= total;
            }
            transition_row.push(weights);

            let lo = rng.uniform(0.0, 0.5);
            let hi = rng.uniform(0.5, 1.0);
            let p_lo = rng.uniform(0.25, 0.75);
            reward_row.push(DiscreteDistribution::new(vec![(lo, p_lo), (hi, 1.0 - p_lo)]));
        }
        rewards.push(reward_row);
        transitions.push(transition_row);
    }
    FiniteMdp { n_states, n_actions, gamma, rmax: 1.0, rewards, transitions }
}

/// Look up a built-in instance by name (`m1` through `m6`).
pub fn by_name(name: &str) -> Option<FiniteMdp> {
    match name.to_ascii_lowercase().as_str() {
        "m1" => Some(m1()),
        "m2" => Some(m2()),
        "m3" => Some(m3()),
        "m4" => Some(m4()),
        "m5" => Some(m5()),
        "m6" => Some(m6()),
        _ => None,
    }
}
