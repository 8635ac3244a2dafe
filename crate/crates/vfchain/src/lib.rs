//! Constant step-size reinforcement learning algorithms viewed as Markov
//! chains over value functions.
//!
//! The crate pairs every sampled update rule (TD(0), Monte Carlo evaluation,
//! TD(lambda), Q-learning, SARSA, Expected SARSA, double Q-learning, and
//! optimistic policy iteration) with exact oracles on finite MDPs: Bellman
//! backups and policy evaluation in [`mdp`], expected targets and noise
//! covariances in [`operators`], particle-ensemble chain simulation and
//! couplings in [`ensemble`], sup-norm transport distances in [`transport`],
//! invariant-law diagnostics in [`stationary`], and the finite policy chain
//! of optimistic policy iteration in [`opi`].
//!
//! All randomness flows through keyed [`rng::RngStream`] substreams, so every
//! simulation is reproducible bit for bit and coupled chains are built by
//! key sharing rather than shared mutable state.

pub mod catalog;
pub mod ensemble;
pub mod error;
pub mod mdp;
pub mod operators;
pub mod opi;
pub mod rng;
pub mod stationary;
pub mod transport;

pub use error::{Error, Result};
pub use mdp::{
    bellman_optimality_backup, bellman_policy_backup, exact_policy_values, greedy_policy, optimal_values,
    policy_iteration, policy_transition_matrix, DiscreteDistribution, FiniteMdp, FunctionLayout, FunctionPoint,
    MdpViolation, Policy,
};
pub use operators::{
    apply_empirical_operator, contraction_factor, sample_return, synchronous_update, truncation_horizon, Algorithm,
    AlgorithmSpec, ChainPoint, ExtendedPoint,
};
pub use rng::RngStream;
