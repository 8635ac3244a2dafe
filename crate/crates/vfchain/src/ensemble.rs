//! Particle ensembles: empirical measures over value functions evolved by
//! synchronous kernel steps.
//!
//! Randomness is fully keyed: particle `i` of the step leaving `step_index`
//! `k` draws from `seed -> substream(k+1) -> substream(i) -> coordinate`.
//! Initialization uses the `substream(0)` lane. Two ensembles with the same
//! seed and step index therefore sample identical transitions — that is the
//! identical-samples coupling — while different seeds give independent
//! evolutions. Replaying any snapshot reproduces the chain bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{FiniteMdp, FunctionPoint};
use crate::operators::{
    contraction_factor, synchronous_update, Algorithm, AlgorithmSpec, ChainPoint, ExtendedPoint, PointShape,
};
use crate::rng::RngStream;

/// How to draw the initial particles.
#[derive(Clone, Debug, PartialEq)]
pub enum Initializer {
    /// Every particle starts at the same point.
    Point(ChainPoint),
    /// Coordinates drawn uniformly from `[lo, hi)`.
    UniformBox { lo: f64, hi: f64 },
    /// Uniform over the realizable box `[0, rmax/(1-gamma)]`.
    RealizableUniform,
}

/// An empirical measure: `n` chain replicas plus the spec and seed that
/// drive them. Snapshots are immutable; stepping returns a new ensemble.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleEnsemble {
    pub particles: Vec<ChainPoint>,
    pub step_index: u64,
    pub spec: AlgorithmSpec,
    pub seed: u64,
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Rekey the chain: future steps draw from `seed` instead. Particles and
    /// step index are untouched.
    pub fn reseeded(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Per-coordinate sample means (single-function ensembles).
    pub fn coordinate_means(&self) -> Result<Vec<f64>> {
        let d = self.particles[0].as_single()?.dim();
        let mut means = vec![0.0; d];
        for p in &self.particles {
            for (m, v) in means.iter_mut().zip(p.as_single()?.values()) {
                *m += v;
            }
        }
        let n = self.len() as f64;
        for m in &mut means {
            *m /= n;
        }
        Ok(means)
    }

    /// Per-coordinate standard errors of the mean.
    pub fn coordinate_standard_errors(&self) -> Result<Vec<f64>> {
        let means = self.coordinate_means()?;
        let n = self.len() as f64;
        if self.len() < 2 {
            return Ok(vec![0.0; means.len()]);
        }
        let mut ss = vec![0.0; means.len()];
        for p in &self.particles {
            for ((s, v), m) in ss.iter_mut().zip(p.as_single()?.values()).zip(&means) {
                let d = v - m;
                *s += d * d;
            }
        }
        Ok(ss.iter().map(|s| (s / (n - 1.0) / n).sqrt()).collect())
    }
}

/// Draw `n` particles from an initializer; deterministic given the seed.
pub fn init_ensemble(
    init: &Initializer,
    n: usize,
    spec: &AlgorithmSpec,
    mdp: &FiniteMdp,
    seed: u64,
) -> Result<ParticleEnsemble> {
    spec.validate()?;
    if n < 1 {
        return Err(Error::InvalidArgument("ensemble needs at least one particle".to_string()));
    }
    let layout = spec.table_layout(mdp);
    let box_bounds = match init {
        Initializer::Point(_) => None,
        Initializer::UniformBox { lo, hi } => {
            if lo > hi {
                return Err(Error::InvalidArgument(format!("uniform box [{lo}, {hi}) is empty")));
            }
            Some((*lo, *hi))
        }
        Initializer::RealizableUniform => Some((0.0, mdp.realizable_bound())),
    };
    let lane = RngStream::from_seed(seed).substream(0);
    let particles: Vec<ChainPoint> = (0..n)
        .map(|i| match init {
            Initializer::Point(p) => {
                let expected = match spec.point_shape() {
                    PointShape::Pair => matches!(p, ChainPoint::Pair(e) if e.qa.layout() == layout),
                    _ => matches!(p, ChainPoint::Single(f) if f.layout() == layout),
                };
                if !expected {
                    return Err(Error::KindMismatch("initializer point does not match the algorithm".to_string()));
                }
                Ok(p.clone())
            }
            _ => {
                let (lo, hi) = box_bounds.expect("bounds set for box initializers");
                let stream = lane.substream(i as u64);
                let draw_table = |offset: u64| -> FunctionPoint {
                    let values = (0..layout.dim())
                        .map(|c| stream.substream(offset + c as u64).uniform(lo, hi))
                        .collect();
                    FunctionPoint::from_layout(layout, values).expect("layout dim matches")
                };
                Ok(match spec.point_shape() {
                    PointShape::Pair => {
                        let qa = draw_table(0);
                        let qb = draw_table(layout.dim() as u64);
                        ChainPoint::Pair(ExtendedPoint { qa, qb })
                    }
                    _ => ChainPoint::Single(draw_table(0)),
                })
            }
        })
        .collect::<Result<_>>()?;
    Ok(ParticleEnsemble { particles, step_index: 0, spec: spec.clone(), seed })
}

/// One synchronous kernel step: every particle gets an independent target
/// draw, then the step-size blend. Returns a new snapshot.
pub fn step_ensemble(e: &ParticleEnsemble, mdp: &FiniteMdp) -> Result<ParticleEnsemble> {
    if e.spec.algorithm == Algorithm::Opi {
        return Err(Error::UnsupportedAlgorithm(Algorithm::Opi));
    }
    let prep = crate::operators::empirical::PreparedMdp::new(mdp);
    let base = RngStream::from_seed(e.seed).substream(e.step_index + 1);
    let particles: Vec<ChainPoint> = e
        .particles
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let target = crate::operators::empirical::apply_prepared(&e.spec, &prep, p, &base.substream(i as u64))?;
            synchronous_update(p, &target, e.spec.alpha)
        })
        .collect::<Result<_>>()?;
    Ok(ParticleEnsemble { particles, step_index: e.step_index + 1, spec: e.spec.clone(), seed: e.seed })
}

/// Run `n_steps` kernel steps, keeping a snapshot of the input, of every
/// `record_every`-th step, and of the final step.
pub fn run_chain(
    e: &ParticleEnsemble,
    mdp: &FiniteMdp,
    n_steps: usize,
    record_every: usize,
) -> Result<Vec<ParticleEnsemble>> {
    if record_every == 0 {
        return Err(Error::InvalidArgument("record_every must be at least 1".to_string()));
    }
    let mut snapshots = vec![e.clone()];
    let mut current = e.clone();
    for k in 1..=n_steps {
        current = step_ensemble(&current, mdp)?;
        if k % record_every == 0 || k == n_steps {
            snapshots.push(current.clone());
        }
    }
    Ok(snapshots)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coupling {
    /// Both sides replay the same substreams: identical transitions, rewards,
    /// branch coins, and table coins at every coordinate.
    IdenticalSamples,
    /// Sides evolve from unrelated streams.
    Independent,
}

/// A pair of equally sized, equally shaped ensembles advancing together.
#[derive(Clone, Debug)]
pub struct CoupledEnsemble {
    pub left: ParticleEnsemble,
    pub right: ParticleEnsemble,
    pub coupling: Coupling,
}

impl CoupledEnsemble {
    fn validate_pair(left: &ParticleEnsemble, right: &ParticleEnsemble) -> Result<()> {
        if left.len() != right.len() {
            return Err(Error::UnequalEnsembles { left: left.len(), right: right.len() });
        }
        if left.step_index != right.step_index {
            return Err(Error::InvalidArgument("coupled ensembles must share a step index".to_string()));
        }
        if left.spec != right.spec {
            return Err(Error::InvalidArgument("coupled ensembles must share an algorithm spec".to_string()));
        }
        if !left.particles[0].same_shape(&right.particles[0]) {
            return Err(Error::DimensionMismatch("coupled ensembles must share a particle shape".to_string()));
        }
        Ok(())
    }

    /// Identical-samples coupling; the sides must share a seed so their
    /// substreams coincide.
    pub fn identical(left: ParticleEnsemble, right: ParticleEnsemble) -> Result<Self> {
        Self::validate_pair(&left, &right)?;
        if left.seed != right.seed {
            return Err(Error::InvalidArgument(
                "identical-samples coupling requires both sides to share a seed".to_string(),
            ));
        }
        Ok(CoupledEnsemble { left, right, coupling: Coupling::IdenticalSamples })
    }

    /// Independent coupling; the sides must not share a seed.
    pub fn independent(left: ParticleEnsemble, right: ParticleEnsemble) -> Result<Self> {
        Self::validate_pair(&left, &right)?;
        if left.seed == right.seed {
            return Err(Error::InvalidArgument("independent coupling requires distinct seeds".to_string()));
        }
        Ok(CoupledEnsemble { left, right, coupling: Coupling::Independent })
    }
}

/// Draw two marginals from their initializers (independently) and couple
/// their future steps with identical samples.
pub fn coupled_pair(
    spec: &AlgorithmSpec,
    mdp: &FiniteMdp,
    init_left: &Initializer,
    init_right: &Initializer,
    n: usize,
    seed: u64,
) -> Result<CoupledEnsemble> {
    let left = init_ensemble(init_left, n, spec, mdp, RngStream::derive_seed(seed, 1))?.reseeded(seed);
    let right = init_ensemble(init_right, n, spec, mdp, RngStream::derive_seed(seed, 2))?.reseeded(seed);
    CoupledEnsemble::identical(left, right)
}

/// Advance both sides one kernel step under the declared coupling.
pub fn coupled_step(c: &CoupledEnsemble, mdp: &FiniteMdp) -> Result<CoupledEnsemble> {
    Ok(CoupledEnsemble {
        left: step_ensemble(&c.left, mdp)?,
        right: step_ensemble(&c.right, mdp)?,
        coupling: c.coupling,
    })
}

/// What a stationary burn-in did and what it guarantees.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BurnInReport {
    pub steps: usize,
    pub contraction_factor: f64,
    pub initial_diameter: f64,
    /// Transport distance from the invariant law after the run,
    /// `rho^steps * initial_diameter`.
    pub transport_bias_bound: f64,
    /// Scale of the remaining Monte Carlo error, `1/sqrt(n)`.
    pub sampling_error_scale: f64,
}

/// Run the chain from a realizable-uniform start long enough that the
/// ensemble law is within `target_accuracy` transport distance of the
/// invariant law.
pub fn burn_in_stationary(
    spec: &AlgorithmSpec,
    mdp: &FiniteMdp,
    n: usize,
    seed: u64,
    target_accuracy: f64,
) -> Result<(ParticleEnsemble, BurnInReport)> {
    if !(target_accuracy > 0.0) {
        return Err(Error::InvalidArgument("target accuracy must be positive".to_string()));
    }
    let rho = contraction_factor(spec, mdp.gamma)?;
    // Sup-norm diameter of the realizable box; the pair metric doubles it.
    let mut diameter = mdp.realizable_bound();
    if spec.point_shape() == PointShape::Pair {
        diameter *= 2.0;
    }
    let steps = if diameter <= target_accuracy {
        0
    } else if rho <= 0.0 {
        1
    } else {
        ((target_accuracy / diameter).ln() / rho.ln()).ceil() as usize
    };

    let mut e = init_ensemble(&Initializer::RealizableUniform, n, spec, mdp, seed)?;
    for _ in 0..steps {
        e = step_ensemble(&e, mdp)?;
    }
    let report = BurnInReport {
        steps,
        contraction_factor: rho,
        initial_diameter: diameter,
        transport_bias_bound: if steps == 0 { diameter } else { rho.powi(steps as i32) * diameter },
        sampling_error_scale: 1.0 / (n as f64).sqrt(),
    };
    Ok((e, report))
}

/// Snapshot CSV: one row per particle, one column per coordinate (pairs list
/// the first table's columns, then the second's).
pub fn snapshot_csv(e: &ParticleEnsemble) -> String {
    let mut out = String::new();
    let header: Vec<String> = match &e.particles[0] {
        ChainPoint::Single(f) => (0..f.dim()).map(|c| format!("c{c}")).collect(),
        ChainPoint::Pair(p) => (0..p.qa.dim())
            .map(|c| format!("a{c}"))
            .chain((0..p.qb.dim()).map(|c| format!("b{c}")))
            .collect(),
    };
    out.push_str(&header.join(","));
    out.push('\n');
    for p in &e.particles {
        let row: Vec<String> = p.flat_values().iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct SnapshotSidecar<'a> {
    spec: &'a AlgorithmSpec,
    seed: u64,
    step_index: u64,
    n_particles: usize,
}

/// JSON sidecar describing a snapshot (spec, seed, step index, size).
pub fn snapshot_sidecar_json(e: &ParticleEnsemble) -> String {
    serde_json::to_string_pretty(&SnapshotSidecar {
        spec: &e.spec,
        seed: e.seed,
        step_index: e.step_index,
        n_particles: e.len(),
    })
    .expect("snapshot sidecar serializes")
}
