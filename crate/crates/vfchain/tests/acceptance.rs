//! Acceptance suite: every distributional claim the crate makes, checked at
//! pinned tolerances against exact oracles. One test per claim; each prints
//! a single PASS/FAIL line (visible under `cargo test -- --nocapture`).

use std::time::Instant;

use vfchain::catalog;
use vfchain::ensemble::{
    burn_in_stationary, coupled_pair, coupled_step, init_ensemble, run_chain, Initializer,
};
use vfchain::mdp::{exact_policy_values, optimal_values, FunctionPoint, Policy};
use vfchain::operators::expectation::effective_affine_map;
use vfchain::operators::{contraction_factor, AlgorithmSpec, ChainPoint};
use vfchain::opi::{
    check_probabilistic_improvement, check_reachability, estimate_policy_kernel, exact_policy_kernel,
    policy_chain_stationary, simulate_opi,
};
use vfchain::rng::RngStream;
use vfchain::stationary::{
    concentration_bound, control_bias_check, covariance_opnorm, covariance_report, empirical_concentration,
    estimate_noise_integral, solve_stationary_covariance, stationary_mean_check,
};
use vfchain::transport::{coupled_distance, tv_distance_atoms, wasserstein_exact, CostMatrix};

fn conclude(name: &str, failures: Vec<String>, started: Instant) {
    let verdict = if failures.is_empty() { "PASS" } else { "FAIL" };
    println!("{verdict} {name} [{:.1}s]", started.elapsed().as_secs_f64());
    assert!(failures.is_empty(), "{name}:\n{}", failures.join("\n"));
}

/// Identical-samples coupled mean-gap ratios stay under the per-algorithm
/// contraction factor (plus 0.02) on a battery of random instances.
#[test]
fn criterion_1_coupled_contraction_factors() {
    let started = Instant::now();
    let mut failures = Vec::new();
    let pairs = 1000;
    let steps = 50;
    let margin = 0.02;
    // Truncation shortens lambda-weighted targets, which only lowers the
    // effective factor; a loose horizon keeps the battery fast.
    let horizon_tol = 1e-1;
    for instance in 0..20u64 {
        let mdp = catalog::random_mdp(5, 3, 0.9, 1000 + instance);
        let base = Policy::Deterministic((0..5).map(|s| s % 3).collect());
        for (ai, alpha) in [0.1, 0.5, 1.0].into_iter().enumerate() {
            let specs = [
                AlgorithmSpec::monte_carlo(alpha, base.clone()).with_horizon_tolerance(horizon_tol),
                AlgorithmSpec::td_lambda(alpha, 0.5, base.clone()).with_horizon_tolerance(horizon_tol),
                AlgorithmSpec::sarsa(alpha, 0.1, base.clone()),
                AlgorithmSpec::expected_sarsa(alpha, 0.1, base.clone()),
                AlgorithmSpec::q_learning(alpha),
                AlgorithmSpec::double_q_learning(alpha, 0.5),
            ];
            for (si, spec) in specs.into_iter().enumerate() {
                let rho = contraction_factor(&spec, mdp.gamma).unwrap();
                let seed = RngStream::derive_seed(5150 + instance, (ai * 8 + si) as u64);
                let mut coupled = coupled_pair(
                    &spec,
                    &mdp,
                    &Initializer::RealizableUniform,
                    &Initializer::UniformBox { lo: 0.0, hi: 10.0 },
                    pairs,
                    seed,
                )
                .unwrap();
                let mut prev = coupled_distance(&coupled).unwrap();
                let mut ratio_sum = 0.0;
                let mut ratio_count = 0usize;
                for _ in 0..steps {
                    coupled = coupled_step(&coupled, &mdp).unwrap();
                    let next = coupled_distance(&coupled).unwrap();
                    if prev > 1e-300 {
                        ratio_sum += next / prev;
                        ratio_count += 1;
                    }
                    prev = next;
                }
                let mean_ratio = if ratio_count == 0 { 0.0 } else { ratio_sum / ratio_count as f64 };
                if mean_ratio > rho + margin {
                    failures.push(format!(
                        "instance {instance} {} alpha {alpha}: mean ratio {mean_ratio:.4} > {:.4}",
                        spec.algorithm,
                        rho + margin
                    ));
                }
            }
        }
    }
    conclude("criterion 1: coupled contraction factors", failures, started);
}

/// The chain's transport distance to a long-run reference decays at the
/// kernel's geometric rate.
#[test]
fn criterion_2_geometric_convergence() {
    let started = Instant::now();
    let mut failures = Vec::new();
    let mdp = catalog::random_mdp(5, 3, 0.9, 2);
    let spec = AlgorithmSpec::td0(0.1, Policy::uniform(5, 3));
    let rho = contraction_factor(&spec, mdp.gamma).unwrap();
    let n_particles = 512;

    let reference_start = init_ensemble(&Initializer::RealizableUniform, n_particles, &spec, &mdp, 900).unwrap();
    let reference = run_chain(&reference_start, &mdp, 400, 400).unwrap().pop().unwrap();

    let zero = ChainPoint::Single(FunctionPoint::state_value(vec![0.0; 5]));
    let moving = init_ensemble(&Initializer::Point(zero), n_particles, &spec, &mdp, 901).unwrap();
    let snapshots = run_chain(&moving, &mdp, 40, 10).unwrap();

    let (d0, _) = wasserstein_exact(&snapshots[0].particles, &reference.particles).unwrap();
    let mut previous = f64::INFINITY;
    for snap in &snapshots[1..] {
        let n = snap.step_index as i32;
        if ![10, 20, 40].contains(&n) {
            continue;
        }
        let (w, _) = wasserstein_exact(&snap.particles, &reference.particles).unwrap();
        let bound = rho.powi(n) * d0 + 0.05 * d0;
        if w > bound {
            failures.push(format!("step {n}: distance {w:.4} > bound {bound:.4}"));
        }
        if w >= previous {
            failures.push(format!("step {n}: distance {w:.4} did not decrease (previous {previous:.4})"));
        }
        previous = w;
    }
    conclude("criterion 2: geometric convergence in transport distance", failures, started);
}

/// Burned-in evaluation ensembles center on the exact value function.
#[test]
fn criterion_3_stationary_mean_identity() {
    let started = Instant::now();
    let mut failures = Vec::new();
    let mut instances = vec![catalog::m2()];
    instances.extend((0..5).map(|i| catalog::random_mdp(3, 2, 0.5, 300 + i)));
    for (mi, mdp) in instances.iter().enumerate() {
        let policy = Policy::uniform(mdp.n_states, mdp.n_actions);
        let (v_exact, _) = exact_policy_values(mdp, &policy).unwrap();
        let specs = [
            AlgorithmSpec::td0(0.1, policy.clone()),
            AlgorithmSpec::monte_carlo(0.1, policy.clone()),
            AlgorithmSpec::td_lambda(0.1, 0.5, policy.clone()),
        ];
        for spec in specs {
            let algorithm = spec.algorithm;
            let (e, _) = burn_in_stationary(&spec, mdp, 10_000, 42 + mi as u64, 1e-6).unwrap();
            let report = stationary_mean_check(&e, &v_exact, 1e-5).unwrap();
            if !report.pass {
                failures.push(format!(
                    "instance {mi} {algorithm}: max deviation {:.2e} exceeds 4 SE + 1e-5",
                    report.max_deviation
                ));
            }
        }
    }
    conclude("criterion 3: stationary mean equals the exact value function", failures, started);
}

/// The Kronecker covariance solve matches closed forms exactly and the
/// empirical covariance within ten percent.
#[test]
fn criterion_4_stationary_covariance() {
    let started = Instant::now();
    let mut failures = Vec::new();

    // (a) Scalar closed forms on the two-point-reward chain.
    let m2 = catalog::m2();
    let policy = Policy::Deterministic(vec![0]);
    for (spec, expected) in [
        (AlgorithmSpec::td0(0.1, policy.clone()), 0.102564),
        (AlgorithmSpec::monte_carlo(0.1, policy.clone()), 0.070175),
    ] {
        let algorithm = spec.algorithm;
        let (a, _) = effective_affine_map(&spec, &m2).unwrap();
        let probe = init_ensemble(&Initializer::RealizableUniform, 32, &spec, &m2, 7).unwrap();
        let cbar = estimate_noise_integral(&probe, &m2).unwrap();
        let sigma = solve_stationary_covariance(&a, 0.1, &cbar).unwrap();
        if (sigma[(0, 0)] - expected).abs() > 5e-7 {
            failures.push(format!("{algorithm}: solved {} vs {expected} (6 digits)", sigma[(0, 0)]));
        }
    }

    // (b) Solved-versus-empirical on random instances at N = 1e5. The
    // covariance equation is checked under the declared truncation, so the
    // solved and empirical sides share any horizon; a loose one keeps the
    // trajectory sampling cheap.
    for i in 0..5u64 {
        let mdp = catalog::random_mdp(3, 2, 0.4, 400 + i);
        let base = Policy::Deterministic((0..3).map(|s| s % 2).collect());
        for spec in [
            AlgorithmSpec::td0(0.1, base.clone()),
            AlgorithmSpec::monte_carlo(0.1, base.clone()).with_horizon_tolerance(1e-3),
            AlgorithmSpec::td_lambda(0.1, 0.5, base.clone()).with_horizon_tolerance(1e-3),
        ] {
            let algorithm = spec.algorithm;
            let (e, _) = burn_in_stationary(&spec, &mdp, 100_000, 4400 + i, 1e-4).unwrap();
            let report = covariance_report(&e, &mdp).unwrap();
            if report.relative_frobenius_error > 0.10 {
                failures.push(format!(
                    "instance {i} {algorithm}: relative Frobenius error {:.3}",
                    report.relative_frobenius_error
                ));
            }
        }
    }
    conclude("criterion 4: stationary covariance (closed form + empirical)", failures, started);
}

/// Chebyshev concentration holds cell by cell and the covariance norm sweep
/// is monotone in the step size.
#[test]
fn criterion_5_concentration() {
    let started = Instant::now();
    let mut failures = Vec::new();
    let m2 = catalog::m2();
    let policy = Policy::Deterministic(vec![0]);
    let reference = FunctionPoint::state_value(vec![2.0]);
    let n = 10_000;
    let mut last_opnorm = 0.0;
    for (ai, alpha) in [0.01, 0.05, 0.1, 0.2].into_iter().enumerate() {
        let spec = AlgorithmSpec::td0(alpha, policy.clone());
        let (e, _) = burn_in_stationary(&spec, &m2, n, 500 + ai as u64, 1e-6).unwrap();
        for eps in [0.25, 0.5, 1.0] {
            let freq = empirical_concentration(&e, &reference, eps).unwrap();
            let bound = concentration_bound(alpha, m2.gamma, m2.rmax, 1, eps);
            let se = (freq * (1.0 - freq) / n as f64).sqrt();
            if freq > bound + 4.0 * se {
                failures.push(format!("alpha {alpha} eps {eps}: frequency {freq:.4} > bound {bound:.4}"));
            }
        }
        let (a, _) = effective_affine_map(&spec, &m2).unwrap();
        let cbar = estimate_noise_integral(&e, &m2).unwrap();
        let sigma = solve_stationary_covariance(&a, alpha, &cbar).unwrap();
        let opnorm = covariance_opnorm(&sigma);
        if opnorm < last_opnorm {
            failures.push(format!("opnorm sweep not monotone at alpha {alpha}: {opnorm} < {last_opnorm}"));
        }
        last_opnorm = opnorm;
        if alpha == 0.01 {
            // Scalar closed form 0.01^2 / (1 - 0.995^2) = 0.0100250627...
            let closed = 0.01f64.powi(2) / (1.0 - 0.995f64.powi(2));
            if (opnorm - closed).abs() > 1e-9 {
                failures.push(format!("opnorm at alpha 0.01 is {opnorm}, closed form {closed}"));
            }
            if opnorm > 0.011 {
                failures.push(format!("opnorm at alpha 0.01 is {opnorm} > 0.011"));
            }
        }
    }
    conclude("criterion 5: concentration bound and monotone covariance sweep", failures, started);
}

/// Control chains overestimate: the stationary mean dominates the optimal
/// table, strictly where there is noise, exactly where there is none.
#[test]
fn criterion_6_control_bias() {
    let started = Instant::now();
    let mut failures = Vec::new();

    let m6 = catalog::m6();
    let (_, qstar) = optimal_values(&m6).unwrap();
    let spec = AlgorithmSpec::q_learning(0.2);
    let (e, _) = burn_in_stationary(&spec, &m6, 100_000, 600, 1e-6).unwrap();
    let report = control_bias_check(&e, &qstar).unwrap();
    if !report.dominates {
        failures.push(format!("noisy instance: mean fails to dominate q*: excess {:?}", report.excess));
    }
    if report.strict_excess.is_empty() {
        failures.push(format!("noisy instance: no strict overestimation detected: excess {:?}", report.excess));
    }

    let m4 = catalog::m4();
    let (_, qstar4) = optimal_values(&m4).unwrap();
    let (e4, _) = burn_in_stationary(&spec, &m4, 256, 601, 1e-10).unwrap();
    let report4 = control_bias_check(&e4, &qstar4).unwrap();
    for (c, x) in report4.excess.iter().enumerate() {
        if x.abs() > 1e-9 {
            failures.push(format!("deterministic instance coordinate {c}: |excess| {x:.2e} > 1e-9"));
        }
    }
    conclude("criterion 6: control bias dominance", failures, started);
}

/// The full-step optimistic policy chain: exact and sampled kernels agree
/// with the analytic values, the structural checks hold, and the simulated
/// visit frequencies match the stationary law.
#[test]
fn criterion_7_optimistic_policy_chain() {
    let started = Instant::now();
    let mut failures = Vec::new();
    let horizon = 8;

    let m4 = catalog::m4();
    let m5 = catalog::m5();

    let exact4 = exact_policy_kernel(&m4, horizon).unwrap();
    for i in 0..4 {
        if (exact4.k[(i, 0)] - 1.0).abs() > 1e-12 {
            failures.push(format!("m4 exact kernel row {i}: {} != 1", exact4.k[(i, 0)]));
        }
    }
    let exact5 = exact_policy_kernel(&m5, horizon).unwrap();
    for i in 0..4 {
        for (j, expect) in [(0usize, 0.5), (2usize, 0.5)] {
            if (exact5.k[(i, j)] - expect).abs() > 1e-12 {
                failures.push(format!("m5 exact kernel ({i},{j}): {} != {expect}", exact5.k[(i, j)]));
            }
        }
    }

    for (name, mdp, exact) in [("m4", &m4, &exact4), ("m5", &m5, &exact5)] {
        let sampled = estimate_policy_kernel(mdp, 10_000, horizon, 700).unwrap();
        let se = sampled.standard_error.as_ref().unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let gap = (sampled.k[(i, j)] - exact.k[(i, j)]).abs();
                if gap > 4.0 * se[(i, j)] + 1e-12 {
                    failures.push(format!("{name} sampled kernel ({i},{j}): gap {gap:.4}"));
                }
            }
        }
        if !check_probabilistic_improvement(exact, mdp).unwrap().iter().all(|c| c.pass) {
            failures.push(format!("{name}: probabilistic improvement failed"));
        }
        let report = policy_chain_stationary(exact, mdp).unwrap();
        if !report.aperiodic_star {
            failures.push(format!("{name}: optimal policy not aperiodic"));
        }
        if !check_reachability(exact, mdp).unwrap().iter().all(|c| c.pass) {
            failures.push(format!("{name}: reachability failed"));
        }
    }

    let report5 = policy_chain_stationary(&exact5, &m5).unwrap();
    if (report5.phi1[0] - 0.5).abs() > 1e-9 || (report5.phi1[2] - 0.5).abs() > 1e-9 {
        failures.push(format!("m5 stationary law {:?} != (0.5, _, 0.5, _)", report5.phi1));
    }
    if report5.identity_residual > 1e-9 {
        failures.push(format!("m5 balance residual {}", report5.identity_residual));
    }

    let chains = 400;
    let steps = 60;
    let sim = simulate_opi(&m5, 1.0, steps, chains, horizon, 701).unwrap();
    let samples = (chains * (steps - steps / 2 + 1)) as f64;
    let se = 0.5 / samples.sqrt();
    for p in 0..4 {
        let gap = (sim.long_run_frequencies[p] - report5.phi1[p]).abs();
        if gap > 4.0 * se {
            failures.push(format!("m5 visit frequency of policy {p}: gap {gap:.4} > {:.4}", 4.0 * se));
        }
    }
    conclude("criterion 7: optimistic policy chain at full step size", failures, started);
}

/// The deterministic bandit chain converges in transport distance while
/// staying at full total-variation distance.
#[test]
fn criterion_8_transport_versus_total_variation() {
    let started = Instant::now();
    let mut failures = Vec::new();
    let m3 = catalog::m3();
    let spec = AlgorithmSpec::td0(0.5, Policy::Deterministic(vec![0]));
    let target = vec![ChainPoint::Single(FunctionPoint::state_value(vec![0.0]))];

    let start = ChainPoint::Single(FunctionPoint::state_value(vec![8.0]));
    let e = init_ensemble(&Initializer::Point(start), 1, &spec, &m3, 800).unwrap();
    let snapshots = run_chain(&e, &m3, 40, 1).unwrap();
    let mut expected = 8.0;
    for (n, snap) in snapshots.iter().enumerate() {
        let (w, _) = wasserstein_exact(&snap.particles, &target).unwrap();
        if (w - expected).abs() > 1e-12 {
            failures.push(format!("step {n}: transport {w:.15e} vs 0.75^n * 8 = {expected:.15e}"));
        }
        let tv = tv_distance_atoms(&snap.particles, &target, 1e-9).unwrap();
        if tv != 1.0 {
            failures.push(format!("step {n}: total variation {tv} != 1"));
        }
        expected *= 0.75;
    }

    let zero_start = ChainPoint::Single(FunctionPoint::state_value(vec![0.0]));
    let e0 = init_ensemble(&Initializer::Point(zero_start), 1, &spec, &m3, 801).unwrap();
    for snap in run_chain(&e0, &m3, 5, 1).unwrap() {
        let (w, _) = wasserstein_exact(&snap.particles, &target).unwrap();
        let tv = tv_distance_atoms(&snap.particles, &target, 1e-9).unwrap();
        if w != 0.0 || tv != 0.0 {
            failures.push(format!("zero start: transport {w}, total variation {tv}"));
        }
    }
    conclude("criterion 8: transport converges while total variation stays 1", failures, started);
}

/// The assignment-based distance satisfies the metric axioms and agrees
/// with brute-force enumeration.
#[test]
fn criterion_9_transport_solver_properties() {
    let started = Instant::now();
    let mut failures = Vec::new();
    let mut rng = RngStream::from_seed(900);
    let draw_ensemble = |rng: &mut RngStream, n: usize, d: usize| -> Vec<ChainPoint> {
        (0..n)
            .map(|_| ChainPoint::Single(FunctionPoint::state_value((0..d).map(|_| rng.uniform(-5.0, 5.0)).collect())))
            .collect()
    };

    for trial in 0..100 {
        let xs = draw_ensemble(&mut rng, 64, 4);
        let ys = draw_ensemble(&mut rng, 64, 4);
        let zs = draw_ensemble(&mut rng, 64, 4);
        let (xy, _) = wasserstein_exact(&xs, &ys).unwrap();
        let (yx, _) = wasserstein_exact(&ys, &xs).unwrap();
        let (xz, _) = wasserstein_exact(&xs, &zs).unwrap();
        let (yz, _) = wasserstein_exact(&ys, &zs).unwrap();
        let (xx, _) = wasserstein_exact(&xs, &xs).unwrap();
        if xy < 0.0 || xx != 0.0 {
            failures.push(format!("trial {trial}: nonnegativity/identity failed ({xy}, {xx})"));
        }
        if (xy - yx).abs() > 1e-12 {
            failures.push(format!("trial {trial}: symmetry gap {}", (xy - yx).abs()));
        }
        if xz > xy + yz + 1e-9 {
            failures.push(format!("trial {trial}: triangle violated: {xz} > {xy} + {yz}"));
        }
    }

    // Brute-force agreement on small ensembles.
    fn brute_force(xs: &[ChainPoint], ys: &[ChainPoint]) -> f64 {
        fn go(cost: &nalgebra::DMatrix<f64>, cols: &mut Vec<usize>, row: usize, acc: f64, best: &mut f64) {
            if row == cost.nrows() {
                *best = best.min(acc);
                return;
            }
            for k in 0..cols.len() {
                let c = cols.swap_remove(k);
                go(cost, cols, row + 1, acc + cost[(row, c)], best);
                cols.push(c);
                let last = cols.len() - 1;
                cols.swap(k, last);
            }
        }
        let cost = CostMatrix::build(xs, ys).unwrap();
        let mut best = f64::INFINITY;
        let mut cols: Vec<usize> = (0..xs.len()).collect();
        go(cost.entries(), &mut cols, 0, 0.0, &mut best);
        best / xs.len() as f64
    }
    for trial in 0..40 {
        let n = 2 + trial % 6;
        let xs = draw_ensemble(&mut rng, n, 3);
        let ys = draw_ensemble(&mut rng, n, 3);
        let (solved, _) = wasserstein_exact(&xs, &ys).unwrap();
        let brute = brute_force(&xs, &ys);
        if (solved - brute).abs() > 1e-12 {
            failures.push(format!("trial {trial}: solver {solved} vs brute force {brute}"));
        }
    }
    conclude("criterion 9: transport metric axioms and solver exactness", failures, started);
}
