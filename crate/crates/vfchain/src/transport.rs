//! Transport distances between particle ensembles under the sup-norm ground
//! cost (pairs use the summed sup-norm product metric).
//!
//! Equal-size uniform empirical measures admit an optimal coupling supported
//! on a permutation, so the distance reduces to a minimum-cost assignment,
//! solved exactly in `O(N^3)` with the potentials form of the Hungarian
//! method. Coupled ensembles give a cheap upper bound instead: the mean
//! pairwise distance under any coupling dominates the assignment optimum.

use nalgebra::DMatrix;

use crate::ensemble::CoupledEnsemble;
use crate::error::{Error, Result};
use crate::mdp::FunctionPoint;
use crate::operators::{ChainPoint, ExtendedPoint};

/// Largest ensemble the exact assignment solver accepts.
pub const MAX_EXACT_ENSEMBLE: usize = 4096;

/// Max absolute coordinate difference.
pub fn sup_norm(f: &FunctionPoint, g: &FunctionPoint) -> Result<f64> {
    if !f.same_shape(g) {
        return Err(Error::DimensionMismatch("sup norm needs equal shapes".to_string()));
    }
    Ok(f.values()
        .iter()
        .zip(g.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// Pair metric: `||qa - qa'|| + ||qb - qb'||` in sup norm.
pub fn product_metric_d1(a: &ExtendedPoint, b: &ExtendedPoint) -> Result<f64> {
    Ok(sup_norm(&a.qa, &b.qa)? + sup_norm(&a.qb, &b.qb)?)
}

/// Ground distance between chain points of the same kind.
pub fn point_distance(a: &ChainPoint, b: &ChainPoint) -> Result<f64> {
    match (a, b) {
        (ChainPoint::Single(f), ChainPoint::Single(g)) => sup_norm(f, g),
        (ChainPoint::Pair(f), ChainPoint::Pair(g)) => product_metric_d1(f, g),
        _ => Err(Error::KindMismatch("cannot mix single and paired points".to_string())),
    }
}

/// The `N x N` ground-cost matrix between two ensembles.
#[derive(Clone, Debug)]
pub struct CostMatrix {
    entries: DMatrix<f64>,
}

impl CostMatrix {
    pub fn build(xs: &[ChainPoint], ys: &[ChainPoint]) -> Result<Self> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(Error::UnequalEnsembles { left: xs.len(), right: ys.len() });
        }
        let n = xs.len();
        let mut entries = DMatrix::zeros(n, n);
        for (i, x) in xs.iter().enumerate() {
            for (j, y) in ys.iter().enumerate() {
                entries[(i, j)] = point_distance(x, y)?;
            }
        }
        Ok(CostMatrix { entries })
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }
}

/// Minimum-cost assignment by shortest augmenting paths with potentials.
/// Returns the total cost (re-summed from the original entries) and the
/// column assigned to each row.
fn solve_assignment(cost: &DMatrix<f64>) -> (f64, Vec<usize>) {
    let n = cost.nrows();
    // 1-based arrays; p[j] is the row matched to column j, 0 when free.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    let mut total = 0.0;
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
        total += cost[(p[j] - 1, j - 1)];
    }
    (total, assignment)
}

/// Exact transport distance between two equal-size ensembles viewed as
/// uniform empirical measures, with one optimal matching.
pub fn wasserstein_exact(xs: &[ChainPoint], ys: &[ChainPoint]) -> Result<(f64, Vec<usize>)> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::UnequalEnsembles { left: xs.len(), right: ys.len() });
    }
    if xs.len() > MAX_EXACT_ENSEMBLE {
        return Err(Error::EnsembleTooLarge { n: xs.len(), cap: MAX_EXACT_ENSEMBLE });
    }
    let cost = CostMatrix::build(xs, ys)?;
    let (total, matching) = solve_assignment(cost.entries());
    Ok((total / xs.len() as f64, matching))
}

/// Mean pairwise distance of a coupled ensemble. Upper-bounds the exact
/// transport distance between its two marginals.
pub fn coupled_distance(c: &CoupledEnsemble) -> Result<f64> {
    let n = c.left.len();
    let mut total = 0.0;
    for (l, r) in c.left.particles.iter().zip(&c.right.particles) {
        total += point_distance(l, r)?;
    }
    Ok(total / n as f64)
}

/// Total-variation distance between two ensembles read as uniform atomic
/// measures; atoms merge when within `match_tol` in the ground metric.
///
/// This is the degenerate comparison: two point masses at different values
/// are at distance 1 no matter how close the values are.
pub fn tv_distance_atoms(xs: &[ChainPoint], ys: &[ChainPoint], match_tol: f64) -> Result<f64> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::InvalidArgument("total variation needs nonempty ensembles".to_string()));
    }
    let mut reps: Vec<&ChainPoint> = Vec::new();
    let mut x_counts: Vec<usize> = Vec::new();
    let mut y_counts: Vec<usize> = Vec::new();
    let classify = |point: &'_ ChainPoint, reps: &mut Vec<&ChainPoint>| -> Result<usize> {
        for (k, rep) in reps.iter().enumerate() {
            if point_distance(point, rep)? <= match_tol {
                return Ok(k);
            }
        }
        Ok(usize::MAX)
    };
    // Two passes so the borrow of xs/ys outlives the rep list.
    for x in xs {
        let k = classify(x, &mut reps)?;
        if k == usize::MAX {
            reps.push(x);
            x_counts.push(1);
            y_counts.push(0);
        } else {
            x_counts[k] += 1;
        }
    }
    for y in ys {
        let k = classify(y, &mut reps)?;
        if k == usize::MAX {
            reps.push(y);
            x_counts.push(0);
            y_counts.push(1);
        } else {
            y_counts[k] += 1;
        }
    }
    let nx = xs.len() as f64;
    let ny = ys.len() as f64;
    let mut tv = 0.0;
    for (cx, cy) in x_counts.iter().zip(&y_counts) {
        tv += (*cx as f64 / nx - *cy as f64 / ny).abs();
    }
    Ok(0.5 * tv)
}
