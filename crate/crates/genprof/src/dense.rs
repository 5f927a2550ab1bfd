//! Dense brute-force oracle for the path-structured solver.
//!
//! Everything here works on the explicit order-n_s tensor and scales
//! exponentially in the snapshot count; it exists to check the structured
//! solver at desk sizes, not to be fast. The dense Sinkhorn iteration
//! deliberately computes every marginal by exhaustive summation over the full
//! plan so that it shares no projection code with the structured route.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cost::{flat_index, for_each_index, DenseCostTensor, PathCost};
use crate::error::{Error, Result};
use crate::marginal::EmpiricalMarginal;
use crate::solver::{hilbert_metric, seeded_positive_uniform, SolverConfig, SolverSolution};
use crate::state::{AugmentedState, ExecutionState, ResourceContext};

/// Explicit coupling over all snapshot indices, row-major like
/// [`DenseCostTensor`].
#[derive(Debug, Clone)]
pub struct DensePlan {
    shape: Vec<usize>,
    entries: Vec<f64>,
}

impl DensePlan {
    pub fn new(shape: Vec<usize>, entries: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.len() < 2 || expected == 0 || entries.len() != expected {
            return Err(Error::InvalidData(format!(
                "dense plan shape {shape:?} does not match {} entries",
                entries.len()
            )));
        }
        Ok(DensePlan { shape, entries })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.entries[flat_index(&self.shape, idx)]
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.iter().sum()
    }

    /// Marginal on axis σ by exhaustive summation over every entry.
    pub fn unimarginal(&self, sigma: usize) -> Result<Vec<f64>> {
        if sigma >= self.shape.len() {
            return Err(Error::SigmaOutOfRange {
                sigma,
                n_snapshots: self.shape.len(),
            });
        }
        let mut out = vec![0.0; self.shape[sigma]];
        for_each_index(&self.shape, |idx, flat| {
            out[idx[sigma]] += self.entries[flat];
        });
        Ok(out)
    }

    /// Joint marginal on axes σ1 < σ2 by exhaustive summation.
    pub fn bimarginal(&self, sigma1: usize, sigma2: usize) -> Result<Array2<f64>> {
        if sigma2 >= self.shape.len() {
            return Err(Error::SigmaOutOfRange {
                sigma: sigma2,
                n_snapshots: self.shape.len(),
            });
        }
        if sigma1 >= sigma2 {
            return Err(Error::InvalidConfig(format!(
                "bimarginal needs sigma1 < sigma2, got {sigma1} and {sigma2}"
            )));
        }
        let mut out = Array2::zeros((self.shape[sigma1], self.shape[sigma2]));
        for_each_index(&self.shape, |idx, flat| {
            out[(idx[sigma1], idx[sigma2])] += self.entries[flat];
        });
        Ok(out)
    }

    /// Largest absolute entrywise difference to another plan of equal shape.
    pub fn max_abs_difference(&self, other: &DensePlan) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::LengthMismatch {
                left: self.entries.len(),
                right: other.entries.len(),
            });
        }
        Ok(self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

/// Dense solver result: the explicit plan plus convergence metadata.
#[derive(Debug, Clone)]
pub struct DenseSolution {
    pub plan: DensePlan,
    pub iterations: usize,
    pub final_error: f64,
    pub converged: bool,
}

/// Sinkhorn iteration on the explicit tensor. Mirrors the structured solver's
/// update order, seeding, residual definition, and stopping rule, but every
/// projection is an exhaustive sum over the dense plan, so the two routes are
/// independent implementations of the same fixed-point problem.
pub fn dense_sinkhorn_solve(
    cost: &DenseCostTensor,
    marginals: &[EmpiricalMarginal],
    config: &SolverConfig,
) -> Result<DenseSolution> {
    config.validate()?;
    let shape = cost.shape().to_vec();
    if marginals.len() != shape.len() {
        return Err(Error::LengthMismatch {
            left: marginals.len(),
            right: shape.len(),
        });
    }
    for (sigma, m) in marginals.iter().enumerate() {
        if m.len() != shape[sigma] {
            return Err(Error::Dimension {
                what: "marginal support",
                expected: shape[sigma],
                got: m.len(),
            });
        }
    }
    let kernel: Vec<f64> = cost
        .entries()
        .iter()
        .map(|c| (-c / config.epsilon).exp())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut potentials: Vec<Vec<f64>> = shape
        .iter()
        .map(|&n| seeded_positive_uniform(&mut rng, n).to_vec())
        .collect();

    let plan_entries = |potentials: &[Vec<f64>]| -> Vec<f64> {
        let mut entries = vec![0.0; kernel.len()];
        for_each_index(&shape, |idx, flat| {
            let mut v = kernel[flat];
            for (sigma, u) in potentials.iter().enumerate() {
                v *= u[idx[sigma]];
            }
            entries[flat] = v;
        });
        entries
    };

    let mut converged = false;
    let mut iterations = 0;
    let mut final_error = f64::INFINITY;
    for _ in 0..config.max_iterations {
        iterations += 1;
        let mut sweep_err = 0.0f64;
        for sigma in 0..shape.len() {
            // Exhaustive σ-marginal of K ⊙ U with the current potentials.
            let mut proj = vec![0.0; shape[sigma]];
            for_each_index(&shape, |idx, flat| {
                let mut v = kernel[flat];
                for (tau, u) in potentials.iter().enumerate() {
                    v *= u[idx[tau]];
                }
                proj[idx[sigma]] += v;
            });
            if proj.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
                return Err(Error::ProjectionUnderflow { sigma });
            }
            let updated: Vec<f64> = potentials[sigma]
                .iter()
                .zip(marginals[sigma].weights())
                .zip(&proj)
                .map(|((u, mu), p)| u * mu / p)
                .collect();
            let err = hilbert_metric(&potentials[sigma], &updated)?;
            sweep_err = sweep_err.max(err);
            potentials[sigma] = updated;
        }
        final_error = sweep_err;
        if sweep_err <= config.tol {
            converged = true;
            break;
        }
    }

    let entries = plan_entries(&potentials);
    Ok(DenseSolution {
        plan: DensePlan::new(shape, entries)?,
        iterations,
        final_error,
        converged,
    })
}

/// Materializes the plan implied by structured-solver output:
/// entry = Π_j K^j[i_j, i_{j+1}] · Π_σ u_σ[i_σ]. Refuses above `cap` entries.
pub fn assemble_dense_plan(solution: &SolverSolution, cap: usize) -> Result<DensePlan> {
    let n_s = solution.n_snapshots();
    let shape: Vec<usize> = (0..n_s)
        .map(|sigma| {
            if sigma < n_s - 1 {
                solution.kernels[sigma].nrows()
            } else {
                solution.kernels[n_s - 2].ncols()
            }
        })
        .collect();
    let total: u128 = shape.iter().map(|&n| n as u128).product();
    if total > cap as u128 {
        return Err(Error::TensorTooLarge { entries: total, cap });
    }
    let mut entries = vec![0.0; total as usize];
    for_each_index(&shape, |idx, flat| {
        let mut v = 1.0;
        for (j, k) in solution.kernels.iter().enumerate() {
            v *= k[(idx[j], idx[j + 1])];
        }
        for (sigma, u) in solution.potentials.iter().enumerate() {
            v *= u[idx[sigma]];
        }
        entries[flat] = v;
    });
    DensePlan::new(shape, entries)
}

/// KL divergence of `plan` from the Gibbs plan exp(−C/ε)/Z, with 0·log 0 = 0.
/// Errors when the plan carries mass where the Gibbs kernel underflowed to
/// zero.
pub fn kl_to_gibbs(plan: &DensePlan, cost: &DenseCostTensor, epsilon: f64) -> Result<f64> {
    if plan.shape() != cost.shape() {
        return Err(Error::LengthMismatch {
            left: plan.entries().len(),
            right: cost.len(),
        });
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "epsilon must be positive and finite, got {epsilon}"
        )));
    }
    let gibbs: Vec<f64> = cost.entries().iter().map(|c| (-c / epsilon).exp()).collect();
    let z: f64 = gibbs.iter().sum();
    let mut kl = 0.0;
    for (m, g) in plan.entries().iter().zip(&gibbs) {
        if *m < 0.0 {
            return Err(Error::InvalidData("plan has a negative entry".into()));
        }
        if *m == 0.0 {
            continue;
        }
        if *g == 0.0 {
            return Err(Error::SupportMismatch);
        }
        kl += m * (m / (g / z)).ln();
    }
    Ok(kl)
}

/// Random perturbation of a plan that leaves every axis marginal untouched:
/// adds +δ, −δ, −δ, +δ on a rectangle spanned by two indices on each of two
/// axes (all other indices held fixed), with δ small enough to keep entries
/// strictly positive. Used to probe that a solved plan is the KL minimizer
/// over couplings with its marginals.
pub fn perturb_plan_feasibly(plan: &DensePlan, rng: &mut ChaCha8Rng) -> Result<DensePlan> {
    let shape = plan.shape().to_vec();
    let n_axes = shape.len();
    if shape.iter().any(|&n| n < 2) {
        return Err(Error::InvalidData(
            "feasible perturbation needs at least 2 indices per axis".into(),
        ));
    }
    for _attempt in 0..64 {
        let axis_a = rng.random_range(0..n_axes);
        let mut axis_b = rng.random_range(0..n_axes - 1);
        if axis_b >= axis_a {
            axis_b += 1;
        }
        let (axis_a, axis_b) = (axis_a.min(axis_b), axis_a.max(axis_b));
        let ia = rng.random_range(0..shape[axis_a]);
        let mut ia2 = rng.random_range(0..shape[axis_a] - 1);
        if ia2 >= ia {
            ia2 += 1;
        }
        let ka = rng.random_range(0..shape[axis_b]);
        let mut ka2 = rng.random_range(0..shape[axis_b] - 1);
        if ka2 >= ka {
            ka2 += 1;
        }
        let mut base: Vec<usize> = shape.iter().map(|&n| rng.random_range(0..n)).collect();

        let mut corner = |i: usize, k: usize| -> usize {
            base[axis_a] = i;
            base[axis_b] = k;
            flat_index(&shape, &base)
        };
        let pp = corner(ia, ka);
        let pm = corner(ia, ka2);
        let mp = corner(ia2, ka);
        let mm = corner(ia2, ka2);

        let headroom = plan.entries()[pm].min(plan.entries()[mp]);
        if !(headroom > 0.0) {
            continue;
        }
        let delta = rng.random::<f64>() * 0.5 * headroom;
        if delta == 0.0 {
            continue;
        }
        let mut entries = plan.entries().to_vec();
        entries[pp] += delta;
        entries[mm] += delta;
        entries[pm] -= delta;
        entries[mp] -= delta;
        return DensePlan::new(shape, entries);
    }
    Err(Error::InvalidData(
        "could not find a positive rectangle to perturb".into(),
    ))
}

/// Random desk-size solver instance: uniform stage costs in [0, 1) and
/// strictly positive non-uniform marginal weights, seeded for
/// reproducibility. Support points are placeholders — only weights and costs
/// matter to the solver — making this suitable for oracle comparisons.
pub fn random_instance(
    n_snapshots: usize,
    support: usize,
    seed: u64,
) -> (PathCost, Vec<EmpiricalMarginal>) {
    assert!(n_snapshots >= 2 && support >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stages: Vec<Array2<f64>> = (0..n_snapshots - 1)
        .map(|_| Array2::from_shape_fn((support, support), |_| rng.random::<f64>()))
        .collect();
    let path = PathCost::new(stages).expect("random stages are valid");
    let marginals: Vec<EmpiricalMarginal> = (0..n_snapshots)
        .map(|_| {
            let raw: Vec<f64> = (0..support).map(|_| 0.2 + 0.8 * rng.random::<f64>()).collect();
            let sum: f64 = raw.iter().sum();
            let weights: Vec<f64> = raw.iter().map(|w| w / sum).collect();
            let points = vec![
                AugmentedState::new(ExecutionState(vec![0.0]), ResourceContext(vec![0.0]));
                support
            ];
            EmpiricalMarginal::new(points, weights).expect("normalized weights are valid")
        })
        .collect();
    (path, marginals)
}
