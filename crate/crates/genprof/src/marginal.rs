//! Empirical marginals of the augmented state and their scaling.
//!
//! Each profiled run contributes one augmented point η = (ξ(t_σ), β) to the
//! marginal at snapshot time t_σ, so the marginal is a uniformly weighted
//! cloud over every (run, context) pair. Execution states are read off under
//! zero-order hold with zero padding after a run's final sample.
//!
//! Before cost construction each snapshot's point cloud is scaled
//! componentwise into [0, 0.1]: squared distances stay small, which keeps the
//! Gibbs kernel exp(−C/ε) away from underflow. The affine maps are recorded
//! per snapshot and component so generated states can be mapped back to raw
//! units; components that are constant across a snapshot are flagged
//! degenerate and map to 0 (their inverse returns the constant).

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::state::{AugmentedState, SnapshotGrid};

/// Weighted point cloud of augmented states at one snapshot time.
#[derive(Debug, Clone)]
pub struct EmpiricalMarginal {
    points: Vec<AugmentedState>,
    weights: Vec<f64>,
}

impl EmpiricalMarginal {
    /// Validates that weights are strictly positive and sum to 1 within 1e-9
    /// (the sum is then normalized away exactly).
    pub fn new(points: Vec<AugmentedState>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidData("empirical marginal has no points".into()));
        }
        if points.len() != weights.len() {
            return Err(Error::LengthMismatch {
                left: points.len(),
                right: weights.len(),
            });
        }
        let dim = points[0].dim();
        let m = points[0].xi.dim();
        for p in &points {
            if p.dim() != dim || p.xi.dim() != m {
                return Err(Error::Dimension {
                    what: "augmented point",
                    expected: dim,
                    got: p.dim(),
                });
            }
        }
        let sum: f64 = weights.iter().sum();
        if !sum.is_finite() || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::WeightSum { sum });
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidData(
                "marginal weights must be strictly positive".into(),
            ));
        }
        let weights = weights.iter().map(|w| w / sum).collect();
        Ok(EmpiricalMarginal { points, weights })
    }

    /// Uniform weights 1/N over the given points.
    pub fn uniform(points: Vec<AugmentedState>) -> Result<Self> {
        let n = points.len();
        EmpiricalMarginal::new(points, vec![1.0 / n as f64; n.max(1)])
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[AugmentedState] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Dimension m + b of the points.
    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    /// Execution state dimension m of the points.
    pub fn state_dim(&self) -> usize {
        self.points[0].xi.dim()
    }
}

/// Augmented states for every (run, snapshot) cell, indexed `[snapshot][run]`.
/// Run order follows dataset record order, identically at every snapshot.
pub fn build_augmented_samples(
    dataset: &Dataset,
    grid: &SnapshotGrid,
) -> Result<Vec<Vec<AugmentedState>>> {
    if dataset.records().is_empty() {
        return Err(Error::InvalidData("dataset has no profiled runs".into()));
    }
    let data_end = dataset
        .records()
        .iter()
        .map(|r| r.duration())
        .fold(f64::NEG_INFINITY, f64::max);
    if grid.end() > data_end {
        return Err(Error::GridBeyondData {
            grid_end: grid.end(),
            data_end,
        });
    }
    let mut per_snapshot = Vec::with_capacity(grid.len());
    for &t in grid.times() {
        let mut points = Vec::with_capacity(dataset.records().len());
        for rec in dataset.records() {
            points.push(AugmentedState::new(rec.state_at(t), rec.context().clone()));
        }
        per_snapshot.push(points);
    }
    Ok(per_snapshot)
}

/// Uniformly weighted empirical marginals, one per snapshot.
pub fn build_empirical_marginals(samples: &[Vec<AugmentedState>]) -> Result<Vec<EmpiricalMarginal>> {
    samples
        .iter()
        .map(|pts| EmpiricalMarginal::uniform(pts.clone()))
        .collect()
}

/// Target upper end of the scaled coordinate range.
pub const SCALE_RANGE: f64 = 0.1;

/// Affine scaling of one snapshot's cloud: component k maps raw value v to
/// `(v − offset[k]) · factor[k]`. A zero factor flags a degenerate (constant)
/// component whose inverse returns the constant `offset[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotScaling {
    pub offsets: Vec<f64>,
    pub factors: Vec<f64>,
}

impl SnapshotScaling {
    pub fn forward(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(self.offsets.iter().zip(&self.factors))
            .map(|(x, (o, f))| (x - o) * f)
            .collect()
    }

    pub fn inverse(&self, scaled: &[f64]) -> Vec<f64> {
        scaled
            .iter()
            .zip(self.offsets.iter().zip(&self.factors))
            .map(|(s, (o, f))| if *f == 0.0 { *o } else { s / f + o })
            .collect()
    }

    pub fn is_degenerate(&self, component: usize) -> bool {
        self.factors[component] == 0.0
    }
}

/// Per-snapshot componentwise affine maps into [0, 0.1], with inverses.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRecord {
    pub snapshots: Vec<SnapshotScaling>,
}

impl ScalingRecord {
    pub fn forward_point(&self, sigma: usize, point: &AugmentedState) -> Result<AugmentedState> {
        let scaling = self.snapshots.get(sigma).ok_or(Error::SigmaOutOfRange {
            sigma,
            n_snapshots: self.snapshots.len(),
        })?;
        AugmentedState::from_vec(&scaling.forward(&point.to_vec()), point.xi.dim())
    }

    pub fn inverse_point(&self, sigma: usize, point: &AugmentedState) -> Result<AugmentedState> {
        let scaling = self.snapshots.get(sigma).ok_or(Error::SigmaOutOfRange {
            sigma,
            n_snapshots: self.snapshots.len(),
        })?;
        AugmentedState::from_vec(&scaling.inverse(&point.to_vec()), point.xi.dim())
    }
}

/// Scales each snapshot's cloud componentwise into [0, 0.1] and records the
/// affine maps. Weights are untouched.
pub fn scale_marginals(
    marginals: &[EmpiricalMarginal],
) -> Result<(Vec<EmpiricalMarginal>, ScalingRecord)> {
    if marginals.is_empty() {
        return Err(Error::InvalidData("no marginals to scale".into()));
    }
    let dim = marginals[0].dim();
    let mut scaled = Vec::with_capacity(marginals.len());
    let mut snapshots = Vec::with_capacity(marginals.len());
    for marginal in marginals {
        if marginal.dim() != dim {
            return Err(Error::Dimension {
                what: "marginal point",
                expected: dim,
                got: marginal.dim(),
            });
        }
        let mut offsets = vec![f64::INFINITY; dim];
        let mut maxima = vec![f64::NEG_INFINITY; dim];
        for p in marginal.points() {
            for k in 0..dim {
                let v = p.component(k);
                offsets[k] = offsets[k].min(v);
                maxima[k] = maxima[k].max(v);
            }
        }
        let factors: Vec<f64> = offsets
            .iter()
            .zip(&maxima)
            .map(|(lo, hi)| {
                let range = hi - lo;
                if range > 0.0 {
                    SCALE_RANGE / range
                } else {
                    0.0
                }
            })
            .collect();
        let scaling = SnapshotScaling { offsets, factors };
        let points = marginal
            .points()
            .iter()
            .map(|p| AugmentedState::from_vec(&scaling.forward(&p.to_vec()), p.xi.dim()))
            .collect::<Result<Vec<_>>>()?;
        scaled.push(EmpiricalMarginal::new(points, marginal.weights().to_vec())?);
        snapshots.push(scaling);
    }
    Ok((scaled, ScalingRecord { snapshots }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Dataset, DatasetManifest};
    use crate::state::{ExecutionState, ProfileRecord, ResourceContext};
    use proptest::prelude::*;

    fn grid_dataset(n_contexts: usize, n_runs: usize) -> Dataset {
        let manifest = DatasetManifest {
            contexts_file: "contexts.csv".into(),
            profiles_file: "profiles.csv".into(),
            m: 2,
            b: 1,
            state_columns: vec!["a".into(), "b".into()],
            context_columns: vec!["ctx".into()],
            state_units: vec![],
            context_units: vec![],
            grid_times: vec![0.0, 0.05, 0.1],
        };
        let mut ids = Vec::new();
        let mut ctxs = Vec::new();
        let mut recs = Vec::new();
        let mut rcids = Vec::new();
        for j in 0..n_contexts {
            let id = format!("c{j}");
            let ctx = ResourceContext(vec![j as f64 + 1.0]);
            for i in 0..n_runs {
                recs.push(
                    ProfileRecord::new(
                        format!("{id}-r{i}"),
                        ctx.clone(),
                        vec![
                            (0.0, ExecutionState(vec![1.0 + j as f64, 2.0])),
                            (0.1, ExecutionState(vec![3.0 + i as f64, 4.0])),
                        ],
                    )
                    .unwrap(),
                );
                rcids.push(id.clone());
            }
            ids.push(id);
            ctxs.push(ctx);
        }
        Dataset::new(manifest, ids, ctxs, recs, rcids).unwrap()
    }

    #[test]
    fn one_point_per_run_per_snapshot_with_uniform_weights() {
        // 10 runs over 125 contexts give 1250 points per snapshot, each
        // carrying weight 1/1250.
        let ds = grid_dataset(125, 10);
        let grid = ds.grid().unwrap();
        let samples = build_augmented_samples(&ds, &grid).unwrap();
        assert_eq!(samples.len(), 3);
        assert_eq!(samples[0].len(), 1250);
        let marginals = build_empirical_marginals(&samples).unwrap();
        for m in &marginals {
            assert_eq!(m.len(), 1250);
            assert!(m.weights().iter().all(|w| (w - 1.0 / 1250.0).abs() < 1e-15));
            let sum: f64 = m.weights().iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn snapshot_states_follow_zero_order_hold() {
        let ds = grid_dataset(2, 1);
        let grid = ds.grid().unwrap();
        let samples = build_augmented_samples(&ds, &grid).unwrap();
        // At t = 0.05 the latest sample is still the t = 0 one.
        assert_eq!(samples[1][0].xi.0, samples[0][0].xi.0);
        // At t = 0.1 the second sample applies.
        assert_eq!(samples[2][0].xi.0, vec![3.0, 4.0]);
        // β rides along unchanged.
        assert_eq!(samples[2][0].beta.0, vec![1.0]);
    }

    #[test]
    fn grid_beyond_every_profile_is_rejected() {
        let ds = grid_dataset(2, 2);
        let grid = SnapshotGrid::new(vec![0.0, 0.2]).unwrap();
        let err = build_augmented_samples(&ds, &grid).unwrap_err();
        assert!(matches!(err, Error::GridBeyondData { .. }));
    }

    #[test]
    fn scaling_lands_in_range_and_flags_degenerate_components() {
        let ds = grid_dataset(3, 2);
        let grid = ds.grid().unwrap();
        let marginals =
            build_empirical_marginals(&build_augmented_samples(&ds, &grid).unwrap()).unwrap();
        let (scaled, record) = scale_marginals(&marginals).unwrap();
        for (sigma, sm) in scaled.iter().enumerate() {
            for p in sm.points() {
                for k in 0..p.dim() {
                    let v = p.component(k);
                    assert!((-1e-12..=SCALE_RANGE + 1e-12).contains(&v), "σ={sigma} k={k} v={v}");
                }
            }
        }
        // Second state component is the constant 2.0 at σ = 0.
        assert!(record.snapshots[0].is_degenerate(1));
        assert_eq!(record.snapshots[0].inverse(&[0.0, 0.0, 0.0])[1], 2.0);
        // Scaled extremes hit 0 and 0.1 exactly for non-degenerate components.
        let col: Vec<f64> = scaled[0].points().iter().map(|p| p.component(0)).collect();
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(lo, 0.0);
        assert!((hi - SCALE_RANGE).abs() < 1e-15);
    }

    #[test]
    fn weight_validation_catches_bad_sums() {
        let p = AugmentedState::new(ExecutionState(vec![0.0]), ResourceContext(vec![0.0]));
        let err = EmpiricalMarginal::new(vec![p.clone(), p.clone()], vec![0.6, 0.6]).unwrap_err();
        assert!(matches!(err, Error::WeightSum { .. }));
        assert!(EmpiricalMarginal::new(vec![p.clone()], vec![0.0]).is_err());
        // A sum within 1e-9 of 1 is normalized away exactly.
        let m = EmpiricalMarginal::new(vec![p.clone(), p], vec![0.5, 0.5 + 4e-10]).unwrap();
        let sum: f64 = m.weights().iter().sum();
        assert!((sum - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn scaling_round_trips_within_1e10_relative(
            raw in proptest::collection::vec(
                proptest::collection::vec(-1e6f64..1e6, 4),
                2..40,
            )
        ) {
            let points: Vec<AugmentedState> = raw
                .iter()
                .map(|v| AugmentedState::new(
                    ExecutionState(v[..2].to_vec()),
                    ResourceContext(v[2..].to_vec()),
                ))
                .collect();
            let marginal = EmpiricalMarginal::uniform(points).unwrap();
            let (scaled, record) = scale_marginals(std::slice::from_ref(&marginal)).unwrap();
            for (orig, sc) in marginal.points().iter().zip(scaled[0].points()) {
                let back = record.inverse_point(0, sc).unwrap();
                for k in 0..orig.dim() {
                    let a = orig.component(k);
                    let b = back.component(k);
                    let tol = 1e-10 * a.abs().max(1.0);
                    prop_assert!((a - b).abs() <= tol, "component {k}: {a} vs {b}");
                }
            }
        }

        #[test]
        fn scaling_preserves_componentwise_order(
            col in proptest::collection::vec(-1e3f64..1e3, 3..30)
        ) {
            let points: Vec<AugmentedState> = col
                .iter()
                .map(|&v| AugmentedState::new(ExecutionState(vec![v]), ResourceContext(vec![1.0])))
                .collect();
            let marginal = EmpiricalMarginal::uniform(points).unwrap();
            let (scaled, _) = scale_marginals(std::slice::from_ref(&marginal)).unwrap();
            for (a, b) in col.iter().zip(col.iter().skip(1)) {
                let ia = col.iter().position(|x| x == a).unwrap();
                let ib = col.iter().position(|x| x == b).unwrap();
                let sa = scaled[0].points()[ia].component(0);
                let sb = scaled[0].points()[ib].component(0);
                if a < b {
                    prop_assert!(sa <= sb);
                } else if a > b {
                    prop_assert!(sa >= sb);
                }
            }
        }
    }
}
