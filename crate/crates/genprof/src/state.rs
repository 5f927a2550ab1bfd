//! Domain value types: resource contexts, execution states, augmented states,
//! recorded profiles, and the snapshot grid.
//!
//! A *resource context* β is the allocation a task runs under (e.g. cache ways,
//! memory bandwidth, core frequency). An *execution state* ξ is the vector of
//! execution metrics sampled while the task runs (e.g. instruction, cache
//! request, and cache miss rates). The *augmented state* η = (ξ, β) stacks the
//! two so that a single point cloud carries both how a run behaved and what it
//! ran under.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Resource allocation vector β with b ≥ 1 components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResourceContext(pub Vec<f64>);

/// Execution metric vector ξ with m ≥ 1 components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExecutionState(pub Vec<f64>);

impl ResourceContext {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Componentwise `self <= other`.
    pub fn dominated_by(&self, other: &ResourceContext) -> bool {
        self.0.len() == other.0.len() && self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }

    /// Euclidean distance to another context of the same dimension.
    pub fn distance(&self, other: &ResourceContext) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl ExecutionState {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn zeros(m: usize) -> Self {
        ExecutionState(vec![0.0; m])
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &ExecutionState) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Augmented state η = (ξ, β): execution state stacked on top of the resource
/// context it was observed under. Component order is ξ first, then β.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub xi: ExecutionState,
    pub beta: ResourceContext,
}

impl AugmentedState {
    pub fn new(xi: ExecutionState, beta: ResourceContext) -> Self {
        AugmentedState { xi, beta }
    }

    /// Total dimension m + b.
    pub fn dim(&self) -> usize {
        self.xi.dim() + self.beta.dim()
    }

    /// Component k in the concatenated (ξ, β) order.
    pub fn component(&self, k: usize) -> f64 {
        let m = self.xi.dim();
        if k < m {
            self.xi.0[k]
        } else {
            self.beta.0[k - m]
        }
    }

    /// Concatenated coordinates, ξ first then β.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.xi.0);
        v.extend_from_slice(&self.beta.0);
        v
    }

    /// Inverse of [`to_vec`](Self::to_vec) given the split point m.
    pub fn from_vec(v: &[f64], m: usize) -> Result<Self> {
        if v.len() <= m {
            return Err(Error::Dimension {
                what: "augmented state",
                expected: m + 1,
                got: v.len(),
            });
        }
        Ok(AugmentedState {
            xi: ExecutionState(v[..m].to_vec()),
            beta: ResourceContext(v[m..].to_vec()),
        })
    }

    pub fn squared_distance(&self, other: &AugmentedState) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        let mut acc = 0.0;
        for k in 0..self.dim() {
            let d = self.component(k) - other.component(k);
            acc += d * d;
        }
        acc
    }
}

/// One profiled run: a task executed under a fixed context, with its execution
/// state sampled over time.
#[derive(Debug, Clone)]
pub struct ProfileRecord {
    run_id: String,
    context: ResourceContext,
    samples: Vec<(f64, ExecutionState)>,
}

impl ProfileRecord {
    /// Validates structure: at least one sample, times starting at 0 and
    /// strictly increasing, all states of equal dimension and finite.
    pub fn new(
        run_id: String,
        context: ResourceContext,
        samples: Vec<(f64, ExecutionState)>,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidData(format!("run '{run_id}' has no samples")));
        }
        if samples[0].0 != 0.0 {
            return Err(Error::InvalidData(format!(
                "run '{run_id}' must start at t = 0, first sample is at t = {}",
                samples[0].0
            )));
        }
        let m = samples[0].1.dim();
        if m == 0 {
            return Err(Error::InvalidData(format!(
                "run '{run_id}' has zero-dimensional states"
            )));
        }
        let mut prev = f64::NEG_INFINITY;
        for (t, state) in &samples {
            if !t.is_finite() || *t <= prev {
                return Err(Error::InvalidData(format!(
                    "run '{run_id}' has non-increasing or non-finite sample time {t}"
                )));
            }
            prev = *t;
            if state.dim() != m {
                return Err(Error::Dimension {
                    what: "execution state",
                    expected: m,
                    got: state.dim(),
                });
            }
            if state.0.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "run '{run_id}' has a non-finite state component at t = {t}"
                )));
            }
        }
        if context.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "run '{run_id}' has a non-finite context component"
            )));
        }
        Ok(ProfileRecord {
            run_id,
            context,
            samples,
        })
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn context(&self) -> &ResourceContext {
        &self.context
    }

    pub fn samples(&self) -> &[(f64, ExecutionState)] {
        &self.samples
    }

    pub fn state_dim(&self) -> usize {
        self.samples[0].1.dim()
    }

    /// Time of the last recorded sample.
    pub fn duration(&self) -> f64 {
        self.samples[self.samples.len() - 1].0
    }

    /// Execution state at time `t` under zero-order hold, with zero padding
    /// after the final sample: rates drop to zero once a run has finished.
    pub fn state_at(&self, t: f64) -> ExecutionState {
        if t > self.duration() {
            return ExecutionState::zeros(self.state_dim());
        }
        // Last sample with time <= t; the t >= 0 grid invariant and the
        // samples-start-at-0 invariant guarantee one exists.
        let idx = match self
            .samples
            .binary_search_by(|(st, _)| st.partial_cmp(&t).unwrap())
        {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        self.samples[idx].1.clone()
    }
}

/// Strictly increasing snapshot times t_1 < … < t_{n_s} with t_1 = 0; the
/// marginals of the learned evolution live on these times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SnapshotGrid {
    times: Vec<f64>,
}

impl SnapshotGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidData(format!(
                "snapshot grid needs at least 2 times, got {}",
                times.len()
            )));
        }
        if times[0] != 0.0 {
            return Err(Error::InvalidData(format!(
                "snapshot grid must start at 0, got {}",
                times[0]
            )));
        }
        let mut prev = f64::NEG_INFINITY;
        for &t in &times {
            if !t.is_finite() || t <= prev {
                return Err(Error::InvalidData(format!(
                    "snapshot times must be finite and strictly increasing, offending time {t}"
                )));
            }
            prev = t;
        }
        Ok(SnapshotGrid { times })
    }

    /// Uniformly spaced grid: 0, dt, 2·dt, …, (n-1)·dt.
    pub fn uniform(n: usize, dt: f64) -> Result<Self> {
        if dt <= 0.0 || !dt.is_finite() {
            return Err(Error::InvalidData(format!("grid spacing must be positive, got {dt}")));
        }
        SnapshotGrid::new((0..n).map(|k| k as f64 * dt).collect())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Segment index σ (0-based, σ ≤ n_s − 2) and interpolation weight
    /// λ ∈ [0, 1] such that t = (1 − λ)·t_σ + λ·t_{σ+1}.
    pub fn locate(&self, t: f64) -> Result<(usize, f64)> {
        if !t.is_finite() || t < self.start() || t > self.end() {
            return Err(Error::InvalidData(format!(
                "time {t} outside the snapshot grid [{}, {}]",
                self.start(),
                self.end()
            )));
        }
        let mut sigma = match self
            .times
            .binary_search_by(|st| st.partial_cmp(&t).unwrap())
        {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        if sigma == self.times.len() - 1 {
            sigma -= 1; // t equals the final snapshot time; use the last segment with λ = 1
        }
        let lambda = (t - self.times[sigma]) / (self.times[sigma + 1] - self.times[sigma]);
        Ok((sigma, lambda))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn augmented_state_concatenates_xi_then_beta() {
        let eta = AugmentedState::new(
            ExecutionState(vec![1.0, 2.0]),
            ResourceContext(vec![3.0]),
        );
        assert_eq!(eta.dim(), 3);
        assert_eq!(eta.to_vec(), vec![1.0, 2.0, 3.0]);
        assert_eq!(eta.component(0), 1.0);
        assert_eq!(eta.component(2), 3.0);
        let back = AugmentedState::from_vec(&[1.0, 2.0, 3.0], 2).unwrap();
        assert_eq!(back, eta);
    }

    #[test]
    fn profile_record_rejects_bad_time_axes() {
        let ctx = ResourceContext(vec![1.0]);
        let s = |v: f64| ExecutionState(vec![v]);
        assert!(ProfileRecord::new("r".into(), ctx.clone(), vec![]).is_err());
        assert!(
            ProfileRecord::new("r".into(), ctx.clone(), vec![(0.5, s(1.0))]).is_err(),
            "first sample must sit at t = 0"
        );
        assert!(ProfileRecord::new(
            "r".into(),
            ctx.clone(),
            vec![(0.0, s(1.0)), (0.0, s(2.0))]
        )
        .is_err());
        assert!(ProfileRecord::new(
            "r".into(),
            ctx,
            vec![(0.0, s(1.0)), (1.0, ExecutionState(vec![1.0, 2.0]))]
        )
        .is_err());
    }

    #[test]
    fn zero_order_hold_pads_with_zeros_after_the_end() {
        let rec = ProfileRecord::new(
            "r".into(),
            ResourceContext(vec![1.0]),
            vec![
                (0.0, ExecutionState(vec![10.0])),
                (1.0, ExecutionState(vec![20.0])),
            ],
        )
        .unwrap();
        assert_eq!(rec.state_at(0.0).0, vec![10.0]);
        assert_eq!(rec.state_at(0.999).0, vec![10.0]);
        assert_eq!(rec.state_at(1.0).0, vec![20.0]);
        assert_eq!(rec.state_at(1.5).0, vec![0.0], "finished runs report zero rates");
    }

    #[test]
    fn grid_locate_splits_segments() {
        let grid = SnapshotGrid::new(vec![0.0, 0.05, 0.1]).unwrap();
        assert_eq!(grid.locate(0.0).unwrap(), (0, 0.0));
        assert_eq!(grid.locate(0.05).unwrap(), (1, 0.0));
        let (sigma, lambda) = grid.locate(0.1).unwrap();
        assert_eq!(sigma, 1);
        assert!((lambda - 1.0).abs() < 1e-12);
        let (sigma, lambda) = grid.locate(0.075).unwrap();
        assert_eq!(sigma, 1);
        assert!((lambda - 0.5).abs() < 1e-12);
        assert!(grid.locate(0.2).is_err());
        assert!(grid.locate(-0.01).is_err());
    }

    #[test]
    fn grid_must_start_at_zero_and_increase() {
        assert!(SnapshotGrid::new(vec![0.0]).is_err());
        assert!(SnapshotGrid::new(vec![0.1, 0.2]).is_err());
        assert!(SnapshotGrid::new(vec![0.0, 0.1, 0.1]).is_err());
        assert!(SnapshotGrid::uniform(5, 0.05).is_ok());
        assert!(SnapshotGrid::uniform(5, 0.0).is_err());
    }
}
