//! Transport cost between snapshot clouds.
//!
//! The cost of a trajectory through one support point per snapshot decomposes
//! over consecutive snapshots: C_{i_1,…,i_{n_s}} = Σ_j C^j_{i_j, i_{j+1}},
//! with each stage matrix C^j holding squared Euclidean distances between the
//! scaled augmented points of snapshots j and j+1. The solver only ever needs
//! the stage matrices; the dense order-n_s tensor exists for desk-size oracle
//! comparisons and is capped to refuse exponential blow-ups.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::marginal::EmpiricalMarginal;
use crate::state::AugmentedState;

/// Default entry cap for dense tensor materialization.
pub const DEFAULT_DENSE_CAP: usize = 1_000_000;

/// Squared Euclidean distances between two point clouds of equal dimension;
/// entry (i, k) is ‖a_i − b_k‖².
pub fn pairwise_cost(a: &[AugmentedState], b: &[AugmentedState]) -> Result<Array2<f64>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidData("pairwise cost needs nonempty clouds".into()));
    }
    let dim = a[0].dim();
    for p in a.iter().chain(b.iter()) {
        if p.dim() != dim {
            return Err(Error::Dimension {
                what: "pairwise cost point",
                expected: dim,
                got: p.dim(),
            });
        }
    }
    let mut out = Array2::zeros((a.len(), b.len()));
    for (i, pa) in a.iter().enumerate() {
        for (k, pb) in b.iter().enumerate() {
            out[(i, k)] = pa.squared_distance(pb);
        }
    }
    Ok(out)
}

/// Stage cost matrices C^1 … C^{n_s−1} of a path-decomposed cost tensor.
/// `matrices[j]` couples snapshots j and j+1, with shape N_j × N_{j+1}.
#[derive(Debug, Clone)]
pub struct PathCost {
    matrices: Vec<Array2<f64>>,
}

impl PathCost {
    /// Validates the stage chain: at least one matrix, finite nonnegative
    /// entries, and column count of each stage equal to the row count of the
    /// next.
    pub fn new(matrices: Vec<Array2<f64>>) -> Result<Self> {
        if matrices.is_empty() {
            return Err(Error::InvalidData("path cost needs at least one stage".into()));
        }
        for (j, m) in matrices.iter().enumerate() {
            if m.nrows() == 0 || m.ncols() == 0 {
                return Err(Error::InvalidData(format!("stage {j} cost matrix is empty")));
            }
            if m.iter().any(|c| !c.is_finite() || *c < 0.0) {
                return Err(Error::InvalidData(format!(
                    "stage {j} cost matrix has a negative or non-finite entry"
                )));
            }
        }
        for j in 0..matrices.len() - 1 {
            if matrices[j].ncols() != matrices[j + 1].nrows() {
                return Err(Error::Dimension {
                    what: "stage cost chain",
                    expected: matrices[j].ncols(),
                    got: matrices[j + 1].nrows(),
                });
            }
        }
        Ok(PathCost { matrices })
    }

    pub fn stages(&self) -> &[Array2<f64>] {
        &self.matrices
    }

    /// Number of snapshots n_s = stages + 1.
    pub fn n_snapshots(&self) -> usize {
        self.matrices.len() + 1
    }

    /// Support size of snapshot σ.
    pub fn support_len(&self, sigma: usize) -> usize {
        if sigma < self.matrices.len() {
            self.matrices[sigma].nrows()
        } else {
            self.matrices[self.matrices.len() - 1].ncols()
        }
    }

    /// Per-snapshot support sizes.
    pub fn shape(&self) -> Vec<usize> {
        (0..self.n_snapshots()).map(|s| self.support_len(s)).collect()
    }

    /// Cost of one trajectory, Σ_j C^j[idx_j, idx_{j+1}].
    pub fn trajectory_cost(&self, idx: &[usize]) -> Result<f64> {
        if idx.len() != self.n_snapshots() {
            return Err(Error::LengthMismatch {
                left: idx.len(),
                right: self.n_snapshots(),
            });
        }
        let mut acc = 0.0;
        for (j, m) in self.matrices.iter().enumerate() {
            acc += m[(idx[j], idx[j + 1])];
        }
        Ok(acc)
    }
}

/// Stage costs between consecutive scaled snapshot clouds.
pub fn build_path_cost(scaled: &[EmpiricalMarginal]) -> Result<PathCost> {
    if scaled.len() < 2 {
        return Err(Error::InvalidData(format!(
            "path cost needs at least 2 snapshots, got {}",
            scaled.len()
        )));
    }
    let mut matrices = Vec::with_capacity(scaled.len() - 1);
    for j in 0..scaled.len() - 1 {
        matrices.push(pairwise_cost(scaled[j].points(), scaled[j + 1].points())?);
    }
    PathCost::new(matrices)
}

/// Dense order-n_s cost tensor, row-major over the snapshot indices.
/// Desk-size oracle only; construction is exponential in n_s.
#[derive(Debug, Clone)]
pub struct DenseCostTensor {
    shape: Vec<usize>,
    entries: Vec<f64>,
}

impl DenseCostTensor {
    pub fn new(shape: Vec<usize>, entries: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.len() < 2 || expected == 0 || entries.len() != expected {
            return Err(Error::InvalidData(format!(
                "dense tensor shape {shape:?} does not match {} entries",
                entries.len()
            )));
        }
        Ok(DenseCostTensor { shape, entries })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.entries[flat_index(&self.shape, idx)]
    }
}

/// Row-major flat offset of a multi-index.
pub(crate) fn flat_index(shape: &[usize], idx: &[usize]) -> usize {
    debug_assert_eq!(shape.len(), idx.len());
    let mut flat = 0;
    for (i, n) in idx.iter().zip(shape) {
        debug_assert!(i < n);
        flat = flat * n + i;
    }
    flat
}

/// Iterates all multi-indices of `shape` in row-major order, calling `f` with
/// each index and its flat offset.
pub(crate) fn for_each_index(shape: &[usize], mut f: impl FnMut(&[usize], usize)) {
    let total: usize = shape.iter().product();
    let mut idx = vec![0usize; shape.len()];
    for flat in 0..total {
        f(&idx, flat);
        for axis in (0..shape.len()).rev() {
            idx[axis] += 1;
            if idx[axis] < shape[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
}

/// Materializes the dense tensor of a path cost, refusing when it would hold
/// more than `cap` entries (pass [`DEFAULT_DENSE_CAP`] for the default).
pub fn materialize_dense(path: &PathCost, cap: usize) -> Result<DenseCostTensor> {
    let shape = path.shape();
    let total: u128 = shape.iter().map(|&n| n as u128).product();
    if total > cap as u128 {
        return Err(Error::TensorTooLarge { entries: total, cap });
    }
    let mut entries = vec![0.0; total as usize];
    for_each_index(&shape, |idx, flat| {
        let mut acc = 0.0;
        for (j, m) in path.stages().iter().enumerate() {
            acc += m[(idx[j], idx[j + 1])];
        }
        entries[flat] = acc;
    });
    DenseCostTensor::new(shape, entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{ExecutionState, ResourceContext};
    use ndarray::arr2;
    use proptest::prelude::*;

    fn cloud(values: &[&[f64]]) -> Vec<AugmentedState> {
        values
            .iter()
            .map(|v| {
                AugmentedState::new(
                    ExecutionState(v[..v.len() - 1].to_vec()),
                    ResourceContext(vec![v[v.len() - 1]]),
                )
            })
            .collect()
    }

    #[test]
    fn pairwise_entries_are_squared_euclidean_distances() {
        let a = cloud(&[&[0.0, 0.0], &[1.0, 2.0], &[3.0, 1.0]]);
        let b = cloud(&[&[0.0, 1.0], &[2.0, 2.0], &[1.0, 0.0], &[4.0, 4.0]]);
        let c = pairwise_cost(&a, &b).unwrap();
        assert_eq!(c.shape(), &[3, 4]);
        for (i, pa) in a.iter().enumerate() {
            for (k, pb) in b.iter().enumerate() {
                let mut expect = 0.0;
                for d in 0..pa.dim() {
                    let diff = pa.component(d) - pb.component(d);
                    expect += diff * diff;
                }
                assert!((c[(i, k)] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn pairwise_is_symmetric_under_argument_swap() {
        let a = cloud(&[&[0.5, 1.0], &[2.0, 0.25]]);
        let b = cloud(&[&[1.0, 1.0], &[0.0, 3.0], &[2.5, 2.5]]);
        let ab = pairwise_cost(&a, &b).unwrap();
        let ba = pairwise_cost(&b, &a).unwrap();
        assert_eq!(ab.t().to_owned(), ba);
        // Same cloud on both sides: zero diagonal.
        let aa = pairwise_cost(&a, &a).unwrap();
        for i in 0..a.len() {
            assert_eq!(aa[(i, i)], 0.0);
        }
    }

    #[test]
    fn dense_tensor_matches_stagewise_sums() {
        let c1 = arr2(&[[0.0, 1.0, 2.0], [3.0, 4.0, 5.0]]);
        let c2 = arr2(&[[10.0, 20.0], [30.0, 40.0], [50.0, 60.0]]);
        let path = PathCost::new(vec![c1.clone(), c2.clone()]).unwrap();
        assert_eq!(path.shape(), vec![2, 3, 2]);
        let dense = materialize_dense(&path, DEFAULT_DENSE_CAP).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..2 {
                    let expect = c1[(i, j)] + c2[(j, k)];
                    assert_eq!(dense.get(&[i, j, k]), expect);
                    assert_eq!(path.trajectory_cost(&[i, j, k]).unwrap(), expect);
                }
            }
        }
    }

    #[test]
    fn dense_cap_refuses_large_tensors() {
        let stage = Array2::from_elem((10, 10), 1.0);
        let path = PathCost::new(vec![stage.clone(); 7]).unwrap(); // 10^8 entries
        let err = materialize_dense(&path, DEFAULT_DENSE_CAP).unwrap_err();
        assert!(matches!(err, Error::TensorTooLarge { .. }));
    }

    #[test]
    fn chain_shape_mismatch_is_rejected() {
        let c1 = Array2::from_elem((2, 3), 1.0);
        let c2 = Array2::from_elem((4, 2), 1.0);
        assert!(PathCost::new(vec![c1, c2]).is_err());
        let neg = arr2(&[[-1.0]]);
        assert!(PathCost::new(vec![neg]).is_err());
    }

    proptest! {
        #[test]
        fn costs_are_nonnegative_and_decompose(
            coords in proptest::collection::vec(
                proptest::collection::vec(-10.0f64..10.0, 3),
                9,
            )
        ) {
            let clouds: Vec<Vec<AugmentedState>> = coords
                .chunks(3)
                .map(|chunk| {
                    chunk
                        .iter()
                        .map(|v| AugmentedState::new(
                            ExecutionState(v[..2].to_vec()),
                            ResourceContext(v[2..].to_vec()),
                        ))
                        .collect()
                })
                .collect();
            let stages: Vec<Array2<f64>> = (0..clouds.len() - 1)
                .map(|j| pairwise_cost(&clouds[j], &clouds[j + 1]).unwrap())
                .collect();
            prop_assert!(stages.iter().all(|m| m.iter().all(|c| *c >= 0.0)));
            let path = PathCost::new(stages).unwrap();
            let dense = materialize_dense(&path, DEFAULT_DENSE_CAP).unwrap();
            for_each_index(path.shape().as_slice(), |idx, flat| {
                let direct = path.trajectory_cost(idx).unwrap();
                assert!((dense.entries()[flat] - direct).abs() <= 1e-12);
            });
        }
    }
}
