//! Fitting a generative model to a dataset, and saving/loading it.
//!
//! A fitted [`BridgeModel`] bundles everything profile generation needs: the
//! snapshot grid, the training context catalog, the raw (unscaled) marginal
//! clouds with their per-snapshot scaling maps, and the converged solver
//! output. Saved solutions store only the potentials and provenance — stage
//! kernels are cheap to recompute and are rebuilt on load from the dataset,
//! which is re-ingested and verified against the stored content hash.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cost::build_path_cost;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::marginal::{
    build_augmented_samples, build_empirical_marginals, scale_marginals, EmpiricalMarginal,
    ScalingRecord,
};
use crate::solver::{sinkhorn_solve, SolverConfig, SolverSolution};
use crate::state::{ResourceContext, SnapshotGrid};

/// A fitted generative model over one dataset's training contexts.
#[derive(Debug, Clone)]
pub struct BridgeModel {
    pub grid: SnapshotGrid,
    /// Training context ids, in catalog order.
    pub context_ids: Vec<String>,
    /// Training contexts B′, parallel to `context_ids`.
    pub contexts: Vec<ResourceContext>,
    pub state_columns: Vec<String>,
    pub context_columns: Vec<String>,
    /// Unscaled marginal clouds, one per snapshot; point order is identical
    /// across snapshots (one point per training run).
    pub raw_marginals: Vec<EmpiricalMarginal>,
    /// Per-snapshot maps between raw and solver coordinates.
    pub scaling: ScalingRecord,
    pub config: SolverConfig,
    pub solution: SolverSolution,
    pub dataset_hash: String,
    /// Manifest the model was fit from, when the dataset lives on disk.
    pub manifest_path: Option<String>,
}

impl BridgeModel {
    pub fn state_dim(&self) -> usize {
        self.raw_marginals[0].state_dim()
    }

    pub fn context_dim(&self) -> usize {
        self.contexts[0].dim()
    }

    pub fn n_snapshots(&self) -> usize {
        self.grid.len()
    }
}

/// Fits a model: restricts the dataset to the training contexts, builds and
/// scales the snapshot marginals, assembles stage costs, and solves. Returns
/// the model even when the solver stops at the iteration cap (check
/// `solution.converged`); callers that cannot use a best-effort plan gate on
/// that flag.
pub fn fit(dataset: &Dataset, training_ids: &[String], config: &SolverConfig) -> Result<BridgeModel> {
    if training_ids.is_empty() {
        return Err(Error::InvalidConfig("no training contexts given".into()));
    }
    let restricted = dataset.restrict(training_ids)?;
    for id in restricted.context_ids() {
        if restricted.records_for_context(id).is_empty() {
            return Err(Error::InvalidData(format!(
                "training context '{id}' has no profiled runs"
            )));
        }
    }
    let grid = restricted.grid()?;
    let samples = build_augmented_samples(&restricted, &grid)?;
    let raw_marginals = build_empirical_marginals(&samples)?;
    let (scaled, scaling) = scale_marginals(&raw_marginals)?;
    let path = build_path_cost(&scaled)?;
    let solution = sinkhorn_solve(&path, &scaled, config)?;
    Ok(BridgeModel {
        grid,
        context_ids: restricted.context_ids().to_vec(),
        contexts: restricted.contexts().to_vec(),
        state_columns: restricted.manifest().state_columns.clone(),
        context_columns: restricted.manifest().context_columns.clone(),
        raw_marginals,
        scaling,
        config: config.clone(),
        solution,
        dataset_hash: dataset.content_hash(),
        manifest_path: None,
    })
}

/// On-disk solution format: solver provenance plus the converged potentials.
/// Kernels are rebuilt from the dataset on load rather than stored.
#[derive(Debug, Serialize, Deserialize)]
struct SolutionFile {
    epsilon: f64,
    tol: f64,
    max_iterations: usize,
    seed: u64,
    grid_times: Vec<f64>,
    manifest_path: Option<String>,
    dataset_hash: String,
    training_context_ids: Vec<String>,
    potentials: Vec<Vec<f64>>,
    iterations: usize,
    final_error: f64,
    converged: bool,
    residuals: Vec<f64>,
}

/// Writes the model's solution (potentials + provenance) as JSON.
pub fn save_solution(model: &BridgeModel, path: &Path) -> Result<()> {
    let file = SolutionFile {
        epsilon: model.config.epsilon,
        tol: model.config.tol,
        max_iterations: model.config.max_iterations,
        seed: model.config.seed,
        grid_times: model.grid.times().to_vec(),
        manifest_path: model.manifest_path.clone(),
        dataset_hash: model.dataset_hash.clone(),
        training_context_ids: model.context_ids.clone(),
        potentials: model
            .solution
            .potentials
            .iter()
            .map(|u| u.to_vec())
            .collect(),
        iterations: model.solution.iterations,
        final_error: model.solution.final_error,
        converged: model.solution.converged,
        residuals: model.solution.residuals.clone(),
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut json = serde_json::to_string_pretty(&file)?;
    json.push('\n');
    fs::write(path, json)?;
    Ok(())
}

/// Loads a saved solution and rebuilds the full model around it. The dataset
/// is re-ingested from `manifest_override` (or the manifest recorded in the
/// file), its content hash must match the one the solution was fit on, and
/// the stage kernels are recomputed from the data.
pub fn load_solution(path: &Path, manifest_override: Option<&Path>) -> Result<BridgeModel> {
    let text = fs::read_to_string(path).map_err(|e| {
        Error::InvalidData(format!("cannot read solution {}: {e}", path.display()))
    })?;
    let file: SolutionFile = serde_json::from_str(&text)?;

    let manifest_path = match manifest_override {
        Some(p) => p.to_path_buf(),
        None => {
            // Stored relative paths resolve against the working directory,
            // exactly as they did when the solution was written.
            let stored = file.manifest_path.as_ref().ok_or_else(|| {
                Error::InvalidConfig(
                    "solution does not record a manifest path; pass the dataset manifest explicitly"
                        .into(),
                )
            })?;
            Path::new(stored).to_path_buf()
        }
    };
    let dataset = Dataset::read(&manifest_path)?;
    let actual_hash = dataset.content_hash();
    if actual_hash != file.dataset_hash {
        return Err(Error::HashMismatch {
            expected: file.dataset_hash,
            actual: actual_hash,
        });
    }

    let config = SolverConfig {
        epsilon: file.epsilon,
        tol: file.tol,
        max_iterations: file.max_iterations,
        seed: file.seed,
    };
    config.validate()?;

    let restricted = dataset.restrict(&file.training_context_ids)?;
    let grid = restricted.grid()?;
    if grid.times() != file.grid_times.as_slice() {
        return Err(Error::InvalidData(
            "solution grid disagrees with the dataset manifest grid".into(),
        ));
    }
    let samples = build_augmented_samples(&restricted, &grid)?;
    let raw_marginals = build_empirical_marginals(&samples)?;
    let (scaled, scaling) = scale_marginals(&raw_marginals)?;
    let path_cost = build_path_cost(&scaled)?;
    let kernels: Vec<ndarray::Array2<f64>> = path_cost
        .stages()
        .iter()
        .map(|c| c.mapv(|v| (-v / config.epsilon).exp()))
        .collect();

    if file.potentials.len() != grid.len() {
        return Err(Error::LengthMismatch {
            left: file.potentials.len(),
            right: grid.len(),
        });
    }
    let potentials: Vec<ndarray::Array1<f64>> = file
        .potentials
        .iter()
        .enumerate()
        .map(|(sigma, u)| {
            if u.len() != raw_marginals[sigma].len() {
                return Err(Error::Dimension {
                    what: "stored potential",
                    expected: raw_marginals[sigma].len(),
                    got: u.len(),
                });
            }
            if u.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidData(format!(
                    "stored potential {sigma} has a non-positive entry"
                )));
            }
            Ok(ndarray::Array1::from_vec(u.clone()))
        })
        .collect::<Result<_>>()?;

    Ok(BridgeModel {
        grid,
        context_ids: restricted.context_ids().to_vec(),
        contexts: restricted.contexts().to_vec(),
        state_columns: restricted.manifest().state_columns.clone(),
        context_columns: restricted.manifest().context_columns.clone(),
        raw_marginals,
        scaling,
        config,
        solution: SolverSolution {
            potentials,
            kernels,
            iterations: file.iterations,
            final_error: file.final_error,
            converged: file.converged,
            residuals: file.residuals,
        },
        dataset_hash: file.dataset_hash,
        manifest_path: Some(manifest_path.display().to_string()),
    })
}
