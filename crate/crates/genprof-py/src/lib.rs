//! Python bindings for the profile-learning toolkit: simulate a demo
//! workload, fit the snapshot-coupling model, synthesize profiles for unseen
//! resource contexts, and score them — plus the low-level metrics
//! (Hilbert projective metric, dynamic time warping) as plain functions.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use genprof::{
    accuracy_report, fit, generate_profile, load_solution, save_solution, BridgeModel, Dataset,
    ExecutionState, GenerateConfig, ProfileMode, ResourceContext, SimulationSpec, SolverConfig,
};

fn err(e: genprof::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn states_to_rows(states: &[ExecutionState]) -> Vec<Vec<f64>> {
    states.iter().map(|s| s.0.clone()).collect()
}

fn rows_to_states(rows: Vec<Vec<f64>>) -> Vec<ExecutionState> {
    rows.into_iter().map(ExecutionState).collect()
}

/// Log-ratio spread between two positive vectors; zero iff they are
/// proportional. This is the solver's convergence residual metric.
#[pyfunction]
fn hilbert_metric(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    genprof::hilbert_metric(&p, &q).map_err(err)
}

/// Exact dynamic-time-warping alignment between two state sequences
/// (rows = time steps). Returns (total cost, warping path index pairs).
#[pyfunction]
fn dtw_distance(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<(f64, Vec<(usize, usize)>)> {
    genprof::dtw_distance(&rows_to_states(a), &rows_to_states(b)).map_err(err)
}

/// DTW cost normalized by the reference length and peak state magnitude.
#[pyfunction]
fn normalized_dtw(generated: Vec<Vec<f64>>, reference: Vec<Vec<f64>>) -> PyResult<f64> {
    genprof::normalized_dtw(&rows_to_states(generated), &rows_to_states(reference)).map_err(err)
}

/// Simulates the built-in demo workload (`levels` values per resource axis,
/// multiplicative measurement noise) and writes the dataset into `out_dir`.
/// Returns the manifest path.
#[pyfunction]
#[pyo3(signature = (out_dir, levels=3, noise=0.05, runs_per_context=None, seed=None))]
fn simulate_demo(
    out_dir: &str,
    levels: usize,
    noise: f64,
    runs_per_context: Option<usize>,
    seed: Option<u64>,
) -> PyResult<String> {
    let mut spec = SimulationSpec::demo(levels, noise);
    if let Some(runs) = runs_per_context {
        spec.runs_per_context = runs;
    }
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let dataset = spec.run().map_err(err)?;
    let manifest = dataset.write(Path::new(out_dir)).map_err(err)?;
    spec.save(&Path::new(out_dir).join("sim_config.json")).map_err(err)?;
    Ok(manifest.to_string_lossy().into_owned())
}

/// The curated 18-context training subset for the 5-level demo catalog.
#[pyfunction]
fn demo_training_ids() -> Vec<String> {
    SimulationSpec::demo(5, 0.05).demo_training_ids()
}

fn build_generate_config(
    delta_t: f64,
    mode: &str,
    bandwidth: Option<Vec<f64>>,
    seed: u64,
    allow_unconverged: bool,
) -> PyResult<GenerateConfig> {
    let mode = ProfileMode::from_str(mode).map_err(err)?;
    Ok(GenerateConfig {
        delta_t,
        mode,
        bandwidth,
        seed,
        allow_unconverged,
    })
}

/// A fitted snapshot-coupling model: solve once, then synthesize execution
/// profiles for arbitrary resource contexts.
#[pyclass]
struct Model {
    inner: BridgeModel,
}

#[pymethods]
impl Model {
    /// Fits the model on the dataset behind `manifest_path`. `training_ids`
    /// defaults to every catalog context.
    #[staticmethod]
    #[pyo3(signature = (manifest_path, training_ids=None, epsilon=0.1, tol=1e-12, max_iterations=10000, seed=0))]
    fn fit(
        manifest_path: &str,
        training_ids: Option<Vec<String>>,
        epsilon: f64,
        tol: f64,
        max_iterations: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let dataset = Dataset::read(Path::new(manifest_path)).map_err(err)?;
        let training = training_ids.unwrap_or_else(|| dataset.context_ids().to_vec());
        let config = SolverConfig {
            epsilon,
            tol,
            max_iterations,
            seed,
        };
        let mut inner = fit(&dataset, &training, &config).map_err(err)?;
        inner.manifest_path = Some(manifest_path.to_string());
        Ok(Model { inner })
    }

    /// Loads a model from a saved solution file, re-reading its dataset
    /// (`manifest_override` points elsewhere when the data moved).
    #[staticmethod]
    #[pyo3(signature = (solution_path, manifest_override=None))]
    fn load(solution_path: &str, manifest_override: Option<&str>) -> PyResult<Self> {
        let inner = load_solution(
            Path::new(solution_path),
            manifest_override.map(PathBuf::from).as_deref(),
        )
        .map_err(err)?;
        Ok(Model { inner })
    }

    /// Writes the solution (potentials, config, provenance) as JSON.
    fn save(&self, path: &str) -> PyResult<()> {
        save_solution(&self.inner, Path::new(path)).map_err(err)
    }

    /// Synthesizes a profile for `context`. Returns (times, states) where
    /// states rows follow `state_columns`.
    #[pyo3(signature = (context, delta_t=0.01, mode="maxlik", bandwidth=None, seed=0, allow_unconverged=false))]
    fn generate(
        &self,
        context: Vec<f64>,
        delta_t: f64,
        mode: &str,
        bandwidth: Option<Vec<f64>>,
        seed: u64,
        allow_unconverged: bool,
    ) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
        let cfg = build_generate_config(delta_t, mode, bandwidth, seed, allow_unconverged)?;
        let profile =
            generate_profile(&self.inner, &ResourceContext(context), &cfg).map_err(err)?;
        Ok((profile.times, states_to_rows(&profile.states)))
    }

    /// Scores synthesized profiles for `score_ids` (default: every context
    /// that has measured runs but was not trained on) against the dataset at
    /// `manifest_path` (default: the model's own dataset). Returns a dict
    /// with mean DTW numbers and per-context rows.
    #[pyo3(signature = (manifest_path=None, score_ids=None, delta_t=0.15, mode="maxlik", bandwidth=None, seed=0))]
    fn score(
        &self,
        py: Python<'_>,
        manifest_path: Option<&str>,
        score_ids: Option<Vec<String>>,
        delta_t: f64,
        mode: &str,
        bandwidth: Option<Vec<f64>>,
        seed: u64,
    ) -> PyResult<Py<PyAny>> {
        let manifest = manifest_path
            .map(str::to_owned)
            .or_else(|| self.inner.manifest_path.clone())
            .ok_or_else(|| {
                PyValueError::new_err("no dataset manifest known; pass manifest_path")
            })?;
        let truth = Dataset::read(Path::new(&manifest)).map_err(err)?;
        let ids = score_ids.unwrap_or_else(|| {
            truth
                .context_ids()
                .iter()
                .filter(|id| {
                    !self.inner.context_ids.contains(id)
                        && !truth.records_for_context(id).is_empty()
                })
                .cloned()
                .collect()
        });
        let cfg = build_generate_config(delta_t, mode, bandwidth, seed, false)?;
        let report = accuracy_report(&truth, &self.inner, &ids, &cfg).map_err(err)?;
        let out = pyo3::types::PyDict::new(py);
        out.set_item("mean_dtw_generated", report.mean_dtw_generated)?;
        out.set_item("mean_dtw_baseline", report.mean_dtw_baseline)?;
        out.set_item("mean_improvement_pct", report.mean_improvement_pct)?;
        out.set_item("training_fraction", report.training_fraction)?;
        let rows: Vec<(String, f64, f64)> = report
            .rows
            .iter()
            .map(|r| (r.context_id.clone(), r.dtw_generated, r.dtw_baseline))
            .collect();
        out.set_item("rows", rows)?;
        Ok(out.into())
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.solution.converged
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.solution.iterations
    }

    #[getter]
    fn final_error(&self) -> f64 {
        self.inner.solution.final_error
    }

    #[getter]
    fn training_context_ids(&self) -> Vec<String> {
        self.inner.context_ids.clone()
    }

    #[getter]
    fn state_columns(&self) -> Vec<String> {
        self.inner.state_columns.clone()
    }

    #[getter]
    fn context_columns(&self) -> Vec<String> {
        self.inner.context_columns.clone()
    }

    #[getter]
    fn grid_times(&self) -> Vec<f64> {
        self.inner.grid.times().to_vec()
    }

    #[getter]
    fn dataset_hash(&self) -> String {
        self.inner.dataset_hash.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(contexts={}, snapshots={}, converged={}, iterations={})",
            self.inner.context_ids.len(),
            self.inner.grid.times().len(),
            self.inner.solution.converged,
            self.inner.solution.iterations,
        )
    }
}

#[pymodule]
fn genprof_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(hilbert_metric, m)?)?;
    m.add_function(wrap_pyfunction!(dtw_distance, m)?)?;
    m.add_function(wrap_pyfunction!(normalized_dtw, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_demo, m)?)?;
    m.add_function(wrap_pyfunction!(demo_training_ids, m)?)?;
    m.add_class::<Model>()?;
    Ok(())
}
