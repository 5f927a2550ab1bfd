//! Learns the most likely time evolution of a task's execution state from
//! profiled runs and synthesizes execution profiles for unseen resource
//! contexts.
//!
//! The pipeline: ingest profiled runs into per-snapshot empirical marginals
//! over augmented (state, context) points ([`dataset`], [`marginal`]), chain
//! them with squared-distance stage costs ([`cost`]), solve the
//! entropy-regularized coupling problem with a path-structured iterative
//! scaling solver ([`solver`]), and synthesize profiles for new contexts by
//! interpolating the coupled snapshot clouds and conditioning on the target
//! context ([`generator`]). [`eval`] scores synthesized profiles against
//! measured ones, [`sim`] provides a configurable workload simulator for
//! producing datasets, and [`dense`] holds brute-force reference
//! implementations used to cross-check the solver.

pub mod bridge;
pub mod cost;
pub mod dataset;
pub mod dense;
pub mod error;
pub mod eval;
pub mod generator;
pub mod marginal;
pub mod sim;
pub mod solver;
pub mod state;

pub use bridge::{fit, load_solution, save_solution, BridgeModel};
pub use cost::{build_path_cost, materialize_dense, pairwise_cost, PathCost, DEFAULT_DENSE_CAP};
pub use dataset::{select_training_contexts, Dataset, DatasetManifest};
pub use dense::{
    assemble_dense_plan, dense_sinkhorn_solve, kl_to_gibbs, perturb_plan_feasibly,
    random_instance, DensePlan, DenseSolution,
};
pub use error::{Error, Result};
pub use eval::{
    accuracy_report, baseline_profile, dtw_distance, mean_profile, normalized_dtw,
    score_profiles, write_plot_data, write_report, AccuracyReport, AccuracyRow, PlotPoint,
};
pub use generator::{
    condition_on_context, context_marginal, generate_profile, interpolate_joint,
    max_likelihood_state, mean_state, profile_time_axis, read_profile_csv, sample_states,
    silverman_bandwidth, top_k_states, write_profile_csv, GenerateConfig, ProfileMode,
    ProfileSidecar, SyntheticProfile, WeightedCloud,
};
pub use marginal::{
    build_augmented_samples, build_empirical_marginals, scale_marginals, EmpiricalMarginal,
    ScalingRecord,
};
pub use sim::{simulate_dataset, simulate_profile, PhaseModel, SimulationSpec};
pub use solver::{hilbert_metric, sinkhorn_solve, SolverConfig, SolverSolution};
pub use state::{
    AugmentedState, ExecutionState, ProfileRecord, ResourceContext, SnapshotGrid,
};
