//! Profile synthesis from a fitted model.
//!
//! A profile for an unseen context is generated one time step at a time:
//! locate the step inside a snapshot segment, splice the two snapshot clouds
//! into a joint interpolation cloud weighted by the solved pairwise
//! projection, reweight that cloud with a Gaussian kernel around the target
//! context, and extract a state (most likely, mean, or sampled).
//!
//! Interpolation mixes points in their original units: each candidate is
//! `(1-lambda) * eta_i(t_sigma) + lambda * eta_j(t_sigma+1)`, built from the
//! unscaled snapshot supports. The solved projection weights are computed in
//! scaled coordinates, but a weight refers to a (run i, run j) pair, not to a
//! coordinate system, so carrying it over to the unscaled mix is exact at the
//! segment endpoints and affine in between. Extraction by largest weight is
//! likewise coordinate-free, and means are taken over unscaled points so the
//! output is directly comparable to measured profiles.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bridge::BridgeModel;
use crate::error::{Error, Result};
use crate::state::{ExecutionState, ResourceContext, SnapshotGrid};

/// A finite weighted point cloud: `len` points of dimension `dim`, weights
/// nonnegative and summing to one.
#[derive(Debug, Clone)]
pub struct WeightedCloud {
    points: Array2<f64>,
    weights: Array1<f64>,
}

impl WeightedCloud {
    pub fn new(points: Array2<f64>, weights: Array1<f64>) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(Error::InvalidData("empty point cloud".into()));
        }
        if points.nrows() != weights.len() {
            return Err(Error::LengthMismatch {
                left: points.nrows(),
                right: weights.len(),
            });
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite point coordinate".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidData("negative or non-finite weight".into()));
        }
        let total: f64 = weights.sum();
        if !(total > 0.0) {
            return Err(Error::InvalidData("weights sum to zero".into()));
        }
        Ok(Self {
            points,
            weights: weights / total,
        })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    fn point_vec(&self, k: usize) -> Vec<f64> {
        self.points.row(k).to_vec()
    }
}

/// Uniform cloud over a context catalog. Exact duplicates are rejected: they
/// would make conditioning weights ambiguous between identical columns.
pub fn context_marginal(contexts: &[ResourceContext]) -> Result<WeightedCloud> {
    if contexts.is_empty() {
        return Err(Error::InvalidData("empty context catalog".into()));
    }
    let b = contexts[0].dim();
    for (i, ci) in contexts.iter().enumerate() {
        if ci.dim() != b {
            return Err(Error::Dimension {
                what: "context",
                expected: b,
                got: ci.dim(),
            });
        }
        for cj in &contexts[..i] {
            if ci.0 == cj.0 {
                return Err(Error::DuplicateContext(format!("{:?}", ci.0)));
            }
        }
    }
    let mut points = Array2::zeros((contexts.len(), b));
    for (i, c) in contexts.iter().enumerate() {
        for (j, v) in c.0.iter().enumerate() {
            points[[i, j]] = *v;
        }
    }
    let n = contexts.len();
    WeightedCloud::new(points, Array1::from_elem(n, 1.0 / n as f64))
}

/// Normalized pairwise projection weights for one segment, flattened row-major
/// (first index varies slowest), as used by [`interpolate_joint`].
fn segment_weights(model: &BridgeModel, segment: usize) -> Result<Array1<f64>> {
    let bimarg = model.solution.bimarginal_projection(segment, segment + 1)?;
    let total = bimarg.sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::ProjectionUnderflow { sigma: segment });
    }
    Ok(Array1::from_vec((bimarg / total).into_iter().collect()))
}

fn joint_from_weights(
    model: &BridgeModel,
    segment: usize,
    lambda: f64,
    weights: &Array1<f64>,
) -> Result<WeightedCloud> {
    let a = model.raw_marginals[segment].points();
    let b = model.raw_marginals[segment + 1].points();
    let dim = a[0].dim();
    let mut points = Array2::zeros((a.len() * b.len(), dim));
    let mut row = 0;
    for pa in a {
        let va = pa.to_vec();
        for pb in b {
            let vb = pb.to_vec();
            for c in 0..dim {
                points[[row, c]] = (1.0 - lambda) * va[c] + lambda * vb[c];
            }
            row += 1;
        }
    }
    WeightedCloud::new(points, weights.clone())
}

/// Joint interpolation cloud for a time inside segment `sigma`: one candidate
/// point per (run at snapshot sigma, run at snapshot sigma+1) pair, mixed with
/// factor `lambda` in original units and weighted by the solved pairwise
/// projection for that segment.
pub fn interpolate_joint(model: &BridgeModel, segment: usize, lambda: f64) -> Result<WeightedCloud> {
    if segment + 1 >= model.n_snapshots() {
        return Err(Error::SigmaOutOfRange {
            sigma: segment + 1,
            n_snapshots: model.n_snapshots(),
        });
    }
    if !(0.0..=1.0).contains(&lambda) || !lambda.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "interpolation factor must lie in [0, 1], got {lambda}"
        )));
    }
    let weights = segment_weights(model, segment)?;
    joint_from_weights(model, segment, lambda, &weights)
}

/// Per-component Gaussian bandwidths for conditioning, by Silverman's rule on
/// the trailing `b` (context) components of the joint cloud:
/// `h_c = sigma_c * (4 / ((b + 2) n))^(1 / (b + 4))`, with the weighted
/// standard deviation `sigma_c`. A component with no spread gets bandwidth 1
/// so it weighs exact matches and near-misses alike instead of dividing by
/// zero.
pub fn silverman_bandwidth(joint: &WeightedCloud, b: usize) -> Result<Vec<f64>> {
    if b == 0 || b > joint.dim() {
        return Err(Error::Dimension {
            what: "context components",
            expected: joint.dim(),
            got: b,
        });
    }
    let m = joint.dim() - b;
    let n = joint.len() as f64;
    let factor = (4.0 / ((b as f64 + 2.0) * n)).powf(1.0 / (b as f64 + 4.0));
    let mut out = Vec::with_capacity(b);
    for c in 0..b {
        let col = joint.points.column(m + c);
        let mean: f64 = col
            .iter()
            .zip(joint.weights.iter())
            .map(|(x, w)| x * w)
            .sum();
        let var: f64 = col
            .iter()
            .zip(joint.weights.iter())
            .map(|(x, w)| w * (x - mean) * (x - mean))
            .sum();
        let sd = var.max(0.0).sqrt();
        out.push(if sd > 0.0 { sd * factor } else { 1.0 });
    }
    Ok(out)
}

/// Conditions a joint (state, context) cloud on a target context: every
/// weight is multiplied by a product of per-component Gaussian kernels on the
/// context coordinates, and the surviving cloud keeps only the state
/// components. The context width is `beta.dim()`; the leading components are
/// the state.
pub fn condition_on_context(
    joint: &WeightedCloud,
    beta: &ResourceContext,
    bandwidth: &[f64],
) -> Result<WeightedCloud> {
    let b = beta.dim();
    if b == 0 || b >= joint.dim() {
        return Err(Error::Dimension {
            what: "conditioning context",
            expected: joint.dim().saturating_sub(1),
            got: b,
        });
    }
    if bandwidth.len() != b {
        return Err(Error::LengthMismatch {
            left: bandwidth.len(),
            right: b,
        });
    }
    if bandwidth.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
        return Err(Error::InvalidConfig("bandwidths must be positive".into()));
    }
    let m = joint.dim() - b;
    let mut weights = Array1::zeros(joint.len());
    let mut nearest = f64::INFINITY;
    for k in 0..joint.len() {
        let mut log_kernel = 0.0;
        let mut dist2 = 0.0;
        for c in 0..b {
            let gap = beta.0[c] - joint.points[[k, m + c]];
            log_kernel -= gap * gap / (2.0 * bandwidth[c] * bandwidth[c]);
            dist2 += gap * gap;
        }
        weights[k] = joint.weights[k] * log_kernel.exp();
        nearest = nearest.min(dist2.sqrt());
    }
    let total: f64 = weights.sum();
    if !(total > 0.0) {
        return Err(Error::KernelVanished { nearest });
    }
    let mut points = Array2::zeros((joint.len(), m));
    for k in 0..joint.len() {
        for c in 0..m {
            points[[k, c]] = joint.points[[k, c]];
        }
    }
    WeightedCloud::new(points, weights)
}

/// Groups of coincident points with their aggregated mass: (lowest member
/// index, total weight), one entry per distinct point. The probability of a
/// state is the total weight of every support point equal to it, so ranking
/// must merge duplicates first — interpolation clouds at a segment endpoint
/// contain every pairing of a run with the far snapshot's runs, all mapping
/// to the same state.
fn aggregated_support(cloud: &WeightedCloud) -> Vec<(usize, f64)> {
    let mut order: Vec<usize> = (0..cloud.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (cloud.points.row(a), cloud.points.row(b));
        ra.iter()
            .zip(rb.iter())
            .find_map(|(x, y)| x.partial_cmp(y).filter(|o| o.is_ne()))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut groups: Vec<(usize, f64)> = Vec::new();
    for &k in &order {
        match groups.last_mut() {
            Some((first, mass)) if cloud.points.row(*first) == cloud.points.row(k) => {
                *mass += cloud.weights[k];
                *first = (*first).min(k);
            }
            _ => groups.push((k, cloud.weights[k])),
        }
    }
    groups
}

/// The point with the largest probability, after aggregating the mass of
/// coincident points; ties keep the point that appears earliest.
pub fn max_likelihood_state(cloud: &WeightedCloud) -> ExecutionState {
    let groups = aggregated_support(cloud);
    let mut best = 0;
    for g in 1..groups.len() {
        let better = groups[g].1 > groups[best].1
            || (groups[g].1 == groups[best].1 && groups[g].0 < groups[best].0);
        if better {
            best = g;
        }
    }
    ExecutionState(cloud.point_vec(groups[best].0))
}

/// Weight-averaged point.
pub fn mean_state(cloud: &WeightedCloud) -> ExecutionState {
    let mut out = vec![0.0; cloud.dim()];
    for k in 0..cloud.len() {
        let w = cloud.weights[k];
        for c in 0..cloud.dim() {
            out[c] += w * cloud.points[[k, c]];
        }
    }
    ExecutionState(out)
}

/// Draws `count` points from the cloud's categorical distribution by inverse
/// CDF, so equal seeds give equal draws.
pub fn sample_states(cloud: &WeightedCloud, count: usize, rng: &mut ChaCha8Rng) -> Vec<ExecutionState> {
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let x: f64 = rng.random();
        let mut cum = 0.0;
        let mut pick = cloud.len() - 1;
        for k in 0..cloud.len() {
            cum += cloud.weights[k];
            if x < cum {
                pick = k;
                break;
            }
        }
        out.push(ExecutionState(cloud.point_vec(pick)));
    }
    out
}

/// The `k` most probable distinct points with their aggregated weights,
/// heaviest first; equal weights keep first-appearance order. Returns fewer
/// than `k` when the cloud has fewer distinct points.
pub fn top_k_states(cloud: &WeightedCloud, k: usize) -> Vec<(ExecutionState, f64)> {
    let mut groups = aggregated_support(cloud);
    groups.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    groups
        .into_iter()
        .take(k)
        .map(|(i, w)| (ExecutionState(cloud.point_vec(i)), w))
        .collect()
}

/// How a state is extracted from each conditioned cloud.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProfileMode {
    #[serde(rename = "maxlik")]
    MaxLikelihood,
    #[serde(rename = "mean")]
    Mean,
    #[serde(rename = "sample")]
    Sample,
}

impl fmt::Display for ProfileMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProfileMode::MaxLikelihood => "maxlik",
            ProfileMode::Mean => "mean",
            ProfileMode::Sample => "sample",
        })
    }
}

impl FromStr for ProfileMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "maxlik" => Ok(ProfileMode::MaxLikelihood),
            "mean" => Ok(ProfileMode::Mean),
            "sample" => Ok(ProfileMode::Sample),
            other => Err(Error::InvalidConfig(format!(
                "unknown profile mode '{other}' (expected maxlik, mean, or sample)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GenerateConfig {
    /// Spacing of the synthesized time axis, in seconds.
    pub delta_t: f64,
    pub mode: ProfileMode,
    /// Fixed per-component kernel bandwidths; `None` selects Silverman's rule
    /// per time step.
    pub bandwidth: Option<Vec<f64>>,
    /// Seed for `mode = sample`.
    pub seed: u64,
    /// Permit generating from a solution that stopped at the iteration cap.
    pub allow_unconverged: bool,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            delta_t: 0.01,
            mode: ProfileMode::MaxLikelihood,
            bandwidth: None,
            seed: 0,
            allow_unconverged: false,
        }
    }
}

/// Time axis for synthesized profiles: multiples of `delta_t` from zero,
/// closed with the grid end so the profile always covers the full horizon.
pub fn profile_time_axis(grid: &SnapshotGrid, delta_t: f64) -> Result<Vec<f64>> {
    if !(delta_t > 0.0) || !delta_t.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "time step must be positive, got {delta_t}"
        )));
    }
    let end = grid.end();
    let mut times = Vec::new();
    let mut k = 0usize;
    loop {
        let t = k as f64 * delta_t;
        if t >= end - 1e-9 * end.max(delta_t) {
            break;
        }
        times.push(t);
        k += 1;
    }
    times.push(end);
    Ok(times)
}

/// A synthesized execution profile for one target context.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticProfile {
    pub context: ResourceContext,
    pub mode: ProfileMode,
    pub delta_t: f64,
    pub times: Vec<f64>,
    pub states: Vec<ExecutionState>,
}

/// Synthesizes a profile for `beta` on a `delta_t` time axis. Errors when the
/// solution did not converge unless the config allows best-effort output;
/// warns (but proceeds) when `beta` leaves the training catalog's bounding
/// box, where kernel conditioning extrapolates.
pub fn generate_profile(
    model: &BridgeModel,
    beta: &ResourceContext,
    cfg: &GenerateConfig,
) -> Result<SyntheticProfile> {
    if beta.dim() != model.context_dim() {
        return Err(Error::Dimension {
            what: "target context",
            expected: model.context_dim(),
            got: beta.dim(),
        });
    }
    if !model.solution.converged && !cfg.allow_unconverged {
        return Err(Error::NotConverged {
            iterations: model.solution.iterations,
            final_error: model.solution.final_error,
        });
    }
    if let Some(h) = &cfg.bandwidth {
        if h.len() != beta.dim() {
            return Err(Error::LengthMismatch {
                left: h.len(),
                right: beta.dim(),
            });
        }
        if h.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidConfig("bandwidths must be positive".into()));
        }
    }
    for c in 0..beta.dim() {
        let lo = model
            .contexts
            .iter()
            .map(|x| x.0[c])
            .fold(f64::INFINITY, f64::min);
        let hi = model
            .contexts
            .iter()
            .map(|x| x.0[c])
            .fold(f64::NEG_INFINITY, f64::max);
        if beta.0[c] < lo || beta.0[c] > hi {
            log::warn!(
                "target context component {c} = {} lies outside the training range [{lo}, {hi}]; \
                 generation extrapolates",
                beta.0[c]
            );
        }
    }

    let times = profile_time_axis(&model.grid, cfg.delta_t)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cached: Vec<Option<Array1<f64>>> = vec![None; model.n_snapshots() - 1];
    let mut states = Vec::with_capacity(times.len());
    for &t in &times {
        let (segment, lambda) = model.grid.locate(t)?;
        if cached[segment].is_none() {
            cached[segment] = Some(segment_weights(model, segment)?);
        }
        let weights = cached[segment].as_ref().unwrap();
        let joint = joint_from_weights(model, segment, lambda, weights)?;
        let h = match &cfg.bandwidth {
            Some(h) => h.clone(),
            None => silverman_bandwidth(&joint, beta.dim())?,
        };
        let cloud = condition_on_context(&joint, beta, &h)?;
        let state = match cfg.mode {
            ProfileMode::MaxLikelihood => max_likelihood_state(&cloud),
            ProfileMode::Mean => mean_state(&cloud),
            ProfileMode::Sample => sample_states(&cloud, 1, &mut rng).pop().expect("one draw"),
        };
        states.push(state);
    }
    Ok(SyntheticProfile {
        context: beta.clone(),
        mode: cfg.mode,
        delta_t: cfg.delta_t,
        times,
        states,
    })
}

/// Everything needed to reproduce a synthesized profile, stored beside its
/// CSV.
#[derive(Debug, Serialize, Deserialize)]
pub struct ProfileSidecar {
    pub context: Vec<f64>,
    pub mode: ProfileMode,
    pub delta_t: f64,
    /// `"silverman"` when bandwidths were selected per time step, `"fixed"`
    /// when supplied.
    pub bandwidth_policy: String,
    pub bandwidth: Option<Vec<f64>>,
    pub seed: u64,
    pub epsilon: f64,
    pub solver_iterations: usize,
    pub solver_final_error: f64,
    pub solver_converged: bool,
    pub dataset_hash: String,
    pub training_context_ids: Vec<String>,
}

impl ProfileSidecar {
    pub fn describe(model: &BridgeModel, profile: &SyntheticProfile, cfg: &GenerateConfig) -> Self {
        Self {
            context: profile.context.0.clone(),
            mode: profile.mode,
            delta_t: profile.delta_t,
            bandwidth_policy: if cfg.bandwidth.is_some() {
                "fixed".into()
            } else {
                "silverman".into()
            },
            bandwidth: cfg.bandwidth.clone(),
            seed: cfg.seed,
            epsilon: model.config.epsilon,
            solver_iterations: model.solution.iterations,
            solver_final_error: model.solution.final_error,
            solver_converged: model.solution.converged,
            dataset_hash: model.dataset_hash.clone(),
            training_context_ids: model.context_ids.clone(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        fs::write(path, json)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Writes a profile as CSV with a `t_seconds` column followed by one column
/// per state component.
pub fn write_profile_csv(
    profile: &SyntheticProfile,
    state_columns: &[String],
    path: &Path,
) -> Result<()> {
    let m = profile.states[0].dim();
    if state_columns.len() != m {
        return Err(Error::LengthMismatch {
            left: state_columns.len(),
            right: m,
        });
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t_seconds".to_string()];
    header.extend_from_slice(state_columns);
    w.write_record(&header)?;
    for (t, s) in profile.times.iter().zip(&profile.states) {
        let mut row = vec![t.to_string()];
        row.extend(s.0.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a profile CSV written by [`write_profile_csv`] back into a time axis
/// and state sequence.
pub fn read_profile_csv(path: &Path) -> Result<(Vec<f64>, Vec<ExecutionState>)> {
    let mut r = csv::Reader::from_path(path)?;
    {
        let headers = r.headers()?;
        if headers.is_empty() || &headers[0] != "t_seconds" {
            return Err(Error::InvalidData(format!(
                "profile csv {} must start with a t_seconds column",
                path.display()
            )));
        }
    }
    let mut times = Vec::new();
    let mut states = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let mut vals = rec.iter().map(|f| {
            f.parse::<f64>()
                .map_err(|_| Error::InvalidData(format!("bad number '{f}' in {}", path.display())))
        });
        let t = vals.next().ok_or_else(|| Error::InvalidData("empty row".into()))??;
        let state: Vec<f64> = vals.collect::<Result<_>>()?;
        if state.is_empty() {
            return Err(Error::InvalidData("profile row without state columns".into()));
        }
        times.push(t);
        states.push(ExecutionState(state));
    }
    if times.is_empty() {
        return Err(Error::InvalidData(format!("{} has no rows", path.display())));
    }
    Ok((times, states))
}
