//! Accuracy evaluation of synthesized profiles against measured runs.
//!
//! The headline metric is dynamic time warping between a synthesized profile
//! and the mean measured profile of the same context, normalized by the
//! reference length and its peak state magnitude so scores are comparable
//! across contexts and workloads. A naive baseline — averaging the profiles
//! of the two catalog contexts that bracket the target componentwise — gives
//! the improvement denominator.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bridge::BridgeModel;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::generator::{generate_profile, profile_time_axis, GenerateConfig};
use crate::state::{ExecutionState, ProfileRecord, ResourceContext, SnapshotGrid};

/// Dynamic time warping distance between two state sequences with unit steps
/// (advance left, advance right, or both) and Euclidean local cost. Returns
/// the distance and the optimal alignment as index pairs; among equal-cost
/// predecessors the backtrack prefers advancing both sequences, then the
/// first, so the path is deterministic.
pub fn dtw_distance(
    a: &[ExecutionState],
    b: &[ExecutionState],
) -> Result<(f64, Vec<(usize, usize)>)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidData("cannot align an empty profile".into()));
    }
    let dim = a[0].dim();
    for s in a.iter().chain(b.iter()) {
        if s.dim() != dim {
            return Err(Error::Dimension {
                what: "profile state",
                expected: dim,
                got: s.dim(),
            });
        }
    }
    let (la, lb) = (a.len(), b.len());
    let mut acc = vec![f64::INFINITY; (la + 1) * (lb + 1)];
    let idx = |i: usize, j: usize| i * (lb + 1) + j;
    acc[idx(0, 0)] = 0.0;
    for i in 1..=la {
        for j in 1..=lb {
            let local = a[i - 1].distance(&b[j - 1]);
            let best = acc[idx(i - 1, j - 1)]
                .min(acc[idx(i - 1, j)])
                .min(acc[idx(i, j - 1)]);
            acc[idx(i, j)] = local + best;
        }
    }
    let mut path = Vec::with_capacity(la + lb);
    let (mut i, mut j) = (la, lb);
    while i > 0 && j > 0 {
        path.push((i - 1, j - 1));
        let diag = acc[idx(i - 1, j - 1)];
        let up = acc[idx(i - 1, j)];
        let left = acc[idx(i, j - 1)];
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    path.reverse();
    Ok((acc[idx(la, lb)], path))
}

/// DTW distance divided by the reference's sample count and peak state norm,
/// making scores dimensionless and length-independent. The reference is the
/// second argument; a reference that never leaves the origin has no scale.
pub fn normalized_dtw(generated: &[ExecutionState], reference: &[ExecutionState]) -> Result<f64> {
    let peak = reference
        .iter()
        .map(|s| s.norm())
        .fold(0.0f64, f64::max);
    if !(peak > 0.0) {
        return Err(Error::ZeroReference);
    }
    let (dist, _) = dtw_distance(generated, reference)?;
    Ok(dist / (reference.len() as f64 * peak))
}

/// Pointwise mean of several runs' states at the given times (zero-order hold
/// between samples, zero after a run ends).
pub fn mean_profile(records: &[&ProfileRecord], times: &[f64]) -> Result<Vec<ExecutionState>> {
    if records.is_empty() {
        return Err(Error::InvalidData("no runs to average".into()));
    }
    if times.is_empty() {
        return Err(Error::InvalidData("no times to evaluate".into()));
    }
    let m = records[0].state_dim();
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let mut acc = vec![0.0; m];
        for r in records {
            let s = r.state_at(t);
            if s.dim() != m {
                return Err(Error::Dimension {
                    what: "run state",
                    expected: m,
                    got: s.dim(),
                });
            }
            for c in 0..m {
                acc[c] += s.0[c];
            }
        }
        for v in &mut acc {
            *v /= records.len() as f64;
        }
        out.push(ExecutionState(acc));
    }
    Ok(out)
}

/// Picks the tightest catalog context on one side of `beta`: among
/// candidates, the one with the coordinate sum closest to `beta`'s
/// (largest sum below, smallest sum above), ties broken by lexicographically
/// smallest values for determinism.
fn tightest<'a>(
    candidates: &[(&'a String, &'a ResourceContext)],
    prefer_large_sum: bool,
) -> Option<&'a String> {
    candidates
        .iter()
        .min_by(|(_, x), (_, y)| {
            let sx: f64 = x.0.iter().sum();
            let sy: f64 = y.0.iter().sum();
            let primary = if prefer_large_sum {
                sy.partial_cmp(&sx).unwrap()
            } else {
                sx.partial_cmp(&sy).unwrap()
            };
            primary.then_with(|| x.0.partial_cmp(&y.0).unwrap())
        })
        .map(|(id, _)| *id)
}

/// Baseline prediction for `beta`: average the mean measured profiles of the
/// two catalog contexts that bracket it componentwise (the tightest from
/// below and from above). A context already in the catalog brackets itself
/// on both sides, so the baseline reproduces its own mean profile.
pub fn baseline_profile(
    dataset: &Dataset,
    beta: &ResourceContext,
    times: &[f64],
) -> Result<Vec<ExecutionState>> {
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for (id, ctx) in dataset.context_ids().iter().zip(dataset.contexts()) {
        if ctx.dominated_by(beta) {
            lower.push((id, ctx));
        }
        if beta.dominated_by(ctx) {
            upper.push((id, ctx));
        }
    }
    let lower_id = tightest(&lower, true).ok_or(Error::NoBracket)?;
    let upper_id = tightest(&upper, false).ok_or(Error::NoBracket)?;

    let lo = mean_profile(&dataset.records_for_context(lower_id), times)?;
    let hi = mean_profile(&dataset.records_for_context(upper_id), times)?;
    Ok(lo
        .iter()
        .zip(&hi)
        .map(|(a, b)| {
            ExecutionState(
                a.0.iter()
                    .zip(&b.0)
                    .map(|(x, y)| 0.5 * (x + y))
                    .collect(),
            )
        })
        .collect())
}

/// Per-context evaluation outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub context_id: String,
    pub dtw_generated: f64,
    pub dtw_baseline: f64,
    /// Percent reduction of the baseline's distance; `None` when the baseline
    /// distance is zero.
    pub improvement_pct: Option<f64>,
}

/// Evaluation over a set of held-out contexts, plus the cost of the training
/// data that bought it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub rows: Vec<AccuracyRow>,
    pub mean_dtw_generated: f64,
    pub mean_dtw_baseline: f64,
    pub mean_improvement_pct: Option<f64>,
    /// Trained share of the context catalog.
    pub training_fraction: f64,
    /// Trained share of total measured run time.
    pub relative_measurement_time: f64,
    /// How references were built, recorded for reproducibility.
    pub reference: String,
}

/// Percent by which `generated` undercuts `baseline`.
pub fn improvement_pct(baseline: f64, generated: f64) -> Option<f64> {
    if baseline > 0.0 {
        Some(100.0 * (baseline - generated) / baseline)
    } else {
        None
    }
}

fn aggregate(
    rows: Vec<AccuracyRow>,
    truth: &Dataset,
    training_ids: &[String],
    reference: String,
) -> AccuracyReport {
    let n = rows.len() as f64;
    let mean_gen = rows.iter().map(|r| r.dtw_generated).sum::<f64>() / n;
    let mean_base = rows.iter().map(|r| r.dtw_baseline).sum::<f64>() / n;
    let total_time: f64 = truth.records().iter().map(|r| r.duration()).sum();
    let train_time: f64 = truth
        .records()
        .iter()
        .zip(truth.record_context_ids())
        .filter(|(_, id)| training_ids.contains(id))
        .map(|(r, _)| r.duration())
        .sum();
    AccuracyReport {
        mean_improvement_pct: improvement_pct(mean_base, mean_gen),
        rows,
        mean_dtw_generated: mean_gen,
        mean_dtw_baseline: mean_base,
        training_fraction: training_ids.len() as f64 / truth.context_ids().len() as f64,
        relative_measurement_time: if total_time > 0.0 {
            train_time / total_time
        } else {
            0.0
        },
        reference,
    }
}

/// Scores already-synthesized profiles: each is aligned against the mean of
/// the truth dataset's measured runs for that context, sampled on the same
/// `delta_t` axis, and compared to the bracketing baseline built from the
/// training contexts' runs.
pub fn score_profiles(
    truth: &Dataset,
    training_ids: &[String],
    profiles: &[(String, Vec<ExecutionState>)],
    delta_t: f64,
) -> Result<AccuracyReport> {
    if profiles.is_empty() {
        return Err(Error::InvalidData("no profiles to score".into()));
    }
    let grid = truth.grid()?;
    let times = profile_time_axis(&grid, delta_t)?;
    let training = truth.restrict(training_ids)?;
    let mut rows = Vec::with_capacity(profiles.len());
    for (id, states) in profiles {
        let beta = truth.context_by_id(id)?;
        let records = truth.records_for_context(id);
        if records.is_empty() {
            return Err(Error::InvalidData(format!(
                "no measured runs for context '{id}' to evaluate against"
            )));
        }
        let reference = mean_profile(&records, &times)?;
        let baseline = baseline_profile(&training, beta, &times)?;
        let dtw_generated = normalized_dtw(states, &reference)?;
        let dtw_baseline = normalized_dtw(&baseline, &reference)?;
        rows.push(AccuracyRow {
            context_id: id.clone(),
            dtw_generated,
            dtw_baseline,
            improvement_pct: improvement_pct(dtw_baseline, dtw_generated),
        });
    }
    Ok(aggregate(
        rows,
        truth,
        training_ids,
        format!("mean of measured runs per context, sampled every {delta_t} s"),
    ))
}

/// Synthesizes a profile for each requested context with the model and scores
/// it against the truth dataset. The truth dataset must use the same snapshot
/// grid the model was fit on.
pub fn accuracy_report(
    truth: &Dataset,
    model: &BridgeModel,
    score_ids: &[String],
    cfg: &GenerateConfig,
) -> Result<AccuracyReport> {
    if score_ids.is_empty() {
        return Err(Error::InvalidData("no contexts to evaluate".into()));
    }
    let grid = truth.grid()?;
    if grid.times() != model.grid.times() {
        return Err(Error::InvalidData(
            "evaluation dataset grid disagrees with the model's snapshot grid".into(),
        ));
    }
    let mut profiles = Vec::with_capacity(score_ids.len());
    for id in score_ids {
        let beta = truth.context_by_id(id)?;
        let profile = generate_profile(model, beta, cfg)?;
        profiles.push((id.clone(), profile.states));
    }
    score_profiles(truth, &model.context_ids, &profiles, cfg.delta_t)
}

/// One point of the accuracy-versus-training-cost trade-off curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlotPoint {
    pub training_fraction: f64,
    pub mean_dtw: f64,
    pub relative_measurement_time: f64,
}

impl From<&AccuracyReport> for PlotPoint {
    fn from(r: &AccuracyReport) -> Self {
        PlotPoint {
            training_fraction: r.training_fraction,
            mean_dtw: r.mean_dtw_generated,
            relative_measurement_time: r.relative_measurement_time,
        }
    }
}

/// Writes per-context scores as CSV and the aggregates as JSON next to it.
pub fn write_report(report: &AccuracyReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("report.csv"))?;
    w.write_record(["context_id", "dtw_generated", "dtw_baseline", "improvement_pct"])?;
    for row in &report.rows {
        w.write_record(&[
            row.context_id.clone(),
            row.dtw_generated.to_string(),
            row.dtw_baseline.to_string(),
            row.improvement_pct.map_or(String::new(), |v| v.to_string()),
        ])?;
    }
    w.flush()?;

    #[derive(Serialize)]
    struct Summary<'a> {
        mean_dtw_generated: f64,
        mean_dtw_baseline: f64,
        mean_improvement_pct: Option<f64>,
        training_fraction: f64,
        relative_measurement_time: f64,
        contexts_evaluated: usize,
        reference: &'a str,
    }
    let summary = Summary {
        mean_dtw_generated: report.mean_dtw_generated,
        mean_dtw_baseline: report.mean_dtw_baseline,
        mean_improvement_pct: report.mean_improvement_pct,
        training_fraction: report.training_fraction,
        relative_measurement_time: report.relative_measurement_time,
        contexts_evaluated: report.rows.len(),
        reference: &report.reference,
    };
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    fs::write(dir.join("report.json"), json)?;
    Ok(())
}

/// Writes trade-off curve points as CSV, one row per training fraction.
pub fn write_plot_data(points: &[PlotPoint], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["training_fraction", "mean_dtw", "relative_measurement_time"])?;
    for p in points {
        w.write_record(&[
            p.training_fraction.to_string(),
            p.mean_dtw.to_string(),
            p.relative_measurement_time.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Convenience for tests and the evaluation pipeline: the time axis a
/// synthesized profile uses for a given grid.
pub fn reference_times(grid: &SnapshotGrid, delta_t: f64) -> Result<Vec<f64>> {
    profile_time_axis(grid, delta_t)
}
