//! Dataset ingestion and serialization.
//!
//! A dataset is a catalog of resource contexts plus a set of profiled runs,
//! stored as two CSV files named by a JSON manifest:
//!
//! * `contexts.csv` — header `context_id,<context columns…>`, one row per
//!   catalog entry;
//! * `profiles.csv` — header `run_id,context_id,t_seconds,<state columns…>`,
//!   rows grouped by run with strictly increasing times starting at 0.
//!
//! The manifest declares the column names and units, the state and context
//! dimensions, and the snapshot grid times used when fitting a model on the
//! data. A content hash over the manifest schema and the canonical CSV
//! serialization ties saved solver output to the exact data it was fit on.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::state::{ExecutionState, ProfileRecord, ResourceContext, SnapshotGrid};

/// JSON description of a dataset: file names, column schema, and grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub contexts_file: String,
    pub profiles_file: String,
    /// Execution state dimension m.
    pub m: usize,
    /// Resource context dimension b.
    pub b: usize,
    pub state_columns: Vec<String>,
    pub context_columns: Vec<String>,
    #[serde(default)]
    pub state_units: Vec<String>,
    #[serde(default)]
    pub context_units: Vec<String>,
    pub grid_times: Vec<f64>,
}

impl DatasetManifest {
    fn validate(&self) -> Result<()> {
        if self.m == 0 || self.state_columns.len() != self.m {
            return Err(Error::InvalidConfig(format!(
                "manifest declares m = {} but {} state columns",
                self.m,
                self.state_columns.len()
            )));
        }
        if self.b == 0 || self.context_columns.len() != self.b {
            return Err(Error::InvalidConfig(format!(
                "manifest declares b = {} but {} context columns",
                self.b,
                self.context_columns.len()
            )));
        }
        if !self.state_units.is_empty() && self.state_units.len() != self.m {
            return Err(Error::InvalidConfig(
                "state_units length must match state_columns".into(),
            ));
        }
        if !self.context_units.is_empty() && self.context_units.len() != self.b {
            return Err(Error::InvalidConfig(
                "context_units length must match context_columns".into(),
            ));
        }
        SnapshotGrid::new(self.grid_times.clone())?;
        Ok(())
    }
}

/// In-memory dataset: context catalog, profiled runs, and the manifest that
/// describes them.
#[derive(Debug, Clone)]
pub struct Dataset {
    manifest: DatasetManifest,
    context_ids: Vec<String>,
    contexts: Vec<ResourceContext>,
    records: Vec<ProfileRecord>,
    record_context_ids: Vec<String>,
}

impl Dataset {
    /// Assembles a dataset from parts, validating the schema:
    /// unique context ids, matching dimensions, nonnegative finite states,
    /// and every record's context id present in the catalog.
    pub fn new(
        manifest: DatasetManifest,
        context_ids: Vec<String>,
        contexts: Vec<ResourceContext>,
        records: Vec<ProfileRecord>,
        record_context_ids: Vec<String>,
    ) -> Result<Self> {
        manifest.validate()?;
        if context_ids.len() != contexts.len() {
            return Err(Error::LengthMismatch {
                left: context_ids.len(),
                right: contexts.len(),
            });
        }
        if records.len() != record_context_ids.len() {
            return Err(Error::LengthMismatch {
                left: records.len(),
                right: record_context_ids.len(),
            });
        }
        if contexts.is_empty() {
            return Err(Error::InvalidData("context catalog is empty".into()));
        }
        let mut seen = HashSet::new();
        for (id, ctx) in context_ids.iter().zip(&contexts) {
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateContext(id.clone()));
            }
            if ctx.dim() != manifest.b {
                return Err(Error::Dimension {
                    what: "resource context",
                    expected: manifest.b,
                    got: ctx.dim(),
                });
            }
            if ctx.0.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "context '{id}' has a non-finite component"
                )));
            }
        }
        let mut run_ids = HashSet::new();
        for (rec, cid) in records.iter().zip(&record_context_ids) {
            if !run_ids.insert(rec.run_id().to_string()) {
                return Err(Error::InvalidData(format!(
                    "duplicate run id '{}'",
                    rec.run_id()
                )));
            }
            let pos = context_ids
                .iter()
                .position(|c| c == cid)
                .ok_or_else(|| Error::UnknownContext(cid.clone()))?;
            if rec.context() != &contexts[pos] {
                return Err(Error::InvalidData(format!(
                    "run '{}' context disagrees with catalog entry '{cid}'",
                    rec.run_id()
                )));
            }
            if rec.state_dim() != manifest.m {
                return Err(Error::Dimension {
                    what: "execution state",
                    expected: manifest.m,
                    got: rec.state_dim(),
                });
            }
            for (t, state) in rec.samples() {
                if state.0.iter().any(|v| *v < 0.0) {
                    return Err(Error::InvalidData(format!(
                        "run '{}' has a negative state component at t = {t}",
                        rec.run_id()
                    )));
                }
            }
        }
        Ok(Dataset {
            manifest,
            context_ids,
            contexts,
            records,
            record_context_ids,
        })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn context_ids(&self) -> &[String] {
        &self.context_ids
    }

    pub fn contexts(&self) -> &[ResourceContext] {
        &self.contexts
    }

    pub fn records(&self) -> &[ProfileRecord] {
        &self.records
    }

    pub fn record_context_ids(&self) -> &[String] {
        &self.record_context_ids
    }

    pub fn state_dim(&self) -> usize {
        self.manifest.m
    }

    pub fn context_dim(&self) -> usize {
        self.manifest.b
    }

    pub fn grid(&self) -> Result<SnapshotGrid> {
        SnapshotGrid::new(self.manifest.grid_times.clone())
    }

    pub fn context_by_id(&self, id: &str) -> Result<&ResourceContext> {
        self.context_ids
            .iter()
            .position(|c| c == id)
            .map(|i| &self.contexts[i])
            .ok_or_else(|| Error::UnknownContext(id.to_string()))
    }

    pub fn records_for_context(&self, id: &str) -> Vec<&ProfileRecord> {
        self.records
            .iter()
            .zip(&self.record_context_ids)
            .filter(|(_, cid)| cid.as_str() == id)
            .map(|(r, _)| r)
            .collect()
    }

    /// Restricts the dataset to the given context ids (kept in catalog
    /// order), dropping runs of all other contexts.
    pub fn restrict(&self, ids: &[String]) -> Result<Dataset> {
        let mut keep = Vec::new();
        for id in ids {
            if !self.context_ids.contains(id) {
                return Err(Error::UnknownContext(id.clone()));
            }
        }
        for (i, id) in self.context_ids.iter().enumerate() {
            if ids.contains(id) {
                keep.push(i);
            }
        }
        let context_ids: Vec<String> = keep.iter().map(|&i| self.context_ids[i].clone()).collect();
        let contexts: Vec<ResourceContext> = keep.iter().map(|&i| self.contexts[i].clone()).collect();
        let mut records = Vec::new();
        let mut record_cids = Vec::new();
        for (rec, cid) in self.records.iter().zip(&self.record_context_ids) {
            if context_ids.contains(cid) {
                records.push(rec.clone());
                record_cids.push(cid.clone());
            }
        }
        Dataset::new(self.manifest.clone(), context_ids, contexts, records, record_cids)
    }

    /// SHA-256 over the manifest schema and the canonical CSV serialization.
    /// Identical datasets hash identically regardless of where they live on
    /// disk or how the files were formatted.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.schema_string().as_bytes());
        hasher.update(self.contexts_csv_string().as_bytes());
        hasher.update(self.profiles_csv_string().as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn schema_string(&self) -> String {
        format!(
            "m={};b={};state={};context={};grid={:?}",
            self.manifest.m,
            self.manifest.b,
            self.manifest.state_columns.join(","),
            self.manifest.context_columns.join(","),
            self.manifest.grid_times
        )
    }

    fn contexts_csv_string(&self) -> String {
        let mut out = String::from("context_id");
        for c in &self.manifest.context_columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (id, ctx) in self.context_ids.iter().zip(&self.contexts) {
            out.push_str(id);
            for v in &ctx.0 {
                out.push(',');
                out.push_str(&format!("{v}"));
            }
            out.push('\n');
        }
        out
    }

    fn profiles_csv_string(&self) -> String {
        let mut out = String::from("run_id,context_id,t_seconds");
        for c in &self.manifest.state_columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (rec, cid) in self.records.iter().zip(&self.record_context_ids) {
            for (t, state) in rec.samples() {
                out.push_str(rec.run_id());
                out.push(',');
                out.push_str(cid);
                out.push(',');
                out.push_str(&format!("{t}"));
                for v in &state.0 {
                    out.push(',');
                    out.push_str(&format!("{v}"));
                }
                out.push('\n');
            }
        }
        out
    }

    /// Writes `contexts.csv`, `profiles.csv`, and `manifest.json` into `dir`;
    /// returns the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(&self.manifest.contexts_file), self.contexts_csv_string())?;
        fs::write(dir.join(&self.manifest.profiles_file), self.profiles_csv_string())?;
        let manifest_path = dir.join("manifest.json");
        let mut json = serde_json::to_string_pretty(&self.manifest)?;
        json.push('\n');
        fs::write(&manifest_path, json)?;
        Ok(manifest_path)
    }

    /// Reads a dataset given its manifest path; CSV paths in the manifest are
    /// resolved relative to the manifest's directory.
    pub fn read(manifest_path: &Path) -> Result<Dataset> {
        let text = fs::read_to_string(manifest_path).map_err(|e| {
            Error::InvalidData(format!("cannot read manifest {}: {e}", manifest_path.display()))
        })?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        manifest.validate()?;
        let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let (context_ids, contexts) = read_contexts(&dir.join(&manifest.contexts_file), &manifest)?;
        let (records, record_cids) = read_profiles(
            &dir.join(&manifest.profiles_file),
            &manifest,
            &context_ids,
            &contexts,
        )?;
        Dataset::new(manifest, context_ids, contexts, records, record_cids)
    }
}

fn parse_float(field: &str, what: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::InvalidData(format!("cannot parse {what} value '{field}'")))?;
    if !v.is_finite() {
        return Err(Error::InvalidData(format!("non-finite {what} value '{field}'")));
    }
    Ok(v)
}

fn read_contexts(
    path: &Path,
    manifest: &DatasetManifest,
) -> Result<(Vec<String>, Vec<ResourceContext>)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| {
        Error::InvalidData(format!("cannot read contexts file {}: {e}", path.display()))
    })?;
    let headers = reader.headers()?.clone();
    let mut expected = vec!["context_id".to_string()];
    expected.extend(manifest.context_columns.iter().cloned());
    let got: Vec<String> = headers.iter().map(|h| h.trim().to_string()).collect();
    if got != expected {
        return Err(Error::InvalidData(format!(
            "contexts header mismatch: expected {expected:?}, got {got:?}"
        )));
    }
    let mut ids = Vec::new();
    let mut contexts = Vec::new();
    for row in reader.records() {
        let row = row?;
        if row.len() != 1 + manifest.b {
            return Err(Error::Dimension {
                what: "contexts row",
                expected: 1 + manifest.b,
                got: row.len(),
            });
        }
        ids.push(row[0].trim().to_string());
        let values: Result<Vec<f64>> = (1..row.len())
            .map(|k| parse_float(&row[k], "context"))
            .collect();
        contexts.push(ResourceContext(values?));
    }
    Ok((ids, contexts))
}

fn read_profiles(
    path: &Path,
    manifest: &DatasetManifest,
    context_ids: &[String],
    contexts: &[ResourceContext],
) -> Result<(Vec<ProfileRecord>, Vec<String>)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| {
        Error::InvalidData(format!("cannot read profiles file {}: {e}", path.display()))
    })?;
    let headers = reader.headers()?.clone();
    let mut expected = vec!["run_id".to_string(), "context_id".to_string(), "t_seconds".to_string()];
    expected.extend(manifest.state_columns.iter().cloned());
    let got: Vec<String> = headers.iter().map(|h| h.trim().to_string()).collect();
    if got != expected {
        return Err(Error::InvalidData(format!(
            "profiles header mismatch: expected {expected:?}, got {got:?}"
        )));
    }

    let mut records = Vec::new();
    let mut record_cids = Vec::new();
    let mut current_run: Option<(String, String, Vec<(f64, ExecutionState)>)> = None;
    let mut finished_runs: HashSet<String> = HashSet::new();

    let flush = |run: Option<(String, String, Vec<(f64, ExecutionState)>)>,
                     records: &mut Vec<ProfileRecord>,
                     record_cids: &mut Vec<String>|
     -> Result<()> {
        if let Some((run_id, cid, samples)) = run {
            let pos = context_ids
                .iter()
                .position(|c| c == &cid)
                .ok_or_else(|| Error::UnknownContext(cid.clone()))?;
            records.push(ProfileRecord::new(run_id, contexts[pos].clone(), samples)?);
            record_cids.push(cid);
        }
        Ok(())
    };

    for row in reader.records() {
        let row = row?;
        if row.len() != 3 + manifest.m {
            return Err(Error::Dimension {
                what: "profiles row",
                expected: 3 + manifest.m,
                got: row.len(),
            });
        }
        let run_id = row[0].trim().to_string();
        let cid = row[1].trim().to_string();
        let t = parse_float(&row[2], "time")?;
        let values: Result<Vec<f64>> = (3..row.len())
            .map(|k| parse_float(&row[k], "state"))
            .collect();
        let state = ExecutionState(values?);

        let start_new = match &current_run {
            Some((rid, rcid, _)) => {
                if rid != &run_id {
                    true
                } else if rcid != &cid {
                    return Err(Error::InvalidData(format!(
                        "run '{run_id}' appears under two context ids ('{rcid}' and '{cid}')"
                    )));
                } else {
                    false
                }
            }
            None => true,
        };
        if start_new {
            if !finished_runs.insert(run_id.clone()) {
                return Err(Error::InvalidData(format!(
                    "rows for run '{run_id}' are not contiguous"
                )));
            }
            flush(current_run.take(), &mut records, &mut record_cids)?;
            current_run = Some((run_id, cid, vec![(t, state)]));
        } else if let Some((_, _, samples)) = &mut current_run {
            samples.push((t, state));
        }
    }
    flush(current_run.take(), &mut records, &mut record_cids)?;
    if records.is_empty() {
        return Err(Error::InvalidData("profiles file contains no runs".into()));
    }
    Ok((records, record_cids))
}

/// Picks a training subset of `fraction` · |catalog| contexts (rounded up,
/// at least 2). The componentwise-minimum and -maximum catalog entries are
/// always included when they exist so that held-out contexts can be bracketed;
/// the rest are drawn without replacement using the given seed. Returned ids
/// preserve catalog order.
pub fn select_training_contexts(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Vec<String>> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "training fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let n = dataset.contexts().len();
    let want = ((fraction * n as f64).ceil() as usize).clamp(2.min(n), n);

    let mut chosen: Vec<usize> = Vec::new();
    let extreme = |cmp: &dyn Fn(&ResourceContext, &ResourceContext) -> bool| -> Option<usize> {
        (0..n).find(|&i| {
            dataset
                .contexts()
                .iter()
                .all(|other| cmp(&dataset.contexts()[i], other))
        })
    };
    if let Some(imin) = extreme(&|a, b| a.dominated_by(b)) {
        chosen.push(imin);
    }
    if let Some(imax) = extreme(&|a, b| b.dominated_by(a)) {
        if !chosen.contains(&imax) {
            chosen.push(imax);
        }
    }

    let mut rest: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rest.shuffle(&mut rng);
    for i in rest {
        if chosen.len() >= want {
            break;
        }
        chosen.push(i);
    }
    chosen.sort_unstable();
    Ok(chosen
        .into_iter()
        .map(|i| dataset.context_ids()[i].clone())
        .collect())
}
