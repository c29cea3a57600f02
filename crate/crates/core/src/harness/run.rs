//! Seeded experiment execution: data, training, snapshots, evaluation.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DataSource, FilterMode, RunConfig};
use super::report::{build_report, emit_report, Report, ReportFormat};
use crate::data::{apply_filter, load_sparse_text, variance_filter_fit, Dataset, FeatureFilter};
use crate::error::{Error, Result};
use crate::metrics::EvalRecord;
use crate::nn::{MlpModel, OptimizerState};
use crate::rng::stage_rng;
use crate::scenarios::{build_cil_stream, build_dil_stream, ScenarioKind, ScenarioStream};
use crate::snapshot::ModelSnapshot;
use crate::strategies::{build_strategy, run_experience};
use crate::synth::{synth_cil_generate_ordered, synth_dil_generate};

/// Identity residuals above this abort the seed as a numeric error.
pub const IDENTITY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub data_s: f64,
    pub train_s: f64,
    pub eval_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub experience: usize,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedManifest {
    pub seed: u32,
    /// `None` when the seed completed.
    pub error: Option<String>,
    pub snapshots: Vec<SnapshotEntry>,
    pub timings: StageTimings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub digest: String,
    pub data_digest: String,
    pub seeds: Vec<SeedManifest>,
    pub reports: Vec<PathBuf>,
    pub total_s: f64,
}

impl RunManifest {
    pub fn failed_seeds(&self) -> Vec<u32> {
        self.seeds.iter().filter(|s| s.error.is_some()).map(|s| s.seed).collect()
    }
}

/// Evaluation output of one completed seed.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u32,
    pub kind: ScenarioKind,
    pub experiences: usize,
    pub class_count: usize,
    pub records: Vec<EvalRecord>,
}

impl SeedRun {
    pub fn record(&self, k: usize, j: usize) -> Option<&EvalRecord> {
        self.records.iter().find(|r| r.update == k && r.test == j)
    }

    /// Largest `|(A_old - A_new) - (NFR - PFR)|` over all records.
    pub fn max_identity_residual(&self) -> f64 {
        self.records.iter().filter_map(|r| r.identity_residual()).fold(0.0, |m, r| m.max(r.abs()))
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub report: Report,
    pub runs: Vec<SeedRun>,
}

/// Builds the (filtered) stream for one seed.
pub fn build_stream(cfg: &RunConfig, seed: u32) -> Result<ScenarioStream> {
    Ok(build_stream_with_filter(cfg, seed)?.0)
}

/// Like [`build_stream`], also returning the fitted filter (if any).
pub fn build_stream_with_filter(cfg: &RunConfig, seed: u32) -> Result<(ScenarioStream, Option<FeatureFilter>)> {
    let seed = u64::from(seed);
    let stream = match cfg.data.source {
        DataSource::Synth => {
            let content = cfg.data.synth_seed.unwrap_or(seed);
            match cfg.scenario {
                ScenarioKind::Dil => synth_dil_generate(&cfg.synth, content)?,
                ScenarioKind::Cil => synth_cil_generate_ordered(&cfg.synth, content, seed)?,
            }
        }
        DataSource::File => {
            let path = cfg.data.path.as_ref().ok_or_else(|| Error::Config("data.path is required".into()))?;
            let ds = load_sparse_text(path, cfg.scenario == ScenarioKind::Dil)?;
            let frac = cfg.train_fraction();
            match cfg.scenario {
                ScenarioKind::Dil => build_dil_stream(&ds, cfg.data.window_days, frac, seed)?,
                ScenarioKind::Cil => build_cil_stream(&ds, cfg.data.classes_per_experience, seed, frac)?,
            }
        }
    };
    let filter = match cfg.data.filter {
        FilterMode::None => return Ok((stream, None)),
        FilterMode::FirstSplit => variance_filter_fit(&stream.experiences()[0].train, cfg.data.variance_threshold),
        FilterMode::Global => {
            let train: Vec<_> = stream.experiences().iter().flat_map(|e| e.train.samples().iter().cloned()).collect();
            let ds = Dataset::new(train, stream.feature_dim(), stream.class_count())?;
            variance_filter_fit(&ds, cfg.data.variance_threshold)
        }
    };
    info!("variance filter keeps {} of {} features", filter.output_dim(), stream.feature_dim());
    let stream = stream.map_datasets(|d| apply_filter(&filter, d))?;
    Ok((stream, Some(filter)))
}

pub fn seed_dir(out: &Path, seed: u32) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

/// Variance filter fitted for `seed`, needed to map raw test files into
/// the snapshot's feature space.
pub fn filter_path(out: &Path, seed: u32) -> PathBuf {
    seed_dir(out, seed).join("filter.txt")
}

pub fn snapshot_path(out: &Path, seed: u32, k: usize) -> PathBuf {
    seed_dir(out, seed).join(format!("snapshot_{k}.bin"))
}

/// Test experiences evaluated after update `k`: all of them in DIL (backward
/// and forward), the seen ones in CIL.
fn eval_tests(kind: ScenarioKind, k: usize, total: usize) -> std::ops::RangeInclusive<usize> {
    match kind {
        ScenarioKind::Dil => 1..=total,
        ScenarioKind::Cil => 1..=k,
    }
}

fn run_seed(cfg: &RunConfig, seed: u32, timings: &mut StageTimings, snaps: &mut Vec<SnapshotEntry>) -> Result<SeedRun> {
    let out = &cfg.output.dir;
    let t = Instant::now();
    let (stream, filter) = build_stream_with_filter(cfg, seed)?;
    timings.data_s = t.elapsed().as_secs_f64();

    fs::create_dir_all(seed_dir(out, seed))?;
    if let Some(f) = filter {
        f.write(fs::File::create(filter_path(out, seed))?)?;
    }
    let mut rng = stage_rng(u64::from(seed), "init", 0);
    let mut model = MlpModel::init(stream.feature_dim(), cfg.train.hidden, stream.class_count(), &mut rng)?;
    let mut opt = OptimizerState::new(model.param_count(), cfg.train.learning_rate, cfg.train.momentum);
    let mut strategy = build_strategy(&cfg.strategy, stream.kind(), u64::from(seed))?;
    let total = stream.len();
    let mut records = Vec::new();

    for exp in stream.experiences() {
        let k = exp.id;
        let t = Instant::now();
        let snap = run_experience(&cfg.train, &mut strategy, &cfg.pct, &mut model, &mut opt, exp, &stream, seed)?;
        let path = snapshot_path(out, seed, k);
        snap.save(&path)?;
        snaps.push(SnapshotEntry { experience: k, path });
        timings.train_s += t.elapsed().as_secs_f64();

        let t = Instant::now();
        let old = if k > 1 { Some(ModelSnapshot::load(snapshot_path(out, seed, k - 1))?) } else { None };
        for j in eval_tests(stream.kind(), k, total) {
            let test = &stream.experiences()[j - 1].test;
            let refs = test.refs();
            let new_preds = snap.predict(&refs)?;
            let old_preds = old.as_ref().map(|o| o.predict(&refs)).transpose()?;
            let rec = EvalRecord::new(k, j, &test.labels(), &new_preds, old_preds.as_deref(), stream.class_count())?;
            if let Some(r) = rec.identity_residual() {
                if r.abs() > IDENTITY_TOLERANCE {
                    return Err(Error::Numeric(format!("forgetting identity residual {r:e} at update {k}, test {j}")));
                }
            }
            records.push(rec);
        }
        timings.eval_s += t.elapsed().as_secs_f64();

        if !cfg.output.keep_all && k > 2 {
            let stale = snapshot_path(out, seed, k - 2);
            fs::remove_file(&stale)?;
            snaps.retain(|s| s.path != stale);
        }
    }
    Ok(SeedRun { seed, kind: stream.kind(), experiences: total, class_count: stream.class_count(), records })
}

/// Runs every seed, writes snapshots and reports under the output directory.
///
/// A failing seed is recorded in the manifest and the others proceed; the
/// run fails only when no seed completes.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let out = cfg.output.dir.clone();
    fs::create_dir_all(&out)?;

    let results: Vec<(SeedManifest, Result<SeedRun>)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut timings = StageTimings::default();
            let mut snaps = Vec::new();
            let res = run_seed(cfg, seed, &mut timings, &mut snaps);
            if let Err(e) = &res {
                warn!("seed {seed} failed: {e}");
            }
            let error = res.as_ref().err().map(|e| e.to_string());
            (SeedManifest { seed, error, snapshots: snaps, timings }, res)
        })
        .collect();

    let mut seeds = Vec::new();
    let mut runs = Vec::new();
    let mut first_err = None;
    for (m, r) in results {
        seeds.push(m);
        match r {
            Ok(run) => runs.push(run),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    if runs.is_empty() {
        return Err(first_err.expect("at least one seed is configured"));
    }

    let report = build_report(cfg, &runs)?;
    let reports = emit_report(&report, &out, &[ReportFormat::Csv, ReportFormat::Summary, ReportFormat::Json])?;
    let mut manifest =
        RunManifest { digest: cfg.digest(), data_digest: cfg.data_digest(), seeds, reports, total_s: 0.0 };
    manifest.total_s = start.elapsed().as_secs_f64();
    let path = out.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
    Ok(RunOutcome { manifest, report, runs })
}
