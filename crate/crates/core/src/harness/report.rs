//! Per-seed metric curves, cross-seed aggregation and report files.
//!
//! CSV layout, one row per point:
//!
//! ```text
//! metric,mode,update,value,seed,std,worst
//! nfr_mw,backward,2,0.0200,0,,
//! nfr_mw,backward,2,0.0250,mean,0.0071,
//! nfr_mw,backward,all,0.0231,mean,0.0040,0.0300
//! ```
//!
//! Per-seed rows leave `std` and `worst` empty. Aggregate rows carry the seed
//! tag `mean`; rows with update `all` hold the mean over updates, and the
//! aggregate `all` row also holds the worst point of the mean curve.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::run::SeedRun;
use crate::error::Result;
use crate::metrics::{
    backward_aggregate, backward_span, classification_metrics, forgetting, forward_aggregate, seed_aggregate,
    AccuracyTable, ClassSel, EvalRecord, ForgettingMode, SeedAggregate, Worse,
};
use crate::pct::PctConfig;
use crate::scenarios::ScenarioKind;
use crate::synth::{GOODWARE, MALWARE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Backward,
    Forward,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Backward => "backward",
            Mode::Forward => "forward",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedCurve {
    pub seed: u32,
    /// Value after update `k` at index `k - 1`.
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub metric: String,
    pub mode: Mode,
    pub worse: Worse,
    pub per_seed: Vec<SeedCurve>,
    pub aggregate: SeedAggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub digest: String,
    pub data_digest: String,
    pub scenario: ScenarioKind,
    pub strategy: String,
    pub pct: PctConfig,
    pub forgetting_mode: ForgettingMode,
    pub experiences: usize,
    pub seeds: Vec<u32>,
    pub failed_seeds: Vec<u32>,
    pub max_identity_residual: f64,
    pub curves: Vec<Curve>,
}

impl Report {
    pub fn curve(&self, metric: &str, mode: Mode) -> Option<&Curve> {
        self.curves.iter().find(|c| c.metric == metric && c.mode == mode)
    }

    /// Mean over updates of the seed-mean curve (the table cell).
    pub fn cell(&self, metric: &str, mode: Mode) -> Option<f64> {
        self.curve(metric, mode)?.aggregate.overall_mean
    }

    pub fn has_mode(&self, mode: Mode) -> bool {
        self.curves.iter().any(|c| c.mode == mode)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Summary,
    Json,
}

impl ReportFormat {
    pub fn file_name(self) -> &'static str {
        match self {
            ReportFormat::Csv => "report.csv",
            ReportFormat::Summary => "summary.txt",
            ReportFormat::Json => "report.json",
        }
    }
}

type RecordMetric = fn(&EvalRecord) -> Option<f64>;

fn metric_table(kind: ScenarioKind) -> Vec<(&'static str, Worse, RecordMetric)> {
    let flips_all: [(&'static str, Worse, RecordMetric); 2] = [
        ("nfr_all", Worse::Higher, |r| r.flips(ClassSel::All).map(|f| f.nfr)),
        ("pfr_all", Worse::Lower, |r| r.flips(ClassSel::All).map(|f| f.pfr)),
    ];
    match kind {
        ScenarioKind::Dil => {
            let mut v: Vec<(&'static str, Worse, RecordMetric)> = vec![
                ("accuracy", Worse::Lower, |r| Some(r.accuracy())),
                ("precision_mw", Worse::Lower, |r| Some(classification_metrics(&r.confusion(MALWARE)).precision)),
                ("recall_mw", Worse::Lower, |r| Some(classification_metrics(&r.confusion(MALWARE)).recall)),
                ("f1_mw", Worse::Lower, |r| Some(classification_metrics(&r.confusion(MALWARE)).f1)),
                ("nfr_mw", Worse::Higher, |r| r.flips(ClassSel::Class(MALWARE)).map(|f| f.nfr)),
                ("pfr_mw", Worse::Lower, |r| r.flips(ClassSel::Class(MALWARE)).map(|f| f.pfr)),
                ("nfr_gw", Worse::Higher, |r| r.flips(ClassSel::Class(GOODWARE)).map(|f| f.nfr)),
                ("pfr_gw", Worse::Lower, |r| r.flips(ClassSel::Class(GOODWARE)).map(|f| f.pfr)),
            ];
            v.extend(flips_all);
            v
        }
        ScenarioKind::Cil => {
            let mut v: Vec<(&'static str, Worse, RecordMetric)> =
                vec![("accuracy", Worse::Lower, |r| Some(r.accuracy()))];
            v.extend(flips_all);
            v
        }
    }
}

fn is_flip_metric(name: &str) -> bool {
    name.starts_with("nfr") || name.starts_with("pfr")
}

/// One seed's curve for `metric` in `mode`.
pub fn seed_curve(run: &SeedRun, name: &str, mode: Mode, metric: RecordMetric) -> Result<Vec<Option<f64>>> {
    (1..=run.experiences)
        .map(|k| match mode {
            Mode::Backward => {
                // Flip rates need classes known to both models; accuracy-type
                // metrics cover every experience the model has seen.
                let span = if is_flip_metric(name) { backward_span(k, run.kind) } else { k };
                if span == 0 {
                    return Ok(None);
                }
                backward_aggregate(&run.records, k, span, metric)
            }
            Mode::Forward => forward_aggregate(&run.records, k, run.experiences, run.kind, metric),
        })
        .collect()
}

/// Forgetting after each update, `None` for the first.
pub fn forgetting_curve(run: &SeedRun, mode: ForgettingMode) -> Result<Vec<Option<f64>>> {
    let n = run.experiences;
    let mut table = AccuracyTable::new(n, n);
    for r in &run.records {
        table.set(r.update, r.test, r.accuracy());
    }
    let mut out = vec![None];
    for k in 2..=n {
        out.push(Some(forgetting(&table, k, mode)?.average));
    }
    Ok(out)
}

fn make_curve(metric: &str, mode: Mode, worse: Worse, per_seed: Vec<SeedCurve>) -> Result<Curve> {
    let values: Vec<Vec<Option<f64>>> = per_seed.iter().map(|s| s.values.clone()).collect();
    let aggregate = seed_aggregate(&values, worse)?;
    Ok(Curve { metric: metric.to_string(), mode, worse, per_seed, aggregate })
}

/// Aggregates completed seeds into a report.
pub fn build_report(cfg: &RunConfig, runs: &[SeedRun]) -> Result<Report> {
    let kind = cfg.scenario;
    let modes: &[Mode] = match kind {
        ScenarioKind::Dil => &[Mode::Backward, Mode::Forward],
        ScenarioKind::Cil => &[Mode::Backward],
    };
    let mut curves = Vec::new();
    for &mode in modes {
        for (name, worse, metric) in metric_table(kind) {
            let per_seed = runs
                .iter()
                .map(|r| Ok(SeedCurve { seed: r.seed, values: seed_curve(r, name, mode, metric)? }))
                .collect::<Result<Vec<_>>>()?;
            curves.push(make_curve(name, mode, worse, per_seed)?);
        }
        if mode == Mode::Backward {
            let per_seed = runs
                .iter()
                .map(|r| Ok(SeedCurve { seed: r.seed, values: forgetting_curve(r, cfg.metrics.forgetting)? }))
                .collect::<Result<Vec<_>>>()?;
            curves.push(make_curve("forgetting", mode, Worse::Higher, per_seed)?);
        }
    }
    let seeds: Vec<u32> = runs.iter().map(|r| r.seed).collect();
    let failed_seeds = cfg.seeds.iter().copied().filter(|s| !seeds.contains(s)).collect();
    let mut strategy = cfg.strategy.name.clone();
    if cfg.pct.enabled {
        strategy.push_str("+pct");
    }
    Ok(Report {
        digest: cfg.digest(),
        data_digest: cfg.data_digest(),
        scenario: kind,
        strategy,
        pct: cfg.pct,
        forgetting_mode: cfg.metrics.forgetting,
        experiences: runs[0].experiences,
        seeds,
        failed_seeds,
        max_identity_residual: runs.iter().map(SeedRun::max_identity_residual).fold(0.0, f64::max),
        curves,
    })
}

fn fmt_value(v: f64) -> String {
    format!("{v:.4}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_value).unwrap_or_default()
}

pub fn render_csv(report: &Report) -> String {
    let mut s = String::from("metric,mode,update,value,seed,std,worst\n");
    for c in &report.curves {
        let (m, mode) = (&c.metric, c.mode.as_str());
        for sc in &c.per_seed {
            for (i, v) in sc.values.iter().enumerate() {
                if let Some(v) = v {
                    let _ = writeln!(s, "{m},{mode},{},{},{},,", i + 1, fmt_value(*v), sc.seed);
                }
            }
            let overall = crate::metrics::mean_present(sc.values.iter().copied());
            if let Some(v) = overall {
                let _ = writeln!(s, "{m},{mode},all,{},{},,", fmt_value(v), sc.seed);
            }
        }
        let a = &c.aggregate;
        for (i, (mean, std)) in a.mean.iter().zip(&a.std).enumerate() {
            if let Some(mean) = mean {
                let _ = writeln!(s, "{m},{mode},{},{},mean,{},", i + 1, fmt_value(*mean), fmt_opt(*std));
            }
        }
        if let Some(v) = a.overall_mean {
            let _ = writeln!(s, "{m},{mode},all,{},mean,{},{}", fmt_value(v), fmt_opt(a.overall_std), fmt_opt(a.worst));
        }
    }
    s
}

fn pct(v: Option<f64>) -> String {
    v.map(|v| format!("{:.2}", 100.0 * v)).unwrap_or_else(|| "n/a".into())
}

pub fn render_summary(report: &Report) -> String {
    let mut s = String::new();
    let seeds: Vec<String> = report.seeds.iter().map(u32::to_string).collect();
    let _ = writeln!(s, "scenario: {}", report.scenario.as_str());
    let _ = writeln!(s, "strategy: {}", report.strategy);
    if report.pct.enabled {
        let _ = writeln!(s, "pct: alpha={} beta={} lambda={}", report.pct.alpha, report.pct.beta, report.pct.lambda);
    }
    let _ = writeln!(s, "seeds: {} ({})", seeds.join(","), report.seeds.len());
    if report.seeds.len() == 1 {
        let _ = writeln!(s, "note: single seed, std reported as 0");
    }
    if !report.failed_seeds.is_empty() {
        let f: Vec<String> = report.failed_seeds.iter().map(u32::to_string).collect();
        let _ = writeln!(s, "failed seeds: {}", f.join(","));
    }
    let _ = writeln!(s, "experiences: {}", report.experiences);
    let _ = writeln!(s, "digest: {}", report.digest);
    let _ = writeln!(s, "data digest: {}", report.data_digest);
    let _ = writeln!(s, "values in percent, mean over updates, mean ± std over seeds");
    for mode in [Mode::Backward, Mode::Forward] {
        if !report.has_mode(mode) {
            continue;
        }
        let _ = writeln!(s, "\n[{}]", mode.as_str());
        for c in report.curves.iter().filter(|c| c.mode == mode) {
            let a = &c.aggregate;
            let _ = write!(s, "{:<13} {:>7} ± {:>6}", c.metric, pct(a.overall_mean), pct(a.overall_std));
            if report.scenario == ScenarioKind::Cil {
                let _ = write!(s, " worst {}", pct(a.worst));
            }
            s.push('\n');
        }
    }
    s
}

pub fn render_json(report: &Report) -> String {
    serde_json::to_string_pretty(report).expect("report serializes")
}

/// Writes the requested formats into `dir` and returns their paths.
pub fn emit_report(report: &Report, dir: &Path, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    formats
        .iter()
        .map(|&f| {
            let body = match f {
                ReportFormat::Csv => render_csv(report),
                ReportFormat::Summary => render_summary(report),
                ReportFormat::Json => render_json(report),
            };
            let path = dir.join(f.file_name());
            fs::write(&path, body)?;
            Ok(path)
        })
        .collect()
}
