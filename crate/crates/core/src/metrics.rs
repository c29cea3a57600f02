//! Evaluation mathematics: classification scores, flip rates, forgetting,
//! backward/forward aggregation and cross-seed summaries.

use serde::{Deserialize, Serialize};

use crate::error::{contract, input, Result};
use crate::scenarios::ScenarioKind;

/// Binary confusion counts with respect to one positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn from_predictions(preds: &[usize], labels: &[usize], positive: usize) -> Self {
        let mut c = Confusion::default();
        for (&p, &y) in preds.iter().zip(labels) {
            match (p == positive, y == positive) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall, F1 and accuracy. Zero denominators yield 0.
pub fn classification_metrics(c: &Confusion) -> ClassificationMetrics {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    let accuracy = ratio(c.tp + c.tn, c.tp + c.tn + c.fp + c.fn_);
    ClassificationMetrics { precision, recall, f1, accuracy }
}

/// Subset of samples a flip rate is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassSel {
    All,
    Class(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipRates {
    pub nfr: f64,
    pub pfr: f64,
    pub nf: usize,
    pub pf: usize,
    pub n: usize,
}

/// Negative/positive flip rates between two prediction vectors over the
/// samples of `sel`. `None` when the subset is empty.
pub fn flip_rates(
    old_preds: &[usize],
    new_preds: &[usize],
    labels: &[usize],
    sel: ClassSel,
) -> Result<Option<FlipRates>> {
    if old_preds.len() != labels.len() || new_preds.len() != labels.len() {
        return input("prediction and label vectors differ in length");
    }
    let (mut n, mut nf, mut pf) = (0, 0, 0);
    for ((&o, &p), &y) in old_preds.iter().zip(new_preds).zip(labels) {
        if let ClassSel::Class(c) = sel {
            if y != c {
                continue;
            }
        }
        n += 1;
        if o == y && p != y {
            nf += 1;
        }
        if p == y && o != y {
            pf += 1;
        }
    }
    if n == 0 {
        return Ok(None);
    }
    Ok(Some(FlipRates { nfr: nf as f64 / n as f64, pfr: pf as f64 / n as f64, nf, pf, n }))
}

/// Per-class counts for one (update, test experience) evaluation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub n: usize,
    /// Correct predictions by the new model.
    pub correct: usize,
    /// Correct predictions by the previous model, when one exists.
    pub old_correct: Option<usize>,
    /// Samples predicted as this class by the new model.
    pub predicted: usize,
    pub nf: Option<usize>,
    pub pf: Option<usize>,
}

/// Evaluation of model `f_k` (and `f_{k-1}` when `k >= 2`) on the test set of
/// experience `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub update: usize,
    pub test: usize,
    pub n: usize,
    pub per_class: Vec<ClassCounts>,
}

impl EvalRecord {
    pub fn new(
        update: usize,
        test: usize,
        labels: &[usize],
        new_preds: &[usize],
        old_preds: Option<&[usize]>,
        class_count: usize,
    ) -> Result<Self> {
        if new_preds.len() != labels.len() || old_preds.is_some_and(|o| o.len() != labels.len()) {
            return input("prediction and label vectors differ in length");
        }
        let mut per_class = vec![ClassCounts::default(); class_count];
        if old_preds.is_some() {
            for c in per_class.iter_mut() {
                c.old_correct = Some(0);
                c.nf = Some(0);
                c.pf = Some(0);
            }
        }
        for (i, (&y, &p)) in labels.iter().zip(new_preds).enumerate() {
            if y >= class_count || p >= class_count {
                return input(format!("class index out of range for {class_count} classes"));
            }
            per_class[p].predicted += 1;
            let c = &mut per_class[y];
            c.n += 1;
            if p == y {
                c.correct += 1;
            }
            if let Some(old) = old_preds {
                let o = old[i];
                if o == y {
                    *c.old_correct.as_mut().unwrap() += 1;
                    if p != y {
                        *c.nf.as_mut().unwrap() += 1;
                    }
                } else if p == y {
                    *c.pf.as_mut().unwrap() += 1;
                }
            }
        }
        Ok(EvalRecord { update, test, n: labels.len(), per_class })
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.per_class.iter().map(|c| c.correct).sum(), self.n)
    }

    pub fn old_accuracy(&self) -> Option<f64> {
        let s: Option<usize> = self.per_class.iter().map(|c| c.old_correct).sum();
        s.map(|s| ratio(s, self.n))
    }

    /// Binary confusion with `positive` as the positive class.
    pub fn confusion(&self, positive: usize) -> Confusion {
        let pos = &self.per_class[positive];
        let tp = pos.correct;
        let fn_ = pos.n - pos.correct;
        let fp = pos.predicted - pos.correct;
        Confusion { tp, fp, fn_, tn: self.n - tp - fn_ - fp }
    }

    /// Flip rates over `sel`; `None` for the first update or an empty class.
    pub fn flips(&self, sel: ClassSel) -> Option<FlipRates> {
        let (n, nf, pf) = match sel {
            ClassSel::All => {
                let nf: Option<usize> = self.per_class.iter().map(|c| c.nf).sum();
                let pf: Option<usize> = self.per_class.iter().map(|c| c.pf).sum();
                (self.n, nf?, pf?)
            }
            ClassSel::Class(c) => {
                let cc = self.per_class.get(c)?;
                (cc.n, cc.nf?, cc.pf?)
            }
        };
        if n == 0 {
            return None;
        }
        Some(FlipRates { nfr: nf as f64 / n as f64, pfr: pf as f64 / n as f64, nf, pf, n })
    }

    /// `(A_old - A_new) - (NFR - PFR)` over all classes; zero up to rounding.
    pub fn identity_residual(&self) -> Option<f64> {
        let f = self.flips(ClassSel::All)?;
        Some(forgetting_identity_residual(self.old_accuracy()?, self.accuracy(), f.nfr, f.pfr))
    }
}

pub fn forgetting_identity_residual(acc_old: f64, acc_new: f64, nfr: f64, pfr: f64) -> f64 {
    (acc_old - acc_new) - (nfr - pfr)
}

/// Number of test experiences averaged in backward mode after update `k`.
pub fn backward_span(k: usize, kind: ScenarioKind) -> usize {
    match kind {
        ScenarioKind::Dil => k,
        ScenarioKind::Cil => k.saturating_sub(1),
    }
}

/// Unweighted mean of the present values; `None` if none are present.
pub fn mean_present(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let (s, n) = values.into_iter().flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn records_for(records: &[EvalRecord], k: usize, tests: std::ops::RangeInclusive<usize>) -> Result<Vec<&EvalRecord>> {
    tests
        .map(|j| {
            records
                .iter()
                .find(|r| r.update == k && r.test == j)
                .ok_or_else(|| crate::Error::Contract(format!("missing evaluation for update {k} on experience {j}")))
        })
        .collect()
}

/// Mean of `metric` over test experiences `1..=k'` after update `k`.
pub fn backward_aggregate<F>(records: &[EvalRecord], k: usize, span: usize, metric: F) -> Result<Option<f64>>
where
    F: Fn(&EvalRecord) -> Option<f64>,
{
    if span < 1 {
        return contract(format!("no backward set after update {k}"));
    }
    Ok(mean_present(records_for(records, k, 1..=span)?.into_iter().map(metric)))
}

/// Mean of `metric` over test experiences `k..=total`. Domain-incremental only.
pub fn forward_aggregate<F>(
    records: &[EvalRecord],
    k: usize,
    total: usize,
    kind: ScenarioKind,
    metric: F,
) -> Result<Option<f64>>
where
    F: Fn(&EvalRecord) -> Option<f64>,
{
    if kind == ScenarioKind::Cil {
        return contract("forward mode is defined for domain-incremental streams only");
    }
    if k < 1 || k > total {
        return contract(format!("update {k} outside 1..={total}"));
    }
    Ok(mean_present(records_for(records, k, k..=total)?.into_iter().map(metric)))
}

pub fn backward_nfr(records: &[EvalRecord], k: usize, kind: ScenarioKind, sel: ClassSel) -> Result<Option<f64>> {
    backward_aggregate(records, k, backward_span(k, kind), |r| r.flips(sel).map(|f| f.nfr))
}

pub fn forward_nfr(
    records: &[EvalRecord],
    k: usize,
    total: usize,
    kind: ScenarioKind,
    sel: ClassSel,
) -> Result<Option<f64>> {
    forward_aggregate(records, k, total, kind, |r| r.flips(sel).map(|f| f.nfr))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForgettingMode {
    /// Best earlier accuracy minus current.
    #[default]
    Max,
    /// Accuracy after the previous update minus current.
    Prev,
    /// Accuracy right after learning the experience minus current.
    #[serde(rename = "self")]
    SelfRef,
}

/// Accuracy of model `o` on test experience `j`, both 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyTable {
    cells: Vec<Vec<Option<f64>>>,
}

impl AccuracyTable {
    pub fn new(updates: usize, tests: usize) -> Self {
        AccuracyTable { cells: vec![vec![None; tests]; updates] }
    }

    pub fn set(&mut self, o: usize, j: usize, acc: f64) {
        self.cells[o - 1][j - 1] = Some(acc);
    }

    pub fn get(&self, o: usize, j: usize) -> Option<f64> {
        self.cells.get(o.wrapping_sub(1))?.get(j.wrapping_sub(1)).copied().flatten()
    }

    /// Table from explicit rows (`rows[o-1][j-1]`).
    pub fn from_rows(rows: Vec<Vec<Option<f64>>>) -> Self {
        AccuracyTable { cells: rows }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forgetting {
    /// `F_j^k` for `j = 1..k`.
    pub per_experience: Vec<f64>,
    pub average: f64,
}

/// Forgetting after update `k` on every earlier experience `j < k`.
pub fn forgetting(table: &AccuracyTable, k: usize, mode: ForgettingMode) -> Result<Forgetting> {
    if k < 2 {
        return contract("forgetting needs at least two updates");
    }
    let missing =
        |o: usize, j: usize| crate::Error::Contract(format!("accuracy of model {o} on experience {j} missing"));
    let mut per = Vec::with_capacity(k - 1);
    for j in 1..k {
        let now = table.get(k, j).ok_or_else(|| missing(k, j))?;
        let reference = match mode {
            ForgettingMode::Max => (1..k)
                .filter_map(|o| table.get(o, j))
                .fold(None, |m: Option<f64>, a| Some(m.map_or(a, |m| m.max(a))))
                .ok_or_else(|| missing(k - 1, j))?,
            ForgettingMode::Prev => table.get(k - 1, j).ok_or_else(|| missing(k - 1, j))?,
            ForgettingMode::SelfRef => table.get(j, j).ok_or_else(|| missing(j, j))?,
        };
        per.push(reference - now);
    }
    let average = per.iter().sum::<f64>() / per.len() as f64;
    Ok(Forgetting { per_experience: per, average })
}

/// Direction in which a metric gets worse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Worse {
    Lower,
    Higher,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAggregate {
    /// Pointwise mean over seeds.
    pub mean: Vec<Option<f64>>,
    /// Pointwise sample standard deviation (0 for a single seed).
    pub std: Vec<Option<f64>>,
    /// Mean over seeds of each seed's mean over updates.
    pub overall_mean: Option<f64>,
    pub overall_std: Option<f64>,
    /// Worst point of the mean curve.
    pub worst: Option<f64>,
    pub seeds: usize,
    /// Set when only one seed contributed and std is 0 by convention.
    pub single_seed: bool,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Pointwise mean and sample standard deviation across per-seed curves. A
/// point is absent when any seed lacks it.
pub fn seed_aggregate(curves: &[Vec<Option<f64>>], worse: Worse) -> Result<SeedAggregate> {
    if curves.is_empty() {
        return input("no curves to aggregate");
    }
    let len = curves[0].len();
    if curves.iter().any(|c| c.len() != len) {
        return input("curves differ in length across seeds");
    }
    let (mut mean, mut std) = (Vec::with_capacity(len), Vec::with_capacity(len));
    for i in 0..len {
        let pts: Option<Vec<f64>> = curves.iter().map(|c| c[i]).collect();
        match pts {
            Some(p) => {
                let (m, s) = mean_std(&p);
                mean.push(Some(m));
                std.push(Some(s));
            }
            None => {
                mean.push(None);
                std.push(None);
            }
        }
    }
    let per_seed: Option<Vec<f64>> = curves.iter().map(|c| mean_present(c.iter().copied())).collect();
    let (overall_mean, overall_std) = match per_seed {
        Some(v) => {
            let (m, s) = mean_std(&v);
            (Some(m), Some(s))
        }
        None => (None, None),
    };
    let worst = mean.iter().flatten().copied().fold(None, |w: Option<f64>, v| {
        Some(match (w, worse) {
            (None, _) => v,
            (Some(w), Worse::Lower) => w.min(v),
            (Some(w), Worse::Higher) => w.max(v),
        })
    });
    Ok(SeedAggregate {
        mean,
        std,
        overall_mean,
        overall_std,
        worst,
        seeds: curves.len(),
        single_seed: curves.len() == 1,
    })
}
