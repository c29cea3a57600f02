//! Experience streams: time-windowed (domain-incremental) and class-grouped
//! (class-incremental).

use std::collections::BTreeSet;

use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SparseSample};
use crate::error::{config, input, Result};
use crate::rng::stage_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    /// Fixed label space, drifting inputs.
    Dil,
    /// Each experience brings new classes.
    Cil,
}

impl ScenarioKind {
    pub fn code(self) -> u32 {
        match self {
            ScenarioKind::Dil => 0,
            ScenarioKind::Cil => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(ScenarioKind::Dil),
            1 => Some(ScenarioKind::Cil),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::Dil => "dil",
            ScenarioKind::Cil => "cil",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    /// 1-based position in the stream.
    pub id: usize,
    pub train: Dataset,
    pub test: Dataset,
    /// Half-open `[start, end)` day range (DIL).
    pub window: Option<(i64, i64)>,
    /// Classes introduced by this experience (CIL), sorted.
    pub classes: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioStream {
    kind: ScenarioKind,
    experiences: Vec<Experience>,
}

impl ScenarioStream {
    pub fn new(kind: ScenarioKind, experiences: Vec<Experience>) -> Result<Self> {
        if experiences.len() < 2 {
            return config(format!("a stream needs at least 2 experiences, got {}", experiences.len()));
        }
        let dim = experiences[0].train.feature_dim();
        let classes = experiences[0].train.class_count();
        let mut seen = BTreeSet::new();
        for (i, e) in experiences.iter().enumerate() {
            if e.id != i + 1 {
                return config(format!("experience at position {} has id {}", i + 1, e.id));
            }
            for d in [&e.train, &e.test] {
                if d.feature_dim() != dim || d.class_count() != classes {
                    return config("experiences disagree on feature dimension or class count");
                }
            }
            if kind == ScenarioKind::Cil {
                let Some(cs) = &e.classes else {
                    return config(format!("CIL experience {} has no class set", e.id));
                };
                for &c in cs {
                    if !seen.insert(c) {
                        return config(format!("class {c} appears in more than one experience"));
                    }
                }
                let allowed: BTreeSet<usize> = cs.iter().copied().collect();
                if e.train.samples().iter().chain(e.test.samples()).any(|s| !allowed.contains(&s.label)) {
                    return config(format!("experience {} holds labels outside its class set", e.id));
                }
            }
        }
        Ok(ScenarioStream { kind, experiences })
    }

    pub fn kind(&self) -> ScenarioKind {
        self.kind
    }

    pub fn experiences(&self) -> &[Experience] {
        &self.experiences
    }

    pub fn len(&self) -> usize {
        self.experiences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experiences.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.experiences[0].train.feature_dim()
    }

    pub fn class_count(&self) -> usize {
        self.experiences[0].train.class_count()
    }

    /// Classes seen through experience `k` (1-based). All classes in DIL.
    pub fn seen_classes(&self, k: usize) -> Vec<usize> {
        match self.kind {
            ScenarioKind::Dil => (0..self.class_count()).collect(),
            ScenarioKind::Cil => {
                let mut v: Vec<usize> = self.experiences[..k.min(self.len())]
                    .iter()
                    .flat_map(|e| e.classes.iter().flatten().copied())
                    .collect();
                v.sort_unstable();
                v
            }
        }
    }

    /// Applies a per-sample transform (e.g. a feature filter) to every split.
    pub fn map_datasets<F>(&self, mut f: F) -> Result<ScenarioStream>
    where
        F: FnMut(&Dataset) -> Result<Dataset>,
    {
        let experiences = self
            .experiences
            .iter()
            .map(|e| {
                Ok(Experience {
                    id: e.id,
                    train: f(&e.train)?,
                    test: f(&e.test)?,
                    window: e.window,
                    classes: e.classes.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ScenarioStream::new(self.kind, experiences)
    }

    /// All samples, train and test, in stream order.
    pub fn all_samples(&self) -> Vec<SparseSample> {
        self.experiences.iter().flat_map(|e| e.train.samples().iter().chain(e.test.samples()).cloned()).collect()
    }
}

fn split_count(n: usize, train_fraction: f64) -> usize {
    ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1)
}

fn sub_dataset(source: &Dataset, idx: &[usize]) -> Result<Dataset> {
    let samples = idx.iter().map(|&i| source.samples()[i].clone()).collect();
    let d = Dataset::new(samples, source.feature_dim(), source.class_count())?;
    match source.class_names() {
        Some(n) => d.with_class_names(n.to_vec()),
        None => Ok(d),
    }
}

fn split_indices(mut idx: Vec<usize>, train_fraction: f64, rng: &mut impl rand::Rng) -> (Vec<usize>, Vec<usize>) {
    idx.shuffle(rng);
    let n_train = split_count(idx.len(), train_fraction);
    let mut test = idx.split_off(n_train);
    idx.sort_unstable();
    test.sort_unstable();
    (idx, test)
}

fn check_fraction(train_fraction: f64) -> Result<()> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return config(format!("train fraction must lie in (0, 1), got {train_fraction}"));
    }
    Ok(())
}

/// Buckets samples into consecutive half-open windows of `window_days`
/// starting at the earliest timestamp, then splits each bucket.
pub fn build_dil_stream(dataset: &Dataset, window_days: i64, train_fraction: f64, seed: u64) -> Result<ScenarioStream> {
    if window_days <= 0 {
        return config("window length must be positive");
    }
    check_fraction(train_fraction)?;
    let mut stamps = Vec::with_capacity(dataset.len());
    for (i, s) in dataset.samples().iter().enumerate() {
        match s.timestamp {
            Some(t) => stamps.push(t),
            None => return input(format!("sample {i} has no timestamp")),
        }
    }
    let t0 = *stamps.iter().min().expect("dataset is non-empty");
    let n_windows = ((stamps.iter().max().unwrap() - t0) / window_days + 1) as usize;
    let mut buckets = vec![Vec::new(); n_windows];
    for (i, &t) in stamps.iter().enumerate() {
        buckets[((t - t0) / window_days) as usize].push(i);
    }
    let mut experiences = Vec::new();
    for (w, idx) in buckets.into_iter().enumerate() {
        let start = t0 + w as i64 * window_days;
        if idx.len() < 2 {
            warn!("dropping window starting at day {start}: {} sample(s)", idx.len());
            continue;
        }
        let mut rng = stage_rng(seed, "dil-split", w as u64);
        let (tr, te) = split_indices(idx, train_fraction, &mut rng);
        experiences.push(Experience {
            id: experiences.len() + 1,
            train: sub_dataset(dataset, &tr)?,
            test: sub_dataset(dataset, &te)?,
            window: Some((start, start + window_days)),
            classes: None,
        });
    }
    if experiences.len() < 2 {
        return config(format!("only {} non-empty time window(s); need at least 2", experiences.len()));
    }
    ScenarioStream::new(ScenarioKind::Dil, experiences)
}

/// Seeded class permutation, chunked into groups of `classes_per_experience`,
/// with a per-class stratified split.
pub fn build_cil_stream(
    dataset: &Dataset,
    classes_per_experience: usize,
    order_seed: u64,
    train_fraction: f64,
) -> Result<ScenarioStream> {
    let total = dataset.class_count();
    if classes_per_experience == 0 || !total.is_multiple_of(classes_per_experience) {
        return config(format!("{total} classes cannot be split into groups of {classes_per_experience}"));
    }
    check_fraction(train_fraction)?;
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut stage_rng(order_seed, "class-order", 0));

    let mut by_class = vec![Vec::new(); total];
    for (i, s) in dataset.samples().iter().enumerate() {
        by_class[s.label].push(i);
    }
    let mut experiences = Vec::new();
    for chunk in order.chunks(classes_per_experience) {
        let (mut tr, mut te) = (Vec::new(), Vec::new());
        for &c in chunk {
            let idx = std::mem::take(&mut by_class[c]);
            match idx.len() {
                0 => warn!("class {c} has no samples"),
                1 => tr.extend(idx),
                _ => {
                    let (a, b) = split_indices(idx, train_fraction, &mut stage_rng(order_seed, "cil-split", c as u64));
                    tr.extend(a);
                    te.extend(b);
                }
            }
        }
        tr.sort_unstable();
        te.sort_unstable();
        let id = experiences.len() + 1;
        if tr.is_empty() || te.is_empty() {
            return config(format!("experience {id} would have an empty train or test split"));
        }
        let mut classes = chunk.to_vec();
        classes.sort_unstable();
        experiences.push(Experience {
            id,
            train: sub_dataset(dataset, &tr)?,
            test: sub_dataset(dataset, &te)?,
            window: None,
            classes: Some(classes),
        });
    }
    ScenarioStream::new(ScenarioKind::Cil, experiences)
}
