//! Sparse binary datasets: the text format, variance filtering, and helpers.
//!
//! Text format, one sample per line:
//!
//! ```text
//! # comment
//! <label> [t=<days>] <feat>:1 <feat>:1 ...
//! ```
//!
//! Feature indices must be strictly increasing within a line.

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{input, Error, Result};

/// One sample: the active binary features, the class label and an optional
/// timestamp in days since the Unix epoch.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SparseSample {
    pub features: Vec<u32>,
    pub label: usize,
    pub timestamp: Option<i64>,
}

impl SparseSample {
    /// Builds a sample, rejecting unsorted or duplicated feature indices.
    pub fn new(features: Vec<u32>, label: usize, timestamp: Option<i64>) -> Result<Self> {
        if let Some(w) = features.windows(2).find(|w| w[0] >= w[1]) {
            return input(format!("feature indices must be strictly increasing, found {} then {}", w[0], w[1]));
        }
        Ok(SparseSample { features, label, timestamp })
    }

    /// Dense 0/1 view, mostly useful in tests.
    pub fn to_dense(&self, dim: usize) -> Vec<u8> {
        let mut v = vec![0u8; dim];
        for &f in &self.features {
            v[f as usize] = 1;
        }
        v
    }
}

/// A non-empty collection of samples over a fixed feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<SparseSample>,
    feature_dim: usize,
    class_count: usize,
    class_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(samples: Vec<SparseSample>, feature_dim: usize, class_count: usize) -> Result<Self> {
        if samples.is_empty() {
            return input("empty dataset");
        }
        for (i, s) in samples.iter().enumerate() {
            if let Some(&f) = s.features.last() {
                if f as usize >= feature_dim {
                    return input(format!("sample {i}: feature index {f} out of range for dimension {feature_dim}"));
                }
            }
            if s.label >= class_count {
                return input(format!("sample {i}: label {} out of range for {class_count} classes", s.label));
            }
        }
        Ok(Dataset { samples, feature_dim, class_count, class_names: None })
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.class_count {
            return input(format!("{} class names given for {} classes", names.len(), self.class_count));
        }
        self.class_names = Some(names);
        Ok(self)
    }

    pub fn samples(&self) -> &[SparseSample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<SparseSample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    /// Borrowed view suitable for the batch APIs.
    pub fn refs(&self) -> Vec<&SparseSample> {
        self.samples.iter().collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Sample count per class.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count];
        for s in &self.samples {
            h[s.label] += 1;
        }
        h
    }
}

fn parse_line(line: &str, lineno: usize, require_timestamp: bool) -> Result<SparseSample> {
    let err = |msg: String| Error::Parse { line: lineno, msg };
    let mut tokens = line.split_whitespace();
    let label_tok = tokens.next().ok_or_else(|| err("missing label".into()))?;
    let label: usize = label_tok.parse().map_err(|_| err(format!("invalid label {label_tok:?}")))?;

    let mut timestamp = None;
    let mut features: Vec<u32> = Vec::new();
    for (pos, tok) in tokens.enumerate() {
        if let Some(t) = tok.strip_prefix("t=") {
            if pos != 0 {
                return Err(err("timestamp must directly follow the label".into()));
            }
            timestamp = Some(t.parse().map_err(|_| err(format!("invalid timestamp {t:?}")))?);
            continue;
        }
        let (idx, val) = tok.split_once(':').ok_or_else(|| err(format!("expected <feature>:1, got {tok:?}")))?;
        let idx: u32 = idx.parse().map_err(|_| err(format!("invalid feature index {idx:?}")))?;
        if val != "1" {
            return Err(err(format!("feature {idx}: only binary value 1 is allowed, got {val:?}")));
        }
        if let Some(&prev) = features.last() {
            if idx == prev {
                return Err(err(format!("duplicate feature index {idx}")));
            }
            if idx < prev {
                return Err(err(format!("feature indices not increasing: {prev} then {idx}")));
            }
        }
        features.push(idx);
    }
    if require_timestamp && timestamp.is_none() {
        return Err(err("missing timestamp".into()));
    }
    Ok(SparseSample { features, label, timestamp })
}

/// Reads samples from any buffered reader. `feature_dim` and `class_count`
/// are inferred as one past the largest index and label seen.
pub fn read_sparse_text<R: BufRead>(reader: R, require_timestamps: bool) -> Result<Dataset> {
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        samples.push(parse_line(trimmed, i + 1, require_timestamps)?);
    }
    if samples.is_empty() {
        return input("empty dataset");
    }
    let feature_dim =
        samples.iter().filter_map(|s| s.features.last()).map(|&f| f as usize + 1).max().unwrap_or(0).max(1);
    let class_count = samples.iter().map(|s| s.label).max().unwrap_or(0) + 1;
    Dataset::new(samples, feature_dim, class_count)
}

/// Loads a sparse text file. DIL loads pass `require_timestamps = true`.
pub fn load_sparse_text(path: impl AsRef<Path>, require_timestamps: bool) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::Input(format!("cannot open {}: {e}", path.display())))?;
    read_sparse_text(BufReader::new(file), require_timestamps)
}

pub fn write_sparse_text<W: Write>(mut w: W, samples: &[SparseSample]) -> io::Result<()> {
    for s in samples {
        write!(w, "{}", s.label)?;
        if let Some(t) = s.timestamp {
            write!(w, " t={t}")?;
        }
        for f in &s.features {
            write!(w, " {f}:1")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn save_sparse_text(path: impl AsRef<Path>, samples: &[SparseSample]) -> Result<()> {
    let mut w = io::BufWriter::new(fs::File::create(path.as_ref())?);
    write_sparse_text(&mut w, samples)?;
    w.flush()?;
    Ok(())
}

/// Default variance threshold below which features are dropped.
pub const DEFAULT_VARIANCE_THRESHOLD: f64 = 1e-3;

/// Fitted low-variance feature filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFilter {
    kept: Vec<u32>,
    threshold: f64,
    /// Dimension of the space the filter was fitted on, when known.
    source_dim: Option<usize>,
}

impl FeatureFilter {
    pub fn new(kept: Vec<u32>, threshold: f64, source_dim: Option<usize>) -> Result<Self> {
        if kept.windows(2).any(|w| w[0] >= w[1]) {
            return input("kept feature indices must be strictly increasing");
        }
        Ok(FeatureFilter { kept, threshold, source_dim })
    }

    /// Keeps every feature of a `dim`-dimensional space.
    pub fn identity(dim: usize) -> Self {
        FeatureFilter { kept: (0..dim as u32).collect(), threshold: 0.0, source_dim: Some(dim) }
    }

    pub fn kept(&self) -> &[u32] {
        &self.kept
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn output_dim(&self) -> usize {
        self.kept.len()
    }

    pub fn write<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "threshold={}", self.threshold)?;
        for k in &self.kept {
            writeln!(w, "{k}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let threshold = match lines.next() {
            Some((_, line)) => {
                let line = line?;
                let value = line
                    .trim()
                    .strip_prefix("threshold=")
                    .ok_or(Error::Parse { line: 1, msg: "expected threshold=<real>".into() })?;
                value
                    .parse::<f64>()
                    .map_err(|_| Error::Parse { line: 1, msg: format!("invalid threshold {value:?}") })?
            }
            None => return Err(Error::Parse { line: 1, msg: "empty filter file".into() }),
        };
        let mut kept = Vec::new();
        for (i, line) in lines {
            let line = line?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            kept.push(
                t.parse::<u32>()
                    .map_err(|_| Error::Parse { line: i + 1, msg: format!("invalid feature index {t:?}") })?,
            );
        }
        FeatureFilter::new(kept, threshold, None)
    }
}

/// Fits the filter on training data: feature `f` with activation frequency
/// `p` has variance `p(1-p)` and is kept iff that is at least `threshold`.
pub fn variance_filter_fit(train: &Dataset, threshold: f64) -> FeatureFilter {
    let mut counts = vec![0usize; train.feature_dim()];
    for s in train.samples() {
        for &f in &s.features {
            counts[f as usize] += 1;
        }
    }
    let n = train.len() as f64;
    let kept = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| {
            let p = c as f64 / n;
            p * (1.0 - p) >= threshold
        })
        .map(|(i, _)| i as u32)
        .collect();
    FeatureFilter { kept, threshold, source_dim: Some(train.feature_dim()) }
}

/// Applies a fitted filter to a slice of samples, remapping surviving
/// features to dense indices in their original order.
pub fn filter_samples(filter: &FeatureFilter, samples: &[SparseSample]) -> Result<Vec<SparseSample>> {
    if filter.kept.is_empty() {
        return input("filter removed all features");
    }
    samples
        .iter()
        .map(|s| {
            if let (Some(dim), Some(&f)) = (filter.source_dim, s.features.last()) {
                if f as usize >= dim {
                    return input(format!("feature index {f} beyond filtered space of {dim}"));
                }
            }
            let features =
                s.features.iter().filter_map(|f| filter.kept.binary_search(f).ok().map(|i| i as u32)).collect();
            Ok(SparseSample { features, label: s.label, timestamp: s.timestamp })
        })
        .collect()
}

/// Reindexed copy of `dataset`. Samples left with no active feature are kept.
pub fn apply_filter(filter: &FeatureFilter, dataset: &Dataset) -> Result<Dataset> {
    if let Some(dim) = filter.source_dim {
        if dataset.feature_dim() > dim {
            return input(format!(
                "dataset dimension {} exceeds the filter's source dimension {dim}",
                dataset.feature_dim()
            ));
        }
    }
    let samples = filter_samples(filter, dataset.samples())?;
    let out = Dataset::new(samples, filter.output_dim(), dataset.class_count())?;
    match dataset.class_names() {
        Some(names) => out.with_class_names(names.to_vec()),
        None => Ok(out),
    }
}
