//! Run configuration: a TOML file of dotted sections plus CLI overrides.
//!
//! ```toml
//! scenario = "dil"
//! seeds = [0, 1, 2, 3, 4]
//!
//! [data]
//! source = "synth"
//!
//! [strategy]
//! name = "si+replay"
//!
//! [pct]
//! enabled = true
//! beta = 0.5
//! ```
//!
//! Unknown keys are rejected. The digest is the SHA-256 of the canonical JSON
//! form of every section that influences results (the output section is
//! excluded).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::DEFAULT_VARIANCE_THRESHOLD;
use crate::error::{config, Error, Result};
use crate::metrics::ForgettingMode;
use crate::pct::PctConfig;
use crate::scenarios::ScenarioKind;
use crate::strategies::{StrategyConfig, TrainConfig};
use crate::synth::SynthConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    #[default]
    Synth,
    File,
}

/// Which training data the variance filter is fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterMode {
    /// Training split of the first experience.
    #[default]
    FirstSplit,
    /// Training splits of all experiences.
    Global,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Sparse text file (source = "file").
    pub path: Option<PathBuf>,
    /// Time window per experience in days (DIL file input).
    pub window_days: i64,
    /// Train fraction; defaults to 0.8 (DIL) or 0.9 (CIL).
    pub train_fraction: Option<f64>,
    /// Classes per experience (CIL file input).
    pub classes_per_experience: usize,
    pub filter: FilterMode,
    pub variance_threshold: f64,
    /// Fixes the synthetic data content across seeds; by default each seed
    /// draws its own data.
    pub synth_seed: Option<u64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synth,
            path: None,
            window_days: 90,
            train_fraction: None,
            classes_per_experience: 10,
            filter: FilterMode::FirstSplit,
            variance_threshold: DEFAULT_VARIANCE_THRESHOLD,
            synth_seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub forgetting: ForgettingMode,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { forgetting: ForgettingMode::Max }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Keep every snapshot instead of only the last two.
    pub keep_all: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("regcl-out"), keep_all: false }
    }
}

pub const DEFAULT_SEEDS: [u32; 5] = [0, 1, 2, 3, 4];

fn default_seeds() -> Vec<u32> {
    DEFAULT_SEEDS.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioKind,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u32>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub strategy: StrategyConfig,
    #[serde(default)]
    pub pct: PctConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seeds: Option<Vec<u32>>,
    pub out: Option<PathBuf>,
    pub keep_all: bool,
}

/// Parses `a,b,c` seed lists.
pub fn parse_seed_list(s: &str) -> Result<Vec<u32>> {
    s.split(',')
        .map(|t| t.trim().parse::<u32>().map_err(|_| Error::Config(format!("seeds: invalid seed {t:?}"))))
        .collect()
}

impl RunConfig {
    /// Defaults for everything except the scenario.
    pub fn new(scenario: ScenarioKind) -> Self {
        RunConfig {
            scenario,
            seeds: default_seeds(),
            data: DataConfig::default(),
            synth: SynthConfig::default(),
            strategy: StrategyConfig::default(),
            pct: PctConfig::default(),
            train: TrainConfig::default(),
            metrics: MetricsConfig::default(),
            output: OutputConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(s) = &o.seeds {
            self.seeds = s.clone();
        }
        if let Some(out) = &o.out {
            self.output.dir = out.clone();
        }
        if o.keep_all {
            self.output.keep_all = true;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return config("seeds: at least one seed is required");
        }
        let mut s = self.seeds.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != self.seeds.len() {
            return config("seeds: duplicate seed");
        }
        match self.data.source {
            DataSource::Synth => self.synth.validate(self.scenario)?,
            DataSource::File => {
                if self.data.path.is_none() {
                    return config("data.path is required when data.source = \"file\"");
                }
                if self.data.window_days <= 0 {
                    return config("data.window_days must be positive");
                }
                if self.data.classes_per_experience == 0 {
                    return config("data.classes_per_experience must be positive");
                }
            }
        }
        if let Some(f) = self.data.train_fraction {
            if !(f > 0.0 && f < 1.0) {
                return config(format!("data.train_fraction must lie in (0, 1), got {f}"));
            }
        }
        if !(self.data.variance_threshold >= 0.0 && self.data.variance_threshold.is_finite()) {
            return config("data.variance_threshold must be non-negative");
        }
        self.strategy.validate()?;
        self.pct.validate()?;
        self.train.validate()
    }

    fn canonical(&self, include_training: bool) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let obj = v.as_object_mut().expect("config is an object");
        obj.remove("output");
        if !include_training {
            for k in ["strategy", "pct", "train", "metrics"] {
                obj.remove(k);
            }
        }
        serde_json::to_string(&v).expect("json value serializes")
    }

    /// Digest of everything that influences results.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical(true).as_bytes()))
    }

    /// Digest of the data-related settings only.
    pub fn data_digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical(false).as_bytes()))
    }

    pub fn train_fraction(&self) -> f64 {
        self.data.train_fraction.unwrap_or(match self.scenario {
            ScenarioKind::Dil => crate::synth::DIL_TRAIN_FRACTION,
            ScenarioKind::Cil => crate::synth::CIL_TRAIN_FRACTION,
        })
    }
}

/// Reads the config file, applies overrides and validates.
pub fn parse_config(path: impl AsRef<Path>, overrides: &Overrides) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::Config(e.message().to_string()))?;
    cfg.apply(overrides)?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = RunConfig::from_toml_str("scenario = \"dil\"\n").unwrap();
        assert_eq!(cfg.seeds.len(), 5);
        assert_eq!(cfg.train.epochs, 30);
        assert_eq!(cfg.train.batch_size, 32);
        assert_eq!(cfg.train.learning_rate, 1e-3);
        assert_eq!(cfg.train.momentum, 0.9);
        assert_eq!(cfg.train.hidden, 512);
        assert_eq!(cfg.strategy.memory_for(cfg.scenario), 200);
        assert_eq!((cfg.pct.alpha, cfg.pct.beta), (1.0, 0.5));
        assert_eq!(cfg.data.source, DataSource::Synth);
        assert_eq!(cfg, RunConfig::new(ScenarioKind::Dil));
    }

    #[test]
    fn range_and_key_errors_name_the_key() {
        let e = RunConfig::from_toml_str("scenario = \"dil\"\n[pct]\nbeta = -1.0\n").unwrap_err();
        assert!(matches!(&e, Error::Config(m) if m.contains("pct.beta")), "{e}");
        let e = RunConfig::from_toml_str("scenario = \"dil\"\n[pct]\ngamma = 1.0\n").unwrap_err();
        assert!(matches!(&e, Error::Config(m) if m.contains("gamma")), "{e}");
        let e = RunConfig::from_toml_str("scenario = \"dil\"\n[data]\nsource = \"file\"\n").unwrap_err();
        assert!(matches!(&e, Error::Config(m) if m.contains("data.path")), "{e}");
        let e = RunConfig::from_toml_str("scenario = \"dil\"\n[strategy]\nname = \"gem\"\n").unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }

    #[test]
    fn dotted_keys_parse() {
        let cfg = RunConfig::from_toml_str(
            "scenario = \"cil\"\npct.enabled = true\npct.lambda = 2.0\nstrategy.name = \"si+replay\"\n",
        )
        .unwrap();
        assert!(cfg.pct.enabled);
        assert_eq!(cfg.pct.lambda, 2.0);
        assert_eq!(cfg.strategy.memory_for(cfg.scenario), 1000);
    }

    #[test]
    fn seed_flag_overrides_file() {
        let mut cfg = RunConfig::from_toml_str("scenario = \"dil\"\nseeds = [9]\n").unwrap();
        cfg.apply(&Overrides { seeds: Some(parse_seed_list("1,2,3").unwrap()), ..Default::default() }).unwrap();
        assert_eq!(cfg.seeds, vec![1, 2, 3]);
        assert!(parse_seed_list("1,x").is_err());
    }

    #[test]
    fn digest_ignores_output_but_not_training() {
        let a = RunConfig::new(ScenarioKind::Dil);
        let mut b = a.clone();
        b.output.dir = PathBuf::from("elsewhere");
        assert_eq!(a.digest(), b.digest());
        b.pct.enabled = true;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.data_digest(), b.data_digest());
    }
}
