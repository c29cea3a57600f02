//! Synthetic drifting binary-feature data.
//!
//! Each class has a Bernoulli prototype bit-vector. A sample is its class
//! prototype with every bit independently flipped with probability `noise`.
//! In the domain-incremental generator a `drift` fraction of each prototype's
//! coordinates is redrawn between consecutive experiences.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SparseSample};
use crate::error::{config, Result};
use crate::rng::stage_rng;
use crate::scenarios::{build_cil_stream, Experience, ScenarioKind, ScenarioStream};

/// Label of the goodware class in binary streams.
pub const GOODWARE: usize = 0;
/// Label of the malware class in binary streams.
pub const MALWARE: usize = 1;

pub const DIL_TRAIN_FRACTION: f64 = 0.8;
pub const CIL_TRAIN_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub feature_dim: usize,
    /// Number of experiences (DIL). CIL derives it from the class counts.
    pub experiences: usize,
    /// Samples per experience, both classes together (DIL).
    pub samples_per_experience: usize,
    /// Samples per class (CIL).
    pub samples_per_class: usize,
    /// Goodware samples per malware sample (DIL).
    pub goodware_ratio: f64,
    /// Fraction of features active in a prototype.
    pub density: f64,
    /// Fraction of prototype coordinates redrawn between experiences.
    pub drift: f64,
    /// Per-feature flip probability.
    pub noise: f64,
    pub classes_total: usize,
    pub classes_per_experience: usize,
    pub window_days: i64,
    pub start_day: i64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            feature_dim: 500,
            experiences: 8,
            samples_per_experience: 1000,
            samples_per_class: 60,
            goodware_ratio: 9.0,
            density: 0.05,
            drift: 0.05,
            noise: 0.01,
            classes_total: 100,
            classes_per_experience: 10,
            window_days: 90,
            start_day: 17167,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self, kind: ScenarioKind) -> Result<()> {
        for (name, v) in [("density", self.density), ("drift", self.drift), ("noise", self.noise)] {
            if !(0.0..=1.0).contains(&v) {
                return config(format!("synth.{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.feature_dim == 0 {
            return config("synth.feature_dim must be positive");
        }
        if self.window_days <= 0 {
            return config("synth.window_days must be positive");
        }
        match kind {
            ScenarioKind::Dil => {
                if self.experiences < 2 {
                    return config("synth.experiences must be at least 2");
                }
                if !(self.goodware_ratio >= 0.0 && self.goodware_ratio.is_finite()) {
                    return config("synth.goodware_ratio must be non-negative");
                }
                let (gw, mw) = self.class_sizes();
                if gw < 2 || mw < 2 {
                    return config("synth.samples_per_experience too small for a per-class split");
                }
            }
            ScenarioKind::Cil => {
                if self.classes_per_experience == 0 || !self.classes_total.is_multiple_of(self.classes_per_experience) {
                    return config(format!(
                        "synth.classes_total ({}) must be divisible by synth.classes_per_experience ({})",
                        self.classes_total, self.classes_per_experience
                    ));
                }
                if self.classes_total / self.classes_per_experience < 2 {
                    return config("CIL synthetic stream needs at least 2 experiences");
                }
                if self.samples_per_class < 2 {
                    return config("synth.samples_per_class must be at least 2");
                }
            }
        }
        Ok(())
    }

    /// (goodware, malware) counts per experience.
    pub fn class_sizes(&self) -> (usize, usize) {
        let mw = (self.samples_per_experience as f64 / (self.goodware_ratio + 1.0)).round() as usize;
        (self.samples_per_experience - mw.min(self.samples_per_experience), mw)
    }
}

fn prototype<R: Rng>(dim: usize, density: f64, rng: &mut R) -> Vec<bool> {
    (0..dim).map(|_| rng.gen_bool(density)).collect()
}

fn drift_prototype<R: Rng>(proto: &mut [bool], drift: f64, density: f64, rng: &mut R) {
    let m = (drift * proto.len() as f64).round() as usize;
    for i in index::sample(rng, proto.len(), m.min(proto.len())) {
        proto[i] = rng.gen_bool(density);
    }
}

fn noisy_sample<R: Rng>(proto: &[bool], noise: f64, label: usize, timestamp: Option<i64>, rng: &mut R) -> SparseSample {
    let features =
        proto.iter().enumerate().filter_map(|(i, &bit)| (bit ^ rng.gen_bool(noise)).then_some(i as u32)).collect();
    SparseSample { features, label, timestamp }
}

/// Binary goodware/malware stream with drifting prototypes, one time window
/// per experience and a per-class 80/20 split.
pub fn synth_dil_generate(cfg: &SynthConfig, seed: u64) -> Result<ScenarioStream> {
    cfg.validate(ScenarioKind::Dil)?;
    let mut rng = stage_rng(seed, "synth-dil", 0);
    let d = cfg.feature_dim;
    let mut protos = [prototype(d, cfg.density, &mut rng), prototype(d, cfg.density, &mut rng)];
    let (n_gw, n_mw) = cfg.class_sizes();
    let mut experiences = Vec::with_capacity(cfg.experiences);
    for k in 1..=cfg.experiences {
        if k > 1 {
            for p in protos.iter_mut() {
                drift_prototype(p, cfg.drift, cfg.density, &mut rng);
            }
        }
        let start = cfg.start_day + (k as i64 - 1) * cfg.window_days;
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (label, n) in [(GOODWARE, n_gw), (MALWARE, n_mw)] {
            let mut class: Vec<SparseSample> = (0..n)
                .map(|_| {
                    let t = start + rng.gen_range(0..cfg.window_days);
                    noisy_sample(&protos[label], cfg.noise, label, Some(t), &mut rng)
                })
                .collect();
            class.shuffle(&mut rng);
            let n_train = ((n as f64 * DIL_TRAIN_FRACTION).round() as usize).clamp(1, n - 1);
            test.extend(class.split_off(n_train));
            train.extend(class);
        }
        experiences.push(Experience {
            id: k,
            train: Dataset::new(train, d, 2)?,
            test: Dataset::new(test, d, 2)?,
            window: Some((start, start + cfg.window_days)),
            classes: None,
        });
    }
    ScenarioStream::new(ScenarioKind::Dil, experiences)
}

/// Multi-class dataset with one independent prototype per class.
pub fn synth_cil_dataset(cfg: &SynthConfig, seed: u64) -> Result<Dataset> {
    cfg.validate(ScenarioKind::Cil)?;
    let mut rng = stage_rng(seed, "synth-cil", 0);
    let protos: Vec<Vec<bool>> =
        (0..cfg.classes_total).map(|_| prototype(cfg.feature_dim, cfg.density, &mut rng)).collect();
    let samples = protos
        .iter()
        .enumerate()
        .flat_map(|(c, p)| (0..cfg.samples_per_class).map(move |_| (c, p)).collect::<Vec<_>>())
        .map(|(c, p)| noisy_sample(p, cfg.noise, c, None, &mut rng))
        .collect();
    Dataset::new(samples, cfg.feature_dim, cfg.classes_total)
}

/// Class-incremental stream: class contents from `content_seed`, class order
/// and splits from `order_seed`.
pub fn synth_cil_generate_ordered(cfg: &SynthConfig, content_seed: u64, order_seed: u64) -> Result<ScenarioStream> {
    let ds = synth_cil_dataset(cfg, content_seed)?;
    build_cil_stream(&ds, cfg.classes_per_experience, order_seed, CIL_TRAIN_FRACTION)
}

pub fn synth_cil_generate(cfg: &SynthConfig, seed: u64) -> Result<ScenarioStream> {
    synth_cil_generate_ordered(cfg, seed, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small() -> SynthConfig {
        SynthConfig {
            feature_dim: 60,
            experiences: 4,
            samples_per_experience: 100,
            samples_per_class: 10,
            classes_total: 20,
            classes_per_experience: 5,
            ..Default::default()
        }
    }

    #[test]
    fn no_drift_no_noise_reproduces_prototypes() {
        let cfg = SynthConfig { drift: 0.0, noise: 0.0, ..small() };
        let s = synth_dil_generate(&cfg, 5).unwrap();
        for label in [GOODWARE, MALWARE] {
            let distinct: HashSet<&Vec<u32>> = s
                .experiences()
                .iter()
                .flat_map(|e| e.train.samples().iter().chain(e.test.samples()))
                .filter(|x| x.label == label)
                .map(|x| &x.features)
                .collect();
            assert_eq!(distinct.len(), 1);
        }
    }

    #[test]
    fn dil_split_ratio_and_timestamps() {
        let s = synth_dil_generate(&small(), 1).unwrap();
        assert_eq!(s.len(), 4);
        let mut last_end = i64::MIN;
        for e in s.experiences() {
            assert_eq!(e.train.class_histogram(), vec![72, 8]);
            assert_eq!(e.test.class_histogram(), vec![18, 2]);
            let (a, b) = e.window.unwrap();
            assert!(a >= last_end);
            last_end = b;
            assert!(e.train.samples().iter().all(|x| (a..b).contains(&x.timestamp.unwrap())));
        }
    }

    #[test]
    fn generators_are_pure() {
        assert_eq!(synth_dil_generate(&small(), 3).unwrap(), synth_dil_generate(&small(), 3).unwrap());
        assert_eq!(synth_cil_generate(&small(), 3).unwrap(), synth_cil_generate(&small(), 3).unwrap());
        assert_ne!(synth_dil_generate(&small(), 3).unwrap(), synth_dil_generate(&small(), 4).unwrap());
    }

    #[test]
    fn cil_groups_cover_all_classes() {
        let cfg = SynthConfig {
            classes_total: 100,
            classes_per_experience: 10,
            feature_dim: 40,
            samples_per_class: 10,
            ..Default::default()
        };
        let s = synth_cil_generate(&cfg, 0).unwrap();
        assert_eq!(s.len(), 10);
        let mut all: Vec<usize> = s.experiences().iter().flat_map(|e| e.classes.clone().unwrap()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn order_seed_keeps_class_contents() {
        let a = synth_cil_generate_ordered(&small(), 8, 1).unwrap();
        let b = synth_cil_generate_ordered(&small(), 8, 2).unwrap();
        let classes =
            |s: &ScenarioStream| s.experiences().iter().map(|e| e.classes.clone().unwrap()).collect::<Vec<_>>();
        assert_ne!(classes(&a), classes(&b));
        let contents = |s: &ScenarioStream| {
            let mut v: Vec<(usize, Vec<u32>)> = s.all_samples().into_iter().map(|x| (x.label, x.features)).collect();
            v.sort();
            v
        };
        assert_eq!(contents(&a), contents(&b));
    }

    #[test]
    fn noiseless_cil_classes_are_constant() {
        let cfg = SynthConfig { noise: 0.0, ..small() };
        let s = synth_cil_generate(&cfg, 2).unwrap();
        let e = &s.experiences()[0];
        for c in e.classes.as_ref().unwrap() {
            let set: HashSet<&Vec<u32>> =
                e.train.samples().iter().filter(|x| x.label == *c).map(|x| &x.features).collect();
            assert_eq!(set.len(), 1);
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(SynthConfig { drift: 1.5, ..small() }.validate(ScenarioKind::Dil).is_err());
        assert!(SynthConfig { classes_total: 21, ..small() }.validate(ScenarioKind::Cil).is_err());
    }
}
