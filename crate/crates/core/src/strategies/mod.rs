//! Continual-learning strategies behind one lifecycle contract.
//!
//! The engine drives every strategy through the same hooks, so strategies
//! compose with each other (`si+replay`) and with the PCT regularizer.

use serde::{Deserialize, Serialize};

use crate::data::SparseSample;
use crate::error::{config, Result};
use crate::nn::{ClassMask, ForwardCache, Matrix, MlpModel};
use crate::scenarios::{Experience, ScenarioKind, ScenarioStream};

mod agem;
mod cumulative;
mod engine;
mod ewc;
mod lwf;
mod replay;
mod si;

pub use agem::{agem_project, agem_project_in_place, Agem, AGEM_REFERENCE_BATCH};
pub use cumulative::Cumulative;
pub use engine::{run_experience, training_rng, TrainConfig};
pub use ewc::{ewc_fisher, ewc_penalty, Ewc, EwcAnchor};
pub use lwf::{lwf_distill, Lwf};
pub use replay::{Replay, ReplayBuffer};
pub use si::{Si, SiState};

/// Gradient accumulators a strategy may add its extra loss into.
pub struct LossTerms<'a> {
    /// d loss / d logits, one row per batch sample; backpropagated once.
    pub dlogits: &'a mut Matrix,
    /// Direct parameter-space contributions.
    pub grad: &'a mut [f64],
}

/// Per-step context shared with the hooks.
pub struct StepContext<'a> {
    pub experience: &'a Experience,
    pub stream: &'a ScenarioStream,
    /// Classes active while training on the current experience.
    pub mask: &'a ClassMask,
}

pub trait Strategy: Send {
    fn name(&self) -> String;

    fn on_experience_start(
        &mut self,
        _model: &MlpModel,
        _experience: &Experience,
        _stream: &ScenarioStream,
    ) -> Result<()> {
        Ok(())
    }

    /// Training set for the current experience.
    fn augment_training_set(&self, train: &[SparseSample]) -> Vec<SparseSample> {
        train.to_vec()
    }

    /// Adds the strategy's penalty gradient and returns its loss.
    fn extra_loss(
        &mut self,
        _model: &MlpModel,
        _batch: &[&SparseSample],
        _cache: &ForwardCache,
        _ctx: &StepContext<'_>,
        _terms: &mut LossTerms<'_>,
    ) -> Result<f64> {
        Ok(0.0)
    }

    fn transform_gradient(&mut self, _model: &MlpModel, _ctx: &StepContext<'_>, _grad: &mut [f64]) -> Result<()> {
        Ok(())
    }

    /// Whether [`Strategy::after_step`] needs the parameters around each step.
    fn wants_step_delta(&self) -> bool {
        false
    }

    /// Called after each optimizer step with the gradient that was applied.
    fn after_step(&mut self, _grad: &[f64], _before: &[f64], _after: &[f64]) {}

    fn on_experience_end(
        &mut self,
        _model: &MlpModel,
        _experience: &Experience,
        _stream: &ScenarioStream,
    ) -> Result<()> {
        Ok(())
    }
}

/// Several strategies applied in order. Empty means plain fine-tuning.
#[derive(Default)]
pub struct StrategyStack {
    parts: Vec<Box<dyn Strategy>>,
}

impl StrategyStack {
    pub fn naive() -> Self {
        StrategyStack::default()
    }

    pub fn new(parts: Vec<Box<dyn Strategy>>) -> Self {
        StrategyStack { parts }
    }

    pub fn push(&mut self, s: Box<dyn Strategy>) {
        self.parts.push(s);
    }

    pub fn is_naive(&self) -> bool {
        self.parts.is_empty()
    }
}

impl Strategy for StrategyStack {
    fn name(&self) -> String {
        if self.parts.is_empty() {
            return "naive".into();
        }
        self.parts.iter().map(|p| p.name()).collect::<Vec<_>>().join("+")
    }

    fn on_experience_start(
        &mut self,
        model: &MlpModel,
        experience: &Experience,
        stream: &ScenarioStream,
    ) -> Result<()> {
        self.parts.iter_mut().try_for_each(|p| p.on_experience_start(model, experience, stream))
    }

    fn augment_training_set(&self, train: &[SparseSample]) -> Vec<SparseSample> {
        self.parts.iter().fold(train.to_vec(), |acc, p| p.augment_training_set(&acc))
    }

    fn extra_loss(
        &mut self,
        model: &MlpModel,
        batch: &[&SparseSample],
        cache: &ForwardCache,
        ctx: &StepContext<'_>,
        terms: &mut LossTerms<'_>,
    ) -> Result<f64> {
        let mut total = 0.0;
        for p in self.parts.iter_mut() {
            total += p.extra_loss(model, batch, cache, ctx, terms)?;
        }
        Ok(total)
    }

    fn transform_gradient(&mut self, model: &MlpModel, ctx: &StepContext<'_>, grad: &mut [f64]) -> Result<()> {
        self.parts.iter_mut().try_for_each(|p| p.transform_gradient(model, ctx, grad))
    }

    fn wants_step_delta(&self) -> bool {
        self.parts.iter().any(|p| p.wants_step_delta())
    }

    fn after_step(&mut self, grad: &[f64], before: &[f64], after: &[f64]) {
        self.parts.iter_mut().for_each(|p| p.after_step(grad, before, after));
    }

    fn on_experience_end(&mut self, model: &MlpModel, experience: &Experience, stream: &ScenarioStream) -> Result<()> {
        self.parts.iter_mut().try_for_each(|p| p.on_experience_end(model, experience, stream))
    }
}

/// Hyperparameters for every built-in strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyConfig {
    /// Strategy components joined by `+`, e.g. `si+replay`; `naive` for none.
    pub name: String,
    /// Replay / A-GEM memory size; `None` picks 200 (DIL) or 1000 (CIL).
    pub memory: Option<usize>,
    pub agem_batch: usize,
    pub ewc_lambda: f64,
    pub fisher_samples: usize,
    pub si_lambda: f64,
    pub si_damping: f64,
    pub lwf_alpha: f64,
    pub lwf_temperature: f64,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            name: "naive".into(),
            memory: None,
            agem_batch: AGEM_REFERENCE_BATCH,
            ewc_lambda: 0.001,
            fisher_samples: 1000,
            si_lambda: 0.001,
            si_damping: 0.1,
            lwf_alpha: 1.0,
            lwf_temperature: 1.0,
        }
    }
}

impl StrategyConfig {
    pub fn memory_for(&self, kind: ScenarioKind) -> usize {
        self.memory.unwrap_or(match kind {
            ScenarioKind::Dil => 200,
            ScenarioKind::Cil => 1000,
        })
    }

    pub fn validate(&self) -> Result<()> {
        parse_strategy_spec(&self.name)?;
        let checks = [
            ("strategy.ewc_lambda", self.ewc_lambda),
            ("strategy.si_lambda", self.si_lambda),
            ("strategy.si_damping", self.si_damping),
            ("strategy.lwf_alpha", self.lwf_alpha),
        ];
        for (k, v) in checks {
            if !(v >= 0.0 && v.is_finite()) {
                return config(format!("{k} must be non-negative, got {v}"));
            }
        }
        if !(self.lwf_temperature > 0.0 && self.lwf_temperature.is_finite()) {
            return config("strategy.lwf_temperature must be positive");
        }
        if self.si_damping == 0.0 {
            return config("strategy.si_damping must be positive");
        }
        if self.agem_batch == 0 {
            return config("strategy.agem_batch must be positive");
        }
        Ok(())
    }
}

pub const STRATEGY_NAMES: [&str; 7] = ["naive", "cumulative", "replay", "agem", "ewc", "si", "lwf"];

/// Parses `name[+name...]` into canonical component names.
pub fn parse_strategy_spec(spec: &str) -> Result<Vec<String>> {
    let mut out: Vec<String> = Vec::new();
    for part in spec.split('+').map(|p| p.trim().to_ascii_lowercase()) {
        let part = if part == "a-gem" { "agem".to_string() } else { part };
        if !STRATEGY_NAMES.contains(&part.as_str()) {
            return config(format!("unknown strategy {part:?}; expected one of {}", STRATEGY_NAMES.join(", ")));
        }
        if out.contains(&part) {
            return config(format!("strategy {part:?} listed twice"));
        }
        if part != "naive" {
            out.push(part);
        }
    }
    Ok(out)
}

/// Instantiates the strategies named in `spec` for one run.
pub fn build_strategy(params: &StrategyConfig, kind: ScenarioKind, seed: u64) -> Result<StrategyStack> {
    params.validate()?;
    let memory = params.memory_for(kind);
    let mut stack = StrategyStack::naive();
    for name in parse_strategy_spec(&params.name)? {
        let s: Box<dyn Strategy> = match name.as_str() {
            "cumulative" => Box::new(Cumulative::default()),
            "replay" => Box::new(Replay::new(memory, seed)),
            "agem" => Box::new(Agem::new(memory, params.agem_batch, seed)),
            "ewc" => Box::new(Ewc::new(params.ewc_lambda, params.fisher_samples, seed)),
            "si" => Box::new(Si::new(params.si_lambda, params.si_damping)),
            "lwf" => Box::new(Lwf::new(params.lwf_alpha, params.lwf_temperature)),
            _ => unreachable!("validated by parse_strategy_spec"),
        };
        stack.push(s);
    }
    Ok(stack)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_parsing() {
        assert_eq!(parse_strategy_spec("naive").unwrap(), Vec::<String>::new());
        assert_eq!(parse_strategy_spec("SI+Replay").unwrap(), vec!["si", "replay"]);
        assert_eq!(parse_strategy_spec("a-gem").unwrap(), vec!["agem"]);
        assert!(parse_strategy_spec("gem").is_err());
        assert!(parse_strategy_spec("si+si").is_err());
    }

    #[test]
    fn stack_names() {
        let cfg = StrategyConfig { name: "si+replay".into(), ..Default::default() };
        let s = build_strategy(&cfg, ScenarioKind::Dil, 0).unwrap();
        assert_eq!(s.name(), "si+replay");
        assert_eq!(StrategyStack::naive().name(), "naive");
    }
}
