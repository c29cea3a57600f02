use log::debug;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LossTerms, StepContext, Strategy};
use crate::data::SparseSample;
use crate::error::{config, contract, Result};
use crate::nn::{self, ClassMask, Matrix, MlpModel, OptimizerState};
use crate::pct::{pct_logit_terms, PctConfig};
use crate::rng::stage_rng;
use crate::scenarios::{Experience, ScenarioStream};
use crate::snapshot::ModelSnapshot;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: nn::DEFAULT_LEARNING_RATE,
            momentum: nn::DEFAULT_MOMENTUM,
            hidden: nn::DEFAULT_HIDDEN,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.hidden == 0 {
            return config("train.epochs, train.batch_size and train.hidden must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return config("train.learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return config("train.momentum must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Generator that shuffles the training set of experience `experience_id`.
pub fn training_rng(seed: u64, experience_id: usize) -> ChaCha8Rng {
    stage_rng(seed, "train", experience_id as u64)
}

/// Trains `model` on one experience and returns the snapshot `f_k`.
///
/// Each step minimises cross-entropy plus the strategy's extra loss plus,
/// from the second experience on and when enabled, the PCT term against the
/// model as it was when the experience started. The combined gradient goes
/// through the strategy's gradient transform before the SGD step.
#[allow(clippy::too_many_arguments)]
pub fn run_experience(
    cfg: &TrainConfig,
    strategy: &mut dyn Strategy,
    pct: &PctConfig,
    model: &mut MlpModel,
    opt: &mut OptimizerState,
    experience: &Experience,
    stream: &ScenarioStream,
    seed: u32,
) -> Result<ModelSnapshot> {
    let k = experience.id;
    if stream.experiences().get(k.wrapping_sub(1)) != Some(experience) {
        return contract(format!("experience {k} does not belong to the stream"));
    }
    let mask = ClassMask::from_classes(model.output_dim(), stream.seen_classes(k))?;
    opt.reset();

    let previous = if k > 1 {
        Some(ModelSnapshot::new(model, (k - 1) as u32, seed, stream.kind(), stream.seen_classes(k - 1))?)
    } else {
        None
    };
    let pct_active = pct.enabled && previous.is_some() && (pct.alpha > 0.0 || pct.beta > 0.0);

    strategy.on_experience_start(model, experience, stream)?;
    let train = strategy.augment_training_set(experience.train.samples());
    let ctx = StepContext { experience, stream, mask: &mask };

    let mut rng = training_rng(u64::from(seed), k);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut grad = vec![0.0; model.param_count()];
    let want_delta = strategy.wants_step_delta();
    let mut before = Vec::new();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&SparseSample> = chunk.iter().map(|&i| &train[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
            let cache = model.forward(&batch, &mask)?;
            let mut dlogits = Matrix::zeros(batch.len(), model.output_dim());
            let mut loss = nn::cross_entropy(&cache.logits, &labels, &mask, 1.0, &mut dlogits)?;
            grad.iter_mut().for_each(|g| *g = 0.0);

            let mut terms = LossTerms { dlogits: &mut dlogits, grad: &mut grad };
            loss += strategy.extra_loss(model, &batch, &cache, &ctx, &mut terms)?;
            if pct_active {
                let old = previous.as_ref().expect("checked above");
                let old_logits = old.forward_logits(&batch)?;
                loss += pct_logit_terms(&cache.logits, &old_logits, &labels, pct, old.mask(), &mut dlogits);
            }
            model.backward(&batch, &cache, &dlogits, &mut grad);
            strategy.transform_gradient(model, &ctx, &mut grad)?;

            if want_delta {
                before.clear();
                before.extend_from_slice(model.params());
            }
            nn::sgd_step(model, opt, &grad)?;
            if want_delta {
                strategy.after_step(&grad, &before, model.params());
            }
            epoch_loss += loss;
            steps += 1;
        }
        debug!("experience {k} epoch {epoch}: mean loss {:.6}", epoch_loss / steps.max(1) as f64);
    }

    strategy.on_experience_end(model, experience, stream)?;
    ModelSnapshot::new(model, k as u32, seed, stream.kind(), stream.seen_classes(k))
}
