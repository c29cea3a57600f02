//! Positive-congruent training: focal distillation with logit matching
//! against the previous model version.
//!
//! Per sample the penalty is `w * 0.5 * ||z - z_old||^2`, where the focal
//! weight `w` is `alpha + beta` when the old model classified the sample
//! correctly and `alpha` otherwise. The batch loss is the mean penalty times
//! `lambda`. Logits are compared only over the old model's seen classes.

use serde::{Deserialize, Serialize};

use crate::data::SparseSample;
use crate::error::{config, contract, Result};
use crate::nn::{argmax, ClassMask, Matrix, MlpModel};
use crate::snapshot::ModelSnapshot;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PctConfig {
    pub enabled: bool,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
}

impl Default for PctConfig {
    fn default() -> Self {
        PctConfig { enabled: false, alpha: 1.0, beta: 0.5, lambda: 1.0 }
    }
}

impl PctConfig {
    pub fn enabled_with(alpha: f64, beta: f64, lambda: f64) -> Self {
        PctConfig { enabled: true, alpha, beta, lambda }
    }

    pub fn validate(&self) -> Result<()> {
        for (key, v) in [("pct.alpha", self.alpha), ("pct.beta", self.beta), ("pct.lambda", self.lambda)] {
            if !(v >= 0.0 && v.is_finite()) {
                return config(format!("{key} must be a non-negative finite number, got {v}"));
            }
        }
        Ok(())
    }
}

/// `0.5 * ||new - old||^2` and its gradient `new - old`.
pub fn fd_lm(new_logits: &[f64], old_logits: &[f64]) -> Result<(f64, Vec<f64>)> {
    if new_logits.len() != old_logits.len() {
        return contract(format!("logit vectors differ in length: {} vs {}", new_logits.len(), old_logits.len()));
    }
    let d: Vec<f64> = new_logits.iter().zip(old_logits).map(|(a, b)| a - b).collect();
    Ok((0.5 * d.iter().map(|x| x * x).sum::<f64>(), d))
}

pub fn focal_weight(old_prediction: usize, true_label: usize, alpha: f64, beta: f64) -> f64 {
    if old_prediction == true_label {
        alpha + beta
    } else {
        alpha
    }
}

/// Logit-space form used inside the training loop: adds the PCT term's
/// d loss / d logits into `dlogits` and returns the loss.
pub fn pct_logit_terms(
    new_logits: &Matrix,
    old_logits: &Matrix,
    labels: &[usize],
    cfg: &PctConfig,
    old_mask: &ClassMask,
    dlogits: &mut Matrix,
) -> f64 {
    let n = new_logits.rows as f64;
    let classes = old_mask.active_classes();
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let z = new_logits.row(i);
        let z_old = old_logits.row(i);
        let w = focal_weight(argmax(z_old), y, cfg.alpha, cfg.beta);
        if w == 0.0 {
            continue;
        }
        let scale = cfg.lambda * w / n;
        let mut sq = 0.0;
        let dl = dlogits.row_mut(i);
        for &c in &classes {
            let d = z[c] - z_old[c];
            sq += d * d;
            dl[c] += scale * d;
        }
        total += w * 0.5 * sq;
    }
    cfg.lambda * total / n
}

/// Full PCT loss and its exact parameter gradient. The old snapshot is held
/// constant; only its seen classes are compared.
pub fn pct_loss(
    model: &MlpModel,
    old: &ModelSnapshot,
    batch: &[&SparseSample],
    cfg: &PctConfig,
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; model.param_count()];
    if !cfg.enabled {
        return Ok((0.0, grad));
    }
    let old_mask = old.mask();
    let cache = model.forward(batch, old_mask)?;
    let old_logits = old.forward_logits(batch)?;
    let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
    let mut dlogits = Matrix::zeros(batch.len(), model.output_dim());
    let loss = pct_logit_terms(&cache.logits, &old_logits, &labels, cfg, old_mask, &mut dlogits);
    model.backward(batch, &cache, &dlogits, &mut grad);
    Ok((loss, grad))
}
