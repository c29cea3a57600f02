use super::{LossTerms, StepContext, Strategy};
use crate::data::SparseSample;
use crate::error::{contract, Result};
use crate::nn::{masked_softmax, ClassMask, ForwardCache, Matrix, MlpModel};
use crate::scenarios::{Experience, ScenarioStream};
use crate::snapshot::ModelSnapshot;

/// Temperature-softened distillation loss between the old model's and the
/// new model's distributions over the old classes, scaled by `T^2`, averaged
/// over the batch. Returns the loss and d loss / d new_logits.
pub fn lwf_distill(
    new_logits: &Matrix,
    old_logits: &Matrix,
    temperature: f64,
    old_mask: &ClassMask,
) -> Result<(f64, Matrix)> {
    if new_logits.rows != old_logits.rows || new_logits.cols != old_logits.cols || old_mask.len() != new_logits.cols {
        return contract("distillation logits have mismatched shapes");
    }
    let classes = old_mask.active_classes();
    let n = new_logits.rows as f64;
    let t = temperature;
    let mut dlogits = Matrix::zeros(new_logits.rows, new_logits.cols);
    let mut total = 0.0;
    let mut zn = vec![0.0; classes.len()];
    let mut zo = vec![0.0; classes.len()];
    for i in 0..new_logits.rows {
        for (k, &c) in classes.iter().enumerate() {
            zn[k] = new_logits.row(i)[c] / t;
            zo[k] = old_logits.row(i)[c] / t;
        }
        let (p, lse) = masked_softmax(&zn);
        let (q, _) = masked_softmax(&zo);
        let ce: f64 = q.iter().zip(&zn).map(|(qk, z)| qk * (lse - z)).sum();
        total += t * t * ce;
        let row = dlogits.row_mut(i);
        for (k, &c) in classes.iter().enumerate() {
            row[c] = t * (p[k] - q[k]) / n;
        }
    }
    Ok((total / n, dlogits))
}

/// Learning without forgetting against the model from the previous
/// experience.
pub struct Lwf {
    alpha: f64,
    temperature: f64,
    old: Option<ModelSnapshot>,
}

impl Lwf {
    pub fn new(alpha: f64, temperature: f64) -> Self {
        Lwf { alpha, temperature, old: None }
    }

    pub fn has_teacher(&self) -> bool {
        self.old.is_some()
    }
}

impl Strategy for Lwf {
    fn name(&self) -> String {
        "lwf".into()
    }

    fn on_experience_start(&mut self, model: &MlpModel, e: &Experience, stream: &ScenarioStream) -> Result<()> {
        self.old = if e.id > 1 {
            Some(ModelSnapshot::new(model, (e.id - 1) as u32, 0, stream.kind(), stream.seen_classes(e.id - 1))?)
        } else {
            None
        };
        Ok(())
    }

    fn extra_loss(
        &mut self,
        _model: &MlpModel,
        batch: &[&SparseSample],
        cache: &ForwardCache,
        _ctx: &StepContext<'_>,
        terms: &mut LossTerms<'_>,
    ) -> Result<f64> {
        let Some(old) = &self.old else { return Ok(0.0) };
        if self.alpha == 0.0 {
            return Ok(0.0);
        }
        let old_logits = old.forward_logits(batch)?;
        let (loss, d) = lwf_distill(&cache.logits, &old_logits, self.temperature, old.mask())?;
        terms.dlogits.data.iter_mut().zip(&d.data).for_each(|(a, b)| *a += self.alpha * b);
        Ok(self.alpha * loss)
    }
}
