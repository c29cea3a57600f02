use rand::seq::index;

use super::{LossTerms, StepContext, Strategy};
use crate::data::SparseSample;
use crate::error::{contract, Result};
use crate::nn::{masked_softmax, ClassMask, ForwardCache, MlpModel};
use crate::rng::stage_rng;
use crate::scenarios::{Experience, ScenarioStream};

/// Empirical diagonal Fisher: the mean over `samples` of the squared
/// gradient of `log p(y | x)`.
pub fn ewc_fisher(model: &MlpModel, samples: &[&SparseSample], mask: &ClassMask) -> Result<Vec<f64>> {
    let mut fisher = vec![0.0; model.param_count()];
    if samples.is_empty() {
        return Ok(fisher);
    }
    let (hd, od, id) = (model.hidden_dim(), model.output_dim(), model.input_dim());
    let w2 = model.w2();
    let (o_b1, o_w2, o_b2) = (hd * id, hd * id + hd, hd * id + hd + od * hd);
    let cache = model.forward(samples, mask)?;
    let mut dh = vec![0.0; hd];
    for (i, s) in samples.iter().enumerate() {
        if !mask.is_active(s.label) {
            return crate::error::input(format!("label {} is not an active class", s.label));
        }
        let h = cache.hidden.row(i);
        let (p, _) = masked_softmax(cache.logits.row(i));
        dh.iter_mut().for_each(|v| *v = 0.0);
        for o in 0..od {
            let d = p[o] - if o == s.label { 1.0 } else { 0.0 };
            if d == 0.0 {
                continue;
            }
            fisher[o_b2 + o] += d * d;
            let row = &mut fisher[o_w2 + o * hd..o_w2 + (o + 1) * hd];
            for j in 0..hd {
                let g = d * h[j];
                row[j] += g * g;
                dh[j] += d * w2[o * hd + j];
            }
        }
        for j in 0..hd {
            if h[j] <= 0.0 {
                continue;
            }
            let g2 = dh[j] * dh[j];
            fisher[o_b1 + j] += g2;
            for &f in &s.features {
                fisher[f as usize * hd + j] += g2;
            }
        }
    }
    let n = samples.len() as f64;
    fisher.iter_mut().for_each(|f| *f /= n);
    Ok(fisher)
}

/// Parameters and Fisher diagonal saved after one experience.
#[derive(Debug, Clone, PartialEq)]
pub struct EwcAnchor {
    pub params: Vec<f64>,
    pub fisher: Vec<f64>,
}

/// `(lambda/2) * sum_a sum_i F_i (theta_i - theta*_i)^2` and its gradient.
pub fn ewc_penalty(params: &[f64], anchors: &[EwcAnchor], lambda: f64) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    for a in anchors {
        if a.params.len() != params.len() || a.fisher.len() != params.len() {
            return contract("EWC anchor length does not match the parameter count");
        }
        for i in 0..params.len() {
            let d = params[i] - a.params[i];
            loss += a.fisher[i] * d * d;
            grad[i] += lambda * a.fisher[i] * d;
        }
    }
    Ok((0.5 * lambda * loss, grad))
}

/// Elastic weight consolidation, one anchor per completed experience.
pub struct Ewc {
    lambda: f64,
    sample_cap: usize,
    seed: u64,
    anchors: Vec<EwcAnchor>,
}

impl Ewc {
    pub fn new(lambda: f64, sample_cap: usize, seed: u64) -> Self {
        Ewc { lambda, sample_cap, seed, anchors: Vec::new() }
    }

    pub fn anchors(&self) -> &[EwcAnchor] {
        &self.anchors
    }
}

impl Strategy for Ewc {
    fn name(&self) -> String {
        "ewc".into()
    }

    fn extra_loss(
        &mut self,
        model: &MlpModel,
        _b: &[&SparseSample],
        _c: &ForwardCache,
        _ctx: &StepContext<'_>,
        terms: &mut LossTerms<'_>,
    ) -> Result<f64> {
        if self.anchors.is_empty() {
            return Ok(0.0);
        }
        let (loss, g) = ewc_penalty(model.params(), &self.anchors, self.lambda)?;
        terms.grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        Ok(loss)
    }

    fn on_experience_end(&mut self, model: &MlpModel, e: &Experience, stream: &ScenarioStream) -> Result<()> {
        let mask = ClassMask::from_classes(model.output_dim(), stream.seen_classes(e.id))?;
        let train = e.train.samples();
        let chosen: Vec<&SparseSample> = if train.len() > self.sample_cap {
            let mut idx = index::sample(&mut stage_rng(self.seed, "fisher", e.id as u64), train.len(), self.sample_cap)
                .into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| &train[i]).collect()
        } else {
            train.iter().collect()
        };
        let fisher = ewc_fisher(model, &chosen, &mask)?;
        self.anchors.push(EwcAnchor { params: model.params().to_vec(), fisher });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn penalty_hand_value() {
        let a = EwcAnchor { params: vec![0.0; 3], fisher: vec![1.0; 3] };
        let (l, g) = ewc_penalty(&[2.0; 3], &[a], 0.001).unwrap();
        assert!((l - 3.0 * 0.002).abs() < 1e-15);
        assert!(g.iter().all(|&x| (x - 0.002).abs() < 1e-15));
    }

    #[test]
    fn penalty_zero_at_anchor_and_when_empty() {
        let a = EwcAnchor { params: vec![0.5, -1.0], fisher: vec![3.0, 0.2] };
        assert_eq!(ewc_penalty(&[0.5, -1.0], &[a.clone(), a], 0.1).unwrap(), (0.0, vec![0.0, 0.0]));
        assert_eq!(ewc_penalty(&[1.0, 2.0], &[], 0.1).unwrap(), (0.0, vec![0.0, 0.0]));
    }

    #[test]
    fn length_mismatch_is_contract_error() {
        let a = EwcAnchor { params: vec![0.0], fisher: vec![1.0] };
        assert!(ewc_penalty(&[1.0, 2.0], &[a], 0.1).is_err());
    }

    #[test]
    fn confident_model_has_zero_fisher() {
        let mut m = MlpModel::zeros(3, 2, 2).unwrap();
        m.b2_mut().copy_from_slice(&[0.0, 1000.0]);
        let x = SparseSample::new(vec![0, 2], 1, None).unwrap();
        let f = ewc_fisher(&m, &[&x], &ClassMask::all(2)).unwrap();
        assert!(f.iter().all(|&v| v == 0.0));
    }
}
