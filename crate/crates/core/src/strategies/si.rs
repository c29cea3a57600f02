use super::{LossTerms, StepContext, Strategy};
use crate::data::SparseSample;
use crate::error::Result;
use crate::nn::{ForwardCache, MlpModel};
use crate::scenarios::{Experience, ScenarioStream};

/// Synaptic-intelligence bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct SiState {
    pub lambda: f64,
    pub damping: f64,
    /// Running path integral for the current experience.
    pub omega: Vec<f64>,
    /// Consolidated importances.
    pub importance: Vec<f64>,
    /// Parameters at the last consolidation.
    pub reference: Vec<f64>,
}

impl SiState {
    pub fn new(params: &[f64], lambda: f64, damping: f64) -> Self {
        SiState {
            lambda,
            damping,
            omega: vec![0.0; params.len()],
            importance: vec![0.0; params.len()],
            reference: params.to_vec(),
        }
    }

    /// `omega_i -= g_i * delta_i` for one optimizer step.
    pub fn accumulate(&mut self, grad: &[f64], delta: &[f64]) {
        for ((w, g), d) in self.omega.iter_mut().zip(grad).zip(delta) {
            *w -= g * d;
        }
    }

    /// Folds the path integral into the importances and re-anchors.
    pub fn consolidate(&mut self, params: &[f64]) {
        for i in 0..params.len() {
            let d = params[i] - self.reference[i];
            self.importance[i] += self.omega[i].max(0.0) / (d * d + self.damping);
        }
        self.reference.copy_from_slice(params);
        self.omega.iter_mut().for_each(|w| *w = 0.0);
    }

    /// `lambda * sum_i Omega_i (theta_i - theta*_i)^2` and its gradient.
    pub fn penalty(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let mut loss = 0.0;
        let grad = params
            .iter()
            .zip(&self.reference)
            .zip(&self.importance)
            .map(|((p, r), o)| {
                let d = p - r;
                loss += o * d * d;
                2.0 * self.lambda * o * d
            })
            .collect();
        (self.lambda * loss, grad)
    }
}

pub struct Si {
    lambda: f64,
    damping: f64,
    state: Option<SiState>,
}

impl Si {
    pub fn new(lambda: f64, damping: f64) -> Self {
        Si { lambda, damping, state: None }
    }

    pub fn state(&self) -> Option<&SiState> {
        self.state.as_ref()
    }
}

impl Strategy for Si {
    fn name(&self) -> String {
        "si".into()
    }

    fn on_experience_start(&mut self, model: &MlpModel, _e: &Experience, _s: &ScenarioStream) -> Result<()> {
        if self.state.is_none() {
            self.state = Some(SiState::new(model.params(), self.lambda, self.damping));
        }
        Ok(())
    }

    fn extra_loss(
        &mut self,
        model: &MlpModel,
        _b: &[&SparseSample],
        _c: &ForwardCache,
        _ctx: &StepContext<'_>,
        terms: &mut LossTerms<'_>,
    ) -> Result<f64> {
        let Some(state) = &self.state else { return Ok(0.0) };
        if state.importance.iter().all(|&o| o == 0.0) {
            return Ok(0.0);
        }
        let (loss, g) = state.penalty(model.params());
        terms.grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        Ok(loss)
    }

    fn wants_step_delta(&self) -> bool {
        true
    }

    fn after_step(&mut self, grad: &[f64], before: &[f64], after: &[f64]) {
        if let Some(state) = self.state.as_mut() {
            for i in 0..grad.len() {
                state.omega[i] -= grad[i] * (after[i] - before[i]);
            }
        }
    }

    fn on_experience_end(&mut self, model: &MlpModel, _e: &Experience, _s: &ScenarioStream) -> Result<()> {
        self.state
            .get_or_insert_with(|| SiState::new(model.params(), self.lambda, self.damping))
            .consolidate(model.params());
        Ok(())
    }
}
