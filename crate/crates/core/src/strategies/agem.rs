use rand::seq::index;
use rand_chacha::ChaCha8Rng;

use super::{ReplayBuffer, StepContext, Strategy};
use crate::data::SparseSample;
use crate::error::Result;
use crate::nn::{loss_and_grad, MlpModel};
use crate::rng::stage_rng;
use crate::scenarios::{Experience, ScenarioStream};

/// Memory samples per reference gradient.
pub const AGEM_REFERENCE_BATCH: usize = 32;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Projects `grad` so it does not conflict with `reference`. Returns whether
/// a projection happened; a non-conflicting gradient is left untouched.
pub fn agem_project_in_place(grad: &mut [f64], reference: &[f64]) -> bool {
    let rr = dot(reference, reference);
    if rr <= 0.0 {
        return false;
    }
    let gr = dot(grad, reference);
    if gr >= 0.0 {
        return false;
    }
    let c = gr / rr;
    for (g, r) in grad.iter_mut().zip(reference) {
        *g -= c * r;
    }
    true
}

pub fn agem_project(grad: &[f64], reference: &[f64]) -> Vec<f64> {
    let mut g = grad.to_vec();
    agem_project_in_place(&mut g, reference);
    g
}

/// Averaged gradient episodic memory. The reference gradient is recomputed
/// every step on a fresh memory batch.
pub struct Agem {
    capacity: usize,
    batch: usize,
    seed: u64,
    memory: Option<ReplayBuffer>,
    rng: Option<ChaCha8Rng>,
    projections: usize,
}

impl Agem {
    pub fn new(capacity: usize, batch: usize, seed: u64) -> Self {
        Agem { capacity, batch, seed, memory: None, rng: None, projections: 0 }
    }

    pub fn memory(&self) -> Option<&ReplayBuffer> {
        self.memory.as_ref()
    }

    /// Number of steps whose gradient was projected so far.
    pub fn projections(&self) -> usize {
        self.projections
    }
}

impl Strategy for Agem {
    fn name(&self) -> String {
        "agem".into()
    }

    fn on_experience_start(&mut self, _model: &MlpModel, e: &Experience, stream: &ScenarioStream) -> Result<()> {
        if self.memory.is_none() {
            self.memory = Some(ReplayBuffer::new(self.capacity, stream.len(), self.seed));
        }
        self.rng = Some(stage_rng(self.seed, "agem", e.id as u64));
        Ok(())
    }

    fn transform_gradient(&mut self, model: &MlpModel, ctx: &StepContext<'_>, grad: &mut [f64]) -> Result<()> {
        let Some(memory) = self.memory.as_ref().filter(|m| !m.is_empty()) else {
            return Ok(());
        };
        let rng = self.rng.get_or_insert_with(|| stage_rng(self.seed, "agem", ctx.experience.id as u64));
        let all: Vec<&SparseSample> = memory.samples().collect();
        let picked = index::sample(rng, all.len(), self.batch.min(all.len()));
        let batch: Vec<&SparseSample> = picked.into_iter().map(|i| all[i]).collect();
        let (_, reference) = loss_and_grad(model, &batch, ctx.mask)?;
        if agem_project_in_place(grad, &reference) {
            self.projections += 1;
        }
        Ok(())
    }

    fn on_experience_end(&mut self, _model: &MlpModel, e: &Experience, stream: &ScenarioStream) -> Result<()> {
        self.memory
            .get_or_insert_with(|| ReplayBuffer::new(self.capacity, stream.len(), self.seed))
            .update(e.id, e.train.samples());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_projection() {
        assert_eq!(agem_project(&[1.0, 0.0], &[-1.0, 0.0]), vec![0.0, 0.0]);
        let g = agem_project(&[1.0, 1.0], &[-1.0, 0.0]);
        assert_eq!(g, vec![0.0, 1.0]);
    }

    #[test]
    fn no_conflict_passes_through() {
        let g = [0.3, -0.7, 1e-3];
        assert_eq!(agem_project(&g, &[1.0, 0.0, 0.0]), g.to_vec());
        assert_eq!(agem_project(&g, &[0.0, 0.0, 0.0]), g.to_vec());
    }
}
