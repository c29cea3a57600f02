use super::Strategy;
use crate::data::SparseSample;
use crate::error::Result;
use crate::nn::MlpModel;
use crate::scenarios::{Experience, ScenarioStream};

/// Trains on the union of every training set seen so far.
#[derive(Default)]
pub struct Cumulative {
    history: Vec<SparseSample>,
}

impl Strategy for Cumulative {
    fn name(&self) -> String {
        "cumulative".into()
    }

    fn augment_training_set(&self, train: &[SparseSample]) -> Vec<SparseSample> {
        let mut out = self.history.clone();
        out.extend_from_slice(train);
        out
    }

    fn on_experience_end(&mut self, _model: &MlpModel, e: &Experience, _s: &ScenarioStream) -> Result<()> {
        self.history.extend_from_slice(e.train.samples());
        Ok(())
    }
}
