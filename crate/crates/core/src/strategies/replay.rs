use rand::seq::index;

use super::Strategy;
use crate::data::SparseSample;
use crate::error::Result;
use crate::nn::MlpModel;
use crate::rng::stage_rng;
use crate::scenarios::{Experience, ScenarioStream};

/// Bounded rehearsal memory with a fixed per-experience quota.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    quota: usize,
    stored: Vec<(usize, SparseSample)>,
    seed: u64,
}

impl ReplayBuffer {
    /// `quota = capacity / total_experiences`.
    pub fn new(capacity: usize, total_experiences: usize, seed: u64) -> Self {
        ReplayBuffer { capacity, quota: capacity / total_experiences.max(1), stored: Vec::new(), seed }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn quota(&self) -> usize {
        self.quota
    }

    pub fn len(&self) -> usize {
        self.stored.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stored.is_empty()
    }

    pub fn samples(&self) -> impl Iterator<Item = &SparseSample> {
        self.stored.iter().map(|(_, s)| s)
    }

    /// Stored sample count per source experience id.
    pub fn count_from(&self, experience: usize) -> usize {
        self.stored.iter().filter(|(e, _)| *e == experience).count()
    }

    /// Stores up to `quota` samples from `train`, drawn uniformly without
    /// replacement and stratified by class when more than one is present.
    /// Nothing already stored is evicted.
    pub fn update(&mut self, experience: usize, train: &[SparseSample]) {
        let room = self.capacity.saturating_sub(self.stored.len());
        let take = self.quota.min(room);
        if take == 0 {
            return;
        }
        if train.len() <= take {
            self.stored.extend(train.iter().map(|s| (experience, s.clone())));
            return;
        }
        let mut rng = stage_rng(self.seed, "replay", experience as u64);
        let mut by_class: Vec<(usize, Vec<usize>)> = Vec::new();
        for (i, s) in train.iter().enumerate() {
            match by_class.iter_mut().find(|(c, _)| *c == s.label) {
                Some((_, v)) => v.push(i),
                None => by_class.push((s.label, vec![i])),
            }
        }
        by_class.sort_by_key(|(c, _)| *c);

        // largest-remainder allocation of `take` across classes
        let n = train.len() as f64;
        let exact: Vec<f64> = by_class.iter().map(|(_, v)| take as f64 * v.len() as f64 / n).collect();
        let mut alloc: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut order: Vec<usize> = (0..alloc.len()).collect();
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
        let mut left = take - alloc.iter().sum::<usize>();
        for &c in order.iter().cycle().take(order.len() * 2) {
            if left == 0 {
                break;
            }
            if alloc[c] < by_class[c].1.len() {
                alloc[c] += 1;
                left -= 1;
            }
        }

        let mut chosen = Vec::with_capacity(take);
        for ((_, idx), &a) in by_class.iter().zip(&alloc) {
            chosen.extend(index::sample(&mut rng, idx.len(), a).into_iter().map(|i| idx[i]));
        }
        chosen.sort_unstable();
        self.stored.extend(chosen.into_iter().map(|i| (experience, train[i].clone())));
    }
}

/// Experience replay: past samples are concatenated into each epoch.
pub struct Replay {
    capacity: usize,
    seed: u64,
    buffer: Option<ReplayBuffer>,
}

impl Replay {
    pub fn new(capacity: usize, seed: u64) -> Self {
        Replay { capacity, seed, buffer: None }
    }

    pub fn buffer(&self) -> Option<&ReplayBuffer> {
        self.buffer.as_ref()
    }
}

impl Strategy for Replay {
    fn name(&self) -> String {
        "replay".into()
    }

    fn on_experience_start(&mut self, _model: &MlpModel, _e: &Experience, stream: &ScenarioStream) -> Result<()> {
        if self.buffer.is_none() {
            self.buffer = Some(ReplayBuffer::new(self.capacity, stream.len(), self.seed));
        }
        Ok(())
    }

    fn augment_training_set(&self, train: &[SparseSample]) -> Vec<SparseSample> {
        let mut out = train.to_vec();
        if let Some(b) = &self.buffer {
            out.extend(b.samples().cloned());
        }
        out
    }

    fn on_experience_end(&mut self, _model: &MlpModel, e: &Experience, stream: &ScenarioStream) -> Result<()> {
        self.buffer
            .get_or_insert_with(|| ReplayBuffer::new(self.capacity, stream.len(), self.seed))
            .update(e.id, e.train.samples());
        Ok(())
    }
}
