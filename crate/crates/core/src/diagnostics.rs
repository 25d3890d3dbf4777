//! Distance of the scorer's own distribution from uniform at entity steps.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::scorer::{encode, logits_from_state, rnn_states, softmax, Model, TrainingExample};
use crate::symbols::LabelId;

/// `KL(m ‖ uniform) = Σ m log(m·K)`.
pub fn kl_to_uniform(dist: &[f64]) -> f64 {
    let k = dist.len() as f64;
    dist.iter().filter(|&&m| m > 0.0).map(|&m| m * (m * k).ln()).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KlReport {
    pub mean: f64,
    /// Entity steps available in the dataset.
    pub available: usize,
    pub sampled: usize,
}

/// Mean KL to uniform of `model_distribution` over `samples` steps drawn
/// (with replacement) from the steps whose gold label is an entity rule.
pub fn entity_step_kl(
    model: &Model,
    dataset: &[TrainingExample],
    is_entity: impl Fn(LabelId) -> bool,
    samples: usize,
    seed: u64,
) -> Option<KlReport> {
    let steps: Vec<(usize, usize)> = dataset
        .iter()
        .enumerate()
        .flat_map(|(i, ex)| {
            ex.ds.iter().enumerate().filter(|(_, l)| is_entity(**l)).map(move |(t, _)| (i, t)).collect::<Vec<_>>()
        })
        .collect();
    if steps.is_empty() || samples == 0 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..samples {
        let (i, t) = steps[rng.gen_range(0..steps.len())];
        let ex = &dataset[i];
        let ub = encode(&ex.utterance, &model.vocab, &model.params).ub;
        let states = rnn_states(&model.params, &ex.ds[..t]);
        let m = softmax(&logits_from_state(&model.params, states.last().unwrap(), &ub));
        total += kl_to_uniform(&m);
    }
    Some(KlReport { mean: total / samples as f64, available: steps.len(), sampled: samples })
}
