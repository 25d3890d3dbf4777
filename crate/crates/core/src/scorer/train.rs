use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    encode, encode_input, grad, sequence_loss, Dims, Dropout, Model, NgramVocab, ScorerParams, TrainingExample,
};
use crate::background::{BackgroundBuilder, NextSymbolSource};
use crate::error::Error;
use crate::symbols::Alphabet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub dims: Dims,
    pub dropout: Dropout,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 30, learning_rate: 0.1, dims: Dims::default(), dropout: Dropout::default(), seed: 42 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if self.epochs == 0 {
            return Err(Error::Invalid("epochs must be at least 1".into()));
        }
        for rate in [self.dropout.unigram, self.dropout.bigram] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::Invalid(format!("dropout rate {rate} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean per-step training loss (dropout off) after each epoch.
    pub epoch_losses: Vec<f64>,
    /// Examples whose gold sequence the background rules out.
    pub skipped: usize,
}

fn gold_supported(ex: &TrainingExample, bg: &dyn NextSymbolSource) -> crate::Result<bool> {
    for t in 0..=ex.ds.len() {
        let b = bg.conditional(&ex.ds[..t])?;
        let p = match ex.ds.get(t) {
            Some(l) => b.prob(*l),
            None => b.end_prob,
        };
        if !(p > 0.0) {
            return Ok(false);
        }
    }
    Ok(true)
}

fn mean_step_loss(
    data: &[(&TrainingExample, Box<dyn NextSymbolSource + '_>)],
    vocab: &NgramVocab,
    params: &ScorerParams,
) -> crate::Result<f64> {
    let mut total = 0.0;
    let mut steps = 0usize;
    for (ex, bg) in data {
        let enc = encode(&ex.utterance, vocab, params);
        total += sequence_loss(ex, params, bg.as_ref(), &enc)?;
        steps += ex.ds.len() + 1;
    }
    Ok(if steps == 0 { 0.0 } else { total / steps as f64 })
}

/// SGD on the per-step mean loss, one example at a time, for
/// `cfg.epochs` shuffled passes. Deterministic given `cfg.seed`.
pub fn train(
    dataset: &[TrainingExample],
    alphabet: &Alphabet,
    builder: &BackgroundBuilder,
    cfg: &TrainConfig,
) -> crate::Result<(Model, TrainReport)> {
    train_with(dataset, alphabet, cfg, |u| Ok(Box::new(builder.build_or_fallback(u)?)))
}

/// [`train`] with a caller-supplied background per utterance.
pub fn train_with<'a, F>(
    dataset: &[TrainingExample],
    alphabet: &Alphabet,
    cfg: &TrainConfig,
    background: F,
) -> crate::Result<(Model, TrainReport)>
where
    F: Fn(&[String]) -> crate::Result<Box<dyn NextSymbolSource + 'a>>,
{
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let vocab = NgramVocab::build(dataset.iter().map(|e| e.utterance.as_slice()));
    let mut params = ScorerParams::random(cfg.dims, alphabet.len(), &vocab, &mut rng);

    let mut data = Vec::with_capacity(dataset.len());
    let mut skipped = 0;
    for ex in dataset {
        let bg = background(&ex.utterance)?;
        if gold_supported(ex, bg.as_ref())? {
            data.push((ex, bg));
        } else {
            skipped += 1;
            warn!("skipping `{}`: the background excludes its gold sequence", ex.utterance.join(" "));
        }
    }
    if data.is_empty() {
        return Err(Error::Invalid("no training example is compatible with its background".into()));
    }

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for (step, &i) in order.iter().enumerate() {
            let (ex, bg) = &data[i];
            let enc = encode_input(&ex.utterance, &vocab, &params, Some((cfg.dropout, &mut rng)));
            let (_, g) = grad(ex, &params, bg.as_ref(), &enc)?;
            params.sgd_step(&g, cfg.learning_rate / (ex.ds.len() + 1) as f64);
            if !params.is_finite() {
                return Err(Error::NumericalDivergence { epoch, step });
            }
        }
        let loss = mean_step_loss(&data, &vocab, &params)?;
        info!("epoch {epoch}: mean step loss {loss:.6}");
        epoch_losses.push(loss);
    }
    Ok((Model::new(alphabet, vocab, params), TrainReport { epoch_losses, skipped }))
}
