//! The trainable scorer: bag-of-n-gram input encoder, recurrent encoder of
//! the derivation-sequence prefix, and a two-layer prediction head whose
//! logits are combined with `log b` before the softmax.

mod params;
mod train;

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::background::NextSymbolSource;
use crate::error::Error;
use crate::intersect::NextSymbolDistribution;
use crate::symbols::{Alphabet, LabelId};

pub use self::params::{Dims, Matrix, NgramVocab, ScorerParams, OOV};
pub use self::train::{train, train_with, TrainConfig, TrainReport};

/// Dropout rates for the unigram and bigram projections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dropout {
    pub unigram: f64,
    pub bigram: f64,
}

impl Default for Dropout {
    fn default() -> Self {
        Dropout { unigram: 0.1, bigram: 0.3 }
    }
}

/// An utterance paired with its gold derivation sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub utterance: Vec<String>,
    pub ds: Vec<LabelId>,
}

/// Input encoding `u_b = [u1; u2]` plus what backpropagation needs.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedInput {
    pub ub: Vec<f64>,
    uni_bag: Vec<(usize, f64)>,
    bi_bag: Vec<(usize, f64)>,
    /// Inverted-dropout multipliers, absent when dropout is off.
    uni_mask: Option<Vec<f64>>,
    bi_mask: Option<Vec<f64>>,
}

fn dropout_mask(n: usize, rate: f64, rng: &mut impl Rng) -> Vec<f64> {
    let keep = 1.0 - rate;
    (0..n).map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect()
}

fn project(w: &Matrix, b: &[f64], bag: &[(usize, f64)]) -> Vec<f64> {
    let mut out = b.to_vec();
    for &(id, count) in bag {
        for (r, o) in out.iter_mut().enumerate() {
            *o += w.at(r, id) * count;
        }
    }
    out
}

/// `u_b = [W1·bag1 + b1 ; W2·bag2 + b2]`, with dropout on each half when
/// `dropout` is given.
pub fn encode_input<R: Rng>(
    utterance: &[String],
    vocab: &NgramVocab,
    params: &ScorerParams,
    dropout: Option<(Dropout, &mut R)>,
) -> EncodedInput {
    let (uni_bag, bi_bag) = vocab.bags(utterance);
    let mut u1 = project(&params.uni_w, &params.uni_b, &uni_bag);
    let mut u2 = project(&params.bi_w, &params.bi_b, &bi_bag);
    let (uni_mask, bi_mask) = match dropout {
        Some((rates, rng)) => {
            let m1 = dropout_mask(u1.len(), rates.unigram, rng);
            let m2 = dropout_mask(u2.len(), rates.bigram, rng);
            u1.iter_mut().zip(&m1).for_each(|(v, m)| *v *= m);
            u2.iter_mut().zip(&m2).for_each(|(v, m)| *v *= m);
            (Some(m1), Some(m2))
        }
        None => (None, None),
    };
    u1.extend(u2);
    EncodedInput { ub: u1, uni_bag, bi_bag, uni_mask, bi_mask }
}

/// Deterministic encoding (dropout off).
pub fn encode(utterance: &[String], vocab: &NgramVocab, params: &ScorerParams) -> EncodedInput {
    encode_input::<rand::rngs::ThreadRng>(utterance, vocab, params, None)
}

/// One Elman step `h' = tanh(Wx·e(x) + Wh·h + b)`.
pub fn rnn_step(params: &ScorerParams, h: &[f64], label: LabelId) -> Vec<f64> {
    let x = params.embed.row(label.index());
    let a = params.rnn_wx.mul_vec(x);
    let b = params.rnn_wh.mul_vec(h);
    a.iter().zip(&b).zip(&params.rnn_b).map(|((a, b), c)| (a + b + c).tanh()).collect()
}

/// States `h_0 = 0, h_1, …, h_n` over the prefix.
pub fn rnn_states(params: &ScorerParams, prefix: &[LabelId]) -> Vec<Vec<f64>> {
    let mut states = vec![vec![0.0; params.dims.hidden]];
    for &l in prefix {
        let next = rnn_step(params, states.last().unwrap(), l);
        states.push(next);
    }
    states
}

struct HeadOut {
    z: Vec<f64>,
    a: Vec<f64>,
    logits: Vec<f64>,
}

fn head(params: &ScorerParams, h: &[f64], ub: &[f64]) -> HeadOut {
    let mut z = h.to_vec();
    z.extend_from_slice(ub);
    let a: Vec<f64> = params.head_w1.mul_vec(&z).iter().zip(&params.head_b1).map(|(v, b)| (v + b).tanh()).collect();
    let logits = params.head_w2.mul_vec(&a).iter().zip(&params.head_b2).map(|(v, b)| v + b).collect();
    HeadOut { z, a, logits }
}

/// Logits over labels then END, given the recurrent state.
pub fn logits_from_state(params: &ScorerParams, h: &[f64], ub: &[f64]) -> Vec<f64> {
    head(params, h, ub).logits
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `rnn_θ(· | prefix)` over labels then END.
pub fn model_distribution(params: &ScorerParams, ub: &[f64], prefix: &[LabelId]) -> Vec<f64> {
    let states = rnn_states(params, prefix);
    softmax(&logits_from_state(params, states.last().unwrap(), ub))
}

/// `p(x) ∝ b(x)·m(x)`; entries with `b(x) = 0` get exactly 0.
pub fn combined_distribution(model: &[f64], bg: &[f64]) -> crate::Result<Vec<f64>> {
    debug_assert_eq!(model.len(), bg.len());
    let prod: Vec<f64> = model.iter().zip(bg).map(|(m, b)| if *b > 0.0 { m * b } else { 0.0 }).collect();
    let sum: f64 = prod.iter().sum();
    if !(sum > 0.0) {
        return Err(Error::AllZeroBackground);
    }
    Ok(prod.into_iter().map(|p| p / sum).collect())
}

/// Log-space version of [`combined_distribution`]: softmax of
/// `logits + log b` over the support of `b`.
pub fn combined_from_logits(logits: &[f64], bg: &[f64]) -> crate::Result<Vec<f64>> {
    let scores: Vec<Option<f64>> =
        logits.iter().zip(bg).map(|(l, b)| if *b > 0.0 { Some(l + b.ln()) } else { None }).collect();
    let max = scores.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::AllZeroBackground);
    }
    let exps: Vec<f64> = scores.iter().map(|s| s.map_or(0.0, |s| (s - max).exp())).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

fn target_index(ds: &[LabelId], t: usize, n_labels: usize) -> usize {
    ds.get(t).map_or(n_labels, |l| l.index())
}

fn target_name(alphabet: Option<&Alphabet>, ds: &[LabelId], t: usize) -> String {
    match (ds.get(t), alphabet) {
        (Some(l), Some(a)) => a.name(*l).to_string(),
        (Some(l), None) => l.to_string(),
        (None, _) => "END".to_string(),
    }
}

/// Loss and, when `want_grad`, its gradient for one example.
fn forward_backward(
    ds: &[LabelId],
    enc: &EncodedInput,
    params: &ScorerParams,
    bg: &dyn NextSymbolSource,
    want_grad: bool,
) -> crate::Result<(f64, Option<ScorerParams>)> {
    let n = params.n_labels;
    let hidden = params.dims.hidden;
    let states = rnn_states(params, ds);
    let mut loss = 0.0;
    let mut grad = want_grad.then(|| params.zeros_like());
    let mut dh: Vec<Vec<f64>> = vec![vec![0.0; hidden]; ds.len() + 1];
    let mut dub = vec![0.0; enc.ub.len()];

    for t in 0..=ds.len() {
        let b = bg.conditional(&ds[..t])?;
        let out = head(params, &states[t], &enc.ub);
        let p = combined_from_logits(&out.logits, &b.to_vec())?;
        let gold = target_index(ds, t, n);
        if !(p[gold] > 0.0) {
            return Err(Error::GoldExcluded { step: t, label: target_name(None, ds, t) });
        }
        loss -= p[gold].ln();
        if let Some(g) = grad.as_mut() {
            let mut dlogits = p;
            dlogits[gold] -= 1.0;
            g.head_w2.add_outer(&dlogits, &out.a);
            g.head_b2.iter_mut().zip(&dlogits).for_each(|(v, d)| *v += d);
            let da = params.head_w2.tmul_vec(&dlogits);
            let dpre: Vec<f64> = da.iter().zip(&out.a).map(|(d, a)| d * (1.0 - a * a)).collect();
            g.head_w1.add_outer(&dpre, &out.z);
            g.head_b1.iter_mut().zip(&dpre).for_each(|(v, d)| *v += d);
            let dz = params.head_w1.tmul_vec(&dpre);
            dh[t].iter_mut().zip(&dz[..hidden]).for_each(|(v, d)| *v += d);
            dub.iter_mut().zip(&dz[hidden..]).for_each(|(v, d)| *v += d);
        }
    }

    let Some(mut g) = grad else {
        return Ok((loss, None));
    };

    // Backpropagation through time; h_0 is a constant.
    for t in (1..=ds.len()).rev() {
        let h = &states[t];
        let dpre: Vec<f64> = dh[t].iter().zip(h).map(|(d, h)| d * (1.0 - h * h)).collect();
        let x = ds[t - 1];
        g.rnn_wx.add_outer(&dpre, params.embed.row(x.index()));
        g.rnn_wh.add_outer(&dpre, &states[t - 1]);
        g.rnn_b.iter_mut().zip(&dpre).for_each(|(v, d)| *v += d);
        let dx = params.rnn_wx.tmul_vec(&dpre);
        g.embed.row_mut(x.index()).iter_mut().zip(&dx).for_each(|(v, d)| *v += d);
        let dprev = params.rnn_wh.tmul_vec(&dpre);
        dh[t - 1].iter_mut().zip(&dprev).for_each(|(v, d)| *v += d);
    }

    let (du1, du2) = dub.split_at(params.dims.unigram);
    let du1: Vec<f64> = match &enc.uni_mask {
        Some(m) => du1.iter().zip(m).map(|(d, m)| d * m).collect(),
        None => du1.to_vec(),
    };
    let du2: Vec<f64> = match &enc.bi_mask {
        Some(m) => du2.iter().zip(m).map(|(d, m)| d * m).collect(),
        None => du2.to_vec(),
    };
    for &(id, count) in &enc.uni_bag {
        for (r, d) in du1.iter().enumerate() {
            g.uni_w.data[r * g.uni_w.cols + id] += d * count;
        }
    }
    g.uni_b.iter_mut().zip(&du1).for_each(|(v, d)| *v += d);
    for &(id, count) in &enc.bi_bag {
        for (r, d) in du2.iter().enumerate() {
            g.bi_w.data[r * g.bi_w.cols + id] += d * count;
        }
    }
    g.bi_b.iter_mut().zip(&du2).for_each(|(v, d)| *v += d);
    Ok((loss, Some(g)))
}

/// `Σ_t −log p(gold_t | prefix_t)` including the final END step.
pub fn sequence_loss(
    example: &TrainingExample,
    params: &ScorerParams,
    bg: &dyn NextSymbolSource,
    enc: &EncodedInput,
) -> crate::Result<f64> {
    forward_backward(&example.ds, enc, params, bg, false).map(|(l, _)| l)
}

/// Analytic gradient of [`sequence_loss`] with respect to every parameter.
pub fn grad(
    example: &TrainingExample,
    params: &ScorerParams,
    bg: &dyn NextSymbolSource,
    enc: &EncodedInput,
) -> crate::Result<(f64, ScorerParams)> {
    forward_backward(&example.ds, enc, params, bg, true).map(|(l, g)| (l, g.expect("gradient requested")))
}

/// Per-step combined distribution of a scorer under a background, reusing
/// a running recurrent state.
pub fn step_distribution(
    params: &ScorerParams,
    h: &[f64],
    ub: &[f64],
    b: &NextSymbolDistribution,
) -> crate::Result<Vec<f64>> {
    combined_from_logits(&logits_from_state(params, h, ub), &b.to_vec())
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// A trained scorer with its vocabulary; saved as versioned JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub version: u32,
    pub labels: Vec<String>,
    pub vocab: NgramVocab,
    pub params: ScorerParams,
}

impl Model {
    pub fn new(labels: &Alphabet, vocab: NgramVocab, params: ScorerParams) -> Self {
        Model { version: MODEL_FORMAT_VERSION, labels: labels.names().to_vec(), vocab, params }
    }

    pub fn to_json(&self) -> crate::Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> crate::Result<Model> {
        let mut m: Model = serde_json::from_str(text)?;
        if m.version != MODEL_FORMAT_VERSION {
            return Err(Error::Invalid(format!("unsupported model version {}", m.version)));
        }
        m.vocab.reindex();
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> crate::Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> crate::Result<Model> {
        Model::from_json(&std::fs::read_to_string(path)?)
    }

    /// Checks the model was trained over this grammar's labels.
    pub fn check_labels(&self, alphabet: &Alphabet) -> crate::Result<()> {
        if self.labels != alphabet.names() {
            return Err(Error::Invalid("model labels do not match the grammar".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
