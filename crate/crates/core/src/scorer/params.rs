use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn random(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let data = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self · x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| self.row(r).iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    /// `selfᵀ · y`
    pub fn tmul_vec(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.row(r)) {
                *o += a * yr;
            }
        }
        out
    }

    /// `self += y ⊗ x`
    pub fn add_outer(&mut self, y: &[f64], x: &[f64]) {
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            for (v, xc) in self.row_mut(r).iter_mut().zip(x) {
                *v += yr * xc;
            }
        }
    }
}

/// Layer sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub embed: usize,
    pub hidden: usize,
    pub unigram: usize,
    pub bigram: usize,
    pub head: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Dims { embed: 16, hidden: 32, unigram: 16, bigram: 16, head: 32 }
    }
}

/// Index of utterance unigrams and bigrams. Id 0 is the OOV id of each.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NgramVocab {
    unigrams: Vec<String>,
    bigrams: Vec<String>,
    #[serde(skip)]
    unigram_index: HashMap<String, usize>,
    #[serde(skip)]
    bigram_index: HashMap<String, usize>,
}

pub const OOV: usize = 0;

fn bigram_key(a: &str, b: &str) -> String {
    format!("{a} {b}")
}

impl NgramVocab {
    pub fn build<'a>(utterances: impl IntoIterator<Item = &'a [String]>) -> Self {
        let mut v = NgramVocab {
            unigrams: vec!["<oov>".to_string()],
            bigrams: vec!["<oov>".to_string()],
            ..Default::default()
        };
        for u in utterances {
            for t in u {
                if !v.unigram_index.contains_key(t) {
                    v.unigram_index.insert(t.clone(), v.unigrams.len());
                    v.unigrams.push(t.clone());
                }
            }
            for w in u.windows(2) {
                let k = bigram_key(&w[0], &w[1]);
                if !v.bigram_index.contains_key(&k) {
                    v.bigram_index.insert(k.clone(), v.bigrams.len());
                    v.bigrams.push(k);
                }
            }
        }
        v
    }

    /// Rebuilds lookup tables after deserialization.
    pub(crate) fn reindex(&mut self) {
        self.unigram_index = self.unigrams.iter().enumerate().skip(1).map(|(i, t)| (t.clone(), i)).collect();
        self.bigram_index = self.bigrams.iter().enumerate().skip(1).map(|(i, t)| (t.clone(), i)).collect();
    }

    pub fn unigram_count(&self) -> usize {
        self.unigrams.len()
    }

    pub fn bigram_count(&self) -> usize {
        self.bigrams.len()
    }

    pub fn unigram_id(&self, t: &str) -> usize {
        self.unigram_index.get(t).copied().unwrap_or(OOV)
    }

    pub fn bigram_id(&self, a: &str, b: &str) -> usize {
        self.bigram_index.get(&bigram_key(a, b)).copied().unwrap_or(OOV)
    }

    /// Sparse count vectors `(id, count)` sorted by id.
    pub fn bags(&self, utterance: &[String]) -> (Vec<(usize, f64)>, Vec<(usize, f64)>) {
        let mut uni: HashMap<usize, f64> = HashMap::new();
        for t in utterance {
            *uni.entry(self.unigram_id(t)).or_default() += 1.0;
        }
        let mut bi: HashMap<usize, f64> = HashMap::new();
        for w in utterance.windows(2) {
            *bi.entry(self.bigram_id(&w[0], &w[1])).or_default() += 1.0;
        }
        let mut uni: Vec<_> = uni.into_iter().collect();
        let mut bi: Vec<_> = bi.into_iter().collect();
        uni.sort_by_key(|p| p.0);
        bi.sort_by_key(|p| p.0);
        (uni, bi)
    }
}

/// All trainable parameter blocks. Also used to hold gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerParams {
    pub dims: Dims,
    /// Rule labels; the output layer has one extra row for END.
    pub n_labels: usize,
    pub uni_w: Matrix,
    pub uni_b: Vec<f64>,
    pub bi_w: Matrix,
    pub bi_b: Vec<f64>,
    pub embed: Matrix,
    pub rnn_wx: Matrix,
    pub rnn_wh: Matrix,
    pub rnn_b: Vec<f64>,
    pub head_w1: Matrix,
    pub head_b1: Vec<f64>,
    pub head_w2: Matrix,
    pub head_b2: Vec<f64>,
}

impl ScorerParams {
    pub fn zeros(dims: Dims, n_labels: usize, vocab: &NgramVocab) -> Self {
        let input = dims.hidden + dims.unigram + dims.bigram;
        ScorerParams {
            dims,
            n_labels,
            uni_w: Matrix::zeros(dims.unigram, vocab.unigram_count()),
            uni_b: vec![0.0; dims.unigram],
            bi_w: Matrix::zeros(dims.bigram, vocab.bigram_count()),
            bi_b: vec![0.0; dims.bigram],
            embed: Matrix::zeros(n_labels, dims.embed),
            rnn_wx: Matrix::zeros(dims.hidden, dims.embed),
            rnn_wh: Matrix::zeros(dims.hidden, dims.hidden),
            rnn_b: vec![0.0; dims.hidden],
            head_w1: Matrix::zeros(dims.head, input),
            head_b1: vec![0.0; dims.head],
            head_w2: Matrix::zeros(n_labels + 1, dims.head),
            head_b2: vec![0.0; n_labels + 1],
        }
    }

    /// Weights uniform in ±1/√fan_in, embeddings in ±0.3, biases zero.
    pub fn random(dims: Dims, n_labels: usize, vocab: &NgramVocab, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(dims, n_labels, vocab);
        let input = dims.hidden + dims.unigram + dims.bigram;
        let s = |fan_in: usize| 1.0 / (fan_in.max(1) as f64).sqrt();
        p.uni_w = Matrix::random(dims.unigram, vocab.unigram_count(), 0.5, rng);
        p.bi_w = Matrix::random(dims.bigram, vocab.bigram_count(), 0.5, rng);
        p.embed = Matrix::random(n_labels, dims.embed, 0.3, rng);
        p.rnn_wx = Matrix::random(dims.hidden, dims.embed, s(dims.embed), rng);
        p.rnn_wh = Matrix::random(dims.hidden, dims.hidden, s(dims.hidden), rng);
        p.head_w1 = Matrix::random(dims.head, input, s(input), rng);
        p.head_w2 = Matrix::random(n_labels + 1, dims.head, s(dims.head), rng);
        p
    }

    pub fn zeros_like(&self) -> Self {
        let mut p = self.clone();
        p.blocks_mut().into_iter().for_each(|(_, b)| b.iter_mut().for_each(|v| *v = 0.0));
        p
    }

    pub fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("uni_w", &self.uni_w.data),
            ("uni_b", &self.uni_b),
            ("bi_w", &self.bi_w.data),
            ("bi_b", &self.bi_b),
            ("embed", &self.embed.data),
            ("rnn_wx", &self.rnn_wx.data),
            ("rnn_wh", &self.rnn_wh.data),
            ("rnn_b", &self.rnn_b),
            ("head_w1", &self.head_w1.data),
            ("head_b1", &self.head_b1),
            ("head_w2", &self.head_w2.data),
            ("head_b2", &self.head_b2),
        ]
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("uni_w", &mut self.uni_w.data),
            ("uni_b", &mut self.uni_b),
            ("bi_w", &mut self.bi_w.data),
            ("bi_b", &mut self.bi_b),
            ("embed", &mut self.embed.data),
            ("rnn_wx", &mut self.rnn_wx.data),
            ("rnn_wh", &mut self.rnn_wh.data),
            ("rnn_b", &mut self.rnn_b),
            ("head_w1", &mut self.head_w1.data),
            ("head_b1", &mut self.head_b1),
            ("head_w2", &mut self.head_w2.data),
            ("head_b2", &mut self.head_b2),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    /// Flat view of coordinate `i` across all blocks.
    pub fn get_flat(&self, mut i: usize) -> f64 {
        for (_, b) in self.blocks() {
            if i < b.len() {
                return b[i];
            }
            i -= b.len();
        }
        panic!("coordinate out of range")
    }

    pub fn set_flat(&mut self, mut i: usize, v: f64) {
        for (_, b) in self.blocks_mut() {
            if i < b.len() {
                b[i] = v;
                return;
            }
            i -= b.len();
        }
        panic!("coordinate out of range")
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(_, b)| b.iter().all(|v| v.is_finite()))
    }

    /// `self -= step · grad`
    pub fn sgd_step(&mut self, grad: &ScorerParams, step: f64) {
        for ((_, p), (_, g)) in self.blocks_mut().into_iter().zip(grad.blocks()) {
            for (pv, gv) in p.iter_mut().zip(g) {
                *pv -= step * gv;
            }
        }
    }
}
