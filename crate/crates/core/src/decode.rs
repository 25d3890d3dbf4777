//! Uniform-cost search for the most probable derivation sequence, and
//! exact-match evaluation.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use log::debug;
use serde::Serialize;

use crate::background::{BackgroundBuilder, NextSymbolSource};
use crate::error::Error;
use crate::grammar::{Cfg, DerivationTree};
use crate::scorer::{encode, rnn_step, step_distribution, Model, TrainingExample};
use crate::symbols::LabelId;

pub const DEFAULT_BUDGET: usize = 100_000;

/// A search node. `cost` is `−log` of the cumulative combined probability.
#[derive(Debug, Clone)]
pub struct SearchNode {
    pub prefix: Vec<LabelId>,
    pub cost: f64,
    pub complete: bool,
    /// Tie-break key: label ranks in name order, END ranked last.
    key: Vec<usize>,
    state: Vec<f64>,
}

impl PartialEq for SearchNode {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for SearchNode {}

impl PartialOrd for SearchNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SearchNode {
    // Reversed so that the max-heap pops the cheapest node, then the
    // lexicographically smallest key.
    fn cmp(&self, other: &Self) -> Ordering {
        other.cost.total_cmp(&self.cost).then_with(|| other.key.cmp(&self.key))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub ds: Vec<LabelId>,
    /// Sum of `log p` over every step including END.
    pub log_prob: f64,
    pub expansions: usize,
}

/// Rank of each label when labels are sorted by name.
fn name_ranks(model: &Model) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..model.labels.len()).collect();
    idx.sort_by(|&a, &b| model.labels[a].cmp(&model.labels[b]));
    let mut ranks = vec![0; idx.len()];
    for (r, i) in idx.into_iter().enumerate() {
        ranks[i] = r;
    }
    ranks
}

/// Returns the complete sequence maximizing `Π_t p(x_t | prefix) · p(END)`.
/// Step costs are nonnegative, so the first complete node popped is optimal.
pub fn decode(model: &Model, bg: &dyn NextSymbolSource, utterance: &[String], budget: usize) -> crate::Result<Decoded> {
    let params = &model.params;
    let n = params.n_labels;
    let ranks = name_ranks(model);
    let ub = encode(utterance, &model.vocab, params).ub;
    let mut heap = BinaryHeap::new();
    heap.push(SearchNode {
        prefix: Vec::new(),
        cost: 0.0,
        complete: false,
        key: Vec::new(),
        state: vec![0.0; params.dims.hidden],
    });
    let mut expansions = 0;
    while let Some(node) = heap.pop() {
        if node.complete {
            debug!("decoded after {expansions} expansions");
            return Ok(Decoded { ds: node.prefix, log_prob: -node.cost, expansions });
        }
        if expansions >= budget {
            break;
        }
        expansions += 1;
        let b = bg.conditional(&node.prefix)?;
        let p = step_distribution(params, &node.state, &ub, &b)?;
        if p[n] > 0.0 {
            let mut key = node.key.clone();
            key.push(n);
            heap.push(SearchNode {
                prefix: node.prefix.clone(),
                cost: node.cost - p[n].ln(),
                complete: true,
                key,
                state: Vec::new(),
            });
        }
        for (i, &pi) in p[..n].iter().enumerate() {
            if pi <= 0.0 {
                continue;
            }
            let label = LabelId(i as u32);
            let mut prefix = node.prefix.clone();
            prefix.push(label);
            let mut key = node.key.clone();
            key.push(ranks[i]);
            heap.push(SearchNode {
                prefix,
                cost: node.cost - pi.ln(),
                complete: false,
                key,
                state: rnn_step(params, &node.state, label),
            });
        }
    }
    Err(Error::BudgetExhausted { expansions })
}

/// Log-probability of a complete sequence under the combined model.
pub fn sequence_log_prob(
    model: &Model,
    bg: &dyn NextSymbolSource,
    utterance: &[String],
    ds: &[LabelId],
) -> crate::Result<f64> {
    let params = &model.params;
    let ub = encode(utterance, &model.vocab, params).ub;
    let mut h = vec![0.0; params.dims.hidden];
    let mut total = 0.0;
    for t in 0..=ds.len() {
        let b = bg.conditional(&ds[..t])?;
        let p = step_distribution(params, &h, &ub, &b)?;
        let target = ds.get(t).map_or(params.n_labels, |l| l.index());
        total += p[target].ln();
        if let Some(&l) = ds.get(t) {
            h = rnn_step(params, &h, l);
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub utterance: String,
    pub gold_lf: String,
    pub predicted_ds: Option<String>,
    pub predicted_lf: Option<String>,
    pub correct: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EvalReport {
    pub outcomes: Vec<Outcome>,
    pub correct: usize,
    pub total: usize,
}

impl EvalReport {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    /// Accuracy over the examples selected by `keep` (by index).
    pub fn accuracy_where(&self, keep: impl Fn(usize) -> bool) -> (usize, usize) {
        let mut hit = 0;
        let mut n = 0;
        for (i, o) in self.outcomes.iter().enumerate() {
            if keep(i) {
                n += 1;
                hit += o.correct as usize;
            }
        }
        (hit, n)
    }
}

/// Exact logical-form match accuracy with a caller-supplied background per
/// utterance. Decoding failures count as wrong.
pub fn evaluate_with<F>(dataset: &[TrainingExample], model: &Model, g: &Cfg, budget: usize, background: F) -> EvalReport
where
    F: Fn(&[String]) -> crate::Result<Box<dyn NextSymbolSource + '_>>,
{
    let mut report = EvalReport::default();
    for ex in dataset {
        let gold_lf = match DerivationTree::parse(&ex.ds, g) {
            Ok(t) => t.compose_lf(g),
            Err(_) => String::new(),
        };
        let decoded = background(&ex.utterance).and_then(|bg| decode(model, bg.as_ref(), &ex.utterance, budget));
        let (predicted_ds, predicted_lf) = match decoded {
            Ok(d) => {
                let lf = DerivationTree::parse(&d.ds, g).ok().map(|t| t.compose_lf(g));
                (Some(g.alphabet().format_seq(&d.ds)), lf)
            }
            Err(e) => {
                debug!("decode failed for `{}`: {e}", ex.utterance.join(" "));
                (None, None)
            }
        };
        let correct = predicted_lf.as_deref() == Some(gold_lf.as_str()) && !gold_lf.is_empty();
        report.correct += correct as usize;
        report.total += 1;
        report.outcomes.push(Outcome {
            utterance: ex.utterance.join(" "),
            gold_lf,
            predicted_ds,
            predicted_lf,
            correct,
        });
    }
    report
}

/// [`evaluate_with`] using backgrounds from `builder`, falling back to the
/// grammar-only background when one is infeasible.
pub fn evaluate(
    dataset: &[TrainingExample],
    model: &Model,
    g: &Cfg,
    builder: &BackgroundBuilder,
    budget: usize,
) -> EvalReport {
    evaluate_with(dataset, model, g, budget, |u| {
        builder.build_or_fallback(u).map(|b| Box::new(b) as Box<dyn NextSymbolSource>)
    })
}
