//! Synthetic (utterance, derivation sequence) corpora: sequences sampled
//! from the normalized derivation-sequence grammar, rendered as canonical
//! forms and paraphrased with a small hand-written table. A fraction of the
//! entity rules never occurs in the training split.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::background::{DateAliasTable, EntityLexicon};
use crate::error::Error;
use crate::grammar::{Cfg, DerivationTree};
use crate::intersect::normalize;
use crate::scorer::TrainingExample;
use crate::symbols::LabelId;
use crate::wcfg::{Pcfg, Sym};

/// Phrase rewrites applied to canonical forms; each match picks one option
/// uniformly.
const PARAPHRASES: &[(&[&str], &[&[&str]])] = &[
    (
        &["whose", "publication", "date", "is"],
        &[&["whose", "publication", "date", "is"], &["published", "in"], &["from"]],
    ),
    (&["whose", "author", "is"], &[&["whose", "author", "is"], &["written", "by"], &["by"]]),
    (&["whose", "title", "is"], &[&["whose", "title", "is"], &["titled"], &["named"]]),
    (&["article"], &[&["article"], &["articles"], &["paper"], &["papers"]]),
    (&["person"], &[&["person"], &["people"], &["persons"]]),
    (&["venue"], &[&["venue"], &["venues"], &["conference"]]),
    (&["january"], &[&["january"], &["jan"]]),
];

const OPENERS: &[&[&str]] = &[&[], &["show", "me"], &["find"], &["list"], &["all"]];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    /// Fraction of entity rules (taken from the end of the grammar file)
    /// withheld from training.
    pub holdout_fraction: f64,
    /// Share of dev/test examples forced to contain a held-out entity.
    pub heldout_share: f64,
    /// Longest derivation sequence sampled.
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_train: 500,
            n_dev: 100,
            n_test: 100,
            holdout_fraction: 0.33,
            heldout_share: 0.5,
            max_len: 9,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub train: Vec<TrainingExample>,
    pub dev: Vec<TrainingExample>,
    pub test: Vec<TrainingExample>,
    pub held_out: Vec<LabelId>,
}

/// Samples one derivation sequence, or `None` if it grows past `max_len`.
pub fn sample_ds(pcfg: &Pcfg, max_len: usize, rng: &mut impl Rng) -> Option<Vec<LabelId>> {
    let by_lhs = pcfg.rules_by_lhs();
    let mut stack = vec![Sym::N(pcfg.start())];
    let mut out = Vec::new();
    while let Some(sym) = stack.pop() {
        match sym {
            Sym::T(l) => {
                out.push(l);
                if out.len() > max_len {
                    return None;
                }
            }
            Sym::N(a) => {
                let rules = &by_lhs[a as usize];
                let mut u: f64 = rng.gen();
                let mut chosen = *rules.last()?;
                for &ri in rules {
                    u -= pcfg.rules()[ri].weight;
                    if u < 0.0 {
                        chosen = ri;
                        break;
                    }
                }
                stack.extend(pcfg.rules()[chosen].rhs.iter().rev().copied());
            }
        }
    }
    Some(out)
}

/// Paraphrases canonical-form tokens.
pub fn paraphrase(cf: &[String], rng: &mut impl Rng) -> Vec<String> {
    let mut out: Vec<String> = OPENERS.choose(rng).unwrap().iter().map(|s| s.to_string()).collect();
    let mut i = 0;
    while i < cf.len() {
        let hit = PARAPHRASES
            .iter()
            .filter(|(pat, _)| cf[i..].len() >= pat.len() && pat.iter().zip(&cf[i..]).all(|(a, b)| a == b))
            .max_by_key(|(pat, _)| pat.len());
        match hit {
            Some((pat, options)) => {
                out.extend(options.choose(rng).unwrap().iter().map(|s| s.to_string()));
                i += pat.len();
            }
            None => {
                out.push(cf[i].clone());
                i += 1;
            }
        }
    }
    out
}

/// Entity rules withheld from training: the last `ceil(fraction · k)` of
/// the `k` entity rules, in grammar order.
pub fn held_out_entities(lex: &EntityLexicon, fraction: f64) -> Vec<LabelId> {
    let labels: Vec<LabelId> = lex.labels().into_iter().collect();
    let k = ((fraction * labels.len() as f64).ceil() as usize).min(labels.len());
    labels[labels.len() - k..].to_vec()
}

pub fn synthesize(g: &Cfg, entity_nts: &[&str], cfg: &SynthConfig) -> crate::Result<SynthCorpus> {
    let lex = EntityLexicon::from_grammar(g, entity_nts, &DateAliasTable::default());
    let held_out = held_out_entities(&lex, cfg.holdout_fraction);
    let held: BTreeSet<LabelId> = held_out.iter().copied().collect();
    let pcfg = normalize(&g.ds_grammar())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let example = |rng: &mut ChaCha8Rng, want: Option<bool>| -> crate::Result<TrainingExample> {
        for _ in 0..1_000_000 {
            let Some(ds) = sample_ds(&pcfg, cfg.max_len, rng) else {
                continue;
            };
            let has_held = ds.iter().any(|l| held.contains(l));
            if want.is_some_and(|w| w != has_held) {
                continue;
            }
            let cf = DerivationTree::parse(&ds, g)?.yield_cf(g);
            return Ok(TrainingExample { utterance: paraphrase(&cf, rng), ds });
        }
        Err(Error::Invalid("could not sample an example with the requested entities".into()))
    };

    let train = (0..cfg.n_train).map(|_| example(&mut rng, Some(false))).collect::<crate::Result<Vec<_>>>()?;
    let split = |n: usize, rng: &mut ChaCha8Rng| -> crate::Result<Vec<TrainingExample>> {
        (0..n)
            .map(|_| {
                let force = !held.is_empty() && rng.gen::<f64>() < cfg.heldout_share;
                example(rng, if force { Some(true) } else { None })
            })
            .collect()
    };
    let dev = split(cfg.n_dev, &mut rng)?;
    let test = split(cfg.n_test, &mut rng)?;
    Ok(SynthCorpus { train, dev, test, held_out })
}
