//! Input-conditioned backgrounds: entity detection, require automata, and
//! the normalized grammar answering next-symbol queries.

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex, RwLock};

use log::warn;

use crate::error::Error;
use crate::grammar::{Cfg, RhsItem};
use crate::intersect::{self, NextSymbolDistribution};
use crate::symbols::LabelId;
use crate::wcfg::{Pcfg, Wcfg};
use crate::wfsa::{self, PriorConfig, Wfsa};

/// Anything that can supply `b(x | prefix)` for the next step.
pub trait NextSymbolSource {
    fn conditional(&self, prefix: &[LabelId]) -> crate::Result<NextSymbolDistribution>;
}

/// Token-sequence rewrites (`variant => canonical`) applied to utterances
/// before matching, e.g. `jan => january`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DateAliasTable {
    entries: Vec<(Vec<String>, Vec<String>)>,
}

impl DateAliasTable {
    pub fn parse(text: &str) -> crate::Result<Self> {
        let mut entries: Vec<(Vec<String>, Vec<String>)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (variant, canonical) = line.split_once("=>").ok_or_else(|| Error::Format {
                what: "alias file",
                line: i + 1,
                message: "expected `variant => canonical`".into(),
            })?;
            let variant = crate::grammar::tokenize(variant);
            let canonical = crate::grammar::tokenize(canonical);
            if variant.is_empty() || canonical.is_empty() {
                return Err(Error::Format { what: "alias file", line: i + 1, message: "empty side".into() });
            }
            if let Some((_, c)) = entries.iter().find(|(v, _)| *v == variant) {
                if *c != canonical {
                    return Err(Error::Format {
                        what: "alias file",
                        line: i + 1,
                        message: format!("`{}` already maps to `{}`", variant.join(" "), c.join(" ")),
                    });
                }
                continue;
            }
            entries.push((variant, canonical));
        }
        Ok(DateAliasTable { entries })
    }

    pub fn entries(&self) -> &[(Vec<String>, Vec<String>)] {
        &self.entries
    }

    /// Replaces alias occurrences, longest match first, left to right.
    pub fn canonicalize(&self, tokens: &[String]) -> Vec<String> {
        let mut out = Vec::with_capacity(tokens.len());
        let mut i = 0;
        while i < tokens.len() {
            let best = self.entries.iter().filter(|(v, _)| tokens[i..].starts_with(v)).max_by_key(|(v, _)| v.len());
            match best {
                Some((v, c)) => {
                    out.extend(c.iter().cloned());
                    i += v.len();
                }
                None => {
                    out.push(tokens[i].clone());
                    i += 1;
                }
            }
        }
        out
    }
}

/// Surface variants of entity rules.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EntityLexicon {
    variants: Vec<(Vec<String>, LabelId)>,
}

/// Nonterminals whose rules are treated as entities by default.
pub const DEFAULT_ENTITY_NONTERMINALS: &[&str] = &["entitynp"];

impl EntityLexicon {
    /// Entity rules are the rules of the given nonterminals; each contributes
    /// its surface yield plus any alias variant whose canonical side equals
    /// that yield.
    pub fn from_grammar(g: &Cfg, entity_nts: &[&str], aliases: &DateAliasTable) -> Self {
        let mut variants = Vec::new();
        for rule in g.rules() {
            if !entity_nts.contains(&g.nonterminal_name(rule.lhs)) {
                continue;
            }
            let surface: Vec<String> = rule
                .rhs
                .iter()
                .flat_map(|item| match item {
                    RhsItem::Surface(t) => t.clone(),
                    RhsItem::Nt(_) => Vec::new(),
                })
                .collect();
            if surface.is_empty() {
                continue;
            }
            for (v, c) in aliases.entries() {
                if *c == surface {
                    variants.push((v.clone(), rule.label));
                }
            }
            variants.push((surface, rule.label));
        }
        EntityLexicon { variants }
    }

    pub fn add_variant(&mut self, tokens: Vec<String>, label: LabelId) {
        self.variants.push((tokens, label));
    }

    pub fn labels(&self) -> BTreeSet<LabelId> {
        self.variants.iter().map(|(_, l)| *l).collect()
    }

    pub fn is_entity(&self, label: LabelId) -> bool {
        self.variants.iter().any(|(_, l)| *l == label)
    }
}

/// Labels whose variants occur contiguously in the canonicalized utterance.
/// At each position the longest variant wins and matching resumes after it.
pub fn detect_entities(utterance: &[String], lex: &EntityLexicon, dates: &DateAliasTable) -> Vec<LabelId> {
    let tokens = dates.canonicalize(utterance);
    let mut found = BTreeSet::new();
    let mut i = 0;
    while i < tokens.len() {
        let best = lex.variants.iter().filter(|(v, _)| tokens[i..].starts_with(v)).max_by_key(|(v, _)| v.len());
        match best {
            Some((v, label)) => {
                found.insert(*label);
                i += v.len();
            }
            None => i += 1,
        }
    }
    found.into_iter().collect()
}

/// A normalized background grammar with a memo of conditional queries.
#[derive(Debug)]
pub struct ConditionedGrammar {
    pcfg: Pcfg,
    memo: Mutex<HashMap<Vec<LabelId>, NextSymbolDistribution>>,
}

impl ConditionedGrammar {
    pub fn new(pcfg: Pcfg) -> Self {
        ConditionedGrammar { pcfg, memo: Mutex::new(HashMap::new()) }
    }

    pub fn pcfg(&self) -> &Pcfg {
        &self.pcfg
    }
}

impl NextSymbolSource for ConditionedGrammar {
    fn conditional(&self, prefix: &[LabelId]) -> crate::Result<NextSymbolDistribution> {
        if let Some(d) = self.memo.lock().unwrap().get(prefix) {
            return Ok(d.clone());
        }
        let d = intersect::next_symbol_distribution(&self.pcfg, prefix)?;
        self.memo.lock().unwrap().insert(prefix.to_vec(), d.clone());
        Ok(d)
    }
}

/// The background `b` for one utterance.
#[derive(Debug, Clone)]
pub struct Background {
    pub utterance: Vec<String>,
    pub detected: Vec<LabelId>,
    pub prior: PriorConfig,
    /// Set when the requested background was infeasible and the
    /// grammar-only background was substituted.
    pub fell_back: bool,
    grammar: Arc<ConditionedGrammar>,
}

impl Background {
    pub fn pcfg(&self) -> &Pcfg {
        self.grammar.pcfg()
    }
}

impl NextSymbolSource for Background {
    fn conditional(&self, prefix: &[LabelId]) -> crate::Result<NextSymbolDistribution> {
        self.grammar.conditional(prefix)
    }
}

/// `b(· | prefix)` under the background grammar.
pub fn background_conditional(b: &Background, prefix: &[LabelId]) -> crate::Result<NextSymbolDistribution> {
    b.conditional(prefix)
}

/// One require automaton per label, multiplied together.
pub fn factor_automaton(gw0: &Wcfg, labels: &[LabelId], eta: f64) -> crate::Result<Wfsa> {
    let alphabet = gw0.alphabet().clone();
    let factors = labels.iter().map(|&l| Wfsa::require(l, eta, alphabet.clone())).collect::<crate::Result<Vec<_>>>()?;
    wfsa::product_all(&factors, alphabet)
}

/// `normalize(intersect(gw0, Π require(ℓ, η)))`, or `normalize(gw0)` when no
/// label is given.
pub fn background_grammar(gw0: &Wcfg, labels: &[LabelId], eta: f64) -> crate::Result<Pcfg> {
    if labels.is_empty() {
        return intersect::normalize(gw0);
    }
    let a = factor_automaton(gw0, labels, eta)?;
    let g = intersect::intersect(gw0, &a)?;
    match intersect::normalize(&g) {
        Err(Error::ZeroMass) => {
            Err(Error::Infeasible { labels: labels.iter().map(|&l| gw0.alphabet().name(l).to_string()).collect() })
        }
        other => other,
    }
}

/// Builds the background of an utterance without caching.
pub fn build_background(
    g: &Cfg,
    utterance: &[String],
    lex: &EntityLexicon,
    dates: &DateAliasTable,
    prior: PriorConfig,
) -> crate::Result<Background> {
    let detected = detect_entities(utterance, lex, dates);
    let pcfg = background_grammar(&g.ds_grammar(), &detected, prior.eta)?;
    Ok(Background {
        utterance: utterance.to_vec(),
        detected,
        prior,
        fell_back: false,
        grammar: Arc::new(ConditionedGrammar::new(pcfg)),
    })
}

/// Builds backgrounds for many utterances, sharing the normalized grammar
/// (and its conditional memo) between utterances with the same detected
/// label set.
#[derive(Debug)]
pub struct BackgroundBuilder {
    gw0: Wcfg,
    lexicon: EntityLexicon,
    dates: DateAliasTable,
    prior: PriorConfig,
    detect: bool,
    cache: RwLock<HashMap<Vec<LabelId>, Arc<ConditionedGrammar>>>,
}

impl BackgroundBuilder {
    pub fn new(g: &Cfg, lexicon: EntityLexicon, dates: DateAliasTable, prior: PriorConfig) -> Self {
        BackgroundBuilder {
            gw0: g.ds_grammar(),
            lexicon,
            dates,
            prior,
            detect: true,
            cache: RwLock::new(HashMap::new()),
        }
    }

    /// A builder that never detects entities: every utterance gets the
    /// grammar-only background `normalize(GW₀)`.
    pub fn grammar_only(g: &Cfg) -> Self {
        let mut b = Self::new(g, EntityLexicon::default(), DateAliasTable::default(), PriorConfig::default());
        b.detect = false;
        b
    }

    pub fn prior(&self) -> PriorConfig {
        self.prior
    }

    pub fn lexicon(&self) -> &EntityLexicon {
        &self.lexicon
    }

    pub fn detects_entities(&self) -> bool {
        self.detect
    }

    pub fn detect(&self, utterance: &[String]) -> Vec<LabelId> {
        if self.detect {
            detect_entities(utterance, &self.lexicon, &self.dates)
        } else {
            Vec::new()
        }
    }

    fn grammar_for(&self, labels: &[LabelId]) -> crate::Result<Arc<ConditionedGrammar>> {
        if let Some(g) = self.cache.read().unwrap().get(labels) {
            return Ok(g.clone());
        }
        let pcfg = background_grammar(&self.gw0, labels, self.prior.eta)?;
        let mut cache = self.cache.write().unwrap();
        Ok(cache.entry(labels.to_vec()).or_insert_with(|| Arc::new(ConditionedGrammar::new(pcfg))).clone())
    }

    pub fn build(&self, utterance: &[String]) -> crate::Result<Background> {
        let detected = self.detect(utterance);
        let grammar = self.grammar_for(&detected)?;
        Ok(Background { utterance: utterance.to_vec(), detected, prior: self.prior, fell_back: false, grammar })
    }

    /// Like [`build`](Self::build), but an infeasible background is replaced
    /// by the grammar-only one with a warning.
    pub fn build_or_fallback(&self, utterance: &[String]) -> crate::Result<Background> {
        match self.build(utterance) {
            Err(Error::Infeasible { labels }) => {
                warn!("infeasible background for {labels:?}; using the grammar-only background");
                let detected = self.detect(utterance);
                let grammar = self.grammar_for(&[])?;
                Ok(Background { utterance: utterance.to_vec(), detected, prior: self.prior, fell_back: true, grammar })
            }
            other => other,
        }
    }
}

/// `b` uniform over every label and END.
#[derive(Debug, Clone, Copy)]
pub struct UniformBackground {
    pub n_labels: usize,
}

impl NextSymbolSource for UniformBackground {
    fn conditional(&self, _prefix: &[LabelId]) -> crate::Result<NextSymbolDistribution> {
        Ok(NextSymbolDistribution::uniform(self.n_labels))
    }
}
