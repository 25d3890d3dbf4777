//! The base grammar: rules with canonical-form tokens and logical-form
//! templates, derivation trees and their sequential encoding.

mod load;
mod tree;

use std::sync::Arc;

use crate::symbols::{Alphabet, LabelId, NtId, SymbolTable};
use crate::wcfg::{Sym, WRule, Wcfg};

pub use self::tree::{linearize, parse_ds, DerivationTree};

/// One right-hand-side item: a run of surface tokens or a nonterminal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RhsItem {
    Surface(Vec<String>),
    Nt(NtId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub label: LabelId,
    pub lhs: NtId,
    pub rhs: Vec<RhsItem>,
    /// Logical form with `$1..$k` standing for the RHS nonterminals in order.
    pub lf_template: String,
}

impl Rule {
    pub fn nonterminals(&self) -> impl DoubleEndedIterator<Item = NtId> + '_ {
        self.rhs.iter().filter_map(|item| match item {
            RhsItem::Nt(nt) => Some(*nt),
            RhsItem::Surface(_) => None,
        })
    }

    pub fn arity(&self) -> usize {
        self.nonterminals().count()
    }
}

/// A validated base grammar. Rule `i` carries label `LabelId(i)`.
#[derive(Debug, Clone)]
pub struct Cfg {
    nonterminals: SymbolTable,
    alphabet: Arc<Alphabet>,
    start: NtId,
    rules: Vec<Rule>,
    by_lhs: Vec<Vec<LabelId>>,
}

impl Cfg {
    /// Parses and validates grammar-file text. All problems are reported
    /// together.
    pub fn load(text: &str) -> crate::Result<Cfg> {
        load::load_grammar(text)
    }

    pub fn start(&self) -> NtId {
        self.start
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn rule(&self, label: LabelId) -> &Rule {
        &self.rules[label.index()]
    }

    pub fn rules_for(&self, nt: NtId) -> &[LabelId] {
        &self.by_lhs[nt.index()]
    }

    pub fn alphabet(&self) -> &Arc<Alphabet> {
        &self.alphabet
    }

    pub fn nonterminal_name(&self, nt: NtId) -> &str {
        self.nonterminals.resolve(nt.0)
    }

    pub fn nonterminal(&self, name: &str) -> Option<NtId> {
        self.nonterminals.get(name).map(NtId)
    }

    pub fn nonterminal_count(&self) -> usize {
        self.nonterminals.len()
    }

    pub fn label(&self, name: &str) -> Option<LabelId> {
        self.alphabet.label(name)
    }

    pub fn label_name(&self, label: LabelId) -> &str {
        self.alphabet.name(label)
    }

    /// Serializes back into the grammar file format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for rule in &self.rules {
            out.push_str(self.label_name(rule.label));
            out.push_str(": ");
            out.push_str(self.nonterminal_name(rule.lhs));
            out.push_str(" ->");
            for item in &rule.rhs {
                out.push(' ');
                match item {
                    RhsItem::Surface(tokens) => {
                        out.push('"');
                        out.push_str(&tokens.join(" "));
                        out.push('"');
                    }
                    RhsItem::Nt(nt) => out.push_str(self.nonterminal_name(*nt)),
                }
            }
            out.push_str(" | ");
            out.push_str(&rule.lf_template);
            out.push('\n');
        }
        out
    }

    /// Leftmost reconstruction of `prefix`. Returns the stack of pending
    /// nonterminals (top last) or the first inconsistency.
    pub fn pending_after(&self, prefix: &[LabelId]) -> crate::Result<Vec<NtId>> {
        let mut stack = vec![self.start];
        for (position, &label) in prefix.iter().enumerate() {
            if !self.alphabet.contains(label) {
                return Err(crate::Error::UnknownSymbol(label.to_string()));
            }
            let Some(expected) = stack.pop() else {
                return Err(crate::Error::Trailing { position });
            };
            let rule = self.rule(label);
            if rule.lhs != expected {
                return Err(crate::Error::LhsMismatch {
                    position,
                    label: self.label_name(label).to_string(),
                    expected: self.nonterminal_name(expected).to_string(),
                    found: self.nonterminal_name(rule.lhs).to_string(),
                });
            }
            stack.extend(rule.nonterminals().rev());
        }
        Ok(stack)
    }

    /// True iff `prefix` extends to at least one complete derivation
    /// sequence. Loading guarantees every nonterminal is productive, so a
    /// prefix is extendable exactly when its leftmost reconstruction
    /// succeeds.
    pub fn is_valid_prefix(&self, prefix: &[LabelId]) -> bool {
        self.pending_after(prefix).is_ok()
    }

    /// Builds the derivation-sequence grammar: one rule `A -> r B1..Bk` per
    /// base rule `r: A -> ...`, weighted `1/n_A`.
    pub fn ds_grammar(&self) -> Wcfg {
        let nonterminals = self.nonterminals.names().to_vec();
        let rules = self
            .rules
            .iter()
            .map(|rule| {
                let n = self.by_lhs[rule.lhs.index()].len() as f64;
                let mut rhs = vec![Sym::T(rule.label)];
                rhs.extend(rule.nonterminals().map(|nt| Sym::N(nt.0)));
                WRule { lhs: rule.lhs.0, rhs, weight: 1.0 / n }
            })
            .collect();
        Wcfg::new(self.alphabet.clone(), nonterminals, self.start.0, rules)
    }
}

/// Builds the derivation-sequence grammar GW₀ of `g`.
pub fn build_ds_grammar(g: &Cfg) -> Wcfg {
    g.ds_grammar()
}

/// Whitespace tokenization after lowercasing.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase().split_whitespace().map(str::to_string).collect()
}
