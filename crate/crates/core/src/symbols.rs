//! Interned identifiers for nonterminals, rule labels and terminal alphabets.

use std::collections::HashMap;
use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

/// A rule label of the base grammar. Rule labels are the terminals of every
/// derivation-sequence grammar and the symbols read by automata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelId(pub u32);

/// A nonterminal of the base grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NtId(pub u32);

impl LabelId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl NtId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Injective string interner.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SymbolTable {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl SymbolTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the id of `name`, interning it if needed.
    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn resolve(&self, id: u32) -> &str {
        &self.names[id as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// The terminal alphabet shared by a derivation-sequence grammar and the
/// automata intersected with it: the rule labels of the base grammar, in
/// declaration order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Alphabet {
    table: SymbolTable,
}

impl Alphabet {
    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut table = SymbolTable::new();
        for n in names {
            table.intern(n.as_ref());
        }
        Alphabet { table }
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn name(&self, label: LabelId) -> &str {
        self.table.resolve(label.0)
    }

    pub fn label(&self, name: &str) -> Option<LabelId> {
        self.table.get(name).map(LabelId)
    }

    pub fn contains(&self, label: LabelId) -> bool {
        label.index() < self.len()
    }

    pub fn labels(&self) -> impl Iterator<Item = LabelId> + '_ {
        (0..self.len() as u32).map(LabelId)
    }

    pub fn names(&self) -> &[String] {
        self.table.names()
    }

    /// Parses a whitespace-separated list of label names.
    pub fn parse_seq(&self, text: &str) -> Result<DerivationSequence, String> {
        text.split_whitespace()
            .map(|t| self.label(t).ok_or_else(|| t.to_string()))
            .collect::<Result<Vec<_>, _>>()
            .map(DerivationSequence)
    }

    pub fn format_seq(&self, seq: &[LabelId]) -> String {
        seq.iter().map(|&l| self.name(l)).collect::<Vec<_>>().join(" ")
    }
}

/// A sequence of rule labels: the preorder listing of a derivation tree, or
/// a prefix of one.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DerivationSequence(pub Vec<LabelId>);

impl DerivationSequence {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn extended(&self, label: LabelId) -> Self {
        let mut v = self.0.clone();
        v.push(label);
        DerivationSequence(v)
    }
}

impl Deref for DerivationSequence {
    type Target = [LabelId];

    fn deref(&self) -> &[LabelId] {
        &self.0
    }
}

impl From<Vec<LabelId>> for DerivationSequence {
    fn from(v: Vec<LabelId>) -> Self {
        DerivationSequence(v)
    }
}

impl fmt::Display for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}
