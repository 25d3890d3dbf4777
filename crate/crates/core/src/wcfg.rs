//! Weighted context-free grammars over rule labels.

use std::collections::HashMap;
use std::fmt::Write;
use std::ops::Deref;
use std::sync::Arc;

use crate::error::Error;
use crate::symbols::{Alphabet, LabelId};

/// A right-hand-side symbol: a terminal rule label or a nonterminal index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sym {
    T(LabelId),
    N(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WRule {
    pub lhs: u32,
    pub rhs: Vec<Sym>,
    pub weight: f64,
}

impl WRule {
    pub fn nonterminals(&self) -> impl Iterator<Item = u32> + '_ {
        self.rhs.iter().filter_map(|s| match s {
            Sym::N(n) => Some(*n),
            Sym::T(_) => None,
        })
    }
}

/// A WCFG whose terminals are the labels of `alphabet`. A string's weight
/// is the sum over its derivations of the product of rule weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Wcfg {
    alphabet: Arc<Alphabet>,
    nonterminals: Vec<String>,
    start: u32,
    rules: Vec<WRule>,
}

impl Wcfg {
    pub fn new(alphabet: Arc<Alphabet>, nonterminals: Vec<String>, start: u32, rules: Vec<WRule>) -> Self {
        debug_assert!((start as usize) < nonterminals.len());
        debug_assert!(rules.iter().all(|r| r.weight >= 0.0));
        Wcfg { alphabet, nonterminals, start, rules }
    }

    pub fn alphabet(&self) -> &Arc<Alphabet> {
        &self.alphabet
    }

    pub fn nonterminals(&self) -> &[String] {
        &self.nonterminals
    }

    pub fn nt_name(&self, nt: u32) -> &str {
        &self.nonterminals[nt as usize]
    }

    pub fn start(&self) -> u32 {
        self.start
    }

    pub fn rules(&self) -> &[WRule] {
        &self.rules
    }

    pub fn nonterminal(&self, name: &str) -> Option<u32> {
        self.nonterminals.iter().position(|n| n == name).map(|i| i as u32)
    }

    /// Rule indices grouped by left-hand side.
    pub fn rules_by_lhs(&self) -> Vec<Vec<usize>> {
        let mut by = vec![Vec::new(); self.nonterminals.len()];
        for (i, r) in self.rules.iter().enumerate() {
            by[r.lhs as usize].push(i);
        }
        by
    }

    /// Text form: `%start`, `%terminals`, then `LHS -> items @ weight` with
    /// quoted terminals.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "%start {}", self.nt_name(self.start));
        let _ = writeln!(out, "%terminals {}", self.alphabet.names().join(" "));
        for r in &self.rules {
            out.push_str(self.nt_name(r.lhs));
            out.push_str(" ->");
            for s in &r.rhs {
                match s {
                    Sym::T(l) => {
                        let _ = write!(out, " \"{}\"", self.alphabet.name(*l));
                    }
                    Sym::N(n) => {
                        let _ = write!(out, " {}", self.nt_name(*n));
                    }
                }
            }
            let _ = writeln!(out, " @ {:?}", r.weight);
        }
        out
    }

    pub fn parse(text: &str) -> crate::Result<Wcfg> {
        let err = |line: usize, message: String| Error::Format { what: "wcfg", line, message };
        let mut start_name = None;
        let mut alphabet = None;
        let mut nonterminals: Vec<String> = Vec::new();
        let mut index: HashMap<String, u32> = HashMap::new();
        let mut intern = |name: &str, nts: &mut Vec<String>| -> u32 {
            *index.entry(name.to_string()).or_insert_with(|| {
                nts.push(name.to_string());
                (nts.len() - 1) as u32
            })
        };
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let ln = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("%start") {
                start_name = Some(rest.trim().to_string());
                continue;
            }
            if let Some(rest) = line.strip_prefix("%terminals") {
                alphabet = Some(Arc::new(Alphabet::from_names(rest.split_whitespace())));
                continue;
            }
            let alpha = alphabet.as_ref().ok_or_else(|| err(ln, "rule before %terminals".into()))?;
            let (lhs, rest) = line.split_once("->").ok_or_else(|| err(ln, "expected `->`".into()))?;
            let (rhs, weight) = rest.rsplit_once(" @ ").ok_or_else(|| err(ln, "expected `@ weight`".into()))?;
            let weight: f64 = weight.trim().parse().map_err(|_| err(ln, format!("bad weight `{}`", weight.trim())))?;
            if !(weight >= 0.0) || !weight.is_finite() {
                return Err(err(ln, format!("weight must be finite and nonnegative, got {weight}")));
            }
            let lhs = intern(lhs.trim(), &mut nonterminals);
            let mut syms = Vec::new();
            for item in rhs.split_whitespace() {
                if let Some(t) = item.strip_prefix('"').and_then(|t| t.strip_suffix('"')) {
                    let l = alpha.label(t).ok_or_else(|| err(ln, format!("unknown terminal `{t}`")))?;
                    syms.push(Sym::T(l));
                } else {
                    syms.push(Sym::N(intern(item, &mut nonterminals)));
                }
            }
            rules.push(WRule { lhs, rhs: syms, weight });
        }
        let alphabet = alphabet.ok_or_else(|| err(0, "missing %terminals".into()))?;
        let start_name = start_name.ok_or_else(|| err(0, "missing %start".into()))?;
        let start = intern(&start_name, &mut nonterminals);
        Ok(Wcfg { alphabet, nonterminals, start, rules })
    }
}

/// A WCFG whose rule weights sum to one for every nonterminal that has rules.
#[derive(Debug, Clone, PartialEq)]
pub struct Pcfg(Wcfg);

pub const PCFG_TOLERANCE: f64 = 1e-9;

impl Pcfg {
    pub fn new(g: Wcfg) -> crate::Result<Pcfg> {
        let mut sums = vec![None::<f64>; g.nonterminals.len()];
        for r in &g.rules {
            *sums[r.lhs as usize].get_or_insert(0.0) += r.weight;
        }
        for (nt, s) in sums.iter().enumerate() {
            if let Some(s) = s {
                if (s - 1.0).abs() > PCFG_TOLERANCE {
                    return Err(Error::Invalid(format!("rules of `{}` sum to {s}, not 1", g.nonterminals[nt])));
                }
            }
        }
        Ok(Pcfg(g))
    }

    pub fn into_inner(self) -> Wcfg {
        self.0
    }
}

impl Deref for Pcfg {
    type Target = Wcfg;

    fn deref(&self) -> &Wcfg {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Wcfg {
        let alpha = Arc::new(Alphabet::from_names(["a", "b"]));
        Wcfg::new(
            alpha,
            vec!["x".into()],
            0,
            vec![
                WRule { lhs: 0, rhs: vec![Sym::T(LabelId(0)), Sym::N(0)], weight: 1.0 / 3.0 },
                WRule { lhs: 0, rhs: vec![Sym::T(LabelId(1))], weight: 2.0 / 3.0 },
            ],
        )
    }

    #[test]
    fn text_round_trip_is_exact() {
        let g = tiny();
        let text = g.to_text();
        let back = Wcfg::parse(&text).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn pcfg_checks_sums() {
        assert!(Pcfg::new(tiny()).is_ok());
        let mut g = tiny();
        g.rules[0].weight = 0.5;
        assert!(Pcfg::new(g).is_err());
    }

    #[test]
    fn parse_rejects_negative_weight() {
        let text = "%start x\n%terminals a\nx -> \"a\" @ -1\n";
        assert!(Wcfg::parse(text).is_err());
    }
}
