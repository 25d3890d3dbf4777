//! Brute-force reference computations by exhaustive leftmost expansion.
//! Deliberately slow; used to cross-check the dynamic-programming routes.

use std::collections::HashMap;

use crate::error::Error;
use crate::intersect::{self, NextSymbolDistribution};
use crate::symbols::{DerivationSequence, LabelId};
use crate::wcfg::{Sym, Wcfg};

/// Upper bound on expanded partial derivations.
pub const ENUMERATION_CAP: usize = 20_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedString {
    pub seq: DerivationSequence,
    pub weight: f64,
}

/// Every terminal string of length ≤ `max_len` with nonzero weight, summed
/// over derivations, ordered by length then label ids.
pub fn enumerate_wcfg(g: &Wcfg, max_len: usize) -> crate::Result<Vec<WeightedString>> {
    let mut out: Vec<WeightedString> = enumerate_map(g, max_len)?
        .into_iter()
        .map(|(seq, weight)| WeightedString { seq: DerivationSequence(seq), weight })
        .collect();
    out.sort_by(|a, b| a.seq.len().cmp(&b.seq.len()).then_with(|| a.seq.cmp(&b.seq)));
    Ok(out)
}

/// Same as [`enumerate_wcfg`], keyed by string.
pub fn enumerate_map(g: &Wcfg, max_len: usize) -> crate::Result<HashMap<Vec<LabelId>, f64>> {
    let min_len = min_yield_lengths(g);
    let by_lhs = g.rules_by_lhs();
    let mut weights: HashMap<Vec<LabelId>, f64> = HashMap::new();
    let mut work: Vec<(Vec<LabelId>, Vec<Sym>, f64)> = vec![(Vec::new(), vec![Sym::N(g.start())], 1.0)];
    let mut expanded = 0usize;
    while let Some((mut emitted, mut pending, weight)) = work.pop() {
        expanded += 1;
        if expanded > ENUMERATION_CAP {
            return Err(Error::EnumerationCap { cap: ENUMERATION_CAP });
        }
        while let Some(&Sym::T(l)) = pending.last() {
            pending.pop();
            emitted.push(l);
        }
        let Some(&Sym::N(a)) = pending.last() else {
            if emitted.len() <= max_len {
                *weights.entry(emitted).or_insert(0.0) += weight;
            }
            continue;
        };
        pending.pop();
        let committed = emitted.len() + pending.iter().map(|s| sym_min(s, &min_len)).sum::<usize>();
        for &ri in &by_lhs[a as usize] {
            let r = &g.rules()[ri];
            if r.weight <= 0.0 {
                continue;
            }
            let extra: usize = r.rhs.iter().map(|s| sym_min(s, &min_len)).sum();
            if committed.saturating_add(extra) > max_len {
                continue;
            }
            let mut next = pending.clone();
            next.extend(r.rhs.iter().rev().copied());
            work.push((emitted.clone(), next, weight * r.weight));
        }
    }
    weights.retain(|_, w| *w > 0.0);
    Ok(weights)
}

fn sym_min(s: &Sym, min_len: &[usize]) -> usize {
    match s {
        Sym::T(_) => 1,
        Sym::N(b) => min_len[*b as usize],
    }
}

/// Shortest yield of each nonterminal (`usize::MAX` if unproductive).
fn min_yield_lengths(g: &Wcfg) -> Vec<usize> {
    let mut best = vec![usize::MAX; g.nonterminals().len()];
    loop {
        let mut changed = false;
        for r in g.rules().iter().filter(|r| r.weight > 0.0) {
            let len = r.rhs.iter().map(|s| sym_min(s, &best)).fold(0usize, |acc, l| acc.saturating_add(l));
            if len < best[r.lhs as usize] {
                best[r.lhs as usize] = len;
                changed = true;
            }
        }
        if !changed {
            return best;
        }
    }
}

/// A truncated next-symbol distribution. Every component differs from the
/// exact conditional by at most `bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct BruteConditional {
    pub dist: NextSymbolDistribution,
    /// Total mass minus enumerated mass.
    pub tail_mass: f64,
    /// Enumerated mass of strings extending the prefix.
    pub prefix_mass: f64,
    pub bound: f64,
}

/// Next-symbol distribution from mass ratios over strings of length
/// ≤ `max_len`.
pub fn brute_conditional(g: &Wcfg, prefix: &[LabelId], max_len: usize) -> crate::Result<BruteConditional> {
    let strings = enumerate_map(g, max_len)?;
    let total = intersect::total_mass(g)?;
    brute_conditional_from(&strings, total, prefix, g.alphabet().len())
}

/// [`brute_conditional`] over an already enumerated string table.
pub fn brute_conditional_from(
    strings: &HashMap<Vec<LabelId>, f64>,
    total_mass: f64,
    prefix: &[LabelId],
    n_labels: usize,
) -> crate::Result<BruteConditional> {
    let enumerated: f64 = strings.values().sum();
    let mut mass = 0.0;
    let mut end = 0.0;
    let mut probs = vec![0.0; n_labels];
    for (s, &w) in strings {
        if !s.starts_with(prefix) {
            continue;
        }
        mass += w;
        match s.get(prefix.len()) {
            Some(x) => probs[x.index()] += w,
            None => end += w,
        }
    }
    if !(mass > 0.0) {
        return Err(Error::ZeroMassPrefix { prefix: format!("{prefix:?}") });
    }
    probs.iter_mut().for_each(|p| *p /= mass);
    let tail_mass = (total_mass - enumerated).max(0.0);
    Ok(BruteConditional {
        dist: NextSymbolDistribution { probs, end_prob: end / mass },
        tail_mass,
        prefix_mass: mass,
        bound: tail_mass / mass,
    })
}
