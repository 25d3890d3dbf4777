//! Grammar–automaton intersection, inside weights, normalization and
//! prefix-conditional next-symbol distributions.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use crate::error::Error;
use crate::symbols::{Alphabet, LabelId};
use crate::wcfg::{Pcfg, Sym, WRule, Wcfg};
use crate::wfsa::Wfsa;

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 10_000;
/// Any inside weight above this is treated as divergence.
pub const OVERFLOW_GUARD: f64 = 1e12;

/// Intersects `g` with `a`. For every terminal string `s`, the result gives
/// `s` the weight `weight_g(s) * a.string_weight(s)`. The result is trim.
pub fn intersect(g: &Wcfg, a: &Wfsa) -> crate::Result<Wcfg> {
    if g.alphabet() != a.alphabet() {
        return Err(Error::AlphabetMismatch);
    }
    let mut delta = a.delta();
    for by_label in &mut delta {
        for arcs in by_label.values_mut() {
            arcs.retain(|&(_, w)| w > 0.0);
        }
    }
    let n_states = a.num_states();
    let rules: Vec<&WRule> = g.rules().iter().filter(|r| r.weight > 0.0).collect();
    let mut by_lhs: Vec<Vec<&WRule>> = vec![Vec::new(); g.nonterminals().len()];
    for r in &rules {
        by_lhs[r.lhs as usize].push(r);
    }

    // reach[A][p]: states q such that A derives, with positive weight, some
    // string read along a positive path p -> q.
    let mut reach: Vec<Vec<BTreeSet<usize>>> = vec![vec![BTreeSet::new(); n_states]; g.nonterminals().len()];
    loop {
        let mut changed = false;
        for r in &rules {
            for p in 0..n_states {
                let mut frontier: BTreeSet<usize> = BTreeSet::from([p]);
                for sym in &r.rhs {
                    let mut next = BTreeSet::new();
                    for &s in &frontier {
                        match sym {
                            Sym::T(l) => {
                                if let Some(arcs) = delta[s].get(l) {
                                    next.extend(arcs.iter().map(|&(to, _)| to));
                                }
                            }
                            Sym::N(b) => next.extend(reach[*b as usize][s].iter().copied()),
                        }
                    }
                    frontier = next;
                    if frontier.is_empty() {
                        break;
                    }
                }
                let target = &mut reach[r.lhs as usize][p];
                for q in frontier {
                    changed |= target.insert(q);
                }
            }
        }
        if !changed {
            break;
        }
    }

    let start = g.start();
    let mut items =
        ItemTable { names: vec![format!("{}'", g.nt_name(start))], ids: HashMap::new(), agenda: Vec::new() };
    let mut out_rules = Vec::new();

    for &r in &reach[start as usize][0] {
        let exit = a.exit(r);
        if exit > 0.0 {
            let id = items.intern(g, (start, 0, r));
            out_rules.push(WRule { lhs: 0, rhs: vec![Sym::N(id)], weight: exit });
        }
    }

    while let Some((nt, p, q)) = items.agenda.pop() {
        let lhs = items.ids[&(nt, p, q)];
        for r in &by_lhs[nt as usize] {
            // Depth-first over state assignments for the RHS positions.
            let mut partial: Vec<(usize, f64, Vec<(Sym, Option<(u32, usize, usize)>)>)> =
                vec![(p, r.weight, Vec::new())];
            for sym in &r.rhs {
                let mut next = Vec::new();
                for (s, w, syms) in partial {
                    match sym {
                        Sym::T(l) => {
                            if let Some(arcs) = delta[s].get(l) {
                                for &(to, aw) in arcs {
                                    let mut v = syms.clone();
                                    v.push((Sym::T(*l), None));
                                    next.push((to, w * aw, v));
                                }
                            }
                        }
                        Sym::N(b) => {
                            for &to in &reach[*b as usize][s] {
                                let mut v = syms.clone();
                                v.push((Sym::N(*b), Some((*b, s, to))));
                                next.push((to, w, v));
                            }
                        }
                    }
                }
                partial = next;
            }
            for (s, w, syms) in partial {
                if s != q || w <= 0.0 {
                    continue;
                }
                let rhs = syms
                    .into_iter()
                    .map(|(sym, key)| match key {
                        Some(key) => Sym::N(items.intern(g, key)),
                        None => sym,
                    })
                    .collect();
                out_rules.push(WRule { lhs, rhs, weight: w });
            }
        }
    }

    Ok(trim(&Wcfg::new(g.alphabet().clone(), items.names, 0, out_rules)))
}

/// Bar-Hillel nonterminals `(A, p, q)` discovered so far.
struct ItemTable {
    names: Vec<String>,
    ids: HashMap<(u32, usize, usize), u32>,
    agenda: Vec<(u32, usize, usize)>,
}

impl ItemTable {
    fn intern(&mut self, g: &Wcfg, key: (u32, usize, usize)) -> u32 {
        if let Some(&id) = self.ids.get(&key) {
            return id;
        }
        self.names.push(format!("{}[{},{}]", g.nt_name(key.0), key.1, key.2));
        let id = (self.names.len() - 1) as u32;
        self.ids.insert(key, id);
        self.agenda.push(key);
        id
    }
}

/// Removes zero-weight rules and nonterminals that are unproductive or
/// unreachable from the start symbol. The start symbol is always kept.
pub fn trim(g: &Wcfg) -> Wcfg {
    let n = g.nonterminals().len();
    let live: Vec<&WRule> = g.rules().iter().filter(|r| r.weight > 0.0).collect();
    let mut productive = vec![false; n];
    loop {
        let mut changed = false;
        for r in &live {
            if !productive[r.lhs as usize] && r.nonterminals().all(|b| productive[b as usize]) {
                productive[r.lhs as usize] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let useful: Vec<&WRule> = live
        .into_iter()
        .filter(|r| productive[r.lhs as usize] && r.nonterminals().all(|b| productive[b as usize]))
        .collect();
    let mut by_lhs: Vec<Vec<&WRule>> = vec![Vec::new(); n];
    for r in &useful {
        by_lhs[r.lhs as usize].push(r);
    }
    let mut reachable = vec![false; n];
    let mut stack = vec![g.start()];
    reachable[g.start() as usize] = true;
    while let Some(a) = stack.pop() {
        for r in &by_lhs[a as usize] {
            for b in r.nonterminals() {
                if !reachable[b as usize] {
                    reachable[b as usize] = true;
                    stack.push(b);
                }
            }
        }
    }
    let mut remap = vec![u32::MAX; n];
    let mut names = Vec::new();
    for (i, keep) in reachable.iter().enumerate() {
        if *keep {
            remap[i] = names.len() as u32;
            names.push(g.nonterminals()[i].clone());
        }
    }
    let rules = useful
        .into_iter()
        .filter(|r| reachable[r.lhs as usize])
        .map(|r| WRule {
            lhs: remap[r.lhs as usize],
            rhs: r
                .rhs
                .iter()
                .map(|s| match s {
                    Sym::N(b) => Sym::N(remap[*b as usize]),
                    t => *t,
                })
                .collect(),
            weight: r.weight,
        })
        .collect();
    Wcfg::new(g.alphabet().clone(), names, remap[g.start() as usize], rules)
}

/// Inside weights Z(A) of every nonterminal.
#[derive(Debug, Clone, PartialEq)]
pub struct InsideTable {
    pub z: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Largest change in the last iteration.
    pub residual: f64,
}

impl InsideTable {
    pub fn get(&self, nt: u32) -> f64 {
        self.z[nt as usize]
    }
}

/// Least fixed point of `Z(A) = Σ w · Π Z(B)`, iterated from `Z ≡ 0`.
pub fn inside_weights(g: &Wcfg, tol: f64, max_iter: usize) -> crate::Result<InsideTable> {
    inside_iterate(g, vec![0.0; g.nonterminals().len()], tol, max_iter)
}

/// Jacobi iteration of the inside equations from an arbitrary starting
/// point. Stops once every change satisfies `|ΔZ| ≤ tol · min(1, Z)`.
pub fn inside_iterate(g: &Wcfg, init: Vec<f64>, tol: f64, max_iter: usize) -> crate::Result<InsideTable> {
    let mut z = init;
    let mut next = vec![0.0; z.len()];
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        next.iter_mut().for_each(|v| *v = 0.0);
        for r in g.rules() {
            let mut w = r.weight;
            for b in r.nonterminals() {
                w *= z[b as usize];
            }
            next[r.lhs as usize] += w;
        }
        let blown: Vec<String> = next
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_finite() || **v > OVERFLOW_GUARD)
            .map(|(i, _)| g.nt_name(i as u32).to_string())
            .collect();
        if !blown.is_empty() {
            return Err(Error::Divergent { nonterminals: blown, iterations: it });
        }
        let mut converged = true;
        residual = 0.0;
        for (old, new) in z.iter().zip(&next) {
            let d = (new - old).abs();
            residual = residual.max(d);
            if d > tol * new.min(1.0) {
                converged = false;
            }
        }
        std::mem::swap(&mut z, &mut next);
        if converged {
            return Ok(InsideTable { z, iterations: it, converged: true, residual });
        }
    }
    Ok(InsideTable { z, iterations: max_iter, converged: false, residual })
}

fn converged_inside(g: &Wcfg) -> crate::Result<InsideTable> {
    let table = inside_weights(g, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    if !table.converged {
        return Err(Error::NotConverged { iterations: table.iterations, residual: table.residual });
    }
    Ok(table)
}

/// Partition function `Z(start)`.
pub fn total_mass(g: &Wcfg) -> crate::Result<f64> {
    let g = trim(g);
    if g.rules().is_empty() {
        return Ok(0.0);
    }
    Ok(converged_inside(&g)?.get(g.start()))
}

/// Renormalizes `g` into a PCFG defining the same distribution over
/// complete strings: rule `A -> β` gets `w · Π Z(B) / Z(A)`.
pub fn normalize(g: &Wcfg) -> crate::Result<Pcfg> {
    let g = trim(g);
    if g.rules().is_empty() {
        return Err(Error::ZeroMass);
    }
    let table = converged_inside(&g)?;
    if table.z.iter().any(|&z| !(z > 0.0)) {
        return Err(Error::ZeroMass);
    }
    let scores: Vec<f64> = g.rules().iter().map(|r| r.nonterminals().fold(r.weight, |w, b| w * table.get(b))).collect();
    // Dividing by the summed rule scores rather than Z(A) makes each
    // nonterminal sum to one exactly, not just to within the tolerance.
    let mut denom = vec![0.0; g.nonterminals().len()];
    for (r, s) in g.rules().iter().zip(&scores) {
        denom[r.lhs as usize] += s;
    }
    let rules = g
        .rules()
        .iter()
        .zip(&scores)
        .map(|(r, s)| WRule { lhs: r.lhs, rhs: r.rhs.clone(), weight: s / denom[r.lhs as usize] })
        .collect();
    Pcfg::new(Wcfg::new(g.alphabet().clone(), g.nonterminals().to_vec(), g.start(), rules))
}

/// Conditional distribution of the next label given a prefix, plus the
/// probability of stopping right after the prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct NextSymbolDistribution {
    /// Indexed by label id.
    pub probs: Vec<f64>,
    pub end_prob: f64,
}

impl NextSymbolDistribution {
    pub fn prob(&self, label: LabelId) -> f64 {
        self.probs[label.index()]
    }

    /// Uniform over every label and END.
    pub fn uniform(n_labels: usize) -> Self {
        let p = 1.0 / (n_labels as f64 + 1.0);
        NextSymbolDistribution { probs: vec![p; n_labels], end_prob: p }
    }

    /// Labels followed by END, the layout used by the scorer.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.probs.clone();
        v.push(self.end_prob);
        v
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum::<f64>() + self.end_prob
    }

    /// `label p` lines for nonzero probabilities, END last, rounded to 9
    /// decimals.
    pub fn format(&self, alphabet: &Alphabet) -> String {
        let mut parts: Vec<String> = alphabet
            .labels()
            .filter(|l| self.prob(*l) > 0.0)
            .map(|l| format!("{} {}", alphabet.name(l), round9(self.prob(l))))
            .collect();
        if self.end_prob > 0.0 {
            parts.push(format!("END {}", round9(self.end_prob)));
        }
        parts.join("\n")
    }
}

fn round9(p: f64) -> String {
    let s = format!("{p:.9}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Mass of `prefix·Σ*` (or of exactly `prefix`) under `g`.
pub fn prefix_mass(g: &Wcfg, prefix: &[LabelId], exact: bool) -> crate::Result<f64> {
    let a = Wfsa::prefix(prefix, g.alphabet().clone(), exact)?;
    total_mass(&intersect(g, &a)?)
}

/// `probs[x] = mass(prefix·x·Σ*) / mass(prefix·Σ*)` and
/// `end_prob = mass(prefix) / mass(prefix·Σ*)`, each mass obtained by
/// intersecting with a prefix automaton.
pub fn next_symbol_distribution(g: &Pcfg, prefix: &[LabelId]) -> crate::Result<NextSymbolDistribution> {
    next_symbol_distribution_wcfg(g, prefix)
}

pub(crate) fn next_symbol_distribution_wcfg(g: &Wcfg, prefix: &[LabelId]) -> crate::Result<NextSymbolDistribution> {
    let alphabet: &Arc<Alphabet> = g.alphabet();
    let total = prefix_mass(g, prefix, false)?;
    if !(total > 0.0) {
        return Err(Error::ZeroMassPrefix { prefix: alphabet.format_seq(prefix) });
    }
    let end = prefix_mass(g, prefix, true)?;
    let mut extended = prefix.to_vec();
    extended.push(LabelId(0));
    let mut probs = Vec::with_capacity(alphabet.len());
    for x in alphabet.labels() {
        *extended.last_mut().unwrap() = x;
        probs.push(prefix_mass(g, &extended, false)? / total);
    }
    Ok(NextSymbolDistribution { probs, end_prob: end / total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::Cfg;
    use crate::oracle::{brute_conditional, enumerate_map};

    const FIG1: &str = include_str!("../fixtures/fig1.grammar");
    const FIG1_EXT: &str = include_str!("../fixtures/fig1_ext.grammar");

    fn fig1() -> (Cfg, Wcfg) {
        let g = Cfg::load(FIG1).unwrap();
        let w = g.ds_grammar();
        (g, w)
    }

    fn seq(g: &Cfg, text: &str) -> Vec<LabelId> {
        g.alphabet().parse_seq(text).unwrap().0
    }

    fn require_e0(g: &Cfg, eta: f64) -> Wfsa {
        Wfsa::require(g.label("entitynp0").unwrap(), eta, g.alphabet().clone()).unwrap()
    }

    // Weight of the string with k relative clauses: (1/2)^(k+1), times
    // eta when k = 0 under require(entitynp0).
    fn closed_form(k: usize, eta: f64) -> f64 {
        0.5f64.powi(k as i32 + 1) * if k == 0 { eta } else { 1.0 }
    }

    #[test]
    fn intersected_weights_match_brute_force() {
        let (g, w) = fig1();
        let inter = intersect(&w, &require_e0(&g, 0.01)).unwrap();
        let got = enumerate_map(&inter, 19).unwrap();
        let base = enumerate_map(&w, 19).unwrap();
        assert_eq!(got.len(), base.len());
        let short = seq(&g, "s0 np1 typenp0");
        assert!((got[&short] - 0.005).abs() < 1e-15);
        for (s, wt) in &base {
            let k = (s.len() - 3) / 4;
            assert!((wt - closed_form(k, 1.0)).abs() < 1e-15);
            assert!((got[s] - closed_form(k, 0.01)).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_automaton_annihilates() {
        let (g, w) = fig1();
        let zero = HashMap::from_iter(g.alphabet().labels().map(|l| (l, 0.0)));
        let a = Wfsa::unigram(&zero, g.alphabet().clone()).unwrap();
        let inter = intersect(&w, &a).unwrap();
        assert_eq!(total_mass(&inter).unwrap(), 0.0);
        assert!(matches!(normalize(&inter), Err(Error::ZeroMass)));
    }

    #[test]
    fn alphabet_mismatch_is_an_error() {
        let (_, w) = fig1();
        let other = Wfsa::identity(Arc::new(Alphabet::from_names(["x"])));
        assert!(matches!(intersect(&w, &other), Err(Error::AlphabetMismatch)));
    }

    #[test]
    fn inside_weights_of_fig1() {
        let (_, w) = fig1();
        let t = inside_weights(&w, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!(t.converged);
        for (i, z) in t.z.iter().enumerate() {
            assert!((z - 1.0).abs() < 1e-9, "Z({}) = {z}", w.nt_name(i as u32));
        }
        assert!((total_mass(&w).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn total_mass_after_require() {
        let (g, w) = fig1();
        let inter = intersect(&w, &require_e0(&g, 0.01)).unwrap();
        let mass = total_mass(&inter).unwrap();
        assert!((mass - 0.505).abs() < 1e-9, "{mass}");
        let series: f64 = (0..200).map(|k| closed_form(k, 0.01)).sum();
        assert!((mass - series).abs() < 1e-9);
    }

    #[test]
    fn normalized_probabilities_are_scaled_weights() {
        let (g, w) = fig1();
        let inter = intersect(&w, &require_e0(&g, 0.01)).unwrap();
        let p = normalize(&inter).unwrap();
        let weights = enumerate_map(&inter, 40).unwrap();
        let probs = enumerate_map(&p, 40).unwrap();
        assert_eq!(weights.len(), probs.len());
        for (s, wt) in &weights {
            assert!((probs[s] - wt / 0.505).abs() < 1e-12);
        }
        for nt in 0..p.nonterminals().len() as u32 {
            let sum: f64 = p.rules().iter().filter(|r| r.lhs == nt).map(|r| r.weight).sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn unnormalizable_grammar_diverges() {
        let (_, w) = fig1();
        let np = w.nonterminal("np").unwrap();
        let mut rules = w.rules().to_vec();
        for r in &mut rules {
            if r.lhs == np && r.nonterminals().count() == 2 {
                r.weight = 2.0;
            }
        }
        let bad = Wcfg::new(w.alphabet().clone(), w.nonterminals().to_vec(), w.start(), rules);
        match inside_weights(&bad, DEFAULT_TOL, DEFAULT_MAX_ITER) {
            Err(Error::Divergent { nonterminals, .. }) => {
                assert!(nonterminals.contains(&"np".to_string()))
            }
            other => panic!("expected divergence, got {other:?}"),
        }
        assert!(normalize(&bad).is_err());
    }

    #[test]
    fn acyclic_grammar_converges_within_depth() {
        let text =
            "%start s\n%terminals a b\ns -> \"a\" t @ 0.5\ns -> \"b\" @ 0.25\nt -> \"b\" u @ 1.0\nu -> \"a\" @ 0.5\n";
        let g = Wcfg::parse(text).unwrap();
        let t = inside_weights(&g, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!(t.converged);
        // Three levels settle in three sweeps; one more confirms no change.
        assert!(t.iterations <= 4, "{}", t.iterations);
        assert!((t.get(g.start()) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn least_fixed_point_is_bracketed() {
        for text in [FIG1, FIG1_EXT] {
            let w = Cfg::load(text).unwrap().ds_grammar();
            let a = Wfsa::require(LabelId(0), 0.3, w.alphabet().clone()).unwrap();
            let g = trim(&intersect(&w, &a).unwrap());
            let n = g.nonterminals().len();
            let from_below = inside_iterate(&g, vec![0.0; n], DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
            let from_above = inside_iterate(&g, vec![1.0; n], DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
            assert!(from_below.converged && from_above.converged);
            for (lo, hi) in from_below.z.iter().zip(&from_above.z) {
                assert!(lo <= &(hi + 1e-12));
                assert!((lo - hi).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn next_symbol_examples() {
        let (g, w) = fig1();
        let p = normalize(&w).unwrap();
        let d = next_symbol_distribution(&p, &[]).unwrap();
        assert!((d.prob(g.label("s0").unwrap()) - 1.0).abs() < 1e-12);
        assert!((d.total() - 1.0).abs() < 1e-12);
        let d = next_symbol_distribution(&p, &seq(&g, "s0")).unwrap();
        assert!((d.prob(g.label("np0").unwrap()) - 0.5).abs() < 1e-12);
        assert!((d.prob(g.label("np1").unwrap()) - 0.5).abs() < 1e-12);
        assert_eq!(d.end_prob, 0.0);

        let req = normalize(&intersect(&w, &require_e0(&g, 0.01)).unwrap()).unwrap();
        let d = next_symbol_distribution(&req, &seq(&g, "s0")).unwrap();
        assert!((d.prob(g.label("np0").unwrap()) - 0.5 / 0.505).abs() < 1e-9);
        assert!((d.prob(g.label("np1").unwrap()) - 0.005 / 0.505).abs() < 1e-9);

        let done = next_symbol_distribution(&p, &seq(&g, "s0 np1 typenp0")).unwrap();
        assert!((done.end_prob - 1.0).abs() < 1e-12);
        assert!(matches!(next_symbol_distribution(&p, &seq(&g, "np0")), Err(Error::ZeroMassPrefix { .. })));
    }

    #[test]
    fn conditionals_agree_with_brute_force() {
        let (g, w) = fig1();
        let p = normalize(&intersect(&w, &require_e0(&g, 0.01)).unwrap()).unwrap();
        for prefix in ["", "s0", "s0 np0", "s0 np0 np1", "s0 np0 np0 np1 typenp0", "s0 np0 np1 typenp0 cp0 relnp0"] {
            let pre = seq(&g, prefix);
            let exact = next_symbol_distribution(&p, &pre).unwrap();
            let brute = brute_conditional(&p, &pre, 31).unwrap();
            for (a, b) in exact.to_vec().iter().zip(brute.dist.to_vec()) {
                assert!((a - b).abs() <= brute.bound + 1e-9, "{prefix}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn chaining_recovers_sequence_probabilities() {
        for text in [FIG1, FIG1_EXT] {
            let g = Cfg::load(text).unwrap();
            let w = g.ds_grammar();
            let a = Wfsa::penalize(g.label("np0").unwrap(), 0.7, g.alphabet().clone())
                .unwrap()
                .product(&require_e0(&g, 0.01))
                .unwrap();
            let p = normalize(&intersect(&w, &a).unwrap()).unwrap();
            let mut memo: HashMap<Vec<LabelId>, NextSymbolDistribution> = HashMap::new();
            for (s, prob) in enumerate_map(&p, 10).unwrap() {
                let mut chained = 1.0;
                for t in 0..=s.len() {
                    let d =
                        memo.entry(s[..t].to_vec()).or_insert_with(|| next_symbol_distribution(&p, &s[..t]).unwrap());
                    assert!((d.total() - 1.0).abs() < 1e-9);
                    chained *= if t == s.len() { d.end_prob } else { d.prob(s[t]) };
                }
                assert!((chained - prob).abs() < 1e-8, "{chained} vs {prob}");
            }
        }
    }

    #[test]
    fn weight_product_contract_on_extended_fixture() {
        let g = Cfg::load(FIG1_EXT).unwrap();
        let w = g.ds_grammar();
        let al = g.alphabet().clone();
        let automata = [
            Wfsa::identity(al.clone()),
            Wfsa::penalize(g.label("np0").unwrap(), 0.001, al.clone()).unwrap(),
            require_e0(&g, 0.0),
            require_e0(&g, 0.01),
            require_e0(&g, 0.01)
                .product(&Wfsa::require(g.label("relnp1").unwrap(), 0.01, al.clone()).unwrap())
                .unwrap(),
        ];
        let base = enumerate_map(&w, 10).unwrap();
        for a in &automata {
            let inter = enumerate_map(&intersect(&w, a).unwrap(), 10).unwrap();
            for (s, wt) in &base {
                let expect = wt * a.string_weight(s).unwrap();
                let got = inter.get(s).copied().unwrap_or(0.0);
                assert!((got - expect).abs() <= 1e-9 * expect.max(1e-300), "{got} vs {expect}");
            }
            assert!(inter.keys().all(|s| base.contains_key(s)));
        }
    }
}
