//! Weighted finite-state automata over rule labels.
//!
//! Every automaton has a single initial state `0` with initial weight 1 and
//! per-state exit weights; a string's weight is the sum over its accepting
//! paths of the product of transition weights times the exit weight of the
//! final state.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write;
use std::sync::Arc;

use crate::error::Error;
use crate::symbols::{Alphabet, LabelId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub from: usize,
    pub label: LabelId,
    pub weight: f64,
    pub to: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Wfsa {
    alphabet: Arc<Alphabet>,
    num_states: usize,
    transitions: Vec<Transition>,
    exits: Vec<f64>,
}

/// Weights of the input-derived automata.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorConfig {
    /// Exit weight of sequences lacking a required label.
    pub eta: f64,
    /// Per-occurrence weight of a penalized label.
    pub delta: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig { eta: 0.01, delta: 0.001 }
    }
}

/// The η values tuned on development data.
pub const ETA_GRID: [f64; 3] = [0.0, 0.0001, 0.01];

impl Wfsa {
    pub fn new(
        alphabet: Arc<Alphabet>,
        num_states: usize,
        transitions: Vec<Transition>,
        exits: Vec<f64>,
    ) -> crate::Result<Wfsa> {
        if num_states == 0 {
            return Err(Error::Invalid("automaton needs at least the initial state".into()));
        }
        if exits.len() != num_states {
            return Err(Error::Invalid("one exit weight per state expected".into()));
        }
        for t in &transitions {
            if t.from >= num_states || t.to >= num_states {
                return Err(Error::Invalid(format!("transition {}→{} out of range", t.from, t.to)));
            }
            if !alphabet.contains(t.label) {
                return Err(Error::UnknownSymbol(t.label.to_string()));
            }
        }
        if transitions.iter().map(|t| t.weight).chain(exits.iter().copied()).any(|w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::Invalid("automaton weights must be finite and nonnegative".into()));
        }
        Ok(Wfsa { alphabet, num_states, transitions, exits })
    }

    pub fn alphabet(&self) -> &Arc<Alphabet> {
        &self.alphabet
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn exit(&self, state: usize) -> f64 {
        self.exits[state]
    }

    pub fn exits(&self) -> &[f64] {
        &self.exits
    }

    /// Outgoing transitions grouped by (state, label), parallel arcs summed.
    pub fn delta(&self) -> Vec<HashMap<LabelId, Vec<(usize, f64)>>> {
        let mut out: Vec<HashMap<LabelId, Vec<(usize, f64)>>> = vec![HashMap::new(); self.num_states];
        for t in &self.transitions {
            let arcs = out[t.from].entry(t.label).or_default();
            match arcs.iter_mut().find(|(to, _)| *to == t.to) {
                Some((_, w)) => *w += t.weight,
                None => arcs.push((t.to, t.weight)),
            }
        }
        out
    }

    /// Forward algorithm.
    pub fn string_weight(&self, seq: &[LabelId]) -> crate::Result<f64> {
        let mut current = vec![0.0; self.num_states];
        current[0] = 1.0;
        for &label in seq {
            if !self.alphabet.contains(label) {
                return Err(Error::UnknownSymbol(label.to_string()));
            }
            let mut next = vec![0.0; self.num_states];
            for t in self.transitions.iter().filter(|t| t.label == label) {
                next[t.to] += current[t.from] * t.weight;
            }
            current = next;
        }
        Ok(current.iter().zip(&self.exits).map(|(v, e)| v * e).sum())
    }

    /// One state, final with exit 1, a self-loop of weight 1 on every label.
    pub fn identity(alphabet: Arc<Alphabet>) -> Wfsa {
        Self::unigram_with(alphabet, |_| 1.0)
    }

    /// Gives weight `delta^k` to a sequence with `k` occurrences of `sym`.
    pub fn penalize(sym: LabelId, delta: f64, alphabet: Arc<Alphabet>) -> crate::Result<Wfsa> {
        if !alphabet.contains(sym) {
            return Err(Error::UnknownSymbol(sym.to_string()));
        }
        let a = Self::unigram_with(alphabet, |l| if l == sym { delta } else { 1.0 });
        Wfsa::new(a.alphabet, a.num_states, a.transitions, a.exits)
    }

    /// Gives weight 1 to sequences containing `sym` and `eta` to the others.
    pub fn require(sym: LabelId, eta: f64, alphabet: Arc<Alphabet>) -> crate::Result<Wfsa> {
        if !alphabet.contains(sym) {
            return Err(Error::UnknownSymbol(sym.to_string()));
        }
        let mut transitions = Vec::with_capacity(2 * alphabet.len());
        for l in alphabet.labels() {
            if l == sym {
                transitions.push(Transition { from: 0, label: l, weight: 1.0, to: 1 });
            } else {
                transitions.push(Transition { from: 0, label: l, weight: 1.0, to: 0 });
            }
        }
        for l in alphabet.labels() {
            transitions.push(Transition { from: 1, label: l, weight: 1.0, to: 1 });
        }
        Wfsa::new(alphabet, 2, transitions, vec![eta, 1.0])
    }

    /// One state with a self-loop of weight `probs[x]` per label and exit 1.
    pub fn unigram(probs: &HashMap<LabelId, f64>, alphabet: Arc<Alphabet>) -> crate::Result<Wfsa> {
        if let Some(missing) = alphabet.labels().find(|l| !probs.contains_key(l)) {
            return Err(Error::Invalid(format!("unigram weights missing label `{}`", alphabet.name(missing))));
        }
        let a = Self::unigram_with(alphabet, |l| probs[&l]);
        Wfsa::new(a.alphabet, a.num_states, a.transitions, a.exits)
    }

    fn unigram_with(alphabet: Arc<Alphabet>, weight: impl Fn(LabelId) -> f64) -> Wfsa {
        let transitions =
            alphabet.labels().map(|l| Transition { from: 0, label: l, weight: weight(l), to: 0 }).collect();
        Wfsa { alphabet, num_states: 1, transitions, exits: vec![1.0] }
    }

    /// Accepts `prefix·Σ*` with weight 1, or only `prefix` itself when
    /// `exact` is set.
    pub fn prefix(prefix: &[LabelId], alphabet: Arc<Alphabet>, exact: bool) -> crate::Result<Wfsa> {
        let n = prefix.len();
        let mut transitions = Vec::new();
        for (i, &l) in prefix.iter().enumerate() {
            if !alphabet.contains(l) {
                return Err(Error::UnknownSymbol(l.to_string()));
            }
            transitions.push(Transition { from: i, label: l, weight: 1.0, to: i + 1 });
        }
        if !exact {
            for l in alphabet.labels() {
                transitions.push(Transition { from: n, label: l, weight: 1.0, to: n });
            }
        }
        let mut exits = vec![0.0; n + 1];
        exits[n] = 1.0;
        Wfsa::new(alphabet, n + 1, transitions, exits)
    }

    /// Product automaton over reachable state pairs.
    pub fn product(&self, other: &Wfsa) -> crate::Result<Wfsa> {
        if self.alphabet != other.alphabet {
            return Err(Error::AlphabetMismatch);
        }
        let d1 = self.delta();
        let d2 = other.delta();
        let mut ids: HashMap<(usize, usize), usize> = HashMap::new();
        let mut queue = VecDeque::new();
        ids.insert((0, 0), 0);
        queue.push_back((0, 0));
        let mut transitions = Vec::new();
        let mut pairs = vec![(0, 0)];
        while let Some((p, q)) = queue.pop_front() {
            let from = ids[&(p, q)];
            let mut labels: Vec<&LabelId> = d1[p].keys().filter(|l| d2[q].contains_key(l)).collect();
            labels.sort();
            for label in labels {
                for &(p2, w1) in &d1[p][label] {
                    for &(q2, w2) in &d2[q][label] {
                        let to = *ids.entry((p2, q2)).or_insert_with(|| {
                            pairs.push((p2, q2));
                            queue.push_back((p2, q2));
                            pairs.len() - 1
                        });
                        transitions.push(Transition { from, label: *label, weight: w1 * w2, to });
                    }
                }
            }
        }
        let exits = pairs.iter().map(|&(p, q)| self.exits[p] * other.exits[q]).collect();
        Wfsa::new(self.alphabet.clone(), pairs.len(), transitions, exits)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "alphabet: {}", self.alphabet.names().join(" "));
        let _ = writeln!(out, "states: {}", self.num_states);
        let _ = writeln!(out, "initial: 0");
        let _ = writeln!(out, "transitions:");
        for t in &self.transitions {
            let _ = writeln!(out, "{} {} {:?} {}", t.from, self.alphabet.name(t.label), t.weight, t.to);
        }
        let _ = writeln!(out, "exits:");
        for (s, e) in self.exits.iter().enumerate() {
            if *e != 0.0 {
                let _ = writeln!(out, "{s} {e:?}");
            }
        }
        out
    }

    pub fn parse(text: &str) -> crate::Result<Wfsa> {
        let err = |line: usize, message: String| Error::Format { what: "automaton", line, message };
        let mut alphabet = None;
        let mut num_states = None;
        let mut section = "";
        let mut transitions = Vec::new();
        let mut exit_pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let ln = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("alphabet:") {
                alphabet = Some(Arc::new(Alphabet::from_names(rest.split_whitespace())));
            } else if let Some(rest) = line.strip_prefix("states:") {
                num_states = Some(rest.trim().parse::<usize>().map_err(|e| err(ln, e.to_string()))?);
            } else if let Some(rest) = line.strip_prefix("initial:") {
                if rest.trim() != "0" {
                    return Err(err(ln, "initial state must be 0".into()));
                }
            } else if line == "transitions:" {
                section = "transitions";
            } else if line == "exits:" {
                section = "exits";
            } else {
                let fields: Vec<&str> = line.split_whitespace().collect();
                let num = |s: &str| s.parse::<usize>().map_err(|e| err(ln, e.to_string()));
                let weight = |s: &str| s.parse::<f64>().map_err(|e| err(ln, e.to_string()));
                match (section, fields.as_slice()) {
                    ("transitions", [from, sym, w, to]) => {
                        let alpha = alphabet.as_ref().ok_or_else(|| err(ln, "missing alphabet".into()))?;
                        let label = alpha.label(sym).ok_or_else(|| err(ln, format!("unknown symbol `{sym}`")))?;
                        transitions.push(Transition { from: num(from)?, label, weight: weight(w)?, to: num(to)? });
                    }
                    ("exits", [state, w]) => exit_pairs.push((num(state)?, weight(w)?)),
                    _ => return Err(err(ln, format!("unexpected line `{line}`"))),
                }
            }
        }
        let alphabet = alphabet.ok_or_else(|| err(0, "missing alphabet".into()))?;
        let n = num_states.ok_or_else(|| err(0, "missing states".into()))?;
        let mut exits = vec![0.0; n];
        for (s, w) in exit_pairs {
            *exits.get_mut(s).ok_or_else(|| err(0, format!("exit state {s} out of range")))? = w;
        }
        Wfsa::new(alphabet, n, transitions, exits)
    }
}

/// Product of a list of automata; the identity automaton when empty.
pub fn product_all(automata: &[Wfsa], alphabet: Arc<Alphabet>) -> crate::Result<Wfsa> {
    let mut iter = automata.iter();
    let Some(first) = iter.next() else {
        return Ok(Wfsa::identity(alphabet));
    };
    iter.try_fold(first.clone(), |acc, a| acc.product(a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn abc() -> Arc<Alphabet> {
        Arc::new(Alphabet::from_names(["a", "b", "c"]))
    }

    fn s(alpha: &Alphabet, text: &str) -> Vec<LabelId> {
        alpha.parse_seq(text).unwrap().0
    }

    const A: LabelId = LabelId(0);
    const B: LabelId = LabelId(1);

    #[test]
    fn require_automaton() {
        let al = abc();
        let r = Wfsa::require(A, 0.01, al.clone()).unwrap();
        assert_eq!(r.num_states(), 2);
        assert_eq!(r.exits(), &[0.01, 1.0]);
        assert_eq!(r.string_weight(&s(&al, "b c")).unwrap(), 0.01);
        assert_eq!(r.string_weight(&s(&al, "b a c")).unwrap(), 1.0);
        assert_eq!(r.string_weight(&s(&al, "a a")).unwrap(), 1.0);
        let hard = Wfsa::require(A, 0.0, al.clone()).unwrap();
        assert_eq!(hard.string_weight(&s(&al, "b c")).unwrap(), 0.0);
    }

    #[test]
    fn penalize_automaton() {
        let al = Arc::new(Alphabet::from_names(["a", "b"]));
        let p = Wfsa::penalize(A, 0.1, al.clone()).unwrap();
        assert_eq!(p.num_states(), 1);
        assert_eq!(p.transitions().len(), 2);
        assert_eq!(p.exit(0), 1.0);
        assert_eq!(p.string_weight(&[B, B]).unwrap(), 1.0);
        assert_eq!(p.string_weight(&[A]).unwrap(), 0.1);
        let d = 0.001;
        let p = Wfsa::penalize(A, d, al).unwrap();
        assert_eq!(p.string_weight(&[A, B, A]).unwrap(), d * d);
    }

    #[test]
    fn unigram_automaton() {
        let al = Arc::new(Alphabet::from_names(["a", "b"]));
        let ones: HashMap<_, _> = al.labels().map(|l| (l, 1.0)).collect();
        let u = Wfsa::unigram(&ones, al.clone()).unwrap();
        assert_eq!(u.string_weight(&[A, B, B, A]).unwrap(), 1.0);
        let probs = HashMap::from([(A, 0.5), (B, 0.25)]);
        let u = Wfsa::unigram(&probs, al.clone()).unwrap();
        assert_eq!(u.string_weight(&[A, B, A]).unwrap(), 0.0625);
        let zero = HashMap::from([(A, 0.0), (B, 0.25)]);
        assert_eq!(Wfsa::unigram(&zero, al.clone()).unwrap().string_weight(&[B, A]).unwrap(), 0.0);
        assert!(Wfsa::unigram(&HashMap::from([(A, 0.5)]), al).is_err());
    }

    #[test]
    fn products() {
        let al = abc();
        let c = s(&al, "c c");
        let id = Wfsa::identity(al.clone());
        let ra = Wfsa::require(A, 0.01, al.clone()).unwrap();
        let rb = Wfsa::require(B, 0.01, al.clone()).unwrap();
        let pa = Wfsa::penalize(A, 0.1, al.clone()).unwrap();
        assert_eq!(ra.product(&id).unwrap().string_weight(&c).unwrap(), 0.01);
        let both = ra.product(&rb).unwrap();
        assert_eq!(both.num_states(), 4);
        assert!((both.string_weight(&c).unwrap() - 0.0001).abs() < 1e-18);
        assert_eq!(ra.product(&pa).unwrap().string_weight(&[A]).unwrap(), 0.1);
        let other = Wfsa::identity(Arc::new(Alphabet::from_names(["x"])));
        assert!(matches!(ra.product(&other), Err(Error::AlphabetMismatch)));
    }

    #[test]
    fn prefix_automata() {
        let al = abc();
        let empty = Wfsa::prefix(&[], al.clone(), false).unwrap();
        assert_eq!(empty.num_states(), 1);
        assert_eq!(empty.string_weight(&s(&al, "a b c")).unwrap(), 1.0);
        assert_eq!(empty.string_weight(&[]).unwrap(), 1.0);
        let p = Wfsa::prefix(&[A, B], al.clone(), false).unwrap();
        assert_eq!(p.string_weight(&[A, B, C]).unwrap(), 1.0);
        assert_eq!(p.string_weight(&[A, C]).unwrap(), 0.0);
        assert_eq!(p.string_weight(&[A]).unwrap(), 0.0);
        let exact = Wfsa::prefix(&[A, B], al, true).unwrap();
        assert_eq!(exact.string_weight(&[A, B]).unwrap(), 1.0);
        assert_eq!(exact.string_weight(&[A, B, C]).unwrap(), 0.0);
    }

    const C: LabelId = LabelId(2);

    #[test]
    fn unknown_symbols_are_rejected() {
        let al = abc();
        assert!(Wfsa::identity(al.clone()).string_weight(&[LabelId(7)]).is_err());
        assert!(Wfsa::require(LabelId(7), 0.1, al).is_err());
    }

    #[test]
    fn text_round_trip() {
        let al = abc();
        let a =
            Wfsa::require(A, 0.01, al.clone()).unwrap().product(&Wfsa::penalize(B, 1.0 / 3.0, al).unwrap()).unwrap();
        let text = a.to_text();
        let back = Wfsa::parse(&text).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.to_text(), text);
    }

    fn all_strings(n_labels: u32, max_len: usize) -> Vec<Vec<LabelId>> {
        let mut out = vec![Vec::new()];
        let mut frontier = vec![Vec::new()];
        for _ in 0..max_len {
            let mut next = Vec::new();
            for s in &frontier {
                for l in 0..n_labels {
                    let mut t: Vec<LabelId> = s.clone();
                    t.push(LabelId(l));
                    next.push(t);
                }
            }
            out.extend(next.iter().cloned());
            frontier = next;
        }
        out
    }

    fn count(seq: &[LabelId], l: LabelId) -> i32 {
        seq.iter().filter(|&&x| x == l).count() as i32
    }

    #[test]
    fn closed_forms_and_algebra_on_all_short_strings() {
        let al = abc();
        let eta = 0.01;
        let delta = 0.3;
        let probs = HashMap::from([(A, 0.5), (B, 0.25), (C, 2.0)]);
        let req = Wfsa::require(A, eta, al.clone()).unwrap();
        let pen = Wfsa::penalize(B, delta, al.clone()).unwrap();
        let uni = Wfsa::unigram(&probs, al.clone()).unwrap();
        let pre = Wfsa::prefix(&[A, C], al.clone(), false).unwrap();
        let ab = req.product(&pen).unwrap();
        let ba = pen.product(&req).unwrap();
        let left = ab.product(&uni).unwrap();
        let right = req.product(&pen.product(&uni).unwrap()).unwrap();
        for seq in all_strings(3, 8) {
            let w_req = if seq.contains(&A) { 1.0 } else { eta };
            let w_pen = delta.powi(count(&seq, B));
            let w_uni: f64 = seq.iter().map(|l| probs[l]).product();
            let w_pre = if seq.starts_with(&[A, C]) { 1.0 } else { 0.0 };
            let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1e-300);
            assert!(close(req.string_weight(&seq).unwrap(), w_req));
            assert!(close(pen.string_weight(&seq).unwrap(), w_pen));
            assert!(close(uni.string_weight(&seq).unwrap(), w_uni));
            assert_eq!(pre.string_weight(&seq).unwrap(), w_pre);
            let prod = w_req * w_pen;
            assert!(close(ab.string_weight(&seq).unwrap(), prod));
            assert!(close(ba.string_weight(&seq).unwrap(), prod));
            assert!(close(left.string_weight(&seq).unwrap(), right.string_weight(&seq).unwrap()));
        }
    }

    proptest! {
        #[test]
        fn product_weight_is_product_of_weights(
            seq in proptest::collection::vec(0u32..3, 0..10),
            eta in 0.0f64..1.0,
            delta in 0.0f64..1.0,
        ) {
            let al = abc();
            let seq: Vec<LabelId> = seq.into_iter().map(LabelId).collect();
            let r = Wfsa::require(C, eta, al.clone()).unwrap();
            let p = Wfsa::penalize(A, delta, al.clone()).unwrap();
            let prod = r.product(&p).unwrap().string_weight(&seq).unwrap();
            let expect = r.string_weight(&seq).unwrap() * p.string_weight(&seq).unwrap();
            prop_assert!((prod - expect).abs() <= 1e-12 * expect.max(1e-300));
        }
    }
}
