use std::fmt::Write;

use super::{Cfg, RhsItem};
use crate::error::Error;
use crate::symbols::{DerivationSequence, LabelId};

/// A derivation tree: a rule label with one subtree per RHS nonterminal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DerivationTree {
    pub rule: LabelId,
    pub children: Vec<DerivationTree>,
}

impl DerivationTree {
    pub fn leaf(rule: LabelId) -> Self {
        DerivationTree { rule, children: Vec::new() }
    }

    pub fn node(rule: LabelId, children: Vec<DerivationTree>) -> Self {
        DerivationTree { rule, children }
    }

    /// Preorder (root first, children left to right) rule labels.
    pub fn linearize(&self) -> DerivationSequence {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(t) = stack.pop() {
            out.push(t.rule);
            stack.extend(t.children.iter().rev());
        }
        DerivationSequence(out)
    }

    /// Reconstructs the unique tree whose linearization is `ds`.
    pub fn parse(ds: &[LabelId], g: &Cfg) -> crate::Result<DerivationTree> {
        let pending = g.pending_after(ds)?;
        if !pending.is_empty() {
            return Err(Error::Incomplete { pending: pending.len() });
        }
        if ds.is_empty() {
            return Err(Error::Incomplete { pending: 1 });
        }
        let mut pos = 0;
        let tree = build(ds, &mut pos, g);
        debug_assert_eq!(pos, ds.len());
        Ok(tree)
    }

    /// Canonical-form tokens.
    pub fn yield_cf(&self, g: &Cfg) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_yield(g, &mut out);
        out
    }

    fn collect_yield(&self, g: &Cfg, out: &mut Vec<String>) {
        let mut children = self.children.iter();
        for item in &g.rule(self.rule).rhs {
            match item {
                RhsItem::Surface(tokens) => out.extend(tokens.iter().cloned()),
                RhsItem::Nt(_) => children.next().expect("tree shape matches its grammar").collect_yield(g, out),
            }
        }
    }

    /// Logical form, substituting child forms into `$1..$k`.
    pub fn compose_lf(&self, g: &Cfg) -> String {
        let child_lfs: Vec<String> = self.children.iter().map(|c| c.compose_lf(g)).collect();
        substitute(&g.rule(self.rule).lf_template, &child_lfs)
    }

    /// Bracketed display, e.g. `s0(np1(typenp0))`.
    pub fn display(&self, g: &Cfg) -> String {
        let mut s = g.label_name(self.rule).to_string();
        if !self.children.is_empty() {
            s.push('(');
            for (i, c) in self.children.iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                let _ = write!(s, "{}", c.display(g));
            }
            s.push(')');
        }
        s
    }
}

fn build(ds: &[LabelId], pos: &mut usize, g: &Cfg) -> DerivationTree {
    let rule = ds[*pos];
    *pos += 1;
    let children = (0..g.rule(rule).arity()).map(|_| build(ds, pos, g)).collect();
    DerivationTree { rule, children }
}

fn substitute(template: &str, args: &[String]) -> String {
    let mut out = String::with_capacity(template.len());
    let bytes = template.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'$' {
            let mut j = i + 1;
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                j += 1;
            }
            if let Ok(n) = template[i + 1..j].parse::<usize>() {
                if (1..=args.len()).contains(&n) {
                    out.push_str(&args[n - 1]);
                    i = j;
                    continue;
                }
            }
        }
        let ch = template[i..].chars().next().unwrap();
        out.push(ch);
        i += ch.len_utf8();
    }
    out
}

/// Preorder traversal of `tree`.
pub fn linearize(tree: &DerivationTree) -> DerivationSequence {
    tree.linearize()
}

/// Inverse of [`linearize`].
pub fn parse_ds(ds: &[LabelId], g: &Cfg) -> crate::Result<DerivationTree> {
    DerivationTree::parse(ds, g)
}
