use std::collections::HashSet;
use std::sync::Arc;

use super::{Cfg, RhsItem, Rule};
use crate::error::{Error, GrammarIssue};
use crate::symbols::{Alphabet, LabelId, NtId, SymbolTable};

enum RawItem {
    Surface(Vec<String>),
    Ident(String),
}

struct RawRule {
    line: usize,
    label: String,
    lhs: String,
    items: Vec<RawItem>,
    template: String,
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

fn parse_line(line: usize, text: &str) -> Result<RawRule, GrammarIssue> {
    let syntax = |message: &str| GrammarIssue::Syntax { line, message: message.to_string() };
    let (label, rest) = text.split_once(':').ok_or_else(|| syntax("expected `label:`"))?;
    let label = label.trim();
    if !is_ident(label) {
        return Err(syntax(&format!("bad rule label `{label}`")));
    }
    let (lhs, rest) = rest.split_once("->").ok_or_else(|| syntax("expected `->`"))?;
    let lhs = lhs.trim();
    if !is_ident(lhs) {
        return Err(syntax(&format!("bad nonterminal name `{lhs}`")));
    }

    let mut items = Vec::new();
    let mut template = None;
    let mut chars = rest.char_indices().peekable();
    while let Some(&(i, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if c == '|' {
            template = Some(rest[i + 1..].trim().to_string());
            break;
        } else if c == '"' {
            chars.next();
            let start = i + 1;
            let mut end = None;
            for (j, d) in chars.by_ref() {
                if d == '"' {
                    end = Some(j);
                    break;
                }
            }
            let end = end.ok_or_else(|| syntax("unterminated string"))?;
            let tokens = super::tokenize(&rest[start..end]);
            if tokens.is_empty() {
                return Err(syntax("empty surface string"));
            }
            items.push(RawItem::Surface(tokens));
        } else {
            let start = i;
            let mut end = rest.len();
            while let Some(&(j, d)) = chars.peek() {
                if d.is_whitespace() || d == '"' || d == '|' {
                    end = j;
                    break;
                }
                chars.next();
            }
            let ident = &rest[start..end];
            if !is_ident(ident) {
                return Err(syntax(&format!("bad nonterminal name `{ident}`")));
            }
            items.push(RawItem::Ident(ident.to_string()));
        }
    }
    let template = template.ok_or_else(|| syntax("missing `| lf_template`"))?;
    if items.is_empty() {
        return Err(syntax("empty right-hand side"));
    }
    Ok(RawRule { line, label: label.to_string(), lhs: lhs.to_string(), items, template })
}

/// Distinct `$n` placeholders in a template, or `None` if one is malformed.
pub(crate) fn placeholders(template: &str) -> Option<Vec<usize>> {
    let mut seen = Vec::new();
    let bytes = template.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'$' {
            let start = i + 1;
            let mut j = start;
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                j += 1;
            }
            let n: usize = template[start..j].parse().ok()?;
            if !seen.contains(&n) {
                seen.push(n);
            }
            i = j;
        } else {
            i += 1;
        }
    }
    Some(seen)
}

pub(super) fn load_grammar(text: &str) -> crate::Result<Cfg> {
    let mut issues = Vec::new();
    let mut raw = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        match parse_line(i + 1, trimmed) {
            Ok(r) => raw.push(r),
            Err(e) => issues.push(e),
        }
    }
    if raw.is_empty() && issues.is_empty() {
        issues.push(GrammarIssue::Empty);
    }

    let mut nonterminals = SymbolTable::new();
    for r in &raw {
        nonterminals.intern(&r.lhs);
    }
    let mut labels = Vec::new();
    let mut seen_labels = HashSet::new();
    let mut rules = Vec::new();
    for r in raw {
        if !seen_labels.insert(r.label.clone()) {
            issues.push(GrammarIssue::DuplicateLabel { line: r.line, label: r.label });
            continue;
        }
        let mut rhs = Vec::new();
        let mut ok = true;
        for item in r.items {
            match item {
                RawItem::Surface(tokens) => rhs.push(RhsItem::Surface(tokens)),
                RawItem::Ident(name) => match nonterminals.get(&name) {
                    Some(id) => rhs.push(RhsItem::Nt(NtId(id))),
                    None => {
                        issues.push(GrammarIssue::UndefinedNonterminal { line: r.line, name });
                        ok = false;
                    }
                },
            }
        }
        let arity = rhs.iter().filter(|i| matches!(i, RhsItem::Nt(_))).count();
        let valid_slots =
            placeholders(&r.template).filter(|p| p.len() == arity && p.iter().all(|&n| (1..=arity).contains(&n)));
        if valid_slots.is_none() {
            let count = placeholders(&r.template).map_or(0, |p| p.len());
            issues.push(GrammarIssue::ArityMismatch {
                line: r.line,
                label: r.label.clone(),
                placeholders: count,
                nonterminals: arity,
            });
            ok = false;
        }
        if ok {
            let label = LabelId(labels.len() as u32);
            labels.push(r.label);
            rules.push(Rule { label, lhs: NtId(nonterminals.get(&r.lhs).unwrap()), rhs, lf_template: r.template });
        }
    }

    if issues.is_empty() {
        issues.extend(unproductive(&nonterminals, &rules));
    }
    if !issues.is_empty() {
        return Err(Error::Grammar(issues));
    }

    let mut by_lhs = vec![Vec::new(); nonterminals.len()];
    for rule in &rules {
        by_lhs[rule.lhs.index()].push(rule.label);
    }
    Ok(Cfg { start: rules[0].lhs, nonterminals, alphabet: Arc::new(Alphabet::from_names(labels)), rules, by_lhs })
}

fn unproductive(nonterminals: &SymbolTable, rules: &[Rule]) -> Vec<GrammarIssue> {
    let mut productive = HashSet::new();
    loop {
        let before = productive.len();
        for rule in rules {
            if rule.nonterminals().all(|nt| productive.contains(&nt)) {
                productive.insert(rule.lhs);
            }
        }
        if productive.len() == before {
            break;
        }
    }
    (0..nonterminals.len() as u32)
        .filter(|&i| !productive.contains(&NtId(i)))
        .map(|i| GrammarIssue::Unproductive { name: nonterminals.resolve(i).to_string() })
        .collect()
}
