use std::fmt;

use thiserror::Error;

/// One problem found while loading a grammar file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GrammarIssue {
    Syntax { line: usize, message: String },
    DuplicateLabel { line: usize, label: String },
    UndefinedNonterminal { line: usize, name: String },
    ArityMismatch { line: usize, label: String, placeholders: usize, nonterminals: usize },
    Unproductive { name: String },
    Empty,
}

impl fmt::Display for GrammarIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GrammarIssue::Syntax { line, message } => write!(f, "line {line}: {message}"),
            GrammarIssue::DuplicateLabel { line, label } => {
                write!(f, "line {line}: duplicate rule label `{label}`")
            }
            GrammarIssue::UndefinedNonterminal { line, name } => {
                write!(f, "line {line}: undefined nonterminal `{name}`")
            }
            GrammarIssue::ArityMismatch { line, label, placeholders, nonterminals } => write!(
                f,
                "line {line}: rule `{label}` has {placeholders} placeholder(s) but {nonterminals} nonterminal(s)"
            ),
            GrammarIssue::Unproductive { name } => {
                write!(f, "nonterminal `{name}` derives no finite derivation")
            }
            GrammarIssue::Empty => write!(f, "grammar has no rules"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grammar: {}", join_issues(.0))]
    Grammar(Vec<GrammarIssue>),

    #[error("{what}, line {line}: {message}")]
    Format { what: &'static str, line: usize, message: String },

    #[error("lhs mismatch at position {position}: `{label}` expands `{found}` but `{expected}` is pending")]
    LhsMismatch { position: usize, label: String, expected: String, found: String },

    #[error("incomplete derivation sequence: {pending} nonterminal(s) still pending")]
    Incomplete { pending: usize },

    #[error("trailing labels: derivation is complete before position {position}")]
    Trailing { position: usize },

    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),

    #[error("alphabet mismatch between grammar and automaton")]
    AlphabetMismatch,

    #[error("inside weights diverge after {iterations} iteration(s) at: {}", .nonterminals.join(", "))]
    Divergent { nonterminals: Vec<String>, iterations: usize },

    #[error("inside weights did not converge within {iterations} iteration(s) (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("partition function is zero")]
    ZeroMass,

    #[error("prefix `{prefix}` has zero mass")]
    ZeroMassPrefix { prefix: String },

    #[error("background is infeasible for required labels {labels:?} (total mass 0)")]
    Infeasible { labels: Vec<String> },

    #[error("gold symbol `{label}` at step {step} has zero background probability")]
    GoldExcluded { step: usize, label: String },

    #[error("background distribution is all zero")]
    AllZeroBackground,

    #[error("non-finite parameters at epoch {epoch}, step {step}")]
    NumericalDivergence { epoch: usize, step: usize },

    #[error("search budget of {expansions} expansion(s) exhausted before a complete sequence")]
    BudgetExhausted { expansions: usize },

    #[error("enumeration exceeded its cap of {cap} items")]
    EnumerationCap { cap: usize },

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn join_issues(issues: &[GrammarIssue]) -> String {
    issues.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
