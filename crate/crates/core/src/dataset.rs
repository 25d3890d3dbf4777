//! Dataset files: one example per line, `utterance<TAB>labels`.

use crate::error::Error;
use crate::grammar::tokenize;
use crate::scorer::TrainingExample;
use crate::symbols::Alphabet;

pub fn parse_dataset(text: &str, alphabet: &Alphabet) -> crate::Result<Vec<TrainingExample>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Format { what: "dataset", line: i + 1, message };
        let (utterance, labels) = line.split_once('\t').ok_or_else(|| err("expected a tab".into()))?;
        let ds = alphabet.parse_seq(labels).map_err(|l| err(format!("unknown rule label `{l}`")))?;
        if ds.is_empty() {
            return Err(err("empty derivation sequence".into()));
        }
        out.push(TrainingExample { utterance: tokenize(utterance), ds: ds.0 });
    }
    Ok(out)
}

pub fn format_dataset(examples: &[TrainingExample], alphabet: &Alphabet) -> String {
    let mut out = String::new();
    for ex in examples {
        out.push_str(&ex.utterance.join(" "));
        out.push('\t');
        out.push_str(&alphabet.format_seq(&ex.ds));
        out.push('\n');
    }
    out
}
