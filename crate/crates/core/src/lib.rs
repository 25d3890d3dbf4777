//! Input-dependent symbolic priors for derivation-sequence decoding.
//!
//! A base grammar defines the valid derivation sequences; automata derived
//! from the input utterance reweight them; the intersected grammar,
//! normalized into a PCFG, supplies next-symbol conditionals `b` that are
//! multiplied with a neural scorer's distribution at every decoding step.

pub mod background;
pub mod cli;
pub mod dataset;
pub mod decode;
pub mod diagnostics;
pub mod error;
pub mod grammar;
pub mod intersect;
pub mod oracle;
pub mod scorer;
pub mod symbols;
pub mod synth;
pub mod wcfg;
pub mod wfsa;

pub use error::{Error, Result};
pub use symbols::{Alphabet, DerivationSequence, LabelId, NtId};
