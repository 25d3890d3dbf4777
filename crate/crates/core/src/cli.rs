//! The `symprior` command line.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::background::{
    BackgroundBuilder, DateAliasTable, EntityLexicon, UniformBackground, DEFAULT_ENTITY_NONTERMINALS,
};
use crate::dataset::{format_dataset, parse_dataset};
use crate::decode::{self, EvalReport, DEFAULT_BUDGET};
use crate::diagnostics::entity_step_kl;
use crate::error::Error;
use crate::grammar::{tokenize, Cfg, DerivationTree};
use crate::intersect;
use crate::oracle;
use crate::scorer::{self, Dims, Model, NgramVocab, ScorerParams, TrainConfig};
use crate::symbols::{Alphabet, LabelId};
use crate::synth::{self, SynthConfig};
use crate::wcfg::Wcfg;
use crate::wfsa::{self, PriorConfig, Wfsa, ETA_GRID};

#[derive(Debug, Parser)]
#[command(name = "symprior", version, about = "Grammar and automaton backgrounds for derivation-sequence decoding")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a grammar file.
    Check(GrammarArg),
    /// Print the derivation-sequence grammar GW0.
    DsGrammar {
        #[command(flatten)]
        grammar: GrammarArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Intersect a weighted grammar with automata and print the result.
    Intersect {
        #[command(flatten)]
        source: WcfgSource,
        #[command(flatten)]
        automata: AutomatonArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Normalize (optionally after intersecting) into a PCFG.
    Normalize {
        #[command(flatten)]
        source: WcfgSource,
        #[command(flatten)]
        automata: AutomatonArgs,
        /// Print only the total mass before normalization.
        #[arg(long)]
        mass: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Next-symbol distribution after a prefix.
    PrefixDist {
        #[command(flatten)]
        source: WcfgSource,
        #[command(flatten)]
        automata: AutomatonArgs,
        /// Space-separated rule labels.
        #[arg(long, default_value = "")]
        prefix: String,
    },
    /// Print the entities detected in an utterance.
    Detect {
        #[command(flatten)]
        grammar: GrammarArg,
        #[command(flatten)]
        entities: EntityArgs,
        utterance: String,
    },
    /// Generate a synthetic corpus with held-out entities.
    Synth {
        #[command(flatten)]
        grammar: GrammarArg,
        #[command(flatten)]
        entities: EntityArgs,
        /// Output directory for train.tsv, dev.tsv, test.tsv and heldout.txt.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        n_train: usize,
        #[arg(long, default_value_t = 100)]
        n_dev: usize,
        #[arg(long, default_value_t = 100)]
        n_test: usize,
        #[arg(long, default_value_t = 0.33)]
        holdout_fraction: f64,
        #[arg(long, default_value_t = 9)]
        max_len: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Train a scorer.
    Train {
        #[command(flatten)]
        grammar: GrammarArg,
        #[command(flatten)]
        background: BackgroundArgs,
        #[command(flatten)]
        uniform: UniformArg,
        #[arg(long)]
        train: PathBuf,
        /// Model output file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Decode one utterance.
    Decode {
        #[command(flatten)]
        grammar: GrammarArg,
        #[command(flatten)]
        background: BackgroundArgs,
        /// Model file; a zero-initialized scorer is used when absent.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: usize,
        utterance: String,
    },
    /// Exact-LF accuracy with and without the input-dependent background.
    Eval {
        #[command(flatten)]
        grammar: GrammarArg,
        #[command(flatten)]
        background: BackgroundArgs,
        /// Scorer trained with the background.
        #[arg(long)]
        model: PathBuf,
        /// Scorer trained without it; defaults to `--model`.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Labels listed here (one per line) define the held-out subset.
        #[arg(long)]
        heldout: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: usize,
        /// Also report background accuracy for every eta in the grid.
        #[arg(long)]
        sweep_eta: bool,
        /// Write per-example outcomes as JSON lines.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Mean KL to uniform of the scorer distribution at entity steps.
    KlReport {
        #[command(flatten)]
        grammar: GrammarArg,
        #[command(flatten)]
        entities: EntityArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Brute-force checks of intersection and prefix conditionals.
    Oracle {
        #[command(flatten)]
        grammar: GrammarArg,
        #[command(flatten)]
        automata: AutomatonArgs,
        #[arg(long, default_value_t = 10)]
        max_len: usize,
        /// Number of random prefixes to check.
        #[arg(long, default_value_t = 100)]
        prefixes: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
pub struct GrammarArg {
    #[arg(long)]
    pub grammar: PathBuf,
}

#[derive(Debug, Args)]
pub struct WcfgSource {
    /// Base grammar; its GW0 is used.
    #[arg(long, conflicts_with = "wcfg", required_unless_present = "wcfg")]
    pub grammar: Option<PathBuf>,
    /// A weighted grammar in text form.
    #[arg(long)]
    pub wcfg: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AutomatonArgs {
    /// Automaton file; repeatable, multiplied together.
    #[arg(long)]
    pub automaton: Vec<PathBuf>,
    /// Labels to require (weight `--eta` when absent).
    #[arg(long)]
    pub require: Vec<String>,
    /// Labels to penalize (weight `--delta` per occurrence).
    #[arg(long)]
    pub penalize: Vec<String>,
    #[arg(long, default_value_t = 0.01)]
    pub eta: f64,
    #[arg(long, default_value_t = 0.001)]
    pub delta: f64,
    /// Write the combined automaton here.
    #[arg(long)]
    pub dump_automaton: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EntityArgs {
    #[arg(long)]
    pub aliases: Option<PathBuf>,
    /// Nonterminals whose rules are entities.
    #[arg(long = "entity-nt", default_values_t = DEFAULT_ENTITY_NONTERMINALS.iter().map(|s| s.to_string()).collect::<Vec<_>>())]
    pub entity_nts: Vec<String>,
}

#[derive(Debug, Args)]
pub struct BackgroundArgs {
    #[command(flatten)]
    pub entities: EntityArgs,
    #[arg(long, default_value_t = 0.01)]
    pub eta: f64,
    #[arg(long, default_value_t = 0.001)]
    pub delta: f64,
    /// Use the grammar-only background (no entity detection).
    #[arg(long)]
    pub no_background: bool,
}

#[derive(Debug, Args)]
pub struct UniformArg {
    /// Train against a uniform background, as a plain sequence model.
    #[arg(long, conflicts_with = "no_background")]
    pub uniform_background: bool,
}

fn read(path: &Path) -> crate::Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Invalid(format!("cannot read {}: {e}", path.display())))
}

fn load_grammar(path: &Path) -> crate::Result<Cfg> {
    Cfg::load(&read(path)?)
}

fn load_wcfg(source: &WcfgSource) -> crate::Result<Wcfg> {
    match (&source.grammar, &source.wcfg) {
        (Some(g), _) => Ok(load_grammar(g)?.ds_grammar()),
        (None, Some(w)) => Wcfg::parse(&read(w)?),
        (None, None) => Err(Error::Invalid("give --grammar or --wcfg".into())),
    }
}

fn lookup(alphabet: &Alphabet, name: &str) -> crate::Result<LabelId> {
    alphabet.label(name).ok_or_else(|| Error::UnknownSymbol(name.to_string()))
}

fn check_eta(eta: f64) -> crate::Result<()> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Invalid(format!("eta {eta} outside [0, 1]")));
    }
    Ok(())
}

/// The product of every automaton requested on the command line, or `None`
/// when there is none.
fn build_automaton(args: &AutomatonArgs, alphabet: &Arc<Alphabet>) -> crate::Result<Option<Wfsa>> {
    check_eta(args.eta)?;
    let mut factors = Vec::new();
    for path in &args.automaton {
        let a = Wfsa::parse(&read(path)?)?;
        if a.alphabet().names() != alphabet.names() {
            return Err(Error::AlphabetMismatch);
        }
        // Re-home onto the grammar's alphabet so products line up.
        factors.push(Wfsa::new(alphabet.clone(), a.num_states(), a.transitions().to_vec(), a.exits().to_vec())?);
    }
    for name in &args.require {
        factors.push(Wfsa::require(lookup(alphabet, name)?, args.eta, alphabet.clone())?);
    }
    for name in &args.penalize {
        factors.push(Wfsa::penalize(lookup(alphabet, name)?, args.delta, alphabet.clone())?);
    }
    if factors.is_empty() {
        return Ok(None);
    }
    let a = wfsa::product_all(&factors, alphabet.clone())?;
    if let Some(path) = &args.dump_automaton {
        std::fs::write(path, a.to_text())?;
    }
    Ok(Some(a))
}

fn apply_automata(g: Wcfg, args: &AutomatonArgs) -> crate::Result<Wcfg> {
    match build_automaton(args, &g.alphabet().clone())? {
        Some(a) => intersect::intersect(&g, &a),
        None => Ok(g),
    }
}

fn load_aliases(args: &EntityArgs) -> crate::Result<DateAliasTable> {
    match &args.aliases {
        Some(p) => DateAliasTable::parse(&read(p)?),
        None => Ok(DateAliasTable::default()),
    }
}

fn entity_nts(args: &EntityArgs) -> Vec<&str> {
    args.entity_nts.iter().map(String::as_str).collect()
}

fn make_builder(g: &Cfg, args: &BackgroundArgs, eta: f64) -> crate::Result<BackgroundBuilder> {
    make_builder_with(g, args, eta, args.no_background)
}

fn make_builder_with(g: &Cfg, args: &BackgroundArgs, eta: f64, grammar_only: bool) -> crate::Result<BackgroundBuilder> {
    check_eta(eta)?;
    if grammar_only {
        return Ok(BackgroundBuilder::grammar_only(g));
    }
    let dates = load_aliases(&args.entities)?;
    let lex = EntityLexicon::from_grammar(g, &entity_nts(&args.entities), &dates);
    Ok(BackgroundBuilder::new(g, lex, dates, PriorConfig { eta, delta: args.delta }))
}

fn load_model(path: &Path, g: &Cfg) -> crate::Result<Model> {
    let m = Model::from_json(&read(path)?)?;
    m.check_labels(g.alphabet())?;
    Ok(m)
}

fn emit(out: &mut dyn Write, path: Option<&Path>, text: &str) -> crate::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn held_out_labels(path: &Path, g: &Cfg) -> crate::Result<BTreeSet<LabelId>> {
    read(path)?.lines().map(str::trim).filter(|l| !l.is_empty()).map(|l| lookup(g.alphabet(), l)).collect()
}

fn report_line(name: &str, r: &EvalReport) -> String {
    format!("{name:<24}{:>8.4}  ({}/{})\n", r.accuracy(), r.correct, r.total)
}

/// Runs one command line (without the program name) and writes its
/// standard output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> crate::Result<()> {
    match cli.command {
        Command::Check(a) => {
            let g = load_grammar(&a.grammar)?;
            writeln!(
                out,
                "ok: {} rules, {} nonterminals, start {}",
                g.rules().len(),
                g.nonterminal_count(),
                g.nonterminal_name(g.start())
            )?;
        }
        Command::DsGrammar { grammar, out: path } => {
            let g = load_grammar(&grammar.grammar)?;
            emit(out, path.as_deref(), &g.ds_grammar().to_text())?;
        }
        Command::Intersect { source, automata, out: path } => {
            let g = apply_automata(load_wcfg(&source)?, &automata)?;
            emit(out, path.as_deref(), &intersect::trim(&g).to_text())?;
        }
        Command::Normalize { source, automata, mass, out: path } => {
            let g = apply_automata(load_wcfg(&source)?, &automata)?;
            if mass {
                writeln!(out, "{}", intersect::total_mass(&g)?)?;
            } else {
                emit(out, path.as_deref(), &intersect::normalize(&g)?.to_text())?;
            }
        }
        Command::PrefixDist { source, automata, prefix } => {
            let g = apply_automata(load_wcfg(&source)?, &automata)?;
            let p = intersect::normalize(&g)?;
            let prefix = p.alphabet().parse_seq(&prefix).map_err(Error::UnknownSymbol)?;
            let d = intersect::next_symbol_distribution(&p, &prefix)?;
            writeln!(out, "{}", d.format(p.alphabet()))?;
        }
        Command::Detect { grammar, entities, utterance } => {
            let g = load_grammar(&grammar.grammar)?;
            let dates = load_aliases(&entities)?;
            let lex = EntityLexicon::from_grammar(&g, &entity_nts(&entities), &dates);
            for l in crate::background::detect_entities(&tokenize(&utterance), &lex, &dates) {
                writeln!(out, "{}", g.label_name(l))?;
            }
        }
        Command::Synth { grammar, entities, out: dir, n_train, n_dev, n_test, holdout_fraction, max_len, seed } => {
            let g = load_grammar(&grammar.grammar)?;
            let cfg = SynthConfig { n_train, n_dev, n_test, holdout_fraction, max_len, seed, ..SynthConfig::default() };
            let c = synth::synthesize(&g, &entity_nts(&entities), &cfg)?;
            std::fs::create_dir_all(&dir)?;
            for (name, split) in [("train.tsv", &c.train), ("dev.tsv", &c.dev), ("test.tsv", &c.test)] {
                std::fs::write(dir.join(name), format_dataset(split, g.alphabet()))?;
            }
            let held: String = c.held_out.iter().map(|l| format!("{}\n", g.label_name(*l))).collect();
            std::fs::write(dir.join("heldout.txt"), &held)?;
            writeln!(
                out,
                "wrote {} train, {} dev, {} test examples to {}; held out: {}",
                c.train.len(),
                c.dev.len(),
                c.test.len(),
                dir.display(),
                held.split_whitespace().collect::<Vec<_>>().join(" ")
            )?;
        }
        Command::Train { grammar, background, uniform, train, out: path, epochs, lr, seed } => {
            let g = load_grammar(&grammar.grammar)?;
            let data = parse_dataset(&read(&train)?, g.alphabet())?;
            let cfg = TrainConfig { epochs, learning_rate: lr, seed, ..TrainConfig::default() };
            let (model, report) = if uniform.uniform_background {
                let n_labels = g.alphabet().len();
                scorer::train_with(&data, g.alphabet(), &cfg, |_| Ok(Box::new(UniformBackground { n_labels })))?
            } else {
                scorer::train(&data, g.alphabet(), &make_builder(&g, &background, background.eta)?, &cfg)?
            };
            model.save(&path)?;
            for (i, l) in report.epoch_losses.iter().enumerate() {
                writeln!(out, "epoch {:>3}  loss {l:.6}", i + 1)?;
            }
            writeln!(
                out,
                "trained on {} examples ({} skipped); saved {}",
                data.len() - report.skipped,
                report.skipped,
                path.display()
            )?;
        }
        Command::Decode { grammar, background, model, budget, utterance } => {
            let g = load_grammar(&grammar.grammar)?;
            let model = match model {
                Some(p) => load_model(&p, &g)?,
                None => {
                    let vocab = NgramVocab::build(std::iter::empty::<&[String]>());
                    Model::new(
                        g.alphabet(),
                        vocab.clone(),
                        ScorerParams::zeros(Dims::default(), g.alphabet().len(), &vocab),
                    )
                }
            };
            let builder = make_builder(&g, &background, background.eta)?;
            let utt = tokenize(&utterance);
            let bg = builder.build_or_fallback(&utt)?;
            let d = decode::decode(&model, &bg, &utt, budget)?;
            let tree = DerivationTree::parse(&d.ds, &g)?;
            writeln!(out, "ds: {}", g.alphabet().format_seq(&d.ds))?;
            writeln!(out, "cf: {}", tree.yield_cf(&g).join(" "))?;
            writeln!(out, "lf: {}", tree.compose_lf(&g))?;
            writeln!(out, "log_prob: {}", d.log_prob)?;
        }
        Command::Eval { grammar, background, model, baseline, data, heldout, budget, sweep_eta, records } => {
            let g = load_grammar(&grammar.grammar)?;
            let data = parse_dataset(&read(&data)?, g.alphabet())?;
            let model = load_model(&model, &g)?;
            let base = match &baseline {
                Some(p) => load_model(p, &g)?,
                None => model.clone(),
            };
            let with_bg = make_builder_with(&g, &background, background.eta, false)?;
            let without = BackgroundBuilder::grammar_only(&g);
            let bg_report = decode::evaluate(&data, &model, &g, &with_bg, budget);
            let base_report = decode::evaluate(&data, &base, &g, &without, budget);
            let domain = grammar.grammar.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let mut text = format!("domain {domain}: {} examples\n", data.len());
            text += &report_line("background", &bg_report);
            text += &report_line("no-background", &base_report);
            if let Some(path) = &heldout {
                let held = held_out_labels(path, &g)?;
                let is_held = |i: usize| data[i].ds.iter().any(|l| held.contains(l));
                let (bh, n) = bg_report.accuracy_where(is_held);
                let (nh, _) = base_report.accuracy_where(is_held);
                let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
                text += &format!("{:<24}{:>8.4}  ({bh}/{n})\n", "background held-out", frac(bh));
                text += &format!("{:<24}{:>8.4}  ({nh}/{n})\n", "no-background held-out", frac(nh));
            }
            if sweep_eta {
                for eta in ETA_GRID {
                    let b = make_builder_with(&g, &background, eta, false)?;
                    let r = decode::evaluate(&data, &model, &g, &b, budget);
                    text += &report_line(&format!("background eta={eta}"), &r);
                }
            }
            out.write_all(text.as_bytes())?;
            if let Some(path) = records {
                let mut lines = String::new();
                for (system, r) in [("background", &bg_report), ("no-background", &base_report)] {
                    for o in &r.outcomes {
                        let mut v = serde_json::to_value(o)?;
                        v["system"] = system.into();
                        v["domain"] = domain.clone().into();
                        lines += &v.to_string();
                        lines.push('\n');
                    }
                }
                std::fs::write(path, lines)?;
            }
        }
        Command::KlReport { grammar, entities, model, baseline, data, samples, seed } => {
            let g = load_grammar(&grammar.grammar)?;
            let data = parse_dataset(&read(&data)?, g.alphabet())?;
            let lex = EntityLexicon::from_grammar(&g, &entity_nts(&entities), &load_aliases(&entities)?);
            let mut models = vec![("background", load_model(&model, &g)?)];
            if let Some(p) = baseline {
                models.push(("baseline", load_model(&p, &g)?));
            }
            for (name, m) in &models {
                match entity_step_kl(m, &data, |l| lex.is_entity(l), samples, seed) {
                    Some(r) => writeln!(
                        out,
                        "{name:<16}mean KL {:.6} over {} steps ({} available)",
                        r.mean, r.sampled, r.available
                    )?,
                    None => return Err(Error::Invalid("dataset has no entity steps".into())),
                }
            }
        }
        Command::Oracle { grammar, automata, max_len, prefixes, seed } => {
            let g = load_grammar(&grammar.grammar)?;
            let gw0 = g.ds_grammar();
            let a = build_automaton(&automata, &gw0.alphabet().clone())?
                .unwrap_or_else(|| Wfsa::identity(gw0.alphabet().clone()));
            let failures = run_oracle(&gw0, &a, max_len, prefixes, seed, out)?;
            if failures > 0 {
                return Err(Error::Invalid(format!("{failures} oracle checks failed")));
            }
        }
    }
    Ok(())
}

/// Checks the intersection contract on every string up to `max_len`, and
/// prefix conditionals against truncated enumeration. Returns the number of
/// failed checks.
fn run_oracle(
    gw0: &Wcfg,
    a: &Wfsa,
    max_len: usize,
    prefixes: usize,
    seed: u64,
    out: &mut dyn Write,
) -> crate::Result<usize> {
    let inter = intersect::intersect(gw0, a)?;
    let base = oracle::enumerate_map(gw0, max_len)?;
    let got = oracle::enumerate_map(&inter, max_len)?;
    let mut bad = 0;
    for (s, w) in &base {
        let expect = w * a.string_weight(s)?;
        let have = got.get(s).copied().unwrap_or(0.0);
        if (have - expect).abs() > 1e-9 * expect.abs().max(f64::MIN_POSITIVE) {
            bad += 1;
        }
    }
    bad += got.keys().filter(|s| !base.contains_key(*s)).count();
    writeln!(out, "intersection: {} strings, {bad} mismatches", base.len())?;

    let p = intersect::normalize(&inter)?;
    let strings = oracle::enumerate_map(&p, max_len)?;
    let mut candidates: Vec<Vec<LabelId>> = strings
        .keys()
        .flat_map(|s| (0..=s.len()).map(|t| s[..t].to_vec()).collect::<Vec<_>>())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    rand::seq::SliceRandom::shuffle(candidates.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(seed));
    candidates.truncate(prefixes);
    let mut cond_bad = 0;
    for prefix in &candidates {
        let exact = intersect::next_symbol_distribution(&p, prefix)?;
        let brute = oracle::brute_conditional_from(&strings, 1.0, prefix, p.alphabet().len())?;
        let ok = exact.to_vec().iter().zip(brute.dist.to_vec()).all(|(x, y)| (x - y).abs() <= brute.bound + 1e-9);
        cond_bad += usize::from(!ok);
    }
    writeln!(out, "conditionals: {} prefixes, {cond_bad} outside the tail bound", candidates.len())?;
    Ok(bad + cond_bad)
}

/// Parses `std::env::args` and runs; errors go to stderr.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(cli, &mut lock) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
