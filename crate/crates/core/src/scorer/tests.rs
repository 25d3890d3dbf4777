use super::*;
use crate::background::{
    BackgroundBuilder, DateAliasTable, EntityLexicon, UniformBackground, DEFAULT_ENTITY_NONTERMINALS,
};
use crate::grammar::{tokenize, Cfg};
use crate::wfsa::PriorConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FIG1: &str = include_str!("../../fixtures/fig1.grammar");
const FIG1_EXT: &str = include_str!("../../fixtures/fig1_ext.grammar");
const HELLO: &str = include_str!("../../fixtures/hello.grammar");

fn small_dims() -> Dims {
    Dims { embed: 3, hidden: 4, unigram: 2, bigram: 3, head: 4 }
}

fn setup(text: &str, utterance: &str, ds: &str) -> (Cfg, NgramVocab, TrainingExample) {
    let g = Cfg::load(text).unwrap();
    let utt = tokenize(utterance);
    let vocab = NgramVocab::build([utt.as_slice(), tokenize("other words here").as_slice()]);
    let ds = g.alphabet().parse_seq(ds).unwrap().0;
    (g, vocab, TrainingExample { utterance: utt, ds })
}

fn random_params(dims: Dims, n: usize, vocab: &NgramVocab, seed: u64) -> ScorerParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ScorerParams::random(dims, n, vocab, &mut rng);
    // Nonzero biases so their gradients are exercised too.
    for (_, b) in p.blocks_mut() {
        if b.len() <= dims.head.max(n + 1) {
            b.iter_mut().for_each(|v| *v = rand::Rng::gen_range(&mut rng, -0.5..0.5));
        }
    }
    p
}

/// Fixed per-prefix distribution, used as an oracle background.
struct Table(Vec<(Vec<LabelId>, Vec<f64>)>);

impl NextSymbolSource for Table {
    fn conditional(&self, prefix: &[LabelId]) -> crate::Result<NextSymbolDistribution> {
        let (_, v) = self.0.iter().find(|(p, _)| p == prefix).expect("prefix in table");
        let (labels, end) = v.split_at(v.len() - 1);
        Ok(NextSymbolDistribution { probs: labels.to_vec(), end_prob: end[0] })
    }
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn zero_params_give_uniform_output() {
    let (g, vocab, ex) = setup(FIG1, "articles published in 1950", "s0 np1 typenp0");
    let p = ScorerParams::zeros(Dims::default(), g.alphabet().len(), &vocab);
    let enc = encode(&ex.utterance, &vocab, &p);
    let m = model_distribution(&p, &enc.ub, &ex.ds);
    let u = 1.0 / (g.alphabet().len() + 1) as f64;
    assert!(m.iter().all(|&x| x == u));
}

#[test]
fn encoding_properties() {
    let (g, vocab, _) = setup(FIG1, "a b c", "s0");
    let p = random_params(small_dims(), g.alphabet().len(), &vocab, 1);
    let empty = encode(&[], &vocab, &p);
    let mut biases = p.uni_b.clone();
    biases.extend(&p.bi_b);
    assert_eq!(empty.ub, biases);

    let abc = encode(&tokenize("a b c"), &vocab, &p);
    assert_eq!(abc, encode(&tokenize("a b c"), &vocab, &p));
    let cba = encode(&tokenize("c b a"), &vocab, &p);
    let k = small_dims().unigram;
    assert_eq!(abc.ub[..k], cba.ub[..k]);
    assert_ne!(abc.ub[k..], cba.ub[k..]);
}

#[test]
fn dropout_masks_are_inverted_and_seeded() {
    let (g, vocab, ex) = setup(FIG1, "a b c", "s0");
    let dims = Dims { unigram: 2000, bigram: 2000, ..small_dims() };
    let mut p = ScorerParams::zeros(dims, g.alphabet().len(), &vocab);
    p.uni_b.iter_mut().for_each(|v| *v = 1.0);
    p.bi_b.iter_mut().for_each(|v| *v = 1.0);
    let mut r1 = ChaCha8Rng::seed_from_u64(5);
    let mut r2 = ChaCha8Rng::seed_from_u64(5);
    let a = encode_input(&ex.utterance, &vocab, &p, Some((Dropout::default(), &mut r1)));
    let b = encode_input(&ex.utterance, &vocab, &p, Some((Dropout::default(), &mut r2)));
    assert_eq!(a, b);
    let (u1, u2) = a.ub.split_at(2000);
    let dropped = |v: &[f64]| v.iter().filter(|x| **x == 0.0).count() as f64 / v.len() as f64;
    assert!((dropped(u1) - 0.1).abs() < 0.03);
    assert!((dropped(u2) - 0.3).abs() < 0.04);
    assert!(u1.iter().all(|&x| x == 0.0 || (x - 1.0 / 0.9).abs() < 1e-12));
}

fn tanh_layer(w: &[Vec<f64>], b: &[f64], x: &[f64]) -> Vec<f64> {
    w.iter().zip(b).map(|(row, b)| (row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + b).tanh()).collect()
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows).map(|r| (0..m.cols).map(|c| m.data[r * m.cols + c]).collect()).collect()
}

#[test]
fn forward_pass_matches_reference() {
    let (g, vocab, ex) = setup(FIG1_EXT, "articles from 1950 from", "s0 np0 np1 typenp0 cp0");
    let dims = Dims { embed: 2, hidden: 3, unigram: 2, bigram: 2, head: 4 };
    let p = random_params(dims, g.alphabet().len(), &vocab, 7);

    let mut uni = vec![0.0; vocab.unigram_count()];
    for t in &ex.utterance {
        uni[vocab.unigram_id(t)] += 1.0;
    }
    let mut bi = vec![0.0; vocab.bigram_count()];
    for w in ex.utterance.windows(2) {
        bi[vocab.bigram_id(&w[0], &w[1])] += 1.0;
    }
    let lin = |m: &Matrix, b: &[f64], x: &[f64]| -> Vec<f64> {
        rows(m).iter().zip(b).map(|(r, b)| r.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + b).collect()
    };
    let mut ub = lin(&p.uni_w, &p.uni_b, &uni);
    ub.extend(lin(&p.bi_w, &p.bi_b, &bi));
    let enc = encode(&ex.utterance, &vocab, &p);
    assert!(close(&enc.ub, &ub, 1e-12));

    let mut h = vec![0.0; dims.hidden];
    let wx = rows(&p.rnn_wx);
    let wh = rows(&p.rnn_wh);
    for t in 0..=ex.ds.len() {
        let mut z = h.clone();
        z.extend(&ub);
        let a = tanh_layer(&rows(&p.head_w1), &p.head_b1, &z);
        let logits = lin(&p.head_w2, &p.head_b2, &a);
        let mx = logits.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
        let s: f64 = e.iter().sum();
        let reference: Vec<f64> = e.iter().map(|v| v / s).collect();
        let got = model_distribution(&p, &enc.ub, &ex.ds[..t]);
        assert!(close(&got, &reference, 1e-12), "step {t}");
        assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        if t < ex.ds.len() {
            let x = p.embed.row(ex.ds[t].index());
            h = wx
                .iter()
                .zip(&wh)
                .zip(&p.rnn_b)
                .map(|((rx, rh), b)| {
                    let v: f64 = rx.iter().zip(x).map(|(a, c)| a * c).sum::<f64>()
                        + rh.iter().zip(&h).map(|(a, c)| a * c).sum::<f64>()
                        + b;
                    v.tanh()
                })
                .collect();
        }
    }
}

#[test]
fn combination_extremes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let n = 6;
        let logits: Vec<f64> = (0..n).map(|_| rand::Rng::gen_range(&mut rng, -5.0..5.0)).collect();
        let m = softmax(&logits);
        let raw: Vec<f64> = (0..n).map(|_| rand::Rng::gen_range(&mut rng, 0.0..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let b: Vec<f64> = raw.iter().map(|x| x / s).collect();
        let uniform = vec![1.0 / n as f64; n];
        assert!(close(&combined_distribution(&m, &uniform).unwrap(), &m, 1e-12));
        assert!(close(&combined_distribution(&uniform, &b).unwrap(), &b, 1e-12));
        assert!(close(&combined_from_logits(&logits, &uniform).unwrap(), &m, 1e-12));
        assert!(close(&combined_from_logits(&vec![0.0; n], &b).unwrap(), &b, 1e-12));
        let shifted: Vec<f64> = logits.iter().map(|l| l + 17.5).collect();
        assert!(close(
            &combined_from_logits(&shifted, &b).unwrap(),
            &combined_from_logits(&logits, &b).unwrap(),
            1e-12
        ));
        assert!(close(&combined_from_logits(&logits, &b).unwrap(), &combined_distribution(&m, &b).unwrap(), 1e-12));
    }
}

#[test]
fn combination_worked_example_and_zero_support() {
    let third = 1.0 / 3.0;
    let p = combined_distribution(&[third, third, third], &[0.9, 0.1, 0.0]).unwrap();
    assert!(close(&p, &[0.9, 0.1, 0.0], 1e-12));
    assert_eq!(p[2], 0.0);
    let p = combined_from_logits(&[100.0, 0.0, 1000.0], &[0.9, 0.1, 0.0]).unwrap();
    assert_eq!(p[2], 0.0);
    assert!(matches!(combined_distribution(&[0.5, 0.5], &[0.0, 0.0]), Err(Error::AllZeroBackground)));
    assert!(matches!(combined_from_logits(&[0.5, 0.5], &[0.0, 0.0]), Err(Error::AllZeroBackground)));
}

#[test]
fn uniform_loss_on_deterministic_grammar() {
    let (g, vocab, ex) = setup(HELLO, "hello", "s0");
    let n = g.alphabet().len();
    let p = ScorerParams::zeros(small_dims(), n, &vocab);
    let enc = encode(&ex.utterance, &vocab, &p);
    let loss = sequence_loss(&ex, &p, &UniformBackground { n_labels: n }, &enc).unwrap();
    let expect = (ex.ds.len() + 1) as f64 * ((n + 1) as f64).ln();
    assert!((loss - expect).abs() < 1e-12);

    let (g, vocab, ex) = setup(FIG1, "x", "s0 np1 typenp0");
    let n = g.alphabet().len();
    let p = ScorerParams::zeros(small_dims(), n, &vocab);
    let enc = encode(&ex.utterance, &vocab, &p);
    let loss = sequence_loss(&ex, &p, &UniformBackground { n_labels: n }, &enc).unwrap();
    assert!((loss - 4.0 * ((n + 1) as f64).ln()).abs() < 1e-12);
}

#[test]
fn uniform_model_loss_is_background_cross_entropy() {
    let (g, vocab, ex) = setup(FIG1_EXT, "x", "s0 np1 typenp0");
    let n = g.alphabet().len();
    let pick = |t: usize, gold: usize, p_gold: f64| {
        let mut v = vec![(1.0 - p_gold) / n as f64; n + 1];
        v[gold] = p_gold;
        (ex.ds[..t].to_vec(), v)
    };
    let golds = [ex.ds[0].index(), ex.ds[1].index(), ex.ds[2].index(), n];
    let pg = [0.7, 0.4, 0.9, 0.25];
    let table = Table((0..4).map(|t| pick(t, golds[t], pg[t])).collect());
    let p = ScorerParams::zeros(small_dims(), n, &vocab);
    let enc = encode(&ex.utterance, &vocab, &p);
    let loss = sequence_loss(&ex, &p, &table, &enc).unwrap();
    let expect: f64 = pg.iter().map(|x| -x.ln()).sum();
    assert!((loss - expect).abs() < 1e-12);
}

#[test]
fn head_bias_gradient_at_uniform_point() {
    let (g, vocab, ex) = setup(HELLO, "hello", "");
    let n = g.alphabet().len();
    let p = ScorerParams::zeros(small_dims(), n, &vocab);
    let enc = encode(&ex.utterance, &vocab, &p);
    let (_, gr) = grad(&ex, &p, &UniformBackground { n_labels: n }, &enc).unwrap();
    let u = 1.0 / (n + 1) as f64;
    let mut expect = vec![u; n + 1];
    expect[n] -= 1.0;
    assert!(close(&gr.head_b2, &expect, 1e-15));
}

#[test]
fn forced_background_has_zero_gradient() {
    let (g, vocab, ex) = setup(FIG1, "articles", "s0 np1 typenp0");
    let n = g.alphabet().len();
    let one_hot = |t: usize| {
        let mut v = vec![0.0; n + 1];
        v[ex.ds.get(t).map_or(n, |l| l.index())] = 1.0;
        (ex.ds[..t].to_vec(), v)
    };
    let table = Table((0..=ex.ds.len()).map(one_hot).collect());
    let p = random_params(small_dims(), n, &vocab, 11);
    let enc = encode(&ex.utterance, &vocab, &p);
    let (loss, gr) = grad(&ex, &p, &table, &enc).unwrap();
    assert_eq!(loss, 0.0);
    assert!(gr.blocks().iter().all(|(_, b)| b.iter().all(|v| *v == 0.0)));
}

#[test]
fn gold_outside_background_is_reported() {
    let (g, vocab, ex) = setup(FIG1, "x", "s0 np1 typenp0");
    let n = g.alphabet().len();
    let mut v = vec![0.0; n + 1];
    v[ex.ds[0].index()] = 1.0;
    let mut wrong = vec![0.0; n + 1];
    wrong[n] = 1.0;
    let table = Table(vec![(vec![], v), (ex.ds[..1].to_vec(), wrong)]);
    let p = ScorerParams::zeros(small_dims(), n, &vocab);
    let enc = encode(&ex.utterance, &vocab, &p);
    assert!(matches!(sequence_loss(&ex, &p, &table, &enc), Err(Error::GoldExcluded { step: 1, .. })));
}

fn entity_builder(g: &Cfg) -> BackgroundBuilder {
    let lex = EntityLexicon::from_grammar(g, DEFAULT_ENTITY_NONTERMINALS, &DateAliasTable::default());
    BackgroundBuilder::new(g, lex, DateAliasTable::default(), PriorConfig::default())
}

/// Largest relative error between analytic and central-difference
/// gradients over `samples` coordinates. The encoding is recomputed for
/// each perturbation with a freshly seeded generator, so dropout masks are
/// held fixed.
fn finite_difference_error(
    ex: &TrainingExample,
    vocab: &NgramVocab,
    p: &ScorerParams,
    bg: &dyn NextSymbolSource,
    dropout: Option<Dropout>,
    samples: usize,
) -> f64 {
    let enc_for = |q: &ScorerParams| {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        encode_input(&ex.utterance, vocab, q, dropout.map(|d| (d, &mut rng)))
    };
    let (_, analytic) = grad(ex, p, bg, &enc_for(p)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let eps = 1e-4;
    let mut worst: f64 = 0.0;
    let mut coords: Vec<usize> = (0..p.num_params()).collect();
    rand::seq::SliceRandom::shuffle(coords.as_mut_slice(), &mut rng);
    // Coordinates the example never touches have an exactly zero gradient
    // on both sides; sampling them would only pad the count.
    let chosen: Vec<usize> = coords.into_iter().filter(|&i| analytic.get_flat(i) != 0.0).take(samples).collect();
    assert_eq!(chosen.len(), samples);
    for i in chosen {
        let mut q = p.clone();
        let x = p.get_flat(i);
        q.set_flat(i, x + eps);
        let plus = sequence_loss(ex, &q, bg, &enc_for(&q)).unwrap();
        q.set_flat(i, x - eps);
        let minus = sequence_loss(ex, &q, bg, &enc_for(&q)).unwrap();
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic.get_flat(i);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

#[test]
fn gradient_matches_finite_differences() {
    let (g, vocab, ex) = setup(FIG1_EXT, "articles from 1984 titled", "s0 np0 np1 typenp0 cp0 relnp1 entitynp1");
    let n = g.alphabet().len();
    let dims = Dims { embed: 4, hidden: 6, unigram: 4, bigram: 4, head: 6 };
    let p = random_params(dims, n, &vocab, 23);
    let uniform = UniformBackground { n_labels: n };
    assert!(finite_difference_error(&ex, &vocab, &p, &uniform, None, 200) < 1e-3);
    let bg = entity_builder(&g).build(&ex.utterance).unwrap();
    assert!(!bg.detected.is_empty());
    assert!(finite_difference_error(&ex, &vocab, &p, &bg, None, 200) < 1e-3);
    assert!(finite_difference_error(&ex, &vocab, &p, &bg, Some(Dropout::default()), 200) < 1e-3);
}

#[test]
fn training_memorizes_one_example() {
    let g = Cfg::load(FIG1_EXT).unwrap();
    let ex = TrainingExample {
        utterance: tokenize("articles published in 1984"),
        ds: g.alphabet().parse_seq("s0 np0 np1 typenp0 cp0 relnp0 entitynp1").unwrap().0,
    };
    let cfg = TrainConfig { epochs: 150, ..TrainConfig::default() };
    let (model, report) = train(&[ex.clone()], g.alphabet(), &BackgroundBuilder::grammar_only(&g), &cfg).unwrap();
    assert_eq!(report.epoch_losses.len(), 150);
    let last = *report.epoch_losses.last().unwrap();
    assert!(last < 0.1, "{last}");
    assert!(last <= report.epoch_losses[0]);
    assert!(model.params.is_finite());
}

#[test]
fn training_is_deterministic() {
    let g = Cfg::load(FIG1_EXT).unwrap();
    let data: Vec<TrainingExample> = [
        ("articles from 1950", "s0 np0 np1 typenp0 cp0 relnp0 entitynp0"),
        ("articles titled 1984", "s0 np0 np1 typenp0 cp0 relnp1 entitynp1"),
        ("all articles", "s0 np1 typenp0"),
    ]
    .iter()
    .map(|(u, d)| TrainingExample { utterance: tokenize(u), ds: g.alphabet().parse_seq(d).unwrap().0 })
    .collect();
    let cfg = TrainConfig { epochs: 3, dims: small_dims(), ..TrainConfig::default() };
    let b = entity_builder(&g);
    let (m1, r1) = train(&data, g.alphabet(), &b, &cfg).unwrap();
    let (m2, r2) = train(&data, g.alphabet(), &b, &cfg).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(r1, r2);
    let (m3, _) = train(&data, g.alphabet(), &b, &TrainConfig { seed: 43, ..cfg }).unwrap();
    assert_ne!(m1.params, m3.params);
}

#[test]
fn invalid_training_configs() {
    let g = Cfg::load(HELLO).unwrap();
    let b = BackgroundBuilder::grammar_only(&g);
    let ex = TrainingExample { utterance: tokenize("hello"), ds: vec![g.label("s0").unwrap()] };
    assert!(train(&[], g.alphabet(), &b, &TrainConfig::default()).is_err());
    assert!(train(&[ex.clone()], g.alphabet(), &b, &TrainConfig { epochs: 0, ..TrainConfig::default() }).is_err());
    let bad = TrainConfig { dropout: Dropout { unigram: 1.0, bigram: 0.3 }, ..TrainConfig::default() };
    assert!(train(&[ex], g.alphabet(), &b, &bad).is_err());
}

#[test]
fn model_json_round_trip() {
    let (g, vocab, ex) = setup(FIG1, "articles published in 1950", "s0");
    let p = random_params(small_dims(), g.alphabet().len(), &vocab, 2);
    let m = Model::new(g.alphabet(), vocab, p);
    let back = Model::from_json(&m.to_json().unwrap()).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.vocab.unigram_id("1950"), m.vocab.unigram_id("1950"));
    assert_ne!(back.vocab.unigram_id("1950"), OOV);
    assert_eq!(encode(&ex.utterance, &back.vocab, &back.params), encode(&ex.utterance, &m.vocab, &m.params));
    back.check_labels(g.alphabet()).unwrap();
    assert!(back.check_labels(Cfg::load(HELLO).unwrap().alphabet()).is_err());
    let mut json: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
    json["version"] = 99.into();
    assert!(Model::from_json(&json.to_string()).is_err());
}
