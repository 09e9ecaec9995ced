use duoview::captioner::{
    bleu_n, caption_metrics_csv, clip_ref, generate, load_decoder, meteor_basic, parse_clip_ref, rouge_l,
    save_decoder, score_captions, train_text_only, words, CaptionConfig,
};
use duoview::encoders::{build_vocab, EncoderParams, HyperConfig, SubwordVocab};
use duoview::zeroshot::Frozen;
use proptest::prelude::*;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const WORDS: [&str; 24] = [
    "grasper", "hook", "clipper", "scissors", "irrigator", "bipolar", "retract", "dissect", "clip", "cut", "coagulate",
    "aspirate", "gallbladder", "duct", "artery", "liver", "fluid", "omentum", "plate", "blood", "left", "right",
    "upper", "lower",
];

/// Short sentences with pairwise distinct word sets, so a bag-of-tokens
/// text encoder gives each one its own latent.
fn distinct_sentences(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    while out.len() < n {
        let len = rng.random_range(2..=4);
        let mut picked: Vec<&str> = WORDS.choose_multiple(&mut rng, len).copied().collect();
        let mut key = picked.clone();
        key.sort_unstable();
        if seen.insert(key) {
            picked.shuffle(&mut rng);
            out.push(picked.join(" "));
        }
    }
    out
}

struct Fixture {
    vocab: SubwordVocab,
    params: EncoderParams,
    hyper: HyperConfig,
}

impl Fixture {
    fn new(sentences: &[String], seed: u64) -> Self {
        // Masked pooling: with 77 slots and pads counted, short sentences
        // would get near-identical latents from an untrained encoder.
        let hyper = HyperConfig {
            masked_mean: true,
            ..HyperConfig::default()
        };
        let vocab = build_vocab(sentences, hyper.vocab_size).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = EncoderParams::init(vocab.len(), 8, &hyper, &mut rng);
        Self { vocab, params, hyper }
    }

    fn frozen(&self) -> Frozen<'_> {
        Frozen {
            params: &self.params,
            vocab: &self.vocab,
            hyper: &self.hyper,
        }
    }
}

#[test]
fn noise_free_decoder_memorizes_short_sentences() {
    let sentences = distinct_sentences(50, 0);
    let fx = Fixture::new(&sentences, 0);
    let fz = fx.frozen();
    let cfg = CaptionConfig {
        noise_std: 0.0,
        steps: 1500,
        ..CaptionConfig::default()
    };
    let (dec, _) = train_text_only(&sentences, &fz, &cfg, 0).unwrap();
    let latents = fz.texts(&sentences).unwrap();
    let exact = sentences
        .iter()
        .enumerate()
        .filter(|(i, s)| generate(latents.row(*i), &dec, &fz, cfg.max_len).unwrap() == **s)
        .count();
    assert!(exact >= 45, "only {exact}/50 reconstructed");
}

#[test]
fn training_loss_falls_by_step_500() {
    let sentences = distinct_sentences(40, 1);
    for seed in 0..5 {
        let fx = Fixture::new(&sentences, seed);
        let cfg = CaptionConfig {
            steps: 501,
            ..CaptionConfig::default()
        };
        let (_, rep) = train_text_only(&sentences, &fx.frozen(), &cfg, seed).unwrap();
        assert!(rep.losses[500] < rep.losses[0], "seed {seed}: {} -> {}", rep.losses[0], rep.losses[500]);
    }
}

#[test]
fn same_seed_gives_identical_decoder_and_captions() {
    let sentences = distinct_sentences(20, 2);
    let fx = Fixture::new(&sentences, 2);
    let fz = fx.frozen();
    let cfg = CaptionConfig {
        steps: 40,
        ..CaptionConfig::default()
    };
    let (a, ra) = train_text_only(&sentences, &fz, &cfg, 9).unwrap();
    let (b, rb) = train_text_only(&sentences, &fz, &cfg, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
    let (c, _) = train_text_only(&sentences, &fz, &cfg, 10).unwrap();
    assert_ne!(a, c);

    let latent = fz.texts(&sentences[..1]).unwrap();
    let first = generate(latent.row(0), &a, &fz, 12).unwrap();
    assert_eq!(first, generate(latent.row(0), &a, &fz, 12).unwrap());
}

#[test]
fn generate_respects_max_len_on_random_latents() {
    let sentences = distinct_sentences(20, 3);
    let fx = Fixture::new(&sentences, 3);
    let fz = fx.frozen();
    let cfg = CaptionConfig {
        steps: 20,
        ..CaptionConfig::default()
    };
    let (dec, _) = train_text_only(&sentences, &fz, &cfg, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let max_len = rng.random_range(0..8);
        let latent: Vec<f64> = (0..dec.d()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let caption = generate(&latent, &dec, &fz, max_len).unwrap();
        // Each generated id decodes to at most one word, pieces join into words.
        assert!(fx.vocab.encode(&caption).len() <= max_len, "{caption:?} exceeds {max_len}");
    }
    assert!(generate(&[1.0, 2.0], &dec, &fz, 4).is_err());
}

#[test]
fn training_rejects_bad_config_and_empty_text() {
    let sentences = distinct_sentences(5, 4);
    let fx = Fixture::new(&sentences, 4);
    let bad = CaptionConfig {
        hidden_dim: 0,
        ..CaptionConfig::default()
    };
    assert!(train_text_only(&sentences, &fx.frozen(), &bad, 0).is_err());
    let empty: Vec<String> = vec![String::new(), "   ".into()];
    assert!(train_text_only(&empty, &fx.frozen(), &CaptionConfig::default(), 0).is_err());
}

#[test]
fn decoder_file_round_trip() {
    let sentences = distinct_sentences(10, 5);
    let fx = Fixture::new(&sentences, 5);
    let cfg = CaptionConfig {
        steps: 5,
        ..CaptionConfig::default()
    };
    let (dec, _) = train_text_only(&sentences, &fx.frozen(), &cfg, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("decoder.json");
    save_decoder(&path, &dec, &cfg).unwrap();
    let (back, back_cfg) = load_decoder(&path).unwrap();
    assert_eq!(back, dec);
    assert_eq!(back_cfg, cfg);
    std::fs::write(&path, b"{\"config\": {}, \"params\": []}").unwrap();
    assert!(load_decoder(&path).is_err());
}

#[test]
fn clip_refs_round_trip() {
    let r = clip_ref("vid007", 12.0, 20.5);
    assert_eq!(r, "vid007@12.000-20.500");
    assert_eq!(parse_clip_ref(&r).unwrap(), ("vid007".to_string(), 12.0, 20.5));
    assert!(parse_clip_ref("vid007").is_err());
}

#[test]
fn bleu_identity_and_disjoint() {
    let s = "the grasper holds the gallbladder";
    for n in 1..=4 {
        assert_eq!(bleu_n(s, &[s], n).unwrap(), 1.0);
        assert_eq!(bleu_n("hook cuts", &["clipper clips duct"], n).unwrap(), 0.0);
    }
    assert_eq!(bleu_n("", &[s], 1).unwrap(), 0.0);
    assert!(bleu_n(s, &[s], 0).is_err());
    assert!(bleu_n(s, &[s], 5).is_err());
}

#[test]
fn bleu_clips_repeated_words() {
    let b = bleu_n("the the the", &["the cat"], 1).unwrap();
    assert!((b - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn bleu_brevity_penalty_by_hand() {
    // 2 of 2 unigrams match; closest reference length 4 gives exp(1 - 4/2).
    let b = bleu_n("the cat", &["the cat sat down"], 1).unwrap();
    assert!((b - (-1.0f64).exp()).abs() < 1e-12);
    // Unigram precision 2/3, bigram 1/2, no penalty against the length-3 reference.
    let b2 = bleu_n("a b d", &["a b c", "x y z w v"], 2).unwrap();
    assert!((b2 - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
}

fn sentence(rng: &mut ChaCha8Rng) -> String {
    let len = rng.random_range(1..8);
    (0..len).map(|_| *WORDS[..8].choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

proptest! {
    #[test]
    fn bleu_ignores_reference_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cand = sentence(&mut rng);
        let mut refs: Vec<String> = (0..4).map(|_| sentence(&mut rng)).collect();
        let before: Vec<f64> = (1..=4).map(|n| bleu_n(&cand, &refs, n).unwrap()).collect();
        refs.shuffle(&mut rng);
        let after: Vec<f64> = (1..=4).map(|n| bleu_n(&cand, &refs, n).unwrap()).collect();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn caption_metrics_stay_in_unit_interval(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, r) = (sentence(&mut rng), sentence(&mut rng));
        for n in 1..=4 {
            let b = bleu_n(&c, &[&r], n).unwrap();
            prop_assert!((0.0..=1.0).contains(&b));
            prop_assert!((bleu_n(&c, &[&c], n).unwrap() - 1.0).abs() < 1e-12 || words(&c).len() < n);
        }
        for v in [rouge_l(&c, &r), meteor_basic(&c, &r)] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!((rouge_l(&c, &c) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rouge_matches_dp_oracle(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, r) = (sentence(&mut rng), sentence(&mut rng));
        prop_assert!((rouge_l(&c, &r) - rouge_oracle(&c, &r)).abs() < 1e-12);
    }
}

/// LCS by memoized recursion over suffixes, then the F-measure.
fn rouge_oracle(c: &str, r: &str) -> f64 {
    fn lcs(a: &[&str], b: &[&str], memo: &mut std::collections::HashMap<(usize, usize), usize>) -> usize {
        if a.is_empty() || b.is_empty() {
            return 0;
        }
        if let Some(&v) = memo.get(&(a.len(), b.len())) {
            return v;
        }
        let v = if a[0] == b[0] {
            1 + lcs(&a[1..], &b[1..], memo)
        } else {
            lcs(&a[1..], b, memo).max(lcs(a, &b[1..], memo))
        };
        memo.insert((a.len(), b.len()), v);
        v
    }
    let a: Vec<&str> = c.split_whitespace().collect();
    let b: Vec<&str> = r.split_whitespace().collect();
    let l = lcs(&a, &b, &mut Default::default()) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let (p, rec) = (l / a.len() as f64, l / b.len() as f64);
    let beta2 = 1.44;
    (1.0 + beta2) * p * rec / (rec + beta2 * p)
}

#[test]
fn rouge_cases() {
    assert_eq!(rouge_l("a b c d", "a b c d"), 1.0);
    assert_eq!(rouge_l("a b", "c d"), 0.0);
    assert_eq!(rouge_l("", ""), 0.0);
    // LCS 3: precision 3/4, recall 3/3.
    let expected = 2.44 * 0.75 / (1.0 + 1.44 * 0.75);
    assert!((rouge_l("a b c d", "a c d") - expected).abs() < 1e-12);
    assert!((rouge_l("a b c d", "a c d") - rouge_oracle("a b c d", "a c d")).abs() < 1e-12);
}

#[test]
fn meteor_cases() {
    let long = "the clipper applies two clips to the cystic duct before cutting";
    let m = meteor_basic(long, long);
    assert!(m > 0.99 && m < 1.0, "{m}");
    assert_eq!(meteor_basic("hook dissects", "clipper clips"), 0.0);
    assert_eq!(meteor_basic("", "clip"), 0.0);
    // Stemming aligns all three words in one chunk: Fmean 1, penalty 0.5 / 27.
    let s = meteor_basic("clipping the duct", "clip the ducts");
    assert!((s - (1.0 - 0.5 / 27.0)).abs() < 1e-12, "{s}");
    // Two exact matches in swapped order: P = 1, R = 1/2, two chunks.
    let fmean = 10.0 * 0.5 / (0.5 + 9.0);
    let swapped = meteor_basic("b a", "a x b y");
    assert!((swapped - fmean * (1.0 - 0.5)).abs() < 1e-12, "{swapped}");
}

#[test]
fn corpus_scores_are_means() {
    let items = vec![
        ("the cat".to_string(), vec!["the cat"]),
        ("dog".to_string(), vec!["the cat"]),
    ];
    let s = score_captions(&items).unwrap();
    assert_eq!(s.n, 2);
    assert!((s.bleu[0] - 0.5).abs() < 1e-12);
    assert!((s.rouge_l - 0.5).abs() < 1e-12);
    let csv = caption_metrics_csv(&s);
    assert!(csv.starts_with("bleu1,bleu2,bleu3,bleu4,meteor,rouge_l,n,meteor_matching\n"));
    assert!(csv.contains("exact+stem"));
    let none: Vec<(String, Vec<&str>)> = vec![];
    assert!(score_captions(&none).is_err());
}
