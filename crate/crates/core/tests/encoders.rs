use duoview::corpus::{generate_world, WorldConfig};
use duoview::encoders::{
    build_vocab, encode_clip, encode_clip_on, encode_text, encode_text_on, load_checkpoint, sample_frames,
    save_checkpoint, tokenize, EncoderParams, HyperConfig, SubwordVocab, CONTINUATION,
};
use duoview::gradcore::{Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_hyper() -> HyperConfig {
    HyperConfig {
        d: 8,
        embed_dim: 6,
        hidden_dim: 10,
        ..HyperConfig::default()
    }
}

fn vocab() -> SubwordVocab {
    build_vocab(&["the hook touches the gallbladder", "jejunostomy with the grasper"], 300).unwrap()
}

#[test]
fn words_are_ranked_by_frequency() {
    let v = build_vocab(&["aa aa bb"], 300).unwrap();
    assert!(v.id("aa").unwrap() < v.id("bb").unwrap());
    let v = build_vocab(&["cc dd dd"], 300).unwrap();
    assert!(v.id("dd").unwrap() < v.id("cc").unwrap());
}

#[test]
fn unseen_words_fall_back_to_characters() {
    let v = vocab();
    let ids = v.encode("cholangiogram");
    assert!(ids.len() > 1);
    assert!(ids.iter().all(|&i| i != v.unk()));
    assert_eq!(v.decode(&ids), "cholangiogram");
}

#[test]
fn vocab_is_deterministic() {
    let texts = ["b a c a b a", "d e f"];
    assert_eq!(build_vocab(&texts, 280).unwrap(), build_vocab(&texts, 280).unwrap());
}

#[test]
fn empty_corpus_is_rejected() {
    assert!(build_vocab::<&str>(&[], 300).is_err());
    assert!(build_vocab(&["   "], 300).is_err());
}

#[test]
fn empty_text_is_all_padding() {
    let v = vocab();
    assert_eq!(tokenize("", &v, 77), vec![v.pad(); 77]);
}

#[test]
fn in_vocab_text_round_trips() {
    let v = vocab();
    let text = "the   hook touches\tthe gallbladder";
    assert_eq!(v.decode(&v.encode(text)), "the hook touches the gallbladder");
}

fn common_prefix(a: &str, b: &str) -> usize {
    a.chars().zip(b.chars()).take_while(|(x, y)| x == y).count()
}

#[test]
fn misspelling_shares_a_prefix_with_the_correct_word() {
    let v = vocab();
    let right: String = v.encode("jejunostomy").iter().map(|&i| v.token(i).unwrap()).collect();
    let wrong_ids = v.encode("jejunstomy");
    assert!(wrong_ids.iter().all(|&i| i != v.unk()));
    let wrong: String = wrong_ids
        .iter()
        .map(|&i| v.token(i).unwrap().trim_start_matches(CONTINUATION))
        .collect();
    // Both words agree on "jejun"; so must their token strings.
    assert!(common_prefix(&right, &wrong) >= 5, "{right} vs {wrong}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]
    #[test]
    fn tokenize_always_yields_n_ids(text in "\\PC{0,120}", n in 1usize..100) {
        let v = vocab();
        let ids = tokenize(&text, &v, n);
        prop_assert_eq!(ids.len(), n);
        prop_assert!(ids.iter().all(|&i| i < v.len()));
    }
}

#[test]
fn frames_are_evenly_spaced() {
    assert_eq!(sample_frames(0.0, 10.0, 1.0, 100, 4).unwrap(), vec![0, 3, 6, 9]);
    assert_eq!(sample_frames(2.0, 2.5, 1.0, 100, 4).unwrap(), vec![2; 4]);
    assert!(sample_frames(2.2, 2.5, 1.0, 100, 4).is_err());
}

proptest! {
    #[test]
    fn sampled_frames_stay_in_the_clip(start in 0.0f64..50.0, len in 0.3f64..10.0, fps in 1.0f64..30.0, t in 1usize..9) {
        let n_frames = 2000;
        if let Ok(ix) = sample_frames(start, start + len, fps, n_frames, t) {
            prop_assert_eq!(ix.len(), t);
            for &i in &ix {
                let time = i as f64 / fps;
                prop_assert!(time >= start - 1e-9 && time < start + len + 1e-9);
            }
            prop_assert!(ix.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}

fn params(seed: u64, feature_dim: usize) -> EncoderParams {
    EncoderParams::init(vocab().len(), feature_dim, &small_hyper(), &mut ChaCha8Rng::seed_from_u64(seed))
}

fn random_frames(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

#[test]
fn identical_frames_pool_to_the_single_frame_encoding() {
    let p = params(1, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let frame = random_frames(&mut rng, 1, 5).remove(0);
    let one = encode_clip(&p, &Tensor::from_rows(&[frame.clone()]).unwrap(), 1).unwrap();
    let four = encode_clip(&p, &Tensor::from_rows(&vec![frame; 4]).unwrap(), 4).unwrap();
    for (a, b) in one.data().iter().zip(four.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn clip_encoding_ignores_frame_order() {
    let p = params(3, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let frames = random_frames(&mut rng, 4, 5);
    let mut shuffled = frames.clone();
    shuffled.rotate_left(1);
    shuffled.swap(0, 2);
    let a = encode_clip(&p, &Tensor::from_rows(&frames).unwrap(), 4).unwrap();
    let b = encode_clip(&p, &Tensor::from_rows(&shuffled).unwrap(), 4).unwrap();
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn two_frame_clip_averages_single_frame_encodings() {
    let p = params(5, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let frames = random_frames(&mut rng, 2, 5);
    let singles = encode_clip(&p, &Tensor::from_rows(&frames).unwrap(), 1).unwrap();
    let pair = encode_clip(&p, &Tensor::from_rows(&frames).unwrap(), 2).unwrap();
    for k in 0..p.d() {
        let avg = 0.5 * (singles.get(0, k) + singles.get(1, k));
        assert!((pair.get(0, k) - avg).abs() < 1e-12);
    }
}

#[test]
fn feature_mismatch_is_rejected() {
    let p = params(7, 5);
    assert!(encode_clip(&p, &Tensor::zeros(&[4, 6]), 4).is_err());
}

#[test]
fn text_encoding_is_deterministic_and_shaped() {
    let p = params(8, 5);
    let v = vocab();
    for n in [1, 7, 77] {
        let row = tokenize("the hook touches the gallbladder", &v, n);
        let out = encode_text(&p, &[row.clone(), row], v.pad(), false).unwrap();
        assert_eq!(out.shape(), &[2, p.d()]);
        assert_eq!(out.row(0), out.row(1));
    }
}

#[test]
fn text_encoding_ignores_token_order() {
    let p = params(9, 5);
    let v = vocab();
    let a = tokenize("the hook touches the gallbladder", &v, 20);
    let b = tokenize("gallbladder the touches hook the", &v, 20);
    for masked in [false, true] {
        let out = encode_text(&p, &[a.clone(), b.clone()], v.pad(), masked).unwrap();
        for (x, y) in out.row(0).iter().zip(out.row(1)) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn pads_count_unless_masked() {
    let p = params(10, 5);
    let v = vocab();
    let short = tokenize("hook", &v, 4);
    let long = tokenize("hook", &v, 12);
    for (masked, same) in [(false, false), (true, true)] {
        let a = encode_text(&p, &[short.clone()], v.pad(), masked).unwrap();
        let b = encode_text(&p, &[long.clone()], v.pad(), masked).unwrap();
        let close = a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() < 1e-12);
        assert_eq!(close, same, "masked = {masked}");
    }
}

#[test]
fn out_of_range_ids_are_rejected() {
    let p = params(11, 5);
    let v = vocab();
    assert!(encode_text(&p, &[vec![v.len(); 4]], v.pad(), false).is_err());
}

#[test]
fn text_gradient_matches_finite_differences() {
    let p = params(12, 5);
    let v = vocab();
    let tokens = vec![tokenize("the hook touches the gallbladder", &v, 10), tokenize("jejunostomy", &v, 10)];
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let weights: Vec<f64> = (0..2 * p.d()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let objective = |params: &EncoderParams| -> f64 {
        let out = encode_text(params, &tokens, v.pad(), false).unwrap();
        out.data().iter().zip(&weights).map(|(a, b)| a * b).sum()
    };

    let mut tape = Tape::new();
    let bound = p.bind(&mut tape, true);
    let latents = encode_text_on(&mut tape, &bound, &tokens, v.pad(), false).unwrap();
    let w = tape.constant(Tensor::new(vec![2, p.d()], weights.clone()).unwrap());
    let prod = tape.mul(latents, w).unwrap();
    let s = tape.sum(prod).unwrap();
    let grads = tape.backward(s).unwrap();
    let analytic = grads.get(bound.tok_embed).unwrap().clone();

    let h = 1e-5;
    let used: Vec<usize> = tokens.iter().flatten().copied().collect();
    let cols = analytic.cols();
    let mut worst = 0.0f64;
    for id in (0..v.len()).filter(|i| used.contains(i) || *i % 50 == 0) {
        for c in 0..cols {
            let j = id * cols + c;
            let mut plus = p.clone();
            plus.tensors_mut()[0].data_mut()[j] += h;
            let mut minus = p.clone();
            minus.tensors_mut()[0].data_mut()[j] -= h;
            let numeric = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let a = analytic.data()[j];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7));
        }
    }
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn both_branches_share_the_latent_size() {
    let world = WorldConfig {
        n_videos: 1,
        ..WorldConfig::default()
    };
    let corpus = generate_world(&world).unwrap();
    let hyper = small_hyper();
    let texts: Vec<&str> = corpus.transcripts.iter().map(|s| s.text.as_str()).collect();
    let v = build_vocab(&texts, hyper.vocab_size).unwrap();
    let p = EncoderParams::init(v.len(), world.feature_dim, &hyper, &mut ChaCha8Rng::seed_from_u64(1));
    let mut tape = Tape::new();
    let b = p.bind(&mut tape, false);
    let frames = tape.constant(Tensor::zeros(&[8, world.feature_dim]));
    let clip = encode_clip_on(&mut tape, &b, frames, 4).unwrap();
    let text = encode_text_on(&mut tape, &b, &[tokenize("hook", &v, 5)], v.pad(), false).unwrap();
    assert_eq!(tape.value(clip).shape(), &[2, hyper.d]);
    assert_eq!(tape.value(text).shape(), &[1, hyper.d]);
}

#[test]
fn checkpoint_round_trips_at_f32_precision() {
    let dir = tempfile::tempdir().unwrap();
    let hyper = small_hyper();
    let p = params(14, 5);
    let v = vocab();
    save_checkpoint(dir.path(), &p, &v, &hyper).unwrap();
    let (q, w, h) = load_checkpoint(dir.path()).unwrap();
    assert_eq!(w, v);
    assert_eq!(h, hyper);
    for (a, b) in p.tensors().iter().zip(q.tensors()) {
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(*x as f32 as f64, *y);
        }
    }
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &params(15, 5), &vocab(), &small_hyper()).unwrap();
    let bin = dir.path().join("params.f32");
    let bytes = std::fs::read(&bin).unwrap();
    std::fs::write(&bin, &bytes[..bytes.len() - 4]).unwrap();
    assert!(load_checkpoint(dir.path()).is_err());
}
