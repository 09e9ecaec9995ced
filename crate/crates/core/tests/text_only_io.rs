//! Own binary so the process-wide frame-read counter sees no other test.

use duoview::captioner::{train_text_only, CaptionConfig};
use duoview::corpus::{frame_file_reads, generate_split, read_corpus, write_corpus, WorldConfig};
use duoview::encoders::{build_vocab, EncoderParams, HyperConfig};
use duoview::zeroshot::Frozen;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn text_only_training_reads_no_frame_files() {
    let world = WorldConfig {
        n_videos: 2,
        ..WorldConfig::default()
    };
    let corpus = generate_split(&world, 0..2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), "train", &corpus).unwrap();
    let loaded = read_corpus(dir.path(), "train").unwrap();
    let after_load = frame_file_reads();
    assert_eq!(after_load, 2);

    let texts: Vec<&str> = loaded.transcripts.iter().map(|s| s.text.as_str()).collect();
    let hyper = HyperConfig::default();
    let vocab = build_vocab(&texts, hyper.vocab_size).unwrap();
    let params = EncoderParams::init(vocab.len(), world.feature_dim, &hyper, &mut ChaCha8Rng::seed_from_u64(0));
    let frozen = Frozen {
        params: &params,
        vocab: &vocab,
        hyper: &hyper,
    };
    let cfg = CaptionConfig {
        steps: 10,
        ..CaptionConfig::default()
    };
    train_text_only(&texts, &frozen, &cfg, 0).unwrap();
    assert_eq!(frame_file_reads(), after_load);
}
