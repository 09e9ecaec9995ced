//! The pipeline stages as in-memory functions. The subcommands wrap these
//! with file I/O; `ablate` and the acceptance suite call them directly.

use duoview::captioner::{caption_clips, clip_ref, score_captions, train_text_only, CaptionScores, DecoderParams};
use duoview::corpus::{generate_split, Corpus, WorldConfig};
use duoview::encoders::{build_vocab, EncoderParams, HyperConfig, SubwordVocab};
use duoview::objective::{train, TextViews, TrainReport, TrainingSet};
use duoview::pairing::{build_pairs, ClipLength, ClipTextPair, PairingStats};
use duoview::zeroshot::{retrieval_benchmark, Frozen, RetrievalMetrics};
use duoview::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;

pub struct Split {
    pub world: WorldConfig,
    pub train: Corpus,
    pub test: Corpus,
}

/// Training videos `0..n_videos` and the held-out ones after them.
pub fn generate_data(cfg: &RunConfig, seed: u64) -> Result<Split> {
    let world = cfg.world_for(seed);
    let n = world.n_videos;
    let train = generate_split(&world, 0..n)?;
    let test = generate_split(&world, n..n + cfg.eval.n_test_videos)?;
    Ok(Split { world, train, test })
}

pub fn make_pairs(cfg: &RunConfig, train: &Corpus, length: ClipLength, seed: u64) -> Result<(Vec<ClipTextPair>, PairingStats)> {
    build_pairs(train, &cfg.filter_for(), length, seed, cfg.pairs_per_a)
}

/// One clean description per event: the captioner's training text and the
/// caption references.
pub fn event_descriptions(world: &WorldConfig, corpus: &Corpus) -> Vec<String> {
    corpus
        .videos
        .iter()
        .flat_map(|v| v.event_timeline.iter().map(|e| world.metadata_text(e.class_id, e.target_id)))
        .collect()
}

/// Vocabulary over the training transcripts and event descriptions.
pub fn build_vocabulary(world: &WorldConfig, train: &Corpus, hyper: &HyperConfig) -> Result<SubwordVocab> {
    let descriptions = event_descriptions(world, train);
    let mut texts: Vec<&str> = train.transcripts.iter().map(|s| s.text.as_str()).collect();
    texts.extend(descriptions.iter().map(String::as_str));
    build_vocab(&texts, hyper.vocab_size)
}

pub fn init_params(vocab: &SubwordVocab, feature_dim: usize, hyper: &HyperConfig, seed: u64) -> EncoderParams {
    EncoderParams::init(vocab.len(), feature_dim, hyper, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub struct Trained {
    pub vocab: SubwordVocab,
    pub hyper: HyperConfig,
    /// The seeded initialization, kept as the random-encoder baseline.
    pub init: EncoderParams,
    pub params: EncoderParams,
    pub report: TrainReport,
}

impl Trained {
    pub fn frozen(&self) -> Frozen<'_> {
        self.frozen_with(&self.params)
    }

    pub fn frozen_with<'a>(&'a self, params: &'a EncoderParams) -> Frozen<'a> {
        Frozen {
            params,
            vocab: &self.vocab,
            hyper: &self.hyper,
        }
    }
}

pub fn train_on_pairs(split: &Split, pairs: &[ClipTextPair], hyper: &HyperConfig, seed: u64) -> Result<Trained> {
    let vocab = build_vocabulary(&split.world, &split.train, hyper)?;
    let init = init_params(&vocab, split.world.feature_dim, hyper, seed);
    let set = TrainingSet::prepare(pairs, &split.train, &vocab, hyper)?;
    let (params, report) = train(&set, init.clone(), hyper, seed)?;
    Ok(Trained {
        vocab,
        hyper: hyper.clone(),
        init,
        params,
        report,
    })
}

/// Pairs and trains with the given overrides of views, clip length and
/// frame count.
pub fn train_cell(cfg: &RunConfig, split: &Split, views: TextViews, length: ClipLength, frames: usize, seed: u64) -> Result<Trained> {
    let (pairs, _) = make_pairs(cfg, &split.train, length, seed)?;
    let hyper = HyperConfig {
        views,
        frames,
        ..cfg.hyper.clone()
    };
    train_on_pairs(split, &pairs, &hyper, seed)
}

/// Text-to-clip retrieval of one ablation cell for one seed.
pub fn ablation_cell(cfg: &RunConfig, views: TextViews, length: ClipLength, frames: usize, seed: u64) -> Result<RetrievalMetrics> {
    let split = generate_data(cfg, seed)?;
    let t = train_cell(cfg, &split, views, length, frames, seed)?;
    retrieval_benchmark(&split.test, &split.world, &t.frozen(), &cfg.eval.ks)
}

/// Runs `f` once per seed on scoped threads, results in seed order.
pub fn per_seed<T: Send>(seeds: &[u64], f: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    std::thread::scope(|s| {
        let f = &f;
        let handles: Vec<_> = seeds.iter().map(|&seed| s.spawn(move || f(seed))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("seed worker panicked"))
            .collect()
    })
}

pub struct CaptionRow {
    pub clip_ref: String,
    pub reference: String,
    pub caption: String,
}

/// Captions every held-out event clip through the frozen clip encoder.
pub fn caption_test_events(split: &Split, decoder: &DecoderParams, frozen: &Frozen<'_>, max_len: usize) -> Result<Vec<CaptionRow>> {
    let mut rows = Vec::new();
    for v in &split.test.videos {
        let clips: Vec<(f64, f64)> = v.event_timeline.iter().map(|e| (e.start_s, e.end_s)).collect();
        let captions = caption_clips(v, &clips, decoder, frozen, max_len)?;
        for (e, caption) in v.event_timeline.iter().zip(captions) {
            rows.push(CaptionRow {
                clip_ref: clip_ref(&v.video_id, e.start_s, e.end_s),
                reference: split.world.metadata_text(e.class_id, e.target_id),
                caption,
            });
        }
    }
    Ok(rows)
}

pub fn score_rows(rows: &[CaptionRow]) -> Result<CaptionScores> {
    let items: Vec<(String, Vec<&str>)> = rows
        .iter()
        .map(|r| (r.caption.clone(), vec![r.reference.as_str()]))
        .collect();
    score_captions(&items)
}

/// Text-only decoder training on the training events' descriptions, then
/// captioning of the held-out events.
pub fn caption_benchmark(cfg: &RunConfig, split: &Split, frozen: &Frozen<'_>, seed: u64) -> Result<CaptionScores> {
    let sentences = event_descriptions(&split.world, &split.train);
    let (decoder, _) = train_text_only(&sentences, frozen, &cfg.caption, seed)?;
    score_rows(&caption_test_events(split, &decoder, frozen, cfg.caption.max_len)?)
}
