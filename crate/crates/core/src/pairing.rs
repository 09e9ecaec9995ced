//! Clip-text pair construction from the two transcript streams.
//!
//! Pipeline per video: split both streams at stop symbols, filter the `A`
//! stream by confidence, keyword and length and the `W` stream by length and
//! content, then for every kept `A` sentence collect the overlapping `W`
//! sentences, draw a center inside their merged span and grow a clip around
//! it.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Source, TranscriptSentence};
use crate::error::{Error, Result};

/// Function words that do not count as content for the `W` filter.
pub const STOP_WORDS: [&str; 40] = [
    "a", "an", "the", "and", "or", "but", "so", "then", "now", "okay", "ok", "i", "you", "we", "it", "this", "that",
    "is", "are", "was", "be", "to", "of", "in", "on", "at", "for", "with", "as", "here", "there", "just", "very",
    "me", "us", "let", "can", "do", "um", "uh",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub stop_symbols: Vec<char>,
    pub confidence_threshold: f64,
    pub keyword_list: Vec<String>,
    pub min_words: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            stop_symbols: vec!['.', ',', ';', '?', '!'],
            confidence_threshold: 0.4,
            keyword_list: Vec::new(),
            min_words: 3,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            bad.push(format!("confidence_threshold = {} is outside [0, 1]", self.confidence_threshold));
        }
        if self.min_words == 0 {
            bad.push("min_words must be at least 1".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}

/// How clip lengths are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ClipLength {
    /// Uniform on `(min_s, max_s]`.
    Random { min_s: f64, max_s: f64 },
    Fixed { seconds: f64 },
}

impl Default for ClipLength {
    fn default() -> Self {
        ClipLength::Random {
            min_s: 2.0,
            max_s: 10.0,
        }
    }
}

impl ClipLength {
    pub fn max_s(&self) -> f64 {
        match *self {
            ClipLength::Random { max_s, .. } => max_s,
            ClipLength::Fixed { seconds } => seconds,
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ClipLength::Random { min_s, max_s } if max_s > min_s => max_s - rng.random_range(0.0..(max_s - min_s)),
            ClipLength::Random { max_s, .. } => max_s,
            ClipLength::Fixed { seconds } => seconds,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ClipLength::Random { min_s, max_s } => min_s > 0.0 && max_s >= min_s,
            ClipLength::Fixed { seconds } => seconds > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(vec![format!("invalid clip length mode {self:?}")]))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipTextPair {
    pub video_id: String,
    pub clip_start_s: f64,
    pub clip_end_s: f64,
    pub center_s: f64,
    pub a_sentence: TranscriptSentence,
    pub w_sentences: Vec<TranscriptSentence>,
}

impl ClipTextPair {
    pub fn clip_len(&self) -> f64 {
        self.clip_end_s - self.clip_start_s
    }

    /// Checks every structural invariant of a pair against the owning
    /// video's duration and the maximum clip length.
    pub fn check(&self, duration_s: f64, max_clip_s: f64) -> std::result::Result<(), String> {
        let len = self.clip_len();
        if !(len > 0.0 && len <= max_clip_s + 1e-9) {
            return Err(format!("clip length {len} outside (0, {max_clip_s}]"));
        }
        if self.clip_start_s < 0.0 || self.clip_end_s > duration_s {
            return Err(format!(
                "clip [{}, {}] outside [0, {duration_s}]",
                self.clip_start_s, self.clip_end_s
            ));
        }
        if self.w_sentences.is_empty() {
            return Err("no W sentences".into());
        }
        let (lo, hi) = merged_span(&self.w_sentences);
        if self.center_s < lo || self.center_s > hi {
            return Err(format!("center {} outside merged W span [{lo}, {hi}]", self.center_s));
        }
        for w in &self.w_sentences {
            if intersection(&self.a_sentence, w) <= 0.0 {
                return Err(format!("W sentence {:?} does not overlap the A sentence", w.text));
            }
        }
        Ok(())
    }
}

fn intersection(a: &TranscriptSentence, b: &TranscriptSentence) -> f64 {
    a.end_s.min(b.end_s) - a.start_s.max(b.start_s)
}

fn merged_span(ws: &[TranscriptSentence]) -> (f64, f64) {
    let lo = ws.iter().map(|w| w.start_s).fold(f64::INFINITY, f64::min);
    let hi = ws.iter().map(|w| w.end_s).fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

fn normalize_word(w: &str) -> String {
    w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

/// Splits each sentence at stop symbols. Sub-sentence timestamps are
/// interpolated by word count and `A` confidences follow their words. Words
/// that consist only of stop symbols are dropped together with their
/// confidence. Sentences without stop symbols are returned unchanged.
pub fn segment_sentences(stream: &[TranscriptSentence], cfg: &FilterConfig) -> Vec<TranscriptSentence> {
    let mut out = Vec::new();
    for s in stream {
        if !s.text.contains(|c| cfg.stop_symbols.contains(&c)) {
            out.push(s.clone());
            continue;
        }
        let conf = s.word_confidences.as_deref();
        let mut pieces: Vec<(Vec<String>, Vec<f64>)> = vec![(vec![], vec![])];
        for (k, raw) in s.text.split_whitespace().enumerate() {
            let word: String = raw.chars().filter(|c| !cfg.stop_symbols.contains(c)).collect();
            if !word.is_empty() {
                let piece = pieces.last_mut().expect("non-empty");
                piece.0.push(word);
                if let Some(c) = conf.and_then(|c| c.get(k)) {
                    piece.1.push(*c);
                }
            }
            if raw.contains(|c| cfg.stop_symbols.contains(&c)) {
                pieces.push((vec![], vec![]));
            }
        }
        pieces.retain(|p| !p.0.is_empty());
        let total: usize = pieces.iter().map(|p| p.0.len()).sum();
        if total == 0 {
            continue;
        }
        let span = s.end_s - s.start_s;
        let mut before = 0usize;
        for (words, confs) in pieces {
            let start = s.start_s + span * before as f64 / total as f64;
            before += words.len();
            let end = if before == total {
                s.end_s
            } else {
                s.start_s + span * before as f64 / total as f64
            };
            out.push(TranscriptSentence {
                video_id: s.video_id.clone(),
                source: s.source,
                start_s: start,
                end_s: end,
                text: words.join(" "),
                word_confidences: s.word_confidences.as_ref().map(|_| confs),
            });
        }
    }
    out
}

fn mean_confidence(s: &TranscriptSentence) -> Result<f64> {
    let c = s
        .word_confidences
        .as_ref()
        .ok_or_else(|| Error::contract(format!("A sentence {:?} has no word confidences", s.text)))?;
    Ok(if c.is_empty() {
        0.0
    } else {
        c.iter().sum::<f64>() / c.len() as f64
    })
}

fn has_keyword(s: &TranscriptSentence, cfg: &FilterConfig) -> bool {
    s.text
        .split_whitespace()
        .map(normalize_word)
        .any(|w| cfg.keyword_list.iter().any(|k| k.to_lowercase() == w))
}

fn has_content_word(s: &TranscriptSentence) -> bool {
    s.text
        .split_whitespace()
        .map(normalize_word)
        .any(|w| !w.is_empty() && !STOP_WORDS.contains(&w.as_str()))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterCounts {
    pub input: usize,
    pub kept: usize,
    pub failed_length: usize,
    pub failed_confidence: usize,
    pub failed_keyword: usize,
    pub failed_content: usize,
}

fn filter_a_counted(sentences: &[TranscriptSentence], cfg: &FilterConfig) -> Result<(Vec<TranscriptSentence>, FilterCounts)> {
    let mut counts = FilterCounts {
        input: sentences.len(),
        ..Default::default()
    };
    let mut kept = Vec::new();
    for s in sentences {
        if s.source != Source::A {
            return Err(Error::contract(format!("filter_a received a {:?} sentence", s.source)));
        }
        let long = s.word_count() >= cfg.min_words;
        let confident = mean_confidence(s)? >= cfg.confidence_threshold;
        let keyword = has_keyword(s, cfg);
        counts.failed_length += usize::from(!long);
        counts.failed_confidence += usize::from(!confident);
        counts.failed_keyword += usize::from(!keyword);
        if long && confident && keyword {
            kept.push(s.clone());
        }
    }
    counts.kept = kept.len();
    Ok((kept, counts))
}

fn filter_w_counted(sentences: &[TranscriptSentence], cfg: &FilterConfig) -> Result<(Vec<TranscriptSentence>, FilterCounts)> {
    let mut counts = FilterCounts {
        input: sentences.len(),
        ..Default::default()
    };
    let mut kept = Vec::new();
    for s in sentences {
        if s.source != Source::W {
            return Err(Error::contract(format!("filter_w received a {:?} sentence", s.source)));
        }
        let long = s.word_count() >= cfg.min_words;
        let content = has_content_word(s);
        counts.failed_length += usize::from(!long);
        counts.failed_content += usize::from(!content);
        if long && content {
            kept.push(s.clone());
        }
    }
    counts.kept = kept.len();
    Ok((kept, counts))
}

/// Keeps `A` sentences with mean confidence at or above the threshold, at
/// least one keyword and at least `min_words` words.
pub fn filter_a(sentences: &[TranscriptSentence], cfg: &FilterConfig) -> Result<Vec<TranscriptSentence>> {
    filter_a_counted(sentences, cfg).map(|(k, _)| k)
}

/// Keeps `W` sentences with at least `min_words` words and one content word.
pub fn filter_w(sentences: &[TranscriptSentence], cfg: &FilterConfig) -> Result<Vec<TranscriptSentence>> {
    filter_w_counted(sentences, cfg).map(|(k, _)| k)
}

/// All sentences of `w_pool` whose intersection with `a` has positive length,
/// in pool order.
pub fn find_overlaps(a: &TranscriptSentence, w_pool: &[TranscriptSentence]) -> Vec<TranscriptSentence> {
    w_pool
        .iter()
        .filter(|w| w.video_id == a.video_id && intersection(a, w) > 0.0)
        .cloned()
        .collect()
}

/// Draws a center uniformly inside the merged span of `w_overlaps` and grows
/// a clip of the configured length around it, clamped to the video.
pub fn sample_clip<R: Rng + ?Sized>(
    a: &TranscriptSentence,
    w_overlaps: &[TranscriptSentence],
    rng: &mut R,
    length: ClipLength,
    video_duration_s: f64,
) -> Result<ClipTextPair> {
    if w_overlaps.is_empty() {
        return Err(Error::contract(format!("no W sentence overlaps {:?}", a.text)));
    }
    let (lo, hi) = merged_span(w_overlaps);
    let center = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let len = length.draw(rng);
    let start = (center - len / 2.0).max(0.0);
    let end = (center + len / 2.0).min(video_duration_s);
    Ok(ClipTextPair {
        video_id: a.video_id.clone(),
        clip_start_s: start,
        clip_end_s: end,
        center_s: center,
        a_sentence: a.clone(),
        w_sentences: w_overlaps.to_vec(),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairingStats {
    pub a_raw: usize,
    pub w_raw: usize,
    pub a_filter: FilterCounts,
    pub w_filter: FilterCounts,
    pub a_without_overlap: usize,
    pub pairs: usize,
}

/// Full pairing pipeline. Videos are processed in id order, each with its own
/// ChaCha stream derived from `seed`; pairs are ordered by video id and `A`
/// start time.
pub fn build_pairs(
    corpus: &Corpus,
    cfg: &FilterConfig,
    length: ClipLength,
    seed: u64,
    pairs_per_a: usize,
) -> Result<(Vec<ClipTextPair>, PairingStats)> {
    cfg.validate()?;
    length.validate()?;
    let mut by_video: BTreeMap<&str, (Vec<TranscriptSentence>, Vec<TranscriptSentence>)> = BTreeMap::new();
    for s in &corpus.transcripts {
        let entry = by_video.entry(s.video_id.as_str()).or_default();
        match s.source {
            Source::A => entry.0.push(s.clone()),
            Source::W => entry.1.push(s.clone()),
        }
    }
    let mut stats = PairingStats::default();
    let mut pairs = Vec::new();
    for (vi, video) in corpus.videos.iter().enumerate() {
        let Some((a_raw, w_raw)) = by_video.get_mut(video.video_id.as_str()) else {
            continue;
        };
        let by_start = |x: &TranscriptSentence, y: &TranscriptSentence| x.start_s.total_cmp(&y.start_s);
        a_raw.sort_by(by_start);
        w_raw.sort_by(by_start);
        stats.a_raw += a_raw.len();
        stats.w_raw += w_raw.len();

        let (a_kept, ac) = filter_a_counted(&segment_sentences(a_raw, cfg), cfg)?;
        let (w_kept, wc) = filter_w_counted(&segment_sentences(w_raw, cfg), cfg)?;
        accumulate(&mut stats.a_filter, ac);
        accumulate(&mut stats.w_filter, wc);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(vi as u64);
        for a in &a_kept {
            let overlaps = find_overlaps(a, &w_kept);
            if overlaps.is_empty() {
                stats.a_without_overlap += 1;
                continue;
            }
            for _ in 0..pairs_per_a {
                pairs.push(sample_clip(a, &overlaps, &mut rng, length, video.duration_s)?);
            }
        }
    }
    pairs.sort_by(|x, y| {
        x.video_id
            .cmp(&y.video_id)
            .then(x.a_sentence.start_s.total_cmp(&y.a_sentence.start_s))
    });
    stats.pairs = pairs.len();
    Ok((pairs, stats))
}

fn accumulate(total: &mut FilterCounts, c: FilterCounts) {
    total.input += c.input;
    total.kept += c.kept;
    total.failed_length += c.failed_length;
    total.failed_confidence += c.failed_confidence;
    total.failed_keyword += c.failed_keyword;
    total.failed_content += c.failed_content;
}

pub fn write_pairs(path: &Path, pairs: &[ClipTextPair]) -> Result<()> {
    crate::corpus::write_jsonl(path, pairs)
}

pub fn read_pairs(path: &Path) -> Result<Vec<ClipTextPair>> {
    crate::corpus::read_jsonl(path)
}
