use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Corpus, EventSpan, Source, TranscriptSentence, VideoRecord, WorldConfig};
use crate::error::Result;

const A_LEADS: [&str; 5] = ["okay", "so", "now", "and", "here"];
const A_TAILS: [&str; 4] = ["there", "again", "here", "slowly"];
const A_CHATTER: [&str; 5] = [
    "you can see this",
    "okay so now",
    "let me just show",
    "and then we go",
    "this is nice",
];
const W_LEADS: [&str; 4] = ["now", "so", "here", "next"];
const W_TAILS: [&str; 4] = ["carefully", "slowly", "again", "gently"];
const W_CHATTER: [&str; 5] = [
    "this gives us a very nice view of the field.",
    "let me show you the anatomy first.",
    "you can see how clean the plane is.",
    "we keep the camera steady here.",
    "it is important to stay close to the wall.",
];

fn round_ms(t: f64) -> f64 {
    (t * 1000.0).round() / 1000.0
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Class and target prototype vectors shared by every video of a world.
pub fn prototypes(config: &WorldConfig) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.feature_dim;
    let classes = (0..config.n_event_classes)
        .map(|_| (0..d).map(|_| normal(&mut rng)).collect())
        .collect();
    let targets = (0..config.targets.len())
        .map(|_| (0..d).map(|_| config.target_scale * normal(&mut rng)).collect())
        .collect();
    (classes, targets)
}

/// Generates videos `0..n_videos`.
pub fn generate_world(config: &WorldConfig) -> Result<Corpus> {
    generate_split(config, 0..config.n_videos)
}

/// Generates the videos whose indices fall in `range`. Each video draws from
/// its own ChaCha stream, so any index range is reproducible on its own.
pub fn generate_split(config: &WorldConfig, range: std::ops::Range<usize>) -> Result<Corpus> {
    config.validate()?;
    let (class_protos, target_protos) = prototypes(config);
    let mut corpus = Corpus::default();
    for index in range {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(index as u64 + 1);
        let (video, sentences) = generate_video(config, index, &class_protos, &target_protos, &mut rng);
        corpus.videos.push(video);
        corpus.transcripts.extend(sentences);
    }
    Ok(corpus)
}

fn timeline(config: &WorldConfig, rng: &mut ChaCha8Rng) -> Vec<EventSpan> {
    let mut events: Vec<EventSpan> = Vec::new();
    let mut t = 0.0;
    while t < config.duration_s {
        let len = rng.random_range(config.event_min_s..=config.event_max_s);
        let mut end = round_ms((t + len).min(config.duration_s));
        if config.duration_s - end < config.event_min_s / 2.0 {
            end = config.duration_s;
        }
        let mut class_id = rng.random_range(0..config.n_event_classes);
        if let Some(prev) = events.last() {
            if class_id == prev.class_id {
                class_id = (class_id + 1 + rng.random_range(0..config.n_event_classes - 1)) % config.n_event_classes;
            }
        }
        let target_id = rng.random_range(0..config.targets.len());
        events.push(EventSpan {
            class_id,
            target_id,
            start_s: t,
            end_s: end,
        });
        t = end;
    }
    events
}

fn generate_video(
    config: &WorldConfig,
    index: usize,
    class_protos: &[Vec<f64>],
    target_protos: &[Vec<f64>],
    rng: &mut ChaCha8Rng,
) -> (VideoRecord, Vec<TranscriptSentence>) {
    let video_id = format!("vid{index:04}");
    let events = timeline(config, rng);
    let n_frames = (config.fps * config.duration_s).round() as usize;
    let d = config.feature_dim;

    let rho = if config.frame_noise_corr_s > 0.0 {
        (-1.0 / (config.fps * config.frame_noise_corr_s)).exp()
    } else {
        0.0
    };
    let innovation = (1.0 - rho * rho).sqrt();
    let mut noise: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
    let mut features = Vec::with_capacity(n_frames * d);
    for i in 0..n_frames {
        if i > 0 {
            for n in noise.iter_mut() {
                *n = rho * *n + innovation * normal(rng);
            }
        }
        let t = i as f64 / config.fps;
        let e = events
            .iter()
            .find(|e| e.start_s <= t && t < e.end_s)
            .unwrap_or_else(|| events.last().expect("non-empty timeline"));
        for j in 0..d {
            let v = class_protos[e.class_id][j] + target_protos[e.target_id][j] + config.frame_noise_std * noise[j];
            features.push(v as f32);
        }
    }

    let mut sentences = Vec::new();
    for e in &events {
        narrate_fluent(config, &video_id, e, rng, &mut sentences);
        narrate_terse(config, &video_id, e, rng, &mut sentences);
    }
    sentences.sort_by(|a, b| {
        (a.source as u8, a.start_s)
            .partial_cmp(&(b.source as u8, b.start_s))
            .expect("finite timestamps")
    });

    let video = VideoRecord {
        video_id,
        duration_s: config.duration_s,
        fps: config.fps,
        n_frames,
        feature_dim: d,
        frame_features: features,
        event_timeline: events,
    };
    (video, sentences)
}

/// Dense `W` narration: the event span is split in one or two sentences,
/// shifted by a common lag. The first sentence describes the event; the
/// second, when present, is generic commentary.
fn narrate_fluent(
    config: &WorldConfig,
    video_id: &str,
    e: &EventSpan,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<TranscriptSentence>,
) {
    let lag = if config.w_lag_s > 0.0 {
        rng.random_range(-config.w_lag_s..=config.w_lag_s)
    } else {
        0.0
    };
    let span = e.end_s - e.start_s;
    let cut = if span > 7.0 {
        e.start_s + span * rng.random_range(0.55..0.75)
    } else {
        e.end_s
    };
    let clamp = |t: f64| round_ms((t + lag).clamp(0.0, config.duration_s));

    let keyword = &config.keyword_vocab[e.class_id];
    let spoken = if rng.random_bool(config.w_keyword_corruption) {
        corrupt_keyword(keyword, rng)
    } else {
        keyword.clone()
    };
    let mut text = String::new();
    if rng.random_bool(0.4) {
        text.push_str(W_LEADS.choose(rng).expect("non-empty"));
        text.push_str(", ");
    }
    text.push_str(&format!(
        "i use the {spoken} to {} the {}",
        config.verb(e.class_id),
        config.targets[e.target_id]
    ));
    if rng.random_bool(0.3) {
        text.push(' ');
        text.push_str(W_TAILS.choose(rng).expect("non-empty"));
    }
    text.push('.');

    let (s0, e0) = (clamp(e.start_s), clamp(cut));
    if e0 > s0 {
        out.push(TranscriptSentence {
            video_id: video_id.to_string(),
            source: Source::W,
            start_s: s0,
            end_s: e0,
            text,
            word_confidences: None,
        });
    }
    if cut < e.end_s {
        let (s1, e1) = (clamp(cut), clamp(e.end_s));
        if e1 > s1 {
            out.push(TranscriptSentence {
                video_id: video_id.to_string(),
                source: Source::W,
                start_s: s1,
                end_s: e1,
                text: W_CHATTER.choose(rng).expect("non-empty").to_string(),
                word_confidences: None,
            });
        }
    }
}

/// Sparse `A` narration: one short sentence per event with the keyword spelled
/// correctly, often truncated before the target, plus occasional keyword-free
/// chatter. Mumbled sentences carry low confidences throughout.
fn narrate_terse(
    config: &WorldConfig,
    video_id: &str,
    e: &EventSpan,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<TranscriptSentence>,
) {
    let span = e.end_s - e.start_s;
    let len = rng.random_range(1.5..3.0f64).min(span * 0.8);
    let start = e.start_s + rng.random_range(0.0..=(span - len));
    let mumbled = rng.random_bool(config.a_mumble);
    let keyword = config.keyword_vocab[e.class_id].as_str();

    let mut words: Vec<(String, bool)> = Vec::new();
    if rng.random_bool(0.5) {
        let lead = A_LEADS.choose(rng).expect("non-empty");
        let lead = if rng.random_bool(0.3) {
            format!("{lead},")
        } else {
            lead.to_string()
        };
        words.push((lead, false));
    }
    words.push(("the".into(), false));
    words.push((keyword.to_string(), true));
    let tail = [
        (config.verb(e.class_id).to_string(), false),
        ("the".to_string(), false),
        (config.targets[e.target_id].clone(), false),
    ];
    if rng.random_bool(config.a_fragmentation) {
        let keep = rng.random_range(0..2);
        words.extend(tail.into_iter().take(keep));
    } else {
        words.extend(tail);
        if rng.random_bool(0.3) {
            words.push((A_TAILS.choose(rng).expect("non-empty").to_string(), false));
        }
    }
    out.push(terse_sentence(config, video_id, start, start + len, words, mumbled, rng));

    // Keyword-free chatter in the remaining part of the event.
    let rest = e.end_s - (start + len);
    if rest > 1.5 && rng.random_bool(0.35) {
        let cs = start + len + rng.random_range(0.0..(rest - 1.0));
        let ce = (cs + rng.random_range(1.0..2.0f64)).min(e.end_s);
        let words = A_CHATTER
            .choose(rng)
            .expect("non-empty")
            .split(' ')
            .map(|w| (w.to_string(), false))
            .collect();
        out.push(terse_sentence(config, video_id, cs, ce, words, false, rng));
    }
}

fn terse_sentence(
    config: &WorldConfig,
    video_id: &str,
    start: f64,
    end: f64,
    words: Vec<(String, bool)>,
    mumbled: bool,
    rng: &mut ChaCha8Rng,
) -> TranscriptSentence {
    let confidences = words
        .iter()
        .map(|(_, key)| {
            let centre = match (mumbled, key) {
                (true, _) => 0.25,
                (false, true) => 0.9,
                (false, false) => 0.65,
            };
            let c = centre + config.a_confidence_noise * normal(rng);
            (c.clamp(0.0, 1.0) * 1000.0).round() / 1000.0
        })
        .collect();
    let text = words.into_iter().map(|(w, _)| w).collect::<Vec<_>>().join(" ");
    TranscriptSentence {
        video_id: video_id.to_string(),
        source: Source::A,
        start_s: round_ms(start),
        end_s: round_ms(end).max(round_ms(start) + 0.001),
        text,
        word_confidences: Some(confidences),
    }
}

/// A misspelling of `word`: a dropped, doubled or swapped interior letter.
/// Always differs from the input for words of three or more characters.
pub fn corrupt_keyword<R: Rng + ?Sized>(word: &str, rng: &mut R) -> String {
    let chars: Vec<char> = word.chars().collect();
    let n = chars.len();
    if n < 3 {
        return format!("{word}{}", chars.last().copied().unwrap_or('x'));
    }
    loop {
        let mut c = chars.clone();
        let pos = rng.random_range(1..n - 1);
        match rng.random_range(0..3) {
            0 => {
                c.remove(pos);
            }
            1 => c.insert(pos, c[pos]),
            _ => c.swap(pos, pos + 1),
        }
        let s: String = c.into_iter().collect();
        if s != word {
            return s;
        }
    }
}
