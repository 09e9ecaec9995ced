//! Synthetic "procedure world" and its on-disk formats.
//!
//! Each video is a contiguous sequence of events. An event carries an action
//! class (named by a keyword, e.g. a tool) and a target. Frame features are
//! the sum of a class prototype, a target prototype and isotropic noise. Two
//! transcript streams narrate the events: the `A` stream is sparse, short,
//! carries per-word confidences and always spells the keyword correctly but
//! is often cut off mid-clause; the `W` stream is dense and fluent but may
//! misspell the keyword.

mod generate;
pub(crate) mod io;

use serde::{Deserialize, Serialize};

pub use generate::{corrupt_keyword, generate_split, generate_world, prototypes};
pub(crate) use io::{read_jsonl, write_jsonl};
pub use io::{frame_file_reads, read_corpus, read_features, write_corpus};

use crate::error::{Error, Result};

pub const DEFAULT_KEYWORDS: [&str; 6] = ["grasper", "bipolar", "hook", "scissors", "clipper", "irrigator"];
pub const DEFAULT_TARGETS: [&str; 6] = ["gallbladder", "duct", "artery", "liver", "omentum", "peritoneum"];
const VERBS: [&str; 8] = ["grasp", "coagulate", "dissect", "cut", "clip", "aspirate", "retract", "suture"];
const ACTION_NOUNS: [&str; 8] = [
    "grasping",
    "coagulation",
    "dissection",
    "cutting",
    "clipping",
    "aspiration",
    "retraction",
    "suturing",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub seed: u64,
    pub n_videos: usize,
    pub duration_s: f64,
    pub fps: f64,
    pub feature_dim: usize,
    pub n_event_classes: usize,
    pub keyword_vocab: Vec<String>,
    pub a_fragmentation: f64,
    pub w_keyword_corruption: f64,
    pub a_confidence_noise: f64,
    /// Objects acted upon; each event draws one.
    pub targets: Vec<String>,
    pub frame_noise_std: f64,
    /// Time constant of the frame noise, in seconds. Noise follows a
    /// stationary first-order autoregression across frames; 0 gives
    /// independent frames.
    pub frame_noise_corr_s: f64,
    /// Scale of the target prototype relative to the class prototype.
    pub target_scale: f64,
    pub event_min_s: f64,
    pub event_max_s: f64,
    /// Maximum offset between an event and the fluent narration of it.
    pub w_lag_s: f64,
    /// Probability that an `A` sentence is mumbled (low confidences).
    pub a_mumble: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_videos: 8,
            duration_s: 60.0,
            fps: 8.0,
            feature_dim: 16,
            n_event_classes: 6,
            keyword_vocab: DEFAULT_KEYWORDS.iter().map(|s| s.to_string()).collect(),
            a_fragmentation: 0.6,
            w_keyword_corruption: 0.5,
            a_confidence_noise: 0.1,
            targets: DEFAULT_TARGETS.iter().map(|s| s.to_string()).collect(),
            frame_noise_std: 1.2,
            frame_noise_corr_s: 2.0,
            target_scale: 0.8,
            event_min_s: 8.0,
            event_max_s: 16.0,
            w_lag_s: 1.0,
            a_mumble: 0.15,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        for (name, p) in [
            ("a_fragmentation", self.a_fragmentation),
            ("w_keyword_corruption", self.w_keyword_corruption),
            ("a_mumble", self.a_mumble),
        ] {
            if !(0.0..=1.0).contains(&p) {
                bad.push(format!("{name} = {p} is not a probability"));
            }
        }
        if !(self.a_confidence_noise >= 0.0) {
            bad.push(format!("a_confidence_noise = {} must be >= 0", self.a_confidence_noise));
        }
        if !(self.fps > 0.0 && self.duration_s > 0.0) || self.fps * self.duration_s < 16.0 {
            bad.push(format!(
                "fps * duration_s = {} must be at least 16",
                self.fps * self.duration_s
            ));
        }
        if self.feature_dim == 0 {
            bad.push("feature_dim must be positive".into());
        }
        if self.n_event_classes < 2 {
            bad.push(format!("n_event_classes = {} must be at least 2", self.n_event_classes));
        }
        if self.keyword_vocab.len() != self.n_event_classes {
            bad.push(format!(
                "keyword_vocab has {} entries for {} classes",
                self.keyword_vocab.len(),
                self.n_event_classes
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for k in &self.keyword_vocab {
            if k.chars().count() < 3 || k.contains(char::is_whitespace) {
                bad.push(format!("keyword {k:?} must be a single word of 3+ characters"));
            }
            if !seen.insert(k) {
                bad.push(format!("keyword {k:?} is duplicated"));
            }
        }
        if self.targets.is_empty() {
            bad.push("targets must not be empty".into());
        }
        if !(self.frame_noise_corr_s >= 0.0) {
            bad.push("frame_noise_corr_s must be >= 0".into());
        }
        if !(self.frame_noise_std >= 0.0) {
            bad.push("frame_noise_std must be >= 0".into());
        }
        if !(self.event_min_s > 0.0 && self.event_min_s <= self.event_max_s) {
            bad.push(format!(
                "event duration range [{}, {}] is invalid",
                self.event_min_s, self.event_max_s
            ));
        }
        if !(self.w_lag_s >= 0.0) {
            bad.push("w_lag_s must be >= 0".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }

    pub fn verb(&self, class_id: usize) -> &'static str {
        VERBS[class_id % VERBS.len()]
    }

    pub fn action_noun(&self, class_id: usize) -> &'static str {
        ACTION_NOUNS[class_id % ACTION_NOUNS.len()]
    }

    /// Clean narration of an event, in the style of a corrected fluent
    /// transcript. Used as the ground-truth retrieval and grounding query.
    pub fn query_text(&self, class_id: usize, target_id: usize) -> String {
        format!(
            "i use the {} to {} the {}",
            self.keyword_vocab[class_id],
            self.verb(class_id),
            self.targets[target_id]
        )
    }

    /// Short caption of an event in the style of lecture metadata: tool,
    /// action and target, without function words.
    pub fn metadata_text(&self, class_id: usize, target_id: usize) -> String {
        format!(
            "{} {} {}",
            self.keyword_vocab[class_id],
            self.action_noun(class_id),
            self.targets[target_id]
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventSpan {
    pub class_id: usize,
    pub target_id: usize,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoRecord {
    pub video_id: String,
    pub duration_s: f64,
    pub fps: f64,
    pub n_frames: usize,
    pub feature_dim: usize,
    /// Row-major `[n_frames x feature_dim]`.
    pub frame_features: Vec<f32>,
    pub event_timeline: Vec<EventSpan>,
}

impl VideoRecord {
    pub fn frame(&self, i: usize) -> &[f32] {
        &self.frame_features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn frame_time(&self, i: usize) -> f64 {
        i as f64 / self.fps
    }

    pub fn event_at(&self, t: f64) -> Option<&EventSpan> {
        self.event_timeline
            .iter()
            .find(|e| e.start_s <= t && t < e.end_s)
            .or_else(|| self.event_timeline.last().filter(|e| t >= e.end_s && t <= self.duration_s))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    A,
    W,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptSentence {
    pub video_id: String,
    pub source: Source,
    pub start_s: f64,
    pub end_s: f64,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word_confidences: Option<Vec<f64>>,
}

impl TranscriptSentence {
    pub fn word_count(&self) -> usize {
        self.text.split_whitespace().count()
    }

    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }
}

/// Videos and both transcript streams of one split.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub videos: Vec<VideoRecord>,
    pub transcripts: Vec<TranscriptSentence>,
}

impl Corpus {
    pub fn video(&self, id: &str) -> Option<&VideoRecord> {
        self.videos.iter().find(|v| v.video_id == id)
    }

    /// Per-frame class ids derived from the event timelines.
    pub fn labels(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        for v in &self.videos {
            for i in 0..v.n_frames {
                if let Some(e) = v.event_at(v.frame_time(i)) {
                    out.push((v.video_id.clone(), i, e.class_id));
                }
            }
        }
        out
    }
}
