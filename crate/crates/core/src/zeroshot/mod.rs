//! Frozen-encoder evaluation: retrieval, temporal grounding, prompt-based
//! classification, activation maps and their metrics.

mod bench;
mod metrics;

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use bench::{
    grounding_benchmark, retrieval_benchmark, synthetic_prompts, zero_shot_benchmark, zero_shot_benchmark_with,
    GroundingMetrics,
    RetrievalMetrics, ZeroShotMetrics,
};
pub use metrics::{
    average_precision, f1_per_class, iou, mean_ap, median_rank, recall_at_k, triplet_component_ap, ComponentAp,
    RankedResult,
};

use crate::corpus::VideoRecord;
use crate::encoders::{clip_frames, encode_clip, encode_sentences, EncoderParams, HyperConfig, SubwordVocab};
use crate::error::{Error, Result};
use crate::gradcore::Tensor;

/// Frozen encoders with the vocabulary and settings they were trained with.
#[derive(Clone, Copy, Debug)]
pub struct Frozen<'a> {
    pub params: &'a EncoderParams,
    pub vocab: &'a SubwordVocab,
    pub hyper: &'a HyperConfig,
}

impl Frozen<'_> {
    pub fn texts<S: AsRef<str>>(&self, texts: &[S]) -> Result<Tensor> {
        encode_sentences(self.params, self.vocab, self.hyper, texts)
    }

    /// Encodes intervals of one video with the configured frame count.
    pub fn clips(&self, video: &VideoRecord, clips: &[(f64, f64)]) -> Result<Tensor> {
        let frames = clip_frames(video, clips, self.hyper.frames)?;
        encode_clip(self.params, &frames, self.hyper.frames)
    }
}

fn unit(v: &[f64]) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= 1e-12 {
        return Err(Error::DegenerateVector { row: 0, norm });
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity of two vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(dot(&unit(a)?, &unit(b)?))
}

/// Gallery of unit-normalized latents with unique ids.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalIndex {
    ids: Vec<String>,
    latents: Vec<Vec<f64>>,
}

impl RetrievalIndex {
    pub fn new(ids: Vec<String>, latents: &Tensor) -> Result<Self> {
        if ids.len() != latents.rows() {
            return Err(Error::Dimension {
                op: "retrieval index",
                left: vec![ids.len()],
                right: latents.shape().to_vec(),
            });
        }
        let mut seen = HashSet::new();
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::contract(format!("duplicate gallery id {dup:?}")));
        }
        let latents = (0..latents.rows())
            .map(|i| unit(latents.row(i)).map_err(|_| Error::DegenerateVector { row: i, norm: 0.0 }))
            .collect::<Result<_>>()?;
        Ok(Self { ids, latents })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

/// Gallery ordered by cosine similarity to `query`, descending, ties broken by
/// ascending id.
pub fn rank_gallery(query_id: &str, query: &[f64], index: &RetrievalIndex) -> Result<RankedResult> {
    if index.is_empty() {
        return Err(Error::EmptyInput("rank_gallery"));
    }
    let d = index.latents[0].len();
    if query.len() != d {
        return Err(Error::Dimension {
            op: "rank_gallery",
            left: vec![query.len()],
            right: vec![d],
        });
    }
    let q = unit(query)?;
    let mut ranking: Vec<(String, f64)> = index
        .ids
        .iter()
        .zip(&index.latents)
        .map(|(id, g)| (id.clone(), dot(&q, g)))
        .collect();
    ranking.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(RankedResult {
        query_id: query_id.to_string(),
        ranking,
    })
}

/// Start and end of every sliding window over `duration_s`.
pub fn sliding_windows(duration_s: f64, window_s: f64, stride_s: f64) -> Result<Vec<(f64, f64)>> {
    if !(window_s > 0.0 && stride_s > 0.0) {
        return Err(Error::Config(vec!["window and stride must be positive".into()]));
    }
    if window_s > duration_s {
        return Err(Error::contract(format!(
            "window of {window_s} s exceeds the video length of {duration_s} s"
        )));
    }
    let n = ((duration_s - window_s) / stride_s + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|k| (k as f64 * stride_s, k as f64 * stride_s + window_s)).collect())
}

/// Ranks the sliding-window segments of one video against a query latent.
/// Segment ids are `seg0000`, `seg0001`, ... in temporal order.
pub fn ground_query(
    video: &VideoRecord,
    query: &[f64],
    frozen: &Frozen<'_>,
    window_s: f64,
    stride_s: f64,
) -> Result<(Vec<(f64, f64)>, RankedResult)> {
    let segments = sliding_windows(video.duration_s, window_s, stride_s)?;
    let latents = frozen.clips(video, &segments)?;
    let ids = (0..segments.len()).map(|k| format!("seg{k:04}")).collect();
    let index = RetrievalIndex::new(ids, &latents)?;
    let ranked = rank_gallery(&video.video_id, query, &index)?;
    Ok((segments, ranked))
}

/// Cosine score of `latent` against each prompt latent (one row per class).
pub fn classify(latent: &[f64], prompt_latents: &Tensor) -> Result<Vec<f64>> {
    (0..prompt_latents.rows()).map(|c| cosine(latent, prompt_latents.row(c))).collect()
}

pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

/// Per-frame cosine similarity between `query` and the single-frame encoding
/// of every frame: `(frame_index, time_s, similarity)`.
pub fn activation_map(video: &VideoRecord, query: &[f64], params: &EncoderParams) -> Result<Vec<(usize, f64, f64)>> {
    let data = video.frame_features.iter().map(|&x| x as f64).collect();
    let frames = Tensor::new(vec![video.n_frames, video.feature_dim], data)?;
    let latents = encode_clip(params, &frames, 1)?;
    let q = unit(query)?;
    (0..video.n_frames)
        .map(|i| {
            let sim = dot(&q, &unit(latents.row(i))?).clamp(-1.0, 1.0);
            Ok((i, video.frame_time(i), sim))
        })
        .collect()
}

pub fn activation_map_csv(series: &[(usize, f64, f64)]) -> String {
    let mut out = String::from("frame_index,time_s,similarity\n");
    for (i, t, s) in series {
        let _ = writeln!(out, "{i},{t:.6},{s:.9}");
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptClass {
    pub id: usize,
    pub name: String,
    pub prompt: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptClassSet {
    pub task: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    pub classes: Vec<PromptClass>,
}

impl PromptClassSet {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        for (k, c) in self.classes.iter().enumerate() {
            if c.id != k {
                bad.push(format!("{}: class {:?} has id {} at position {k}", self.task, c.name, c.id));
            }
            if c.prompt.trim().is_empty() {
                bad.push(format!("{}: class {:?} has an empty prompt", self.task, c.name));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }

    pub fn prompts(&self) -> Vec<&str> {
        self.classes.iter().map(|c| c.prompt.as_str()).collect()
    }
}

/// Fills a triplet template with `{tool}`, `{action}` and `{target}`.
pub fn fill_template(template: &str, tool: &str, action: &str, target: &str) -> String {
    template
        .replace("{tool}", tool)
        .replace("{action}", action)
        .replace("{target}", target)
}

/// Prompt sets for phase and tool recognition on laparoscopic
/// cholecystectomy videos, plus the triplet template.
pub fn bundled_prompts() -> Vec<PromptClassSet> {
    serde_json::from_str(include_str!("../../data/prompts.json")).expect("bundled prompts parse")
}

pub fn read_prompts(path: &Path) -> Result<Vec<PromptClassSet>> {
    let text = std::fs::read_to_string(path)?;
    let sets: Vec<PromptClassSet> = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    for s in &sets {
        s.validate()?;
    }
    Ok(sets)
}
