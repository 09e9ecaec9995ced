//! Benchmarks on held-out synthetic videos, using the event timelines as
//! ground truth.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use super::metrics::{f1_per_class, iou, mean_ap, median_rank, recall_at_k, triplet_component_ap, ComponentAp};
use super::{argmax, classify, fill_template, rank_gallery, sliding_windows, Frozen, PromptClass, PromptClassSet, RetrievalIndex};
use crate::corpus::{Corpus, EventSpan, VideoRecord, WorldConfig};
use crate::error::{Error, Result};
use crate::gradcore::Tensor;

pub const TRIPLET_TEMPLATE: &str = "i use the {tool} to {action} the {target}";

/// Prompt sets in the vocabulary of the synthetic world: `tool` (one class per
/// keyword), `target` (one class per target) and `triplet` (every keyword and
/// target combination, filled from a template).
pub fn synthetic_prompts(world: &WorldConfig) -> Vec<PromptClassSet> {
    let tools = world
        .keyword_vocab
        .iter()
        .enumerate()
        .map(|(c, kw)| PromptClass {
            id: c,
            name: kw.clone(),
            prompt: format!("i use the {kw} to {} it", world.verb(c)),
        })
        .collect();
    let targets = world
        .targets
        .iter()
        .enumerate()
        .map(|(t, name)| PromptClass {
            id: t,
            name: name.clone(),
            prompt: format!("i use it on the {name}"),
        })
        .collect();
    let mut triplets = Vec::new();
    for (c, kw) in world.keyword_vocab.iter().enumerate() {
        for target in &world.targets {
            triplets.push(PromptClass {
                id: triplets.len(),
                name: format!("{kw},{},{target}", world.verb(c)),
                prompt: fill_template(TRIPLET_TEMPLATE, kw, world.verb(c), target),
            });
        }
    }
    vec![
        PromptClassSet {
            task: "tool".into(),
            template: None,
            classes: tools,
        },
        PromptClassSet {
            task: "target".into(),
            template: None,
            classes: targets,
        },
        PromptClassSet {
            task: "triplet".into(),
            template: Some(TRIPLET_TEMPLATE.into()),
            classes: triplets,
        },
    ]
}

fn event_id(video: &VideoRecord, k: usize) -> String {
    format!("{}:{k:03}", video.video_id)
}

fn event_clips(video: &VideoRecord) -> Vec<(f64, f64)> {
    video.event_timeline.iter().map(|e| (e.start_s, e.end_s)).collect()
}

/// Every event of every video with its latent.
fn encode_events<'c>(test: &'c Corpus, frozen: &Frozen<'_>) -> Result<Vec<(String, &'c EventSpan, Vec<f64>)>> {
    let mut out = Vec::new();
    for v in &test.videos {
        let latents = frozen.clips(v, &event_clips(v))?;
        for (k, e) in v.event_timeline.iter().enumerate() {
            out.push((event_id(v, k), e, latents.row(k).to_vec()));
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyInput("benchmark videos"));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RetrievalMetrics {
    pub recall: Vec<(usize, f64)>,
    pub median_rank: usize,
    pub n_queries: usize,
}

impl RetrievalMetrics {
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.recall.iter().find(|(kk, _)| *kk == k).map(|(_, r)| *r)
    }
}

/// Text-to-clip retrieval. The gallery holds one clip per event (its full
/// interval); each event's clean narration is a query whose ground truth is
/// that clip.
pub fn retrieval_benchmark(test: &Corpus, world: &WorldConfig, frozen: &Frozen<'_>, ks: &[usize]) -> Result<RetrievalMetrics> {
    let events = encode_events(test, frozen)?;
    let ids: Vec<String> = events.iter().map(|(id, _, _)| id.clone()).collect();
    let rows: Vec<&[f64]> = events.iter().map(|(_, _, l)| l.as_slice()).collect();
    let index = RetrievalIndex::new(ids.clone(), &Tensor::from_rows(&rows)?)?;
    let texts: Vec<String> = events
        .iter()
        .map(|(_, e, _)| world.query_text(e.class_id, e.target_id))
        .collect();
    let queries = frozen.texts(&texts)?;
    let results = ids
        .iter()
        .enumerate()
        .map(|(q, id)| rank_gallery(id, queries.row(q), &index))
        .collect::<Result<Vec<_>>>()?;
    let gt: HashMap<String, String> = ids.iter().map(|id| (id.clone(), id.clone())).collect();
    Ok(RetrievalMetrics {
        recall: ks
            .iter()
            .map(|&k| recall_at_k(&results, &gt, k).map(|r| (k, r)))
            .collect::<Result<_>>()?,
        median_rank: median_rank(&results, &gt)?,
        n_queries: results.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroundingMetrics {
    pub recall: Vec<(usize, f64)>,
    pub n_queries: usize,
}

/// Temporal grounding of every event's narration within its own video. A
/// query counts as found at `k` when one of the top `k` windows overlaps the
/// event with IoU at or above `iou_threshold`.
pub fn grounding_benchmark(
    test: &Corpus,
    world: &WorldConfig,
    frozen: &Frozen<'_>,
    window_s: f64,
    stride_s: f64,
    iou_threshold: f64,
    ks: &[usize],
) -> Result<GroundingMetrics> {
    let mut hits = vec![0usize; ks.len()];
    let mut n = 0;
    for v in &test.videos {
        let segments = sliding_windows(v.duration_s, window_s, stride_s)?;
        let latents = frozen.clips(v, &segments)?;
        let ids: Vec<String> = (0..segments.len()).map(|k| format!("seg{k:04}")).collect();
        let index = RetrievalIndex::new(ids, &latents)?;
        let texts: Vec<String> = v
            .event_timeline
            .iter()
            .map(|e| world.query_text(e.class_id, e.target_id))
            .collect();
        let queries = frozen.texts(&texts)?;
        for (q, e) in v.event_timeline.iter().enumerate() {
            let ranked = rank_gallery(&event_id(v, q), queries.row(q), &index)?;
            let first_hit = ranked.ranking.iter().position(|(id, _)| {
                let k: usize = id[3..].parse().expect("segment id");
                iou(segments[k], (e.start_s, e.end_s)) >= iou_threshold
            });
            for (slot, &k) in ks.iter().enumerate() {
                if first_hit.is_some_and(|p| p < k) {
                    hits[slot] += 1;
                }
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyInput("grounding queries"));
    }
    Ok(GroundingMetrics {
        recall: ks.iter().zip(hits).map(|(&k, h)| (k, h as f64 / n as f64)).collect(),
        n_queries: n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ZeroShotMetrics {
    pub tool_ap: BTreeMap<usize, f64>,
    pub tool_map: f64,
    pub target_f1: Vec<f64>,
    pub target_mean_f1: f64,
    pub triplet: ComponentAp,
    pub n_clips: usize,
}

fn scores_for(latents: &[Vec<f64>], prompts: &Tensor) -> Result<Vec<Vec<f64>>> {
    latents.iter().map(|l| classify(l, prompts)).collect()
}

/// Prompt-based classification of every held-out event clip: tools scored by
/// AP, targets by F1 of the argmax, triplets by component AP.
pub fn zero_shot_benchmark(test: &Corpus, world: &WorldConfig, frozen: &Frozen<'_>) -> Result<ZeroShotMetrics> {
    zero_shot_benchmark_with(test, world, frozen, &synthetic_prompts(world))
}

/// Same as [`zero_shot_benchmark`] with caller-supplied prompt sets. They
/// must be the `tool`, `target` and `triplet` sets, in that order, with the
/// class counts of `world` (triplets ordered keyword-major).
pub fn zero_shot_benchmark_with(
    test: &Corpus,
    world: &WorldConfig,
    frozen: &Frozen<'_>,
    sets: &[PromptClassSet],
) -> Result<ZeroShotMetrics> {
    let n_classes = world.keyword_vocab.len();
    let expected = [
        ("tool", n_classes),
        ("target", world.targets.len()),
        ("triplet", n_classes * world.targets.len()),
    ];
    if sets.len() != expected.len() {
        return Err(Error::contract(format!("expected 3 prompt sets, got {}", sets.len())));
    }
    for (set, (task, n)) in sets.iter().zip(expected) {
        set.validate()?;
        if set.task != task || set.classes.len() != n {
            return Err(Error::contract(format!(
                "prompt set {:?} with {} classes where {task:?} with {n} was expected",
                set.task,
                set.classes.len()
            )));
        }
    }
    let events = encode_events(test, frozen)?;
    let latents: Vec<Vec<f64>> = events.iter().map(|(_, _, l)| l.clone()).collect();
    let encode = |set: &PromptClassSet| frozen.texts(&set.prompts());

    let tool_scores = scores_for(&latents, &encode(&sets[0])?)?;
    let n_tools = sets[0].classes.len();
    let tool_labels: Vec<Vec<bool>> = events
        .iter()
        .map(|(_, e, _)| (0..n_tools).map(|c| c == e.class_id).collect())
        .collect();
    let (tool_ap, tool_map) = mean_ap(&tool_scores, &tool_labels)?;

    let target_scores = scores_for(&latents, &encode(&sets[1])?)?;
    let predictions: Vec<usize> = target_scores.iter().map(|s| argmax(s)).collect();
    let truth: Vec<usize> = events.iter().map(|(_, e, _)| e.target_id).collect();
    let (target_f1, target_mean_f1) = f1_per_class(&predictions, &truth, world.targets.len())?;

    let triplet_scores = scores_for(&latents, &encode(&sets[2])?)?;
    let n_targets = world.targets.len();
    let components: Vec<(usize, usize, usize)> = (0..sets[2].classes.len())
        .map(|k| (k / n_targets, k / n_targets, k % n_targets))
        .collect();
    let triplet_labels: Vec<Vec<bool>> = events
        .iter()
        .map(|(_, e, _)| {
            components
                .iter()
                .map(|&(i, _, t)| i == e.class_id && t == e.target_id)
                .collect()
        })
        .collect();
    let triplet = triplet_component_ap(&triplet_scores, &triplet_labels, &components)?;

    Ok(ZeroShotMetrics {
        tool_ap,
        tool_map,
        target_f1,
        target_mean_f1,
        triplet,
        n_clips: events.len(),
    })
}
