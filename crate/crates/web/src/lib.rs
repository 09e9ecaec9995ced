//! Browser demo: clip sampling, the contrastive losses over a temperature
//! sweep, and caption scoring. Each export takes plain values and returns
//! JSON; the `*_json` functions hold the logic so they can be tested natively.

use duoview::captioner::{bleu_n, meteor_basic, rouge_l};
use duoview::corpus::{Source, TranscriptSentence};
use duoview::gradcore::Tensor;
use duoview::objective::{combined_loss, info_nce, mil_nce};
use duoview::pairing::{sample_clip, ClipLength};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

const BINS: usize = 20;

#[derive(Serialize)]
struct ClipSample {
    start: f64,
    end: f64,
    center: f64,
}

#[derive(Serialize)]
struct ClipExplorer {
    span: (f64, f64),
    clips: Vec<ClipSample>,
    center_hist: Vec<usize>,
    length_hist: Vec<usize>,
}

fn sentence(source: Source, start_s: f64, end_s: f64) -> TranscriptSentence {
    TranscriptSentence {
        video_id: "demo".into(),
        source,
        start_s,
        end_s,
        text: String::new(),
        word_confidences: None,
    }
}

fn histogram(values: impl Iterator<Item = f64>, lo: f64, hi: f64) -> Vec<usize> {
    let mut h = vec![0; BINS];
    let width = (hi - lo).max(1e-9) / BINS as f64;
    for v in values {
        let b = (((v - lo) / width) as usize).min(BINS - 1);
        h[b] += 1;
    }
    h
}

/// `w` is a flat list of interval endpoints `[s0, e0, s1, e1, ...]`;
/// `fixed_s <= 0` selects random lengths in 2..10 s.
pub fn sample_clips_json(a: (f64, f64), w: &[f64], fixed_s: f64, duration_s: f64, n: usize, seed: u64) -> Result<String, String> {
    if !w.len().is_multiple_of(2) || w.is_empty() {
        return Err("W intervals must be start/end pairs".into());
    }
    if n == 0 || n > 100_000 {
        return Err("sample count must be in 1..=100000".into());
    }
    let a = sentence(Source::A, a.0, a.1);
    let ws: Vec<TranscriptSentence> = w.chunks(2).map(|c| sentence(Source::W, c[0], c[1])).collect();
    let overlaps = duoview::pairing::find_overlaps(&a, &ws);
    let length = if fixed_s > 0.0 {
        ClipLength::Fixed { seconds: fixed_s }
    } else {
        ClipLength::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clips = (0..n)
        .map(|_| sample_clip(&a, &overlaps, &mut rng, length, duration_s))
        .collect::<duoview::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let lo = overlaps.iter().map(|s| s.start_s).fold(f64::INFINITY, f64::min);
    let hi = overlaps.iter().map(|s| s.end_s).fold(f64::NEG_INFINITY, f64::max);
    let out = ClipExplorer {
        span: (lo, hi),
        center_hist: histogram(clips.iter().map(|c| c.center_s), lo, hi),
        length_hist: histogram(clips.iter().map(|c| c.clip_len()), 0.0, length.max_s()),
        clips: clips
            .iter()
            .take(200)
            .map(|c| ClipSample {
                start: c.clip_start_s,
                end: c.clip_end_s,
                center: c.center_s,
            })
            .collect(),
    };
    Ok(serde_json::to_string(&out).expect("serializable"))
}

#[derive(Serialize)]
struct LossPoint {
    tau: f64,
    info_nce: f64,
    mil_nce: f64,
    combined: f64,
}

/// Random clip latents with text latents pulled toward them by `alignment`
/// in [0, 1]; losses on a log-spaced temperature grid.
pub fn loss_curve_json(batch: usize, m: usize, dim: usize, alignment: f64, epsilon: f64, seed: u64) -> Result<String, String> {
    if !(1..=64).contains(&batch) || !(1..=8).contains(&m) || !(2..=128).contains(&dim) {
        return Err("need batch in 1..=64, M in 1..=8, dim in 2..=128".into());
    }
    if !(0.0..=1.0).contains(&alignment) || !(0.0..=1.0).contains(&epsilon) {
        return Err("alignment and epsilon must lie in [0, 1]".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let chi = noise(batch * dim);
    let near = |base: &[f64], eps: Vec<f64>| -> Vec<f64> {
        base.iter().zip(eps).map(|(c, e)| alignment * c + (1.0 - alignment) * e).collect()
    };
    let beta = near(&chi, noise(batch * dim));
    let repeated: Vec<f64> = chi.chunks(dim).flat_map(|r| r.repeat(m)).collect();
    let gamma = near(&repeated, noise(batch * m * dim));
    let t = |rows: usize, data: Vec<f64>| Tensor::new(vec![rows, dim], data).map_err(|e| e.to_string());
    let (chi, beta, gamma) = (t(batch, chi)?, t(batch, beta)?, t(batch * m, gamma)?);
    let points = (0..=24)
        .map(|i| {
            let tau = 0.05 * 40f64.powf(i as f64 / 24.0);
            Ok(LossPoint {
                tau,
                info_nce: info_nce(&chi, &beta, tau)?,
                mil_nce: mil_nce(&chi, &gamma, m, tau)?,
                combined: combined_loss(&chi, &beta, &gamma, m, tau, epsilon)?,
            })
        })
        .collect::<duoview::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    Ok(serde_json::to_string(&points).expect("serializable"))
}

#[derive(Serialize)]
struct CaptionReport {
    bleu: [f64; 4],
    rouge_l: f64,
    meteor: f64,
}

/// References are newline separated. ROUGE-L and METEOR take the best
/// single reference.
pub fn score_caption_json(candidate: &str, references: &str) -> Result<String, String> {
    let refs: Vec<&str> = references.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    if refs.is_empty() {
        return Err("at least one reference is required".into());
    }
    let mut bleu = [0.0; 4];
    for (n, b) in bleu.iter_mut().enumerate() {
        *b = bleu_n(candidate, &refs, n + 1).map_err(|e| e.to_string())?;
    }
    let best = |f: fn(&str, &str) -> f64| refs.iter().map(|r| f(candidate, r)).fold(0.0, f64::max);
    let report = CaptionReport {
        bleu,
        rouge_l: best(rouge_l),
        meteor: best(meteor_basic),
    };
    Ok(serde_json::to_string(&report).expect("serializable"))
}

#[wasm_bindgen]
pub fn sample_clips(a_start: f64, a_end: f64, w: Vec<f64>, fixed_s: f64, duration_s: f64, n: usize, seed: u64) -> Result<String, JsError> {
    sample_clips_json((a_start, a_end), &w, fixed_s, duration_s, n, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn loss_curve(batch: usize, m: usize, dim: usize, alignment: f64, epsilon: f64, seed: u64) -> Result<String, JsError> {
    loss_curve_json(batch, m, dim, alignment, epsilon, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn score_caption(candidate: &str, references: &str) -> Result<String, JsError> {
    score_caption_json(candidate, references).map_err(|e| JsError::new(&e))
}
