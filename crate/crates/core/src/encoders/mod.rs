//! Tokenization and the two encoder branches mapping clips and sentences into
//! one `d`-dimensional space.
//!
//! The frame branch runs a two-layer trunk and a projection on each sampled
//! frame and averages the `T` projected frames. The text branch embeds each
//! token, runs its own two-layer trunk per token, averages over all `N`
//! positions and projects. Because the trunk is position-free, the text
//! branch only evaluates the trunk once per distinct token id in a batch and
//! pools with a constant count matrix, which gives the same result as the
//! per-position average.

mod params;
mod vocab;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use params::{load_checkpoint, save_checkpoint, BoundParams, EncoderParams, PARAM_NAMES};
pub use vocab::{build_vocab, tokenize, SubwordVocab, BOS, CONTINUATION, EOS, MIN_VOCAB_SIZE, PAD, UNK};

use crate::corpus::VideoRecord;
use crate::error::{Error, Result};
use crate::gradcore::{Tape, Tensor, Var};
use crate::objective::TextViews;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperConfig {
    /// Tokens per sentence after padding or truncation.
    pub n_tokens: usize,
    /// Frames sampled per clip.
    pub frames: usize,
    /// Size of the joint latent space.
    pub d: usize,
    pub tau: f64,
    /// Weight of the `A`-view loss in the combined objective.
    pub epsilon: f64,
    /// `W` sentences per pair.
    pub m: usize,
    pub batch: usize,
    pub lr: f64,
    pub steps: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub vocab_size: usize,
    /// Average only over non-pad positions.
    pub masked_mean: bool,
    /// Add the text-to-clip direction to both losses.
    pub symmetric: bool,
    pub views: TextViews,
}

impl Default for HyperConfig {
    fn default() -> Self {
        Self {
            n_tokens: 77,
            frames: 4,
            d: 64,
            tau: 0.3,
            epsilon: 0.5,
            m: 2,
            batch: 16,
            lr: 3e-3,
            steps: 300,
            embed_dim: 32,
            hidden_dim: 64,
            vocab_size: 320,
            masked_mean: false,
            symmetric: false,
            views: TextViews::Both,
        }
    }
}

impl HyperConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        for (name, v) in [
            ("n_tokens", self.n_tokens),
            ("frames", self.frames),
            ("d", self.d),
            ("m", self.m),
            ("batch", self.batch),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
        ] {
            if v == 0 {
                bad.push(format!("{name} must be positive"));
            }
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            bad.push(format!("tau = {} must be positive", self.tau));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            bad.push(format!("epsilon = {} is outside [0, 1]", self.epsilon));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            bad.push(format!("lr = {} must be non-negative", self.lr));
        }
        if self.vocab_size < MIN_VOCAB_SIZE {
            bad.push(format!("vocab_size = {} is below {MIN_VOCAB_SIZE}", self.vocab_size));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }

    /// Loss weight after applying the text-view switch.
    pub fn effective_epsilon(&self) -> f64 {
        match self.views {
            TextViews::A => 1.0,
            TextViews::W => 0.0,
            TextViews::Both => self.epsilon,
        }
    }
}

/// `t` frame indices evenly spaced over the frames whose timestamps fall in
/// `[start_s, end_s)`, endpoints included. `t == 1` picks the middle frame.
pub fn sample_frames(start_s: f64, end_s: f64, fps: f64, n_frames: usize, t: usize) -> Result<Vec<usize>> {
    if t == 0 {
        return Err(Error::contract("sample_frames needs t >= 1"));
    }
    let first = (start_s * fps - 1e-9).ceil().max(0.0) as usize;
    let last = ((end_s * fps - 1e-9).ceil() as i64 - 1).min(n_frames as i64 - 1);
    if last < first as i64 {
        return Err(Error::contract(format!(
            "clip [{start_s}, {end_s}) contains no frame at {fps} fps"
        )));
    }
    let (first, span) = (first as f64, (last as usize - first as usize) as f64);
    if t == 1 {
        return Ok(vec![(first + (span / 2.0).floor()) as usize]);
    }
    Ok((0..t)
        .map(|k| (first + (k as f64 * span / (t - 1) as f64).round()) as usize)
        .collect())
}

/// Stacks the sampled frames of each clip into a `[clips * t x feature_dim]`
/// tensor.
pub fn clip_frames(video: &VideoRecord, clips: &[(f64, f64)], t: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(clips.len() * t * video.feature_dim);
    for &(s, e) in clips {
        for i in sample_frames(s, e, video.fps, video.n_frames, t)? {
            data.extend(video.frame(i).iter().map(|&x| x as f64));
        }
    }
    Tensor::new(vec![clips.len() * t, video.feature_dim], data)
}

fn trunk(tape: &mut Tape, x: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Result<Var> {
    let h = tape.matmul(x, w1)?;
    let h = tape.add_bias(h, b1)?;
    let h = tape.relu(h)?;
    let h = tape.matmul(h, w2)?;
    let h = tape.add_bias(h, b2)?;
    tape.relu(h)
}

/// Frame branch on a tape. `frames` is `[B * t x feature_dim]` with the `t`
/// frames of each clip stored consecutively; the result is `[B x d]`.
pub fn encode_clip_on(tape: &mut Tape, p: &BoundParams, frames: Var, t: usize) -> Result<Var> {
    let x = tape.value(frames);
    let w1 = tape.value(p.frame_w1);
    if !x.is_matrix() || x.cols() != w1.rows() {
        return Err(Error::Dimension {
            op: "encode_clip",
            left: x.shape().to_vec(),
            right: w1.shape().to_vec(),
        });
    }
    let h = trunk(tape, frames, p.frame_w1, p.frame_b1, p.frame_w2, p.frame_b2)?;
    let z = tape.matmul(h, p.frame_proj)?;
    let z = tape.add_bias(z, p.frame_proj_b)?;
    tape.mean_row_groups(z, t)
}

/// Pooling weights of each distinct token per sentence.
fn pooling_matrix(tokens: &[Vec<usize>], pad: usize, masked: bool) -> (Vec<usize>, Tensor) {
    let mut cols: BTreeMap<usize, usize> = BTreeMap::new();
    for row in tokens {
        for &id in row {
            cols.insert(id, 0);
        }
    }
    for (k, slot) in cols.values_mut().enumerate() {
        *slot = k;
    }
    let u = cols.len();
    let mut data = vec![0.0; tokens.len() * u];
    for (b, row) in tokens.iter().enumerate() {
        let real = row.iter().filter(|&&id| id != pad).count();
        let (skip_pad, denom) = if masked && real > 0 {
            (true, real)
        } else {
            (false, row.len())
        };
        for &id in row {
            if skip_pad && id == pad {
                continue;
            }
            data[b * u + cols[&id]] += 1.0 / denom as f64;
        }
    }
    let ids = cols.into_keys().collect();
    (ids, Tensor::new(vec![tokens.len(), u], data).expect("pooling shape"))
}

/// Text branch on a tape. Every row of `tokens` must have the same length.
pub fn encode_text_on(
    tape: &mut Tape,
    p: &BoundParams,
    tokens: &[Vec<usize>],
    pad: usize,
    masked: bool,
) -> Result<Var> {
    let n = tokens.first().map_or(0, Vec::len);
    if tokens.is_empty() || n == 0 {
        return Err(Error::EmptyInput("encode_text"));
    }
    if tokens.iter().any(|r| r.len() != n) {
        return Err(Error::contract("encode_text rows differ in length"));
    }
    let v = tape.value(p.tok_embed).rows();
    if let Some(&bad) = tokens.iter().flatten().find(|&&id| id >= v) {
        return Err(Error::contract(format!("token id {bad} out of range for vocabulary of {v}")));
    }
    let (ids, pool) = pooling_matrix(tokens, pad, masked);
    let e = tape.gather_rows(p.tok_embed, &ids)?;
    let h = trunk(tape, e, p.text_w1, p.text_b1, p.text_w2, p.text_b2)?;
    let pool = tape.constant(pool);
    let pooled = tape.matmul(pool, h)?;
    let z = tape.matmul(pooled, p.text_proj)?;
    tape.add_bias(z, p.text_proj_b)
}

/// Frozen-parameter clip encoding.
pub fn encode_clip(params: &EncoderParams, frames: &Tensor, t: usize) -> Result<Tensor> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let x = tape.constant(frames.clone());
    let out = encode_clip_on(&mut tape, &p, x, t)?;
    Ok(tape.value(out).clone())
}

/// Frozen-parameter text encoding of already tokenized sentences.
pub fn encode_text(params: &EncoderParams, tokens: &[Vec<usize>], pad: usize, masked: bool) -> Result<Tensor> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let out = encode_text_on(&mut tape, &p, tokens, pad, masked)?;
    Ok(tape.value(out).clone())
}

/// Tokenizes and encodes raw sentences.
pub fn encode_sentences<S: AsRef<str>>(
    params: &EncoderParams,
    vocab: &SubwordVocab,
    hyper: &HyperConfig,
    texts: &[S],
) -> Result<Tensor> {
    let tokens: Vec<Vec<usize>> = texts.iter().map(|t| tokenize(t.as_ref(), vocab, hyper.n_tokens)).collect();
    encode_text(params, &tokens, vocab.pad(), hyper.masked_mean)
}
