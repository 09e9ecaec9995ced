//! Caption decoder trained on text latents only, then driven by clip
//! latents, with the usual caption metrics.

mod decoder;
mod metrics;

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use decoder::{DecoderParams, DECODER_PARAM_NAMES};
pub use metrics::{bleu_n, meteor_basic, rouge_l, score_captions, words, CaptionScores};

use crate::corpus::io::{read_jsonl, write_jsonl};
use crate::corpus::VideoRecord;
use crate::error::{Error, Result};
use crate::gradcore::{adam_step, AdamState, Tape, Tensor};
use crate::zeroshot::Frozen;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaptionConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Std of the isotropic noise added to each unit-normalized text latent.
    pub noise_std: f64,
    /// Generated tokens, not counting the end marker.
    pub max_len: usize,
}

impl Default for CaptionConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            hidden_dim: 64,
            steps: 600,
            batch: 16,
            lr: 5e-3,
            noise_std: 0.01,
            max_len: 12,
        }
    }
}

impl CaptionConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        for (name, v) in [
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("batch", self.batch),
            ("max_len", self.max_len),
        ] {
            if v == 0 {
                bad.push(format!("{name} must be positive"));
            }
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            bad.push(format!("lr = {} must be finite and >= 0", self.lr));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            bad.push(format!("noise_std = {} must be finite and >= 0", self.noise_std));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}

fn unit_rows(t: &Tensor) -> Result<Tensor> {
    let mut data = Vec::with_capacity(t.len());
    for i in 0..t.rows() {
        let row = t.row(i);
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 1e-12 {
            return Err(Error::DegenerateVector { row: i, norm });
        }
        data.extend(row.iter().map(|x| x / norm));
    }
    Tensor::new(t.shape().to_vec(), data)
}

/// Teacher-forced cross-entropy over `latents` (unit rows, one per
/// sequence) and their `[BOS, ..., EOS]` token sequences.
fn sequence_loss(tape: &mut Tape, p: &decoder::BoundDecoder, latents: Tensor, seqs: &[&Vec<usize>], pad: usize) -> Result<crate::gradcore::Var> {
    let b = seqs.len();
    let steps = seqs.iter().map(|s| s.len() - 1).max().unwrap_or(0);
    let targets: usize = seqs.iter().map(|s| s.len() - 1).sum();
    let latent = tape.constant(latents);
    let (mut h, ctx) = decoder::start(tape, p, latent)?;
    let mut total = None;
    for t in 0..steps {
        let input: Vec<usize> = seqs.iter().map(|s| if t + 1 < s.len() { s[t] } else { pad }).collect();
        let target: Vec<Vec<usize>> = seqs.iter().map(|s| vec![if t + 1 < s.len() { s[t + 1] } else { pad }]).collect();
        let mask: Vec<f64> = seqs
            .iter()
            .map(|s| if t + 1 < s.len() { 1.0 / targets as f64 } else { 0.0 })
            .collect();
        let (next, logits) = decoder::step(tape, p, &ctx, h, &input)?;
        h = next;
        let lse = tape.logsumexp_rows(logits)?;
        let picked = tape.gather_cols(logits, target)?;
        let picked = tape.reshape(picked, vec![b])?;
        let nll = tape.sub(lse, picked)?;
        let part = tape.weighted_sum(nll, mask)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, part)?,
            None => part,
        });
    }
    total.ok_or(Error::EmptyInput("caption sequences"))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CaptionTrainReport {
    pub losses: Vec<f64>,
}

/// Trains a decoder to rebuild `sentences` from their frozen text latents
/// plus Gaussian noise. Only the text branch is used; no frame data is read.
pub fn train_text_only<S: AsRef<str>>(
    sentences: &[S],
    frozen: &Frozen<'_>,
    config: &CaptionConfig,
    seed: u64,
) -> Result<(DecoderParams, CaptionTrainReport)> {
    config.validate()?;
    let vocab = frozen.vocab;
    let seqs: Vec<Vec<usize>> = sentences
        .iter()
        .map(|s| {
            let mut ids = vec![vocab.bos()];
            ids.extend(vocab.encode(s.as_ref()));
            ids.push(vocab.eos());
            ids
        })
        .filter(|ids| ids.len() > 2)
        .collect();
    if seqs.is_empty() {
        return Err(Error::EmptyInput("caption training sentences"));
    }
    let texts: Vec<&str> = sentences.iter().map(|s| s.as_ref()).filter(|s| !vocab.encode(s).is_empty()).collect();
    let latents = unit_rows(&frozen.texts(&texts)?)?;
    let d = latents.cols();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = DecoderParams::init(vocab.len(), d, config.embed_dim, config.hidden_dim, &mut rng);
    let mut adam = AdamState::new(params.tensors(), config.lr);
    let noise = Normal::new(0.0, config.noise_std).map_err(|e| Error::Config(vec![e.to_string()]))?;
    let batch = config.batch.min(seqs.len());
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut report = CaptionTrainReport::default();

    for step in 0..config.steps {
        if cursor + batch > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let idx = &order[cursor..cursor + batch];
        cursor += batch;
        let mut data = Vec::with_capacity(batch * d);
        for &i in idx {
            data.extend(latents.row(i).iter().map(|x| x + noise.sample(&mut rng)));
        }
        let input = Tensor::new(vec![batch, d], data)?;
        let seq_refs: Vec<&Vec<usize>> = idx.iter().map(|&i| &seqs[i]).collect();

        let mut tape = Tape::new();
        let p = params.bind(&mut tape, true);
        let loss = sequence_loss(&mut tape, &p, input, &seq_refs, vocab.pad())?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Diverged { step, loss: value });
        }
        let mut grads = tape.backward(loss)?;
        let grads: Vec<Tensor> = p
            .vars()
            .iter()
            .map(|&v| grads.take(v).expect("every decoder tensor receives a gradient"))
            .collect();
        adam_step(params.tensors_mut(), &grads, &mut adam)?;
        report.losses.push(value);
    }
    Ok((params, report))
}

/// Greedy decoding from a latent (unit-normalized first) until the end
/// marker or `max_len` tokens.
pub fn generate(latent: &[f64], decoder: &DecoderParams, frozen: &Frozen<'_>, max_len: usize) -> Result<String> {
    let vocab = frozen.vocab;
    if latent.len() != decoder.d() {
        return Err(Error::Dimension {
            op: "generate",
            left: vec![latent.len()],
            right: vec![decoder.d()],
        });
    }
    let latent = unit_rows(&Tensor::new(vec![1, latent.len()], latent.to_vec())?)?;
    let mut tape = Tape::new();
    let p = decoder.bind(&mut tape, false);
    let l = tape.constant(latent);
    let (mut h, ctx) = decoder::start(&mut tape, &p, l)?;
    let mut token = vocab.bos();
    let mut out = Vec::new();
    for _ in 0..max_len {
        let (next, logits) = decoder::step(&mut tape, &p, &ctx, h, &[token])?;
        h = next;
        let row = tape.value(logits).row(0);
        token = crate::zeroshot::argmax(row);
        if token == vocab.eos() {
            break;
        }
        out.push(token);
    }
    Ok(vocab.decode(&out))
}

/// Captions for intervals of one video, through the frozen clip encoder.
pub fn caption_clips(
    video: &VideoRecord,
    clips: &[(f64, f64)],
    decoder: &DecoderParams,
    frozen: &Frozen<'_>,
    max_len: usize,
) -> Result<Vec<String>> {
    let latents = frozen.clips(video, clips)?;
    (0..latents.rows())
        .map(|i| generate(latents.row(i), decoder, frozen, max_len))
        .collect()
}

/// `<video_id>@<start>-<end>` with seconds to three decimals.
pub fn clip_ref(video_id: &str, start_s: f64, end_s: f64) -> String {
    format!("{video_id}@{start_s:.3}-{end_s:.3}")
}

pub fn parse_clip_ref(s: &str) -> Result<(String, f64, f64)> {
    let bad = || Error::contract(format!("malformed clip reference {s:?}"));
    let (video, span) = s.rsplit_once('@').ok_or_else(bad)?;
    let (a, b) = span.split_once('-').ok_or_else(bad)?;
    let start: f64 = a.parse().map_err(|_| bad())?;
    let end: f64 = b.parse().map_err(|_| bad())?;
    if video.is_empty() || !(end > start) {
        return Err(bad());
    }
    Ok((video.to_string(), start, end))
}

/// A clip with its reference caption.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionExample {
    pub clip_ref: String,
    pub reference: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionPrediction {
    pub clip_ref: String,
    pub caption: String,
}

pub fn read_caption_examples(path: &Path) -> Result<Vec<CaptionExample>> {
    read_jsonl(path)
}

pub fn write_caption_examples(path: &Path, rows: &[CaptionExample]) -> Result<()> {
    write_jsonl(path, rows)
}

pub fn read_caption_predictions(path: &Path) -> Result<Vec<CaptionPrediction>> {
    read_jsonl(path)
}

pub fn write_caption_predictions(path: &Path, rows: &[CaptionPrediction]) -> Result<()> {
    write_jsonl(path, rows)
}

/// One row of BLEU-1..4, METEOR and ROUGE-L; the last column names the
/// METEOR matching stages used.
pub fn caption_metrics_csv(scores: &CaptionScores) -> String {
    let mut out = String::from("bleu1,bleu2,bleu3,bleu4,meteor,rouge_l,n,meteor_matching\n");
    let _ = writeln!(
        out,
        "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},exact+stem",
        scores.bleu[0], scores.bleu[1], scores.bleu[2], scores.bleu[3], scores.meteor, scores.rouge_l, scores.n
    );
    out
}

pub fn save_decoder(path: &Path, decoder: &DecoderParams, config: &CaptionConfig) -> Result<()> {
    #[derive(Serialize)]
    struct File<'a> {
        config: &'a CaptionConfig,
        params: &'a DecoderParams,
    }
    std::fs::write(path, serde_json::to_vec(&File { config, params: decoder })?)?;
    Ok(())
}

pub fn load_decoder(path: &Path) -> Result<(DecoderParams, CaptionConfig)> {
    #[derive(Deserialize)]
    struct File {
        config: CaptionConfig,
        params: DecoderParams,
    }
    let bytes = std::fs::read(path)?;
    let f: File = serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    Ok((f.params, f.config))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_refs_round_trip() {
        let r = clip_ref("video_0003", 12.0, 20.5);
        assert_eq!(r, "video_0003@12.000-20.500");
        assert_eq!(parse_clip_ref(&r).unwrap(), ("video_0003".into(), 12.0, 20.5));
        assert!(parse_clip_ref("video_0003").is_err());
        assert!(parse_clip_ref("v@3-1").is_err());
    }
}
