use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::combined_loss_on;
use crate::corpus::Corpus;
use crate::encoders::{clip_frames, encode_clip_on, encode_text_on, tokenize, EncoderParams, HyperConfig, SubwordVocab};
use crate::error::{Error, Result};
use crate::gradcore::{adam_step, AdamState, Tape, Tensor};
use crate::pairing::ClipTextPair;

/// One pair with its frames sampled and its sentences tokenized.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainItem {
    /// `[t x feature_dim]`, row-major.
    pub frames: Vec<f64>,
    pub a_tokens: Vec<usize>,
    pub w_tokens: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    pub items: Vec<TrainItem>,
    pub frames: usize,
    pub feature_dim: usize,
    pub pad: usize,
}

impl TrainingSet {
    /// Resolves every pair against the corpus it was built from.
    pub fn prepare(pairs: &[ClipTextPair], corpus: &Corpus, vocab: &SubwordVocab, hyper: &HyperConfig) -> Result<Self> {
        let feature_dim = corpus.videos.first().map_or(0, |v| v.feature_dim);
        let mut items = Vec::with_capacity(pairs.len());
        for p in pairs {
            let video = corpus
                .video(&p.video_id)
                .ok_or_else(|| Error::contract(format!("pair refers to unknown video {:?}", p.video_id)))?;
            let frames = clip_frames(video, &[(p.clip_start_s, p.clip_end_s)], hyper.frames)?.into_data();
            items.push(TrainItem {
                frames,
                a_tokens: tokenize(&p.a_sentence.text, vocab, hyper.n_tokens),
                w_tokens: p
                    .w_sentences
                    .iter()
                    .map(|w| tokenize(&w.text, vocab, hyper.n_tokens))
                    .collect(),
            });
        }
        Ok(Self {
            items,
            frames: hyper.frames,
            feature_dim,
            pad: vocab.pad(),
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub total: f64,
    pub info_nce: Option<f64>,
    pub mil_nce: Option<f64>,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub steps: Vec<StepRecord>,
    pub wall_time_s: f64,
}

impl TrainReport {
    /// `step,total,infonce,milnce,grad_norm`; a part that was not computed is
    /// left empty.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.9}")).unwrap_or_default();
        let mut out = String::from("step,total,infonce,milnce,grad_norm\n");
        for r in &self.steps {
            let _ = writeln!(
                out,
                "{},{:.9},{},{},{:.9}",
                r.step,
                r.total,
                opt(r.info_nce),
                opt(r.mil_nce),
                r.grad_norm
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Picks `m` of the available `W` sentences: distinct when there are enough,
/// otherwise all of them topped up with random repeats.
fn pick_w<'a, R: Rng>(w: &'a [Vec<usize>], m: usize, rng: &mut R) -> Vec<&'a Vec<usize>> {
    if w.len() >= m {
        w.choose_multiple(rng, m).collect()
    } else {
        let mut out: Vec<&Vec<usize>> = w.iter().collect();
        while out.len() < m {
            out.push(&w[rng.random_range(0..w.len())]);
        }
        out
    }
}

fn diverged(step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { .. } => Error::Diverged { step, loss: f64::NAN },
        other => other,
    }
}

/// Shuffled-minibatch training with Adam for `hyper.steps` steps. The last
/// partial batch of every epoch is dropped.
pub fn train(set: &TrainingSet, params: EncoderParams, hyper: &HyperConfig, seed: u64) -> Result<(EncoderParams, TrainReport)> {
    hyper.validate()?;
    if set.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    if set.len() < hyper.batch {
        return Err(Error::contract(format!(
            "batch size {} exceeds the {} available pairs",
            hyper.batch,
            set.len()
        )));
    }
    if set.items.iter().any(|it| it.w_tokens.is_empty()) {
        return Err(Error::contract("every pair needs at least one W sentence"));
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = params;
    let mut adam = AdamState::new(params.tensors(), hyper.lr);
    let epsilon = hyper.effective_epsilon();
    let (b, t) = (hyper.batch, set.frames);

    let mut order: Vec<usize> = (0..set.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut report = TrainReport::default();

    for step in 0..hyper.steps {
        if cursor + b > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let batch = &order[cursor..cursor + b];
        cursor += b;

        let mut tape = Tape::new();
        let p = params.bind(&mut tape, true);
        let frames: Vec<f64> = batch.iter().flat_map(|&i| set.items[i].frames.iter().copied()).collect();
        let frames = tape.constant(Tensor::new(vec![b * t, set.feature_dim], frames)?);
        let chi = encode_clip_on(&mut tape, &p, frames, t).map_err(diverged(step))?;

        let beta = if epsilon > 0.0 {
            let a: Vec<Vec<usize>> = batch.iter().map(|&i| set.items[i].a_tokens.clone()).collect();
            Some(encode_text_on(&mut tape, &p, &a, set.pad, hyper.masked_mean).map_err(diverged(step))?)
        } else {
            None
        };
        let gamma = if epsilon < 1.0 {
            let mut w = Vec::with_capacity(b * hyper.m);
            for &i in batch {
                w.extend(pick_w(&set.items[i].w_tokens, hyper.m, &mut rng).into_iter().cloned());
            }
            Some(encode_text_on(&mut tape, &p, &w, set.pad, hyper.masked_mean).map_err(diverged(step))?)
        } else {
            None
        };

        let loss = combined_loss_on(&mut tape, chi, beta, gamma, hyper.m, hyper.tau, epsilon, hyper.symmetric)
            .map_err(diverged(step))?;
        let total = tape.value(loss.total).item();
        if !total.is_finite() {
            return Err(Error::Diverged { step, loss: total });
        }
        let info = loss.info_nce.map(|v| tape.value(v).item());
        let mil = loss.mil_nce.map(|v| tape.value(v).item());

        let mut grads = tape.backward(loss.total)?;
        let grads: Vec<Tensor> = p
            .vars()
            .iter()
            .map(|&v| grads.take(v).expect("every parameter receives a gradient"))
            .collect();
        let grad_norm = grads.iter().map(|g| g.data().iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
        if !grad_norm.is_finite() {
            return Err(Error::Diverged { step, loss: total });
        }
        adam_step(params.tensors_mut(), &grads, &mut adam)?;

        report.steps.push(StepRecord {
            step,
            total,
            info_nce: info,
            mil_nce: mil,
            grad_norm,
        });
    }
    report.wall_time_s = started.elapsed().as_secs_f64();
    Ok((params, report))
}
