use std::collections::HashMap;

use rust_stemmers::{Algorithm, Stemmer};
use serde::Serialize;

use crate::error::{Error, Result};

/// Lowercased whitespace tokens with surrounding ASCII punctuation removed.
pub fn words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *out.entry(g).or_insert(0) += 1;
        }
    }
    out
}

/// Sentence BLEU up to order `n`: clipped n-gram precisions combined by a
/// geometric mean, times the brevity penalty against the closest reference
/// length. Unsmoothed, so any order without a match gives 0.
pub fn bleu_n<S: AsRef<str>>(candidate: &str, references: &[S], n: usize) -> Result<f64> {
    if !(1..=4).contains(&n) {
        return Err(Error::Config(vec![format!("BLEU order {n} is outside 1..=4")]));
    }
    let cand = words(candidate);
    if cand.is_empty() || references.is_empty() {
        return Ok(0.0);
    }
    let refs: Vec<Vec<String>> = references.iter().map(|r| words(r.as_ref())).collect();
    let mut log_sum = 0.0;
    for k in 1..=n {
        let counts = ngrams(&cand, k);
        let total: usize = counts.values().sum();
        if total == 0 {
            return Ok(0.0);
        }
        let ref_counts: Vec<HashMap<&[String], usize>> = refs.iter().map(|r| ngrams(r, k)).collect();
        let clipped: usize = counts
            .iter()
            .map(|(g, &c)| c.min(ref_counts.iter().map(|rc| rc.get(g).copied().unwrap_or(0)).max().unwrap_or(0)))
            .sum();
        if clipped == 0 {
            return Ok(0.0);
        }
        log_sum += (clipped as f64 / total as f64).ln();
    }
    // Closest reference length, the shorter one on ties.
    let r = refs
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(cand.len()), len))
        .unwrap_or(0) as f64;
    let c = cand.len() as f64;
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    Ok(bp * (log_sum / n as f64).exp())
}

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0; b.len() + 1];
    for x in a {
        let mut cur = vec![0; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        prev = cur;
    }
    prev[b.len()]
}

const ROUGE_BETA: f64 = 1.2;

/// ROUGE-L F-measure with `beta = 1.2`. Two empty sentences score 0.
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let (c, r) = (words(candidate), words(reference));
    let l = lcs(&c, &r);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / c.len() as f64;
    let rec = l as f64 / r.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * rec / (rec + b2 * p)
}

/// METEOR with exact and stemmed unigram matching only (no synonym
/// tables): `Fmean = 10PR / (R + 9P)`, penalty `0.5 (chunks / m)^3`.
/// Alignment is greedy left to right, exact matches first.
pub fn meteor_basic(candidate: &str, reference: &str) -> f64 {
    let (c, r) = (words(candidate), words(reference));
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let stemmer = Stemmer::create(Algorithm::English);
    let mut link: Vec<Option<usize>> = vec![None; c.len()];
    let mut used = vec![false; r.len()];
    let stage = |key: &dyn Fn(&str) -> String, link: &mut Vec<Option<usize>>, used: &mut Vec<bool>| {
        for (i, w) in c.iter().enumerate() {
            if link[i].is_some() {
                continue;
            }
            let k = key(w);
            if let Some(j) = (0..r.len()).find(|&j| !used[j] && key(&r[j]) == k) {
                link[i] = Some(j);
                used[j] = true;
            }
        }
    };
    stage(&|w| w.to_string(), &mut link, &mut used);
    stage(&|w| stemmer.stem(w).into_owned(), &mut link, &mut used);

    let m = link.iter().flatten().count();
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / c.len() as f64;
    let rec = m as f64 / r.len() as f64;
    let fmean = 10.0 * p * rec / (rec + 9.0 * p);
    let mut chunks = 0;
    let mut prev: Option<usize> = None;
    for l in &link {
        match (*l, prev) {
            (Some(j), Some(pj)) if j == pj + 1 => {}
            (Some(_), _) => chunks += 1,
            (None, _) => {}
        }
        prev = *l;
    }
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    fmean * (1.0 - penalty)
}

/// Mean sentence-level scores over a caption set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct CaptionScores {
    pub bleu: [f64; 4],
    pub meteor: f64,
    pub rouge_l: f64,
    pub n: usize,
}

/// Scores `(candidate, reference)` pairs. METEOR and ROUGE-L take the best
/// reference; BLEU uses all of them.
pub fn score_captions<S: AsRef<str>>(items: &[(String, Vec<S>)]) -> Result<CaptionScores> {
    if items.is_empty() {
        return Err(Error::EmptyInput("score_captions"));
    }
    let mut s = CaptionScores {
        n: items.len(),
        ..CaptionScores::default()
    };
    for (cand, refs) in items {
        if refs.is_empty() {
            return Err(Error::contract(format!("caption {cand:?} has no reference")));
        }
        for k in 0..4 {
            s.bleu[k] += bleu_n(cand, refs, k + 1)?;
        }
        let best = |f: &dyn Fn(&str, &str) -> f64| refs.iter().map(|r| f(cand, r.as_ref())).fold(0.0, f64::max);
        s.meteor += best(&meteor_basic);
        s.rouge_l += best(&rouge_l);
    }
    let n = items.len() as f64;
    s.bleu.iter_mut().for_each(|b| *b /= n);
    s.meteor /= n;
    s.rouge_l /= n;
    Ok(s)
}
