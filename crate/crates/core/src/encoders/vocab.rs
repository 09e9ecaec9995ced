use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const BOS: &str = "[BOS]";
pub const EOS: &str = "[EOS]";

/// Marks a piece that continues the previous one inside a word.
pub const CONTINUATION: &str = "##";

/// Smallest vocabulary that still holds the specials and the printable
/// ASCII fallback pieces in both positions.
pub const MIN_VOCAB_SIZE: usize = 260;

/// Whole-word vocabulary with single-character fallback pieces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabFile", into = "VocabFile")]
pub struct SubwordVocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
}

impl From<VocabFile> for SubwordVocab {
    fn from(f: VocabFile) -> Self {
        Self::from_tokens(f.tokens)
    }
}

impl From<SubwordVocab> for VocabFile {
    fn from(v: SubwordVocab) -> Self {
        VocabFile { tokens: v.tokens }
    }
}

impl SubwordVocab {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn pad(&self) -> usize {
        0
    }

    pub fn unk(&self) -> usize {
        1
    }

    pub fn bos(&self) -> usize {
        2
    }

    pub fn eos(&self) -> usize {
        3
    }

    pub fn is_special(&self, id: usize) -> bool {
        id < 4
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Greedy longest match over whitespace-split words, without padding.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            self.encode_word(word, &mut out);
        }
        out
    }

    fn encode_word(&self, word: &str, out: &mut Vec<usize>) {
        if let Some(id) = self.id(word) {
            out.push(id);
            return;
        }
        let bounds: Vec<usize> = word.char_indices().map(|(i, _)| i).chain([word.len()]).collect();
        let mut p = 0;
        while p + 1 < bounds.len() {
            let prefix = if p == 0 { "" } else { CONTINUATION };
            let hit = (p + 1..bounds.len()).rev().find_map(|q| {
                let piece = format!("{prefix}{}", &word[bounds[p]..bounds[q]]);
                self.id(&piece).map(|id| (id, q))
            });
            match hit {
                Some((id, q)) => {
                    out.push(id);
                    p = q;
                }
                None => {
                    out.push(self.unk());
                    p += 1;
                }
            }
        }
    }

    /// Joins pieces back into text; specials are dropped.
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        for &id in ids {
            if self.is_special(id) {
                continue;
            }
            let Some(tok) = self.token(id) else { continue };
            match tok.strip_prefix(CONTINUATION) {
                Some(rest) if !rest.is_empty() => out.push_str(rest),
                _ => {
                    if !out.is_empty() {
                        out.push(' ');
                    }
                    out.push_str(tok);
                }
            }
        }
        out
    }
}

/// Builds a vocabulary from `texts`: the four specials, then whole words by
/// descending frequency (ties in first-seen order), then every fallback
/// character in word-initial and continuation form. Words are added until the
/// table reaches `target_size`.
pub fn build_vocab<S: AsRef<str>>(texts: &[S], target_size: usize) -> Result<SubwordVocab> {
    if target_size < MIN_VOCAB_SIZE {
        return Err(Error::Config(vec![format!(
            "target_size = {target_size} is below the minimum of {MIN_VOCAB_SIZE}"
        )]));
    }
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    let mut chars: Vec<char> = (0x21u8..=0x7e).map(char::from).collect();
    for text in texts {
        for word in text.as_ref().split_whitespace() {
            let next = counts.len();
            counts.entry(word).or_insert((0, next)).0 += 1;
            for c in word.chars() {
                if !chars.contains(&c) {
                    chars.push(c);
                }
            }
        }
    }
    if counts.is_empty() {
        return Err(Error::EmptyInput("build_vocab"));
    }

    let mut tokens: Vec<String> = [PAD, UNK, BOS, EOS].iter().map(|s| s.to_string()).collect();
    let mut fallback = Vec::with_capacity(2 * chars.len());
    for c in &chars {
        fallback.push(c.to_string());
        fallback.push(format!("{CONTINUATION}{c}"));
    }
    let mut ranked: Vec<(&str, (usize, usize))> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
    let budget = target_size.saturating_sub(tokens.len() + fallback.len());
    let mut taken = 0;
    for (word, _) in ranked {
        if taken == budget {
            break;
        }
        if word.chars().count() > 1 {
            tokens.push(word.to_string());
            taken += 1;
        }
    }
    tokens.extend(fallback);
    Ok(SubwordVocab::from_tokens(tokens))
}

/// Token ids of `text`, padded with the pad id or truncated to exactly `n`.
pub fn tokenize(text: &str, vocab: &SubwordVocab, n: usize) -> Vec<usize> {
    let mut ids = vocab.encode(text);
    ids.resize(n, vocab.pad());
    ids
}
