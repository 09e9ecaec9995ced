use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{HyperConfig, SubwordVocab};
use crate::error::{Error, Result};
use crate::gradcore::{Tape, Tensor, Var};

pub const PARAM_NAMES: [&str; 13] = [
    "tok_embed",
    "text_w1",
    "text_b1",
    "text_w2",
    "text_b2",
    "text_proj",
    "text_proj_b",
    "frame_w1",
    "frame_b1",
    "frame_w2",
    "frame_b2",
    "frame_proj",
    "frame_proj_b",
];

/// Weights of both encoder branches, stored in [`PARAM_NAMES`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    tensors: Vec<Tensor>,
}

/// The parameters placed on a tape.
#[derive(Clone, Copy, Debug)]
pub struct BoundParams {
    pub tok_embed: Var,
    pub text_w1: Var,
    pub text_b1: Var,
    pub text_w2: Var,
    pub text_b2: Var,
    pub text_proj: Var,
    pub text_proj_b: Var,
    pub frame_w1: Var,
    pub frame_b1: Var,
    pub frame_w2: Var,
    pub frame_b2: Var,
    pub frame_proj: Var,
    pub frame_proj_b: Var,
}

impl BoundParams {
    pub fn vars(&self) -> [Var; 13] {
        [
            self.tok_embed,
            self.text_w1,
            self.text_b1,
            self.text_w2,
            self.text_b2,
            self.text_proj,
            self.text_proj_b,
            self.frame_w1,
            self.frame_b1,
            self.frame_w2,
            self.frame_b2,
            self.frame_proj,
            self.frame_proj_b,
        ]
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], std: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            std * z
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

fn kaiming<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    gaussian(rng, &[fan_in, fan_out], (2.0 / fan_in as f64).sqrt())
}

impl EncoderParams {
    /// He-initialized weights, zero biases and unit-Gaussian embeddings.
    pub fn init<R: Rng + ?Sized>(vocab_size: usize, feature_dim: usize, hyper: &HyperConfig, rng: &mut R) -> Self {
        let (e, h, d) = (hyper.embed_dim, hyper.hidden_dim, hyper.d);
        let tensors = vec![
            gaussian(rng, &[vocab_size, e], 1.0),
            kaiming(rng, e, h),
            Tensor::zeros(&[h]),
            kaiming(rng, h, h),
            Tensor::zeros(&[h]),
            kaiming(rng, h, d),
            Tensor::zeros(&[d]),
            kaiming(rng, feature_dim, h),
            Tensor::zeros(&[h]),
            kaiming(rng, h, h),
            Tensor::zeros(&[h]),
            kaiming(rng, h, d),
            Tensor::zeros(&[d]),
        ];
        Self { tensors }
    }

    pub fn from_tensors(tensors: Vec<Tensor>) -> Result<Self> {
        if tensors.len() != PARAM_NAMES.len() {
            return Err(Error::contract(format!(
                "expected {} tensors, got {}",
                PARAM_NAMES.len(),
                tensors.len()
            )));
        }
        let p = Self { tensors };
        let (dt, df) = (p.tensors[5].cols(), p.tensors[11].cols());
        if dt != df {
            return Err(Error::Dimension {
                op: "encoder latent size",
                left: vec![dt],
                right: vec![df],
            });
        }
        if p.tensors.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite { op: "encoder params" });
        }
        Ok(p)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn vocab_size(&self) -> usize {
        self.tensors[0].rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.tensors[7].rows()
    }

    pub fn d(&self) -> usize {
        self.tensors[5].cols()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        let mut v = self.tensors.iter().map(|t| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        });
        let mut next = || v.next().expect("13 tensors");
        BoundParams {
            tok_embed: next(),
            text_w1: next(),
            text_b1: next(),
            text_w2: next(),
            text_b2: next(),
            text_proj: next(),
            text_proj_b: next(),
            frame_w1: next(),
            frame_b1: next(),
            frame_w2: next(),
            frame_b2: next(),
            frame_proj: next(),
            frame_proj_b: next(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    tensors: Vec<ManifestEntry>,
}

/// Writes `params.f32` (little-endian f32), `params.json` (tensor names,
/// shapes and element offsets), `vocab.json` and `hyper.json` into `dir`.
pub fn save_checkpoint(dir: &Path, params: &EncoderParams, vocab: &SubwordVocab, hyper: &HyperConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut bytes = Vec::new();
    let mut entries = Vec::new();
    let mut offset = 0;
    for (name, t) in PARAM_NAMES.iter().zip(params.tensors()) {
        entries.push(ManifestEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.len();
        for &x in t.data() {
            bytes.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    fs::write(dir.join("params.f32"), bytes)?;
    fs::write(dir.join("params.json"), serde_json::to_vec_pretty(&Manifest { tensors: entries })?)?;
    fs::write(dir.join("vocab.json"), serde_json::to_vec(vocab)?)?;
    fs::write(dir.join("hyper.json"), serde_json::to_vec_pretty(hyper)?)?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })
}

pub fn load_checkpoint(dir: &Path) -> Result<(EncoderParams, SubwordVocab, HyperConfig)> {
    let manifest: Manifest = read_json(&dir.join("params.json"))?;
    let bin = dir.join("params.f32");
    let bytes = fs::read(&bin)?;
    let total: usize = manifest.tensors.iter().map(|e| e.shape.iter().product::<usize>()).sum();
    if bytes.len() != total * 4 {
        return Err(Error::Integrity {
            path: bin,
            expected: (total * 4) as u64,
            actual: bytes.len() as u64,
        });
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let mut tensors = Vec::new();
    for (entry, name) in manifest.tensors.iter().zip(PARAM_NAMES) {
        if entry.name != name {
            return Err(Error::contract(format!("manifest lists {:?} where {name:?} was expected", entry.name)));
        }
        let n: usize = entry.shape.iter().product();
        tensors.push(Tensor::new(entry.shape.clone(), values[entry.offset..entry.offset + n].to_vec())?);
    }
    let params = EncoderParams::from_tensors(tensors)?;
    let vocab: SubwordVocab = read_json(&dir.join("vocab.json"))?;
    let hyper: HyperConfig = read_json(&dir.join("hyper.json"))?;
    if vocab.len() != params.vocab_size() {
        return Err(Error::contract(format!(
            "vocabulary has {} entries but the embedding table has {} rows",
            vocab.len(),
            params.vocab_size()
        )));
    }
    Ok((params, vocab, hyper))
}
