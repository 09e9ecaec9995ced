use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcore::{Tape, Tensor, Var};

pub const DECODER_PARAM_NAMES: [&str; 17] = [
    "embed", "init_w", "init_b", "wz", "uz", "cz", "bz", "wr", "ur", "cr", "br", "wn", "un", "cn", "bn", "out_w",
    "out_b",
];

/// Gated recurrent decoder conditioned on a latent: the latent sets the
/// initial state and feeds every gate.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams {
    tensors: Vec<Tensor>,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct BoundDecoder {
    vars: [Var; 17],
}

impl BoundDecoder {
    fn v(&self, name: &str) -> Var {
        self.vars[DECODER_PARAM_NAMES.iter().position(|n| *n == name).expect("known name")]
    }

    pub(crate) fn vars(&self) -> [Var; 17] {
        self.vars
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], std: f64) -> Tensor {
    let data = (0..shape.iter().product())
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            std * z
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

fn glorot<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    gaussian(rng, &[fan_in, fan_out], (2.0 / (fan_in + fan_out) as f64).sqrt())
}

impl DecoderParams {
    pub fn init<R: Rng + ?Sized>(vocab_size: usize, d: usize, embed_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let (v, e, h) = (vocab_size, embed_dim, hidden_dim);
        let mut tensors = vec![gaussian(rng, &[v, e], 0.1), glorot(rng, d, h), Tensor::zeros(&[h])];
        for _ in 0..3 {
            tensors.push(glorot(rng, e, h));
            tensors.push(glorot(rng, h, h));
            tensors.push(glorot(rng, d, h));
            tensors.push(Tensor::zeros(&[h]));
        }
        tensors.push(glorot(rng, h, v));
        tensors.push(Tensor::zeros(&[v]));
        Self { tensors }
    }

    pub fn from_tensors(tensors: Vec<Tensor>) -> Result<Self> {
        if tensors.len() != DECODER_PARAM_NAMES.len() {
            return Err(Error::contract(format!(
                "decoder needs {} tensors, got {}",
                DECODER_PARAM_NAMES.len(),
                tensors.len()
            )));
        }
        if tensors.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite { op: "decoder params" });
        }
        let p = Self { tensors };
        let (v, h) = (p.vocab_size(), p.hidden_dim());
        if p.tensors[15].shape() != [h, v] || p.tensors[1].shape() != [p.d(), h] {
            return Err(Error::contract("decoder tensor shapes are inconsistent"));
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

    pub fn d(&self) -> usize {
        self.tensors[1].rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.tensors[1].cols()
    }

    pub(crate) fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundDecoder {
        let vars: Vec<Var> = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        BoundDecoder {
            vars: vars.try_into().expect("17 decoder tensors"),
        }
    }
}

/// Per-gate latent contributions, computed once per sequence batch.
pub(crate) struct Context {
    z: Var,
    r: Var,
    n: Var,
}

/// Initial state `tanh(latent W + b)` and the latent's gate terms.
pub(crate) fn start(tape: &mut Tape, p: &BoundDecoder, latent: Var) -> Result<(Var, Context)> {
    let h = tape.matmul(latent, p.v("init_w"))?;
    let h = tape.add_bias(h, p.v("init_b"))?;
    let h = tape.tanh(h)?;
    let ctx = Context {
        z: tape.matmul(latent, p.v("cz"))?,
        r: tape.matmul(latent, p.v("cr"))?,
        n: tape.matmul(latent, p.v("cn"))?,
    };
    Ok((h, ctx))
}

fn gate(tape: &mut Tape, x: Var, h: Var, w: Var, u: Var, c: Var, b: Var) -> Result<Var> {
    let a = tape.matmul(x, w)?;
    let u = tape.matmul(h, u)?;
    let s = tape.add(a, u)?;
    let s = tape.add(s, c)?;
    tape.add_bias(s, b)
}

/// One recurrent step on the tokens `ids`; returns the new state and the
/// vocabulary logits.
pub(crate) fn step(tape: &mut Tape, p: &BoundDecoder, ctx: &Context, h: Var, ids: &[usize]) -> Result<(Var, Var)> {
    let x = tape.gather_rows(p.v("embed"), ids)?;
    let z = gate(tape, x, h, p.v("wz"), p.v("uz"), ctx.z, p.v("bz"))?;
    let z = tape.sigmoid(z)?;
    let r = gate(tape, x, h, p.v("wr"), p.v("ur"), ctx.r, p.v("br"))?;
    let r = tape.sigmoid(r)?;

    let rh = tape.mul(r, h)?;
    let n = gate(tape, x, rh, p.v("wn"), p.v("un"), ctx.n, p.v("bn"))?;
    let n = tape.tanh(n)?;
    // h' = (1 - z) * n + z * h
    let diff = tape.sub(h, n)?;
    let keep = tape.mul(z, diff)?;
    let h = tape.add(n, keep)?;

    let logits = tape.matmul(h, p.v("out_w"))?;
    let logits = tape.add_bias(logits, p.v("out_b"))?;
    Ok((h, logits))
}

#[derive(Serialize, Deserialize)]
struct StoredTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Serialize for DecoderParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let stored: Vec<StoredTensor> = DECODER_PARAM_NAMES
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| StoredTensor {
                name: n.to_string(),
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect();
        stored.serialize(s)
    }
}

impl<'de> Deserialize<'de> for DecoderParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let stored = Vec::<StoredTensor>::deserialize(d)?;
        let mut tensors = Vec::with_capacity(stored.len());
        for (s, name) in stored.into_iter().zip(DECODER_PARAM_NAMES) {
            if s.name != name {
                return Err(D::Error::custom(format!("expected tensor {name:?}, found {:?}", s.name)));
            }
            tensors.push(Tensor::new(s.shape, s.data).map_err(D::Error::custom)?);
        }
        DecoderParams::from_tensors(tensors).map_err(D::Error::custom)
    }
}
