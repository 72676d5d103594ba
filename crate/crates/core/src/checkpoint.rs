//! Versioned checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "BKTCKPT\0"
//! version u32
//! hlen    u64      length of the JSON header
//! header  hlen bytes of UTF-8 JSON
//! blob    raw tensor data, offsets given by the header
//! ```
//!
//! The header carries the architecture descriptors, the full training
//! configuration, the step count, the element type, a table of every tensor
//! (parameters and optimizer moments) and the random generator position.
//! Readers accept any file with the same major version; unknown header
//! fields are ignored.

use std::fs;
use std::io::Write;
use std::path::Path;

use bkt_tensor::{Adam, AdamConfig, ParamSet, Real, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::TrainingConfig;
use crate::networks::{Critic, SegNet};
use crate::trainer::{CriticState, TrainerState};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"BKTCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct GroupHeader {
    adam_step: u64,
    params: Vec<TensorEntry>,
    first_moment: Vec<TensorEntry>,
    second_moment: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct RngHeader {
    seed: Vec<u8>,
    stream: u64,
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    step: u64,
    config: TrainingConfig,
    seg: SegNet,
    outer: Option<Critic>,
    inner: Option<Critic>,
    theta: GroupHeader,
    phi_outer: Option<GroupHeader>,
    phi_inner: Option<GroupHeader>,
    rng: RngHeader,
}

struct BlobWriter {
    blob: Vec<u8>,
}

impl BlobWriter {
    fn put<T: Real>(&mut self, name: &str, t: &Tensor<T>) -> TensorEntry {
        let offset = self.blob.len() as u64;
        self.blob.extend_from_slice(&t.to_le_bytes());
        TensorEntry { name: name.to_string(), shape: t.shape().to_vec(), offset }
    }

    fn group<T: Real>(&mut self, params: &ParamSet<T>, adam: &Adam<T>) -> GroupHeader {
        let names = params.names();
        GroupHeader {
            adam_step: adam.step,
            params: names.iter().zip(params.tensors()).map(|(n, t)| self.put(n, t)).collect(),
            first_moment: names.iter().zip(&adam.first_moment).map(|(n, t)| self.put(n, t)).collect(),
            second_moment: names.iter().zip(&adam.second_moment).map(|(n, t)| self.put(n, t)).collect(),
        }
    }
}

/// Serializes a trainer state.
pub fn to_bytes<T: Real>(state: &TrainerState<T>) -> Vec<u8> {
    let mut w = BlobWriter { blob: Vec::new() };
    let theta = w.group(&state.theta, &state.adam_theta);
    let phi_outer = state.outer.as_ref().map(|c| w.group(&c.params, &c.adam));
    let phi_inner = state.inner.as_ref().map(|c| w.group(&c.params, &c.adam));
    let header = Header {
        dtype: T::DTYPE.to_string(),
        step: state.step,
        config: state.config.clone(),
        seg: state.seg.clone(),
        outer: state.outer.as_ref().map(|c| c.net.clone()),
        inner: state.inner.as_ref().map(|c| c.net.clone()),
        theta,
        phi_outer,
        phi_inner,
        rng: RngHeader {
            seed: state.rng.get_seed().to_vec(),
            stream: state.rng.get_stream(),
            word_pos: state.rng.get_word_pos().to_string(),
        },
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(24 + json.len() + w.blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&w.blob);
    out
}

fn bad(m: impl Into<String>) -> Error {
    Error::Checkpoint(m.into())
}

fn read_tensor<T: Real>(blob: &[u8], e: &TensorEntry) -> Result<Tensor<T>> {
    let n: usize = e.shape.iter().product();
    let start = e.offset as usize;
    let end = start + n * T::BYTES;
    let bytes = blob.get(start..end).ok_or_else(|| bad(format!("tensor `{}` runs past the end of the file", e.name)))?;
    Ok(Tensor::from_le_bytes(&e.shape, bytes))
}

fn read_group<T: Real>(blob: &[u8], g: &GroupHeader, adam: AdamConfig) -> Result<(ParamSet<T>, Adam<T>)> {
    let mut params = ParamSet::new();
    for e in &g.params {
        params.push(e.name.clone(), read_tensor(blob, e)?);
    }
    if g.first_moment.len() != g.params.len() || g.second_moment.len() != g.params.len() {
        return Err(bad("optimizer state does not match parameters"));
    }
    let mut state = Adam::new(adam, &params);
    state.step = g.adam_step;
    for (i, (m, v)) in g.first_moment.iter().zip(&g.second_moment).enumerate() {
        state.first_moment[i] = read_tensor(blob, m)?;
        state.second_moment[i] = read_tensor(blob, v)?;
        if state.first_moment[i].shape() != params.get(i).shape() || state.second_moment[i].shape() != params.get(i).shape() {
            return Err(bad(format!("moment shape mismatch for `{}`", g.params[i].name)));
        }
    }
    Ok((params, state))
}

/// Parses a serialized trainer state.
pub fn from_bytes<T: Real>(bytes: &[u8]) -> Result<TrainerState<T>> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let json = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(json)?;
    if header.dtype != T::DTYPE {
        return Err(bad(format!("checkpoint holds {} values, expected {}", header.dtype, T::DTYPE)));
    }
    let blob = &bytes[20 + hlen..];
    let cfg = header.config;
    let adam = AdamConfig { lr: cfg.adam_alpha, beta1: cfg.adam_beta1, beta2: cfg.adam_beta2, eps: 1e-8 };
    let (theta, adam_theta) = read_group(blob, &header.theta, adam)?;
    let critic = |net: Option<Critic>, g: &Option<GroupHeader>| -> Result<Option<CriticState<T>>> {
        match (net, g) {
            (Some(net), Some(g)) => {
                let (params, adam) = read_group(blob, g, adam)?;
                Ok(Some(CriticState { net, params, adam }))
            }
            (None, None) => Ok(None),
            _ => Err(bad("critic descriptor without parameters")),
        }
    };
    let outer = critic(header.outer, &header.phi_outer)?;
    let inner = critic(header.inner, &header.phi_inner)?;
    let seed: [u8; 32] = header.rng.seed.as_slice().try_into().map_err(|_| bad("rng seed must be 32 bytes"))?;
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::from_seed(seed);
    rng.set_stream(header.rng.stream);
    rng.set_word_pos(header.rng.word_pos.parse().map_err(|_| bad("rng position"))?);
    Ok(TrainerState { step: header.step, config: cfg, seg: header.seg, theta, adam_theta, outer, inner, rng })
}

/// Writes atomically: a temporary sibling is renamed over `path`.
pub fn save<T: Real>(state: &TrainerState<T>, path: &Path) -> Result<()> {
    let bytes = to_bytes(state);
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load<T: Real>(path: &Path) -> Result<TrainerState<T>> {
    from_bytes(&fs::read(path)?)
}
