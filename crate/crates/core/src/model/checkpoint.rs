//! Binary checkpoints.
//!
//! Layout (little endian): magic `HELM`, `u32` version, `u64` header length,
//! JSON header, then one record per tensor: `u32` name length, name bytes,
//! `u32` rank, `u64` extents, `f64` values. Optimizer moments are stored as
//! tensors named `adam.m.<param>` and `adam.v.<param>`.

use std::io::{Cursor, Read};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::network::Model;
use crate::autodiff::{AdamW, Tensor};
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const MAGIC: &[u8; 4] = b"HELM";
pub const VERSION: u32 = 1;

/// Serialisable position of a ChaCha generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// `u128` word position, as decimal text.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad rng word position {:?}", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    step: usize,
    rng: RngState,
    adam_steps: u64,
    adam: AdamHeader,
    tensors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AdamHeader {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
}

/// Decoded checkpoint contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    /// Optimizer steps completed when saved.
    pub step: usize,
    pub rng: RngState,
    pub adam_steps: u64,
    pub adam_config: crate::autodiff::AdamWConfig,
    /// Every tensor in file order.
    pub tensors: Vec<(String, Tensor)>,
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&2u32.to_le_bytes());
    out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Encodes the model, optimizer and data generator.
pub fn encode(model: &Model, opt: &AdamW, step: usize, rng: &ChaCha8Rng) -> Vec<u8> {
    let mut records = Vec::new();
    let mut count = 0;
    for (name, t) in model.store.iter() {
        put_tensor(&mut records, name, &t.detached());
        count += 1;
    }
    for (i, (name, t)) in model.store.iter().enumerate() {
        if let Some((m, v)) = opt.moments(i) {
            let m = Tensor::from_vec(t.rows(), t.cols(), m.to_vec()).expect("moment shape");
            let v = Tensor::from_vec(t.rows(), t.cols(), v.to_vec()).expect("moment shape");
            put_tensor(&mut records, &format!("adam.m.{name}"), &m);
            put_tensor(&mut records, &format!("adam.v.{name}"), &v);
            count += 2;
        }
    }
    let c = opt.config;
    let header = Header {
        config: model.cfg.clone(),
        step,
        rng: RngState::capture(rng),
        adam_steps: opt.steps(),
        adam: AdamHeader {
            lr: c.lr,
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.eps,
            weight_decay: c.weight_decay,
        },
        tensors: count,
    };
    let json = serde_json::to_vec(&header).expect("header serialises");
    let mut out = Vec::with_capacity(16 + json.len() + records.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&records);
    out
}

pub fn save(path: &Path, model: &Model, opt: &AdamW, step: usize, rng: &ChaCha8Rng) -> Result<()> {
    write_atomic(path, &encode(model, opt, step, rng))
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn read_exact<const N: usize>(r: &mut Cursor<&[u8]>) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|_| bad("truncated file"))?;
    Ok(buf)
}

fn read_u32(r: &mut Cursor<&[u8]>) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact(r)?))
}

fn read_u64(r: &mut Cursor<&[u8]>) -> Result<u64> {
    Ok(u64::from_le_bytes(read_exact(r)?))
}

fn read_len(r: &mut Cursor<&[u8]>, n: u64, unit: u64) -> Result<usize> {
    let remaining = r.get_ref().len() as u64 - r.position();
    match n.checked_mul(unit) {
        Some(bytes) if bytes <= remaining => Ok(n as usize),
        _ => Err(bad("truncated file")),
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Cursor::new(bytes);
    if &read_exact::<4>(&mut r)? != MAGIC {
        return Err(bad("not a HELM checkpoint"));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let hlen = read_u64(&mut r)?;
    let hlen = read_len(&mut r, hlen, 1)?;
    let mut json = vec![0u8; hlen];
    r.read_exact(&mut json).map_err(|_| bad("truncated header"))?;
    let header: Header =
        serde_json::from_slice(&json).map_err(|e| bad(format!("bad header: {e}")))?;
    header.config.validate()?;
    let mut tensors = Vec::with_capacity(header.tensors);
    for _ in 0..header.tensors {
        let nlen = read_u32(&mut r)? as u64;
        let nlen = read_len(&mut r, nlen, 1)?;
        let mut name = vec![0u8; nlen];
        r.read_exact(&mut name).map_err(|_| bad("truncated file"))?;
        let name = String::from_utf8(name).map_err(|_| bad("tensor name is not UTF-8"))?;
        let rank = read_u32(&mut r)?;
        if rank != 2 {
            return Err(bad(format!("tensor {name} has rank {rank}, expected 2")));
        }
        let rows = read_u64(&mut r)?;
        let cols = read_u64(&mut r)?;
        let n = rows.checked_mul(cols).ok_or_else(|| bad("tensor too large"))?;
        let n = read_len(&mut r, n, 8)?;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_le_bytes(read_exact(&mut r)?));
        }
        tensors.push((name, Tensor::from_vec(rows as usize, cols as usize, data)?));
    }
    if (r.position() as usize) != bytes.len() {
        return Err(bad("trailing bytes after last tensor"));
    }
    let a = header.adam;
    Ok(Checkpoint {
        config: header.config,
        step: header.step,
        rng: header.rng,
        adam_steps: header.adam_steps,
        adam_config: crate::autodiff::AdamWConfig {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            weight_decay: a.weight_decay,
        },
        tensors,
    })
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&std::fs::read(path)?)
}

impl Checkpoint {
    fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Rebuilds the model with the saved parameter values.
    pub fn model(&self) -> Result<Model> {
        let mut model = Model::new(self.config.clone())?;
        let ids: Vec<_> = model.store.ids().collect();
        for id in ids {
            let name = model.store.name(id).to_string();
            let saved = self
                .tensor(&name)
                .ok_or_else(|| bad(format!("missing tensor {name}")))?;
            let t = model.store.get_mut(id);
            if saved.shape() != t.shape() {
                return Err(bad(format!(
                    "tensor {name} has shape {:?}, model expects {:?}",
                    saved.shape(),
                    t.shape()
                )));
            }
            t.data_mut().copy_from_slice(saved.data());
        }
        Ok(model)
    }

    /// Optimizer with the saved moments, matched to `model`'s parameters.
    pub fn optimizer(&self, model: &Model) -> Result<AdamW> {
        let mut opt = AdamW::new(self.adam_config);
        if self.adam_steps == 0 && self.tensor("adam.m.embed").is_none() {
            return Ok(opt);
        }
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (name, t) in model.store.iter() {
            let get = |prefix: &str| {
                self.tensor(&format!("{prefix}.{name}"))
                    .filter(|s| s.shape() == t.shape())
                    .map(|s| s.data().to_vec())
                    .ok_or_else(|| bad(format!("missing or misshapen {prefix}.{name}")))
            };
            m.push(get("adam.m")?);
            v.push(get("adam.v")?);
        }
        opt.restore(self.adam_steps, m, v)?;
        Ok(opt)
    }

    pub fn rng(&self) -> Result<ChaCha8Rng> {
        self.rng.restore()
    }

    /// Parameter tensors, excluding optimizer state.
    pub fn parameters(&self) -> impl Iterator<Item = &(String, Tensor)> {
        self.tensors.iter().filter(|(n, _)| !n.starts_with("adam."))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{component_rng, Variant};
    use rand::Rng;

    fn tiny() -> ModelConfig {
        let mut c = ModelConfig::micro(Variant::HelmMice);
        c.seq_len = 8;
        c
    }

    #[test]
    fn round_trip_is_exact() {
        let model = Model::new(tiny()).unwrap();
        let opt = AdamW::new(model.cfg.train.adamw());
        let mut rng = component_rng(3, 2);
        let _: u64 = rng.random();
        let bytes = encode(&model, &opt, 7, &rng);
        let ck = decode(&bytes).unwrap();
        assert_eq!(ck.step, 7);
        let back = ck.model().unwrap();
        assert_eq!(back.store, model.store);
        let mut r2 = ck.rng().unwrap();
        assert_eq!(r2.random::<u64>(), rng.random::<u64>());
    }

    #[test]
    fn rejects_corruption() {
        let model = Model::new(tiny()).unwrap();
        let opt = AdamW::new(model.cfg.train.adamw());
        let bytes = encode(&model, &opt, 0, &component_rng(0, 0));
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(decode(&wrong).is_err());
        assert!(decode(&[]).is_err());
    }
}
