//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! | bytes          | content                                               |
//! |----------------|-------------------------------------------------------|
//! | 8              | magic `UCGANCKP`                                      |
//! | 4              | format version (`u32`)                                |
//! | 8              | header length `h` (`u64`)                             |
//! | h              | UTF-8 JSON header (see [`Header`])                    |
//! | 4 · Σ numel    | tensor payload, `f32` values in header order          |
//! | 32             | SHA-256 of every preceding byte                       |
//!
//! The header records the run config, iteration counters, RNG position, loss
//! history, network layouts and a tensor index of `(name, shape)` pairs.
//! Tensors cover generator and discriminator parameters, both optimisers'
//! moment buffers and the persisted power-iteration vectors.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gan::{Discriminator, DiscriminatorKind, Generator};
use crate::numerics::rng::SeededRng;
use crate::numerics::{AdamConfig, AdamState, Network, ParamStore, SpectralState, Tensor};
use crate::training::run::LastLosses;
use crate::training::{RunHistory, TrainConfig, TrainState};

pub const MAGIC: &[u8; 8] = b"UCGANCKP";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;
const PREAMBLE: usize = 8 + 4 + 8;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    iteration: usize,
    rng: SeededRng,
    history: RunHistory,
    last_terms: LastLosses,
    generator_network: Network,
    noise_dim: usize,
    feature_dim: usize,
    conditioned: bool,
    discriminator_network: Network,
    discriminator_kind: DiscriminatorKind,
    spectral: bool,
    generator_opt: (AdamConfig, u64),
    discriminator_opt: (AdamConfig, u64),
    tensors: Vec<TensorEntry>,
}

fn ckpt_err(m: impl Into<String>) -> Error {
    Error::Checkpoint(m.into())
}

fn collect(prefix: &str, store: &ParamStore, index: &mut Vec<TensorEntry>, payload: &mut Vec<u8>) {
    for (name, t) in store.iter() {
        index.push(TensorEntry {
            name: format!("{prefix}/{name}"),
            shape: t.shape().to_vec(),
        });
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn encode(state: &TrainState) -> Result<Vec<u8>> {
    let mut index = Vec::new();
    let mut payload = Vec::new();
    collect("gen", &state.generator.params, &mut index, &mut payload);
    collect("gen_m", &state.generator_opt.m, &mut index, &mut payload);
    collect("gen_v", &state.generator_opt.v, &mut index, &mut payload);
    collect("disc", &state.discriminator.params, &mut index, &mut payload);
    collect("disc_m", &state.discriminator_opt.m, &mut index, &mut payload);
    collect("disc_v", &state.discriminator_opt.v, &mut index, &mut payload);
    if let Some(sn) = &state.discriminator.spectral {
        let mut vectors = ParamStore::new();
        for (name, u) in &sn.vectors {
            vectors.insert(name.clone(), Tensor::from_vec(u.clone()))?;
        }
        collect("sn", &vectors, &mut index, &mut payload);
    }
    let header = Header {
        config: state.config.clone(),
        iteration: state.iteration,
        rng: state.rng.clone(),
        history: state.history.clone(),
        last_terms: state.last_terms,
        generator_network: state.generator.network.clone(),
        noise_dim: state.generator.noise_dim,
        feature_dim: state.generator.feature_dim,
        conditioned: state.generator.conditioned,
        discriminator_network: state.discriminator.network.clone(),
        discriminator_kind: state.discriminator.kind,
        spectral: state.discriminator.spectral.is_some(),
        generator_opt: (state.generator_opt.config, state.generator_opt.t),
        discriminator_opt: (state.discriminator_opt.config, state.discriminator_opt.t),
        tensors: index,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(PREAMBLE + json.len() + payload.len() + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<TrainState> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(ckpt_err("not a checkpoint (bad magic)"));
    }
    if bytes.len() < PREAMBLE + DIGEST_LEN {
        return Err(ckpt_err(format!("truncated: {} bytes", bytes.len())));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(ckpt_err(format!("unsupported version {version}, expected {VERSION}")));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(ckpt_err("checksum mismatch (corrupt or truncated file)"));
    }
    let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes"));
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|h| h.checked_add(PREAMBLE))
        .filter(|&e| e <= body.len())
        .ok_or_else(|| ckpt_err("header length exceeds file"))?;
    let header: Header = serde_json::from_slice(&body[PREAMBLE..header_end])?;
    let mut payload = &body[header_end..];

    let mut stores: std::collections::BTreeMap<String, ParamStore> = Default::default();
    for entry in &header.tensors {
        let numel = entry
            .shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n.checked_mul(4).is_some_and(|b| b <= payload.len()))
            .ok_or_else(|| ckpt_err(format!("tensor {} exceeds payload", entry.name)))?;
        let (chunk, rest) = payload.split_at(numel * 4);
        payload = rest;
        let data = chunk
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let (group, name) = entry
            .name
            .split_once('/')
            .ok_or_else(|| ckpt_err(format!("malformed tensor name {}", entry.name)))?;
        stores
            .entry(group.to_string())
            .or_default()
            .insert(name, Tensor::new(entry.shape.clone(), data)?)?;
    }
    if !payload.is_empty() {
        return Err(ckpt_err(format!("{} unaccounted payload bytes", payload.len())));
    }
    let mut take = |g: &str| stores.remove(g).unwrap_or_default();
    let generator = Generator {
        network: header.generator_network,
        params: take("gen"),
        noise_dim: header.noise_dim,
        feature_dim: header.feature_dim,
        conditioned: header.conditioned,
    };
    let expected_input = header.noise_dim + if header.conditioned { header.feature_dim } else { 0 };
    if generator.network.input_shape != [expected_input] {
        return Err(ckpt_err(
            "generator input width does not match its noise and code dimensions",
        ));
    }
    let generator_opt = AdamState {
        config: header.generator_opt.0,
        t: header.generator_opt.1,
        m: take("gen_m"),
        v: take("gen_v"),
    };
    let disc_params = take("disc");
    let discriminator_opt = AdamState {
        config: header.discriminator_opt.0,
        t: header.discriminator_opt.1,
        m: take("disc_m"),
        v: take("disc_v"),
    };
    let spectral = header.spectral.then(|| SpectralState {
        vectors: take("sn").iter().map(|(k, t)| (k.clone(), t.data().to_vec())).collect(),
    });
    let discriminator = Discriminator {
        kind: header.discriminator_kind,
        network: header.discriminator_network,
        params: disc_params,
        spectral,
    };
    check_layout(&generator.network, &generator.params, &generator_opt)?;
    check_layout(&discriminator.network, &discriminator.params, &discriminator_opt)?;
    if let Some(sn) = &discriminator.spectral {
        let names = discriminator.network.weight_names();
        if sn.vectors.keys().ne(names.iter()) {
            return Err(ckpt_err("spectral vectors do not match discriminator weights"));
        }
    }
    Ok(TrainState {
        config: header.config,
        iteration: header.iteration,
        generator,
        discriminator,
        generator_opt,
        discriminator_opt,
        rng: header.rng,
        history: header.history,
        last_terms: header.last_terms,
    })
}

/// Parameters and moments must be exactly what the network would initialise.
fn check_layout(net: &Network, params: &ParamStore, opt: &AdamState) -> Result<()> {
    net.shapes()
        .map_err(|e| ckpt_err(format!("invalid network layout: {e}")))?;
    let expected = net.init(&mut crate::numerics::rng::seeded(0))?;
    for store in [params, &opt.m, &opt.v] {
        let same = store.len() == expected.len()
            && store
                .iter()
                .zip(expected.iter())
                .all(|((a, ta), (b, tb))| a == b && ta.shape() == tb.shape());
        if !same {
            return Err(ckpt_err(format!("tensors do not match network {}", net.prefix)));
        }
    }
    Ok(())
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let bytes = encode(state)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
