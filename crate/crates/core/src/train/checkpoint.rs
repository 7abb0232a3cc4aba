//! Checkpoint directories: `manifest.txt`, `params.bin` and `embeddings.txt`.
//!
//! The manifest is line oriented:
//!
//! ```text
//! mtmn-checkpoint 1
//! seed 7
//! config {"embed_dim":8,...}
//! categories ["FOOD","SERVICE"]
//! echo <free text>
//! param encoder.w_z 4,8 0 32
//! ```
//!
//! `param` lines give name, shape, offset and length in `f64` units into
//! `params.bin`, which holds little-endian values in manifest order.

use std::fs;
use std::path::Path;

use crate::autodiff::ParamStore;
use crate::embeddings::parse_embeddings;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

const MAGIC: &str = "mtmn-checkpoint";

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointInfo {
    pub version: u32,
    pub seed: u64,
    /// Free-text `echo` lines, such as the effective run configuration.
    pub echo: Vec<String>,
}

fn ckpt_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint {
        version: CHECKPOINT_VERSION,
        msg: msg.into(),
    }
}

/// Writes `model` to the directory `dir`, creating it if needed. Output is a
/// pure function of the arguments.
pub fn save_checkpoint(model: &Model, dir: &Path, seed: u64, echo: &[String]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = format!("{MAGIC} {CHECKPOINT_VERSION}\nseed {seed}\n");
    manifest.push_str(&format!("config {}\n", serde_json::to_string(model.config())?));
    manifest.push_str(&format!("categories {}\n", serde_json::to_string(model.categories())?));
    for line in echo {
        for l in line.lines() {
            manifest.push_str(&format!("echo {l}\n"));
        }
    }
    let mut blob = Vec::with_capacity(model.params().scalar_count() * 8);
    let mut offset = 0;
    for (_, p) in model.params().iter() {
        let shape: Vec<String> = p.value.shape().iter().map(|s| s.to_string()).collect();
        let len = p.value.len();
        manifest.push_str(&format!("param {} {} {} {}\n", p.name, shape.join(","), offset, len));
        for v in p.value.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        offset += len;
    }
    fs::write(dir.join("manifest.txt"), manifest)?;
    fs::write(dir.join("params.bin"), blob)?;
    fs::write(dir.join("embeddings.txt"), model.embeddings().to_text())?;
    Ok(())
}

struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

/// Reads a checkpoint written by [`save_checkpoint`]. When `expected` is
/// given, every parameter must have the shape that configuration implies.
pub fn load_checkpoint(dir: &Path, expected: Option<&ModelConfig>) -> Result<(Model, CheckpointInfo)> {
    let manifest = fs::read_to_string(dir.join("manifest.txt"))?;
    let mut lines = manifest.lines();
    let header = lines.next().ok_or_else(|| ckpt_err("empty manifest"))?;
    let version: u32 = match header.split_once(' ') {
        Some((MAGIC, v)) => v.parse().map_err(|_| ckpt_err(format!("bad header {header:?}")))?,
        _ => return Err(ckpt_err(format!("not a checkpoint manifest: {header:?}"))),
    };
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint {
            version,
            msg: format!("unsupported format version (this build reads v{CHECKPOINT_VERSION})"),
        });
    }

    let mut seed = None;
    let mut config: Option<ModelConfig> = None;
    let mut categories: Option<Vec<String>> = None;
    let mut echo = Vec::new();
    let mut entries = Vec::new();
    for (i, line) in lines.enumerate() {
        let bad = |m: &str| ckpt_err(format!("manifest line {}: {m}", i + 2));
        let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
        match key {
            "seed" => seed = Some(rest.parse::<u64>().map_err(|_| bad("bad seed"))?),
            "config" => config = Some(serde_json::from_str(rest).map_err(|e| bad(&e.to_string()))?),
            "categories" => categories = Some(serde_json::from_str(rest).map_err(|e| bad(&e.to_string()))?),
            "echo" => echo.push(rest.to_string()),
            "param" => {
                let parts: Vec<&str> = rest.split(' ').collect();
                let [name, shape, offset, len] = parts[..] else {
                    return Err(bad("param needs name, shape, offset and length"));
                };
                let shape = shape
                    .split(',')
                    .map(|s| s.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| bad("bad shape"))?;
                entries.push(ParamEntry {
                    name: name.to_string(),
                    shape,
                    offset: offset.parse().map_err(|_| bad("bad offset"))?,
                    len: len.parse().map_err(|_| bad("bad length"))?,
                });
            }
            "" => {}
            other => return Err(bad(&format!("unknown key {other:?}"))),
        }
    }
    let seed = seed.ok_or_else(|| ckpt_err("manifest has no seed"))?;
    let config = config.ok_or_else(|| ckpt_err("manifest has no config"))?;
    let categories = categories.ok_or_else(|| ckpt_err("manifest has no categories"))?;

    let blob = fs::read(dir.join("params.bin"))?;
    let emb_path = dir.join("embeddings.txt");
    let embeddings = parse_embeddings(&fs::read_to_string(&emb_path)?, &emb_path)?;

    let mut store = ParamStore::new();
    for e in &entries {
        if e.shape.iter().product::<usize>() != e.len {
            return Err(ckpt_err(format!("parameter {}: shape {:?} does not hold {} values", e.name, e.shape, e.len)));
        }
        let bytes = blob
            .get(e.offset * 8..(e.offset + e.len) * 8)
            .ok_or_else(|| ckpt_err(format!("parameter {} lies outside params.bin", e.name)))?;
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let value = Tensor::new(e.shape.clone(), data).map_err(|err| ckpt_err(format!("parameter {}: {err}", e.name)))?;
        store
            .insert(e.name.clone(), value, true)
            .map_err(|_| ckpt_err(format!("parameter {} listed twice", e.name)))?;
    }
    let total: usize = entries.iter().map(|e| e.len).sum();
    if total * 8 != blob.len() {
        return Err(ckpt_err(format!("params.bin holds {} bytes, manifest accounts for {}", blob.len(), total * 8)));
    }

    if let Some(exp) = expected {
        let reference = Model::new(exp.clone(), categories.clone(), embeddings.clone(), 0)?;
        for (_, p) in reference.params().iter() {
            match store.by_name(&p.name) {
                None => return Err(ckpt_err(format!("parameter {} missing", p.name))),
                Some(found) if found.value.shape() != p.value.shape() => {
                    return Err(ckpt_err(format!(
                        "parameter {} has shape {:?} in the checkpoint, expected {:?}",
                        p.name,
                        found.value.shape(),
                        p.value.shape()
                    )))
                }
                _ => {}
            }
        }
    }
    let model = Model::from_store(config, categories, embeddings, store).map_err(|e| ckpt_err(e.to_string()))?;
    Ok((model, CheckpointInfo { version, seed, echo }))
}
