//! Checkpoint directories: `manifest.json` (versioned; tensor names and
//! shapes, model configuration, its hash, stage tag) and `params.bin`, the
//! little-endian `f32` values of every tensor concatenated in manifest order.

use std::fs;
use std::path::Path;

use isib_core::diffkm::Emission;
use isib_core::model::{Model, ModelConfig};
use isib_core::synthlang::Lang;
use isib_core::train::{Checkpoint, Stage};
use isib_core::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{read_json, write_json};
use crate::error::{CliError, Result};

pub const CHECKPOINT_FORMAT: &str = "isib-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub stage: Stage,
    pub init: Lang,
    pub alpha: f64,
    pub vocab_l1: usize,
    pub vocab_l2: usize,
    pub emission: Emission,
    pub model: ModelConfig,
    pub config_hash: String,
    pub tensors: Vec<TensorEntry>,
}

/// SHA-256 (hex) of the canonical JSON of the model configuration and the
/// two vocabulary sizes.
pub fn config_hash(model: &ModelConfig, vocab_l1: usize, vocab_l2: usize) -> String {
    let canonical = serde_json::json!({ "model": model, "vocab_l1": vocab_l1, "vocab_l2": vocab_l2 });
    let digest = Sha256::digest(canonical.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save(dir: &Path, ckpt: &Checkpoint, cfg: &ModelConfig) -> Result<()> {
    let model = &ckpt.model;
    model.matches_config(cfg)?;
    let (vocab_l1, vocab_l2) = (model.vocab_size(Lang::L1), model.vocab_size(Lang::L2));
    let named = model.named_params()?;
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        stage: ckpt.stage,
        init: ckpt.init,
        alpha: ckpt.alpha,
        vocab_l1,
        vocab_l2,
        emission: model.emission,
        model: cfg.clone(),
        config_hash: config_hash(cfg, vocab_l1, vocab_l2),
        tensors: named.iter().map(|(n, t)| TensorEntry { name: n.clone(), shape: t.shape().to_vec() }).collect(),
    };
    let mut blob = Vec::new();
    for (_, t) in &named {
        blob.extend(t.to_le_bytes());
    }
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    let ppath = dir.join(PARAMS_FILE);
    fs::write(&ppath, blob).map_err(CliError::io(&ppath))
}

pub fn load(dir: &Path) -> Result<(Checkpoint, Manifest)> {
    let mpath = dir.join(MANIFEST_FILE);
    let manifest: Manifest = read_json(&mpath)?;
    if manifest.format != CHECKPOINT_FORMAT || manifest.version != CHECKPOINT_VERSION {
        return Err(CliError::format(&mpath, format!("unsupported checkpoint {} v{}", manifest.format, manifest.version)));
    }
    if manifest.config_hash != config_hash(&manifest.model, manifest.vocab_l1, manifest.vocab_l2) {
        return Err(CliError::format(&mpath, "config hash does not match the stored configuration"));
    }
    let ppath = dir.join(PARAMS_FILE);
    let blob = fs::read(&ppath).map_err(CliError::io(&ppath))?;
    let expected: usize = manifest.tensors.iter().map(|t| t.shape.iter().product::<usize>() * 4).sum();
    if blob.len() != expected {
        return Err(CliError::format(&ppath, format!("{} bytes, manifest describes {expected}", blob.len())));
    }
    let mut offset = 0;
    let mut params = Vec::with_capacity(manifest.tensors.len());
    for t in &manifest.tensors {
        let n = t.shape.iter().product::<usize>() * 4;
        let tensor = Tensor::from_le_bytes(&t.shape, &blob[offset..offset + n]).map_err(|e| CliError::format(&ppath, e))?;
        params.push((t.name.clone(), tensor));
        offset += n;
    }
    let mut model = Model::from_named_params(&manifest.model, manifest.vocab_l1, manifest.vocab_l2, params)
        .map_err(|e| CliError::format(&mpath, e))?;
    model.emission = manifest.emission;
    let ckpt = Checkpoint { model, stage: manifest.stage, init: manifest.init, alpha: manifest.alpha };
    Ok((ckpt, manifest))
}

/// Fails unless `manifest` was written for `cfg` and the given vocabularies.
pub fn ensure_compatible(manifest: &Manifest, cfg: &ModelConfig, vocab_l1: usize, vocab_l2: usize) -> Result<()> {
    if manifest.config_hash != config_hash(cfg, vocab_l1, vocab_l2) {
        return Err(CliError::Usage(
            "checkpoint config hash does not match the model configuration and vocabularies".into(),
        ));
    }
    Ok(())
}
