//! Checkpoints: a TOML manifest (model config, step, tensor index) next to
//! a single binary blob of little-endian f64 tensors in manifest order.
//! The format is diffable and loadable without this crate.

use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use ndarray::IxDyn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Tensor;
use crate::model::ModelConfig;
use crate::optim::{Adam, AdamConfig};
use crate::params::ParamStore;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the blob.
    pub offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub step: u64,
    /// Seed of the deterministic per-step sampling stream; together with
    /// `step` this is the entire RNG state needed to resume.
    pub seed: u64,
    pub model: ModelConfig,
    pub optimizer_state: bool,
    pub adam_t: u64,
    pub tensors: Vec<TensorEntry>,
    pub opt_tensors: Vec<TensorEntry>,
}

fn blob_path(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("bin")
}

fn push_tensor(blob: &mut Vec<u8>, index: &mut Vec<TensorEntry>, name: &str, t: &Tensor) {
    index.push(TensorEntry {
        name: name.to_string(),
        shape: t.shape().to_vec(),
        dtype: "f64le".to_string(),
        offset: blob.len() as u64,
    });
    for v in t.iter() {
        blob.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_tensor(blob: &[u8], entry: &TensorEntry) -> Result<Tensor> {
    let len: usize = entry.shape.iter().product();
    let start = entry.offset as usize;
    let end = start + len * 8;
    if entry.dtype != "f64le" {
        return Err(Error::Input(format!("unsupported dtype {}", entry.dtype)));
    }
    if end > blob.len() {
        return Err(Error::Input(format!("blob truncated at tensor {}", entry.name)));
    }
    let mut data = Vec::with_capacity(len);
    for chunk in blob[start..end].chunks_exact(8) {
        data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    Tensor::from_shape_vec(IxDyn(&entry.shape), data)
        .map_err(|e| Error::Input(format!("bad tensor {}: {e}", entry.name)))
}

/// Writes `<base>.toml` and `<base>.bin`.
pub fn save(
    manifest_path: &Path,
    params: &ParamStore,
    opt: Option<&Adam>,
    model: &ModelConfig,
    step: u64,
    seed: u64,
) -> Result<()> {
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    for (name, t) in params.iter() {
        push_tensor(&mut blob, &mut tensors, name, t);
    }
    let mut opt_tensors = Vec::new();
    let mut adam_t = 0;
    if let Some(adam) = opt {
        adam_t = adam.t;
        for (name, t) in &adam.m {
            push_tensor(&mut blob, &mut opt_tensors, &format!("m.{name}"), t);
        }
        for (name, t) in &adam.v {
            push_tensor(&mut blob, &mut opt_tensors, &format!("v.{name}"), t);
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        step,
        seed,
        model: model.clone(),
        optimizer_state: opt.is_some(),
        adam_t,
        tensors,
        opt_tensors,
    };
    let text = toml::to_string_pretty(&manifest)
        .map_err(|e| Error::Config(format!("cannot serialize manifest: {e}")))?;
    fs::write(manifest_path, text).map_err(|e| Error::io(manifest_path, e))?;
    let bpath = blob_path(manifest_path);
    fs::write(&bpath, blob).map_err(|e| Error::io(&bpath, e))?;
    Ok(())
}

pub struct Loaded {
    pub manifest: Manifest,
    pub params: ParamStore,
    /// Present when the checkpoint carried optimizer state.
    pub adam: Option<Adam>,
}

pub fn load(manifest_path: &Path, adam_cfg: AdamConfig) -> Result<Loaded> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest =
        toml::from_str(&text).map_err(|e| Error::Input(format!("bad manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Input(format!(
            "unsupported checkpoint version {}",
            manifest.format_version
        )));
    }
    let bpath = blob_path(manifest_path);
    let blob = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
    let mut params = ParamStore::new();
    for entry in &manifest.tensors {
        if params.contains(&entry.name) {
            return Err(Error::Input(format!("duplicate tensor {}", entry.name)));
        }
        params.insert(&entry.name, read_tensor(&blob, entry)?);
    }
    let adam = if manifest.optimizer_state {
        let mut m = IndexMap::new();
        let mut v = IndexMap::new();
        for entry in &manifest.opt_tensors {
            let t = read_tensor(&blob, entry)?;
            if let Some(name) = entry.name.strip_prefix("m.") {
                m.insert(name.to_string(), t);
            } else if let Some(name) = entry.name.strip_prefix("v.") {
                v.insert(name.to_string(), t);
            } else {
                return Err(Error::Input(format!("unknown optimizer tensor {}", entry.name)));
            }
        }
        Some(Adam {
            cfg: adam_cfg,
            t: manifest.adam_t,
            m,
            v,
        })
    } else {
        None
    };
    Ok(Loaded {
        manifest,
        params,
        adam,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LcdNet;
    use crate::params::{rand_tensor, test_rng};

    fn micro_model() -> (ParamStore, ModelConfig) {
        let cfg = ModelConfig {
            base_width: 4,
            blocks_per_level: [1, 1, 1, 1],
            msfm_branches: vec![(2, 3)],
            ..Default::default()
        };
        let mut ps = ParamStore::new();
        let _ = LcdNet::init(&mut ps, 3, &cfg);
        (ps, cfg)
    }

    #[test]
    fn parameter_round_trip_is_bit_exact() {
        let (ps, cfg) = micro_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt_0000001.toml");
        save(&path, &ps, None, &cfg, 1, 9).unwrap();
        let loaded = load(&path, AdamConfig::default()).unwrap();
        assert_eq!(loaded.manifest.step, 1);
        assert_eq!(loaded.manifest.seed, 9);
        assert!(loaded.adam.is_none());
        assert_eq!(loaded.params.len(), ps.len());
        for (name, t) in ps.iter() {
            let got = loaded.params.get(name);
            assert_eq!(got, t, "tensor {name} not bit-identical");
        }
    }

    #[test]
    fn optimizer_state_round_trips() {
        let (mut ps, cfg) = micro_model();
        let mut adam = Adam::new(AdamConfig::default());
        let mut grads = IndexMap::new();
        let mut rng = test_rng(4);
        for (name, t) in ps.iter() {
            grads.insert(name.clone(), rand_tensor(&mut rng, t.shape(), 0.1));
        }
        adam.step(&mut ps, &grads, 1e-3);
        adam.step(&mut ps, &grads, 1e-3);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.toml");
        save(&path, &ps, Some(&adam), &cfg, 2, 0).unwrap();
        let loaded = load(&path, AdamConfig::default()).unwrap();
        let back = loaded.adam.unwrap();
        assert_eq!(back.t, 2);
        assert_eq!(back.m.len(), adam.m.len());
        for (name, t) in &adam.m {
            assert_eq!(&back.m[name], t);
        }
        for (name, t) in &adam.v {
            assert_eq!(&back.v[name], t);
        }
    }

    #[test]
    fn manifest_index_is_unique_and_complete() {
        let (ps, cfg) = micro_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        save(&path, &ps, None, &cfg, 0, 0).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let manifest: Manifest = toml::from_str(&text).unwrap();
        let mut seen = std::collections::HashSet::new();
        for e in &manifest.tensors {
            assert!(seen.insert(e.name.clone()), "duplicate index entry {}", e.name);
            assert!(ps.contains(&e.name));
            assert_eq!(e.dtype, "f64le");
        }
        assert_eq!(seen.len(), ps.len());
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let (ps, cfg) = micro_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        save(&path, &ps, None, &cfg, 0, 0).unwrap();
        let bpath = path.with_extension("bin");
        let blob = std::fs::read(&bpath).unwrap();
        std::fs::write(&bpath, &blob[..blob.len() / 2]).unwrap();
        assert!(load(&path, AdamConfig::default()).is_err());
    }
}
