//! Binary weight files.
//!
//! Layout: 8-byte magic, little-endian `u32` manifest length, JSON manifest,
//! then every tensor as little-endian `f32` in manifest order. Checkpoints
//! append the Adam moments (all first moments, then all second moments).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Adam, AdamConfig, AdamState, ParamSet, Tensor};
use crate::pipeline::{ModelConfig, RetouchModel};

pub const MAGIC: &[u8; 8] = b"NEUROPW\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct OptimizerEntry {
    adam: AdamConfig,
    /// Per-tensor step counts; frozen tensors stay at 0.
    steps: Vec<u64>,
    iteration: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    model: ModelConfig,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    provenance: BTreeMap<String, String>,
    #[serde(default)]
    optimizer: Option<OptimizerEntry>,
}

/// Free-form facts about how a weight file was produced.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightsMeta {
    pub seed: Option<u64>,
    pub provenance: BTreeMap<String, String>,
}

/// Optimizer state stored alongside checkpoints so training can resume.
#[derive(Clone, Debug)]
pub struct TrainingState {
    pub adam: Adam<f32>,
    /// Completed joint-training iterations.
    pub iteration: usize,
}

#[derive(Clone, Debug)]
pub struct LoadedWeights {
    pub model: RetouchModel<f32>,
    pub meta: WeightsMeta,
    pub state: Option<TrainingState>,
}

fn push_f32s(out: &mut Vec<u8>, data: &[f32]) {
    out.reserve(data.len() * 4);
    for x in data {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn to_bytes(
    model: &RetouchModel<f32>,
    meta: &WeightsMeta,
    state: Option<&TrainingState>,
) -> Result<Vec<u8>> {
    let named = model.named_tensors();
    if let Some(s) = state {
        if s.adam.states.len() != named.len() {
            return Err(Error::Weights(format!(
                "optimizer tracks {} tensors but the model has {}",
                s.adam.states.len(),
                named.len()
            )));
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        model: model.config.clone(),
        tensors: named
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        seed: meta.seed,
        provenance: meta.provenance.clone(),
        optimizer: state.map(|s| OptimizerEntry {
            adam: s.adam.config,
            steps: s.adam.states.iter().map(|st| st.t).collect(),
            iteration: s.iteration,
        }),
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| Error::Weights(e.to_string()))?;
    let mut out = Vec::with_capacity(12 + json.len() + model.param_count() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &named {
        push_f32s(&mut out, t.data());
    }
    if let Some(s) = state {
        for st in &s.adam.states {
            push_f32s(&mut out, st.m.data());
        }
        for st in &s.adam.states {
            push_f32s(&mut out, st.v.data());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Weights(format!(
                "truncated file: {what} needs {n} bytes at offset {}, only {} remain",
                self.pos,
                self.bytes.len() - self.pos
            )));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn tensor(&mut self, shape: &[usize], what: &str) -> Result<Tensor<f32>> {
        let n: usize = shape.iter().product();
        let raw = self.take(n * 4, what)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Tensor::from_vec(shape, data)
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<LoadedWeights> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Weights("not a weight file (bad magic bytes)".into()));
    }
    let len = r.take(4, "manifest length")?;
    let len = u32::from_le_bytes([len[0], len[1], len[2], len[3]]) as usize;
    let manifest: Manifest = serde_json::from_slice(r.take(len, "manifest")?)
        .map_err(|e| Error::Weights(format!("unreadable manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Weights(format!(
            "unsupported format version {} (this build reads version {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let mut model = RetouchModel::<f32>::zeros(manifest.model.clone())?;
    let expected: Vec<(String, Vec<usize>)> = model
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    if expected.len() != manifest.tensors.len() {
        return Err(Error::Weights(format!(
            "manifest lists {} tensors but the configured model has {}",
            manifest.tensors.len(),
            expected.len()
        )));
    }
    for ((name, shape), entry) in expected.iter().zip(&manifest.tensors) {
        if *name != entry.name || *shape != entry.shape {
            return Err(Error::Weights(format!(
                "tensor mismatch: file has {} {:?}, model expects {name} {shape:?}",
                entry.name, entry.shape
            )));
        }
    }
    let mut params = Vec::with_capacity(expected.len());
    for (name, shape) in &expected {
        params.push(r.tensor(shape, name)?);
    }
    for (dst, src) in model.tensors_mut().into_iter().zip(params) {
        *dst = src;
    }
    let state = match &manifest.optimizer {
        None => None,
        Some(opt) => {
            if opt.steps.len() != expected.len() {
                return Err(Error::Weights(format!(
                    "optimizer lists {} step counts for {} tensors",
                    opt.steps.len(),
                    expected.len()
                )));
            }
            let mut m = Vec::with_capacity(expected.len());
            for (name, shape) in &expected {
                m.push(r.tensor(shape, &format!("adam m {name}"))?);
            }
            let mut states = Vec::with_capacity(expected.len());
            for (((name, shape), m), &t) in expected.iter().zip(m).zip(&opt.steps) {
                let v = r.tensor(shape, &format!("adam v {name}"))?;
                states.push(AdamState { m, v, t });
            }
            Some(TrainingState {
                adam: Adam {
                    config: opt.adam,
                    states,
                },
                iteration: opt.iteration,
            })
        }
    };
    if r.pos != bytes.len() {
        return Err(Error::Weights(format!(
            "{} unexpected trailing bytes after the payload",
            bytes.len() - r.pos
        )));
    }
    Ok(LoadedWeights {
        model,
        meta: WeightsMeta {
            seed: manifest.seed,
            provenance: manifest.provenance,
        },
        state,
    })
}

/// Writes via a temporary file and rename, so an interrupted save never
/// leaves a half-written file at `path`.
pub fn save_weights(
    path: &Path,
    model: &RetouchModel<f32>,
    meta: &WeightsMeta,
    state: Option<&TrainingState>,
) -> Result<()> {
    let bytes = to_bytes(model, meta, state)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<LoadedWeights> {
    let bytes = fs::read(path).map_err(|e| Error::Weights(format!("{}: {e}", path.display())))?;
    from_bytes(&bytes).map_err(|e| match e {
        Error::Weights(msg) => Error::Weights(format!("{}: {msg}", path.display())),
        other => other,
    })
}
