//! Paired-image datasets laid out as `input/`, `target/` and optional `masks/`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::io::{load_image, load_mask};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

const IMAGE_EXTENSIONS: [&str; 5] = ["png", "tif", "tiff", "jpg", "jpeg"];

#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub id: String,
    pub input: Tensor<f32>,
    pub target: Tensor<f32>,
    /// Binary `[1, H, W]` region mask.
    pub mask: Option<Tensor<f32>>,
}

impl ImagePair {
    pub fn new(
        id: impl Into<String>,
        input: Tensor<f32>,
        target: Tensor<f32>,
        mask: Option<Tensor<f32>>,
    ) -> Result<Self> {
        let id = id.into();
        let (c, h, w) = input.chw()?;
        if c != 3 {
            return Err(Error::Dataset(format!(
                "{id}: input must have 3 channels, got {c}"
            )));
        }
        if target.shape() != input.shape() {
            return Err(Error::Dataset(format!(
                "{id}: input is {:?} but target is {:?}",
                input.shape(),
                target.shape()
            )));
        }
        if let Some(m) = &mask {
            if m.shape() != [1, h, w] {
                return Err(Error::Dataset(format!(
                    "{id}: mask is {:?}, expected [1, {h}, {w}]",
                    m.shape()
                )));
            }
        }
        Ok(ImagePair {
            id,
            input,
            target,
            mask,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub pairs: Vec<ImagePair>,
    pub split: Split,
}

impl Dataset {
    pub fn new(pairs: Vec<ImagePair>, split: Split) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for p in &pairs {
            if !seen.insert(p.id.as_str()) {
                return Err(Error::Dataset(format!("duplicate pair id {:?}", p.id)));
            }
        }
        Ok(Dataset { pairs, split })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Image files in `dir` keyed by stem. A missing directory is empty.
fn index_dir(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if !is_image {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Dataset(format!("non-UTF-8 file name {}", path.display())))?
            .to_string();
        if let Some(prev) = out.insert(stem.clone(), path.clone()) {
            return Err(Error::Dataset(format!(
                "two files share the stem {stem:?}: {} and {}",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}

/// Loads `root/input/*`, `root/target/*` and optional `root/masks/*`,
/// matched by file stem and ordered lexicographically by stem.
pub fn load_pair_dataset(root: &Path, split: Split) -> Result<Dataset> {
    let inputs = index_dir(&root.join("input"))?;
    let targets = index_dir(&root.join("target"))?;
    let masks = index_dir(&root.join("masks"))?;

    let mut orphans: Vec<String> = Vec::new();
    orphans.extend(
        inputs
            .keys()
            .filter(|k| !targets.contains_key(*k))
            .map(|k| format!("input/{k}")),
    );
    orphans.extend(
        targets
            .keys()
            .filter(|k| !inputs.contains_key(*k))
            .map(|k| format!("target/{k}")),
    );
    orphans.extend(
        masks
            .keys()
            .filter(|k| !inputs.contains_key(*k))
            .map(|k| format!("masks/{k}")),
    );
    if !orphans.is_empty() {
        return Err(Error::Dataset(format!(
            "unmatched files under {}: {}",
            root.display(),
            orphans.join(", ")
        )));
    }

    let pairs = inputs
        .iter()
        .map(|(stem, input_path)| {
            let input = load_image(input_path)?;
            let target = load_image(&targets[stem])?;
            let mask = masks.get(stem).map(|p| load_mask(p)).transpose()?;
            ImagePair::new(stem.clone(), input, target, mask)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(pairs, split)
}

/// Writes a dataset in the layout [`load_pair_dataset`] reads (8-bit PNG).
pub fn save_pair_dataset(root: &Path, pairs: &[ImagePair]) -> Result<()> {
    use crate::data::io::{save_image, save_mask, BitDepth};
    for sub in ["input", "target"] {
        fs::create_dir_all(root.join(sub))?;
    }
    for p in pairs {
        let name = format!("{}.png", p.id);
        save_image(&root.join("input").join(&name), &p.input, BitDepth::Eight)?;
        save_image(&root.join("target").join(&name), &p.target, BitDepth::Eight)?;
        if let Some(m) = &p.mask {
            fs::create_dir_all(root.join("masks"))?;
            save_mask(&root.join("masks").join(&name), m)?;
        }
    }
    Ok(())
}
