//! Random crop plus quarter-turn rotation, applied identically to every
//! image of a pair.

use rand::Rng;

use crate::data::ImagePair;
use crate::error::{Error, Result};
use crate::raster::{crop, rotate90};

/// A sampled transform; kept separate so it can be replayed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Transform {
    pub top: usize,
    pub left: usize,
    pub size: usize,
    pub quarter_turns: usize,
}

impl Transform {
    pub fn sample<R: Rng + ?Sized>(h: usize, w: usize, size: usize, rng: &mut R) -> Result<Self> {
        if size == 0 || size > h || size > w {
            return Err(Error::invalid(format!(
                "crop size {size} does not fit a {h}x{w} image"
            )));
        }
        Ok(Transform {
            top: rng.random_range(0..=h - size),
            left: rng.random_range(0..=w - size),
            size,
            quarter_turns: rng.random_range(0..4),
        })
    }

    pub fn apply(&self, pair: &ImagePair) -> Result<ImagePair> {
        let t = |img| -> Result<_> {
            rotate90(
                &crop(img, self.top, self.left, self.size, self.size)?,
                self.quarter_turns,
            )
        };
        Ok(ImagePair {
            id: pair.id.clone(),
            input: t(&pair.input)?,
            target: t(&pair.target)?,
            mask: pair.mask.as_ref().map(t).transpose()?,
        })
    }
}

/// Square random crop of side `size` followed by a random multiple of 90°.
pub fn augment<R: Rng + ?Sized>(pair: &ImagePair, size: usize, rng: &mut R) -> Result<ImagePair> {
    let (_, h, w) = pair.input.chw()?;
    Transform::sample(h, w, size, rng)?.apply(pair)
}
