use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

/// Which global statistics a pooling layer emits, always in the order
/// max, average, standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolingSet {
    pub max: bool,
    pub avg: bool,
    pub std: bool,
}

impl PoolingSet {
    pub const ALL: PoolingSet = PoolingSet {
        max: true,
        avg: true,
        std: true,
    };

    pub fn count(&self) -> usize {
        self.max as usize + self.avg as usize + self.std as usize
    }
}

impl Default for PoolingSet {
    fn default() -> Self {
        Self::ALL
    }
}

const VAR_FLOOR: f64 = 1e-12;

struct ChannelStats<T> {
    argmax: usize,
    max: T,
    mean: T,
    std: T,
    var: T,
}

fn channel_stats<T: Scalar>(plane: &[T]) -> ChannelStats<T> {
    let n = T::from_usize(plane.len()).unwrap_or_else(T::one);
    let mut argmax = 0;
    let mut max = plane[0];
    let mut sum = T::zero();
    for (i, &v) in plane.iter().enumerate() {
        // strict comparison keeps the first maximum in row-major order
        if v > max {
            max = v;
            argmax = i;
        }
        sum = sum + v;
    }
    let mean = sum / n;
    let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    ChannelStats {
        argmax,
        max,
        mean,
        std: var.sqrt(),
        var,
    }
}

fn spatial(f: &Tensor<impl Scalar>) -> Result<(usize, usize)> {
    let (c, h, w) = f.chw()?;
    if h * w == 0 {
        return Err(Error::invalid(
            "global pooling over an empty spatial extent",
        ));
    }
    Ok((c, h * w))
}

/// Channel-wise `[max | avg | std]` of a `[C, H, W]` map, length `3C`.
/// The standard deviation is the population one (divides by `H·W`).
pub fn stats_pool<T: Scalar>(f: &Tensor<T>) -> Result<Tensor<T>> {
    stats_pool_with(f, PoolingSet::ALL)
}

pub fn stats_pool_with<T: Scalar>(f: &Tensor<T>, set: PoolingSet) -> Result<Tensor<T>> {
    let (c, hw) = spatial(f)?;
    let stats: Vec<_> = f.data().chunks_exact(hw).map(channel_stats).collect();
    let mut out = Vec::with_capacity(set.count() * c);
    if set.max {
        out.extend(stats.iter().map(|s| s.max));
    }
    if set.avg {
        out.extend(stats.iter().map(|s| s.mean));
    }
    if set.std {
        out.extend(stats.iter().map(|s| s.std));
    }
    Tensor::from_vec(&[out.len()], out)
}

/// Gradient of [`stats_pool_with`] w.r.t. the feature map.
///
/// The max branch routes to the first argmax. The std branch uses
/// `max(var, 1e-12)` under the square root, so constant channels get zero.
pub fn stats_pool_backward<T: Scalar>(
    f: &Tensor<T>,
    grad: &Tensor<T>,
    set: PoolingSet,
) -> Result<Tensor<T>> {
    let (c, hw) = spatial(f)?;
    grad.expect_shape("stats_pool grad", &[set.count() * c])?;
    let n = T::from_usize(hw).unwrap_or_else(T::one);
    let floor = T::from_f64_lossy(VAR_FLOOR);
    let g = grad.data();
    let mut out = vec![T::zero(); f.len()];
    for (ci, (plane, dplane)) in f
        .data()
        .chunks_exact(hw)
        .zip(out.chunks_exact_mut(hw))
        .enumerate()
    {
        let s = channel_stats(plane);
        let mut slot = 0;
        if set.max {
            dplane[s.argmax] = dplane[s.argmax] + g[slot * c + ci];
            slot += 1;
        }
        if set.avg {
            let ga = g[slot * c + ci] / n;
            dplane.iter_mut().for_each(|d| *d = *d + ga);
            slot += 1;
        }
        if set.std {
            let gs = g[slot * c + ci];
            let denom = n * s.var.max(floor).sqrt();
            for (d, &v) in dplane.iter_mut().zip(plane) {
                *d = *d + gs * (v - s.mean) / denom;
            }
        }
    }
    Tensor::from_vec(f.shape(), out)
}
