//! Helpers for RGB images stored as planar `[3, H, W]` tensors in `[0, 1]`.

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

/// Checks for a three channel planar image and returns `(H, W)`.
pub fn rgb_dims<T: Scalar>(img: &Tensor<T>) -> Result<(usize, usize)> {
    let (c, h, w) = img.chw()?;
    if c != 3 {
        return Err(Error::invalid(format!(
            "expected a 3-channel image, got {c} channels"
        )));
    }
    Ok((h, w))
}

/// Planar `[3, H, W]` to interleaved `[H·W, 3]` pixel rows.
pub fn to_pixels<T: Scalar>(img: &Tensor<T>) -> Result<Vec<T>> {
    let (h, w) = rgb_dims(img)?;
    let n = h * w;
    let d = img.data();
    let mut out = Vec::with_capacity(3 * n);
    for i in 0..n {
        out.extend_from_slice(&[d[i], d[n + i], d[2 * n + i]]);
    }
    Ok(out)
}

/// Inverse of [`to_pixels`].
pub fn from_pixels<T: Scalar>(h: usize, w: usize, pixels: &[T]) -> Result<Tensor<T>> {
    let n = h * w;
    if pixels.len() != 3 * n {
        return Err(Error::shape("pixel rows", &[n, 3], &[pixels.len() / 3, 3]));
    }
    let mut out = vec![T::zero(); 3 * n];
    for (i, px) in pixels.chunks_exact(3).enumerate() {
        out[i] = px[0];
        out[n + i] = px[1];
        out[2 * n + i] = px[2];
    }
    Tensor::from_vec(&[3, h, w], out)
}

pub fn clamp01<T: Scalar>(img: &Tensor<T>) -> Tensor<T> {
    img.map(|v| v.max(T::zero()).min(T::one()))
}

/// Rec. 709 luma of each pixel.
pub fn luminance<T: Scalar>(img: &Tensor<T>) -> Result<Vec<f64>> {
    let (h, w) = rgb_dims(img)?;
    let n = h * w;
    let d = img.data();
    Ok((0..n)
        .map(|i| {
            0.2126 * d[i].as_f64() + 0.7152 * d[n + i].as_f64() + 0.0722 * d[2 * n + i].as_f64()
        })
        .collect())
}

/// Rotates a `[C, H, W]` map by `quarter_turns × 90°` counter-clockwise.
pub fn rotate90<T: Scalar>(img: &Tensor<T>, quarter_turns: usize) -> Result<Tensor<T>> {
    let (c, h, w) = img.chw()?;
    let mut cur = img.clone();
    let (mut ch, mut cw) = (h, w);
    for _ in 0..quarter_turns % 4 {
        let src = cur.data();
        let (nh, nw) = (cw, ch);
        let mut out = vec![T::zero(); c * nh * nw];
        for ci in 0..c {
            for y in 0..ch {
                for x in 0..cw {
                    // (y, x) -> (cw - 1 - x, y)
                    out[ci * nh * nw + (cw - 1 - x) * nw + y] = src[ci * ch * cw + y * cw + x];
                }
            }
        }
        cur = Tensor::from_vec(&[c, nh, nw], out)?;
        (ch, cw) = (nh, nw);
    }
    Ok(cur)
}

/// Copies the window `[top, top+height) × [left, left+width)` of a `[C, H, W]` map.
pub fn crop<T: Scalar>(
    img: &Tensor<T>,
    top: usize,
    left: usize,
    height: usize,
    width: usize,
) -> Result<Tensor<T>> {
    let (c, h, w) = img.chw()?;
    if top + height > h || left + width > w {
        return Err(Error::invalid(format!(
            "crop {height}x{width}+{top}+{left} exceeds a {h}x{w} image"
        )));
    }
    let src = img.data();
    let mut out = Vec::with_capacity(c * height * width);
    for ci in 0..c {
        for y in top..top + height {
            let row = ci * h * w + y * w;
            out.extend_from_slice(&src[row + left..row + left + width]);
        }
    }
    Tensor::from_vec(&[c, height, width], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixels_round_trip() {
        let img = Tensor::<f32>::from_vec(&[3, 1, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let px = to_pixels(&img).unwrap();
        assert_eq!(px, vec![1.0, 3.0, 5.0, 2.0, 4.0, 6.0]);
        assert_eq!(from_pixels(1, 2, &px).unwrap(), img);
    }

    #[test]
    fn rotation_quarter_turn() {
        // [[1,2],[3,4]] rotated ccw -> [[2,4],[1,3]]
        let img = Tensor::<f32>::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(rotate90(&img, 1).unwrap().data(), &[2.0, 4.0, 1.0, 3.0]);
        assert_eq!(rotate90(&img, 4).unwrap(), img);
    }

    #[test]
    fn crop_window() {
        let img = Tensor::<f32>::from_vec(&[1, 3, 3], (0..9).map(|v| v as f32).collect()).unwrap();
        assert_eq!(
            crop(&img, 1, 1, 2, 2).unwrap().data(),
            &[4.0, 5.0, 7.0, 8.0]
        );
        assert!(crop(&img, 2, 2, 2, 2).is_err());
    }

    #[test]
    fn non_rgb_rejected() {
        assert!(to_pixels(&Tensor::<f32>::zeros(&[4, 2, 2])).is_err());
    }
}
