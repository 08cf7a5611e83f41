//! PNG/TIFF/JPEG reading and writing for `[3, H, W]` tensors in `[0, 1]`.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::raster;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

fn image_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

/// Interleaved channels to planar `[3, H, W]`, dividing by `scale`.
fn planar<S: Copy + Into<f64>>(h: usize, w: usize, raw: &[S], scale: f64) -> Tensor<f32> {
    let mut data = vec![0.0f32; 3 * h * w];
    let n = h * w;
    for (i, px) in raw.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * n + i] = (px[c].into() / scale) as f32;
        }
    }
    Tensor::from_vec(&[3, h, w], data).expect("sized above")
}

pub fn decode_image(img: DynamicImage) -> Tensor<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_)
        | DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_) => planar(h, w, img.to_rgb16().as_raw(), 65535.0),
        DynamicImage::ImageRgb32F(_) | DynamicImage::ImageRgba32F(_) => {
            raster::clamp01(&planar(h, w, img.to_rgb32f().as_raw(), 1.0))
        }
        _ => planar(h, w, img.to_rgb8().as_raw(), 255.0),
    }
}

/// Reads an RGB image; grey is replicated and alpha dropped.
pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path).map_err(image_err(path))?;
    Ok(decode_image(img))
}

pub fn load_image_bytes(bytes: &[u8]) -> Result<Tensor<f32>> {
    let img = image::load_from_memory(bytes)
        .map_err(|e| Error::invalid(format!("cannot decode image: {e}")))?;
    Ok(decode_image(img))
}

/// Reads a mask as `[1, H, W]` with values in `{0, 1}` (threshold at half range).
pub fn load_mask(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path).map_err(image_err(path))?.to_luma16();
    let (w, h) = img.dimensions();
    let data = img
        .as_raw()
        .iter()
        .map(|&v| if v >= 32768 { 1.0 } else { 0.0 })
        .collect();
    Tensor::from_vec(&[1, h as usize, w as usize], data)
}

fn quantize(x: f32, max: f32) -> f32 {
    (x.clamp(0.0, 1.0) * max).round()
}

fn rgb8(img: &Tensor<f32>) -> Result<ImageBuffer<Rgb<u8>, Vec<u8>>> {
    let (h, w) = raster::rgb_dims(img)?;
    let raw = raster::to_pixels(img)?
        .into_iter()
        .map(|x| quantize(x, 255.0) as u8)
        .collect();
    Ok(ImageBuffer::from_raw(w as u32, h as u32, raw).expect("sized above"))
}

fn rgb16(img: &Tensor<f32>) -> Result<ImageBuffer<Rgb<u16>, Vec<u16>>> {
    let (h, w) = raster::rgb_dims(img)?;
    let raw = raster::to_pixels(img)?
        .into_iter()
        .map(|x| quantize(x, 65535.0) as u16)
        .collect();
    Ok(ImageBuffer::from_raw(w as u32, h as u32, raw).expect("sized above"))
}

/// Writes an image, format chosen from the extension (png, tif/tiff, jpg).
/// Values are clamped to `[0, 1]` and rounded.
pub fn save_image(path: &Path, img: &Tensor<f32>, depth: BitDepth) -> Result<()> {
    let format = ImageFormat::from_path(path).map_err(image_err(path))?;
    if format == ImageFormat::Png && depth == BitDepth::Eight {
        // same bytes as the in-memory encoder
        std::fs::write(path, encode_png(img)?)?;
        return Ok(());
    }
    let dynamic = match (depth, format) {
        (BitDepth::Sixteen, ImageFormat::Png | ImageFormat::Tiff) => {
            DynamicImage::ImageRgb16(rgb16(img)?)
        }
        _ => DynamicImage::ImageRgb8(rgb8(img)?),
    };
    dynamic
        .save_with_format(path, format)
        .map_err(image_err(path))
}

/// 8-bit PNG bytes of an image.
pub fn encode_png(img: &Tensor<f32>) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    rgb8(img)?
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::invalid(format!("png encoding failed: {e}")))?;
    Ok(out.into_inner())
}

pub fn save_mask(path: &Path, mask: &Tensor<f32>) -> Result<()> {
    let shape = mask.shape();
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let raw = mask
        .data()
        .iter()
        .map(|&m| if m >= 0.5 { 255u8 } else { 0 })
        .collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(w as u32, h as u32, raw)
        .ok_or_else(|| Error::invalid("mask must be [1, H, W] or [H, W]"))?;
    buf.save(path).map_err(image_err(path))
}
