//! Image file I/O: 8-bit grayscale PNG and the raw float format.
//!
//! Raw float layout: magic `VRIMG1`, then height and width as little-endian
//! u32, then row-major little-endian f32 pixels.

use super::Image;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use std::fs;
use std::path::Path;

pub const RAW_IMAGE_MAGIC: &[u8; 6] = b"VRIMG1";

/// Read an 8-bit grayscale PNG; pixel `p` maps to `p / 255`.
///
/// Color inputs are reduced with the luma weights 0.299/0.587/0.114.
pub fn read_png_gray<T: Scalar>(path: &Path) -> Result<Image<T>> {
    let img = image::open(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let mut data = Vec::with_capacity((w * h) as usize);
    for y in 0..h {
        for x in 0..w {
            let p = rgb.get_pixel(x, y);
            let luma = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
            data.push(T::of(luma / 255.0));
        }
    }
    Image::new(Tensor::new(vec![h as usize, w as usize], data)?)
}

/// Write an image as 8-bit grayscale PNG; values are clamped to `[0, 1]`
/// and quantized as `round(p * 255)`.
pub fn write_png_gray<T: Scalar>(path: &Path, img: &Image<T>) -> Result<()> {
    let (h, w) = (img.height(), img.width());
    let mut buf = image::GrayImage::new(w as u32, h as u32);
    for r in 0..h {
        for c in 0..w {
            let v = img.get(r, c).as_f64().clamp(0.0, 1.0);
            buf.put_pixel(c as u32, r as u32, image::Luma([(v * 255.0).round() as u8]));
        }
    }
    buf.save(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Write the raw float image format (always f32 payload).
pub fn write_raw_image<T: Scalar>(path: &Path, img: &Image<T>) -> Result<()> {
    let mut out = Vec::with_capacity(14 + img.tensor().len() * 4);
    out.extend_from_slice(RAW_IMAGE_MAGIC);
    out.extend_from_slice(&(img.height() as u32).to_le_bytes());
    out.extend_from_slice(&(img.width() as u32).to_le_bytes());
    for &v in img.tensor().data() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read the raw float image format.
pub fn read_raw_image<T: Scalar>(path: &Path) -> Result<Image<T>> {
    let bytes = fs::read(path)?;
    if bytes.len() < 14 || &bytes[..6] != RAW_IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "{}: missing VRIMG1 magic",
            path.display()
        )));
    }
    let h = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
    let w = u32::from_le_bytes([bytes[10], bytes[11], bytes[12], bytes[13]]) as usize;
    let need = 14 + h * w * 4;
    if bytes.len() != need {
        return Err(Error::Format(format!(
            "{}: expected {need} bytes, found {}",
            path.display(),
            bytes.len()
        )));
    }
    let mut data = Vec::with_capacity(h * w);
    for i in 0..h * w {
        let off = 14 + i * 4;
        let v = f32::from_le_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]]);
        data.push(T::of(v as f64));
    }
    Image::new(Tensor::new(vec![h, w], data)?)
}
