//! PNG and other raster files to and from the core image types.

use std::path::Path;

use image::{DynamicImage, GrayImage as Luma8, ImageFormat};
use thorax_core::{BinaryMask, GrayImage};

use crate::error::{IoError, IoResult};

pub const DEFAULT_MASK_THRESHOLD: f64 = 0.5;

fn open(path: &Path) -> IoResult<DynamicImage> {
    let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
    image::load_from_memory(&bytes).map_err(|e| IoError::Decode { path: path.to_path_buf(), message: e.to_string() })
}

/// Grayscale image scaled to [0, 1] by the bit-depth maximum. Color input is
/// converted to luminance.
pub fn load_gray(path: &Path) -> IoResult<GrayImage> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let sixteen = matches!(
        img.color(),
        image::ColorType::L16 | image::ColorType::La16 | image::ColorType::Rgb16 | image::ColorType::Rgba16
    );
    let data: Vec<f64> = if sixteen {
        img.to_luma16().into_raw().into_iter().map(|v| f64::from(v) / 65535.0).collect()
    } else {
        img.to_luma8().into_raw().into_iter().map(|v| f64::from(v) / 255.0).collect()
    };
    Ok(GrayImage::from_vec(w, h, data)?)
}

/// Pixels with intensity at or above `threshold` are members.
pub fn load_mask(path: &Path, threshold: f64) -> IoResult<BinaryMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(IoError::Usage(format!("mask threshold must lie in (0, 1), got {threshold}")));
    }
    let img = load_gray(path)?;
    let data = img.pixels().iter().map(|&v| v >= threshold).collect();
    Ok(BinaryMask::from_vec(img.width(), img.height(), data)?)
}

pub fn save_gray(path: &Path, img: &GrayImage) -> IoResult<()> {
    write_png(path, img.width(), img.height(), img.to_u8())
}

/// Members as 255, the rest as 0.
pub fn save_mask(path: &Path, mask: &BinaryMask) -> IoResult<()> {
    let bytes = mask.as_slice().iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_png(path, mask.width(), mask.height(), bytes)
}

fn write_png(path: &Path, w: usize, h: usize, bytes: Vec<u8>) -> IoResult<()> {
    let buf = Luma8::from_raw(w as u32, h as u32, bytes).expect("buffer matches dimensions");
    let mut out = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png).map_err(|e| IoError::io(path, std::io::Error::other(e)))?;
    std::fs::write(path, out.into_inner()).map_err(|e| IoError::io(path, e))
}
