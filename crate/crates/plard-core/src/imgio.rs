//! PNG encode/decode helpers for the image-shaped artifacts: 8-bit grayscale
//! for altitude-difference and confidence maps, 8-bit RGB for camera images,
//! projection baselines and ground-truth masks.

use std::io::Cursor;

use image::{GrayImage, ImageFormat, RgbImage};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("png codec error: {0}")]
    Codec(String),
    #[error("expected {expected} image, got {got}")]
    WrongFormat {
        expected: &'static str,
        got: String,
    },
}

pub fn encode_gray_png(width: usize, height: usize, bytes: &[u8]) -> Result<Vec<u8>, ImageIoError> {
    let img = GrayImage::from_raw(width as u32, height as u32, bytes.to_vec())
        .ok_or_else(|| ImageIoError::Codec("buffer size mismatch".into()))?;
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| ImageIoError::Codec(e.to_string()))?;
    Ok(out.into_inner())
}

pub fn decode_gray_png(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), ImageIoError> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| ImageIoError::Codec(e.to_string()))?;
    let gray = img.into_luma8();
    Ok((
        gray.width() as usize,
        gray.height() as usize,
        gray.into_raw(),
    ))
}

pub fn encode_rgb_png(width: usize, height: usize, bytes: &[u8]) -> Result<Vec<u8>, ImageIoError> {
    let img = RgbImage::from_raw(width as u32, height as u32, bytes.to_vec())
        .ok_or_else(|| ImageIoError::Codec("buffer size mismatch".into()))?;
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| ImageIoError::Codec(e.to_string()))?;
    Ok(out.into_inner())
}

pub fn decode_rgb_png(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), ImageIoError> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| ImageIoError::Codec(e.to_string()))?;
    let rgb = img.into_rgb8();
    Ok((rgb.width() as usize, rgb.height() as usize, rgb.into_raw()))
}
