use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use super::atomic_write;
use crate::error::{Error, Result};
use crate::raster::Image;

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image { path: path.to_path_buf(), message: e.to_string() }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Saves a 1-channel (grayscale) or 3-channel (RGB) image as 8-bit PNG.
/// Values are clamped to `[0, 1]`; no gamma curve is applied.
pub fn save_png(path: &Path, img: &Image) -> Result<()> {
    let (w, h) = (img.width as u32, img.height as u32);
    let bytes: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
    let mut out = std::io::Cursor::new(Vec::new());
    match img.channels {
        1 => ImageBuffer::<Luma<u8>, _>::from_raw(w, h, bytes).expect("buffer size").write_to(&mut out, image::ImageFormat::Png),
        3 => ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, bytes).expect("buffer size").write_to(&mut out, image::ImageFormat::Png),
        c => return Err(image_err(path, format!("cannot save a {c}-channel image"))),
    }
    .map_err(|e| image_err(path, e))?;
    atomic_write(path, &out.into_inner())
}

/// Loads a PNG as `channels` (1 or 3) channels in `[0, 1]`.
pub fn load_png(path: &Path, channels: usize) -> Result<Image> {
    let dynimg = image::open(path).map_err(|e| image_err(path, e))?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let data: Vec<f64> = match channels {
        1 => dynimg.to_luma8().into_raw().iter().map(|&b| b as f64 / 255.0).collect(),
        3 => dynimg.to_rgb8().into_raw().iter().map(|&b| b as f64 / 255.0).collect(),
        c => return Err(image_err(path, format!("cannot load as {c} channels"))),
    };
    Image::from_data(w, h, channels, data)
}
