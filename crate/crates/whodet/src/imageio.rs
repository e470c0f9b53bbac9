//! Decoding and encoding raster files to and from core images.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, Luma};
use whodet_core::Image;

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct ImageIoError {
    pub message: String,
}

fn err(message: impl Into<String>) -> ImageIoError {
    ImageIoError { message: message.into() }
}

fn from_dynamic(img: DynamicImage) -> Result<Image, ImageIoError> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, pixels): (usize, Vec<f64>) = match img {
        DynamicImage::ImageLuma8(g) => (1, g.into_raw().into_iter().map(|v| v as f64 / 255.0).collect()),
        DynamicImage::ImageLuma16(g) => (1, g.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect()),
        DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLumaA16(_) => {
            (1, img.to_luma16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect())
        }
        other => (3, other.to_rgb8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect()),
    };
    Image::new(w, h, channels, pixels).map_err(|e| err(e.to_string()))
}

/// Decode PNG or JPEG bytes.
pub fn decode(bytes: &[u8]) -> Result<Image, ImageIoError> {
    if bytes.is_empty() {
        return Err(err("empty image data"));
    }
    let img = image::load_from_memory(bytes).map_err(|e| err(format!("cannot decode image: {e}")))?;
    from_dynamic(img)
}

pub fn load(path: &Path) -> Result<Image, ImageIoError> {
    let img = image::open(path).map_err(|e| err(format!("{}: {e}", path.display())))?;
    from_dynamic(img)
}

/// True for file names with a PNG or JPEG extension.
pub fn is_image_path(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
}

/// Width and height from the file header only.
pub fn dimensions(path: &Path) -> Result<(u32, u32), ImageIoError> {
    image::image_dimensions(path).map_err(|e| err(format!("{}: {e}", path.display())))
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encode as 8-bit PNG, grayscale or RGB by channel count.
pub fn encode_png(image: &Image) -> Vec<u8> {
    let (w, h) = (image.width() as u32, image.height() as u32);
    let dynamic = if image.channels() == 1 {
        let gray = GrayImage::from_fn(w, h, |x, y| Luma([to_u8(image.get(x as usize, y as usize, 0))]));
        DynamicImage::ImageLuma8(gray)
    } else {
        let rgb = image::RgbImage::from_raw(w, h, image.pixels().iter().map(|&v| to_u8(v)).collect())
            .expect("pixel buffer matches dimensions");
        DynamicImage::ImageRgb8(rgb)
    };
    let mut out = Cursor::new(Vec::new());
    dynamic.write_to(&mut out, ImageFormat::Png).expect("in-memory PNG encoding");
    out.into_inner()
}

pub fn save_png(image: &Image, path: &Path) -> std::io::Result<()> {
    std::fs::write(path, encode_png(image))
}
