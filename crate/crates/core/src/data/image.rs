//! 8-bit image files ↔ planar `[0, 1]` float images.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ColorType, DynamicImage, ImageEncoder};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// BT.601 luma weights.
pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

/// Planar (channel-major) float image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePlane {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImagePlane {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::config("image channels", format!("must be 1 or 3, got {channels}")));
        }
        if height == 0 || width == 0 {
            return Err(Error::InvalidShape(format!("{channels}x{height}x{width}")));
        }
        if data.len() != channels * height * width {
            return Err(Error::shape("ImagePlane::new", channels * height * width, data.len()));
        }
        Ok(ImagePlane { channels, height, width, data })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::from_vec(Shape::new(1, self.channels, self.height, self.width), self.data.clone())
            .expect("image dimensions are non-zero")
    }

    /// Converts a single-item tensor back to an image (values are not clamped).
    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        let s = t.shape();
        if s.n != 1 {
            return Err(Error::shape("ImagePlane::from_tensor batch", 1, s.n));
        }
        Self::new(s.c, s.h, s.w, t.data().to_vec())
    }

    pub fn clamped(&self) -> ImagePlane {
        ImagePlane {
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            ..self.clone()
        }
    }

    /// Single-channel BT.601 luma; grayscale images are returned unchanged.
    pub fn to_luma(&self) -> ImagePlane {
        if self.channels == 1 {
            return self.clone();
        }
        let plane = self.height * self.width;
        let data = (0..plane)
            .map(|i| {
                LUMA_WEIGHTS
                    .iter()
                    .enumerate()
                    .map(|(c, w)| w * self.data[c * plane + i])
                    .sum()
            })
            .collect();
        ImagePlane { channels: 1, data, ..*self }
    }

    /// Luma for 3→1; replicated gray for 1→3.
    pub fn to_channels(&self, channels: usize) -> Result<ImagePlane> {
        match (self.channels, channels) {
            (a, b) if a == b => Ok(self.clone()),
            (3, 1) => Ok(self.to_luma()),
            (1, 3) => Ok(ImagePlane {
                channels: 3,
                data: self.data.repeat(3),
                ..*self
            }),
            _ => Err(Error::config("image channels", format!("cannot convert to {channels}"))),
        }
    }

    /// Copies the `size_h × size_w` window at `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, size_h: usize, size_w: usize) -> Result<ImagePlane> {
        if top + size_h > self.height || left + size_w > self.width || size_h == 0 || size_w == 0 {
            return Err(Error::shape(
                "ImagePlane::crop",
                format!("window inside {}x{}", self.height, self.width),
                format!("{size_h}x{size_w} at ({top}, {left})"),
            ));
        }
        let mut data = Vec::with_capacity(self.channels * size_h * size_w);
        for c in 0..self.channels {
            for y in top..top + size_h {
                let row = (c * self.height + y) * self.width;
                data.extend_from_slice(&self.data[row + left..row + left + size_w]);
            }
        }
        ImagePlane::new(self.channels, size_h, size_w, data)
    }

    /// Interleaved 8-bit samples: `round(clamp(v)·255)`.
    pub fn to_u8_interleaved(&self) -> Vec<u8> {
        let plane = self.height * self.width;
        let mut out = Vec::with_capacity(self.data.len());
        for i in 0..plane {
            for c in 0..self.channels {
                out.push((self.data[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        out
    }

    pub fn from_u8_interleaved(channels: usize, height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != channels * height * width {
            return Err(Error::shape("ImagePlane::from_u8_interleaved", channels * height * width, bytes.len()));
        }
        let plane = height * width;
        let mut data = vec![0.0f32; bytes.len()];
        for (i, px) in bytes.chunks(channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                data[c * plane + i] = f32::from(v) / 255.0;
            }
        }
        ImagePlane::new(channels, height, width, data)
    }
}

/// Decodes an 8-bit grayscale or RGB PNG/PGM/PPM into `[0, 1]` (value / 255).
/// An alpha channel is dropped; other bit depths are rejected.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImagePlane> {
    let path = path.as_ref();
    let img_err = |reason: String| Error::Image { path: path.to_path_buf(), reason };
    let reader = image::io::Reader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let decoded = reader.decode().map_err(|e| img_err(e.to_string()))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    match decoded {
        DynamicImage::ImageLuma8(buf) => ImagePlane::from_u8_interleaved(1, h, w, buf.as_raw()),
        DynamicImage::ImageRgb8(buf) => ImagePlane::from_u8_interleaved(3, h, w, buf.as_raw()),
        DynamicImage::ImageLumaA8(_) => {
            ImagePlane::from_u8_interleaved(1, h, w, decoded.to_luma8().as_raw())
        }
        DynamicImage::ImageRgba8(_) => {
            ImagePlane::from_u8_interleaved(3, h, w, decoded.to_rgb8().as_raw())
        }
        other => Err(img_err(format!(
            "unsupported pixel format {:?}; only 8-bit grayscale or RGB is accepted",
            other.color()
        ))),
    }
}

/// Writes an 8-bit PNG, PGM or PPM (chosen by extension), clamping to `[0, 1]`
/// and quantizing with `round(v·255)`.
pub fn save_image(img: &ImagePlane, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let bytes = img.to_u8_interleaved();
    let (w, h) = (img.width as u32, img.height as u32);
    let color = if img.channels == 1 { ColorType::L8 } else { ColorType::Rgb8 };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let out = BufWriter::new(file);
    let result = match ext.as_str() {
        "png" => PngEncoder::new(out).write_image(&bytes, w, h, color),
        "pgm" | "ppm" | "pnm" => {
            let subtype = if img.channels == 1 {
                PnmSubtype::Graymap(SampleEncoding::Binary)
            } else {
                PnmSubtype::Pixmap(SampleEncoding::Binary)
            };
            PnmEncoder::new(out).with_subtype(subtype).write_image(&bytes, w, h, color)
        }
        _ => {
            return Err(Error::Image {
                path: path.to_path_buf(),
                reason: format!("unsupported output extension '{ext}' (use png, pgm or ppm)"),
            })
        }
    };
    result.map_err(|e| Error::Image { path: path.to_path_buf(), reason: e.to_string() })
}
