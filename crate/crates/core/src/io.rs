//! 8-bit binary PGM (P5) and PPM (P6) images as `[0, 1]` floats.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-major, channel-last pixels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl ImageBuffer {
    /// Values are clamped to `[0, 1]`.
    pub fn new(width: usize, height: usize, channels: usize, mut data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || !(channels == 1 || channels == 3) {
            return Err(Error::invalid(format!("bad image geometry {width}x{height}x{channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "{} values for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        if data.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("NaN pixel"));
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(ImageBuffer {
            width,
            height,
            channels,
            data,
        })
    }

    /// `Y = 0.299 R + 0.587 G + 0.114 B`; grayscale images are returned as is.
    pub fn to_luma(&self) -> ImageBuffer {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect();
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Luma as an `[h, w]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let y = self.to_luma();
        Tensor::new(vec![self.height, self.width], y.data).expect("geometry checked on construction")
    }

    /// Grayscale image from an `[h, w]` tensor, clamped to `[0, 1]`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.rank() != 2 {
            return Err(Error::invalid(format!("image tensor must be [h, w], got {:?}", t.shape())));
        }
        ImageBuffer::new(t.shape()[1], t.shape()[0], 1, t.data().to_vec())
    }

    /// 8-bit samples, rounding half to even.
    pub fn quantize(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v * 255.0).round_ties_even() as u8).collect()
    }
}

pub fn decode_pnm(bytes: &[u8]) -> Result<ImageBuffer> {
    let magic = bytes.get(..2).unwrap_or_default();
    if magic != b"P5" && magic != b"P6" {
        return Err(Error::Unsupported(format!(
            "expected binary PGM (P5) or PPM (P6), found {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Pnm)
        .map_err(|e| Error::format("PNM image", e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, raw) = match img {
        DynamicImage::ImageLuma8(b) => (1, b.into_raw()),
        DynamicImage::ImageRgb8(b) => (3, b.into_raw()),
        other => {
            return Err(Error::Unsupported(format!(
                "{:?} samples; only 8-bit maxval is supported",
                other.color()
            )))
        }
    };
    ImageBuffer::new(w, h, channels, raw.into_iter().map(|v| v as f64 / 255.0).collect())
}

pub fn encode_pnm(buf: &ImageBuffer) -> Result<Vec<u8>> {
    let (subtype, color) = if buf.channels == 1 {
        (PnmSubtype::Graymap(SampleEncoding::Binary), ExtendedColorType::L8)
    } else {
        (PnmSubtype::Pixmap(SampleEncoding::Binary), ExtendedColorType::Rgb8)
    };
    let mut out = Cursor::new(Vec::new());
    PnmEncoder::new(&mut out)
        .with_subtype(subtype)
        .write_image(&buf.quantize(), buf.width as u32, buf.height as u32, color)
        .map_err(|e| Error::format("PNM image", e.to_string()))?;
    Ok(out.into_inner())
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    decode_pnm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Writes P5 for one channel, P6 for three.
pub fn save_image(path: impl AsRef<Path>, buf: &ImageBuffer) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pnm(buf)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p5_header_and_values() {
        let buf = ImageBuffer::new(3, 2, 1, vec![0.0, 1.0, 0.5, 2.0 / 255.0, 0.25, 1.0]).unwrap();
        let bytes = encode_pnm(&buf).unwrap();
        assert!(bytes.starts_with(b"P5"));
        // 0.5·255 = 127.5 → 128, 0.25·255 = 63.75 → 64
        assert_eq!(&bytes[bytes.len() - 6..], &[0, 255, 128, 2, 64, 255]);
        let back = decode_pnm(&bytes).unwrap();
        assert_eq!(back.quantize(), buf.quantize());
    }

    #[test]
    fn half_to_even() {
        let buf = ImageBuffer::new(2, 1, 1, vec![0.5 / 255.0, 1.5 / 255.0]).unwrap();
        assert_eq!(buf.quantize(), vec![0, 2]);
    }

    #[test]
    fn sixteen_bit_is_unsupported() {
        let mut bytes = b"P5\n1 1\n65535\n".to_vec();
        bytes.extend_from_slice(&[0x12, 0x34]);
        assert!(matches!(decode_pnm(&bytes), Err(Error::Unsupported(_))));
    }

    #[test]
    fn malformed_and_ascii_rejected() {
        assert!(matches!(decode_pnm(b"P5\n2 2\n255\n\x01"), Err(Error::Format { .. })));
        assert!(matches!(decode_pnm(b"P2\n1 1\n255\n0\n"), Err(Error::Unsupported(_))));
    }

    #[test]
    fn luma_weights() {
        let rgb = ImageBuffer::new(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert!((rgb.to_luma().data[0] - 0.299).abs() < 1e-15);
        let ppm = encode_pnm(&rgb).unwrap();
        assert!(ppm.starts_with(b"P6"));
        assert_eq!(decode_pnm(&ppm).unwrap().channels, 3);
    }
}
