//! Linear RGB float images and their PNG / NPY encodings.
//!
//! Pixels are stored row-major, three interleaved channels, in linear light.
//! PNG files are treated as gamma-2.2 encoded: `linear = (v / 255)^2.2` on
//! read and `v = round(255 * linear^(1/2.2))` on write.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ::image::{ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};

pub const GAMMA: f64 = 2.2;

/// Rec. 601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::invalid(format!(
                "buffer of {} floats cannot hold a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_raw(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn luma(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2])
            .collect()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn ensure_same_dims(&self, other: &Image) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        Ok(())
    }

    pub fn to_rgb8(&self) -> RgbImage {
        ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
            let p = self.pixel(x as usize, y as usize);
            Rgb(p.map(encode_channel))
        })
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let mut out = Image::new(w as usize, h as usize);
        for (x, y, px) in img.enumerate_pixels() {
            out.set_pixel(x as usize, y as usize, px.0.map(decode_channel));
        }
        out
    }

    /// Reads any 8-bit PNG (gray, RGB or RGBA; alpha ignored) into linear RGB.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = ::image::open(path.as_ref())?.to_rgb8();
        Ok(Self::from_rgb8(&img))
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_rgb8().save(path.as_ref())?;
        Ok(())
    }

    /// Encodes to PNG bytes in memory.
    pub fn png_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = std::io::Cursor::new(Vec::new());
        self.to_rgb8()
            .write_to(&mut buf, ::image::ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    /// RGBA8 payload (alpha = 255), gamma encoded like the PNG path.
    pub fn to_rgba8_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.width * self.height * 4);
        for p in self.data.chunks_exact(3) {
            out.extend(p.iter().map(|&v| encode_channel(v)));
            out.push(255);
        }
        out
    }

    /// Writes a little-endian `<f4` array of shape (H, W, 3) in NPY v1.0 format.
    pub fn save_npy(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let dict = format!(
            "{{'descr': '<f4', 'fortran_order': False, 'shape': ({}, {}, 3), }}",
            self.height, self.width
        );
        // magic(6) + version(2) + header_len(2) + dict + '\n' padded to 64 bytes
        let unpadded = 10 + dict.len() + 1;
        let pad = (64 - unpadded % 64) % 64;
        let header_len = (dict.len() + pad + 1) as u16;
        w.write_all(b"\x93NUMPY\x01\x00")?;
        w.write_all(&header_len.to_le_bytes())?;
        w.write_all(dict.as_bytes())?;
        w.write_all(&vec![b' '; pad])?;
        w.write_all(b"\n")?;
        for v in &self.data {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads back the layout written by [`Image::save_npy`].
    pub fn load_npy(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut preamble = [0u8; 10];
        r.read_exact(&mut preamble)?;
        if &preamble[..6] != b"\x93NUMPY" {
            return Err(Error::invalid("not an NPY file"));
        }
        let header_len = u16::from_le_bytes([preamble[8], preamble[9]]) as usize;
        let mut header = vec![0u8; header_len];
        r.read_exact(&mut header)?;
        let header = String::from_utf8_lossy(&header);
        if !header.contains("'<f4'") {
            return Err(Error::invalid("expected <f4 dtype"));
        }
        let shape = header
            .split("'shape': (")
            .nth(1)
            .and_then(|s| s.split(')').next())
            .ok_or_else(|| Error::invalid("missing shape"))?;
        let dims: Vec<usize> = shape
            .split(',')
            .filter_map(|s| s.trim().parse().ok())
            .collect();
        let [h, w, 3] = dims[..] else {
            return Err(Error::invalid(format!("unexpected shape ({shape})")));
        };
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != w * h * 3 * 4 {
            return Err(Error::invalid("truncated NPY payload"));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        Image::from_raw(w, h, data)
    }
}

#[inline]
pub fn encode_channel(linear: f64) -> u8 {
    (linear.clamp(0.0, 1.0).powf(1.0 / GAMMA) * 255.0).round() as u8
}

#[inline]
pub fn decode_channel(v: u8) -> f64 {
    (v as f64 / 255.0).powf(GAMMA)
}
