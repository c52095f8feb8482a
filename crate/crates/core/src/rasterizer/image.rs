use std::fs::File;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major RGB image with `f32` channels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: u32, height: u32, data: Vec<f32>) -> Result<Self> {
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(Error::dim(
                "image",
                format!("{width}×{height}×3 needs {expected} values, got {}", data.len()),
            ));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: u32, height: u32, rgb: [f32; 3]) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            data: rgb.iter().copied().cycle().take(n * 3).collect(),
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f32; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [f32; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn max_abs_diff(&self, other: &Image) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Mean squared error over all channels, accumulated in f64.
    pub fn mse(&self, other: &Image) -> Result<f64> {
        if !self.same_size(other) {
            return Err(Error::dim(
                "image_mse",
                format!("{}×{} vs {}×{}", self.width, self.height, other.width, other.height),
            ));
        }
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum();
        Ok(sum / self.data.len().max(1) as f64)
    }

    /// Box-filter downsample by an integer factor.
    pub fn downsample(&self, factor: u32) -> Result<Image> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            return Err(Error::dim(
                "downsample",
                format!("{}×{} not divisible by {factor}", self.width, self.height),
            ));
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let mut out = vec![0f32; (w * h * 3) as usize];
        let norm = 1.0 / (factor * factor) as f32;
        for y in 0..self.height {
            for x in 0..self.width {
                let o = (((y / factor) * w + x / factor) * 3) as usize;
                let p = self.pixel(x, y);
                for c in 0..3 {
                    out[o + c] += p[c] * norm;
                }
            }
        }
        Image::new(w, h, out)
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    /// 8-bit RGB PNG bytes.
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        encode_png(self.width, self.height, png::ColorType::Rgb, &self.to_rgb8())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode_png()?).map_err(|e| Error::io(path, e))
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut dec = png::Decoder::new(std::io::BufReader::new(file));
        dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = dec.read_info().map_err(|e| Error::Png(e.to_string()))?;
        let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::Png(e.to_string()))?;
        let channels = info.color_type.samples();
        let bytes = &buf[..info.buffer_size()];
        let data: Vec<f32> = bytes
            .chunks_exact(channels)
            .flat_map(|px| {
                let rgb = if channels >= 3 { [px[0], px[1], px[2]] } else { [px[0]; 3] };
                rgb.map(|v| v as f32 / 255.0)
            })
            .collect();
        Image::new(info.width, info.height, data)
    }

    /// Little-endian f32 channels, no header.
    pub fn save_raw(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes: Vec<u8> = self.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load_raw(path: impl AsRef<Path>, width: u32, height: u32) -> Result<Image> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() % 4 != 0 {
            return Err(Error::Format(format!("{}: length not a multiple of 4", path.display())));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Image::new(width, height, data)
    }
}

pub(crate) fn encode_png(width: u32, height: u32, color: png::ColorType, bytes: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, width, height);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
    w.write_image_data(bytes).map_err(|e| Error::Png(e.to_string()))?;
    w.finish().map_err(|e| Error::Png(e.to_string()))?;
    Ok(out)
}
