//! RGB raster images with channel values in `[-1, 1]`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};

/// An `h × w × 3` image stored row-major (HWC), values in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterImage {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl RasterImage {
    pub const CHANNELS: usize = 3;

    pub fn new(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::shape(format!("image dimensions must be positive, got {h}x{w}")));
        }
        if data.len() != h * w * 3 {
            return Err(Error::shape(format!(
                "expected {} values for a {h}x{w}x3 image, got {}",
                h * w * 3,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(Error::param(format!("pixel value {v} outside [-1, 1]")));
        }
        Ok(Self { h, w, data })
    }

    /// Builds an image from arbitrary values, clamping into `[-1, 1]`.
    /// Non-finite values map to 0.
    pub fn from_clamped(h: usize, w: usize, mut data: Vec<f64>) -> Result<Self> {
        for v in data.iter_mut() {
            *v = if v.is_finite() { v.clamp(-1.0, 1.0) } else { 0.0 };
        }
        Self::new(h, w, data)
    }

    pub fn filled(h: usize, w: usize, rgb: [f64; 3]) -> Result<Self> {
        let data = (0..h * w).flat_map(|_| rgb).collect();
        Self::new(h, w, data)
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.w + x) * 3 + c]
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.w + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Bilinear sample at continuous coordinates, pixel centres at integers.
    /// Coordinates outside the image are clamped to the border.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> [f64; 3] {
        let xc = x.clamp(0.0, (self.w - 1) as f64);
        let yc = y.clamp(0.0, (self.h - 1) as f64);
        let x0 = xc.floor() as usize;
        let y0 = yc.floor() as usize;
        let x1 = (x0 + 1).min(self.w - 1);
        let y1 = (y0 + 1).min(self.h - 1);
        let fx = xc - x0 as f64;
        let fy = yc - y0 as f64;
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let top = self.get(y0, x0, c) * (1.0 - fx) + self.get(y0, x1, c) * fx;
            let bottom = self.get(y1, x0, c) * (1.0 - fx) + self.get(y1, x1, c) * fx;
            *o = top * (1.0 - fy) + bottom * fy;
        }
        out
    }

    pub fn same_size(&self, other: &RasterImage) -> bool {
        self.h == other.h && self.w == other.w
    }

    /// Mean absolute difference over all values.
    pub fn mean_l1(&self, other: &RasterImage) -> Result<f64> {
        if !self.same_size(other) {
            return Err(Error::shape(format!(
                "cannot compare {}x{} with {}x{}",
                self.h, self.w, other.h, other.w
            )));
        }
        let sum: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum();
        Ok(sum / self.data.len() as f64)
    }

    /// Box-filter downsample by an integer factor.
    pub fn downsample(&self, factor: usize) -> Result<RasterImage> {
        if factor == 0 || self.h % factor != 0 || self.w % factor != 0 {
            return Err(Error::param(format!(
                "cannot downsample {}x{} by {factor}",
                self.h, self.w
            )));
        }
        let (h, w) = (self.h / factor, self.w / factor);
        let norm = (factor * factor) as f64;
        let mut data = vec![0.0; h * w * 3];
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let mut acc = 0.0;
                    for dy in 0..factor {
                        for dx in 0..factor {
                            acc += self.get(y * factor + dy, x * factor + dx, c);
                        }
                    }
                    data[(y * w + x) * 3 + c] = acc / norm;
                }
            }
        }
        RasterImage::from_clamped(h, w, data)
    }

    pub fn from_rgb8(h: usize, w: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != h * w * 3 {
            return Err(Error::shape(format!(
                "expected {} bytes for {h}x{w} RGB, got {}",
                h * w * 3,
                bytes.len()
            )));
        }
        let data = bytes.iter().map(|&v| f64::from(v) / 127.5 - 1.0).collect();
        Self::from_clamped(h, w, data)
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path)?;
        let mut decoder = png::Decoder::new(BufReader::new(file));
        decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = decoder
            .read_info()
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::Format(format!("{}: image too large", path.display())))?;
        let mut buf = vec![0; size];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let (w, h) = (info.width as usize, info.height as usize);
        let buf = &buf[..info.buffer_size()];
        let rgb: Vec<u8> = match info.color_type {
            png::ColorType::Rgb => buf.to_vec(),
            png::ColorType::Rgba => buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
            png::ColorType::Grayscale => buf.iter().flat_map(|&v| [v, v, v]).collect(),
            png::ColorType::GrayscaleAlpha => {
                buf.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect()
            }
            other => {
                return Err(Error::Format(format!(
                    "{}: unsupported PNG color type {other:?}",
                    path.display()
                )))
            }
        };
        Self::from_rgb8(h, w, &rgb)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path)?;
        let mut encoder = png::Encoder::new(BufWriter::new(file), self.w as u32, self.h as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        writer
            .write_image_data(&self.to_rgb8())
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        writer
            .finish()
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_values() {
        assert!(RasterImage::new(1, 1, vec![0.0, 1.5, 0.0]).is_err());
        assert!(RasterImage::new(1, 1, vec![0.0, f64::NAN, 0.0]).is_err());
        assert!(RasterImage::new(1, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn rgb8_conversion_matches_documented_mapping() {
        let img = RasterImage::from_rgb8(1, 1, &[0, 255, 128]).unwrap();
        assert_eq!(img.data()[0], -1.0);
        assert_eq!(img.data()[1], 1.0);
        assert!((img.data()[2] - (128.0 / 127.5 - 1.0)).abs() < 1e-15);
        assert_eq!(img.to_rgb8(), vec![0, 255, 128]);
    }

    #[test]
    fn png_round_trip_is_lossless_on_8bit_values() {
        let bytes: Vec<u8> = (0..4 * 5 * 3).map(|i| (i * 7 % 256) as u8).collect();
        let img = RasterImage::from_rgb8(4, 5, &bytes).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        img.save_png(&path).unwrap();
        let back = RasterImage::load_png(&path).unwrap();
        assert_eq!(back.to_rgb8(), bytes);
        assert_eq!(back, img);
    }

    #[test]
    fn bilinear_hits_pixel_centres_exactly() {
        let img = RasterImage::from_clamped(2, 2, vec![
            0.0, 0.0, 0.0, 0.5, 0.5, 0.5, //
            -0.5, -0.5, -0.5, 1.0, 1.0, 1.0,
        ])
        .unwrap();
        assert_eq!(img.sample_bilinear(1.0, 0.0), [0.5; 3]);
        let mid = img.sample_bilinear(0.5, 0.5);
        assert!((mid[0] - 0.25).abs() < 1e-15);
    }
}
