//! Image and depth-map buffers with PNG / flat-binary persistence.

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Row-major RGB image with components in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRgb {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<Vec3>,
}

impl ImageRgb {
    pub fn new(width: u32, height: u32) -> Self {
        ImageRgb {
            width,
            height,
            pixels: vec![Vec3::ZERO; (width * height) as usize],
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> Vec3 {
        self.pixels[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, c: Vec3) {
        self.pixels[(y * self.width + x) as usize] = c;
    }

    /// Bilinear sample at continuous pixel coordinates, clamped to the border.
    pub fn sample_bilinear(&self, u: f64, v: f64) -> Vec3 {
        let maxx = (self.width - 1) as f64;
        let maxy = (self.height - 1) as f64;
        let u = u.clamp(0.0, maxx);
        let v = v.clamp(0.0, maxy);
        let x0 = u.floor();
        let y0 = v.floor();
        let fx = u - x0;
        let fy = v - y0;
        let x0 = x0 as u32;
        let y0 = y0 as u32;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bot = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        top * (1.0 - fy) + bot * fy
    }

    /// Luminance as the channel mean.
    pub fn luma(&self) -> Vec<f64> {
        self.pixels
            .iter()
            .map(|p| (p.x + p.y + p.z) / 3.0)
            .collect()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut img = image::RgbImage::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let c = self.get(x, y);
                let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                img.put_pixel(x, y, image::Rgb([q(c.x), q(c.y), q(c.z)]));
            }
        }
        img.save(path)
            .map_err(|e| Error::InvalidInput(format!("png write {}: {e}", path.display())))
    }

    pub fn load_png(path: &Path) -> Result<ImageRgb> {
        let img = image::open(path)
            .map_err(|e| Error::InvalidInput(format!("png read {}: {e}", path.display())))?
            .to_rgb8();
        let (width, height) = img.dimensions();
        let mut out = ImageRgb::new(width, height);
        for (x, y, p) in img.enumerate_pixels() {
            out.set(
                x,
                y,
                Vec3::new(
                    p.0[0] as f64 / 255.0,
                    p.0[1] as f64 / 255.0,
                    p.0[2] as f64 / 255.0,
                ),
            );
        }
        Ok(out)
    }
}

/// Row-major per-pixel depth in scene units.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32) -> Self {
        DepthMap {
            width,
            height,
            values: vec![0.0; (width * height) as usize],
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.values[(y * self.width + x) as usize]
    }

    /// Lossless dump: little-endian u32 width and height, then row-major f64.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&self.width.to_le_bytes())?;
        w.write_all(&self.height.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<DepthMap> {
        let mut r = BufReader::new(File::open(path)?);
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let width = u32::from_le_bytes(u32buf);
        r.read_exact(&mut u32buf)?;
        let height = u32::from_le_bytes(u32buf);
        let n = (width as usize) * (height as usize);
        let mut values = Vec::with_capacity(n);
        let mut f64buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut f64buf)?;
            values.push(f64::from_le_bytes(f64buf));
        }
        Ok(DepthMap {
            width,
            height,
            values,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_map_round_trips_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.depth");
        let mut dm = DepthMap::new(7, 5);
        for (i, v) in dm.values.iter_mut().enumerate() {
            *v = (i as f64).sqrt() * 0.137 + 1e-12;
        }
        dm.save(&path).unwrap();
        let back = DepthMap::load(&path).unwrap();
        assert_eq!(dm.width, back.width);
        assert_eq!(dm.height, back.height);
        for (a, b) in dm.values.iter().zip(&back.values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn png_round_trip_is_exact_at_8bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let mut img = ImageRgb::new(4, 3);
        for (i, p) in img.pixels.iter_mut().enumerate() {
            // Values on the 8-bit grid survive the round trip exactly.
            *p = Vec3::new(
                (i % 256) as f64 / 255.0,
                ((i * 7) % 256) as f64 / 255.0,
                ((i * 31) % 256) as f64 / 255.0,
            );
        }
        img.save_png(&path).unwrap();
        let back = ImageRgb::load_png(&path).unwrap();
        for (a, b) in img.pixels.iter().zip(&back.pixels) {
            assert!((*a - *b).norm() < 1e-12);
        }
    }

    #[test]
    fn bilinear_sampling_interpolates() {
        let mut img = ImageRgb::new(2, 2);
        img.set(0, 0, Vec3::splat(0.0));
        img.set(1, 0, Vec3::splat(1.0));
        img.set(0, 1, Vec3::splat(0.0));
        img.set(1, 1, Vec3::splat(1.0));
        let mid = img.sample_bilinear(0.5, 0.5);
        assert!((mid.x - 0.5).abs() < 1e-12);
    }
}
