//! Planar multi-channel `f64` rasters.
//!
//! Used for RGB scene images (values in `[0, 1]`), model inputs, and the
//! `k`-channel feature grids consumed by example discovery.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

/// Pixel box `[x0, y0, x1, y1)`, half-open.
pub type BBox = [usize; 4];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Raster {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Raster {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    /// Wraps channel-major (`C x H x W`) data.
    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Dimension(format!(
                "{channels}x{height}x{width} raster needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Feature vector at fractional pixel position `(x, y)` measured in the
    /// coordinates of a `target_h x target_w` image, bilinearly interpolated.
    pub fn sample_scaled(&self, x: f64, y: f64, target_h: usize, target_w: usize) -> Vec<f64> {
        let gx = ((x + 0.5) * self.width as f64 / target_w as f64 - 0.5)
            .clamp(0.0, (self.width - 1) as f64);
        let gy = ((y + 0.5) * self.height as f64 / target_h as f64 - 0.5)
            .clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (gx.floor() as usize, gy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = (gx - x0 as f64, gy - y0 as f64);
        (0..self.channels)
            .map(|c| {
                let top = self.get(c, y0, x0) * (1.0 - fx) + self.get(c, y0, x1) * fx;
                let bottom = self.get(c, y1, x0) * (1.0 - fx) + self.get(c, y1, x1) * fx;
                top * (1.0 - fy) + bottom * fy
            })
            .collect()
    }

    pub fn crop(&self, bbox: BBox) -> Result<Self> {
        let [x0, y0, x1, y1] = bbox;
        if x0 >= x1 || y0 >= y1 || x1 > self.width || y1 > self.height {
            return Err(Error::InvalidInput(format!(
                "crop {bbox:?} outside {}x{} raster",
                self.height, self.width
            )));
        }
        let (h, w) = (y1 - y0, x1 - x0);
        let mut out = Self::zeros(self.channels, h, w);
        for c in 0..self.channels {
            for y in 0..h {
                for x in 0..w {
                    out.set(c, y, x, self.get(c, y0 + y, x0 + x));
                }
            }
        }
        Ok(out)
    }

    /// Rounds every value to the nearest 8-bit level, matching what a PNG
    /// round trip would produce.
    pub fn quantize(&mut self) {
        for v in &mut self.data {
            *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
    }

    pub fn to_rgb8(&self) -> Result<RgbImage> {
        if self.channels != 3 && self.channels != 1 {
            return Err(Error::Dimension(format!(
                "only 1- or 3-channel rasters can be saved, got {}",
                self.channels
            )));
        }
        let to_u8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        Ok(RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let (x, y) = (x as usize, y as usize);
            if self.channels == 3 {
                Rgb([to_u8(self.get(0, y, x)), to_u8(self.get(1, y, x)), to_u8(self.get(2, y, x))])
            } else {
                let g = to_u8(self.get(0, y, x));
                Rgb([g, g, g])
            }
        }))
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = Self::zeros(3, h, w);
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                out.set(c, y as usize, x as usize, px.0[c] as f64 / 255.0);
            }
        }
        out
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8()?.save(path)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        Ok(Self::from_rgb8(&img))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_and_bounds() {
        let r = Raster::from_vec(1, 3, 4, (0..12).map(f64::from).collect()).unwrap();
        let c = r.crop([1, 1, 3, 3]).unwrap();
        assert_eq!(c.data(), &[5.0, 6.0, 9.0, 10.0]);
        assert!(r.crop([0, 0, 5, 1]).is_err());
        assert!(r.crop([2, 0, 2, 1]).is_err());
    }

    #[test]
    fn bilinear_sampling_at_grid_centres() {
        // 2x2 grid sampled from a 4x4 image: image pixel 0.5 sits on grid cell 0.
        let g = Raster::from_vec(1, 2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(g.sample_scaled(0.5, 0.5, 4, 4), vec![0.0]);
        assert_eq!(g.sample_scaled(2.5, 2.5, 4, 4), vec![3.0]);
        assert!((g.sample_scaled(1.5, 0.5, 4, 4)[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn png_round_trip_after_quantize() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = Raster::from_vec(3, 2, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 0.0, 0.33]).unwrap();
        r.quantize();
        let p = dir.path().join("x.png");
        r.save_png(&p).unwrap();
        assert_eq!(Raster::load_png(&p).unwrap(), r);
    }
}
