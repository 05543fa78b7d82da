//! Dense row-major image rasters with an arbitrary channel count.
//!
//! Everything the renderer and fitter exchange (radiance images, masks,
//! backgrounds, composites) is a `Raster` of f64 values.

use crate::error::{Error, Result};

/// Row-major H x W x C image buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Raster {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Raster {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Raster {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_data(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::invalid_input(format!(
                "raster data length {} does not match {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        Ok(Raster {
            height,
            width,
            channels,
            data,
        })
    }

    #[inline]
    pub fn idx(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[self.idx(row, col, ch)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f64) {
        let i = self.idx(row, col, ch);
        self.data[i] = value;
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn same_shape(&self, other: &Raster) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Bilinear sample at continuous pixel-center coordinates (x right, y down).
    /// Pixel (r, c) has its center at (c + 0.5, r + 0.5). Out-of-frame area
    /// reads as `fill`.
    pub fn sample_bilinear(&self, x: f64, y: f64, ch: usize, fill: f64) -> f64 {
        let gx = x - 0.5;
        let gy = y - 0.5;
        let x0 = gx.floor();
        let y0 = gy.floor();
        let fx = gx - x0;
        let fy = gy - y0;
        let read = |r: i64, c: i64| -> f64 {
            if r < 0 || c < 0 || r >= self.height as i64 || c >= self.width as i64 {
                fill
            } else {
                self.get(r as usize, c as usize, ch)
            }
        };
        let x0 = x0 as i64;
        let y0 = y0 as i64;
        let top = lerp(read(y0, x0), read(y0, x0 + 1), fx);
        let bot = lerp(read(y0 + 1, x0), read(y0 + 1, x0 + 1), fx);
        lerp(top, bot, fy)
    }

    /// Mean squared error against another raster of identical shape.
    pub fn mse(&self, other: &Raster) -> Result<f64> {
        if !self.same_shape(other) {
            return Err(Error::invalid_input("mse: raster shape mismatch"));
        }
        let n = self.data.len().max(1) as f64;
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(sum / n)
    }

    /// Peak signal-to-noise ratio in dB for values in [0, 1].
    pub fn psnr(&self, other: &Raster) -> Result<f64> {
        let mse = self.mse(other)?;
        if mse < 1e-12 {
            return Ok(120.0);
        }
        Ok(10.0 * (1.0 / mse).log10())
    }

    /// Horizontal concatenation; all inputs must share height and channels.
    pub fn hconcat(parts: &[Raster]) -> Result<Raster> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid_input("hconcat: no rasters"))?;
        let h = first.height;
        let c = first.channels;
        let total_w: usize = parts.iter().map(|p| p.width).sum();
        for p in parts {
            if p.height != h || p.channels != c {
                return Err(Error::invalid_input("hconcat: shape mismatch"));
            }
        }
        let mut out = Raster::zeros(h, total_w, c);
        let mut col0 = 0;
        for p in parts {
            for r in 0..h {
                for cc in 0..p.width {
                    for ch in 0..c {
                        out.set(r, col0 + cc, ch, p.get(r, cc, ch));
                    }
                }
            }
            col0 += p.width;
        }
        Ok(out)
    }
}

#[inline]
pub(crate) fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}
