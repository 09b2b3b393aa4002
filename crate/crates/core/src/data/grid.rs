use crate::error::{Error, Result};

/// Image with values in `[0, 1]`, stored row-major with channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f32>,
}

impl ImageGrid {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "image payload {} does not match {height}x{width}x{channels}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self { height, width, channels, values })
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self { height, width, channels, values: vec![value.clamp(0.0, 1.0); height * width * channels] }
    }

    /// Builds an image from arbitrary reals, clamping into `[0, 1]`.
    pub fn from_clamped(height: usize, width: usize, channels: usize, values: Vec<f32>) -> Result<Self> {
        let values = values.into_iter().map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) }).collect();
        Self::new(height, width, channels, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.values[(y * self.width + x) * self.channels + c]
    }

    pub fn check_patch_size(&self, patch: usize) -> Result<()> {
        if patch == 0 || self.height % patch != 0 || self.width % patch != 0 {
            return Err(Error::InvalidArgument(format!(
                "patch size {patch} does not divide {}x{}",
                self.height, self.width
            )));
        }
        Ok(())
    }

    /// Pixels of patch `(py, px)` flattened row-major (channels innermost).
    pub fn patch(&self, py: usize, px: usize, patch: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(patch * patch * self.channels);
        for dy in 0..patch {
            for dx in 0..patch {
                for c in 0..self.channels {
                    out.push(self.get(py * patch + dy, px * patch + dx, c) as f64);
                }
            }
        }
        out
    }

    /// All patches in raster order.
    pub fn patches(&self, patch: usize) -> Vec<Vec<f64>> {
        let (gh, gw) = (self.height / patch, self.width / patch);
        let mut out = Vec::with_capacity(gh * gw);
        for py in 0..gh {
            for px in 0..gw {
                out.push(self.patch(py, px, patch));
            }
        }
        out
    }

    /// Reassembles an image from raster-ordered patches.
    pub fn from_patches(
        grid_h: usize,
        grid_w: usize,
        patch: usize,
        channels: usize,
        patches: &[Vec<f64>],
    ) -> Result<Self> {
        if patches.len() != grid_h * grid_w {
            return Err(Error::Shape(format!("expected {} patches, got {}", grid_h * grid_w, patches.len())));
        }
        let (h, w) = (grid_h * patch, grid_w * patch);
        let mut values = vec![0.0f32; h * w * channels];
        for (i, p) in patches.iter().enumerate() {
            let (py, px) = (i / grid_w, i % grid_w);
            for dy in 0..patch {
                for dx in 0..patch {
                    for c in 0..channels {
                        let v = p[(dy * patch + dx) * channels + c];
                        values[((py * patch + dy) * w + px * patch + dx) * channels + c] = v as f32;
                    }
                }
            }
        }
        Self::from_clamped(h, w, channels, values)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.values.len().max(1) as f64
    }

    /// Mean squared deviation from the image mean.
    pub fn signal_power(&self) -> f64 {
        let m = self.mean();
        self.values.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / self.values.len().max(1) as f64
    }

    /// Horizontally mirrored copy.
    pub fn flip_horizontal(&self) -> ImageGrid {
        let mut values = vec![0.0; self.values.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    values[(y * self.width + x) * self.channels + c] = self.get(y, self.width - 1 - x, c);
                }
            }
        }
        ImageGrid { values, ..*self }
    }
}

/// Continuous per-patch features on an `h × w` grid, `d` values per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    h: usize,
    w: usize,
    d: usize,
    data: Vec<f32>,
}

impl FeatureGrid {
    pub fn new(h: usize, w: usize, d: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != h * w * d {
            return Err(Error::Shape(format!("feature payload {} does not match {h}x{w}x{d}", data.len())));
        }
        Ok(Self { h, w, d, data })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn cells(&self) -> usize {
        self.h * self.w
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Feature vector of cell `i` in raster order.
    #[inline]
    pub fn cell(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn iter_cells(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.d.max(1))
    }

    /// Mean over cells.
    pub fn mean_pool(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        for cell in self.iter_cells() {
            for (o, &v) in out.iter_mut().zip(cell) {
                *o += v as f64;
            }
        }
        let n = self.cells().max(1) as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }
}
