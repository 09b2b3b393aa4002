use serde::{Deserialize, Serialize};

use crate::data::ImageGrid;
use crate::numerics::Rng;

/// View family for contrastive training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Per-view noise standard deviation is drawn from `U(0, noise_max)`.
    pub noise_max: f64,
    pub flip: bool,
    /// Maximum window shift in pixels along each axis.
    pub translate: usize,
    /// Additive intensity shift drawn from `U(-brightness, brightness)`.
    pub brightness: f64,
    /// Contrast factor around the view mean drawn from `U(1-contrast, 1+contrast)`.
    pub contrast: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { noise_max: 1.0, flip: true, translate: 1, brightness: 0.2, contrast: 0.4 }
    }
}

fn shifted(v: usize, delta: isize, limit: usize) -> usize {
    (v as isize + delta).clamp(0, limit as isize - 1) as usize
}

struct Photometric {
    shift: f64,
    scale: f64,
    sigma: f64,
}

impl Photometric {
    fn draw(aug: &AugmentConfig, rng: &mut Rng) -> Self {
        let shift = aug.brightness * (2.0 * rng.uniform() - 1.0);
        let scale = 1.0 + aug.contrast * (2.0 * rng.uniform() - 1.0);
        Self { shift, scale, sigma: aug.noise_max * rng.uniform() }
    }

    /// Contrast around `mean`, brightness shift, noise, then clamp.
    fn apply(&self, values: &mut [f64], rng: &mut Rng) {
        if self.shift == 0.0 && self.scale == 1.0 && self.sigma == 0.0 {
            return;
        }
        let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
        for v in values.iter_mut() {
            let x = (*v - mean) * self.scale + mean + self.shift + self.sigma * rng.normal();
            *v = x.clamp(0.0, 1.0);
        }
    }
}

/// Random view of patch `(py, px)`: shifted window, optional mirror, noise.
pub fn augmented_patch(img: &ImageGrid, py: usize, px: usize, p: usize, aug: &AugmentConfig, rng: &mut Rng) -> Vec<f64> {
    let t = aug.translate as isize;
    let (dy, dx) = if t > 0 {
        (rng.below(2 * t as usize + 1) as isize - t, rng.below(2 * t as usize + 1) as isize - t)
    } else {
        (0, 0)
    };
    let flip = aug.flip && rng.bernoulli(0.5);
    let photo = Photometric::draw(aug, rng);
    let ch = img.channels();
    let mut out = Vec::with_capacity(p * p * ch);
    for y in 0..p {
        for x in 0..p {
            let sx = if flip { p - 1 - x } else { x };
            let iy = shifted(py * p + y, dy, img.height());
            let ix = shifted(px * p + sx, dx, img.width());
            for c in 0..ch {
                out.push(img.get(iy, ix, c) as f64);
            }
        }
    }
    photo.apply(&mut out, rng);
    out
}

/// Random view of a whole image: shift with edge replication, optional mirror, noise.
pub fn augmented_image(img: &ImageGrid, aug: &AugmentConfig, rng: &mut Rng) -> ImageGrid {
    let t = aug.translate as isize;
    let (dy, dx) = if t > 0 {
        (rng.below(2 * t as usize + 1) as isize - t, rng.below(2 * t as usize + 1) as isize - t)
    } else {
        (0, 0)
    };
    let flip = aug.flip && rng.bernoulli(0.5);
    let photo = Photometric::draw(aug, rng);
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let mut values = Vec::with_capacity(h * w * ch);
    for y in 0..h {
        for x in 0..w {
            let sx = if flip { w - 1 - x } else { x };
            let iy = shifted(y, dy, h);
            let ix = shifted(sx, dx, w);
            for c in 0..ch {
                values.push(img.get(iy, ix, c) as f64);
            }
        }
    }
    photo.apply(&mut values, rng);
    ImageGrid::new(h, w, ch, values.into_iter().map(|v| v as f32).collect()).expect("clamped values")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_augmentation_returns_the_patch() {
        let mut rng = Rng::new(1);
        let img = ImageGrid::new(8, 8, 1, (0..64).map(|i| i as f32 / 64.0).collect()).unwrap();
        let none = AugmentConfig { noise_max: 0.0, flip: false, translate: 0, brightness: 0.0, contrast: 0.0 };
        assert_eq!(augmented_patch(&img, 1, 0, 4, &none, &mut rng), img.patch(1, 0, 4));
        assert_eq!(augmented_image(&img, &none, &mut rng), img);
    }
}
