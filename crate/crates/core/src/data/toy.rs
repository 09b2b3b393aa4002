//! Procedural grayscale shape corpus.
//!
//! Class identity is the shape kind; position, scale, rotation, intensities and
//! pixel noise are nuisance factors drawn per image.

use serde::{Deserialize, Serialize};

use super::grid::ImageGrid;
use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
    Cross,
    Stripes,
    Triangle,
    Ring,
    Frame,
    Checker,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 8] = [
        ShapeKind::Rectangle,
        ShapeKind::Ellipse,
        ShapeKind::Cross,
        ShapeKind::Stripes,
        ShapeKind::Triangle,
        ShapeKind::Ring,
        ShapeKind::Frame,
        ShapeKind::Checker,
    ];

    /// Membership test in the shape's canonical frame (roughly `[-1, 1]²`).
    fn contains(self, u: f64, v: f64) -> bool {
        let inside_square = u.abs() <= 1.0 && v.abs() <= 1.0;
        match self {
            ShapeKind::Rectangle => u.abs() <= 1.0 && v.abs() <= 0.6,
            ShapeKind::Ellipse => u * u + (v / 0.6).powi(2) <= 1.0,
            ShapeKind::Cross => (u.abs() <= 1.0 && v.abs() <= 0.28) || (v.abs() <= 1.0 && u.abs() <= 0.28),
            ShapeKind::Stripes => inside_square && (((v + 1.0) * 2.5).floor() as i64) % 2 == 0,
            ShapeKind::Triangle => (-0.8..=0.9).contains(&v) && u.abs() <= (0.9 - v) / 1.7,
            ShapeKind::Ring => {
                let r = (u * u + v * v).sqrt();
                (0.55..=1.0).contains(&r)
            }
            ShapeKind::Frame => inside_square && !(u.abs() < 0.6 && v.abs() < 0.6),
            ShapeKind::Checker => {
                inside_square && ((((u + 1.0) * 2.0).floor() + ((v + 1.0) * 2.0).floor()) as i64) % 2 == 0
            }
        }
    }
}

/// Parameters of the procedural generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    pub side: usize,
    pub shapes: Vec<ShapeKind>,
    /// Shape half-extent as a fraction of the image side.
    pub scale_range: (f64, f64),
    /// Maximum center offset from the image middle, as a fraction of the side.
    pub position_jitter: f64,
    pub rotate: bool,
    pub background_range: (f64, f64),
    pub foreground_range: (f64, f64),
    /// Standard deviation of per-pixel Gaussian noise.
    pub noise_floor: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            side: 32,
            shapes: ShapeKind::ALL.to_vec(),
            scale_range: (0.25, 0.42),
            position_jitter: 0.12,
            rotate: true,
            background_range: (0.0, 0.25),
            foreground_range: (0.65, 1.0),
            noise_floor: 0.03,
        }
    }
}

impl GeneratorSpec {
    pub fn class_count(&self) -> usize {
        self.shapes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(format!("generator spec: {msg}")));
        if self.shapes.len() < 2 {
            return bad("at least 2 shape classes are required");
        }
        if self.side < 16 {
            return bad("image side must be at least 16");
        }
        let ordered = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !ordered(self.scale_range) || self.scale_range.0 <= 0.0 || self.scale_range.1 > 0.5 {
            return bad("scale_range must satisfy 0 < lo <= hi <= 0.5");
        }
        if !(0.0..=0.5).contains(&self.position_jitter) {
            return bad("position_jitter must lie in [0, 0.5]");
        }
        for r in [self.background_range, self.foreground_range] {
            if !ordered(r) || r.0 < 0.0 || r.1 > 1.0 {
                return bad("intensity ranges must be ordered within [0, 1]");
            }
        }
        if !(self.noise_floor >= 0.0 && self.noise_floor.is_finite()) {
            return bad("noise_floor must be a nonnegative real");
        }
        Ok(())
    }

    /// Renders one image of `kind` using `rng` for every nuisance factor.
    pub fn render(&self, kind: ShapeKind, rng: &mut Rng) -> ImageGrid {
        let side = self.side as f64;
        let half = rng.uniform_range(self.scale_range.0, self.scale_range.1) * side;
        let cx = side / 2.0 + rng.uniform_range(-self.position_jitter, self.position_jitter) * side;
        let cy = side / 2.0 + rng.uniform_range(-self.position_jitter, self.position_jitter) * side;
        let angle = if self.rotate { rng.uniform_range(0.0, std::f64::consts::TAU) } else { 0.0 };
        let (sin, cos) = angle.sin_cos();
        let bg = rng.uniform_range(self.background_range.0, self.background_range.1);
        let fg = rng.uniform_range(self.foreground_range.0, self.foreground_range.1);
        const SS: [f64; 2] = [0.25, 0.75];
        let mut values = Vec::with_capacity(self.side * self.side);
        for y in 0..self.side {
            for x in 0..self.side {
                let mut cover = 0.0;
                for sy in SS {
                    for sx in SS {
                        let dx = x as f64 + sx - cx;
                        let dy = y as f64 + sy - cy;
                        let u = (cos * dx + sin * dy) / half;
                        let v = (-sin * dx + cos * dy) / half;
                        if kind.contains(u, v) {
                            cover += 0.25;
                        }
                    }
                }
                let noise = if self.noise_floor > 0.0 { self.noise_floor * rng.normal() } else { 0.0 };
                values.push((bg + (fg - bg) * cover + noise).clamp(0.0, 1.0) as f32);
            }
        }
        ImageGrid::new(self.side, self.side, 1, values).expect("rendered values are clamped")
    }
}

/// Labeled synthetic corpus, reproducible from `(spec, seed)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub images: Vec<ImageGrid>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub spec: GeneratorSpec,
    pub seed: u64,
}

impl ToyDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Subset by index, preserving the given order.
    pub fn subset(&self, indices: &[usize]) -> ToyDataset {
        ToyDataset {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            spec: self.spec.clone(),
            seed: self.seed,
        }
    }

    /// First `n_train` images and the rest.
    pub fn split(&self, n_train: usize) -> (ToyDataset, ToyDataset) {
        let n_train = n_train.min(self.len());
        let train: Vec<usize> = (0..n_train).collect();
        let test: Vec<usize> = (n_train..self.len()).collect();
        (self.subset(&train), self.subset(&test))
    }
}

/// Generates `n` images; image `i` has class `i mod class_count`.
pub fn generate_toy_dataset(spec: &GeneratorSpec, n: usize, seed: u64) -> Result<ToyDataset> {
    spec.validate()?;
    let root = Rng::new(seed);
    let classes = spec.class_count();
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let images = par::map_range(n, |i| {
        let mut rng = root.split(i as u64);
        spec.render(spec.shapes[labels[i]], &mut rng)
    });
    Ok(ToyDataset { images, labels, class_count: classes, spec: spec.clone(), seed })
}

/// `⌈fraction·n⌉` distinct indices drawn uniformly without replacement, sorted.
pub fn subsample_fraction(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("fraction {fraction} must lie in (0, 1]")));
    }
    let amount = ((fraction * n as f64).ceil() as usize).min(n);
    if amount == n {
        return Ok((0..n).collect());
    }
    let mut idx = Rng::new(seed).sample_indices(n, amount);
    idx.sort_unstable();
    Ok(idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(classes: usize) -> GeneratorSpec {
        GeneratorSpec { shapes: ShapeKind::ALL[..classes].to_vec(), ..GeneratorSpec::default() }
    }

    #[test]
    fn balanced_classes() {
        let ds = generate_toy_dataset(&small_spec(4), 400, 7).unwrap();
        assert_eq!(ds.class_counts(), vec![100; 4]);
    }

    #[test]
    fn round_robin_counts() {
        // oracle: class of image i is i mod 3
        let mut oracle = [0usize; 3];
        (0..10).for_each(|i| oracle[i % 3] += 1);
        assert_eq!(oracle, [4, 3, 3]);
        let ds = generate_toy_dataset(&small_spec(3), 10, 1).unwrap();
        assert_eq!(ds.class_counts(), oracle.to_vec());
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let a = generate_toy_dataset(&GeneratorSpec::default(), 20, 3).unwrap();
        let b = generate_toy_dataset(&GeneratorSpec::default(), 20, 3).unwrap();
        assert_eq!(a, b);
        let c = generate_toy_dataset(&GeneratorSpec::default(), 20, 4).unwrap();
        assert_ne!(a.images, c.images);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(generate_toy_dataset(&small_spec(1), 10, 0).is_err());
        let tiny = GeneratorSpec { side: 8, ..GeneratorSpec::default() };
        assert!(generate_toy_dataset(&tiny, 10, 0).is_err());
        let inverted = GeneratorSpec { scale_range: (0.4, 0.2), ..GeneratorSpec::default() };
        assert!(generate_toy_dataset(&inverted, 10, 0).is_err());
    }

    #[test]
    fn subsample_counts() {
        assert_eq!(subsample_fraction(50, 1.0, 1).unwrap(), (0..50).collect::<Vec<_>>());
        let s = subsample_fraction(100, 0.1, 1).unwrap();
        assert_eq!(s.len(), 10);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(subsample_fraction(101, 0.1, 1).unwrap().len(), 11);
        assert!(subsample_fraction(10, 0.0, 1).is_err());
        assert!(subsample_fraction(10, 1.5, 1).is_err());
    }

    #[test]
    fn subsample_overlap_matches_expectation() {
        // Two independent uniform 10% draws share on average 10% of either,
        // so |A∩B|/|A∪B| ≈ 0.1 / 1.9.
        let n = 1000;
        let trials = 400;
        let mut total = 0.0;
        for t in 0..trials {
            let a = subsample_fraction(n, 0.1, 2 * t).unwrap();
            let b = subsample_fraction(n, 0.1, 2 * t + 1).unwrap();
            let inter = a.iter().filter(|x| b.binary_search(x).is_ok()).count() as f64;
            total += inter / (a.len() + b.len()) as f64 / (1.0 - inter / (a.len() + b.len()) as f64);
        }
        let mean = total / trials as f64;
        assert!((mean - 0.1 / 1.9).abs() < 0.005, "mean jaccard {mean}");
    }
}
