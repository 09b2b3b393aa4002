use serde::{Deserialize, Serialize};

use super::augment::{augmented_image, augmented_patch, AugmentConfig};
use super::decoder::PixelDecoder;
use super::mlp::{decayed_lr, Activation, Mlp};
use crate::data::{FeatureGrid, ImageGrid};
use crate::error::{Error, Result};
use crate::numerics::matrix::dot;
use crate::numerics::{Adam, Matrix, Rng, Tape, Var};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Reconstructive,
    Discriminative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Patch,
    Global,
}

impl Objective {
    pub fn tag(self) -> &'static str {
        match self {
            Objective::Reconstructive => "recon",
            Objective::Discriminative => "disc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub patch_size: usize,
    pub hidden: usize,
    pub feature_dim: usize,
    /// Projection head widths (discriminative only).
    pub head_hidden: usize,
    pub projection_dim: usize,
    pub decoder_hidden: usize,
    pub steps: usize,
    /// Patches per step (patch level).
    pub batch: usize,
    /// Images per step (global level).
    pub image_batch: usize,
    pub lr: f64,
    pub tau: f64,
    pub augment: AugmentConfig,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            patch_size: 4,
            hidden: 64,
            feature_dim: 16,
            head_hidden: 64,
            projection_dim: 16,
            decoder_hidden: 64,
            steps: 3000,
            batch: 256,
            image_batch: 24,
            lr: 3e-3,
            tau: 0.2,
            augment: AugmentConfig::default(),
        }
    }
}

/// Per-patch MLP encoder with retrievable per-layer activations.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEncoder {
    pub objective: Objective,
    pub level: Level,
    pub patch_size: usize,
    pub channels: usize,
    pub mlp: Mlp,
    /// Per-layer training mean removed by [`PatchEncoder::encode`]; empty = no centering.
    pub centers: Vec<Vec<f64>>,
    pub loss_trace: Vec<f64>,
}

impl PatchEncoder {
    /// Sets `centers` to the mean output of every layer over all patches of `images`.
    pub fn fit_centers(&mut self, images: &[ImageGrid]) -> Result<()> {
        self.centers.clear();
        let outs: Vec<Vec<Matrix>> =
            par::map(images, |img| self.layer_outputs(img)).into_iter().collect::<Result<_>>()?;
        let mut centers: Vec<Vec<f64>> = self.mlp.layer_dims()[1..].iter().map(|&w| vec![0.0; w]).collect();
        let mut count = 0usize;
        for per_image in &outs {
            for (center, m) in centers.iter_mut().zip(per_image) {
                for r in 0..m.rows() {
                    for (c, v) in center.iter_mut().zip(m.row(r)) {
                        *c += v;
                    }
                }
            }
            count += per_image[0].rows();
        }
        for center in &mut centers {
            center.iter_mut().for_each(|c| *c = (*c / count.max(1) as f64) as f32 as f64);
        }
        self.centers = centers;
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.mlp.depth()
    }

    /// Third-to-last layer when the encoder has at least three, else the last.
    pub fn default_layer(&self) -> usize {
        let d = self.depth();
        if d >= 3 {
            d - 3
        } else {
            d - 1
        }
    }

    pub fn feature_dim(&self, layer: usize) -> usize {
        self.mlp.layer_dims()[layer + 1]
    }

    fn patch_matrix(&self, image: &ImageGrid) -> Result<Matrix> {
        image.check_patch_size(self.patch_size)?;
        if image.channels() != self.channels {
            return Err(Error::Shape(format!("encoder expects {} channels, got {}", self.channels, image.channels())));
        }
        let patches = image.patches(self.patch_size);
        Matrix::from_rows(&patches)
    }

    /// Every layer's output on the image's patches, as `cells × width` matrices.
    pub fn layer_outputs(&self, image: &ImageGrid) -> Result<Vec<Matrix>> {
        let x = self.patch_matrix(image)?;
        let mut outs = self.mlp.forward(&x);
        if self.objective == Objective::Discriminative {
            normalize_rows(outs.last_mut().expect("nonempty"));
        }
        Ok(outs)
    }

    /// Features of `layer` (default tap when `None`) on the patch grid.
    pub fn encode(&self, image: &ImageGrid, layer: Option<usize>) -> Result<FeatureGrid> {
        let layer = layer.unwrap_or_else(|| self.default_layer());
        if layer >= self.depth() {
            return Err(Error::InvalidArgument(format!("layer {layer} out of range for depth {}", self.depth())));
        }
        let outs = self.layer_outputs(image)?;
        let m = &outs[layer];
        let (gh, gw) = (image.height() / self.patch_size, image.width() / self.patch_size);
        let width = m.cols();
        let data = match self.centers.get(layer) {
            Some(center) => m.data().iter().enumerate().map(|(i, &v)| (v - center[i % width]) as f32).collect(),
            None => m.data().iter().map(|&v| v as f32).collect(),
        };
        FeatureGrid::new(gh, gw, width, data)
    }

    pub fn encode_batch(&self, images: &[ImageGrid], layer: Option<usize>) -> Result<Vec<FeatureGrid>> {
        par::map(images, |img| self.encode(img, layer)).into_iter().collect()
    }

    /// Unit-norm output embeddings of individual patches (rows of `x`).
    fn embed_patch_rows(&self, x: &Matrix) -> Matrix {
        let mut out = self.mlp.forward(x).pop().expect("nonempty");
        normalize_rows(&mut out);
        out
    }
}

fn normalize_rows(m: &mut Matrix) {
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
}

fn check_images(images: &[ImageGrid], patch: usize) -> Result<(usize, usize, usize)> {
    let first = images.first().ok_or_else(|| Error::InvalidArgument("no training images".into()))?;
    first.check_patch_size(patch)?;
    for img in images {
        if (img.height(), img.width(), img.channels()) != (first.height(), first.width(), first.channels()) {
            return Err(Error::Shape("training images must share dimensions".into()));
        }
    }
    Ok((first.height() / patch, first.width() / patch, first.channels()))
}

fn diverged(step: usize, loss: f64, lr: f64) -> Error {
    Error::Diverged { step, loss, hint: format!("loss is not finite; retry with lr below {lr}") }
}

/// Jointly trains a per-patch encoder and pixel decoder on squared reconstruction error.
pub fn train_reconstructive(images: &[ImageGrid], cfg: &EncoderConfig, seed: u64) -> Result<(PatchEncoder, PixelDecoder)> {
    let p = cfg.patch_size;
    let (gh, gw, ch) = check_images(images, p)?;
    let pixels = p * p * ch;
    let mut rng = Rng::new(seed);
    let mlp = Mlp::new(&[pixels, cfg.hidden, cfg.feature_dim], &[Activation::Gelu, Activation::Identity], &mut rng);
    let mut enc = PatchEncoder { objective: Objective::Reconstructive, level: Level::Patch, patch_size: p, channels: ch, mlp, centers: vec![], loss_trace: vec![] };
    let mut dec = PixelDecoder::new(gh, gw, p, ch, cfg.feature_dim, cfg.decoder_hidden, &mut rng);
    let patches: Vec<Vec<Vec<f64>>> = par::map(images, |img| img.patches(p));

    let n_enc = enc.mlp.params.len();
    let mut params: Vec<Matrix> = enc.mlp.params.iter().cloned().chain(dec.params()).collect();
    let mut opt = Adam::new(&params, 0.9, 0.999);
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let picks: Vec<(usize, usize)> = (0..cfg.batch).map(|_| (rng.below(images.len()), rng.below(gh * gw))).collect();
        let x = Matrix::from_fn(cfg.batch, pixels, |r, c| patches[picks[r].0][picks[r].1][c]);
        let cells: Vec<usize> = picks.iter().map(|q| q.1).collect();
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|m| tape.leaf(m.clone())).collect();
        let xv = tape.leaf(x.clone());
        let feat = *enc.mlp.tape_forward(&mut tape, xv, &vars[..n_enc]).last().expect("nonempty");
        let out = dec.tape_forward(&mut tape, feat, &cells, &vars[n_enc..]);
        let loss = tape.mse(out, &x);
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(diverged(step, value, cfg.lr));
        }
        trace.push(value);
        let grads = tape.backward(loss);
        let g: Vec<Matrix> = vars.iter().map(|v| grads.wrt(*v)).collect();
        opt.update(&mut params, &g, decayed_lr(cfg.lr, step, cfg.steps));
    }
    let dec_params = params.split_off(n_enc);
    enc.mlp.params = params;
    enc.mlp.round_to_f32();
    enc.fit_centers(images)?;
    dec.set_params(dec_params);
    // The decoder saw uncentered features; fold the center into its positional table.
    let center = enc.centers.last().expect("fitted").clone();
    for r in 0..dec.pos.rows() {
        for (v, c) in dec.pos.row_mut(r).iter_mut().zip(&center) {
            *v += c;
        }
    }
    dec.round_to_f32();
    enc.loss_trace = trace.clone();
    dec.loss_trace = trace;
    Ok((enc, dec))
}

fn discriminative_mlp(pixels: usize, cfg: &EncoderConfig, rng: &mut Rng) -> Mlp {
    Mlp::new(
        &[pixels, cfg.hidden, cfg.feature_dim, cfg.head_hidden, cfg.projection_dim],
        &[Activation::Gelu, Activation::Identity, Activation::Gelu, Activation::Identity],
        rng,
    )
}

/// Symmetric cross-view InfoNCE between two batches of (unnormalized) embeddings.
fn cross_view_loss(tape: &mut Tape, a: Var, b: Var, tau: f64) -> Var {
    let n = tape.value(a).rows();
    let za = tape.l2_normalize_rows(a);
    let zb = tape.l2_normalize_rows(b);
    let logits = tape.matmul_t(za, zb);
    let logits = tape.scale(logits, 1.0 / tau);
    let logits_t = tape.transpose(logits);
    let targets: Vec<Option<usize>> = (0..n).map(Some).collect();
    let l1 = tape.cross_entropy(logits, &targets);
    let l2 = tape.cross_entropy(logits_t, &targets);
    let s = tape.add(l1, l2);
    tape.scale(s, 0.5)
}

/// Contrastive training: patch-level views at `Level::Patch`, mean-pooled image
/// views at `Level::Global`.
pub fn train_discriminative(images: &[ImageGrid], cfg: &EncoderConfig, level: Level, seed: u64) -> Result<PatchEncoder> {
    if !(cfg.tau > 0.0) || !cfg.tau.is_finite() {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {}", cfg.tau)));
    }
    let p = cfg.patch_size;
    let (gh, gw, ch) = check_images(images, p)?;
    let pixels = p * p * ch;
    let cells = gh * gw;
    let mut rng = Rng::new(seed);
    let mlp = discriminative_mlp(pixels, cfg, &mut rng);
    let mut enc = PatchEncoder { objective: Objective::Discriminative, level, patch_size: p, channels: ch, mlp, centers: vec![], loss_trace: vec![] };
    let mut params = enc.mlp.params.clone();
    let mut opt = Adam::new(&params, 0.9, 0.999);
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let (xa, xb, group) = match level {
            Level::Patch => {
                let mut a = Matrix::zeros(cfg.batch, pixels);
                let mut b = Matrix::zeros(cfg.batch, pixels);
                for r in 0..cfg.batch {
                    let img = &images[rng.below(images.len())];
                    let c = rng.below(cells);
                    let (py, px) = (c / gw, c % gw);
                    a.row_mut(r).copy_from_slice(&augmented_patch(img, py, px, p, &cfg.augment, &mut rng));
                    b.row_mut(r).copy_from_slice(&augmented_patch(img, py, px, p, &cfg.augment, &mut rng));
                }
                (a, b, 1)
            }
            Level::Global => {
                let mut rows_a = Vec::with_capacity(cfg.image_batch * cells);
                let mut rows_b = Vec::with_capacity(cfg.image_batch * cells);
                for _ in 0..cfg.image_batch {
                    let img = &images[rng.below(images.len())];
                    rows_a.extend(augmented_image(img, &cfg.augment, &mut rng).patches(p));
                    rows_b.extend(augmented_image(img, &cfg.augment, &mut rng).patches(p));
                }
                (Matrix::from_rows(&rows_a)?, Matrix::from_rows(&rows_b)?, cells)
            }
        };
        let mut tape = Tape::new();
        let vars = enc.mlp.leaves(&mut tape);
        let mut heads = Vec::with_capacity(2);
        for x in [xa, xb] {
            let xv = tape.leaf(x);
            let out = *enc.mlp.tape_forward(&mut tape, xv, &vars).last().expect("nonempty");
            heads.push(if group > 1 { tape.mean_pool_rows(out, group) } else { out });
        }
        let loss = cross_view_loss(&mut tape, heads[0], heads[1], cfg.tau);
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(diverged(step, value, cfg.lr));
        }
        trace.push(value);
        let grads = tape.backward(loss);
        let g: Vec<Matrix> = vars.iter().map(|v| grads.wrt(*v)).collect();
        opt.update(&mut params, &g, decayed_lr(cfg.lr, step, cfg.steps));
        enc.mlp.params.clone_from(&params);
    }
    enc.mlp.round_to_f32();
    enc.fit_centers(images)?;
    enc.loss_trace = trace;
    Ok(enc)
}

/// Builds an untrained encoder with the discriminative architecture.
pub fn untrained_discriminative(patch_size: usize, channels: usize, cfg: &EncoderConfig, seed: u64) -> PatchEncoder {
    let mut rng = Rng::new(seed);
    let mlp = discriminative_mlp(patch_size * patch_size * channels, cfg, &mut rng);
    PatchEncoder { objective: Objective::Discriminative, level: Level::Patch, patch_size, channels, mlp, centers: vec![], loss_trace: vec![] }
}

/// Positive/negative agreement on held-out patches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgreementReport {
    /// Share of anchors whose second view is closer than a random patch.
    pub win_rate: f64,
    pub mean_positive: f64,
    pub mean_negative: f64,
}

/// For each sampled anchor patch, compares the cosine between two augmented
/// views with the cosine between the first view and a random other patch.
pub fn augmentation_agreement(
    encoder: &PatchEncoder,
    images: &[ImageGrid],
    aug: &AugmentConfig,
    samples: usize,
    seed: u64,
) -> Result<AgreementReport> {
    let p = encoder.patch_size;
    let (gh, gw, _) = check_images(images, p)?;
    let mut rng = Rng::new(seed);
    let pixels = p * p * encoder.channels;
    let (mut a, mut b, mut r) = (Matrix::zeros(samples, pixels), Matrix::zeros(samples, pixels), Matrix::zeros(samples, pixels));
    for s in 0..samples {
        let i = rng.below(images.len());
        let c = rng.below(gh * gw);
        let (py, px) = (c / gw, c % gw);
        a.row_mut(s).copy_from_slice(&augmented_patch(&images[i], py, px, p, aug, &mut rng));
        b.row_mut(s).copy_from_slice(&augmented_patch(&images[i], py, px, p, aug, &mut rng));
        let (j, d) = loop {
            let j = rng.below(images.len());
            let d = rng.below(gh * gw);
            if (j, d) != (i, c) {
                break (j, d);
            }
        };
        r.row_mut(s).copy_from_slice(&images[j].patch(d / gw, d % gw, p));
    }
    let (za, zb, zr) = (encoder.embed_patch_rows(&a), encoder.embed_patch_rows(&b), encoder.embed_patch_rows(&r));
    let (mut wins, mut pos, mut neg) = (0usize, 0.0, 0.0);
    for s in 0..samples {
        let cp = dot(za.row(s), zb.row(s));
        let cn = dot(za.row(s), zr.row(s));
        pos += cp;
        neg += cn;
        if cp > cn {
            wins += 1;
        }
    }
    let n = samples.max(1) as f64;
    Ok(AgreementReport { win_rate: wins as f64 / n, mean_positive: pos / n, mean_negative: neg / n })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_cfg() -> EncoderConfig {
        EncoderConfig { steps: 200, batch: 64, image_batch: 4, ..Default::default() }
    }

    #[test]
    fn grid_shape_and_determinism() {
        let enc = untrained_discriminative(4, 1, &EncoderConfig::default(), 0);
        let img = ImageGrid::new(32, 32, 1, (0..1024).map(|i| (i % 7) as f32 / 7.0).collect()).unwrap();
        let a = enc.encode(&img, None).unwrap();
        assert_eq!((a.h(), a.w(), a.d()), (8, 8, 16));
        assert_eq!(a, enc.encode(&img, None).unwrap());
        assert_eq!(enc.default_layer(), 1);
        assert!(enc.encode(&img, Some(4)).is_err());
    }

    #[test]
    fn tau_guard() {
        let img = ImageGrid::constant(8, 8, 1, 0.5);
        let cfg = EncoderConfig { tau: 0.0, ..quick_cfg() };
        assert!(train_discriminative(&[img], &cfg, Level::Patch, 0).is_err());
    }

    #[test]
    fn constant_images_reconstruct() {
        let imgs: Vec<ImageGrid> = (0..4).map(|i| ImageGrid::constant(8, 8, 1, 0.2 * i as f32)).collect();
        let cfg = EncoderConfig { steps: 1500, batch: 32, ..Default::default() };
        let (_, dec) = train_reconstructive(&imgs, &cfg, 1).unwrap();
        let tail = dec.loss_trace[dec.loss_trace.len() - 20..].iter().sum::<f64>() / 20.0;
        assert!(tail < 1e-4, "{tail}");
    }

    #[test]
    fn global_level_trains() {
        let imgs: Vec<ImageGrid> =
            (0..6).map(|i| ImageGrid::new(8, 8, 1, (0..64).map(|j| ((i * j) % 5) as f32 / 5.0).collect()).unwrap()).collect();
        let enc = train_discriminative(&imgs, &quick_cfg(), Level::Global, 2).unwrap();
        assert_eq!(enc.level, Level::Global);
        assert!(enc.loss_trace.iter().all(|v| v.is_finite()));
    }
}
