use serde::{Deserialize, Serialize};

use super::mlp::{decayed_lr, Activation, Mlp};
use crate::data::{FeatureGrid, ImageGrid};
use crate::error::{Error, Result};
use crate::numerics::{Adam, Matrix, Rng, Tape, Var};
use crate::par;
use crate::tokenizer::{embed_tokens, Codebook, TokenGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub hidden: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self { hidden: 64, steps: 3000, batch: 256, lr: 3e-3 }
    }
}

/// Per-position MLP from a cell vector (plus a learned positional vector) to
/// that cell's pixel patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelDecoder {
    pub grid_h: usize,
    pub grid_w: usize,
    pub patch_size: usize,
    pub channels: usize,
    /// `cells × in_dim`.
    pub pos: Matrix,
    pub mlp: Mlp,
    pub loss_trace: Vec<f64>,
}

impl PixelDecoder {
    pub fn new(grid_h: usize, grid_w: usize, patch_size: usize, channels: usize, in_dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        let out = patch_size * patch_size * channels;
        let mlp = Mlp::new(&[in_dim, hidden, out], &[Activation::Gelu, Activation::Identity], rng);
        Self {
            grid_h,
            grid_w,
            patch_size,
            channels,
            pos: Matrix::zeros(grid_h * grid_w, in_dim),
            mlp,
            loss_trace: Vec::new(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.pos.cols()
    }

    pub fn cells(&self) -> usize {
        self.grid_h * self.grid_w
    }

    /// Renders a feature grid to pixels, clamped to `[0, 1]`.
    pub fn decode(&self, grid: &FeatureGrid) -> Result<ImageGrid> {
        if (grid.h(), grid.w(), grid.d()) != (self.grid_h, self.grid_w, self.in_dim()) {
            return Err(Error::Shape(format!(
                "decoder expects {}x{}x{}, got {}x{}x{}",
                self.grid_h,
                self.grid_w,
                self.in_dim(),
                grid.h(),
                grid.w(),
                grid.d()
            )));
        }
        let x = Matrix::from_fn(self.cells(), self.in_dim(), |r, c| grid.cell(r)[c] as f64 + self.pos[(r, c)]);
        let out = self.mlp.forward(&x).pop().expect("nonempty mlp");
        let patches: Vec<Vec<f64>> = (0..out.rows()).map(|r| out.row(r).to_vec()).collect();
        ImageGrid::from_patches(self.grid_h, self.grid_w, self.patch_size, self.channels, &patches)
    }

    pub fn decode_tokens(&self, tokens: &TokenGrid, codebook: &Codebook) -> Result<ImageGrid> {
        self.decode(&embed_tokens(tokens, codebook)?)
    }

    pub(crate) fn params(&self) -> Vec<Matrix> {
        let mut p = vec![self.pos.clone()];
        p.extend(self.mlp.params.iter().cloned());
        p
    }

    pub(crate) fn set_params(&mut self, mut params: Vec<Matrix>) {
        self.pos = params.remove(0);
        self.mlp.params = params;
    }

    /// Recorded forward for rows `x` sitting at grid cells `cells`.
    pub(crate) fn tape_forward(&self, tape: &mut Tape, x: Var, cells: &[usize], vars: &[Var]) -> Var {
        let pos = tape.embedding(vars[0], cells);
        let input = tape.add(x, pos);
        *self.mlp.tape_forward(tape, input, &vars[1..]).last().expect("nonempty mlp")
    }

    pub(crate) fn round_to_f32(&mut self) {
        self.pos.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        self.mlp.round_to_f32();
    }
}

fn check_pairs(grids: &[FeatureGrid], images: &[ImageGrid], patch: usize) -> Result<()> {
    if grids.is_empty() || grids.len() != images.len() {
        return Err(Error::InvalidArgument(format!("{} grids for {} images", grids.len(), images.len())));
    }
    let (g, im) = (&grids[0], &images[0]);
    for (gr, img) in grids.iter().zip(images) {
        if (gr.h(), gr.w(), gr.d()) != (g.h(), g.w(), g.d())
            || (img.height(), img.width(), img.channels()) != (im.height(), im.width(), im.channels())
        {
            return Err(Error::Shape("grids and images must share dimensions".into()));
        }
    }
    if im.height() != g.h() * patch || im.width() != g.w() * patch {
        return Err(Error::Shape(format!(
            "{}x{} grid with patch {patch} does not cover a {}x{} image",
            g.h(),
            g.w(),
            im.height(),
            im.width()
        )));
    }
    Ok(())
}

/// Trains a decoder from feature grids to their source images.
pub fn train_feature_decoder(
    grids: &[FeatureGrid],
    images: &[ImageGrid],
    patch_size: usize,
    cfg: &DecoderConfig,
    seed: u64,
) -> Result<PixelDecoder> {
    check_pairs(grids, images, patch_size)?;
    let (gh, gw, d) = (grids[0].h(), grids[0].w(), grids[0].d());
    let ch = images[0].channels();
    let mut rng = Rng::new(seed);
    let mut dec = PixelDecoder::new(gh, gw, patch_size, ch, d, cfg.hidden, &mut rng);
    let targets: Vec<Vec<Vec<f64>>> = par::map(images, |img| img.patches(patch_size));
    let pixels = patch_size * patch_size * ch;
    let mut params = dec.params();
    let mut opt = Adam::new(&params, 0.9, 0.999);
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let picks: Vec<(usize, usize)> = (0..cfg.batch).map(|_| (rng.below(grids.len()), rng.below(gh * gw))).collect();
        let x = Matrix::from_fn(cfg.batch, d, |r, c| grids[picks[r].0].cell(picks[r].1)[c] as f64);
        let y = Matrix::from_fn(cfg.batch, pixels, |r, c| targets[picks[r].0][picks[r].1][c]);
        let cells: Vec<usize> = picks.iter().map(|p| p.1).collect();
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
        let xv = tape.leaf(x);
        let out = dec.tape_forward(&mut tape, xv, &cells, &vars);
        let loss = tape.mse(out, &y);
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Diverged { step, loss: value, hint: format!("lower the decoder lr below {}", cfg.lr) });
        }
        trace.push(value);
        let grads = tape.backward(loss);
        let g: Vec<Matrix> = vars.iter().map(|v| grads.wrt(*v)).collect();
        opt.update(&mut params, &g, decayed_lr(cfg.lr, step, cfg.steps));
    }
    dec.set_params(params);
    dec.round_to_f32();
    dec.loss_trace = trace;
    Ok(dec)
}

/// Trains a decoder that renders token grids through their centroid vectors.
pub fn train_pixel_decoder(
    token_grids: &[TokenGrid],
    codebook: &Codebook,
    images: &[ImageGrid],
    patch_size: usize,
    cfg: &DecoderConfig,
    seed: u64,
) -> Result<PixelDecoder> {
    let grids: Vec<FeatureGrid> =
        par::map(token_grids, |t| embed_tokens(t, codebook)).into_iter().collect::<Result<_>>()?;
    train_feature_decoder(&grids, images, patch_size, cfg, seed)
}

/// Mean squared pixel error of `decoder` over `(grid, image)` pairs.
pub fn decoder_error(decoder: &PixelDecoder, grids: &[FeatureGrid], images: &[ImageGrid]) -> Result<f64> {
    check_pairs(grids, images, decoder.patch_size)?;
    let errs: Vec<Result<f64>> = par::map_range(grids.len(), |i| {
        let out = decoder.decode(&grids[i])?;
        Ok(pixel_mse(&out, &images[i]))
    });
    let mut total = 0.0;
    for e in errs {
        total += e?;
    }
    Ok(total / grids.len() as f64)
}

pub fn pixel_mse(a: &ImageGrid, b: &ImageGrid) -> f64 {
    let n = a.values().len().max(1) as f64;
    a.values().iter().zip(b.values()).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum::<f64>() / n
}

/// Variance of every pixel value in the set (the error of predicting the global mean).
pub fn pixel_variance(images: &[ImageGrid]) -> f64 {
    let n: usize = images.iter().map(|i| i.values().len()).sum();
    let mean = images.iter().flat_map(|i| i.values()).map(|&v| v as f64).sum::<f64>() / n.max(1) as f64;
    images.iter().flat_map(|i| i.values()).map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n.max(1) as f64
}
