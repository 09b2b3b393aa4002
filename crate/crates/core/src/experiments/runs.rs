use std::fs;
use std::path::Path;

use serde::Serialize;

use super::output::{ExperimentKind, Manifest, OutputSet, Outcome};
use super::workspace::{Split, Workspace};
use crate::ar_model::{
    evaluate_nll, generate_grid, linear_probe, prefix_completion_eval, probe_features, sequence_examples,
    stage2_examples, teacher_forced_accuracy, translate, ArModel, Pipeline, PrefixReport, ProbeReport,
};
use crate::data::io::encode_images;
use crate::data::ImageGrid;
use crate::encoders::{augmentation_agreement, decoder_error, pixel_mse, pixel_variance, Objective};
use crate::error::{Error, Result};
use crate::latent_lab::{
    fit_pca, fit_projections, make_two_gaussians, noise_robust_accuracy, rotated_gaussian, train_linear_autoencoder,
    verify_pca_equivalence, AccuracyCurve, AutoencoderConfig, ProjectionSet,
};
use crate::metrics::{split_half_floor, toy_fid};
use crate::numerics::{Matrix, Rng};
use crate::par;
use crate::stability::{ordering_violations, stability_sweep, StabilityReport, SweepEntry};
use crate::tokenizer::tokens::encode_token_grids;
use crate::tokenizer::TokenGrid;

/// Seed column of per-seed CSVs; aggregate rows read `mean`.
fn seed_or_mean<S: serde::Serializer>(seed: &Option<u64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match seed {
        Some(v) => s.serialize_u64(*v),
        None => s.serialize_str("mean"),
    }
}

const OBJECTIVES: [Objective; 2] = [Objective::Reconstructive, Objective::Discriminative];

#[derive(Serialize)]
struct MetricRow<'a> {
    metric: &'a str,
    value: f64,
}

fn metric_rows<'a>(pairs: &[(&'a str, f64)]) -> Vec<MetricRow<'a>> {
    pairs.iter().map(|&(metric, value)| MetricRow { metric, value }).collect()
}

pub struct Toy2dRun {
    pub projections: ProjectionSet,
    pub curves: Vec<AccuracyCurve>,
    pub outcome: Outcome,
}

/// Gate: mean LDA accuracy at least mean PCA accuracy at every sigma.
pub fn run_toy2d(ws: &Workspace, out: &Path) -> Result<Toy2dRun> {
    #[derive(Serialize)]
    struct Row<'a> {
        method: &'a str,
        sigma: f64,
        #[serde(serialize_with = "seed_or_mean")]
        seed: Option<u64>,
        accuracy: f64,
    }
    #[derive(Serialize)]
    struct Dir<'a> {
        method: &'a str,
        x: f64,
        y: f64,
    }
    let cfg = &ws.cfg;
    let c = &cfg.toy2d;
    let points = make_two_gaussians(&c.spec, cfg.seed)?;
    let projections = fit_projections(&points, &c.infonce, cfg.seed)?;
    let curves = [&projections.pca, &projections.lda, &projections.infonce]
        .iter()
        .map(|p| noise_robust_accuracy(p, &points.x, &points.labels, &c.sigmas, &c.seeds))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for curve in &curves {
        for r in &curve.rows {
            rows.push(Row { method: &curve.method, sigma: r.sigma, seed: Some(r.seed), accuracy: r.accuracy });
        }
        for &(sigma, accuracy) in &curve.mean {
            rows.push(Row { method: &curve.method, sigma, seed: None, accuracy });
        }
    }
    let dirs: Vec<Dir> = [&projections.pca, &projections.lda, &projections.infonce]
        .iter()
        .map(|p| Dir { method: &p.name, x: p.direction[0], y: p.direction[1] })
        .collect();

    let mut violations = Vec::new();
    for (&(sigma, pca), &(_, lda)) in curves[0].mean.iter().zip(&curves[1].mean) {
        if lda < pca {
            violations.push(format!("sigma {sigma}: lda accuracy {lda:.4} < pca {pca:.4}"));
        }
    }

    let mut set = OutputSet::new(out, ExperimentKind::Toy2d)?;
    set.csv("toy2d-accuracy.csv", &rows)?;
    set.csv("toy2d-directions.csv", &dirs)?;
    set.csv(
        "toy2d-alignment.csv",
        &metric_rows(&[("infonce_cos_lda", projections.infonce_cos_lda), ("infonce_cos_pca", projections.infonce_cos_pca)]),
    )?;
    let outcome = set.finish(cfg, Vec::new(), violations)?;
    Ok(Toy2dRun { projections, curves, outcome })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropRow {
    pub dataset: usize,
    pub m: usize,
    pub max_angle: f64,
    pub pinv_residual: f64,
    pub error_gap: f64,
    pub ae_error: f64,
    pub pca_error: f64,
    pub steps: usize,
}

pub struct PropCheckRun {
    pub rows: Vec<PropRow>,
    pub outcome: Outcome,
}

/// Gate: principal angle and pseudo-inverse residual under the configured thresholds.
pub fn run_prop_check(ws: &Workspace, out: &Path) -> Result<PropCheckRun> {
    let cfg = &ws.cfg;
    let c = &cfg.prop_check;
    let stds: Vec<f64> = (0..c.dim).map(|i| 3.0 * 0.8f64.powi(i as i32)).collect();
    let jobs: Vec<(usize, usize)> = (0..c.datasets).flat_map(|d| c.ms.iter().map(move |&m| (d, m))).collect();
    let rows = par::map(&jobs, |&(d, m)| -> Result<PropRow> {
        let seed = Rng::new(cfg.seed).split(d as u64).seed();
        let data = rotated_gaussian(seed, c.n, &stds)?;
        let ae = train_linear_autoencoder(&data, &AutoencoderConfig { m, steps: c.steps, lr: c.lr, seed, ..Default::default() })?;
        let r = verify_pca_equivalence(&ae, &fit_pca(&data, m)?, &data)?;
        Ok(PropRow {
            dataset: d,
            m,
            max_angle: r.max_angle,
            pinv_residual: r.pinv_residual,
            error_gap: r.error_gap,
            ae_error: r.ae_error,
            pca_error: r.pca_error,
            steps: ae.loss_trace.len() - 1,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut violations = Vec::new();
    for r in &rows {
        if !(r.max_angle < c.max_angle) {
            violations.push(format!("dataset {} m {}: max angle {:.3e} >= {:.1e}", r.dataset, r.m, r.max_angle, c.max_angle));
        }
        if !(r.pinv_residual < c.max_residual) {
            violations.push(format!(
                "dataset {} m {}: pinv residual {:.3e} >= {:.1e}",
                r.dataset, r.m, r.pinv_residual, c.max_residual
            ));
        }
    }
    let mut set = OutputSet::new(out, ExperimentKind::PropCheck)?;
    set.csv("prop-check.csv", &rows)?;
    let outcome = set.finish(cfg, Vec::new(), violations)?;
    Ok(PropCheckRun { rows, outcome })
}

pub fn run_train_encoder(ws: &Workspace, out: &Path, objective: Objective) -> Result<Outcome> {
    let enc = ws.encoder(objective)?;
    let (_, test) = ws.dataset()?;
    let mut metrics = vec![
        ("depth", enc.depth() as f64),
        ("feature_dim", enc.feature_dim(enc.default_layer()) as f64),
    ];
    match objective {
        Objective::Reconstructive => {
            let dec = ws.feature_decoder()?;
            let feats = ws.features(objective, Split::Test)?;
            metrics.push(("heldout_pixel_mse", decoder_error(&dec, &feats, &test.images)?));
            metrics.push(("heldout_pixel_variance", pixel_variance(&test.images)));
        }
        Objective::Discriminative => {
            let seed = ws.stage_seed(super::workspace::stage::AGREEMENT, 0);
            let a = augmentation_agreement(&enc, &test.images, &ws.cfg.disc_encoder.augment, 2000, seed)?;
            metrics.push(("heldout_win_rate", a.win_rate));
            metrics.push(("heldout_mean_positive_cosine", a.mean_positive));
            metrics.push(("heldout_mean_negative_cosine", a.mean_negative));
        }
    }
    let mut set = OutputSet::labeled(out, ExperimentKind::TrainEncoder, objective.tag())?;
    set.csv(&format!("{}.csv", set.stem()), &metric_rows(&metrics))?;
    set.finish(&ws.cfg, ws.used_artifacts(), Vec::new())
}

pub fn run_fit_codebook(ws: &Workspace, out: &Path, objective: Objective) -> Result<Outcome> {
    #[derive(Serialize)]
    struct Usage {
        token: usize,
        train_count: usize,
    }
    let k = ws.cfg.codebook.k;
    let cb = ws.codebook(objective, k, 0)?;
    let mut counts = vec![0usize; k];
    for g in ws.tokens(objective, k, 0, Split::Train)? {
        for &t in g.tokens() {
            counts[t as usize] += 1;
        }
    }
    let usage: Vec<Usage> = counts.iter().enumerate().map(|(token, &train_count)| Usage { token, train_count }).collect();
    let meta = cb.meta();
    let mut set = OutputSet::labeled(out, ExperimentKind::FitCodebook, objective.tag())?;
    let stem = set.stem().to_string();
    set.csv(&format!("{stem}-usage.csv"), &usage)?;
    set.csv(
        &format!("{stem}.csv"),
        &metric_rows(&[
            ("k", k as f64),
            ("dim", cb.dim() as f64),
            ("iterations", meta.iterations as f64),
            ("inertia", meta.inertia),
            ("sample_count", meta.sample_count as f64),
            ("unused_tokens", counts.iter().filter(|&&c| c == 0).count() as f64),
        ]),
    )?;
    set.bytes(&format!("{stem}.dgcb"), &cb.to_bytes())?;
    set.finish(&ws.cfg, ws.used_artifacts(), Vec::new())
}

pub fn run_tokenize(ws: &Workspace, out: &Path, objective: Objective) -> Result<Outcome> {
    let k = ws.cfg.codebook.k;
    let mut set = OutputSet::labeled(out, ExperimentKind::Tokenize, objective.tag())?;
    let stem = set.stem().to_string();
    for split in [Split::Train, Split::Test] {
        let grids = ws.tokens(objective, k, 0, split)?;
        set.bytes(&format!("{stem}-{}.dgtk", split.tag()), &encode_token_grids(&grids)?)?;
    }
    set.finish(&ws.cfg, ws.used_artifacts(), Vec::new())
}

pub struct StabilityRun {
    pub report: StabilityReport,
    pub outcome: Outcome,
}

/// Gate: discriminative tokens beat reconstructive ones on both statistics at every SNR.
pub fn run_stability(ws: &Workspace, out: &Path) -> Result<StabilityRun> {
    #[derive(Serialize)]
    struct Row<'a> {
        encoder: &'a str,
        snr: f64,
        #[serde(serialize_with = "seed_or_mean")]
        seed: Option<u64>,
        change_rate: f64,
        mean_cosine: f64,
    }
    let k = ws.cfg.codebook.k;
    let encoders = OBJECTIVES.map(|o| ws.encoder(o));
    let [recon, disc] = encoders;
    let (recon, disc) = (recon?, disc?);
    let (cb_r, cb_d) = (ws.codebook(Objective::Reconstructive, k, 0)?, ws.codebook(Objective::Discriminative, k, 0)?);
    let (_, test) = ws.dataset()?;
    let entries = [
        SweepEntry { tag: "recon".into(), encoder: &recon, codebook: Some(&cb_r) },
        SweepEntry { tag: "disc".into(), encoder: &disc, codebook: Some(&cb_d) },
    ];
    let report = stability_sweep(&entries, &test.images, &ws.cfg.stability)?;
    let rows: Vec<Row> = report
        .rows
        .iter()
        .chain(&report.means)
        .map(|r| Row { encoder: &r.encoder, snr: r.snr, seed: r.seed, change_rate: r.change_rate, mean_cosine: r.mean_cosine })
        .collect();
    #[derive(Serialize)]
    struct Realized {
        snr: f64,
        realized_snr: f64,
    }
    let realized: Vec<Realized> = report.realized_snr.iter().map(|&(snr, realized_snr)| Realized { snr, realized_snr }).collect();
    let violations = ordering_violations(&report, "disc", "recon");
    let mut set = OutputSet::new(out, ExperimentKind::Stability)?;
    set.csv("stability.csv", &rows)?;
    set.csv("stability-realized-snr.csv", &realized)?;
    if !report.notes.is_empty() {
        set.bytes("stability-notes.txt", (report.notes.join("\n") + "\n").as_bytes())?;
    }
    let outcome = set.finish(&ws.cfg, ws.used_artifacts(), violations)?;
    Ok(StabilityRun { report, outcome })
}

/// Probe sequences (leading BOS) and labels over train then test images.
fn probe_inputs(ws: &Workspace, model: &ArModel, objective: Objective, k: usize, seed: u64) -> Result<(Vec<Vec<u32>>, Vec<usize>)> {
    let (train, test) = ws.dataset()?;
    let mut seqs = ws.sequences(objective, k, seed, Split::Train, false)?;
    seqs.extend(ws.sequences(objective, k, seed, Split::Test, false)?);
    let ids = sequence_examples(&seqs, &model.cfg.vocab).into_iter().map(|e| e.ids).collect();
    let labels = train.labels.iter().chain(&test.labels).copied().collect();
    Ok((ids, labels))
}

/// Linear classifier on raw pixels of train then test images.
pub fn pixel_baseline(ws: &Workspace) -> Result<f64> {
    let (train, test) = ws.dataset()?;
    let mut rows = ws.pixel_matrix(Split::Train)?.into_vec();
    rows.extend(ws.pixel_matrix(Split::Test)?.into_vec());
    let n = train.len() + test.len();
    let x = Matrix::from_vec(n, rows.len() / n, rows)?;
    let labels: Vec<usize> = train.labels.iter().chain(&test.labels).copied().collect();
    probe_features(&x, &labels, ws.class_count(), &ws.cfg.probe.probe)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeEntry {
    pub tokenizer: String,
    pub seed: u64,
    pub report: ProbeReport,
}

fn probe_one(ws: &Workspace, objective: Objective, k: usize, seed: u64) -> Result<ProbeEntry> {
    let model = ws.ar(objective, k, seed, false)?;
    let (seqs, labels) = probe_inputs(ws, &model, objective, k, seed)?;
    let report = linear_probe(&model, &seqs, &labels, ws.class_count(), &ws.cfg.probe.probe, objective.tag())?;
    Ok(ProbeEntry { tokenizer: objective.tag().into(), seed, report })
}

#[derive(Serialize)]
struct ProbeCsv<'a> {
    tokenizer: &'a str,
    k: usize,
    seed: u64,
    layer: usize,
    accuracy: f64,
}

fn probe_rows(entries: &[ProbeEntry]) -> Vec<ProbeCsv<'_>> {
    entries
        .iter()
        .flat_map(|e| {
            e.report.layer_accuracy.iter().enumerate().map(move |(layer, &accuracy)| ProbeCsv {
                tokenizer: &e.tokenizer,
                k: e.report.codebook_size,
                seed: e.seed,
                layer,
                accuracy,
            })
        })
        .collect()
}

pub struct ProbeRun {
    pub entries: Vec<ProbeEntry>,
    pub pixel_baseline: f64,
    pub outcome: Outcome,
}

impl ProbeRun {
    /// Mean over seeds of the best-layer accuracy for `tokenizer` at codebook size `k`.
    pub fn mean_best(&self, tokenizer: &str, k: usize) -> Option<f64> {
        let best: Vec<f64> = self
            .entries
            .iter()
            .filter(|e| e.tokenizer == tokenizer && e.report.codebook_size == k)
            .map(|e| e.report.best().1)
            .collect();
        (!best.is_empty()).then(|| best.iter().sum::<f64>() / best.len() as f64)
    }
}

#[derive(Serialize)]
struct BestCsv<'a> {
    tokenizer: &'a str,
    k: usize,
    mean_best_accuracy: f64,
}

fn finish_probe(ws: &Workspace, out: &Path, kind: ExperimentKind, entries: Vec<ProbeEntry>, keys: &[(&str, usize)]) -> Result<ProbeRun> {
    let pixel = pixel_baseline(ws)?;
    let mut run = ProbeRun { entries, pixel_baseline: pixel, outcome: Outcome { kind, files: Vec::new(), violations: Vec::new() } };
    let mut best: Vec<BestCsv> = keys
        .iter()
        .filter_map(|&(t, k)| run.mean_best(t, k).map(|a| BestCsv { tokenizer: t, k, mean_best_accuracy: a }))
        .collect();
    best.push(BestCsv { tokenizer: "pixels", k: 0, mean_best_accuracy: pixel });
    let mut set = OutputSet::new(out, kind)?;
    set.csv(&format!("{}.csv", kind.tag()), &probe_rows(&run.entries))?;
    set.csv(&format!("{}-best.csv", kind.tag()), &best)?;
    run.outcome = set.finish(&ws.cfg, ws.used_artifacts(), Vec::new())?;
    Ok(run)
}

/// Per-layer probes of unconditional AR models on both tokenizers.
pub fn run_probe(ws: &Workspace, out: &Path) -> Result<ProbeRun> {
    let k = ws.cfg.codebook.k;
    let mut entries = Vec::new();
    for o in OBJECTIVES {
        for &seed in &ws.cfg.probe.seeds {
            entries.push(probe_one(ws, o, k, seed)?);
        }
    }
    finish_probe(ws, out, ExperimentKind::Probe, entries, &[("recon", k), ("disc", k)])
}

/// Per-layer probes of AR models on discriminative tokens across codebook sizes.
pub fn run_tokenize_ablation(ws: &Workspace, out: &Path) -> Result<ProbeRun> {
    let mut entries = Vec::new();
    for &k in &ws.cfg.ablation.ks {
        for &seed in &ws.cfg.ablation.seeds {
            entries.push(probe_one(ws, Objective::Discriminative, k, seed)?);
        }
    }
    let keys: Vec<(&str, usize)> = ws.cfg.ablation.ks.iter().map(|&k| ("disc", k)).collect();
    finish_probe(ws, out, ExperimentKind::TokenizeAblation, entries, &keys)
}

pub fn run_train_ar(ws: &Workspace, out: &Path, objective: Objective, conditional: bool) -> Result<Outcome> {
    let k = ws.cfg.codebook.k;
    let (model, log) = ws.ar_with_log(objective, k, 0, conditional)?;
    let test = ws.sequences(objective, k, 0, Split::Test, conditional)?;
    let nll = evaluate_nll(&model, &sequence_examples(&test, &model.cfg.vocab))?;
    let label = format!("{}-{}", objective.tag(), if conditional { "cond" } else { "uncond" });
    let mut set = OutputSet::labeled(out, ExperimentKind::TrainAr, &label)?;
    let stem = set.stem().to_string();
    set.bytes(&format!("{stem}-log.csv"), &fs::read(&log)?)?;
    set.csv(
        &format!("{stem}.csv"),
        &metric_rows(&[
            ("parameters", model.parameter_count() as f64),
            ("heldout_nll", nll),
            ("uniform_nll", (k as f64).ln()),
        ]),
    )?;
    set.finish(&ws.cfg, ws.used_artifacts(), Vec::new())
}

pub struct Stage2Run {
    pub heldout_nll: f64,
    pub unconditional_nll: f64,
    pub teacher_forced_accuracy: f64,
    pub translation_accuracy: f64,
    pub outcome: Outcome,
}

pub fn run_train_stage2(ws: &Workspace, out: &Path) -> Result<Stage2Run> {
    let cfg = &ws.cfg;
    let k = cfg.codebook.k;
    let (model, log) = ws.stage2_with_log(k)?;
    let pairs = ws.stage2_pairs(k, Split::Test)?;
    let examples = stage2_examples(&pairs, &model.cfg.vocab)?;
    let heldout_nll = evaluate_nll(&model, &examples)?;
    let tf = teacher_forced_accuracy(&model, &examples)?;
    let uncond = ws.ar(Objective::Reconstructive, k, 0, false)?;
    let recon_test = ws.sequences(Objective::Reconstructive, k, 0, Split::Test, false)?;
    let unconditional_nll = evaluate_nll(&uncond, &sequence_examples(&recon_test, &uncond.cfg.vocab))?;
    let translated = par::map_range(pairs.len(), |i| {
        let (src, tgt) = &pairs[i];
        let sampler = cfg.sampler.resolve(k, Rng::new(cfg.seed).split(i as u64).seed());
        translate(&model, src, tgt.h(), tgt.w(), &sampler)
    })
    .into_iter()
    .collect::<Result<Vec<TokenGrid>>>()?;
    let (hit, total) = translated.iter().zip(&pairs).fold((0usize, 0usize), |(h, t), (g, (_, tgt))| {
        (h + g.tokens().iter().zip(tgt.tokens()).filter(|(a, b)| a == b).count(), t + g.len())
    });
    let translation_accuracy = hit as f64 / total.max(1) as f64;
    let mut set = OutputSet::new(out, ExperimentKind::TrainStage2)?;
    set.bytes("train-stage2-log.csv", &fs::read(&log)?)?;
    set.bytes("train-stage2-translations.dgtk", &encode_token_grids(&translated)?)?;
    set.csv(
        "train-stage2.csv",
        &metric_rows(&[
            ("heldout_nll", heldout_nll),
            ("unconditional_recon_nll", unconditional_nll),
            ("teacher_forced_accuracy", tf),
            ("sampled_translation_accuracy", translation_accuracy),
        ]),
    )?;
    let outcome = set.finish(cfg, ws.used_artifacts(), Vec::new())?;
    Ok(Stage2Run { heldout_nll, unconditional_nll, teacher_forced_accuracy: tf, translation_accuracy, outcome })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerateRow {
    pub tokenizer: String,
    pub samples: usize,
    pub toy_fid: f64,
    pub teacher_forced_fid: f64,
    pub noise_floor: f64,
    /// Held-out pixel MSE of encode, quantize, decode.
    pub recon_term: f64,
    /// Held-out AR negative log-likelihood in nats per token.
    pub gen_term: f64,
}

pub struct GenerateRun {
    pub rows: Vec<GenerateRow>,
    pub outcome: Outcome,
}

fn render_all(grids: &[TokenGrid], ws: &Workspace, objective: Objective, k: usize) -> Result<Vec<ImageGrid>> {
    let cb = ws.codebook(objective, k, 0)?;
    let dec = ws.pixel_decoder(objective, k, 0)?;
    par::map(grids, |g| dec.decode_tokens(g, &cb)).into_iter().collect()
}

/// Samples images from each tokenizer pipeline and scores them with the
/// frozen discriminative encoder.
pub fn run_generate(ws: &Workspace, out: &Path) -> Result<GenerateRun> {
    let cfg = &ws.cfg;
    let k = cfg.codebook.k;
    let g = cfg.generate;
    let (_, test) = ws.dataset()?;
    let fid_encoder = ws.encoder(Objective::Discriminative)?;
    let noise_floor = split_half_floor(&test.images, &fid_encoder, cfg.seed)?;
    let classes = ws.class_count();
    let mut set = OutputSet::new(out, ExperimentKind::Generate)?;
    let mut rows = Vec::new();
    for o in OBJECTIVES {
        let model = ws.ar(o, k, 0, g.conditional)?;
        let heldout = ws.tokens(o, k, 0, Split::Test)?;
        let (h, w) = (heldout[0].h(), heldout[0].w());
        let grids = par::map_range(g.count, |i| {
            let sampler = cfg.sampler.resolve(k, Rng::new(cfg.seed).split(i as u64).seed());
            generate_grid(&model, g.conditional.then_some(i % classes), &sampler, h, w)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let images = render_all(&grids, ws, o, k)?;
        let rendered = render_all(&heldout, ws, o, k)?;
        let recon_term = rendered.iter().zip(&test.images).map(|(a, b)| pixel_mse(a, b)).sum::<f64>() / rendered.len() as f64;
        let seqs = ws.sequences(o, k, 0, Split::Test, g.conditional)?;
        rows.push(GenerateRow {
            tokenizer: o.tag().into(),
            samples: g.count,
            toy_fid: toy_fid(&test.images, &images, &fid_encoder)?,
            teacher_forced_fid: toy_fid(&test.images, &rendered, &fid_encoder)?,
            noise_floor,
            recon_term,
            gen_term: evaluate_nll(&model, &sequence_examples(&seqs, &model.cfg.vocab))?,
        });
        set.bytes(&format!("generate-{}.dgtk", o.tag()), &encode_token_grids(&grids)?)?;
        set.bytes(&format!("generate-{}.dgim", o.tag()), &encode_images(&images)?)?;
    }
    set.csv("generate.csv", &rows)?;
    let outcome = set.finish(cfg, ws.used_artifacts(), Vec::new())?;
    Ok(GenerateRun { rows, outcome })
}

pub struct PrefixRun {
    pub report: PrefixReport,
    pub noise_floor: f64,
    pub outcome: Outcome,
}

/// Completes held-out token grids from growing prefixes with both pipelines.
pub fn run_prefix_sweep(ws: &Workspace, out: &Path) -> Result<PrefixRun> {
    #[derive(Serialize)]
    struct Row<'a> {
        pipeline: &'a str,
        frac: Option<f64>,
        prefix_rows: Option<usize>,
        #[serde(serialize_with = "seed_or_mean")]
        seed: Option<u64>,
        toy_fid: f64,
    }
    let cfg = &ws.cfg;
    let k = cfg.codebook.k;
    let (_, test) = ws.dataset()?;
    let fid_encoder = ws.encoder(Objective::Discriminative)?;
    let noise_floor = split_half_floor(&test.images, &fid_encoder, cfg.seed)?;
    let mut parts = Vec::new();
    for o in OBJECTIVES {
        parts.push((o, ws.ar(o, k, 0, false)?, ws.codebook(o, k, 0)?, ws.pixel_decoder(o, k, 0)?, ws.tokens(o, k, 0, Split::Test)?));
    }
    let pipelines: Vec<Pipeline> = parts
        .iter()
        .map(|(o, model, codebook, decoder, heldout)| Pipeline {
            tag: o.tag().into(),
            model,
            codebook,
            decoder,
            heldout: heldout.clone(),
        })
        .collect();
    let pcfg = cfg.prefix.resolve(cfg.sampler.resolve(k, 0));
    let report = prefix_completion_eval(&pipelines, &test.images, &fid_encoder, &pcfg)?;
    let mut rows: Vec<Row> = report
        .rows
        .iter()
        .map(|r| Row { pipeline: &r.pipeline, frac: Some(r.frac), prefix_rows: Some(r.prefix_rows), seed: Some(r.seed), toy_fid: r.toy_fid })
        .collect();
    rows.extend(report.means.iter().map(|m| Row { pipeline: &m.pipeline, frac: Some(m.frac), prefix_rows: None, seed: None, toy_fid: m.toy_fid }));
    rows.extend(report.teacher_forced.iter().map(|(p, f)| Row { pipeline: p, frac: Some(1.0), prefix_rows: None, seed: None, toy_fid: *f }));
    rows.push(Row { pipeline: "real-split-half", frac: None, prefix_rows: None, seed: None, toy_fid: noise_floor });
    let mut set = OutputSet::new(out, ExperimentKind::PrefixSweep)?;
    set.csv("prefix-sweep.csv", &rows)?;
    let outcome = set.finish(cfg, ws.used_artifacts(), Vec::new())?;
    Ok(PrefixRun { report, noise_floor, outcome })
}

/// Collects every manifest in `out` into a markdown index.
pub fn run_report(ws: &Workspace, out: &Path) -> Result<Outcome> {
    let mut names: Vec<String> = fs::read_dir(out)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with("_manifest.json") && !n.starts_with("report"))
        .collect();
    names.sort();
    let mut md = String::from("# Experiment report\n\n| run | description | gate | outputs |\n|---|---|---|---|\n");
    let mut violations = Vec::new();
    for name in &names {
        let text = fs::read_to_string(out.join(name))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Malformed(format!("{name}: {e}")))?;
        let run = name.trim_end_matches("_manifest.json");
        let gate = if m.gate_passed { "pass".to_string() } else { format!("FAIL ({})", m.violations.len()) };
        let files: Vec<&str> = m.outputs.iter().map(|f| f.file.as_str()).collect();
        md.push_str(&format!("| {run} | {} | {gate} | {} |\n", m.description, files.join(", ")));
        violations.extend(m.violations.iter().map(|v| format!("{run}: {v}")));
    }
    if names.is_empty() {
        md.push_str("\nNo experiment manifests found.\n");
    }
    if !violations.is_empty() {
        md.push_str("\n## Gate violations\n\n");
        for v in &violations {
            md.push_str(&format!("- {v}\n"));
        }
    }
    let mut set = OutputSet::new(out, ExperimentKind::Report)?;
    set.bytes("report.md", md.as_bytes())?;
    set.finish(&ws.cfg, Vec::new(), violations)
}
