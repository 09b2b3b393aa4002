use digit_core::ar_model::*;
use digit_core::numerics::{Matrix, Rng};
use digit_core::tokenizer::TokenGrid;
use proptest::prelude::*;

fn tiny(vocab: VocabLayout, max_len: usize) -> ArConfig {
    ArConfig {
        layers: 2,
        model_dim: 16,
        heads: 2,
        ffn_dim: 32,
        vocab,
        max_len,
        steps: 300,
        batch: 16,
        optimizer: ArOptimizer { peak_lr: 3e-3, warmup: 30, ..Default::default() },
        ..Default::default()
    }
}

fn randomized(cfg: &ArConfig, seed: u64, std: f64) -> ArModel {
    let mut m = ArModel::new(cfg, seed).unwrap();
    let mut rng = Rng::new(seed + 100);
    for p in &mut m.params {
        p.data_mut().iter_mut().for_each(|v| *v += std * rng.normal());
    }
    m
}

fn uniform_examples(n: usize, len: usize, vocab: &VocabLayout, rng: &mut Rng) -> Vec<ArExample> {
    (0..n)
        .map(|_| {
            let mut ids = vec![vocab.bos()];
            ids.extend((0..len).map(|_| rng.below(vocab.tokens) as u32));
            ArExample::full(ids)
        })
        .collect()
}

#[test]
fn full_model_gradient_matches_finite_differences() {
    let vocab = VocabLayout::new(7, 2);
    let cfg = tiny(vocab, 10);
    let mut model = randomized(&cfg, 1, 0.3);
    let mut rng = Rng::new(2);
    let mut examples = uniform_examples(3, 8, &vocab, &mut rng);
    examples.push(ArExample { ids: vec![vocab.class_id(1).unwrap(), 3, 4, 0, 6], loss_start: 2 });
    let (_, grads) = loss_gradients(&model, &examples).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for p in 0..model.params.len() {
        let n = model.params[p].data().len();
        for _ in 0..6 {
            let i = rng.below(n);
            let orig = model.params[p].data()[i];
            model.params[p].data_mut()[i] = orig + h;
            let up = evaluate_nll(&model, &examples).unwrap();
            model.params[p].data_mut()[i] = orig - h;
            let down = evaluate_nll(&model, &examples).unwrap();
            model.params[p].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads[p].data()[i];
            let rel = (numeric - analytic).abs() / (numeric.abs() + analytic.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-4, "worst relative gradient error {worst:.3e}");
}

#[test]
fn future_tokens_never_change_past_logits() {
    let vocab = VocabLayout::new(9, 3);
    let model = randomized(&tiny(vocab, 12), 3, 0.5);
    let mut rng = Rng::new(4);
    for _ in 0..100 {
        let len = 2 + rng.below(11);
        let ids: Vec<u32> = (0..len).map(|_| rng.below(vocab.size()) as u32).collect();
        let t = rng.below(len - 1);
        let mut mutated = ids.clone();
        for id in &mut mutated[t + 1..] {
            *id = rng.below(vocab.size()) as u32;
        }
        let a = model.forward_logits(&ids).unwrap();
        let b = model.forward_logits(&mutated).unwrap();
        for r in 0..=t {
            let same = a.row(r).iter().zip(b.row(r)).all(|(x, y)| x.to_bits() == y.to_bits());
            assert!(same, "row {r} changed after mutating positions > {t}");
        }
        let full = model.logits(&ids[..=t]).unwrap();
        let cut = model.logits(&mutated[..=t]).unwrap();
        assert_eq!(full, cut);
        for (x, y) in full.iter().zip(a.row(t)) {
            assert!((x - y).abs() < 1e-6);
        }
    }
}

#[test]
fn uniform_source_converges_to_log_vocab() {
    let vocab = VocabLayout::new(16, 0);
    let mut rng = Rng::new(5);
    let train = uniform_examples(400, 16, &vocab, &mut rng);
    let heldout = uniform_examples(200, 16, &vocab, &mut rng);
    let model = train_ar(&train, &tiny(vocab, 20), 6).unwrap();
    let nll = evaluate_nll(&model, &heldout).unwrap();
    let target = (16f64).ln();
    assert!((nll - target).abs() / target < 0.02, "held-out nll {nll:.4} vs ln 16 = {target:.4}");
}

#[test]
fn memorizes_fifty_sequences() {
    let vocab = VocabLayout::new(16, 50);
    let mut rng = Rng::new(7);
    let set: Vec<ArExample> = (0..50)
        .map(|c| {
            let mut ids = vec![vocab.class_id(c).unwrap()];
            ids.extend((0..16).map(|_| rng.below(16) as u32));
            ArExample::full(ids)
        })
        .collect();
    let cfg = ArConfig {
        model_dim: 64,
        ffn_dim: 128,
        heads: 4,
        steps: 1500,
        batch: 25,
        optimizer: ArOptimizer { peak_lr: 3e-3, warmup: 50, ..Default::default() },
        ..tiny(vocab, 20)
    };
    let model = train_ar(&set, &cfg, 8).unwrap();
    let nll = evaluate_nll(&model, &set).unwrap();
    assert!(nll < 0.05, "memorization loss {nll:.4}");
}

#[test]
fn top_one_is_argmax() {
    let mut rng = Rng::new(9);
    for _ in 0..1000 {
        let scores: Vec<f64> = (0..20).map(|_| 3.0 * rng.normal()).collect();
        let argmax = scores.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b }).0;
        let s = SamplerConfig { top_k: 1, top_p: 1.0, temperature: 0.7, seed: 0 };
        assert_eq!(sample_next(&scores, &s, &mut rng).unwrap(), argmax);
    }
}

#[test]
fn nucleus_on_three_scores() {
    let s = SamplerConfig { top_k: 0, top_p: 0.8, temperature: 1.0, seed: 0 };
    let p = truncated_distribution(&[2.0, 1.0, 0.0], &s).unwrap();
    assert_eq!(p[2], 0.0);
    assert!((p[0] - 0.731).abs() < 1e-3 && (p[1] - 0.269).abs() < 1e-3, "{p:?}");
    let mut rng = Rng::new(1);
    for _ in 0..200 {
        assert!(sample_next(&[2.0, 1.0, 0.0], &s, &mut rng).unwrap() < 2);
    }
}

#[test]
fn untruncated_sampler_is_plain_softmax() {
    let scores = [0.3, -1.2, 2.0, 0.0];
    let s = SamplerConfig { top_k: 4, top_p: 1.0, temperature: 1.0, seed: 0 };
    let p = truncated_distribution(&scores, &s).unwrap();
    let z: f64 = scores.iter().map(|v| v.exp()).sum();
    for (a, v) in p.iter().zip(scores) {
        assert!((a - v.exp() / z).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn truncated_mass_sums_to_one(
        scores in prop::collection::vec(-20.0f64..20.0, 1..40),
        top_k in 0usize..10,
        top_p in 0.05f64..=1.0,
        temperature in 0.1f64..4.0,
    ) {
        let s = SamplerConfig { top_k, top_p, temperature, seed: 0 };
        let p = truncated_distribution(&scores, &s).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let support = p.iter().filter(|&&v| v > 0.0).count();
        prop_assert!(support >= 1);
        if top_k > 0 {
            prop_assert!(support <= top_k);
        }
    }
}

#[test]
fn first_position_marginals_match_training_counts() {
    let vocab = VocabLayout::new(4, 0);
    let weights = [0.4, 0.3, 0.2, 0.1];
    let mut rng = Rng::new(11);
    let train: Vec<ArExample> = (0..2000)
        .map(|_| {
            let first = rng.weighted_index(&weights).unwrap() as u32;
            ArExample::full(vec![vocab.bos(), first, rng.below(4) as u32])
        })
        .collect();
    let mut empirical = [0.0; 4];
    for e in &train {
        empirical[e.ids[1] as usize] += 1.0 / train.len() as f64;
    }
    let model = train_ar(&train, &tiny(vocab, 4), 12).unwrap();
    let n = 1000;
    let mut counts = [0usize; 4];
    for i in 0..n {
        let g = generate_grid(&model, None, &SamplerConfig::pure(i as u64), 1, 1).unwrap();
        counts[g.tokens()[0] as usize] += 1;
    }
    for k in 0..4 {
        let p = empirical[k];
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        let freq = counts[k] as f64 / n as f64;
        assert!((freq - p).abs() < 3.0 * sigma, "token {k}: sampled {freq:.3}, training {p:.3}");
    }
}

#[test]
fn greedy_generation_is_deterministic() {
    let vocab = VocabLayout::new(6, 2);
    let model = randomized(&tiny(vocab, 12), 13, 0.3);
    let a = generate_grid(&model, Some(1), &SamplerConfig::greedy(), 3, 3).unwrap();
    let b = generate_grid(&model, Some(1), &SamplerConfig { seed: 99, ..SamplerConfig::greedy() }, 3, 3).unwrap();
    assert_eq!(a, b);
}

/// Targets are noisy copies of 4 templates; sources are a fixed relabeling of the target.
fn stage2_pairs(n: usize, k: usize, rng: &mut Rng) -> Vec<(TokenGrid, TokenGrid)> {
    let templates: Vec<Vec<u32>> = (0..4).map(|t| (0..9).map(|i| ((t * 3 + i * 5) % k) as u32).collect()).collect();
    (0..n)
        .map(|_| {
            let mut target = templates[rng.below(4)].clone();
            for v in &mut target {
                if rng.bernoulli(0.3) {
                    *v = rng.below(k) as u32;
                }
            }
            let source: Vec<u32> = target.iter().map(|&t| ((t as usize * 3 + 1) % k) as u32).collect();
            (TokenGrid::new(3, 3, source).unwrap(), TokenGrid::new(3, 3, target).unwrap())
        })
        .collect()
}

fn stage2_cfg(k: usize) -> ArConfig {
    ArConfig {
        model_dim: 48,
        ffn_dim: 96,
        heads: 4,
        steps: 800,
        batch: 24,
        ..tiny(stage2_vocab(k, k), 24)
    }
}

#[test]
fn stage2_learns_identity_copy() {
    let k = 8;
    let mut rng = Rng::new(21);
    let random_grid = |rng: &mut Rng| TokenGrid::new(3, 3, (0..9).map(|_| rng.below(k) as u32).collect()).unwrap();
    let pairs: Vec<_> = (0..600).map(|_| {
        let g = random_grid(&mut rng);
        (g.clone(), g)
    }).collect();
    let heldout: Vec<_> = (0..100).map(|_| {
        let g = random_grid(&mut rng);
        (g.clone(), g)
    }).collect();
    let model = train_stage2(&pairs, &stage2_cfg(k), 22).unwrap();
    let acc = teacher_forced_accuracy(&model, &stage2_examples(&heldout, &model.cfg.vocab).unwrap()).unwrap();
    assert!(acc >= 0.99, "held-out copy accuracy {acc:.4}");
    let out = translate(&model, &heldout[0].0, 3, 3, &SamplerConfig::greedy()).unwrap();
    assert_eq!(out, heldout[0].1);
}

#[test]
fn stage2_conditioning_gain_vanishes_under_shuffling() {
    let k = 8;
    let mut rng = Rng::new(31);
    let pairs = stage2_pairs(2000, k, &mut rng);
    let heldout = stage2_pairs(200, k, &mut rng);
    let mut shuffled_sources: Vec<TokenGrid> = pairs.iter().map(|p| p.0.clone()).collect();
    rng.shuffle(&mut shuffled_sources);
    let shuffled: Vec<_> = shuffled_sources.into_iter().zip(pairs.iter().map(|p| p.1.clone())).collect();

    let cfg = stage2_cfg(k);
    let golden = train_stage2(&pairs, &cfg, 32).unwrap();
    let broken = train_stage2(&shuffled, &cfg, 32).unwrap();
    let uncond_vocab = VocabLayout::new(k, 0);
    let uncond_cfg = ArConfig { vocab: uncond_vocab, ..cfg.clone() };
    let targets = |ps: &[(TokenGrid, TokenGrid)]| -> Vec<ArExample> {
        ps.iter().map(|p| {
            let mut ids = vec![uncond_vocab.bos()];
            ids.extend_from_slice(p.1.tokens());
            ArExample::full(ids)
        }).collect()
    };
    let uncond = train_ar(&targets(&pairs), &uncond_cfg, 32).unwrap();

    let held = stage2_examples(&heldout, &cfg.vocab).unwrap();
    let nll_golden = evaluate_nll(&golden, &held).unwrap();
    let nll_broken = evaluate_nll(&broken, &held).unwrap();
    let nll_uncond = evaluate_nll(&uncond, &targets(&heldout)).unwrap();
    assert!(nll_golden < nll_uncond - 0.3, "golden {nll_golden:.4} vs unconditional {nll_uncond:.4}");
    assert!((nll_broken - nll_uncond).abs() / nll_uncond < 0.05, "shuffled {nll_broken:.4} vs unconditional {nll_uncond:.4}");
}

#[test]
fn checkpoint_and_log_files() {
    let vocab = VocabLayout::new(5, 0);
    let mut rng = Rng::new(41);
    let ex = uniform_examples(20, 4, &vocab, &mut rng);
    let cfg = ArConfig { steps: 5, ..tiny(vocab, 6) };
    let model = train_ar(&ex, &cfg, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.dgar");
    save_ar(&path, &model).unwrap();
    let back = load_ar(&path).unwrap();
    assert_eq!(back.params, model.params);
    assert_eq!(back.cfg, model.cfg);
    let log = dir.path().join("log.csv");
    write_train_log(&log, &model.log).unwrap();
    let text = std::fs::read_to_string(log).unwrap();
    assert!(text.starts_with("step,lr,loss\n"));
    assert_eq!(text.lines().count(), 6);
}

#[test]
fn shuffled_probe_labels_sit_at_chance() {
    let mut rng = Rng::new(51);
    let n = 600;
    let x = Matrix::from_fn(n, 6, |_, _| rng.normal());
    let labels: Vec<usize> = (0..n).map(|i| i % 4).collect();
    let acc = probe_features(&x, &labels, 4, &ProbeConfig::default()).unwrap();
    assert!((acc - 0.25).abs() < 0.05, "accuracy {acc:.3}");
}
