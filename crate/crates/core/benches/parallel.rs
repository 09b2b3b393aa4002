use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use digit_core::data::{generate_toy_dataset, GeneratorSpec};
use digit_core::encoders::{untrained_discriminative, EncoderConfig};
use digit_core::par;
use digit_core::stability::{stability_sweep, StabilityConfig, SweepEntry};
use digit_core::tokenizer::{fit_codebook, quantize_all, KMeansConfig};

const MODES: [(&str, bool); 2] = [("parallel", false), ("sequential", true)];

fn bench(c: &mut Criterion) {
    let data = generate_toy_dataset(&GeneratorSpec::default(), 64, 0).unwrap();
    let enc = untrained_discriminative(4, 1, &EncoderConfig::default(), 0);
    let feats = enc.encode_batch(&data.images, None).unwrap();
    let km = KMeansConfig { k: 32, max_iters: 10, tol: 0.0, seed: 0 };
    let codebook = fit_codebook(&feats, &km, 1.0).unwrap().codebook;
    let sweep = StabilityConfig { snr_levels: vec![10.0, 1.0], seeds: vec![0] };

    let mut g = c.benchmark_group("core");
    g.sample_size(10);
    for (mode, sequential) in MODES {
        par::set_sequential(sequential);
        g.bench_function(BenchmarkId::new("encode_batch", mode), |b| b.iter(|| enc.encode_batch(&data.images, None).unwrap()));
        g.bench_function(BenchmarkId::new("kmeans_fit", mode), |b| b.iter(|| fit_codebook(&feats, &km, 1.0).unwrap()));
        g.bench_function(BenchmarkId::new("quantize_all", mode), |b| b.iter(|| quantize_all(&feats, &codebook).unwrap()));
        g.bench_function(BenchmarkId::new("stability_sweep", mode), |b| {
            let entries = [SweepEntry { tag: "disc".into(), encoder: &enc, codebook: Some(&codebook) }];
            b.iter(|| stability_sweep(&entries, &data.images[..16], &sweep).unwrap())
        });
    }
    par::set_sequential(false);
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
