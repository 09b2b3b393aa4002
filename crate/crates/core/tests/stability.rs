use digit_core::data::{generate_toy_dataset, GeneratorSpec, ImageGrid};
use digit_core::encoders::{untrained_discriminative, EncoderConfig, PatchEncoder};
use digit_core::stability::*;
use digit_core::tokenizer::{fit_codebook, Codebook, KMeansConfig};
use proptest::prelude::*;

fn image(side: usize) -> impl Strategy<Value = ImageGrid> {
    prop::collection::vec(0.0f32..=1.0, side * side).prop_map(move |v| ImageGrid::new(side, side, 1, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn noisy_images_stay_in_range_and_are_seeded(img in image(8), snr in 0.01f64..100.0, seed in any::<u64>()) {
        let a = add_noise_snr(&img, snr, seed).unwrap();
        prop_assert!(a.values().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(&a, &add_noise_snr(&img, snr, seed).unwrap());
    }

    #[test]
    fn nonpositive_snr_is_rejected(img in image(4), snr in -10.0f64..=0.0) {
        prop_assert!(add_noise_snr(&img, snr, 0).is_err());
    }
}

struct Fixture {
    images: Vec<ImageGrid>,
    encoder: PatchEncoder,
}

fn fixture() -> Fixture {
    let ds = generate_toy_dataset(&GeneratorSpec::default(), 12, 5).unwrap();
    let cfg = EncoderConfig::default();
    let mut encoder = untrained_discriminative(cfg.patch_size, ds.images[0].channels(), &cfg, 2);
    encoder.fit_centers(&ds.images).unwrap();
    Fixture { images: ds.images, encoder }
}

fn codebook(f: &Fixture, k: usize) -> Codebook {
    let grids = f.encoder.encode_batch(&f.images, None).unwrap();
    fit_codebook(&grids, &KMeansConfig { k, ..Default::default() }, 1.0).unwrap().codebook
}

#[test]
fn noiseless_sweep_changes_nothing() {
    let f = fixture();
    let cb = codebook(&f, 8);
    let entries = [SweepEntry { tag: "e".into(), encoder: &f.encoder, codebook: Some(&cb) }];
    let cfg = StabilityConfig { snr_levels: vec![f64::INFINITY], seeds: vec![0, 1] };
    let report = stability_sweep(&entries, &f.images, &cfg).unwrap();
    let m = report.mean("e", f64::INFINITY).unwrap();
    assert_eq!(m.change_rate, 0.0);
    assert!((m.mean_cosine - 1.0).abs() < 1e-9, "{}", m.mean_cosine);
}

#[test]
fn single_centroid_never_changes() {
    let f = fixture();
    let cb = codebook(&f, 1);
    let entries = [SweepEntry { tag: "one".into(), encoder: &f.encoder, codebook: Some(&cb) }];
    let cfg = StabilityConfig { snr_levels: vec![10.0, 0.01], seeds: vec![0] };
    let report = stability_sweep(&entries, &f.images, &cfg).unwrap();
    assert!(report.rows.iter().all(|r| r.change_rate == 0.0));
}

#[test]
fn sweep_layout_and_determinism() {
    let f = fixture();
    let cb = codebook(&f, 8);
    let entries = [
        SweepEntry { tag: "a".into(), encoder: &f.encoder, codebook: Some(&cb) },
        SweepEntry { tag: "b".into(), encoder: &f.encoder, codebook: Some(&cb) },
    ];
    let cfg = StabilityConfig { snr_levels: vec![30.0, 1.0, 0.01], seeds: vec![0, 1, 2] };
    let report = stability_sweep(&entries, &f.images, &cfg).unwrap();
    assert_eq!(report.rows.len(), 2 * 3 * 3);
    assert_eq!(report.means.len(), 2 * 3);
    assert!(report.means.iter().all(|r| r.seed.is_none()));
    assert!(report.rows.iter().all(|r| (0.0..=1.0).contains(&r.change_rate)));
    // identical encoders see identical noise, so no ordering can be strict
    assert!(!ordering_violations(&report, "a", "b").is_empty());
    let again = stability_sweep(&entries, &f.images, &cfg).unwrap();
    assert_eq!(format!("{:?}", report.rows), format!("{:?}", again.rows));
}

#[test]
fn heavier_noise_changes_more_tokens() {
    let f = fixture();
    let cb = codebook(&f, 8);
    let entries = [SweepEntry { tag: "e".into(), encoder: &f.encoder, codebook: Some(&cb) }];
    let cfg = StabilityConfig { snr_levels: vec![100.0, 0.01], seeds: (0..5).collect() };
    let report = stability_sweep(&entries, &f.images, &cfg).unwrap();
    let (mild, heavy) = (report.mean("e", 100.0).unwrap(), report.mean("e", 0.01).unwrap());
    assert!(heavy.change_rate > mild.change_rate);
    assert!(heavy.mean_cosine < mild.mean_cosine);
}
