use digit_core::data::{generate_toy_dataset, GeneratorSpec, ImageGrid};
use digit_core::encoders::{untrained_discriminative, EncoderConfig};
use digit_core::metrics::*;
use digit_core::numerics::{Matrix, Rng};
use nalgebra::DMatrix;

fn random_psd(d: usize, rng: &mut Rng) -> Matrix {
    let a = Matrix::from_fn(d, d + 2, |_, _| rng.normal());
    a.matmul_t(&a).scale(1.0 / d as f64)
}

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

fn oracle(a: &FrechetStats, b: &FrechetStats) -> f64 {
    let (ca, cb) = (to_na(&a.cov), to_na(&b.cov));
    let ea = ca.clone().symmetric_eigen();
    let roots = ea.eigenvalues.map(|l| l.max(0.0).sqrt());
    let sa = &ea.eigenvectors * DMatrix::from_diagonal(&roots) * ea.eigenvectors.transpose();
    let m = &sa * &cb * &sa;
    let m = (&m + m.transpose()) * 0.5;
    let cross: f64 = m.symmetric_eigen().eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let dm: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).powi(2)).sum();
    dm + ca.trace() + cb.trace() - 2.0 * cross
}

#[test]
fn frechet_matches_independent_eigen_oracle() {
    let mut rng = Rng::new(1);
    for trial in 0..100 {
        let d = 1 + trial % 8;
        let mk = |rng: &mut Rng| FrechetStats {
            mean: (0..d).map(|_| rng.normal()).collect(),
            cov: random_psd(d, rng),
            count: 100,
        };
        let (a, b) = (mk(&mut rng), mk(&mut rng));
        let ours = frechet_distance(&a, &b).unwrap();
        let theirs = oracle(&a, &b);
        assert!((ours - theirs).abs() < 1e-6, "trial {trial}: {ours} vs {theirs}");
        assert!((ours - frechet_distance(&b, &a).unwrap()).abs() < 1e-6);
    }
}

#[test]
fn shrinkage_applies_only_to_small_samples() {
    let mut rng = Rng::new(2);
    let small = Matrix::from_fn(10, 3, |_, _| rng.normal());
    let s = FrechetStats::from_features(&small).unwrap();
    let raw = small.covariance();
    assert!((s.cov[(0, 1)] - (1.0 - SHRINKAGE) * raw[(0, 1)]).abs() < 1e-15);
    assert_eq!(s.cov[(2, 2)], raw[(2, 2)]);
    let big = Matrix::from_fn(80, 3, |_, _| rng.normal());
    assert_eq!(FrechetStats::from_features(&big).unwrap().cov, big.covariance());
}

#[test]
fn toy_fid_identity_floor_and_noise() {
    let ds = generate_toy_dataset(&GeneratorSpec::default(), 200, 3).unwrap();
    let enc = untrained_discriminative(4, 1, &EncoderConfig::default(), 4);
    assert!(toy_fid(&ds.images, &ds.images, &enc).unwrap() < 1e-9);
    let floor = split_half_floor(&ds.images, &enc, 5).unwrap();
    assert!(floor > 0.0);
    let mut rng = Rng::new(6);
    let noise: Vec<ImageGrid> = (0..200)
        .map(|_| ImageGrid::new(32, 32, 1, (0..1024).map(|_| rng.uniform() as f32).collect()).unwrap())
        .collect();
    let fid = toy_fid(&ds.images, &noise, &enc).unwrap();
    assert!(fid > 10.0 * floor, "noise {fid:.4} vs floor {floor:.4}");
    assert!(toy_fid(&ds.images, &[], &enc).is_err());
}
