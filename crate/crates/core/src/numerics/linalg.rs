//! Small dense symmetric linear algebra built on cyclic Jacobi rotations.

use super::matrix::{dot, norm, symmetrize, Matrix};
use crate::error::{Error, Result};

const SYMMETRY_RTOL: f64 = 1e-9;
const MAX_SWEEPS: usize = 100;

/// Eigendecomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Eigenvalues, descending.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors stored as columns, matching `values`.
    pub vectors: Matrix,
}

impl SymmetricEigen {
    pub fn reconstruct(&self) -> Matrix {
        let n = self.values.len();
        let scaled = Matrix::from_fn(n, n, |r, c| self.vectors[(r, c)] * self.values[c]);
        scaled.matmul_t(&self.vectors)
    }
}

fn check_symmetric(a: &Matrix) -> Result<()> {
    if a.rows() != a.cols() {
        return Err(Error::Shape(format!("expected square matrix, got {}x{}", a.rows(), a.cols())));
    }
    if !a.is_finite() {
        return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
    }
    let asymmetry = a.asymmetry();
    if asymmetry > SYMMETRY_RTOL * a.max_abs().max(f64::MIN_POSITIVE) {
        return Err(Error::NotSymmetric { asymmetry });
    }
    Ok(())
}

/// Eigenvalues (descending) and orthonormal eigenvectors of a symmetric matrix.
pub fn eigh_symmetric(a: &Matrix) -> Result<SymmetricEigen> {
    check_symmetric(a)?;
    let n = a.rows();
    let mut m = a.clone();
    symmetrize(&mut m);
    let mut v = Matrix::identity(n);
    let scale = m.frobenius_norm();

    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| m[(p, q)] * m[(p, q)])
            .sum::<f64>()
            .sqrt();
        if off <= f64::EPSILON * 1e-2 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(SymmetricEigen { values, vectors })
}

/// Moore–Penrose pseudoinverse via the eigendecomposition of the smaller Gram matrix.
pub fn pseudoinverse(m: &Matrix) -> Matrix {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 || m.max_abs() == 0.0 {
        return Matrix::zeros(cols, rows);
    }
    if rows < cols {
        return pseudoinverse(&m.transpose()).transpose();
    }
    // rows >= cols: M = U Σ Vᵀ with MᵀM = V Σ² Vᵀ, so M⁺ = V Σ⁻² Vᵀ Mᵀ.
    let gram = m.t_matmul(m);
    let eig = eigh_symmetric(&gram).expect("Gram matrix is symmetric by construction");
    let lambda_max = eig.values[0].max(0.0);
    let sigma_max = lambda_max.sqrt();
    // Eigenvalues of the Gram matrix carry absolute error ~ n·eps·λmax.
    let noise_floor = (cols as f64 * f64::EPSILON * lambda_max).sqrt();
    let cutoff = (1e-10 * sigma_max).max(noise_floor);
    let n = cols;
    let mut inv_sq = Matrix::zeros(n, n);
    for (i, &lambda) in eig.values.iter().enumerate() {
        let sigma = lambda.max(0.0).sqrt();
        if sigma > cutoff {
            let w = 1.0 / lambda;
            for r in 0..n {
                for c in 0..n {
                    inv_sq[(r, c)] += eig.vectors[(r, i)] * w * eig.vectors[(c, i)];
                }
            }
        }
    }
    inv_sq.matmul_t(m)
}

/// Orthonormal basis for the column span via modified Gram–Schmidt (with one
/// re-orthogonalization pass). Rejects rank-deficient inputs.
pub fn orthonormalize_columns(a: &Matrix) -> Result<Matrix> {
    let (n, k) = a.shape();
    let mut cols: Vec<Vec<f64>> = (0..k).map(|c| a.column(c)).collect();
    for j in 0..k {
        let original = norm(&cols[j]);
        for _ in 0..2 {
            for i in 0..j {
                let (done, rest) = cols.split_at_mut(j);
                let proj = dot(&done[i], &rest[0]);
                for (x, q) in rest[0].iter_mut().zip(&done[i]) {
                    *x -= proj * q;
                }
            }
        }
        let remaining = norm(&cols[j]);
        if original == 0.0 || remaining <= 1e-10 * original {
            return Err(Error::RankDeficient { pivot: remaining });
        }
        cols[j].iter_mut().for_each(|x| *x /= remaining);
    }
    let mut q = Matrix::zeros(n, k);
    for (c, col) in cols.iter().enumerate() {
        q.set_column(c, col);
    }
    Ok(q)
}

fn singular_values_desc(m: &Matrix) -> Vec<f64> {
    let gram = if m.rows() >= m.cols() { m.t_matmul(m) } else { m.matmul_t(m) };
    let eig = eigh_symmetric(&gram).expect("Gram matrix is symmetric by construction");
    eig.values.iter().map(|&l| l.max(0.0).sqrt()).collect()
}

/// Principal angles (ascending, radians) between the column spans of `a` and `b`.
///
/// Cosines come from the singular values of `Q_aᵀ Q_b`; for angles below π/4 the
/// sines of the residual `Q_b − Q_a Q_aᵀ Q_b` are used instead, which keeps
/// small angles accurate.
pub fn principal_angles(a: &Matrix, b: &Matrix) -> Result<Vec<f64>> {
    if a.rows() != b.rows() {
        return Err(Error::Shape(format!(
            "bases live in different spaces ({} vs {} rows)",
            a.rows(),
            b.rows()
        )));
    }
    let (qa, qb) = if a.cols() >= b.cols() {
        (orthonormalize_columns(a)?, orthonormalize_columns(b)?)
    } else {
        (orthonormalize_columns(b)?, orthonormalize_columns(a)?)
    };
    let k = qb.cols();
    let c = qa.t_matmul(&qb);
    let cosines = singular_values_desc(&c);
    let residual = qb.sub(&qa.matmul(&c));
    let mut sines = singular_values_desc(&residual);
    sines.reverse();
    Ok((0..k)
        .map(|i| {
            let cos = cosines[i].min(1.0);
            if cos * cos > 0.5 {
                sines[i].min(1.0).asin()
            } else {
                cos.acos()
            }
        })
        .collect())
}

/// Symmetric square root of a positive-semidefinite matrix.
pub fn matrix_sqrt_psd(a: &Matrix) -> Result<Matrix> {
    let eig = eigh_symmetric(a)?;
    let n = a.rows();
    let scale = eig.values.first().map_or(0.0, |v| v.abs()).max(1.0);
    if let Some(&min) = eig.values.last() {
        if min < -1e-9 * scale {
            return Err(Error::Indefinite { min_eigenvalue: min });
        }
    }
    let roots: Vec<f64> = eig.values.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let scaled = Matrix::from_fn(n, n, |r, c| eig.vectors[(r, c)] * roots[c]);
    let mut s = scaled.matmul_t(&eig.vectors);
    symmetrize(&mut s);
    Ok(s)
}

/// Solves `A x = b` for symmetric positive-definite `A` by Cholesky factorization.
pub fn solve_spd(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.rows();
    if a.cols() != n || b.len() != n {
        return Err(Error::Shape("solve_spd dimensions".into()));
    }
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum();
            if i == j {
                let d = a[(i, i)] - s;
                if d <= 0.0 {
                    return Err(Error::Indefinite { min_eigenvalue: d });
                }
                l[(i, i)] = d.sqrt();
            } else {
                l[(i, j)] = (a[(i, j)] - s) / l[(j, j)];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[(i, k)] * y[k]).sum();
        y[i] = (b[i] - s) / l[(i, i)];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = ((i + 1)..n).map(|k| l[(k, i)] * x[k]).sum();
        x[i] = (y[i] - s) / l[(i, i)];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn random_symmetric(rng: &mut Rng, n: usize) -> Matrix {
        let a = Matrix::from_fn(n, n, |_, _| rng.normal());
        a.add(&a.transpose()).scale(0.5)
    }

    #[test]
    fn identity_eigenvalues() {
        let eig = eigh_symmetric(&Matrix::identity(3)).unwrap();
        assert_eq!(eig.values, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn diagonal_eigenpairs_sorted() {
        let eig = eigh_symmetric(&Matrix::diag(&[3.0, 1.0, 2.0])).unwrap();
        assert_eq!(eig.values, vec![3.0, 2.0, 1.0]);
        assert_eq!(eig.vectors.column(0).iter().map(|v| v.abs()).collect::<Vec<_>>(), vec![1.0, 0.0, 0.0]);
        assert_eq!(eig.vectors.column(1).iter().map(|v| v.abs()).collect::<Vec<_>>(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn rejects_asymmetric() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        match eigh_symmetric(&m) {
            Err(Error::NotSymmetric { asymmetry }) => assert_eq!(asymmetry, 2.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn random_reconstruction_and_orthonormality() {
        let mut rng = Rng::new(11);
        for _ in 0..100 {
            let a = random_symmetric(&mut rng, 5);
            let eig = eigh_symmetric(&a).unwrap();
            assert!(eig.reconstruct().sub(&a).max_abs() < 1e-8);
            let vtv = eig.vectors.t_matmul(&eig.vectors);
            assert!(vtv.sub(&Matrix::identity(5)).max_abs() < 1e-8);
            assert!(eig.values.windows(2).all(|w| w[0] >= w[1]));
            for i in 0..5 {
                let v = eig.vectors.column(i);
                let av = a.matvec(&v);
                let err = av.iter().zip(&v).map(|(x, y)| (x - eig.values[i] * y).abs()).fold(0.0, f64::max);
                assert!(err < 1e-7 * a.frobenius_norm());
            }
        }
    }

    #[test]
    fn pinv_of_invertible_and_zero() {
        let m = Matrix::from_rows(&[vec![4.0, 7.0], vec![2.0, 6.0]]).unwrap();
        let inv = Matrix::from_rows(&[vec![0.6, -0.7], vec![-0.2, 0.4]]).unwrap();
        assert!(pseudoinverse(&m).sub(&inv).max_abs() < 1e-10);
        assert_eq!(pseudoinverse(&Matrix::zeros(3, 2)), Matrix::zeros(2, 3));
    }

    #[test]
    fn pinv_tall_matches_normal_equations() {
        let mut rng = Rng::new(3);
        let m = Matrix::from_fn(4, 2, |_, _| rng.normal());
        let gram = m.t_matmul(&m);
        let det = gram[(0, 0)] * gram[(1, 1)] - gram[(0, 1)] * gram[(1, 0)];
        let gram_inv = Matrix::from_rows(&[
            vec![gram[(1, 1)] / det, -gram[(0, 1)] / det],
            vec![-gram[(1, 0)] / det, gram[(0, 0)] / det],
        ])
        .unwrap();
        let oracle = gram_inv.matmul_t(&m);
        assert!(pseudoinverse(&m).sub(&oracle).max_abs() < 1e-10);
    }

    fn penrose_residuals(m: &Matrix, p: &Matrix) -> [f64; 4] {
        let mp = m.matmul(p);
        let pm = p.matmul(m);
        let scale_m = m.frobenius_norm().max(1e-300);
        let scale_p = p.frobenius_norm().max(1e-300);
        [
            mp.matmul(m).sub(m).frobenius_norm() / scale_m,
            pm.matmul(p).sub(p).frobenius_norm() / scale_p,
            mp.sub(&mp.transpose()).frobenius_norm() / mp.frobenius_norm().max(1e-300),
            pm.sub(&pm.transpose()).frobenius_norm() / pm.frobenius_norm().max(1e-300),
        ]
    }

    #[test]
    fn penrose_conditions_random_including_rank_deficient() {
        let mut rng = Rng::new(5);
        for trial in 0..100 {
            let rows = 2 + trial % 5;
            let cols = 1 + (trial / 5) % 5;
            let mut m = Matrix::from_fn(rows, cols, |_, _| rng.normal());
            if trial % 4 == 0 && cols > 1 {
                // duplicate a column to force rank deficiency
                let c0 = m.column(0);
                m.set_column(cols - 1, &c0);
            }
            let p = pseudoinverse(&m);
            for r in penrose_residuals(&m, &p) {
                assert!(r < 1e-7, "trial {trial}: residual {r}");
            }
        }
    }

    #[test]
    fn principal_angle_cases() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        assert!(principal_angles(&a, &a).unwrap().iter().all(|&t| t.abs() < 1e-12));

        let e1 = Matrix::column_vector(&[1.0, 0.0]);
        let e2 = Matrix::column_vector(&[0.0, 1.0]);
        let diag = Matrix::column_vector(&[1.0, 1.0]);
        assert!((principal_angles(&e1, &e2).unwrap()[0] - FRAC_PI_2).abs() < 1e-12);
        // cos θ = e1·(e1+e2)/√2
        let oracle = (1.0 / 2f64.sqrt()).acos();
        assert!((oracle - FRAC_PI_4).abs() < 1e-15);
        assert!((principal_angles(&e1, &diag).unwrap()[0] - oracle).abs() < 1e-12);
    }

    #[test]
    fn principal_angles_small_angle_accuracy() {
        let eps: f64 = 1e-7;
        let a = Matrix::column_vector(&[1.0, 0.0, 0.0]);
        let b = Matrix::column_vector(&[eps.cos(), eps.sin(), 0.0]);
        let angle = principal_angles(&a, &b).unwrap()[0];
        assert!((angle - eps).abs() < 1e-14, "{angle}");
    }

    #[test]
    fn principal_angles_reject_rank_deficient() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        let b = Matrix::identity(2);
        assert!(matches!(principal_angles(&a, &b), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn sqrt_cases() {
        assert_eq!(matrix_sqrt_psd(&Matrix::identity(3)).unwrap(), Matrix::identity(3));
        let s = matrix_sqrt_psd(&Matrix::diag(&[4.0, 9.0])).unwrap();
        assert!(s.sub(&Matrix::diag(&[2.0, 3.0])).max_abs() < 1e-14);
        let mut rng = Rng::new(9);
        for _ in 0..100 {
            let g = Matrix::from_fn(3, 3, |_, _| rng.normal());
            let a = g.matmul_t(&g);
            let s = matrix_sqrt_psd(&a).unwrap();
            assert!(s.matmul(&s).sub(&a).max_abs() < 1e-7 * a.frobenius_norm());
        }
        assert!(matches!(
            matrix_sqrt_psd(&Matrix::diag(&[1.0, -0.5])),
            Err(Error::Indefinite { .. })
        ));
    }

    #[test]
    fn spd_solve() {
        let a = Matrix::from_rows(&[vec![4.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let x = solve_spd(&a, &[1.0, 2.0]).unwrap();
        let back = a.matvec(&x);
        assert!((back[0] - 1.0).abs() < 1e-12 && (back[1] - 2.0).abs() < 1e-12);
    }
}
