//! Small statistical helpers for the Monte Carlo harness.

use nalgebra::{DMatrix, SymmetricEigen};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Eigenvalue floor used when taking symmetric matrix roots.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// One-sample Kolmogorov-Smirnov distance `sup |F_n - F|`.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut x: Vec<f64> = samples.to_vec();
    x.sort_by(|a, b| a.total_cmp(b));
    let m = x.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &xi) in x.iter().enumerate() {
        let f = cdf(xi);
        d = d.max((i + 1) as f64 / m - f).max(f - i as f64 / m);
    }
    d
}

pub fn ks_normal(samples: &[f64]) -> f64 {
    let z = Normal::standard();
    ks_distance(samples, |x| z.cdf(x))
}

pub fn ks_chi2(samples: &[f64], dof: usize) -> f64 {
    let chi = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
    ks_distance(samples, |x| chi.cdf(x))
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.total_cmp(y));
    b.sort_by(|x, y| x.total_cmp(y));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// `Phi^{-1}(p)`.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

pub fn chi2_quantile(p: f64, dof: usize) -> f64 {
    ChiSquared::new(dof as f64).expect("positive degrees of freedom").inverse_cdf(p)
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// `M^{p}` for symmetric `M` via its eigendecomposition, eigenvalues floored.
pub fn sym_power(m: &DMatrix<f64>, p: f64) -> DMatrix<f64> {
    if m.nrows() == 0 {
        return m.clone();
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|x| x.max(EIGEN_FLOOR).powf(p)));
    let out = &eig.eigenvectors * d * eig.eigenvectors.transpose();
    (&out + out.transpose()) * 0.5
}

/// Sample covariance (divisor `m - 1`) of row vectors.
pub fn sample_covariance(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let m = rows.len();
    let d = rows.first().map_or(0, |r| r.len());
    let mut mean = vec![0.0; d];
    for r in rows {
        for (acc, x) in mean.iter_mut().zip(r) {
            *acc += x / m as f64;
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for r in rows {
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] += (r[a] - mean[a]) * (r[b] - mean[b]);
            }
        }
    }
    cov / (m.max(2) - 1) as f64
}

/// `||A - B||_F / ||B||_F`.
pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}
