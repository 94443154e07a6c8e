//! Spectral clustering used to initialize the label searches.
//!
//! Leading eigenvectors come from subspace iteration on the shifted
//! adjacency `A + d_max I`, which keeps the spectrum nonnegative so the
//! dominant subspace is the top-`K` algebraic one.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::model::{Graph, Labels, SbmRng};

const MAX_ITERS: usize = 500;
const RITZ_TOL: f64 = 1e-9;

fn shifted_matvec(graph: &Graph, shift: f64, x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = x.shape();
    let mut y = x * shift;
    for c in 0..k {
        for i in 0..n {
            let mut acc = 0.0;
            for &j in graph.neighbors(i) {
                acc += x[(j as usize, c)];
            }
            y[(i, c)] += acc;
        }
    }
    y
}

/// `n x k` orthonormal basis of the leading eigenvectors of `A`.
pub fn leading_eigenvectors(graph: &Graph, k: usize, rng: &mut SbmRng) -> DMatrix<f64> {
    let n = graph.n();
    let k = k.min(n).max(1);
    let shift = (0..n).map(|i| graph.neighbors(i).len()).max().unwrap_or(0) as f64 + 1.0;
    let mut x = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    x = x.qr().q();
    let mut prev = vec![f64::NAN; k];
    for _ in 0..MAX_ITERS {
        let y = shifted_matvec(graph, shift, &x);
        x = y.qr().q();
        // Rayleigh-Ritz on the current subspace
        let proj = x.transpose() * shifted_matvec(graph, shift, &x);
        let sym = (&proj + proj.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        vals.sort_by(|a, b| b.total_cmp(a));
        let done = vals
            .iter()
            .zip(&prev)
            .all(|(v, p)| (v - p).abs() <= RITZ_TOL * v.abs().max(1.0));
        prev = vals;
        if done {
            let rot = eig.eigenvectors;
            return &x * rot;
        }
    }
    x
}

/// Lloyd's k-means with k-means++ seeding; best of `restarts` by inertia.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, rng: &mut SbmRng) -> Vec<usize> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let dist2 = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum() };
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..restarts.max(1) {
        let mut centers: Vec<Vec<f64>> = vec![points[rng.random_range(0..n)].clone()];
        while centers.len() < k {
            let d: Vec<f64> = points
                .iter()
                .map(|p| centers.iter().map(|c| dist2(p, c)).fold(f64::INFINITY, f64::min))
                .collect();
            let total: f64 = d.iter().sum();
            let next = if total > 0.0 {
                let mut u = rng.random::<f64>() * total;
                let mut pick = n - 1;
                for (i, &di) in d.iter().enumerate() {
                    if u < di {
                        pick = i;
                        break;
                    }
                    u -= di;
                }
                pick
            } else {
                rng.random_range(0..n)
            };
            centers.push(points[next].clone());
        }
        let mut assign = vec![0usize; n];
        for _ in 0..100 {
            let mut changed = false;
            for (i, p) in points.iter().enumerate() {
                let c = (0..k)
                    .min_by(|&a, &b| dist2(p, &centers[a]).total_cmp(&dist2(p, &centers[b])))
                    .unwrap();
                if c != assign[i] {
                    assign[i] = c;
                    changed = true;
                }
            }
            let dim = points[0].len();
            let mut sums = vec![vec![0.0; dim]; k];
            let mut counts = vec![0usize; k];
            for (p, &c) in points.iter().zip(&assign) {
                counts[c] += 1;
                for (s, x) in sums[c].iter_mut().zip(p) {
                    *s += x;
                }
            }
            for c in 0..k {
                if counts[c] > 0 {
                    centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
                }
            }
            if !changed {
                break;
            }
        }
        let inertia: f64 = points.iter().zip(&assign).map(|(p, &c)| dist2(p, &centers[c])).sum();
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, assign));
        }
    }
    best.unwrap().1
}

/// Row-normalized leading-`K` eigenvector embedding clustered by k-means.
pub fn spectral_labels(graph: &Graph, k: usize, rng: &mut SbmRng) -> Labels {
    let n = graph.n();
    if k <= 1 || n == 0 {
        return Labels::new(vec![0; n]);
    }
    let vecs = leading_eigenvectors(graph, k, rng);
    let points: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let row: Vec<f64> = (0..vecs.ncols()).map(|c| vecs[(i, c)]).collect();
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter().map(|x| x / norm).collect()
            } else {
                row
            }
        })
        .collect();
    Labels::new(kmeans(&points, k, 5, rng))
}
