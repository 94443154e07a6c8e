//! Complete-data likelihood: log-likelihood, likelihood ratio in logit
//! coordinates, closed-form MLE, derivatives and plug-in covariances.
//!
//! Free coordinates follow [`LogitParams::to_vector`]: `varpi(0..K-1)` then
//! `nu(a,b)` for `a <= b`. A symmetric pair `nu(a,b) = nu(b,a)` is one
//! coordinate, so an off-diagonal coordinate collects both ordered halves of
//! the `1/2 sum_{a,b}` term and a diagonal one collects a single half.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{
    free_dim, nu_index, sufficient_stats, Graph, Labels, LogitParams, ModelParams, SufficientStats,
};

/// `x * ln(y)` with `0 * ln(0) = 0`; `-inf` when `x > 0` and `y = 0`.
pub(crate) fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// `x * ln(1 - y)` with the same conventions.
pub(crate) fn xlog1my(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * (-y).ln_1p()
    }
}

/// Complete-data log-likelihood evaluated from block counts.
pub fn loglik_from_stats(stats: &SufficientStats, pi: &[f64], h: &DMatrix<f64>) -> f64 {
    let k = stats.k();
    let mut total = 0.0;
    for a in 0..k {
        total += xlogy(stats.n_a()[a] as f64, pi[a]);
    }
    let mut edges = 0.0;
    for a in 0..k {
        for b in 0..k {
            let o = stats.o(a, b) as f64;
            let non = (stats.n_ab(a, b) - stats.o(a, b)) as f64;
            edges += xlogy(o, h[(a, b)]) + xlog1my(non, h[(a, b)]);
        }
    }
    total + 0.5 * edges
}

/// `log f(z, A; theta)`. Zero-probability data gives `-inf`.
pub fn complete_loglik(graph: &Graph, labels: &Labels, params: &ModelParams) -> Result<f64> {
    let stats = sufficient_stats(graph, labels, params.k())?;
    Ok(loglik_from_stats(&stats, params.pi(), params.h()))
}

fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Log-partition of the class distribution, `ln(1 + sum_a exp(varpi_a))`.
fn varpi_log_partition(varpi: &[f64]) -> f64 {
    let max = varpi.iter().copied().fold(0.0_f64, f64::max);
    let sum: f64 = varpi.iter().map(|&w| (w - max).exp()).sum::<f64>() + (-max).exp();
    max + sum.ln()
}

/// `Lambda(theta) = log f(theta) - log f(theta0)` in exponential-family form.
pub fn loglik_ratio(theta: &LogitParams, theta0: &LogitParams, stats: &SufficientStats) -> f64 {
    let k = stats.k();
    let n = stats.n() as f64;
    let mut total = 0.0;
    for a in 0..k - 1 {
        total += (theta.varpi[a] - theta0.varpi[a]) * stats.n_a()[a] as f64;
    }
    total -= n * (varpi_log_partition(&theta.varpi) - varpi_log_partition(&theta0.varpi));
    let mut edges = 0.0;
    for a in 0..k {
        for b in 0..k {
            let dnu = theta.nu[(a, b)] - theta0.nu[(a, b)];
            let partition = log1p_exp(theta.nu[(a, b)]) - log1p_exp(theta0.nu[(a, b)]);
            edges += dnu * stats.o(a, b) as f64 - stats.n_ab(a, b) as f64 * partition;
        }
    }
    total + 0.5 * edges
}

/// Closed-form complete-data MLE.
#[derive(Debug, Clone, PartialEq)]
pub struct CgmFit {
    pub pi_hat: Vec<f64>,
    /// `O_ab / n_ab`; `NaN` where `n_ab = 0`.
    pub h_hat: DMatrix<f64>,
    pub loglik: f64,
    pub stats: SufficientStats,
    pub empty_block: bool,
}

impl CgmFit {
    pub fn k(&self) -> usize {
        self.pi_hat.len()
    }

    pub fn to_params(&self) -> Result<ModelParams> {
        if let Some(a) = self.stats.n_a().iter().position(|&c| c == 0) {
            return Err(Error::EmptyBlock(a + 1));
        }
        if self.h_hat.iter().any(|x| x.is_nan()) {
            // a singleton block has no within-block pairs
            return Err(Error::Domain("H_hat undefined for a singleton block".into()));
        }
        ModelParams::from_pi_h(self.pi_hat.clone(), &self.h_hat)
    }
}

pub fn cgm_mle_from_stats(stats: SufficientStats) -> CgmFit {
    let k = stats.k();
    let n = stats.n() as f64;
    let pi_hat: Vec<f64> = stats.n_a().iter().map(|&c| c as f64 / n).collect();
    let h_hat = DMatrix::from_fn(k, k, |a, b| {
        let pairs = stats.n_ab(a, b);
        if pairs == 0 {
            f64::NAN
        } else {
            stats.o(a, b) as f64 / pairs as f64
        }
    });
    let h_eval = h_hat.map(|x| if x.is_nan() { 0.0 } else { x });
    let loglik = loglik_from_stats(&stats, &pi_hat, &h_eval);
    CgmFit {
        empty_block: stats.has_empty_block(),
        pi_hat,
        h_hat,
        loglik,
        stats,
    }
}

pub fn cgm_mle(graph: &Graph, labels: &Labels, k: usize) -> Result<CgmFit> {
    Ok(cgm_mle_from_stats(sufficient_stats(graph, labels, k)?))
}

/// Gradient of `Lambda` in the free coordinates.
pub fn gradient(theta: &LogitParams, stats: &SufficientStats) -> DVector<f64> {
    let k = stats.k();
    let n = stats.n() as f64;
    let pi = theta.pi();
    let h = theta.h();
    let mut g = DVector::zeros(free_dim(k));
    for a in 0..k - 1 {
        g[a] = stats.n_a()[a] as f64 - n * pi[a];
    }
    for a in 0..k {
        for b in a..k {
            let raw = stats.o(a, b) as f64 - stats.n_ab(a, b) as f64 * h[(a, b)];
            g[k - 1 + nu_index(k, a, b)] = if a == b { 0.5 * raw } else { raw };
        }
    }
    g
}

/// Curvature of `-Lambda` (a positive semi-definite information matrix).
///
/// The `varpi` block is `n (diag(pi') - pi' pi'^T)`, the `nu` block is
/// diagonal with `n_ab H'(1 - H')` (halved on the diagonal coordinates), and
/// all cross terms are zero.
pub fn hessian(theta: &LogitParams, stats: &SufficientStats) -> DMatrix<f64> {
    let k = stats.k();
    let n = stats.n() as f64;
    let pi = theta.pi();
    let h = theta.h();
    let d = free_dim(k);
    let mut m = DMatrix::zeros(d, d);
    for a in 0..k - 1 {
        for b in 0..k - 1 {
            m[(a, b)] = if a == b {
                n * pi[a] * (1.0 - pi[a])
            } else {
                -n * pi[a] * pi[b]
            };
        }
    }
    for a in 0..k {
        for b in a..k {
            let idx = k - 1 + nu_index(k, a, b);
            let curv = stats.n_ab(a, b) as f64 * h[(a, b)] * (1.0 - h[(a, b)]);
            m[(idx, idx)] = if a == b { 0.5 * curv } else { curv };
        }
    }
    m
}

/// Per-node expected information for `varpi` and the `n^2 rho`-normalized
/// expected information for the free `nu` coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedInformation {
    pub varpi: DMatrix<f64>,
    pub nu: DMatrix<f64>,
}

pub fn expected_information(params: &ModelParams) -> ExpectedInformation {
    let k = params.k();
    let pi = params.pi();
    let s = params.s();
    let h = params.h();
    let varpi = DMatrix::from_fn(k - 1, k - 1, |a, b| {
        if a == b {
            pi[a] * (1.0 - pi[a])
        } else {
            -pi[a] * pi[b]
        }
    });
    let m = k * (k + 1) / 2;
    let mut nu = DMatrix::zeros(m, m);
    for a in 0..k {
        for b in a..k {
            let idx = nu_index(k, a, b);
            let info = pi[a] * pi[b] * s[(a, b)] * (1.0 - h[(a, b)]);
            nu[(idx, idx)] = if a == b { 0.5 * info } else { info };
        }
    }
    ExpectedInformation { varpi, nu }
}

/// Limiting covariances of `sqrt(n) (varpi_hat - varpi)` and
/// `sqrt(n lambda) (nu_hat - nu)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticCov {
    pub sigma1: DMatrix<f64>,
    pub sigma2: DMatrix<f64>,
}

pub(crate) fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Ok(m.clone());
    }
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular(format!("{what} is not positive definite")))?;
    let inv = chol.inverse();
    // symmetrize away rounding
    Ok((&inv + inv.transpose()) * 0.5)
}

pub fn asymptotic_cov(params: &ModelParams) -> Result<AsymptoticCov> {
    if !params.is_interior() {
        return Err(Error::Domain("asymptotic covariance needs interior pi and H".into()));
    }
    let info = expected_information(params);
    Ok(AsymptoticCov {
        sigma1: spd_inverse(&info.varpi, "varpi information")?,
        sigma2: spd_inverse(&info.nu, "nu information")?,
    })
}

/// Degrees of freedom of the full-model Wilks statistic, `K(K+3)/2 - 1`.
pub fn wilks_dof(k: usize) -> usize {
    k * (k + 3) / 2 - 1
}

/// `2 (log f(z, A; theta_hat) - log f(z, A; theta0))`.
pub fn wilks_cgm(graph: &Graph, labels: &Labels, theta0: &ModelParams) -> Result<f64> {
    let fit = cgm_mle(graph, labels, theta0.k())?;
    if let Some(a) = fit.stats.n_a().iter().position(|&c| c == 0) {
        return Err(Error::EmptyBlock(a + 1));
    }
    let null = loglik_from_stats(&fit.stats, theta0.pi(), theta0.h());
    Ok(2.0 * (fit.loglik - null))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{derive_seed, rng_from_seed, sample_graph};
    use rand::Rng;

    fn random_params(k: usize, seed: u64) -> ModelParams {
        let mut rng = rng_from_seed(seed);
        let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
        let t: f64 = w.iter().sum();
        let pi = w.iter().map(|x| x / t).collect();
        let mut h = DMatrix::zeros(k, k);
        for a in 0..k {
            for b in a..k {
                let x = rng.random_range(0.05..0.95);
                h[(a, b)] = x;
                h[(b, a)] = x;
            }
        }
        ModelParams::from_pi_h(pi, &h).unwrap()
    }

    /// Per-pair product oracle, written without the block counts.
    fn naive_loglik(graph: &Graph, z: &Labels, params: &ModelParams) -> f64 {
        let n = graph.n();
        let mut total = 0.0;
        for i in 0..n {
            total += params.pi()[z.get(i)].ln();
        }
        for i in 0..n {
            for j in i + 1..n {
                let h = params.h()[(z.get(i), z.get(j))];
                let p = if graph.has_edge(i, j) { h } else { 1.0 - h };
                total += p.ln();
            }
        }
        total
    }

    #[test]
    fn saturated_complete_graph_has_zero_loglik() {
        let params = ModelParams::new(1.0, vec![1.0], DMatrix::from_element(1, 1, 1.0)).unwrap();
        let ll = complete_loglik(&Graph::complete(5), &Labels::new(vec![0; 5]), &params).unwrap();
        assert_eq!(ll, 0.0);
    }

    #[test]
    fn two_node_uniform_model() {
        let params =
            ModelParams::from_pi_h(vec![0.5, 0.5], &DMatrix::from_element(2, 2, 0.5)).unwrap();
        let expected = 0.25f64.ln() + 0.5f64.ln();
        for g in [Graph::empty(2), Graph::complete(2)] {
            for z in [vec![0, 0], vec![0, 1], vec![1, 1]] {
                let ll = complete_loglik(&g, &Labels::new(z), &params).unwrap();
                assert!((ll - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn impossible_edge_gives_neg_infinity() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let params = ModelParams::from_pi_h(vec![0.5, 0.5], &h).unwrap();
        let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
        assert_eq!(
            complete_loglik(&g, &Labels::new(vec![0, 1]), &params).unwrap(),
            f64::NEG_INFINITY
        );
        assert!(complete_loglik(&g, &Labels::new(vec![0, 0]), &params).unwrap().is_finite());
    }

    #[test]
    fn matches_naive_product() {
        for s in 0..10 {
            let params = random_params(3, derive_seed(10, s));
            let (z, g) = sample_graph(&params, 25, derive_seed(11, s)).unwrap();
            let fast = complete_loglik(&g, &z, &params).unwrap();
            let slow = naive_loglik(&g, &z, &params);
            assert!((fast - slow).abs() < 1e-9 * slow.abs().max(1.0), "{fast} vs {slow}");
        }
    }

    #[test]
    fn permutation_invariance_of_loglik() {
        let params = random_params(3, 5);
        let (z, g) = sample_graph(&params, 30, 6).unwrap();
        let base = complete_loglik(&g, &z, &params).unwrap();
        for sigma in crate::align::permutations(3).unwrap() {
            let ll = complete_loglik(&g, &z.relabel(&sigma), &params.permuted(&sigma)).unwrap();
            assert!((ll - base).abs() < 1e-10);
        }
    }

    #[test]
    fn ratio_is_difference_of_logliks() {
        for s in 0..20 {
            let theta = random_params(3, derive_seed(20, s));
            let theta0 = random_params(3, derive_seed(21, s));
            let (z, g) = sample_graph(&theta0, 20, derive_seed(22, s)).unwrap();
            let stats = sufficient_stats(&g, &z, 3).unwrap();
            let lr = loglik_ratio(&theta.to_logits().unwrap(), &theta0.to_logits().unwrap(), &stats);
            let diff = complete_loglik(&g, &z, &theta).unwrap() - complete_loglik(&g, &z, &theta0).unwrap();
            assert!((lr - diff).abs() < 1e-9, "{lr} vs {diff}");
            let same = loglik_ratio(&theta0.to_logits().unwrap(), &theta0.to_logits().unwrap(), &stats);
            assert_eq!(same, 0.0);
        }
    }

    #[test]
    fn varpi_only_ratio_ignores_edges() {
        let theta0 = random_params(2, 1).to_logits().unwrap();
        let mut theta = theta0.clone();
        theta.varpi[0] += 0.7;
        let z = Labels::new(vec![0, 0, 1, 1, 1]);
        let a = sufficient_stats(&Graph::empty(5), &z, 2).unwrap();
        let b = sufficient_stats(&Graph::complete(5), &z, 2).unwrap();
        assert!((loglik_ratio(&theta, &theta0, &a) - loglik_ratio(&theta, &theta0, &b)).abs() < 1e-12);
    }

    #[test]
    fn mle_examples() {
        let z = Labels::new(vec![0; 6]);
        let fit = cgm_mle(&Graph::complete(6), &z, 2).unwrap();
        assert_eq!(fit.pi_hat, vec![1.0, 0.0]);
        assert!(fit.empty_block);
        assert!(fit.h_hat[(1, 1)].is_nan());
        assert!(fit.to_params().is_err());

        let g = Graph::from_edges(4, &[(0, 1), (0, 2)]).unwrap();
        let fit = cgm_mle(&g, &Labels::new(vec![0, 0, 1, 1]), 2).unwrap();
        assert_eq!(fit.pi_hat, vec![0.5, 0.5]);
        assert_eq!(fit.h_hat, DMatrix::from_row_slice(2, 2, &[1.0, 0.25, 0.25, 0.0]));

        let fit = cgm_mle(&Graph::complete(7), &Labels::new(vec![0, 1, 2, 0, 1, 2, 2]), 3).unwrap();
        assert!(fit.h_hat.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn mle_is_permutation_equivariant() {
        let params = random_params(3, 8);
        let (z, g) = sample_graph(&params, 200, 9).unwrap();
        let fit = cgm_mle(&g, &z, 3).unwrap().to_params().unwrap();
        let sigma = [2, 0, 1];
        let fit_perm = cgm_mle(&g, &z.relabel(&sigma), 3).unwrap().to_params().unwrap();
        assert_eq!(fit_perm.pi(), fit.permuted(&sigma).pi());
        assert_eq!(fit_perm.h(), fit.permuted(&sigma).h());
    }

    #[test]
    fn gradient_vanishes_at_mle() {
        for s in 0..10 {
            let params = random_params(3, derive_seed(30, s));
            let (z, g) = sample_graph(&params, 60, derive_seed(31, s)).unwrap();
            let fit = cgm_mle(&g, &z, 3).unwrap();
            let stats = fit.stats.clone();
            let theta = fit.to_params().unwrap().to_logits().unwrap();
            assert!(gradient(&theta, &stats).amax() < 1e-9);
        }
    }

    #[test]
    fn varpi_gradient_zero_when_counts_match() {
        let z = Labels::new(vec![0, 0, 1, 1]);
        let stats = sufficient_stats(&Graph::empty(4), &z, 2).unwrap();
        let theta = to_lp(&[0.5, 0.5], 0.3);
        assert_eq!(gradient(&theta, &stats)[0], 0.0);
    }

    fn to_lp(pi: &[f64], h: f64) -> LogitParams {
        crate::model::to_logits(pi, &DMatrix::from_element(pi.len(), pi.len(), h)).unwrap()
    }

    fn random_theta(k: usize, seed: u64) -> LogitParams {
        let mut rng = rng_from_seed(seed);
        let v: Vec<f64> = (0..free_dim(k)).map(|_| rng.random_range(-2.0..1.0)).collect();
        LogitParams::from_vector(k, &v)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let step = 1e-5;
        for s in 0..10 {
            let params = random_params(3, derive_seed(40, s));
            let (z, g) = sample_graph(&params, 30, derive_seed(41, s)).unwrap();
            let stats = sufficient_stats(&g, &z, 3).unwrap();
            let theta = random_theta(3, derive_seed(42, s));
            let theta0 = params.to_logits().unwrap();
            let grad = gradient(&theta, &stats);
            let v = theta.to_vector();
            for c in 0..v.len() {
                let mut up = v.clone();
                let mut dn = v.clone();
                up[c] += step;
                dn[c] -= step;
                let fd = (loglik_ratio(&LogitParams::from_vector(3, &up), &theta0, &stats)
                    - loglik_ratio(&LogitParams::from_vector(3, &dn), &theta0, &stats))
                    / (2.0 * step);
                assert!((fd - grad[c]).abs() < 1e-6 * grad[c].abs().max(1.0), "coord {c}: {fd} vs {}", grad[c]);
            }
        }
    }

    #[test]
    fn hessian_matches_central_differences_of_neg_ratio() {
        let step = 1e-4;
        for s in 0..10 {
            let params = random_params(3, derive_seed(50, s));
            let (z, g) = sample_graph(&params, 30, derive_seed(51, s)).unwrap();
            let stats = sufficient_stats(&g, &z, 3).unwrap();
            let theta = random_theta(3, derive_seed(52, s));
            let hess = hessian(&theta, &stats);
            let v = theta.to_vector();
            let d = v.len();
            for c in 0..d {
                let mut up = v.clone();
                let mut dn = v.clone();
                up[c] += step;
                dn[c] -= step;
                let gu = gradient(&LogitParams::from_vector(3, &up), &stats);
                let gd = gradient(&LogitParams::from_vector(3, &dn), &stats);
                for r in 0..d {
                    let fd = -(gu[r] - gd[r]) / (2.0 * step);
                    let scale = hess.amax();
                    assert!((fd - hess[(r, c)]).abs() < 1e-5 * scale, "({r},{c}) {fd} vs {}", hess[(r, c)]);
                }
            }
        }
    }

    #[test]
    fn single_class_hessian() {
        let z = Labels::new(vec![0; 9]);
        let stats = sufficient_stats(&Graph::empty(9), &z, 1).unwrap();
        let theta = to_lp(&[1.0], 0.2);
        let hess = hessian(&theta, &stats);
        assert_eq!(hess.shape(), (1, 1));
        let h = theta.h()[(0, 0)];
        // the single coordinate covers n(n-1)/2 unordered pairs
        assert!((hess[(0, 0)] - 0.5 * 72.0 * h * (1.0 - h)).abs() < 1e-12);
    }

    #[test]
    fn sigma1_two_equal_classes() {
        let params = ModelParams::planted(vec![0.5, 0.5], 4.0, 20.0, 500).unwrap();
        let cov = asymptotic_cov(&params).unwrap();
        assert!((cov.sigma1[(0, 0)] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn sigma2_small_rho_limit() {
        let params = ModelParams::planted(vec![0.3, 0.7], 5.0, 2.0, 1_000_000).unwrap();
        let cov = asymptotic_cov(&params).unwrap();
        let (pi, s) = (params.pi(), params.s());
        let off = cov.sigma2[(nu_index(2, 0, 1), nu_index(2, 0, 1))];
        let limit = 1.0 / (pi[0] * pi[1] * s[(0, 1)]);
        assert!((off / limit - 1.0).abs() < 1e-4);
    }

    #[test]
    fn covariances_are_spd_and_invert_back() {
        let params = random_params(3, 77);
        let cov = asymptotic_cov(&params).unwrap();
        let info = expected_information(&params);
        for (sigma, info) in [(&cov.sigma1, &info.varpi), (&cov.sigma2, &info.nu)] {
            assert_eq!(sigma, &sigma.transpose());
            assert!(sigma.clone().cholesky().is_some());
            let back = spd_inverse(sigma, "sigma").unwrap();
            assert!((back - info).amax() < 1e-10);
        }
        assert!(asymptotic_cov(
            &ModelParams::from_pi_h(vec![0.5, 0.5], &DMatrix::from_element(2, 2, 1.0)).unwrap()
        )
        .is_err());
    }

    #[test]
    fn wilks_zero_at_mle_and_dof() {
        let params = random_params(2, 3);
        let (z, g) = sample_graph(&params, 50, 4).unwrap();
        let mle = cgm_mle(&g, &z, 2).unwrap().to_params().unwrap();
        assert!(wilks_cgm(&g, &z, &mle).unwrap().abs() < 1e-9);
        assert!(wilks_cgm(&g, &z, &params).unwrap() >= 0.0);
        assert_eq!(wilks_dof(2), 4);
        assert_eq!(wilks_dof(3), 8);
    }
}
