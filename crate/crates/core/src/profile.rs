//! Likelihood modularity and the maximum profile likelihood label search.
//!
//! `Q_n(A, e) = sup_theta log f(e, A; theta)`, so it is evaluated from block
//! counts with the closed-form maximizer plugged in. Also carries the
//! concentration utilities `tau`, `F`, the confusion matrix and `X(e)` used
//! by the experiment harness.

use nalgebra::DMatrix;
use rayon::prelude::*;
use rand::seq::SliceRandom;

use crate::cgm::{xlog1my, xlogy};
use crate::error::{Error, Result};
use crate::model::{derive_seed, rng_from_seed, sufficient_stats, Graph, Labels, ModelParams, SufficientStats};
use crate::spectral::spectral_labels;

/// `tau(x) = x ln x - x`, with `tau(0) = 0`.
pub fn tau(x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("tau undefined at {x}")));
    }
    Ok(xlogy(x, x) - x)
}

/// `F(M, t) = sum_{a,b} t_a t_b tau(M_ab / (t_a t_b))`.
pub fn f_function(m: &DMatrix<f64>, t: &[f64]) -> Result<f64> {
    let k = t.len();
    if m.shape() != (k, k) {
        return Err(Error::InvalidInput("M and t have different sizes".into()));
    }
    if t.iter().any(|&x| !(x >= 0.0)) || ((t.iter().sum::<f64>()) - 1.0).abs() > 1e-12 {
        return Err(Error::Domain("t is not in the simplex".into()));
    }
    let mut total = 0.0;
    for a in 0..k {
        for b in 0..k {
            let w = t[a] * t[b];
            let mab = m[(a, b)];
            if mab < 0.0 {
                return Err(Error::Domain("M has negative entries".into()));
            }
            if w == 0.0 {
                if mab > 0.0 {
                    return Err(Error::Domain(format!("t_a t_b = 0 with M({a},{b}) > 0")));
                }
                continue;
            }
            total += w * tau(mab / w)?;
        }
    }
    Ok(total)
}

/// `Q_n` from block counts. Empty classes contribute nothing.
pub fn qn_from_stats(stats: &SufficientStats) -> f64 {
    let k = stats.k();
    let n = stats.n() as f64;
    let mut total = 0.0;
    for &c in stats.n_a() {
        total += xlogy(c as f64, c as f64 / n);
    }
    let mut edges = 0.0;
    for a in 0..k {
        for b in 0..k {
            let pairs = stats.n_ab(a, b);
            if pairs == 0 {
                continue;
            }
            let o = stats.o(a, b) as f64;
            let p = o / pairs as f64;
            edges += xlogy(o, p) + xlog1my((pairs - stats.o(a, b)) as f64, p);
        }
    }
    total + 0.5 * edges
}

/// Likelihood modularity `Q_n(A, e)`.
pub fn modularity_qn(graph: &Graph, labels: &Labels, k: usize) -> Result<f64> {
    Ok(qn_from_stats(&sufficient_stats(graph, labels, k)?))
}

/// `R(a, a') = #{i : e_i = a, c_i = a'} / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix(pub DMatrix<f64>);

impl ConfusionMatrix {
    /// Row sums: class proportions of `e`.
    pub fn row_marginal(&self) -> Vec<f64> {
        self.0.row_iter().map(|r| r.sum()).collect()
    }

    /// Column sums: class proportions of `c`.
    pub fn column_marginal(&self) -> Vec<f64> {
        self.0.column_iter().map(|c| c.sum()).collect()
    }
}

pub fn confusion(e: &Labels, c: &Labels, k: usize) -> Result<ConfusionMatrix> {
    if e.len() != c.len() {
        return Err(Error::InvalidInput("label vectors differ in length".into()));
    }
    e.check(k)?;
    c.check(k)?;
    let n = e.len() as f64;
    let mut r = DMatrix::<f64>::zeros(k, k);
    for (&a, &b) in e.as_slice().iter().zip(c.as_slice()) {
        r[(a, b)] += 1.0;
    }
    Ok(ConfusionMatrix(r / n))
}

/// `X(e) = O(A, e) / mu_n - R S R^T` with `mu_n = n^2 rho` and `R = R(e, c)`.
///
/// Under the ordered-pair convention `E[X(e)]` is not exactly zero: the
/// missing `i = j` terms leave `-(1/n) sum_a' R(a, a') S(a', a')` on the
/// diagonal (see [`concentration_offset`]).
pub fn concentration_x(graph: &Graph, e: &Labels, c: &Labels, params: &ModelParams) -> Result<DMatrix<f64>> {
    let k = params.k();
    let stats = sufficient_stats(graph, e, k)?;
    let r = confusion(e, c, k)?.0;
    let n = graph.n() as f64;
    let mu = n * n * params.rho();
    let rsr = &r * params.s() * r.transpose();
    Ok(DMatrix::from_fn(k, k, |a, b| stats.o(a, b) as f64 / mu - rsr[(a, b)]))
}

/// Deterministic mean of [`concentration_x`] given both labelings.
pub fn concentration_offset(e: &Labels, c: &Labels, params: &ModelParams) -> Result<DMatrix<f64>> {
    let k = params.k();
    let r = confusion(e, c, k)?.0;
    let n = e.len() as f64;
    let s = params.s();
    Ok(DMatrix::from_fn(k, k, |a, b| {
        if a == b {
            -(0..k).map(|j| r[(a, j)] * s[(j, j)]).sum::<f64>() / n
        } else {
            0.0
        }
    }))
}

#[derive(Debug, Clone)]
pub struct ProfileConfig {
    /// Restart 0 starts from spectral labels, the rest from uniform random labels.
    pub restarts: usize,
    pub max_sweeps: usize,
    pub seed: u64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            restarts: 5,
            max_sweeps: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProfileFit {
    pub labels: Labels,
    pub qn: f64,
    pub sweeps: usize,
    pub converged: bool,
    /// Index of the winning restart.
    pub restart: usize,
}

// Minimum gain for a move; keeps rounding noise from cycling labels.
const MOVE_EPS: f64 = 1e-10;

struct SearchState {
    k: usize,
    z: Vec<usize>,
    n_a: Vec<u64>,
    o: Vec<u64>,
}

impl SearchState {
    fn new(graph: &Graph, labels: Labels, k: usize) -> Self {
        let stats = sufficient_stats(graph, &labels, k).expect("labels validated");
        Self {
            k,
            n_a: stats.n_a().to_vec(),
            o: (0..k * k).map(|i| stats.o(i / k, i % k)).collect(),
            z: labels.as_slice().to_vec(),
        }
    }

    fn qn(&self) -> f64 {
        qn_from_stats(&SufficientStats::from_parts(self.k, self.n_a.clone(), self.o.clone()))
    }

    /// Moves node `i` with per-class neighbor counts `d` into class `b`.
    fn shift(&mut self, i: usize, d: &[u64], b: usize) {
        let k = self.k;
        let a = self.z[i];
        for c in 0..k {
            self.o[a * k + c] -= d[c];
            self.o[c * k + a] -= d[c];
        }
        self.n_a[a] -= 1;
        for c in 0..k {
            self.o[b * k + c] += d[c];
            self.o[c * k + b] += d[c];
        }
        self.n_a[b] += 1;
        self.z[i] = b;
    }
}

/// Greedy single-node moves from `start` until a sweep makes no move.
/// Returns the labels, their `Q_n`, sweeps used and whether it converged.
pub fn greedy_search(
    graph: &Graph,
    start: Labels,
    k: usize,
    max_sweeps: usize,
    seed: u64,
) -> Result<(Labels, f64, usize, bool)> {
    start.check(k)?;
    if start.len() != graph.n() {
        return Err(Error::InvalidInput("labels and graph differ in size".into()));
    }
    let n = graph.n();
    let mut state = SearchState::new(graph, start, k);
    let mut rng = rng_from_seed(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut current = state.qn();
    let mut d = vec![0u64; k];
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < max_sweeps {
        sweeps += 1;
        order.shuffle(&mut rng);
        let mut moved = false;
        for &i in &order {
            d.iter_mut().for_each(|x| *x = 0);
            for &j in graph.neighbors(i) {
                d[state.z[j as usize]] += 1;
            }
            let home = state.z[i];
            let mut best = (home, current);
            for b in 0..k {
                if b == home {
                    continue;
                }
                state.shift(i, &d, b);
                let q = state.qn();
                state.shift(i, &d, home);
                if q > best.1 + MOVE_EPS && (best.0 == home || q > best.1) {
                    best = (b, q);
                }
            }
            if best.0 != home {
                state.shift(i, &d, best.0);
                current = best.1;
                moved = true;
            }
        }
        if !moved {
            converged = true;
            break;
        }
    }
    Ok((Labels::new(state.z), current, sweeps, converged))
}

/// Maximum profile likelihood labels by greedy search over restarts.
pub fn profile_label_search(graph: &Graph, k: usize, config: &ProfileConfig) -> Result<ProfileFit> {
    let n = graph.n();
    if n < k || k == 0 {
        return Err(Error::InvalidInput(format!("need n >= K >= 1, got n = {n}, K = {k}")));
    }
    let restarts = config.restarts.max(1);
    let runs: Vec<Result<(Labels, f64, usize, bool)>> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_from_seed(derive_seed(config.seed, r as u64));
            let start = if r == 0 {
                spectral_labels(graph, k, &mut rng)
            } else {
                use rand::Rng;
                Labels::new((0..n).map(|_| rng.random_range(0..k)).collect())
            };
            greedy_search(graph, start, k, config.max_sweeps, derive_seed(config.seed ^ 0x9e37, r as u64))
        })
        .collect();
    let mut best: Option<ProfileFit> = None;
    for (r, run) in runs.into_iter().enumerate() {
        let (labels, qn, sweeps, converged) = run?;
        if best.as_ref().is_none_or(|b| qn > b.qn) {
            best = Some(ProfileFit {
                labels,
                qn,
                sweeps,
                converged,
                restart: r,
            });
        }
    }
    Ok(best.expect("at least one restart"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::align_labels;
    use crate::cgm::{cgm_mle, complete_loglik};
    use crate::exact::labeling;
    use crate::model::sample_graph;
    use rand::Rng;

    fn cliques(sizes: &[usize]) -> (Graph, Labels) {
        let mut edges = Vec::new();
        let mut z = Vec::new();
        let mut start = 0;
        for (c, &s) in sizes.iter().enumerate() {
            for i in start..start + s {
                z.push(c);
                for j in i + 1..start + s {
                    edges.push((i, j));
                }
            }
            start += s;
        }
        (Graph::from_edges(start, &edges).unwrap(), Labels::new(z))
    }

    #[test]
    fn tau_values() {
        assert_eq!(tau(1.0).unwrap(), -1.0);
        assert!(tau(std::f64::consts::E).unwrap().abs() < 1e-15);
        assert_eq!(tau(0.0).unwrap(), 0.0);
        assert!(tau(-1.0).is_err());
    }

    #[test]
    fn f_function_cases() {
        let m = DMatrix::from_element(1, 1, 0.7);
        assert!((f_function(&m, &[1.0]).unwrap() - (0.7 * 0.7f64.ln() - 0.7)).abs() < 1e-15);
        let t = [0.3, 0.7];
        let outer = DMatrix::from_fn(2, 2, |a, b| t[a] * t[b]);
        assert!((f_function(&outer, &t).unwrap() + 1.0).abs() < 1e-14);
        let mut rng = rng_from_seed(9);
        for _ in 0..20 {
            let t0: f64 = rng.random_range(0.05..0.95);
            let t = [t0, 1.0 - t0];
            let m01: f64 = rng.random();
            let m = DMatrix::from_row_slice(2, 2, &[rng.random(), m01, m01, rng.random()]);
            let mut naive = 0.0;
            for a in 0..2 {
                for b in 0..2 {
                    let w = t[a] * t[b];
                    let x = m[(a, b)] / w;
                    naive += w * (x * x.ln() - x);
                }
            }
            assert!((f_function(&m, &t).unwrap() - naive).abs() < 1e-14);
        }
        assert!(f_function(&DMatrix::from_element(2, 2, 0.1), &[1.0, 0.0]).is_err());
    }

    #[test]
    fn qn_matches_loglik_at_mle() {
        let params = ModelParams::planted(vec![0.4, 0.6], 4.0, 6.0, 60).unwrap();
        let mut checked = 0;
        for s in 0..30 {
            let (_, g) = sample_graph(&params, 60, derive_seed(11, s)).unwrap();
            let mut rng = rng_from_seed(s);
            let e = Labels::new((0..60).map(|_| rng.random_range(0..2)).collect());
            let fit = cgm_mle(&g, &e, 2).unwrap();
            let Ok(theta) = fit.to_params() else { continue };
            let direct = complete_loglik(&g, &e, &theta).unwrap();
            assert!((modularity_qn(&g, &e, 2).unwrap() - direct).abs() < 1e-9);
            checked += 1;
        }
        assert!(checked > 20);
    }

    #[test]
    fn qn_single_class_is_bernoulli_profile() {
        let params = ModelParams::planted(vec![1.0], 1.0, 5.0, 40).unwrap();
        let (_, g) = sample_graph(&params, 40, 3).unwrap();
        let l = g.ordered_edge_count() as f64;
        let pairs = 40.0 * 39.0;
        let p = l / pairs;
        let expect = 0.5 * (l * p.ln() + (pairs - l) * (1.0 - p).ln());
        let got = modularity_qn(&g, &Labels::new(vec![0; 40]), 1).unwrap();
        assert!((got - expect).abs() < 1e-9);
    }

    #[test]
    fn qn_disjoint_cliques_has_only_class_terms() {
        let (g, z) = cliques(&[4, 6]);
        let expect = 4.0 * (0.4f64).ln() + 6.0 * (0.6f64).ln();
        assert!((modularity_qn(&g, &z, 2).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn confusion_cases() {
        let c = Labels::new(vec![0, 0, 1, 1, 1]);
        let r = confusion(&c, &c, 2).unwrap();
        assert_eq!(r.0, DMatrix::from_row_slice(2, 2, &[0.4, 0.0, 0.0, 0.6]));
        let r = confusion(&c.relabel(&[1, 0]), &c, 2).unwrap();
        assert_eq!(r.0, DMatrix::from_row_slice(2, 2, &[0.0, 0.6, 0.4, 0.0]));
        let r = confusion(&Labels::new(vec![0, 0, 1, 1]), &Labels::new(vec![0, 1, 0, 1]), 2).unwrap();
        assert!(r.0.iter().all(|&x| x == 0.25));
        assert_eq!(r.column_marginal(), vec![0.5, 0.5]);
    }

    #[test]
    fn greedy_recovers_disjoint_cliques() {
        let (g, z) = cliques(&[8, 8]);
        let fit = profile_label_search(&g, 2, &ProfileConfig::default()).unwrap();
        assert_eq!(align_labels(&fit.labels, &z, 2).unwrap().hamming, 0);
    }

    #[test]
    fn greedy_is_monotone_and_bounded() {
        let params = ModelParams::planted(vec![0.5, 0.5], 3.0, 8.0, 80).unwrap();
        let (_, g) = sample_graph(&params, 80, 5).unwrap();
        let mut rng = rng_from_seed(6);
        let start = Labels::new((0..80).map(|_| rng.random_range(0..2)).collect());
        let q0 = modularity_qn(&g, &start, 2).unwrap();
        let (z, q, sweeps, _) = greedy_search(&g, start, 2, 3, 7).unwrap();
        assert!(q >= q0);
        assert!(sweeps <= 3);
        assert!((modularity_qn(&g, &z, 2).unwrap() - q).abs() < 1e-8);
    }

    #[test]
    fn greedy_matches_exhaustive_at_n10() {
        let params = ModelParams::planted(vec![0.5, 0.5], 8.0, 4.0, 10).unwrap();
        let mut hits = 0;
        for s in 0..20 {
            let (_, g) = sample_graph(&params, 10, derive_seed(21, s)).unwrap();
            let best = (0..1u64 << 10)
                .map(|idx| modularity_qn(&g, &labeling(idx, 2, 10), 2).unwrap())
                .fold(f64::NEG_INFINITY, f64::max);
            let fit = profile_label_search(&g, 2, &ProfileConfig { seed: s, ..Default::default() }).unwrap();
            assert!(fit.qn <= best + 1e-9);
            if (fit.qn - best).abs() < 1e-9 {
                hits += 1;
            }
        }
        assert!(hits >= 18, "{hits}/20");
    }

    #[test]
    fn f_is_maximized_by_reference_labels() {
        let params = ModelParams::from_pi_h(
            vec![0.5, 0.5],
            &DMatrix::from_row_slice(2, 2, &[0.6, 0.1, 0.1, 0.4]),
        )
        .unwrap();
        let n = 10;
        for s in 0..5 {
            let mut rng = rng_from_seed(derive_seed(31, s));
            let c = Labels::new((0..n).map(|i| if i < 2 { i } else { rng.random_range(0..2) }).collect());
            let value = |e: &Labels| {
                let r = confusion(e, &c, 2).unwrap();
                let m = &r.0 * params.s() * r.0.transpose();
                f_function(&m, &r.row_marginal()).unwrap()
            };
            let at_c = value(&c);
            for idx in 0..1u64 << n {
                assert!(value(&labeling(idx, 2, n)) <= at_c + 1e-12);
            }
        }
    }

    #[test]
    fn concentration_mean_offset() {
        let params = ModelParams::planted(vec![0.5, 0.5], 4.0, 6.0, 40).unwrap();
        let (c, _) = sample_graph(&params, 40, 1).unwrap();
        let off = concentration_offset(&c, &c, &params).unwrap();
        assert_eq!(off[(0, 1)], 0.0);
        assert!(off[(0, 0)] < 0.0);
        // expected O equals mu (R S R^T + offset) exactly
        let r = confusion(&c, &c, 2).unwrap().0;
        let counts = c.counts(2);
        let mu = 1600.0 * params.rho();
        let rsr = &r * params.s() * r.transpose();
        for a in 0..2 {
            let pairs = (counts[a] * (counts[a] - 1)) as f64;
            let expected_o = pairs * params.h()[(a, a)];
            assert!((expected_o / mu - rsr[(a, a)] - off[(a, a)]).abs() < 1e-12);
        }
    }
}
