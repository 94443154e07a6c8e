//! Brute-force marginalization over all `K^n` labelings.
//!
//! Labelings are enumerated in mixed-radix order with node 0 as the least
//! significant digit. Log-sum-exp reductions use one max shift and a fixed
//! sequential summation order, so results do not depend on thread count.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::align::{align_params, permutations};
use crate::cgm::{cgm_mle_from_stats, loglik_from_stats};
use crate::error::{Error, Result};
use crate::model::{rng_from_seed, sufficient_stats, Graph, Labels, ModelParams, SufficientStats};

/// Largest number of labelings any routine here will enumerate.
pub const ENUMERATION_LIMIT: u64 = 10_000_000;

pub fn enumeration_size(k: usize, n: usize) -> Result<u64> {
    let mut total: u64 = 1;
    for _ in 0..n {
        total = match total.checked_mul(k as u64) {
            Some(t) if t <= ENUMERATION_LIMIT => t,
            _ => {
                return Err(Error::Budget {
                    k,
                    n,
                    limit: ENUMERATION_LIMIT,
                })
            }
        };
    }
    Ok(total)
}

/// The labeling with mixed-radix index `idx`.
pub fn labeling(idx: u64, k: usize, n: usize) -> Labels {
    let mut rest = idx;
    let z = (0..n)
        .map(|_| {
            let digit = (rest % k as u64) as usize;
            rest /= k as u64;
            digit
        })
        .collect();
    Labels::new(z)
}

pub fn labeling_index(labels: &Labels, k: usize) -> u64 {
    labels
        .as_slice()
        .iter()
        .rev()
        .fold(0u64, |acc, &c| acc * k as u64 + c as u64)
}

const CHUNK: u64 = 4096;

/// Complete-data log-likelihood of every labeling, in enumeration order.
fn all_logliks(graph: &Graph, params: &ModelParams) -> Result<Vec<f64>> {
    let k = params.k();
    let n = graph.n();
    let total = enumeration_size(k, n)?;
    let chunks = total.div_ceil(CHUNK);
    let parts: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(total);
            (lo..hi)
                .map(|idx| {
                    let z = labeling(idx, k, n);
                    let st = sufficient_stats(graph, &z, k).expect("labels in range");
                    loglik_from_stats(&st, params.pi(), params.h())
                })
                .collect()
        })
        .collect();
    Ok(parts.concat())
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// `log g(A; theta) = log sum_z f(z, A; theta)`.
pub fn marginal_loglik(graph: &Graph, params: &ModelParams) -> Result<f64> {
    Ok(log_sum_exp(&all_logliks(graph, params)?))
}

/// Exact posterior over all labelings.
#[derive(Debug, Clone)]
pub struct ExactPosterior {
    pub k: usize,
    pub n: usize,
    pub log_marginal: f64,
    pub probs: Vec<f64>,
}

impl ExactPosterior {
    pub fn prob(&self, labels: &Labels) -> f64 {
        self.probs[labeling_index(labels, self.k) as usize]
    }

    /// Posterior mass of the equivalence class `{sigma(z)}` of a labeling.
    pub fn class_mass(&self, labels: &Labels) -> Result<f64> {
        let mut seen = Vec::new();
        for sigma in permutations(self.k)? {
            let idx = labeling_index(&labels.relabel(&sigma), self.k);
            if !seen.contains(&idx) {
                seen.push(idx);
            }
        }
        Ok(seen.iter().map(|&i| self.probs[i as usize]).sum())
    }

    pub fn support(&self) -> impl Iterator<Item = (Labels, f64)> + '_ {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, &p)| (labeling(i as u64, self.k, self.n), p))
    }
}

pub fn exact_posterior(graph: &Graph, params: &ModelParams) -> Result<ExactPosterior> {
    let logliks = all_logliks(graph, params)?;
    let log_marginal = log_sum_exp(&logliks);
    if !log_marginal.is_finite() {
        return Err(Error::Domain("graph has zero probability under the model".into()));
    }
    let probs = logliks.iter().map(|&l| (l - log_marginal).exp()).collect();
    Ok(ExactPosterior {
        k: params.k(),
        n: graph.n(),
        log_marginal,
        probs,
    })
}

/// Distinct block-count tuples over all labelings, with multiplicities.
///
/// Every likelihood quantity depends on a labeling only through its counts,
/// so the table reduces `K^n` evaluations to one per distinct tuple.
#[derive(Debug, Clone)]
pub struct StatsTable {
    pub k: usize,
    pub n: usize,
    pub entries: Vec<(SufficientStats, f64)>,
}

impl StatsTable {
    pub fn build(graph: &Graph, k: usize) -> Result<Self> {
        let n = graph.n();
        let total = enumeration_size(k, n)?;
        let mut index: HashMap<SufficientStats, usize> = HashMap::new();
        let mut entries: Vec<(SufficientStats, f64)> = Vec::new();
        for idx in 0..total {
            let st = sufficient_stats(graph, &labeling(idx, k, n), k)?;
            match index.get(&st) {
                Some(&pos) => entries[pos].1 += 1.0,
                None => {
                    index.insert(st.clone(), entries.len());
                    entries.push((st, 1.0));
                }
            }
        }
        Ok(Self { k, n, entries })
    }

    fn weighted_logliks(&self, pi: &[f64], h: &DMatrix<f64>) -> Vec<f64> {
        self.entries
            .iter()
            .map(|(st, count)| loglik_from_stats(st, pi, h) + count.ln())
            .collect()
    }

    pub fn marginal_loglik(&self, pi: &[f64], h: &DMatrix<f64>) -> f64 {
        log_sum_exp(&self.weighted_logliks(pi, h))
    }

    /// One exact EM step: posterior expected counts, then the closed-form
    /// maximizer. Returns `(pi, H, log g at the input)`.
    fn em_step(&self, pi: &[f64], h: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>, f64) {
        let k = self.k;
        let logw = self.weighted_logliks(pi, h);
        let log_g = log_sum_exp(&logw);
        let mut n_a = vec![0.0; k];
        let mut o = DMatrix::<f64>::zeros(k, k);
        let mut pairs = DMatrix::<f64>::zeros(k, k);
        for ((st, _), lw) in self.entries.iter().zip(&logw) {
            let w = (lw - log_g).exp();
            if w == 0.0 {
                continue;
            }
            for a in 0..k {
                n_a[a] += w * st.n_a()[a] as f64;
                for b in 0..k {
                    o[(a, b)] += w * st.o(a, b) as f64;
                    pairs[(a, b)] += w * st.n_ab(a, b) as f64;
                }
            }
        }
        let n = self.n as f64;
        let new_pi = n_a.iter().map(|x| x / n).collect();
        let new_h = DMatrix::from_fn(k, k, |a, b| {
            if pairs[(a, b)] > 0.0 {
                (o[(a, b)] / pairs[(a, b)]).clamp(0.0, 1.0)
            } else {
                0.0
            }
        });
        (new_pi, new_h, log_g)
    }

    /// Labeling counts maximizing the profile likelihood.
    pub fn best_profile(&self) -> &SufficientStats {
        let mut best: Option<(f64, &SufficientStats)> = None;
        for (st, _) in &self.entries {
            let q = cgm_mle_from_stats(st.clone()).loglik;
            if best.is_none_or(|(b, _)| q > b) {
                best = Some((q, st));
            }
        }
        best.expect("non-empty table").1
    }
}

#[derive(Debug, Clone)]
pub struct ExactMleConfig {
    pub random_starts: usize,
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for ExactMleConfig {
    fn default() -> Self {
        Self {
            random_starts: 4,
            tol: 1e-10,
            max_iters: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExactMleFit {
    pub params: ModelParams,
    pub log_marginal: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `log g` never decreased (up to rounding) across iterations of any start.
    pub monotone: bool,
    /// `log g` per iteration of the winning start.
    pub trace: Vec<f64>,
}

fn renormalize(pi: &mut [f64]) {
    let t: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= t);
}

/// Maximizes `log g(A; theta)` by exact EM from several starts.
pub fn exact_gm_mle(graph: &Graph, k: usize, config: &ExactMleConfig) -> Result<ExactMleFit> {
    let table = StatsTable::build(graph, k)?;
    exact_gm_mle_with_table(&table, config)
}

pub fn exact_gm_mle_with_table(table: &StatsTable, config: &ExactMleConfig) -> Result<ExactMleFit> {
    let k = table.k;
    let n = table.n as f64;
    let mut starts: Vec<(Vec<f64>, DMatrix<f64>)> = Vec::new();
    let profile = cgm_mle_from_stats(table.best_profile().clone());
    let profile_h = profile.h_hat.map(|x| if x.is_nan() { 0.5 } else { x });
    // keep the profile start off the boundary so EM can move every entry
    let mut profile_pi: Vec<f64> = profile.pi_hat.iter().map(|&p| p.max(0.5 / n)).collect();
    renormalize(&mut profile_pi);
    starts.push((profile_pi, profile_h.map(|x| x.clamp(1e-3, 1.0 - 1e-3))));
    let mut rng = rng_from_seed(config.seed);
    for _ in 0..config.random_starts {
        let mut pi: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
        renormalize(&mut pi);
        let mut h = DMatrix::zeros(k, k);
        for a in 0..k {
            for b in a..k {
                let x = rng.random_range(0.02..0.98);
                h[(a, b)] = x;
                h[(b, a)] = x;
            }
        }
        starts.push((pi, h));
    }

    let mut best: Option<(f64, Vec<f64>, DMatrix<f64>, usize, bool, Vec<f64>)> = None;
    let mut monotone = true;
    for (mut pi, mut h) in starts {
        let mut trace = Vec::new();
        let mut converged = false;
        let mut iterations = 0;
        let mut last = f64::NEG_INFINITY;
        while iterations < config.max_iters {
            let (new_pi, new_h, log_g) = table.em_step(&pi, &h);
            iterations += 1;
            trace.push(log_g);
            if log_g < last - 1e-9 * last.abs().max(1.0) {
                monotone = false;
            }
            let done = (log_g - last).abs() < config.tol;
            last = log_g;
            if done {
                converged = true;
                break;
            }
            pi = new_pi;
            h = new_h;
        }
        if !converged {
            last = table.marginal_loglik(&pi, &h);
        }
        if best.as_ref().is_none_or(|b| last > b.0) {
            best = Some((last, pi, h, iterations, converged, trace));
        }
    }
    let (log_marginal, mut pi, h, iterations, converged, trace) = best.expect("at least one start");
    if pi.iter().any(|&p| p <= 0.0) {
        return Err(Error::Domain("exact EM collapsed a class to zero mass".into()));
    }
    renormalize(&mut pi);
    let mut params = ModelParams::from_pi_h(pi, &h)?;
    if let Ok(reference) = profile.to_params() {
        params = align_params(&params, &reference)?.aligned;
    }
    Ok(ExactMleFit {
        params,
        log_marginal,
        iterations,
        converged,
        monotone,
        trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub abs_diff: f64,
}

/// Compares `g(A; theta) / g(A; theta0)` with the posterior expectation
/// `E_theta0[f(Z, A; theta) / f(Z, A; theta0) | A]`.
pub fn verify_identity(graph: &Graph, theta: &ModelParams, theta0: &ModelParams) -> Result<IdentityCheck> {
    let ll = all_logliks(graph, theta)?;
    let ll0 = all_logliks(graph, theta0)?;
    let log_g = log_sum_exp(&ll);
    let log_g0 = log_sum_exp(&ll0);
    let lhs = (log_g - log_g0).exp();
    let rhs: f64 = ll
        .iter()
        .zip(&ll0)
        .filter(|(_, &l0)| l0 > f64::NEG_INFINITY)
        .map(|(&l, &l0)| (l0 - log_g0).exp() * (l - l0).exp())
        .sum();
    Ok(IdentityCheck {
        lhs,
        rhs,
        abs_diff: (lhs - rhs).abs(),
    })
}
