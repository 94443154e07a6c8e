//! Seeded experiment drivers shared by the CLI and the acceptance suite.
//!
//! Every driver derives one seed per replicate from a master seed and
//! reduces results in replicate order, so output does not depend on the
//! number of worker threads.

use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::align::{align_params, aligned_distance};
use crate::cgm::{cgm_mle, wilks_cgm, wilks_dof};
use crate::error::{Error, Result};
use crate::exact::{enumeration_size, exact_gm_mle_with_table, exact_posterior, labeling, verify_identity, ExactMleConfig, StatsTable};
use crate::inference::{wilks_gm_from_table, wilks_variational_from_fit};
use crate::model::{derive_seed, rng_from_seed, sample_graph, ModelParams};
use crate::profile::{concentration_x, ProfileConfig};
use crate::stats::{ks_chi2, median};
use crate::variational::{check_sandwich, fit_variational, VarConfig};

/// Tabular experiment output: CSV rows plus a JSON summary.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub summary: Value,
}

pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

impl ExperimentReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

/// `pi` from uniform weights in `[0.2, 1)`, `H` entries uniform in `[0.05, 0.95]`.
pub fn random_interior_params(k: usize, seed: u64) -> ModelParams {
    let mut rng = rng_from_seed(seed);
    let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = w.iter().sum();
    let mut h = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in a..k {
            let x = rng.random_range(0.05..0.95);
            h[(a, b)] = x;
            h[(b, a)] = x;
        }
    }
    ModelParams::from_pi_h(w.iter().map(|x| x / total).collect(), &h).expect("interior parameters")
}

/// `theta` with `rho` rescaled so that `lambda(n) = lambda(n0) (n / n0)^exponent`.
pub fn rescale_lambda(theta: &ModelParams, n0: usize, n: usize, exponent: f64) -> Result<ModelParams> {
    let lambda = theta.lambda(n0) * (n as f64 / n0 as f64).powf(exponent);
    ModelParams::new(lambda / n as f64, theta.pi().to_vec(), theta.s().clone())
}

pub fn sandwich(k: usize, n: usize, reps: usize, seed: u64) -> Result<ExperimentReport> {
    enumeration_size(k, n)?;
    let results: Vec<_> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let theta = random_interior_params(k, derive_seed(seed, 2 * r as u64));
            let (z, g) = sample_graph(&theta, n, derive_seed(seed, 2 * r as u64 + 1))?;
            check_sandwich(&z, &theta, &g)
        })
        .collect::<Result<_>>()?;
    let ok = results.iter().filter(|s| s.ok).count();
    Ok(ExperimentReport {
        name: "sandwich".into(),
        header: header(&["replicate", "lower", "mid", "upper", "ok"]),
        rows: results
            .iter()
            .enumerate()
            .map(|(r, s)| vec![r.to_string(), fmt_f64(s.lower), fmt_f64(s.mid), fmt_f64(s.upper), s.ok.to_string()])
            .collect(),
        summary: json!({"experiment": "sandwich", "K": k, "n": n, "reps": reps, "ok": ok}),
    })
}

/// Checks `g/g0 = E_0[f/f0 | A]` with `A` drawn from `theta0`.
pub fn identity(k: usize, n: usize, reps: usize, seed: u64) -> Result<ExperimentReport> {
    enumeration_size(k, n)?;
    let results: Vec<_> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let theta = random_interior_params(k, derive_seed(seed, 3 * r as u64));
            let theta0 = random_interior_params(k, derive_seed(seed, 3 * r as u64 + 1));
            let (_, g) = sample_graph(&theta0, n, derive_seed(seed, 3 * r as u64 + 2))?;
            verify_identity(&g, &theta, &theta0)
        })
        .collect::<Result<_>>()?;
    let worst = results.iter().map(|c| c.abs_diff).fold(0.0, f64::max);
    Ok(ExperimentReport {
        name: "identity".into(),
        header: header(&["replicate", "lhs", "rhs", "abs_diff"]),
        rows: results
            .iter()
            .enumerate()
            .map(|(r, c)| vec![r.to_string(), fmt_f64(c.lhs), fmt_f64(c.rhs), fmt_f64(c.abs_diff)])
            .collect(),
        summary: json!({"experiment": "identity", "K": k, "n": n, "reps": reps, "max_abs_diff": worst}),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WilksSamples {
    pub cgm: Vec<f64>,
    pub variational: Vec<f64>,
    pub ks_cgm: f64,
    pub ks_variational: f64,
    pub dof: usize,
    pub failures: usize,
}

/// `Lambda_CGM` at the true labels and `Lambda_V`, both against the truth.
pub fn wilks_samples(theta0: &ModelParams, n: usize, reps: usize, seed: u64, var: &VarConfig) -> Result<WilksSamples> {
    let runs: Vec<Result<(f64, f64)>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let (z, g) = sample_graph(theta0, n, derive_seed(seed, r as u64))?;
            let lc = wilks_cgm(&g, &z, theta0)?;
            let fit = fit_variational(&g, theta0.k(), &VarConfig { seed: derive_seed(seed ^ 0x3a, r as u64), ..var.clone() })?;
            let lv = wilks_variational_from_fit(&g, &fit, theta0)?;
            Ok((lc, lv))
        })
        .collect();
    let mut cgm = Vec::new();
    let mut variational = Vec::new();
    let mut failures = 0;
    for run in runs {
        match run {
            Ok((a, b)) => {
                cgm.push(a);
                variational.push(b);
            }
            Err(_) => failures += 1,
        }
    }
    let dof = wilks_dof(theta0.k());
    Ok(WilksSamples {
        ks_cgm: ks_chi2(&cgm, dof),
        ks_variational: ks_chi2(&variational, dof),
        cgm,
        variational,
        dof,
        failures,
    })
}

pub fn wilks_report(theta0: &ModelParams, n: usize, reps: usize, seed: u64, var: &VarConfig) -> Result<ExperimentReport> {
    let w = wilks_samples(theta0, n, reps, seed, var)?;
    Ok(ExperimentReport {
        name: "wilks".into(),
        header: header(&["replicate", "wilks_cgm", "wilks_variational"]),
        rows: w
            .cgm
            .iter()
            .zip(&w.variational)
            .enumerate()
            .map(|(r, (a, b))| vec![r.to_string(), fmt_f64(*a), fmt_f64(*b)])
            .collect(),
        summary: json!({
            "experiment": "wilks", "n": n, "reps": reps, "dof": w.dof,
            "ks_cgm": w.ks_cgm, "ks_variational": w.ks_variational, "failures": w.failures,
        }),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendPoint {
    pub n: usize,
    pub values: Vec<f64>,
    pub median: f64,
    pub skipped: usize,
}

fn trend_point(n: usize, runs: Vec<Result<f64>>) -> TrendPoint {
    let values: Vec<f64> = runs.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
    TrendPoint {
        n,
        median: median(&values),
        skipped: runs.len() - values.len(),
        values,
    }
}

/// `sqrt(n) * ||theta_VAR - theta_CGM||` after alignment, per seed and `n`.
pub fn variational_cgm_trend(
    theta: &ModelParams,
    n0: usize,
    ns: &[usize],
    exponent: f64,
    seeds: usize,
    seed: u64,
    var: &VarConfig,
) -> Result<Vec<TrendPoint>> {
    ns.iter()
        .map(|&n| {
            let t = rescale_lambda(theta, n0, n, exponent)?;
            let runs: Vec<Result<f64>> = (0..seeds)
                .into_par_iter()
                .map(|s| {
                    let (z, g) = sample_graph(&t, n, derive_seed(seed ^ n as u64, s as u64))?;
                    let cgm = cgm_mle(&g, &z, t.k())?.to_params()?;
                    let fit = fit_variational(&g, t.k(), &VarConfig { seed: derive_seed(seed, s as u64), ..var.clone() })?;
                    Ok((n as f64).sqrt() * aligned_distance(&fit.params, &cgm)?)
                })
                .collect();
            Ok(trend_point(n, runs))
        })
        .collect()
}

/// `|Lambda_G - Lambda_CGM(true z)|` per seed and `n` (exact enumeration).
pub fn gm_cgm_trend(theta: &ModelParams, ns: &[usize], seeds: usize, seed: u64) -> Result<Vec<TrendPoint>> {
    ns.iter()
        .map(|&n| {
            enumeration_size(theta.k(), n)?;
            let runs: Vec<Result<f64>> = (0..seeds)
                .into_par_iter()
                .map(|s| {
                    let (z, g) = sample_graph(theta, n, derive_seed(seed ^ n as u64, s as u64))?;
                    let lc = wilks_cgm(&g, &z, theta)?;
                    let table = StatsTable::build(&g, theta.k())?;
                    let config = ExactMleConfig { seed: derive_seed(seed, s as u64), ..Default::default() };
                    Ok((wilks_gm_from_table(&table, theta, &config)? - lc).abs())
                })
                .collect();
            Ok(trend_point(n, runs))
        })
        .collect()
}

/// Aligned distance between the exact marginal MLE and the variational fit.
pub fn exact_vs_variational(theta: &ModelParams, n: usize, seeds: usize, seed: u64, var: &VarConfig) -> Result<TrendPoint> {
    enumeration_size(theta.k(), n)?;
    let runs: Vec<Result<f64>> = (0..seeds)
        .into_par_iter()
        .map(|s| {
            let (_, g) = sample_graph(theta, n, derive_seed(seed, s as u64))?;
            let table = StatsTable::build(&g, theta.k())?;
            let exact = exact_gm_mle_with_table(&table, &ExactMleConfig { seed: derive_seed(seed ^ 0xe, s as u64), ..Default::default() })?;
            let fit = fit_variational(&g, theta.k(), &VarConfig { seed: derive_seed(seed ^ 0xf, s as u64), ..var.clone() })?;
            Ok(align_params(&fit.params, &exact.params)?.distance)
        })
        .collect();
    Ok(trend_point(n, runs))
}

pub fn trend_report(name: &str, points: &[TrendPoint]) -> ExperimentReport {
    let mut rows = Vec::new();
    for p in points {
        for (s, v) in p.values.iter().enumerate() {
            rows.push(vec![p.n.to_string(), s.to_string(), fmt_f64(*v)]);
        }
    }
    let medians: Vec<f64> = points.iter().map(|p| p.median).collect();
    let decreasing = medians.windows(2).all(|w| w[1] < w[0]);
    ExperimentReport {
        name: name.into(),
        header: header(&["n", "seed", "value"]),
        rows,
        summary: json!({
            "experiment": name,
            "n": points.iter().map(|p| p.n).collect::<Vec<_>>(),
            "median": medians,
            "skipped": points.iter().map(|p| p.skipped).collect::<Vec<_>>(),
            "decreasing": decreasing,
        }),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationTail {
    pub n: usize,
    /// `max_e ||X(e)||_inf` for each graph draw.
    pub maxima: Vec<f64>,
    /// `(eps, empirical P(max >= eps), bound)`.
    pub tail: Vec<(f64, f64, f64)>,
}

impl ConcentrationTail {
    /// Empirical tail never above the bound wherever the bound is below 1.
    pub fn within_bound(&self) -> bool {
        self.tail.iter().all(|&(_, p, b)| b >= 1.0 || p <= b)
    }
}

/// Exhaustive-`e` tail of `max_e ||X(e)||_inf` against `2 K^{n+2} exp(-eps^2 mu / 4)`.
pub fn concentration_tail(theta: &ModelParams, n: usize, draws: usize, eps: &[f64], seed: u64) -> Result<ConcentrationTail> {
    let k = theta.k();
    let total = enumeration_size(k, n)?;
    let maxima: Vec<f64> = (0..draws)
        .into_par_iter()
        .map(|r| {
            let (c, g) = sample_graph(theta, n, derive_seed(seed, r as u64))?;
            let mut worst: f64 = 0.0;
            for idx in 0..total {
                let x = concentration_x(&g, &labeling(idx, k, n), &c, theta)?;
                worst = worst.max(x.amax());
            }
            Ok(worst)
        })
        .collect::<Result<_>>()?;
    let mu = (n * n) as f64 * theta.rho();
    let log_prefactor = 2f64.ln() + (n + 2) as f64 * (k as f64).ln();
    let tail = eps
        .iter()
        .map(|&e| {
            let p = maxima.iter().filter(|&&m| m >= e).count() as f64 / draws.max(1) as f64;
            let bound = (log_prefactor - e * e * mu / 4.0).exp();
            (e, p, bound)
        })
        .collect();
    Ok(ConcentrationTail { n, maxima, tail })
}

pub fn concentration_report(t: &ConcentrationTail) -> ExperimentReport {
    ExperimentReport {
        name: "concentration".into(),
        header: header(&["draw", "max_abs_x"]),
        rows: t.maxima.iter().enumerate().map(|(r, m)| vec![r.to_string(), fmt_f64(*m)]).collect(),
        summary: json!({
            "experiment": "concentration",
            "n": t.n,
            "draws": t.maxima.len(),
            "tail": t.tail.iter().map(|(e, p, b)| json!({"eps": e, "empirical": p, "bound": b})).collect::<Vec<_>>(),
            "within_bound": t.within_bound(),
        }),
    }
}

/// Posterior mass of the true labeling's equivalence class at `theta`.
pub fn true_class_mass(theta: &ModelParams, n: usize, seeds: usize, seed: u64) -> Result<Vec<f64>> {
    (0..seeds)
        .into_par_iter()
        .map(|s| {
            let (z, g) = sample_graph(theta, n, derive_seed(seed, s as u64))?;
            exact_posterior(&g, theta)?.class_mass(&z)
        })
        .collect()
}

/// Fraction of replicates whose profile labels match the truth exactly.
pub fn profile_recovery(theta: &ModelParams, n: usize, reps: usize, seed: u64, config: &ProfileConfig) -> Result<(f64, Vec<usize>)> {
    let hamming: Vec<usize> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let (z, g) = sample_graph(theta, n, derive_seed(seed, r as u64))?;
            let c = ProfileConfig { seed: derive_seed(seed ^ 0x9f, r as u64), ..config.clone() };
            crate::inference::profile_misclassification(&g, &z, theta.k(), &c)
        })
        .collect::<Result<_>>()?;
    let exact = hamming.iter().filter(|&&h| h == 0).count() as f64 / reps.max(1) as f64;
    Ok((exact, hamming))
}

/// Errors from unknown experiment names.
pub fn unknown(name: &str) -> Error {
    Error::InvalidInput(format!("unknown experiment '{name}'"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sandwich_holds_on_small_instances() {
        let rep = sandwich(2, 6, 10, 5).unwrap();
        assert_eq!(rep.summary["ok"], 10);
        assert_eq!(rep.rows.len(), 10);
    }

    #[test]
    fn identity_holds_on_small_instances() {
        let rep = identity(2, 5, 10, 6).unwrap();
        assert!(rep.summary["max_abs_diff"].as_f64().unwrap() < 1e-10);
    }

    #[test]
    fn rescaling_hits_target_lambda() {
        let theta = ModelParams::planted(vec![0.5, 0.5], 5.0, 30.0, 400).unwrap();
        let t = rescale_lambda(&theta, 400, 1600, 0.3).unwrap();
        assert!((t.lambda(1600) - 30.0 * 4f64.powf(0.3)).abs() < 1e-9);
    }

    #[test]
    fn reports_are_deterministic() {
        let a = sandwich(2, 5, 4, 9).unwrap();
        let b = sandwich(2, 5, 4, 9).unwrap();
        assert_eq!(a.rows, b.rows);
    }

    #[test]
    fn concentration_bound_is_reported() {
        let theta = ModelParams::planted(vec![0.5, 0.5], 3.0, 4.0, 8).unwrap();
        let t = concentration_tail(&theta, 8, 5, &[0.5, 1.0, 2.0], 3).unwrap();
        assert_eq!(t.maxima.len(), 5);
        assert!(t.tail.windows(2).all(|w| w[1].1 <= w[0].1 && w[1].2 < w[0].2));
    }
}
