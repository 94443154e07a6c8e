//! Wilks statistics, confidence regions, the parametric bootstrap, the LAN
//! check and the Monte Carlo normality harness.
//!
//! Scaling: `varpi` errors are multiplied by `sqrt(n)`, `nu` errors by
//! `sqrt(n lambda_hat)` with `lambda_hat` the observed average degree.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{align_labels, align_params};
use crate::cgm::{asymptotic_cov, cgm_mle, expected_information, gradient, loglik_ratio, wilks_cgm};
use crate::error::{Error, Result};
use crate::io::matrix_rows;
use crate::exact::{exact_gm_mle_with_table, ExactMleConfig, StatsTable};
use crate::model::{
    derive_seed, rng_from_seed, sample_graph, sufficient_stats, Graph, Labels, LogitParams, ModelParams,
};
use crate::profile::{profile_label_search, ProfileConfig};
use crate::stats::{chi2_quantile, ks_chi2, ks_normal, normal_quantile, sample_covariance, sym_power};
use crate::variational::{fit_variational, optimize_q, VarConfig, VarFit};

/// Bootstrap replicate failure limit, percent.
pub const BOOTSTRAP_FAILURE_PCT: usize = 10;
/// Monte Carlo replicate failure limit, percent.
pub const MONTE_CARLO_FAILURE_PCT: usize = 5;

/// `(varpi, free nu)` as two plain vectors.
pub fn logit_parts(params: &ModelParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let v = params.to_logits()?.to_vector();
    let k = params.k();
    Ok((v[..k - 1].to_vec(), v[k - 1..].to_vec()))
}

fn check_failures(failed: usize, total: usize, limit_pct: usize) -> Result<()> {
    if failed * 100 > total * limit_pct {
        return Err(Error::ReplicateFailures {
            failed,
            total,
            limit_pct,
        });
    }
    Ok(())
}

fn lambda_hat(graph: &Graph) -> Result<f64> {
    let l = graph.average_degree();
    if l > 0.0 {
        Ok(l)
    } else {
        Err(Error::Domain("graph has no edges; lambda_hat = 0".into()))
    }
}

/// `2 [max_q J(q, theta_hat) - max_q J(q, theta0)]`.
///
/// Both maxima run the same sweeps from the fitted `q` (relabeled onto
/// `theta0`'s classes), so `theta0 = theta_hat` gives exactly zero.
pub fn wilks_variational_from_fit(graph: &Graph, fit: &VarFit, theta0: &ModelParams) -> Result<f64> {
    let sigma = align_params(&fit.params, theta0)?.permutation;
    let q0 = fit.q.permuted(&sigma);
    let seed = derive_seed(0x7715, graph.n() as u64);
    let fitted = fit.params.permuted(&sigma);
    let (_, j_hat) = optimize_q(graph, &fitted, q0.clone(), 1e-13, 1000, &mut rng_from_seed(seed))?;
    let (_, j0) = optimize_q(graph, theta0, q0, 1e-13, 1000, &mut rng_from_seed(seed))?;
    Ok(2.0 * (j_hat - j0))
}

pub fn wilks_variational(graph: &Graph, k: usize, theta0: &ModelParams, config: &VarConfig) -> Result<f64> {
    if !theta0.is_interior() {
        return Err(Error::Domain("null parameter must be interior".into()));
    }
    if theta0.k() != k {
        return Err(Error::InvalidInput("null parameter has a different K".into()));
    }
    let fit = fit_variational(graph, k, config)?;
    wilks_variational_from_fit(graph, &fit, theta0)
}

/// `2 [log g(A; theta_hat_ML) - log g(A; theta0)]`. `theta0` is itself a
/// candidate, so a local EM optimum below it is replaced by `theta0`.
pub fn wilks_gm_exact(graph: &Graph, k: usize, theta0: &ModelParams, config: &ExactMleConfig) -> Result<f64> {
    let table = StatsTable::build(graph, k)?;
    wilks_gm_from_table(&table, theta0, config)
}

pub fn wilks_gm_from_table(table: &StatsTable, theta0: &ModelParams, config: &ExactMleConfig) -> Result<f64> {
    let fit = exact_gm_mle_with_table(table, config)?;
    let l0 = table.marginal_loglik(theta0.pi(), theta0.h());
    Ok(2.0 * (fit.log_marginal.max(l0) - l0))
}

/// Plug-in normal confidence intervals and ellipsoids.
#[derive(Debug, Clone)]
pub struct ConfidenceRegion {
    pub level: f64,
    pub n: usize,
    pub lambda_hat: f64,
    /// Two-sided normal quantile `z_{(1+level)/2}`.
    pub z: f64,
    pub varpi_hat: Vec<f64>,
    pub nu_hat: Vec<f64>,
    pub varpi_intervals: Vec<(f64, f64)>,
    pub nu_intervals: Vec<(f64, f64)>,
    pub sigma1: DMatrix<f64>,
    pub sigma2: DMatrix<f64>,
    /// `Sigma1^{-1/2}`, `Sigma2^{-1/2}`.
    pub whiten1: DMatrix<f64>,
    pub whiten2: DMatrix<f64>,
    /// Squared-radius thresholds of the whitened ellipsoids.
    pub radius1: f64,
    pub radius2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coverage {
    pub varpi: Vec<bool>,
    pub nu: Vec<bool>,
    pub varpi_ellipsoid: bool,
    pub nu_ellipsoid: bool,
}

impl ConfidenceRegion {
    pub fn covers(&self, theta0: &ModelParams) -> Result<Coverage> {
        let (w0, n0) = logit_parts(theta0)?;
        let inside = |iv: &[(f64, f64)], x: &[f64]| -> Vec<bool> {
            iv.iter().zip(x).map(|(&(lo, hi), &v)| lo <= v && v <= hi).collect()
        };
        let sn = (self.n as f64).sqrt();
        let snl = (self.n as f64 * self.lambda_hat).sqrt();
        let d1 = DVector::from_iterator(w0.len(), self.varpi_hat.iter().zip(&w0).map(|(a, b)| sn * (a - b)));
        let d2 = DVector::from_iterator(n0.len(), self.nu_hat.iter().zip(&n0).map(|(a, b)| snl * (a - b)));
        Ok(Coverage {
            varpi: inside(&self.varpi_intervals, &w0),
            nu: inside(&self.nu_intervals, &n0),
            varpi_ellipsoid: (&self.whiten1 * d1).norm_squared() <= self.radius1,
            nu_ellipsoid: (&self.whiten2 * d2).norm_squared() <= self.radius2,
        })
    }
}

pub fn confidence_region(estimate: &ModelParams, graph: &Graph, level: f64) -> Result<ConfidenceRegion> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("level {level} outside (0, 1)")));
    }
    let cov = asymptotic_cov(estimate)?;
    let (varpi_hat, nu_hat) = logit_parts(estimate)?;
    let n = graph.n();
    let lambda_hat = lambda_hat(graph)?;
    let z = normal_quantile(0.5 * (1.0 + level));
    let intervals = |centre: &[f64], sigma: &DMatrix<f64>, scale: f64| -> Vec<(f64, f64)> {
        centre
            .iter()
            .enumerate()
            .map(|(j, &c)| {
                let half = z * (sigma[(j, j)] / scale).sqrt();
                (c - half, c + half)
            })
            .collect()
    };
    let radius = |d: usize| if d == 0 { 0.0 } else { chi2_quantile(level, d) };
    Ok(ConfidenceRegion {
        level,
        n,
        lambda_hat,
        z,
        varpi_intervals: intervals(&varpi_hat, &cov.sigma1, n as f64),
        nu_intervals: intervals(&nu_hat, &cov.sigma2, n as f64 * lambda_hat),
        radius1: radius(varpi_hat.len()),
        radius2: radius(nu_hat.len()),
        varpi_hat,
        nu_hat,
        whiten1: sym_power(&cov.sigma1, -0.5),
        whiten2: sym_power(&cov.sigma2, -0.5),
        sigma1: cov.sigma1,
        sigma2: cov.sigma2,
    })
}

#[derive(Debug, Clone, Default)]
pub struct BootstrapConfig {
    /// Settings for every variational fit; its seed is overridden per fit.
    pub var: VarConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapReplicate {
    pub index: usize,
    /// Aligned replicate estimate in logit coordinates.
    pub varpi: Vec<f64>,
    pub nu: Vec<f64>,
    pub elbo: f64,
    pub converged: bool,
    pub permutation: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub b: usize,
    pub n: usize,
    pub fitted: ModelParams,
    pub lambda_hat: f64,
    pub replicates: Vec<BootstrapReplicate>,
    pub failures: Vec<(usize, String)>,
    /// Covariance of `sqrt(n) (varpi* - varpi_hat)`.
    pub cov_varpi: DMatrix<f64>,
    /// Covariance of `sqrt(n lambda_hat) (nu* - nu_hat)`.
    pub cov_nu: DMatrix<f64>,
}

/// Empirical covariances on the `sqrt(n)` and `sqrt(n lambda)` scales.
pub fn bootstrap_covariances(
    fitted: &ModelParams,
    replicates: &[ModelParams],
    n: usize,
    lambda_hat: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>, Vec<Vec<usize>>)> {
    let (w_hat, nu_hat) = logit_parts(fitted)?;
    let mut rows1 = Vec::new();
    let mut rows2 = Vec::new();
    let mut perms = Vec::new();
    for rep in replicates {
        let al = align_params(rep, fitted)?;
        let (w, nu) = logit_parts(&al.aligned)?;
        rows1.push(w.iter().zip(&w_hat).map(|(a, b)| (n as f64).sqrt() * (a - b)).collect());
        rows2.push(nu.iter().zip(&nu_hat).map(|(a, b)| (n as f64 * lambda_hat).sqrt() * (a - b)).collect());
        perms.push(al.permutation);
    }
    Ok((sample_covariance(&rows1), sample_covariance(&rows2), perms))
}

pub fn parametric_bootstrap(graph: &Graph, k: usize, b: usize, config: &BootstrapConfig) -> Result<BootstrapResult> {
    if b < 2 {
        return Err(Error::InvalidInput(format!("bootstrap needs B >= 2, got {b}")));
    }
    let n = graph.n();
    let lambda_hat = lambda_hat(graph)?;
    let fit = fit_variational(
        graph,
        k,
        &VarConfig {
            seed: derive_seed(config.seed, u64::MAX),
            ..config.var.clone()
        },
    )?;
    let fitted = fit.params.clone();
    let runs: Vec<Result<(ModelParams, f64, bool)>> = (0..b)
        .into_par_iter()
        .map(|r| {
            let (_, g) = sample_graph(&fitted, n, derive_seed(config.seed, 2 * r as u64))?;
            let rep_config = VarConfig {
                seed: derive_seed(config.seed, 2 * r as u64 + 1),
                ..config.var.clone()
            };
            let f = fit_variational(&g, k, &rep_config)?;
            // boundary estimates have no logit coordinates
            f.params.to_logits()?;
            Ok((f.params, f.elbo, f.converged))
        })
        .collect();
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (r, run) in runs.into_iter().enumerate() {
        match run {
            Ok(x) => ok.push((r, x)),
            Err(e) => failures.push((r, e.to_string())),
        }
    }
    check_failures(failures.len(), b, BOOTSTRAP_FAILURE_PCT)?;
    let params: Vec<ModelParams> = ok.iter().map(|(_, (p, _, _))| p.clone()).collect();
    let (cov_varpi, cov_nu, perms) = bootstrap_covariances(&fitted, &params, n, lambda_hat)?;
    let mut replicates = Vec::new();
    for ((index, (p, elbo, converged)), permutation) in ok.into_iter().zip(perms) {
        let (varpi, nu) = logit_parts(&p.permuted(&permutation))?;
        replicates.push(BootstrapReplicate {
            index,
            varpi,
            nu,
            elbo,
            converged,
            permutation,
        });
    }
    Ok(BootstrapResult {
        b,
        n,
        fitted,
        lambda_hat,
        replicates,
        failures,
        cov_varpi,
        cov_nu,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanReport {
    pub n: usize,
    pub remainders: Vec<f64>,
    pub median_abs: f64,
}

/// Remainder of the quadratic expansion
/// `Lambda(varpi0 + s/sqrt(n), nu0 + t/sqrt(n^2 rho)) ~ s'Y1 + t'Y2 - s'I1 s/2 - t'I2 t/2`,
/// where `Y` are the scaled scores and `I` the normalized expected informations.
pub fn lan_check(theta0: &ModelParams, n: usize, s: &[f64], t: &[f64], reps: usize, seed: u64) -> Result<LanReport> {
    let k = theta0.k();
    let lp0 = theta0.to_logits()?;
    if s.len() != k - 1 || t.len() != k * (k + 1) / 2 {
        return Err(Error::InvalidInput("perturbation sizes do not match K".into()));
    }
    let sn = (n as f64).sqrt();
    let snr = (n as f64 * n as f64 * theta0.rho()).sqrt();
    let base = lp0.to_vector();
    let local: Vec<f64> = base
        .iter()
        .enumerate()
        .map(|(j, &x)| if j < k - 1 { x + s[j] / sn } else { x + t[j - (k - 1)] / snr })
        .collect();
    let local = LogitParams::from_vector(k, &local);
    let info = expected_information(theta0);
    let sv = DVector::from_column_slice(s);
    let tv = DVector::from_column_slice(t);
    let drift = 0.5 * (sv.dot(&(&info.varpi * &sv)) + tv.dot(&(&info.nu * &tv)));
    let remainders: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let (z, g) = sample_graph(theta0, n, derive_seed(seed, r as u64))?;
            let stats = sufficient_stats(&g, &z, k)?;
            let lhs = loglik_ratio(&local, &lp0, &stats);
            let grad = gradient(&lp0, &stats);
            let mut linear = 0.0;
            for (j, gj) in grad.iter().enumerate() {
                linear += if j < k - 1 { s[j] * gj / sn } else { t[j - (k - 1)] * gj / snr };
            }
            Ok(lhs - (linear - drift))
        })
        .collect::<Result<_>>()?;
    let abs: Vec<f64> = remainders.iter().map(|x| x.abs()).collect();
    Ok(LanReport {
        n,
        median_abs: crate::stats::median(&abs),
        remainders,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Estimator {
    #[serde(rename = "cgm")]
    Cgm,
    #[serde(rename = "variational")]
    Variational,
    #[serde(rename = "profile-then-cgm")]
    ProfileCgm,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Cgm => "cgm",
            Estimator::Variational => "variational",
            Estimator::ProfileCgm => "profile-then-cgm",
        })
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cgm" => Ok(Estimator::Cgm),
            "variational" => Ok(Estimator::Variational),
            "profile-then-cgm" | "profile" => Ok(Estimator::ProfileCgm),
            other => Err(Error::Parse(format!("unknown estimator '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct McConfig {
    pub seed: u64,
    pub level: f64,
    pub var: VarConfig,
    pub profile: ProfileConfig,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            level: 0.95,
            var: VarConfig::default(),
            profile: ProfileConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McReplicate {
    pub index: usize,
    pub varpi_hat: Vec<f64>,
    pub nu_hat: Vec<f64>,
    /// `Sigma1^{-1/2} sqrt(n) (varpi_hat - varpi0)`.
    pub z_varpi: Vec<f64>,
    /// `Sigma2^{-1/2} sqrt(n lambda_hat) (nu_hat - nu0)`.
    pub z_nu: Vec<f64>,
    pub covered_varpi: Vec<bool>,
    pub covered_nu: Vec<bool>,
    pub wilks: f64,
    pub lambda_hat: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct MonteCarloReport {
    pub estimator: Estimator,
    pub n: usize,
    pub reps: usize,
    pub level: f64,
    pub dof: usize,
    pub replicates: Vec<McReplicate>,
    pub failures: Vec<(usize, String)>,
    pub coverage_varpi: Vec<f64>,
    pub coverage_nu: Vec<f64>,
    pub ks_varpi: Vec<f64>,
    pub ks_nu: Vec<f64>,
    pub wilks_ks: f64,
    /// Sample covariance of `sqrt(n) (varpi_hat - varpi0)` against `Sigma1`.
    pub cov_varpi: DMatrix<f64>,
    pub sigma1: DMatrix<f64>,
    pub cov_nu: DMatrix<f64>,
    pub sigma2: DMatrix<f64>,
}

fn column(rows: &[Vec<f64>], j: usize) -> Vec<f64> {
    rows.iter().map(|r| r[j]).collect()
}

fn rate(flags: &[Vec<bool>], j: usize) -> f64 {
    flags.iter().filter(|f| f[j]).count() as f64 / flags.len().max(1) as f64
}

impl MonteCarloReport {
    /// One row per successful replicate, floats with 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d1 = self.coverage_varpi.len();
        let d2 = self.coverage_nu.len();
        let mut header = vec!["replicate".to_string(), "estimator".to_string()];
        header.extend((0..d1).map(|j| format!("varpi_{j}")));
        header.extend((0..d2).map(|j| format!("nu_{j}")));
        header.extend((0..d1).map(|j| format!("z_varpi_{j}")));
        header.extend((0..d2).map(|j| format!("z_nu_{j}")));
        header.extend(["lambda_hat", "wilks", "converged"].map(String::from));
        w.write_record(&header)?;
        for r in &self.replicates {
            let mut row = vec![r.index.to_string(), self.estimator.to_string()];
            for x in r.varpi_hat.iter().chain(&r.nu_hat).chain(&r.z_varpi).chain(&r.z_nu) {
                row.push(format!("{x:.16e}"));
            }
            row.push(format!("{:.16e}", r.lambda_hat));
            row.push(format!("{:.16e}", r.wilks));
            row.push(r.converged.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "estimator": self.estimator,
            "n": self.n,
            "reps": self.reps,
            "succeeded": self.replicates.len(),
            "failures": self.failures.iter().map(|(i, e)| serde_json::json!({"replicate": i, "error": e})).collect::<Vec<_>>(),
            "level": self.level,
            "coverage_varpi": self.coverage_varpi,
            "coverage_nu": self.coverage_nu,
            "ks_varpi": self.ks_varpi,
            "ks_nu": self.ks_nu,
            "wilks_dof": self.dof,
            "wilks_ks": self.wilks_ks,
            "cov_varpi": matrix_rows(&self.cov_varpi),
            "sigma1": matrix_rows(&self.sigma1),
            "cov_nu": matrix_rows(&self.cov_nu),
            "sigma2": matrix_rows(&self.sigma2),
        })
    }
}

struct Estimate {
    params: ModelParams,
    wilks: f64,
    converged: bool,
}

fn estimate_once(
    graph: &Graph,
    truth: &Labels,
    theta0: &ModelParams,
    estimator: Estimator,
    config: &McConfig,
    fit_seed: u64,
) -> Result<Estimate> {
    let k = theta0.k();
    match estimator {
        Estimator::Cgm => Ok(Estimate {
            params: cgm_mle(graph, truth, k)?.to_params()?,
            wilks: wilks_cgm(graph, truth, theta0)?,
            converged: true,
        }),
        Estimator::Variational => {
            let fit = fit_variational(graph, k, &VarConfig { seed: fit_seed, ..config.var.clone() })?;
            Ok(Estimate {
                wilks: wilks_variational_from_fit(graph, &fit, theta0)?,
                converged: fit.converged,
                params: fit.params,
            })
        }
        Estimator::ProfileCgm => {
            let fit = profile_label_search(graph, k, &ProfileConfig { seed: fit_seed, ..config.profile.clone() })?;
            let params = cgm_mle(graph, &fit.labels, k)?.to_params()?;
            let sigma = align_params(&params, theta0)?.permutation;
            let labels = fit.labels.relabel(&sigma);
            Ok(Estimate {
                wilks: wilks_cgm(graph, &labels, theta0)?,
                converged: fit.converged,
                params,
            })
        }
    }
}

/// Samples `reps` graphs from `theta0`, fits each, aligns to `theta0` and
/// standardizes the errors with the analytic covariances at `theta0`.
pub fn monte_carlo_normality(
    theta0: &ModelParams,
    n: usize,
    reps: usize,
    estimator: Estimator,
    config: &McConfig,
) -> Result<MonteCarloReport> {
    if !theta0.is_interior() {
        return Err(Error::Domain("theta0 must be interior".into()));
    }
    let k = theta0.k();
    let cov = asymptotic_cov(theta0)?;
    let w1 = sym_power(&cov.sigma1, -0.5);
    let w2 = sym_power(&cov.sigma2, -0.5);
    let (w0, nu0) = logit_parts(theta0)?;
    let runs: Vec<Result<McReplicate>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let (z, g) = sample_graph(theta0, n, derive_seed(config.seed, r as u64))?;
            let est = estimate_once(&g, &z, theta0, estimator, config, derive_seed(config.seed ^ 0xf17, r as u64))?;
            let aligned = align_params(&est.params, theta0)?.aligned;
            let (wh, nuh) = logit_parts(&aligned)?;
            let lam = lambda_hat(&g)?;
            let e1 = DVector::from_iterator(wh.len(), wh.iter().zip(&w0).map(|(a, b)| (n as f64).sqrt() * (a - b)));
            let e2 = DVector::from_iterator(
                nuh.len(),
                nuh.iter().zip(&nu0).map(|(a, b)| (n as f64 * lam).sqrt() * (a - b)),
            );
            let coverage = confidence_region(&aligned, &g, config.level)?.covers(theta0)?;
            Ok(McReplicate {
                index: r,
                varpi_hat: wh,
                nu_hat: nuh,
                z_varpi: (&w1 * e1).iter().copied().collect(),
                z_nu: (&w2 * e2).iter().copied().collect(),
                covered_varpi: coverage.varpi,
                covered_nu: coverage.nu,
                wilks: est.wilks,
                lambda_hat: lam,
                converged: est.converged,
            })
        })
        .collect();
    let mut replicates = Vec::new();
    let mut failures = Vec::new();
    for (r, run) in runs.into_iter().enumerate() {
        match run {
            Ok(rep) if rep.z_varpi.iter().chain(&rep.z_nu).all(|x| x.is_finite()) => replicates.push(rep),
            Ok(_) => failures.push((r, "non-finite standardized error".to_string())),
            Err(e) => failures.push((r, e.to_string())),
        }
    }
    check_failures(failures.len(), reps, MONTE_CARLO_FAILURE_PCT)?;
    let d1 = k - 1;
    let d2 = k * (k + 1) / 2;
    let zv: Vec<Vec<f64>> = replicates.iter().map(|r| r.z_varpi.clone()).collect();
    let zn: Vec<Vec<f64>> = replicates.iter().map(|r| r.z_nu.clone()).collect();
    let cv: Vec<Vec<bool>> = replicates.iter().map(|r| r.covered_varpi.clone()).collect();
    let cn: Vec<Vec<bool>> = replicates.iter().map(|r| r.covered_nu.clone()).collect();
    let raw1: Vec<Vec<f64>> = replicates
        .iter()
        .map(|r| r.varpi_hat.iter().zip(&w0).map(|(a, b)| (n as f64).sqrt() * (a - b)).collect())
        .collect();
    let raw2: Vec<Vec<f64>> = replicates
        .iter()
        .map(|r| {
            let s = (n as f64 * r.lambda_hat).sqrt();
            r.nu_hat.iter().zip(&nu0).map(|(a, b)| s * (a - b)).collect()
        })
        .collect();
    let wilks: Vec<f64> = replicates.iter().map(|r| r.wilks).collect();
    let dof = crate::cgm::wilks_dof(k);
    Ok(MonteCarloReport {
        estimator,
        n,
        reps,
        level: config.level,
        dof,
        coverage_varpi: (0..d1).map(|j| rate(&cv, j)).collect(),
        coverage_nu: (0..d2).map(|j| rate(&cn, j)).collect(),
        ks_varpi: (0..d1).map(|j| ks_normal(&column(&zv, j))).collect(),
        ks_nu: (0..d2).map(|j| ks_normal(&column(&zn, j))).collect(),
        wilks_ks: ks_chi2(&wilks, dof),
        cov_varpi: sample_covariance(&raw1),
        cov_nu: sample_covariance(&raw2),
        sigma1: cov.sigma1,
        sigma2: cov.sigma2,
        replicates,
        failures,
    })
}

/// Hamming distance of profile labels to the truth after alignment.
pub fn profile_misclassification(graph: &Graph, truth: &Labels, k: usize, config: &ProfileConfig) -> Result<usize> {
    let fit = profile_label_search(graph, k, config)?;
    Ok(align_labels(&fit.labels, truth, k)?.hamming)
}
