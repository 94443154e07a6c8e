//! Command-line front end. Exit codes: 0 success, 2 usage or parse error,
//! 3 non-convergence, 4 enumeration budget, 5 replicate-failure threshold,
//! 1 any other runtime failure.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::cgm::cgm_mle;
use crate::degree_corrected::{fit_submodel, DcConfig};
use crate::error::{Error, Result};
use crate::exact::{exact_gm_mle, ExactMleConfig};
use crate::experiments::{self, fmt_f64, ExperimentReport};
use crate::inference::{lan_check, monte_carlo_normality, parametric_bootstrap, BootstrapConfig, Estimator, McConfig};
use crate::io::{matrix_rows, params_json, read_graph, read_labels, read_params, write_graph, write_labels};
use crate::model::sample_graph;
use crate::profile::{profile_label_search, ProfileConfig};
use crate::variational::{fit_variational, Init, VarConfig};

#[derive(Parser, Debug)]
#[command(name = "blockmodel", version, about = "Stochastic blockmodel estimation and inference")]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample labels and a graph from a parameter file.
    Generate(GenerateArgs),
    /// Fit a model to a graph.
    Fit(FitArgs),
    /// Parametric bootstrap around the variational fit.
    Bootstrap(BootstrapArgs),
    /// Run a seeded Monte Carlo experiment.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
pub struct SeedArg {
    /// Master seed; falls back to BLOCKMODEL_SEED, then 0.
    #[arg(long, env = "BLOCKMODEL_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[command(flatten)]
    pub seed: SeedArg,
    /// Graph output file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub labels_out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Cgm,
    ExactMl,
    Variational,
    Profile,
    Dc,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Spectral,
    Random,
}

impl From<InitArg> for Init {
    fn from(a: InitArg) -> Self {
        match a {
            InitArg::Spectral => Init::Spectral,
            InitArg::Random => Init::Random,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct VarArgs {
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    #[arg(long, value_enum, default_value_t = InitArg::Spectral)]
    pub init: InitArg,
}

impl VarArgs {
    fn config(&self, seed: u64) -> VarConfig {
        VarConfig {
            tol: self.tol,
            max_iters: self.max_iters,
            restarts: self.restarts,
            init: self.init.into(),
            seed,
        }
    }
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long, value_enum)]
    pub method: Method,
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long = "K")]
    pub k: Option<usize>,
    /// Labels file (1-based), required by `cgm`.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[command(flatten)]
    pub var: VarArgs,
    #[command(flatten)]
    pub seed: SeedArg,
    /// Maximum greedy sweeps for `profile`.
    #[arg(long, default_value_t = 100)]
    pub max_sweeps: usize,
    /// Degree-corrected shape for `dc`.
    #[arg(long = "U")]
    pub u: Option<usize>,
    #[arg(long = "V")]
    pub v: Option<usize>,
    /// Output JSON (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Hard labels of the fit (1-based).
    #[arg(long)]
    pub labels_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BootstrapArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long = "K")]
    pub k: usize,
    #[arg(long = "B")]
    pub b: usize,
    #[command(flatten)]
    pub var: VarArgs,
    #[command(flatten)]
    pub seed: SeedArg,
    /// Per-replicate CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Summary JSON (default: stdout).
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum TrendMode {
    /// sqrt(n) distance between variational and complete-data fits.
    VarCgm,
    /// |Lambda_G - Lambda_CGM| by exact enumeration.
    GmCgm,
    /// Distance between exact marginal ML and variational fits.
    ExactVar,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    /// normality | wilks | lan | sandwich | identity | equivalence-trend | concentration
    pub name: String,
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Graph size; several values (comma-separated or repeated) for trends.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub n: Vec<usize>,
    #[arg(long = "K", default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long, default_value = "cgm")]
    pub estimator: String,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, value_enum, default_value_t = TrendMode::VarCgm)]
    pub mode: TrendMode,
    /// lambda grows as n^exponent across the listed sizes.
    #[arg(long, default_value_t = 0.0)]
    pub lambda_exponent: f64,
    /// Local perturbations for `lan`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub s: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub t: Vec<f64>,
    /// Thresholds for `concentration`.
    #[arg(long, value_delimiter = ',')]
    pub eps: Vec<f64>,
    #[command(flatten)]
    pub var: VarArgs,
    /// Per-replicate CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Summary JSON (default: stdout).
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

/// Failure carrying its exit code.
#[derive(Debug)]
pub struct Exit {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Exit {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Parse(_) | Error::InvalidInput(_) | Error::InvalidParams(_) | Error::Json(_) | Error::Io(_) => 2,
            Error::Budget { .. } => 4,
            Error::ReplicateFailures { .. } => 5,
            _ => 1,
        };
        Exit {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(msg: impl Into<String>) -> Exit {
    Exit {
        code: 2,
        message: msg.into(),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn emit_json(value: &Value, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => {
            let mut f = create(p)?;
            writeln!(f, "{text}")?;
            f.flush()?;
        }
        None => {
            let mut out = io::stdout().lock();
            writeln!(out, "{text}")?;
            out.flush()?;
        }
    }
    Ok(())
}

fn emit_report(report: &ExperimentReport, out: Option<&Path>, summary: Option<&Path>) -> Result<()> {
    if let Some(p) = out {
        report.write_csv(create(p)?)?;
    }
    emit_json(&report.summary, summary)
}

fn nan_to_null(m: &nalgebra::DMatrix<f64>) -> Value {
    json!(matrix_rows(m)
        .into_iter()
        .map(|r| r.into_iter().map(|x| if x.is_nan() { Value::Null } else { json!(x) }).collect::<Vec<_>>())
        .collect::<Vec<_>>())
}

fn merge(mut base: Value, extra: Value) -> Value {
    if let (Some(b), Some(e)) = (base.as_object_mut(), extra.as_object()) {
        for (k, v) in e {
            b.insert(k.clone(), v.clone());
        }
    }
    base
}

fn cmd_generate(a: &GenerateArgs) -> std::result::Result<(), Exit> {
    let params = read_params(&a.params)?;
    let (z, g) = sample_graph(&params, a.n, a.seed.seed)?;
    let mut f = create(&a.out).map_err(Exit::from)?;
    write_graph(&g, &mut f)?;
    f.flush().map_err(Error::from)?;
    if let Some(p) = &a.labels_out {
        let mut f = create(p)?;
        write_labels(&z, &mut f)?;
        f.flush().map_err(Error::from)?;
    }
    println!("n {} L {} density {}", g.n(), g.edge_count(), fmt_f64(g.density()));
    Ok(())
}

fn require_k(k: Option<usize>) -> std::result::Result<usize, Exit> {
    k.ok_or_else(|| usage("--K is required for this method"))
}

fn write_fit_labels(path: Option<&PathBuf>, labels: &crate::model::Labels) -> Result<()> {
    if let Some(p) = path {
        let mut f = create(p)?;
        write_labels(labels, &mut f)?;
        f.flush()?;
    }
    Ok(())
}

fn cmd_fit(a: &FitArgs) -> std::result::Result<(), Exit> {
    let graph = read_graph(&a.graph)?;
    let seed = a.seed.seed;
    let (out, converged) = match a.method {
        Method::Cgm => {
            let k = require_k(a.k)?;
            let path = a.labels.as_ref().ok_or_else(|| usage("--labels is required for --method cgm"))?;
            let labels = read_labels(path)?;
            let fit = cgm_mle(&graph, &labels, k)?;
            let base = fit.to_params().map(|p| params_json(&p)).unwrap_or_else(|_| json!({"K": k}));
            let v = merge(
                base,
                json!({
                    "method": "cgm", "pi": fit.pi_hat, "H": nan_to_null(&fit.h_hat), "loglik": fit.loglik,
                    "empty_block": fit.empty_block, "iterations": 0, "converged": true,
                }),
            );
            (v, true)
        }
        Method::ExactMl => {
            let k = require_k(a.k)?;
            let fit = exact_gm_mle(
                &graph,
                k,
                &ExactMleConfig {
                    tol: a.var.tol,
                    max_iters: a.var.max_iters,
                    seed,
                    ..Default::default()
                },
            )?;
            let v = merge(
                params_json(&fit.params),
                json!({"method": "exact-ml", "log_marginal": fit.log_marginal, "iterations": fit.iterations, "converged": fit.converged}),
            );
            (v, fit.converged)
        }
        Method::Variational => {
            let k = require_k(a.k)?;
            let fit = fit_variational(&graph, k, &a.var.config(seed))?;
            write_fit_labels(a.labels_out.as_ref(), &fit.labels())?;
            let v = merge(
                params_json(&fit.params),
                json!({
                    "method": "variational", "elbo": fit.elbo, "iterations": fit.iterations,
                    "converged": fit.converged, "restarts": fit.restarts_used,
                }),
            );
            (v, fit.converged)
        }
        Method::Profile => {
            let k = require_k(a.k)?;
            let fit = profile_label_search(
                &graph,
                k,
                &ProfileConfig {
                    restarts: a.var.restarts,
                    max_sweeps: a.max_sweeps,
                    seed,
                },
            )?;
            write_fit_labels(a.labels_out.as_ref(), &fit.labels)?;
            let base = cgm_mle(&graph, &fit.labels, k)?
                .to_params()
                .map(|p| params_json(&p))
                .unwrap_or_else(|_| json!({"K": k}));
            let v = merge(
                base,
                json!({
                    "method": "profile", "qn": fit.qn, "iterations": fit.sweeps, "converged": fit.converged,
                    "labels": fit.labels.to_one_based(),
                }),
            );
            (v, fit.converged)
        }
        Method::Dc => {
            let (u, v) = match (a.u, a.v) {
                (Some(u), Some(v)) => (u, v),
                _ => return Err(usage("--U and --V are required for --method dc")),
            };
            let fit = fit_submodel(
                &graph,
                u,
                v,
                &DcConfig {
                    tol: a.var.tol,
                    max_iters: a.var.max_iters,
                    restarts: a.var.restarts,
                    init: a.var.init.into(),
                    seed,
                    ..Default::default()
                },
            )?;
            write_fit_labels(a.labels_out.as_ref(), &fit.q.labels())?;
            let out = merge(
                params_json(&fit.params),
                json!({
                    "method": "dc", "dc": fit.dc, "elbo": fit.elbo, "iterations": fit.iterations,
                    "converged": fit.converged, "stalled": fit.stalled,
                }),
            );
            (out, fit.converged)
        }
    };
    emit_json(&out, a.out.as_deref())?;
    if converged {
        Ok(())
    } else {
        Err(Exit {
            code: 3,
            message: "fit did not converge".into(),
        })
    }
}

fn cmd_bootstrap(a: &BootstrapArgs) -> std::result::Result<(), Exit> {
    let graph = read_graph(&a.graph)?;
    let res = parametric_bootstrap(
        &graph,
        a.k,
        a.b,
        &BootstrapConfig {
            var: a.var.config(a.seed.seed),
            seed: a.seed.seed,
        },
    )?;
    let d1 = res.cov_varpi.nrows();
    let d2 = res.cov_nu.nrows();
    let mut w = csv::Writer::from_writer(create(&a.out)?);
    let mut head = vec!["replicate".to_string()];
    head.extend((0..d1).map(|j| format!("varpi_{j}")));
    head.extend((0..d2).map(|j| format!("nu_{j}")));
    head.extend(["elbo", "converged", "status"].map(String::from));
    w.write_record(&head).map_err(Error::from)?;
    let mut rows: Vec<(usize, Vec<String>)> = res
        .replicates
        .iter()
        .map(|r| {
            let mut row = vec![r.index.to_string()];
            row.extend(r.varpi.iter().chain(&r.nu).map(|x| fmt_f64(*x)));
            row.push(fmt_f64(r.elbo));
            row.push(r.converged.to_string());
            row.push("ok".into());
            (r.index, row)
        })
        .collect();
    for (i, e) in &res.failures {
        let mut row = vec![i.to_string()];
        row.extend(std::iter::repeat_n(String::new(), d1 + d2 + 2));
        row.push(format!("failed: {e}"));
        rows.push((*i, row));
    }
    rows.sort_by_key(|(i, _)| *i);
    for (_, row) in rows {
        w.write_record(&row).map_err(Error::from)?;
    }
    w.flush().map_err(Error::from)?;
    let summary = json!({
        "B": res.b,
        "n": res.n,
        "succeeded": res.replicates.len(),
        "failed": res.failures.len(),
        "lambda_hat": res.lambda_hat,
        "fitted": params_json(&res.fitted),
        "cov_varpi": matrix_rows(&res.cov_varpi),
        "cov_nu": matrix_rows(&res.cov_nu),
    });
    emit_json(&summary, a.summary.as_deref())?;
    Ok(())
}

fn need_params(a: &ExperimentArgs) -> std::result::Result<crate::model::ModelParams, Exit> {
    let p = a.params.as_ref().ok_or_else(|| usage(format!("--params is required for '{}'", a.name)))?;
    Ok(read_params(p)?)
}

fn single_n(a: &ExperimentArgs) -> std::result::Result<usize, Exit> {
    match a.n.as_slice() {
        [n] => Ok(*n),
        [] => Err(usage("--n is required")),
        _ => Err(usage(format!("'{}' takes a single --n", a.name))),
    }
}

fn cmd_experiment(a: &ExperimentArgs) -> std::result::Result<(), Exit> {
    let seed = a.seed.seed;
    let var = a.var.config(seed);
    let report = match a.name.as_str() {
        "normality" => {
            let theta = need_params(a)?;
            let n = single_n(a)?;
            let estimator: Estimator = a.estimator.parse().map_err(Exit::from)?;
            let rep = monte_carlo_normality(
                &theta,
                n,
                a.reps,
                estimator,
                &McConfig {
                    seed,
                    level: a.level,
                    var: var.clone(),
                    profile: ProfileConfig::default(),
                },
            )?;
            if let Some(p) = &a.out {
                rep.write_csv(create(p)?)?;
            }
            emit_json(&rep.summary_json(), a.summary.as_deref())?;
            return Ok(());
        }
        "wilks" => {
            let theta = need_params(a)?;
            experiments::wilks_report(&theta, single_n(a)?, a.reps, seed, &var)?
        }
        "lan" => {
            let theta = need_params(a)?;
            if a.n.is_empty() {
                return Err(usage("--n is required"));
            }
            let k = theta.k();
            let s = if a.s.is_empty() { vec![1.0; k - 1] } else { a.s.clone() };
            let t = if a.t.is_empty() { vec![1.0; k * (k + 1) / 2] } else { a.t.clone() };
            let mut rows = Vec::new();
            let mut medians = Vec::new();
            for &n in &a.n {
                let th = experiments::rescale_lambda(&theta, a.n[0], n, a.lambda_exponent)?;
                let rep = lan_check(&th, n, &s, &t, a.reps, seed)?;
                for (r, x) in rep.remainders.iter().enumerate() {
                    rows.push(vec![n.to_string(), r.to_string(), fmt_f64(*x)]);
                }
                medians.push(rep.median_abs);
            }
            ExperimentReport {
                name: "lan".into(),
                header: vec!["n".into(), "replicate".into(), "remainder".into()],
                rows,
                summary: json!({"experiment": "lan", "n": a.n, "median_abs_remainder": medians}),
            }
        }
        "sandwich" => experiments::sandwich(a.k, single_n(a)?, a.reps, seed)?,
        "identity" => experiments::identity(a.k, single_n(a)?, a.reps, seed)?,
        "equivalence-trend" => {
            let theta = need_params(a)?;
            if a.n.is_empty() {
                return Err(usage("--n is required"));
            }
            match a.mode {
                TrendMode::VarCgm => {
                    let pts = experiments::variational_cgm_trend(&theta, a.n[0], &a.n, a.lambda_exponent, a.reps, seed, &var)?;
                    experiments::trend_report("equivalence-trend", &pts)
                }
                TrendMode::GmCgm => {
                    let pts = experiments::gm_cgm_trend(&theta, &a.n, a.reps, seed)?;
                    experiments::trend_report("equivalence-trend", &pts)
                }
                TrendMode::ExactVar => {
                    let pts = a
                        .n
                        .iter()
                        .map(|&n| experiments::exact_vs_variational(&theta, n, a.reps, seed, &var))
                        .collect::<Result<Vec<_>>>()?;
                    experiments::trend_report("equivalence-trend", &pts)
                }
            }
        }
        "concentration" => {
            let theta = need_params(a)?;
            let eps = if a.eps.is_empty() {
                (1..=30).map(|i| 0.1 * i as f64).collect()
            } else {
                a.eps.clone()
            };
            let tail = experiments::concentration_tail(&theta, single_n(a)?, a.reps, &eps, seed)?;
            experiments::concentration_report(&tail)
        }
        other => return Err(Exit::from(experiments::unknown(other))),
    };
    emit_report(&report, a.out.as_deref(), a.summary.as_deref())?;
    Ok(())
}

fn dispatch(cli: &Cli) -> std::result::Result<(), Exit> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Bootstrap(a) => cmd_bootstrap(a),
        Command::Experiment(a) => cmd_experiment(a),
    }
}

/// Runs the parsed command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        builder = builder.num_threads(t);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            let _ = io::stderr().flush();
            e.code
        }
    }
}
