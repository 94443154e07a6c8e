//! Mean-field variational EM.
//!
//! `J(q, theta; A)` is computed in `O(nK^2 + |E|K)` by splitting the pair
//! sum into an edge part over adjacency lists and a dense part that only
//! needs the column totals of `q`.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

use crate::cgm::{complete_loglik, xlogy};
use crate::error::{Error, Result};
use crate::exact::marginal_loglik;
use crate::model::{derive_seed, rng_from_seed, Graph, Labels, ModelParams, SbmRng};
use crate::spectral::spectral_labels;

/// Floor applied to `q` entries before taking logs.
const Q_FLOOR: f64 = 1e-300;
/// Clamp range for `H` when evaluating logs inside the E-step.
const H_CLAMP: f64 = 1e-12;
/// Blocks whose expected size falls below this are treated as empty.
const EMPTY_MASS: f64 = 1e-6;

/// Product distribution over labels: row `i` is `q_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldPosterior {
    n: usize,
    k: usize,
    q: Vec<f64>,
}

impl MeanFieldPosterior {
    pub fn new(n: usize, k: usize, q: Vec<f64>) -> Result<Self> {
        if q.len() != n * k {
            return Err(Error::InvalidInput(format!("q has {} entries, expected {}", q.len(), n * k)));
        }
        for i in 0..n {
            let row = &q[i * k..(i + 1) * k];
            if row.iter().any(|&x| !(x >= 0.0)) {
                return Err(Error::InvalidInput(format!("row {i} has negative entries")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidInput(format!("row {i} sums to {s}")));
            }
        }
        Ok(Self { n, k, q })
    }

    pub fn point_mass(labels: &Labels, k: usize) -> Self {
        let n = labels.len();
        let mut q = vec![0.0; n * k];
        for (i, &c) in labels.as_slice().iter().enumerate() {
            q[i * k + c] = 1.0;
        }
        Self { n, k, q }
    }

    /// Every row equal to `pi`.
    pub fn constant(n: usize, pi: &[f64]) -> Self {
        let k = pi.len();
        let q = (0..n).flat_map(|_| pi.iter().copied()).collect();
        Self { n, k, q }
    }

    /// `weight` on the assigned class, the rest spread evenly.
    pub fn softened(labels: &Labels, k: usize, weight: f64) -> Self {
        if k == 1 {
            return Self::point_mass(labels, 1);
        }
        let n = labels.len();
        let other = (1.0 - weight) / (k - 1) as f64;
        let mut q = vec![other; n * k];
        for (i, &c) in labels.as_slice().iter().enumerate() {
            q[i * k + c] = weight;
        }
        Self { n, k, q }
    }

    /// Rows drawn i.i.d. from Dirichlet(1, ..., 1).
    pub fn random(n: usize, k: usize, rng: &mut SbmRng) -> Self {
        let mut q = Vec::with_capacity(n * k);
        for _ in 0..n {
            let w: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Exp1)).collect();
            let t: f64 = w.iter().sum();
            q.extend(w.iter().map(|x| x / t));
        }
        Self { n, k, q }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.q[i * self.k..(i + 1) * self.k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.q
    }

    /// `argmax_a q_i(a)`, lowest class on ties.
    pub fn labels(&self) -> Labels {
        Labels::new(
            (0..self.n)
                .map(|i| {
                    let row = self.row(i);
                    (0..self.k).fold(0, |best, a| if row[a] > row[best] { a } else { best })
                })
                .collect(),
        )
    }

    /// `sum_i q_i`.
    fn totals(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.k];
        for i in 0..self.n {
            for (a, x) in self.row(i).iter().enumerate() {
                t[a] += x;
            }
        }
        t
    }

    /// `sum_{j in N(i)} q_j`.
    fn neighbor_sums(&self, graph: &Graph, i: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for &j in graph.neighbors(i) {
            for (a, x) in self.row(j as usize).iter().enumerate() {
                out[a] += x;
            }
        }
    }

    pub fn permuted(&self, sigma: &[usize]) -> Self {
        let mut q = vec![0.0; self.q.len()];
        for i in 0..self.n {
            for a in 0..self.k {
                q[i * self.k + sigma[a]] = self.q[i * self.k + a];
            }
        }
        Self { n: self.n, k: self.k, q }
    }
}

fn check_shapes(q: &MeanFieldPosterior, params: &ModelParams, graph: &Graph) -> Result<()> {
    if q.n != graph.n() || q.k != params.k() {
        return Err(Error::InvalidInput(format!(
            "q is {}x{}, graph has {} nodes and model has K = {}",
            q.n,
            q.k,
            graph.n(),
            params.k()
        )));
    }
    Ok(())
}

/// Mean-field objective `J(q, theta; A)`.
///
/// `H` is clamped to `[1e-12, 1 - 1e-12]` for the log terms only, so a
/// boundary estimate whose complement rounded to zero stays comparable.
pub fn elbo(q: &MeanFieldPosterior, params: &ModelParams, graph: &Graph) -> Result<f64> {
    check_shapes(q, params, graph)?;
    let k = q.k;
    let pi = params.pi();
    let logs = ClampedLogs::new(params);
    let mut total = 0.0;
    for i in 0..q.n {
        for (a, &x) in q.row(i).iter().enumerate() {
            total += xlogy(x, pi[a]) - xlogy(x, x);
        }
    }
    let totals = q.totals();
    let mut nbr = vec![0.0; k];
    let mut pair_sum = 0.0;
    for i in 0..q.n {
        q.neighbor_sums(graph, i, &mut nbr);
        let qi = q.row(i);
        for a in 0..k {
            if qi[a] == 0.0 {
                continue;
            }
            let mut inner = 0.0;
            for b in 0..k {
                inner += nbr[b] * logs.log_odds[(a, b)] + (totals[b] - qi[b]) * logs.log_1mh[(a, b)];
            }
            pair_sum += qi[a] * inner;
        }
    }
    Ok(total + 0.5 * pair_sum)
}

struct ClampedLogs {
    log_pi: Vec<f64>,
    /// `log H - log(1 - H)`
    log_odds: DMatrix<f64>,
    log_1mh: DMatrix<f64>,
}

impl ClampedLogs {
    fn new(params: &ModelParams) -> Self {
        let h = params.h().map(|x| x.clamp(H_CLAMP, 1.0 - H_CLAMP));
        Self {
            log_pi: params.pi().iter().map(|&p| p.max(Q_FLOOR).ln()).collect(),
            log_odds: h.map(|x| x.ln() - (-x).ln_1p()),
            log_1mh: h.map(|x| (-x).ln_1p()),
        }
    }
}

/// Sequential single-site updates in `order`, in place.
fn e_sweep(q: &mut MeanFieldPosterior, logs: &ClampedLogs, graph: &Graph, order: &[usize]) {
    let k = q.k;
    let mut totals = q.totals();
    let mut nbr = vec![0.0; k];
    let mut score = vec![0.0; k];
    for &i in order {
        q.neighbor_sums(graph, i, &mut nbr);
        for a in 0..k {
            let mut s = logs.log_pi[a];
            for b in 0..k {
                s += nbr[b] * logs.log_odds[(a, b)] + (totals[b] - q.q[i * k + b]) * logs.log_1mh[(a, b)];
            }
            score[a] = s;
        }
        let max = score.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let norm: f64 = score.iter().map(|s| (s - max).exp()).sum();
        for a in 0..k {
            let new = (score[a] - max).exp() / norm;
            totals[a] += new - q.q[i * k + a];
            q.q[i * k + a] = new;
        }
    }
}

/// One coordinate-ascent pass over the nodes in `sweep_order`.
pub fn e_step(
    q: &MeanFieldPosterior,
    params: &ModelParams,
    graph: &Graph,
    sweep_order: &[usize],
) -> Result<MeanFieldPosterior> {
    check_shapes(q, params, graph)?;
    let mut out = q.clone();
    e_sweep(&mut out, &ClampedLogs::new(params), graph, sweep_order);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MStep {
    pub params: ModelParams,
    /// Blocks `(a, b)` whose expected pair count was zero; their `H` is 0.
    pub zero_denominator: Vec<(usize, usize)>,
}

/// Expected block counts under `q`.
pub(crate) struct ExpectedCounts {
    pub mass: Vec<f64>,
    pub edges: DMatrix<f64>,
    pub pairs: DMatrix<f64>,
}

pub(crate) fn expected_counts(q: &MeanFieldPosterior, graph: &Graph) -> ExpectedCounts {
    let k = q.k;
    let mass = q.totals();
    let mut edges = DMatrix::zeros(k, k);
    let mut self_pairs = DMatrix::<f64>::zeros(k, k);
    let mut nbr = vec![0.0; k];
    for i in 0..q.n {
        let qi = q.row(i);
        q.neighbor_sums(graph, i, &mut nbr);
        for a in 0..k {
            for b in 0..k {
                edges[(a, b)] += qi[a] * nbr[b];
                self_pairs[(a, b)] += qi[a] * qi[b];
            }
        }
    }
    let pairs = DMatrix::from_fn(k, k, |a, b| (mass[a] * mass[b] - self_pairs[(a, b)]).max(0.0));
    ExpectedCounts { mass, edges, pairs }
}

/// Closed-form maximizer of `J` in `(pi, H)` at fixed `q`.
pub fn m_step(q: &MeanFieldPosterior, graph: &Graph) -> Result<MStep> {
    if q.n != graph.n() {
        return Err(Error::InvalidInput("q and graph sizes differ".into()));
    }
    let k = q.k;
    let counts = expected_counts(q, graph);
    if let Some(a) = counts.mass.iter().position(|&m| m < EMPTY_MASS) {
        return Err(Error::EmptyBlock(a + 1));
    }
    let total: f64 = counts.mass.iter().sum();
    let pi: Vec<f64> = counts.mass.iter().map(|m| m / total).collect();
    let mut zero_denominator = Vec::new();
    let mut h = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in a..k {
            let pairs = 0.5 * (counts.pairs[(a, b)] + counts.pairs[(b, a)]);
            let edges = 0.5 * (counts.edges[(a, b)] + counts.edges[(b, a)]);
            let x = if pairs > 0.0 {
                (edges / pairs).clamp(0.0, 1.0)
            } else {
                zero_denominator.push((a, b));
                0.0
            };
            h[(a, b)] = x;
            h[(b, a)] = x;
        }
    }
    Ok(MStep {
        params: ModelParams::from_pi_h(pi, &h)?,
        zero_denominator,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    Spectral,
    Random,
}

#[derive(Debug, Clone)]
pub struct VarConfig {
    /// Relative tolerance on successive values of `J`.
    pub tol: f64,
    pub max_iters: usize,
    pub restarts: usize,
    pub init: Init,
    pub seed: u64,
}

impl Default for VarConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 500,
            restarts: 5,
            init: Init::Spectral,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VarFit {
    pub params: ModelParams,
    pub q: MeanFieldPosterior,
    pub elbo: f64,
    pub iterations: usize,
    pub converged: bool,
    pub restarts_used: usize,
    /// `J` after every E/M iteration of the winning restart.
    pub trace: Vec<f64>,
}

impl VarFit {
    pub fn labels(&self) -> Labels {
        self.q.labels()
    }
}

/// Alternates E and M steps from `q0`.
pub fn fit_from(
    graph: &Graph,
    q0: MeanFieldPosterior,
    config: &VarConfig,
    rng: &mut SbmRng,
) -> Result<VarFit> {
    let mut q = q0;
    let mut params = m_step(&q, graph)?.params;
    let mut order: Vec<usize> = (0..graph.n()).collect();
    let mut trace = Vec::new();
    let mut last = elbo(&q, &params, graph)?;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iters {
        order.shuffle(rng);
        e_sweep(&mut q, &ClampedLogs::new(&params), graph, &order);
        params = m_step(&q, graph)?.params;
        let j = elbo(&q, &params, graph)?;
        iterations += 1;
        trace.push(j);
        let delta = (j - last).abs();
        last = j;
        if delta < config.tol * j.abs() {
            converged = true;
            break;
        }
    }
    Ok(VarFit {
        params,
        q,
        elbo: last,
        iterations,
        converged,
        restarts_used: 1,
        trace,
    })
}

/// Initial `q` for restart `r`: spectral for restart 0 when requested,
/// Dirichlet(1) rows otherwise.
pub(crate) fn initial_q(graph: &Graph, k: usize, init: Init, restart: usize, rng: &mut SbmRng) -> MeanFieldPosterior {
    if k == 1 {
        return MeanFieldPosterior::constant(graph.n(), &[1.0]);
    }
    match (init, restart) {
        (Init::Spectral, 0) => MeanFieldPosterior::softened(&spectral_labels(graph, k, rng), k, 0.9),
        _ => MeanFieldPosterior::random(graph.n(), k, rng),
    }
}

/// Best of `config.restarts` variational EM runs, by final `J`.
pub fn fit_variational(graph: &Graph, k: usize, config: &VarConfig) -> Result<VarFit> {
    if graph.n() < k {
        return Err(Error::InvalidInput(format!("n = {} < K = {k}", graph.n())));
    }
    let restarts = config.restarts.max(1);
    let runs: Vec<Result<VarFit>> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_from_seed(derive_seed(config.seed, r as u64));
            let q0 = initial_q(graph, k, config.init, r, &mut rng);
            fit_from(graph, q0, config, &mut rng)
        })
        .collect();
    let mut best: Option<VarFit> = None;
    let mut diagnostics = Vec::new();
    for (r, run) in runs.into_iter().enumerate() {
        match run {
            Ok(fit) => {
                if best.as_ref().is_none_or(|b| fit.elbo > b.elbo) {
                    best = Some(fit);
                }
            }
            Err(e) => diagnostics.push(format!("restart {r}: {e}")),
        }
    }
    match best {
        Some(mut fit) => {
            fit.restarts_used = restarts;
            Ok(fit)
        }
        None => Err(Error::AllRestartsFailed {
            restarts,
            diagnostics: diagnostics.join("; "),
        }),
    }
}

/// Maximizes `J` over `q` at fixed parameters by repeated sweeps.
pub fn optimize_q(
    graph: &Graph,
    params: &ModelParams,
    q0: MeanFieldPosterior,
    tol: f64,
    max_sweeps: usize,
    rng: &mut SbmRng,
) -> Result<(MeanFieldPosterior, f64)> {
    check_shapes(&q0, params, graph)?;
    let logs = ClampedLogs::new(params);
    let mut q = q0;
    let mut last = elbo(&q, params, graph)?;
    let mut order: Vec<usize> = (0..graph.n()).collect();
    for _ in 0..max_sweeps {
        order.shuffle(rng);
        e_sweep(&mut q, &logs, graph, &order);
        let j = elbo(&q, params, graph)?;
        let delta = (j - last).abs();
        last = j;
        if delta <= tol * j.abs().max(1.0) {
            break;
        }
    }
    Ok((q, last))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sandwich {
    pub lower: f64,
    pub mid: f64,
    pub upper: f64,
    pub ok: bool,
}

/// `log f(z, A) <= max_q J(q, theta; A) <= log g(A)`.
///
/// The middle term starts from the point mass at `labels`, so the E-step
/// can only move it upward from the lower bound.
pub fn check_sandwich(labels: &Labels, params: &ModelParams, graph: &Graph) -> Result<Sandwich> {
    let lower = complete_loglik(graph, labels, params)?;
    let upper = marginal_loglik(graph, params)?;
    let mut rng = rng_from_seed(derive_seed(0x5a4d, labels.len() as u64));
    let q0 = MeanFieldPosterior::point_mass(labels, params.k());
    let (_, mid) = optimize_q(graph, params, q0, 1e-14, 1000, &mut rng)?;
    Ok(Sandwich {
        lower,
        mid,
        upper,
        ok: lower <= mid + 1e-9 && mid <= upper + 1e-9,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::align_labels;
    use crate::cgm::cgm_mle;
    use crate::exact::marginal_loglik;
    use crate::model::sample_graph;

    fn random_params(k: usize, seed: u64) -> ModelParams {
        let mut rng = rng_from_seed(seed);
        let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
        let t: f64 = w.iter().sum();
        let mut h = DMatrix::zeros(k, k);
        for a in 0..k {
            for b in a..k {
                let x = rng.random_range(0.05..0.95);
                h[(a, b)] = x;
                h[(b, a)] = x;
            }
        }
        ModelParams::from_pi_h(w.iter().map(|x| x / t).collect(), &h).unwrap()
    }

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

    /// Pairwise form of `J` with no adjacency-list shortcuts.
    fn naive_elbo(q: &MeanFieldPosterior, params: &ModelParams, graph: &Graph) -> f64 {
        let (pi, h) = (params.pi(), params.h());
        let mut total = 0.0;
        for i in 0..q.n() {
            for a in 0..q.k() {
                let x = q.row(i)[a];
                if x > 0.0 {
                    total += x * (pi[a].ln() - x.ln());
                }
            }
            for j in i + 1..q.n() {
                for a in 0..q.k() {
                    for b in 0..q.k() {
                        let p = if graph.has_edge(i, j) { h[(a, b)] } else { 1.0 - h[(a, b)] };
                        total += q.row(i)[a] * q.row(j)[b] * p.ln();
                    }
                }
            }
        }
        total
    }

    #[test]
    fn elbo_matches_pairwise_sum() {
        for s in 0..5 {
            let params = random_params(3, derive_seed(1, s));
            let (_, g) = sample_graph(&params, 15, derive_seed(2, s)).unwrap();
            let mut rng = rng_from_seed(s);
            let q = MeanFieldPosterior::random(15, 3, &mut rng);
            let fast = elbo(&q, &params, &g).unwrap();
            let slow = naive_elbo(&q, &params, &g);
            assert!((fast - slow).abs() < 1e-10 * slow.abs(), "{fast} vs {slow}");
        }
    }

    #[test]
    fn point_mass_elbo_is_complete_loglik() {
        let params = random_params(2, 3);
        let (z, g) = sample_graph(&params, 20, 4).unwrap();
        let q = MeanFieldPosterior::point_mass(&z, 2);
        let j = elbo(&q, &params, &g).unwrap();
        assert!((j - complete_loglik(&g, &z, &params).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn uninformative_model_elbo_equals_marginal() {
        let params = ModelParams::from_pi_h(vec![0.5, 0.5], &DMatrix::from_element(2, 2, 0.2)).unwrap();
        let (_, g) = sample_graph(&params, 8, 5).unwrap();
        let q = MeanFieldPosterior::constant(8, &[0.5, 0.5]);
        let j = elbo(&q, &params, &g).unwrap();
        assert!((j - marginal_loglik(&g, &params).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn boundary_h_is_clamped_for_logs() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let params = ModelParams::from_pi_h(vec![0.5, 0.5], &h).unwrap();
        let (g, z) = cliques(&[3, 3]);
        let q = MeanFieldPosterior::point_mass(&z, 2);
        let j = elbo(&q, &params, &g).unwrap();
        assert!((j - complete_loglik(&g, &z, &params).unwrap()).abs() < 1e-10);
        let q = MeanFieldPosterior::constant(6, &[0.5, 0.5]);
        assert!(elbo(&q, &params, &g).unwrap() < -50.0);
    }

    #[test]
    fn interior_params_give_finite_objective() {
        let params = ModelParams::from_pi_h(vec![0.5, 0.5], &DMatrix::from_element(2, 2, 0.3)).unwrap();
        let (g, _) = cliques(&[2, 2]);
        let q = MeanFieldPosterior::constant(4, &[0.5, 0.5]);
        assert!(elbo(&q, &params, &g).unwrap().is_finite());
    }

    #[test]
    fn elbo_below_marginal() {
        for s in 0..20 {
            let params = random_params(2, derive_seed(6, s));
            let (_, g) = sample_graph(&params, 8, derive_seed(7, s)).unwrap();
            let mut rng = rng_from_seed(s);
            let q = MeanFieldPosterior::random(8, 2, &mut rng);
            assert!(elbo(&q, &params, &g).unwrap() <= marginal_loglik(&g, &params).unwrap() + 1e-12);
        }
    }

    #[test]
    fn e_step_fixed_point_on_separable_instance() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let params = ModelParams::from_pi_h(vec![0.5, 0.5], &h).unwrap();
        let (g, z) = cliques(&[5, 5]);
        let q = MeanFieldPosterior::point_mass(&z, 2);
        let order: Vec<usize> = (0..10).collect();
        let next = e_step(&q, &params, &g, &order).unwrap();
        for (a, b) in q.as_slice().iter().zip(next.as_slice()) {
            assert!((a - b).abs() < 1e-30);
        }
    }

    #[test]
    fn single_site_updates_never_decrease_j() {
        for s in 0..10 {
            let params = random_params(3, derive_seed(8, s));
            let (_, g) = sample_graph(&params, 25, derive_seed(9, s)).unwrap();
            let mut rng = rng_from_seed(s);
            let mut q = MeanFieldPosterior::random(25, 3, &mut rng);
            let mut before = elbo(&q, &params, &g).unwrap();
            for i in 0..25 {
                q = e_step(&q, &params, &g, &[i]).unwrap();
                let after = elbo(&q, &params, &g).unwrap();
                assert!(before <= after + 1e-12 * after.abs().max(1.0), "node {i}: {before} > {after}");
                before = after;
            }
        }
    }

    #[test]
    fn e_step_without_signal_returns_prior() {
        let params = ModelParams::from_pi_h(vec![0.3, 0.7], &DMatrix::from_element(2, 2, 0.1)).unwrap();
        let (_, g) = sample_graph(&params, 30, 10).unwrap();
        let mut rng = rng_from_seed(11);
        let q = MeanFieldPosterior::random(30, 2, &mut rng);
        let order: Vec<usize> = (0..30).collect();
        let next = e_step(&q, &params, &g, &order).unwrap();
        for i in 0..30 {
            assert!((next.row(i)[0] - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn m_step_examples() {
        let params = random_params(2, 12);
        let (z, g) = sample_graph(&params, 40, 13).unwrap();
        let m = m_step(&MeanFieldPosterior::point_mass(&z, 2), &g).unwrap().params;
        let cgm = cgm_mle(&g, &z, 2).unwrap();
        assert_eq!(m.pi(), &cgm.pi_hat[..]);
        assert!((m.h() - &cgm.h_hat).amax() < 1e-14);

        let m = m_step(&MeanFieldPosterior::constant(40, &[0.5, 0.5]), &g).unwrap().params;
        assert_eq!(m.pi(), &[0.5, 0.5]);
        assert!(m.h().iter().all(|&x| (x - g.density()).abs() < 1e-14));

        assert!(matches!(
            m_step(&MeanFieldPosterior::point_mass(&Labels::new(vec![0; 40]), 2), &g),
            Err(Error::EmptyBlock(2))
        ));
    }

    #[test]
    fn m_step_never_decreases_j() {
        for s in 0..10 {
            let params = random_params(2, derive_seed(14, s));
            let (_, g) = sample_graph(&params, 30, derive_seed(15, s)).unwrap();
            let mut rng = rng_from_seed(s);
            let q = MeanFieldPosterior::random(30, 2, &mut rng);
            let before = elbo(&q, &params, &g).unwrap();
            let after = elbo(&q, &m_step(&q, &g).unwrap().params, &g).unwrap();
            assert!(after >= before - 1e-10);
        }
    }

    #[test]
    fn separable_cliques_are_recovered() {
        let (g, z) = cliques(&[10, 10]);
        let fit = fit_variational(&g, 2, &VarConfig::default()).unwrap();
        assert_eq!(align_labels(&fit.labels(), &z, 2).unwrap().hamming, 0);
        let h = fit.params.h();
        let diag = h[(0, 0)].min(h[(1, 1)]);
        assert!(diag > 1.0 - 1e-6 && h[(0, 1)] < 1e-6, "{h}");
    }

    #[test]
    fn fit_trace_is_monotone_and_elbo_consistent() {
        let params = ModelParams::planted(vec![0.4, 0.6], 4.0, 12.0, 200).unwrap();
        let (_, g) = sample_graph(&params, 200, 16).unwrap();
        let config = VarConfig { restarts: 3, seed: 4, ..Default::default() };
        let fit = fit_variational(&g, 2, &config).unwrap();
        for w in fit.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-10 * (1.0 + w[0].abs()), "{} then {}", w[0], w[1]);
        }
        let again = elbo(&fit.q, &fit.params, &g).unwrap();
        assert!((again - fit.elbo).abs() < 1e-8);
        assert_eq!(fit.restarts_used, 3);
    }

    #[test]
    fn fit_is_deterministic() {
        let params = ModelParams::planted(vec![0.5, 0.5], 5.0, 10.0, 150).unwrap();
        let (_, g) = sample_graph(&params, 150, 17).unwrap();
        let config = VarConfig { restarts: 4, seed: 9, ..Default::default() };
        let a = fit_variational(&g, 2, &config).unwrap();
        let b = fit_variational(&g, 2, &config).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.q, b.q);
    }

    #[test]
    fn sandwich_on_small_instances() {
        for s in 0..20 {
            let params = random_params(2, derive_seed(18, s));
            let (z, g) = sample_graph(&params, 9, derive_seed(19, s)).unwrap();
            let sw = check_sandwich(&z, &params, &g).unwrap();
            assert!(sw.ok, "{sw:?}");
        }
    }

    #[test]
    fn sandwich_degenerate_cases() {
        let single = random_params(1, 20);
        let (z, g) = sample_graph(&single, 7, 21).unwrap();
        let sw = check_sandwich(&z, &single, &g).unwrap();
        assert!((sw.lower - sw.mid).abs() < 1e-12 && (sw.mid - sw.upper).abs() < 1e-12);

        let flat = ModelParams::from_pi_h(vec![0.5, 0.5], &DMatrix::from_element(2, 2, 0.4)).unwrap();
        let (z, g) = sample_graph(&flat, 8, 22).unwrap();
        let sw = check_sandwich(&z, &flat, &g).unwrap();
        assert!((sw.mid - sw.upper).abs() < 1e-10, "{sw:?}");
    }
}
