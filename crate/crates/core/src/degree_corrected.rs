//! Degree-corrected submodel with `U x V` classes.
//!
//! Class `(u, v)` is flattened row-major to `u * V + v`, with
//! `pi((u,v)) = alpha_u beta_v` and `H((u,v),(u',v')) = gamma_v gamma_v' G(u,u')`.
//! The `(gamma, G)` scale redundancy is fixed by `max_v gamma_v = 1`.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cgm::{xlog1my, xlogy};
use crate::error::{Error, Result};
use crate::model::{derive_seed, nu_index, rng_from_seed, Graph, ModelParams};
use crate::variational::{
    e_step, elbo, expected_counts, initial_q, ExpectedCounts, Init, MeanFieldPosterior,
};

/// `U(U+1)/2 + (U-1) + (2V-1)`.
pub fn dc_param_count(u: usize, v: usize) -> usize {
    u * (u + 1) / 2 + (u - 1) + (2 * v - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcParams {
    #[serde(rename = "U")]
    pub u: usize,
    #[serde(rename = "V")]
    pub v: usize,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    #[serde(rename = "G")]
    pub g: Vec<Vec<f64>>,
}

fn on_simplex(x: &[f64]) -> bool {
    x.iter().all(|&p| p >= 0.0 && p.is_finite()) && (x.iter().sum::<f64>() - 1.0).abs() <= 1e-12
}

impl DcParams {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>, gamma: Vec<f64>, g: DMatrix<f64>) -> Result<Self> {
        let dc = Self {
            u: alpha.len(),
            v: beta.len(),
            alpha,
            beta,
            gamma,
            g: g.row_iter().map(|r| r.iter().copied().collect()).collect(),
        };
        dc.validate()?;
        Ok(dc)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.to_string()));
        if self.u == 0 || self.v == 0 {
            return bad("U and V must be at least 1");
        }
        if self.alpha.len() != self.u || !on_simplex(&self.alpha) {
            return bad("alpha must be a length-U probability vector");
        }
        if self.beta.len() != self.v || !on_simplex(&self.beta) {
            return bad("beta must be a length-V probability vector");
        }
        if self.gamma.len() != self.v || self.gamma.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return bad("gamma must be a length-V vector in [0, 1]");
        }
        if self.g.len() != self.u || self.g.iter().any(|r| r.len() != self.u) {
            return bad("G must be U x U");
        }
        for a in 0..self.u {
            for b in 0..self.u {
                if self.g[a][b] != self.g[b][a] {
                    return bad("G must be symmetric");
                }
                if !(0.0..=1.0).contains(&self.g[a][b]) {
                    return bad("G entries must lie in [0, 1]");
                }
            }
        }
        Ok(())
    }

    pub fn g_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.u, self.u, |a, b| self.g[a][b])
    }

    pub fn k(&self) -> usize {
        self.u * self.v
    }
}

fn mapped_h(u: usize, v: usize, gamma: &[f64], g: &DMatrix<f64>) -> DMatrix<f64> {
    let k = u * v;
    DMatrix::from_fn(k, k, |i, j| gamma[i % v] * gamma[j % v] * g[(i / v, j / v)])
}

/// The equivalent `K = UV` blockmodel.
pub fn dc_to_blockmodel(dc: &DcParams) -> Result<ModelParams> {
    dc.validate()?;
    let (u, v) = (dc.u, dc.v);
    let pi: Vec<f64> = (0..u * v).map(|i| dc.alpha[i / v] * dc.beta[i % v]).collect();
    ModelParams::from_pi_h(pi, &mapped_h(u, v, &dc.gamma, &dc.g_matrix()))
}

#[derive(Debug, Clone)]
pub struct DcConfig {
    pub tol: f64,
    pub max_iters: usize,
    pub restarts: usize,
    pub init: Init,
    pub seed: u64,
    /// Projected-gradient steps per M-step.
    pub pg_steps: usize,
    /// Hold `alpha` at a known value instead of estimating it.
    pub known_alpha: Option<Vec<f64>>,
    /// Estimate a free `pi((u,v))` instead of the product `alpha_u beta_v`.
    pub free_block_probs: bool,
}

impl Default for DcConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 300,
            restarts: 5,
            init: Init::Spectral,
            seed: 0,
            pg_steps: 100,
            known_alpha: None,
            free_block_probs: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DcFit {
    pub dc: DcParams,
    /// Mapped blockmodel; with `free_block_probs` its `pi` is the free estimate.
    pub params: ModelParams,
    pub q: MeanFieldPosterior,
    pub elbo: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Some line search exhausted its backtracks.
    pub stalled: bool,
    pub restarts_used: usize,
    pub trace: Vec<f64>,
}

// log-coordinate bounds: H stays inside [1e-12, 1 - 1e-9]
const LOG_FLOOR: f64 = -27.631021115928547;
const G_CEIL: f64 = -1e-9;
const MAX_BACKTRACKS: usize = 40;
const EMPTY_MASS: f64 = 1e-6;

/// `(log gamma, log G)` packed as `V` then the `u <= u'` entries of `G`.
struct Shape {
    u: usize,
    v: usize,
}

impl Shape {
    fn len(&self) -> usize {
        self.v + self.u * (self.u + 1) / 2
    }

    fn g_index(&self, a: usize, b: usize) -> usize {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        self.v + nu_index(self.u, a, b)
    }

    fn unpack(&self, x: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let gamma = x[..self.v].iter().map(|y| y.exp()).collect();
        let g = DMatrix::from_fn(self.u, self.u, |a, b| x[self.g_index(a, b)].exp());
        (gamma, g)
    }

    fn project(&self, x: &mut [f64]) {
        for (j, y) in x.iter_mut().enumerate() {
            let hi = if j < self.v { 0.0 } else { G_CEIL };
            *y = y.clamp(LOG_FLOOR, hi);
        }
    }
}

/// Edge part of `J` as a function of `(gamma, G)` at fixed expected counts.
fn edge_objective(shape: &Shape, counts: &ExpectedCounts, x: &[f64]) -> f64 {
    let (gamma, g) = shape.unpack(x);
    let h = mapped_h(shape.u, shape.v, &gamma, &g);
    let mut total = 0.0;
    for (i, &hij) in h.iter().enumerate() {
        let e = counts.edges[i];
        let non = (counts.pairs[i] - e).max(0.0);
        total += xlogy(e, hij) + xlog1my(non, hij);
    }
    0.5 * total
}

fn edge_gradient(shape: &Shape, counts: &ExpectedCounts, x: &[f64]) -> Vec<f64> {
    let (u, v) = (shape.u, shape.v);
    let (gamma, g) = shape.unpack(x);
    let h = mapped_h(u, v, &gamma, &g);
    let k = u * v;
    let mut grad = vec![0.0; shape.len()];
    for i in 0..k {
        for j in 0..k {
            let hij = h[(i, j)];
            let e = counts.edges[(i, j)];
            let non = (counts.pairs[(i, j)] - e).max(0.0);
            // d/d(log H) of the ordered-pair term, halved
            let d = 0.5 * (e - non * hij / (1.0 - hij));
            grad[i % v] += d;
            grad[j % v] += d;
            grad[shape.g_index(i / v, j / v)] += d;
        }
    }
    grad
}

/// Projected gradient ascent with Armijo backtracking. Returns the new point
/// and whether a line search failed.
fn pg_ascent(shape: &Shape, counts: &ExpectedCounts, x0: Vec<f64>, steps: usize, step0: &mut f64) -> (Vec<f64>, bool) {
    let mut x = x0;
    let mut fx = edge_objective(shape, counts, &x);
    for _ in 0..steps {
        let grad = edge_gradient(shape, counts, &x);
        let mut t = *step0 * 2.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut y: Vec<f64> = x.iter().zip(&grad).map(|(a, g)| a + t * g).collect();
            shape.project(&mut y);
            let gain: f64 = grad.iter().zip(y.iter().zip(&x)).map(|(g, (a, b))| g * (a - b)).sum();
            if gain <= 0.0 {
                // projected step does not move: stationary
                return (x, false);
            }
            let fy = edge_objective(shape, counts, &y);
            if fy >= fx + 1e-4 * gain {
                accepted = Some((y, fy));
                break;
            }
            t *= 0.5;
        }
        let Some((y, fy)) = accepted else {
            return (x, true);
        };
        *step0 = t;
        let rel = (fy - fx) / fx.abs().max(1.0);
        x = y;
        fx = fy;
        if rel < 1e-14 {
            break;
        }
    }
    (x, false)
}

fn normalize_scale(shape: &Shape, x: &mut [f64]) {
    let top = x[..shape.v].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for y in &mut x[..shape.v] {
        *y -= top;
    }
    for y in &mut x[shape.v..] {
        *y += 2.0 * top;
    }
}

struct State {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    pi_free: Option<Vec<f64>>,
    x: Vec<f64>,
}

impl State {
    fn params(&self, shape: &Shape) -> Result<ModelParams> {
        let (u, v) = (shape.u, shape.v);
        let pi: Vec<f64> = match &self.pi_free {
            Some(p) => p.clone(),
            None => (0..u * v).map(|i| self.alpha[i / v] * self.beta[i % v]).collect(),
        };
        let (gamma, g) = shape.unpack(&self.x);
        ModelParams::from_pi_h(pi, &mapped_h(u, v, &gamma, &g))
    }
}

fn class_probabilities(shape: &Shape, counts: &ExpectedCounts, config: &DcConfig) -> Result<(Vec<f64>, Vec<f64>, Option<Vec<f64>>)> {
    let (u, v) = (shape.u, shape.v);
    if let Some(i) = counts.mass.iter().position(|&m| m < EMPTY_MASS) {
        return Err(Error::EmptyBlock(i + 1));
    }
    let total: f64 = counts.mass.iter().sum();
    let mut alpha = vec![0.0; u];
    let mut beta = vec![0.0; v];
    for (i, &m) in counts.mass.iter().enumerate() {
        alpha[i / v] += m / total;
        beta[i % v] += m / total;
    }
    if let Some(known) = &config.known_alpha {
        alpha = known.clone();
    }
    let free = config
        .free_block_probs
        .then(|| counts.mass.iter().map(|m| m / total).collect());
    Ok((alpha, beta, free))
}

fn initial_state(shape: &Shape, counts: &ExpectedCounts, config: &DcConfig) -> Result<State> {
    let (alpha, beta, pi_free) = class_probabilities(shape, counts, config)?;
    let v = shape.v;
    let mut x = vec![0.0; shape.len()];
    for a in 0..shape.u {
        for b in a..shape.u {
            let (mut e, mut m) = (0.0, 0.0);
            for i in 0..v {
                for j in 0..v {
                    e += counts.edges[(a * v + i, b * v + j)];
                    m += counts.pairs[(a * v + i, b * v + j)];
                }
            }
            let p = if m > 0.0 { (e / m).clamp(1e-6, 1.0 - 1e-6) } else { 1e-6 };
            x[shape.g_index(a, b)] = p.ln();
        }
    }
    Ok(State { alpha, beta, pi_free, x })
}

fn m_step_dc(
    shape: &Shape,
    q: &MeanFieldPosterior,
    graph: &Graph,
    state: &mut State,
    config: &DcConfig,
    step: &mut f64,
) -> Result<bool> {
    let counts = expected_counts(q, graph);
    let (alpha, beta, free) = class_probabilities(shape, &counts, config)?;
    state.alpha = alpha;
    state.beta = beta;
    state.pi_free = free;
    let (mut x, stalled) = pg_ascent(shape, &counts, state.x.clone(), config.pg_steps, step);
    normalize_scale(shape, &mut x);
    state.x = x;
    Ok(stalled)
}

fn fit_once(graph: &Graph, shape: &Shape, q0: MeanFieldPosterior, config: &DcConfig, seed: u64) -> Result<DcFit> {
    let mut rng = rng_from_seed(seed);
    let mut q = q0;
    let mut step = 1e-3;
    let mut state = initial_state(shape, &expected_counts(&q, graph), config)?;
    let mut stalled = m_step_dc(shape, &q, graph, &mut state, config, &mut step)?;
    let mut params = state.params(shape)?;
    let mut last = elbo(&q, &params, graph)?;
    let mut order: Vec<usize> = (0..graph.n()).collect();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iters {
        order.shuffle(&mut rng);
        q = e_step(&q, &params, graph, &order)?;
        stalled |= m_step_dc(shape, &q, graph, &mut state, config, &mut step)?;
        params = state.params(shape)?;
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
    let (gamma, g) = shape.unpack(&state.x);
    // identifiability: gamma descending, ties by beta descending
    let mut rank: Vec<usize> = (0..shape.v).collect();
    rank.sort_by(|&a, &b| gamma[b].total_cmp(&gamma[a]).then(state.beta[b].total_cmp(&state.beta[a])));
    let mut pos = vec![0; shape.v];
    for (r, &old) in rank.iter().enumerate() {
        pos[old] = r;
    }
    let sigma: Vec<usize> = (0..shape.u * shape.v).map(|i| (i / shape.v) * shape.v + pos[i % shape.v]).collect();
    let dc = DcParams {
        u: shape.u,
        v: shape.v,
        alpha: state.alpha.clone(),
        beta: rank.iter().map(|&o| state.beta[o]).collect(),
        gamma: rank.iter().map(|&o| gamma[o]).collect(),
        g: g.row_iter().map(|r| r.iter().copied().collect()).collect(),
    };
    Ok(DcFit {
        dc,
        params: params.permuted(&sigma),
        q: q.permuted(&sigma),
        elbo: last,
        iterations,
        converged,
        stalled,
        restarts_used: 1,
        trace,
    })
}

/// Maximizes `J` over the degree-corrected submodel, best of the restarts.
pub fn fit_submodel(graph: &Graph, u: usize, v: usize, config: &DcConfig) -> Result<DcFit> {
    if u == 0 || v == 0 {
        return Err(Error::InvalidInput("U and V must be at least 1".into()));
    }
    let k = u * v;
    if graph.n() < k {
        return Err(Error::InvalidInput(format!("n = {} < UV = {k}", graph.n())));
    }
    if let Some(a) = &config.known_alpha {
        if a.len() != u || !on_simplex(a) {
            return Err(Error::InvalidInput("known alpha must be a length-U probability vector".into()));
        }
    }
    let shape = Shape { u, v };
    let restarts = config.restarts.max(1);
    let runs: Vec<Result<DcFit>> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_from_seed(derive_seed(config.seed, r as u64));
            let q0 = initial_q(graph, k, config.init, r, &mut rng);
            fit_once(graph, &shape, q0, config, derive_seed(config.seed ^ 0xdc, r as u64))
        })
        .collect();
    let mut best: Option<DcFit> = None;
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
