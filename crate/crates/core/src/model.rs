//! Parameter and graph types, sampling and parameterization conversions.
//!
//! Class labels are 0-based everywhere inside the crate. The 1-based
//! convention only appears in the file formats handled by [`crate::io`].

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Seeded generator used by every sampling routine.
pub type SbmRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SbmRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for replicate `index` of an experiment driven by `master`.
///
/// Replicates never share a stream, whatever order they run in.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_mul(0xD1B5_4A32_D192_ED03)))
}

pub(crate) fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Generative parameters `(K, rho, pi, S)` with `H = rho * S`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    k: usize,
    rho: f64,
    pi: Vec<f64>,
    s: DMatrix<f64>,
    h: DMatrix<f64>,
}

impl ModelParams {
    pub const PI_SUM_TOL: f64 = 1e-12;
    pub const NORMALIZATION_TOL: f64 = 1e-10;

    pub fn new(rho: f64, pi: Vec<f64>, s: DMatrix<f64>) -> Result<Self> {
        let k = pi.len();
        if k == 0 {
            return Err(Error::InvalidParams("K must be at least 1".into()));
        }
        if s.nrows() != k || s.ncols() != k {
            return Err(Error::InvalidParams(format!(
                "S is {}x{}, expected {k}x{k}",
                s.nrows(),
                s.ncols()
            )));
        }
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(Error::InvalidParams(format!("rho = {rho} outside (0, 1]")));
        }
        if pi.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::InvalidParams(format!("pi has non-positive entries: {pi:?}")));
        }
        let total: f64 = pi.iter().sum();
        if (total - 1.0).abs() > Self::PI_SUM_TOL {
            return Err(Error::InvalidParams(format!("pi sums to {total}")));
        }
        for a in 0..k {
            for b in 0..k {
                if s[(a, b)] != s[(b, a)] {
                    return Err(Error::InvalidParams("S is not symmetric".into()));
                }
                if !(s[(a, b)] >= 0.0) || !s[(a, b)].is_finite() {
                    return Err(Error::InvalidParams("S has negative entries".into()));
                }
            }
        }
        let norm = normalization(&pi, &s);
        if (norm - 1.0).abs() > Self::NORMALIZATION_TOL {
            return Err(Error::InvalidParams(format!(
                "sum pi(a) pi(b) S(a,b) = {norm}, expected 1"
            )));
        }
        let mut h = &s * rho;
        if h.iter().any(|&x| x > 1.0 + 1e-12) {
            return Err(Error::InvalidParams("H = rho * S has entries above 1".into()));
        }
        h.apply(|x| *x = x.min(1.0));
        Ok(Self { k, rho, pi, s, h })
    }

    /// Builds parameters from `(pi, H)`, splitting `H` into `rho * S`.
    pub fn from_pi_h(pi: Vec<f64>, h: &DMatrix<f64>) -> Result<Self> {
        let (rho, s) = split_rho(&pi, h)?;
        let mut params = Self::new(rho, pi, s)?;
        // keep the caller's H bit-exact rather than rho * (H / rho)
        params.h = h.clone();
        Ok(params)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    /// Expected degree `lambda = n * rho`.
    pub fn lambda(&self, n: usize) -> f64 {
        n as f64 * self.rho
    }

    /// Whether every `pi(a)` and `H(a,b)` lies strictly inside `(0, 1)`.
    pub fn is_interior(&self) -> bool {
        self.pi.iter().all(|&p| p > 0.0 && p < 1.0 || self.k == 1)
            && self.h.iter().all(|&x| x > 0.0 && x < 1.0)
    }

    /// The relabeled model `sigma(theta)`: class `a` becomes class `sigma[a]`.
    pub fn permuted(&self, sigma: &[usize]) -> Self {
        let k = self.k;
        let mut pi = vec![0.0; k];
        let mut s = DMatrix::zeros(k, k);
        let mut h = DMatrix::zeros(k, k);
        for a in 0..k {
            pi[sigma[a]] = self.pi[a];
            for b in 0..k {
                s[(sigma[a], sigma[b])] = self.s[(a, b)];
                h[(sigma[a], sigma[b])] = self.h[(a, b)];
            }
        }
        Self {
            k,
            rho: self.rho,
            pi,
            s,
            h,
        }
    }

    /// Assortative two-level model: `H(a,a) = ratio * H(a,b)` for `a != b`,
    /// scaled so that the expected degree at size `n` is `lambda`.
    pub fn planted(pi: Vec<f64>, ratio: f64, lambda: f64, n: usize) -> Result<Self> {
        let k = pi.len();
        let mut s = DMatrix::from_element(k, k, 1.0);
        for a in 0..k {
            s[(a, a)] = ratio;
        }
        let norm = normalization(&pi, &s);
        s /= norm;
        Self::new(lambda / n as f64, pi, s)
    }

    pub fn to_logits(&self) -> Result<LogitParams> {
        to_logits(&self.pi, &self.h)
    }
}

fn normalization(pi: &[f64], s: &DMatrix<f64>) -> f64 {
    let k = pi.len();
    let mut total = 0.0;
    for a in 0..k {
        for b in 0..k {
            total += pi[a] * pi[b] * s[(a, b)];
        }
    }
    total
}

/// Splits `H` into `(rho, S)` with `rho = sum pi(a) pi(b) H(a,b)`.
pub fn split_rho(pi: &[f64], h: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    let k = pi.len();
    if h.nrows() != k || h.ncols() != k {
        return Err(Error::InvalidParams("H shape does not match pi".into()));
    }
    if h.iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::InvalidParams("H has negative entries".into()));
    }
    let rho = normalization(pi, h);
    if !(rho > 0.0) {
        return Err(Error::InvalidParams("H is identically zero".into()));
    }
    Ok((rho, h / rho))
}

/// Logit coordinates `(varpi, nu)` of `(pi, H)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitParams {
    pub varpi: Vec<f64>,
    pub nu: DMatrix<f64>,
}

impl LogitParams {
    pub fn k(&self) -> usize {
        self.nu.nrows()
    }

    /// Number of free coordinates: `(K - 1) + K (K + 1) / 2`.
    pub fn dim(&self) -> usize {
        free_dim(self.k())
    }

    /// Free coordinates: `varpi` followed by `nu(a,b)` for `a <= b`, row-major.
    pub fn to_vector(&self) -> Vec<f64> {
        let k = self.k();
        let mut v = self.varpi.clone();
        for a in 0..k {
            for b in a..k {
                v.push(self.nu[(a, b)]);
            }
        }
        v
    }

    pub fn from_vector(k: usize, v: &[f64]) -> Self {
        assert_eq!(v.len(), free_dim(k), "free vector length");
        let varpi = v[..k - 1].to_vec();
        let mut nu = DMatrix::zeros(k, k);
        let mut idx = k - 1;
        for a in 0..k {
            for b in a..k {
                nu[(a, b)] = v[idx];
                nu[(b, a)] = v[idx];
                idx += 1;
            }
        }
        Self { varpi, nu }
    }

    /// Class probabilities implied by `varpi`.
    pub fn pi(&self) -> Vec<f64> {
        let k = self.k();
        let max = self.varpi.iter().copied().fold(0.0_f64, f64::max);
        let mut w: Vec<f64> = self.varpi.iter().map(|&x| (x - max).exp()).collect();
        w.push((-max).exp());
        let total: f64 = w.iter().sum();
        debug_assert_eq!(w.len(), k);
        w.iter().map(|x| x / total).collect()
    }

    pub fn h(&self) -> DMatrix<f64> {
        self.nu.map(sigmoid)
    }
}

pub fn free_dim(k: usize) -> usize {
    k - 1 + k * (k + 1) / 2
}

/// Index of the free `nu` coordinate `(a, b)`, `a <= b`, among the `nu` block.
pub fn nu_index(k: usize, a: usize, b: usize) -> usize {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    a * k - a * a.saturating_sub(1) / 2 + b - a
}

pub fn to_logits(pi: &[f64], h: &DMatrix<f64>) -> Result<LogitParams> {
    let k = pi.len();
    if h.nrows() != k || h.ncols() != k {
        return Err(Error::InvalidParams("H shape does not match pi".into()));
    }
    if k > 1 && pi.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::Domain(format!("pi on the boundary: {pi:?}")));
    }
    if h.iter().any(|&x| !(x > 0.0 && x < 1.0)) {
        return Err(Error::Domain("H has entries at 0 or 1".into()));
    }
    let last = 1.0 - pi[..k - 1].iter().sum::<f64>();
    let varpi = pi[..k - 1].iter().map(|&p| (p / last).ln()).collect();
    Ok(LogitParams {
        varpi,
        nu: h.map(logit),
    })
}

pub fn from_logits(lp: &LogitParams) -> (Vec<f64>, DMatrix<f64>) {
    (lp.pi(), lp.h())
}

/// Simple undirected graph stored as sorted adjacency lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    adj: Vec<Vec<u32>>,
    edges: usize,
}

impl Graph {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            adj: vec![Vec::new(); n],
            edges: 0,
        }
    }

    /// Builds a graph from unordered pairs; rejects self-loops, duplicates
    /// and out-of-range endpoints.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = vec![Vec::new(); n];
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidInput(format!("edge ({i}, {j}) out of range for n = {n}")));
            }
            if i == j {
                return Err(Error::InvalidInput(format!("self-loop at node {i}")));
            }
            adj[i].push(j as u32);
            adj[j].push(i as u32);
        }
        for (i, list) in adj.iter_mut().enumerate() {
            list.sort_unstable();
            if list.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidInput(format!("duplicate edge at node {i}")));
            }
        }
        Ok(Self {
            n,
            adj,
            edges: edges.len(),
        })
    }

    pub fn complete(n: usize) -> Self {
        let edges: Vec<_> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        Self::from_edges(n, &edges).expect("complete graph is simple")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.adj[i]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i].binary_search(&(j as u32)).is_ok()
    }

    pub fn adjacency(&self, i: usize, j: usize) -> u8 {
        u8::from(self.has_edge(i, j))
    }

    /// Number of unordered edges.
    pub fn edge_count(&self) -> usize {
        self.edges
    }

    /// `L = sum_{i != j} A_ij`, twice the number of edges.
    pub fn ordered_edge_count(&self) -> u64 {
        2 * self.edges as u64
    }

    pub fn density(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        self.edges as f64 / (self.n as f64 * (self.n as f64 - 1.0) / 2.0)
    }

    pub fn average_degree(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        2.0 * self.edges as f64 / self.n as f64
    }

    /// Edges `(i, j)` with `i < j` in row-major order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adj.iter().enumerate().flat_map(|(i, list)| {
            list.iter()
                .map(|&j| j as usize)
                .filter(move |&j| j > i)
                .map(move |j| (i, j))
        })
    }
}

/// Hard class assignment, 0-based internally.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Labels(Vec<usize>);

impl Labels {
    pub fn new(z: Vec<usize>) -> Self {
        Self(z)
    }

    pub fn from_one_based(z: &[usize]) -> Result<Self> {
        z.iter()
            .map(|&c| {
                c.checked_sub(1)
                    .ok_or_else(|| Error::InvalidInput("labels are 1-based; found 0".into()))
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    pub fn to_one_based(&self) -> Vec<usize> {
        self.0.iter().map(|c| c + 1).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn get(&self, i: usize) -> usize {
        self.0[i]
    }

    pub fn check(&self, k: usize) -> Result<()> {
        match self.0.iter().find(|&&c| c >= k) {
            Some(c) => Err(Error::InvalidInput(format!(
                "label {} out of range 1..={k}",
                c + 1
            ))),
            None => Ok(()),
        }
    }

    /// Applies `sigma` to every label.
    pub fn relabel(&self, sigma: &[usize]) -> Self {
        Self(self.0.iter().map(|&c| sigma[c]).collect())
    }

    pub fn counts(&self, k: usize) -> Vec<u64> {
        let mut counts = vec![0; k];
        for &c in &self.0 {
            counts[c] += 1;
        }
        counts
    }
}

/// Block counts `(n_a, n_ab, O_ab)` under the ordered-pair convention.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SufficientStats {
    k: usize,
    n_a: Vec<u64>,
    o: Vec<u64>,
}

impl SufficientStats {
    pub(crate) fn from_parts(k: usize, n_a: Vec<u64>, o: Vec<u64>) -> Self {
        debug_assert_eq!(o.len(), k * k);
        Self { k, n_a, o }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> u64 {
        self.n_a.iter().sum()
    }

    pub fn n_a(&self) -> &[u64] {
        &self.n_a
    }

    /// Ordered pairs `(i, j)`, `i != j`, with `z_i = a` and `z_j = b`.
    pub fn n_ab(&self, a: usize, b: usize) -> u64 {
        if a == b {
            self.n_a[a] * self.n_a[a].saturating_sub(1)
        } else {
            self.n_a[a] * self.n_a[b]
        }
    }

    pub fn o(&self, a: usize, b: usize) -> u64 {
        self.o[a * self.k + b]
    }

    /// `L = sum_{a,b} O_ab`.
    pub fn total_edges(&self) -> u64 {
        self.o.iter().sum()
    }

    pub fn has_empty_block(&self) -> bool {
        self.n_a.contains(&0)
    }

    pub fn permuted(&self, sigma: &[usize]) -> Self {
        let k = self.k;
        let mut n_a = vec![0; k];
        let mut o = vec![0; k * k];
        for a in 0..k {
            n_a[sigma[a]] = self.n_a[a];
            for b in 0..k {
                o[sigma[a] * k + sigma[b]] = self.o[a * k + b];
            }
        }
        Self { k, n_a, o }
    }
}

pub fn sufficient_stats(graph: &Graph, labels: &Labels, k: usize) -> Result<SufficientStats> {
    if labels.len() != graph.n() {
        return Err(Error::InvalidInput(format!(
            "{} labels for {} nodes",
            labels.len(),
            graph.n()
        )));
    }
    labels.check(k)?;
    let z = labels.as_slice();
    let mut o = vec![0u64; k * k];
    for (i, j) in graph.edges() {
        o[z[i] * k + z[j]] += 1;
        o[z[j] * k + z[i]] += 1;
    }
    Ok(SufficientStats {
        k,
        n_a: labels.counts(k),
        o,
    })
}

/// Draws labels then edges (row-major over `i < j`) from the model.
pub fn sample_graph(params: &ModelParams, n: usize, seed: u64) -> Result<(Labels, Graph)> {
    let mut rng = rng_from_seed(seed);
    sample_graph_with(params, n, &mut rng)
}

pub fn sample_labels<R: Rng>(pi: &[f64], n: usize, rng: &mut R) -> Labels {
    let k = pi.len();
    let z = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (a, &p) in pi.iter().enumerate() {
                acc += p;
                if u < acc {
                    return a;
                }
            }
            k - 1
        })
        .collect();
    Labels(z)
}

pub fn sample_graph_with<R: Rng>(
    params: &ModelParams,
    n: usize,
    rng: &mut R,
) -> Result<(Labels, Graph)> {
    let h = params.h();
    if h.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(Error::InvalidParams("H entries outside [0, 1]".into()));
    }
    let labels = sample_labels(params.pi(), n, rng);
    let graph = sample_edges(h, &labels, rng);
    Ok((labels, graph))
}

/// Bernoulli edges given fixed labels.
pub fn sample_edges<R: Rng>(h: &DMatrix<f64>, labels: &Labels, rng: &mut R) -> Graph {
    let n = labels.len();
    let z = labels.as_slice();
    let mut adj = vec![Vec::new(); n];
    let mut count = 0;
    for i in 0..n {
        for j in i + 1..n {
            let u: f64 = rng.random();
            if u < h[(z[i], z[j])] {
                adj[i].push(j as u32);
                adj[j].push(i as u32);
                count += 1;
            }
        }
    }
    // row-major insertion keeps every list sorted
    Graph {
        n,
        adj,
        edges: count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_block() -> ModelParams {
        ModelParams::new(
            0.05,
            vec![0.5, 0.5],
            DMatrix::from_row_slice(2, 2, &[1.6, 0.4, 0.4, 1.6]),
        )
        .unwrap()
    }

    #[test]
    fn nu_index_is_row_major_upper() {
        let k = 3;
        let mut expected = 0;
        for a in 0..k {
            for b in a..k {
                assert_eq!(nu_index(k, a, b), expected);
                assert_eq!(nu_index(k, b, a), expected);
                expected += 1;
            }
        }
    }

    #[test]
    fn rejects_bad_params() {
        let s = DMatrix::from_row_slice(2, 2, &[1.6, 0.4, 0.4, 1.6]);
        assert!(ModelParams::new(0.05, vec![0.6, 0.5], s.clone()).is_err());
        assert!(ModelParams::new(0.0, vec![0.5, 0.5], s.clone()).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.6, 0.5, 0.3, 1.6]);
        assert!(ModelParams::new(0.05, vec![0.5, 0.5], asym).is_err());
        let unnormalized = DMatrix::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 1.6]);
        assert!(ModelParams::new(0.05, vec![0.5, 0.5], unnormalized).is_err());
        assert!(ModelParams::new(0.7, vec![0.5, 0.5], s).is_err());
    }

    #[test]
    fn complete_graph_from_saturated_model() {
        let params = ModelParams::new(1.0, vec![1.0], DMatrix::from_element(1, 1, 1.0)).unwrap();
        let (z, g) = sample_graph(&params, 4, 9).unwrap();
        assert_eq!(z.as_slice(), &[0, 0, 0, 0]);
        assert_eq!(g, Graph::complete(4));
        assert_eq!(g.edge_count(), 6);
    }

    #[test]
    fn near_zero_rho_gives_empty_graph() {
        let params = ModelParams::new(1e-12, vec![1.0], DMatrix::from_element(1, 1, 1.0)).unwrap();
        let (_, g) = sample_graph(&params, 4, 123).unwrap();
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn empirical_density_matches_rho() {
        // Edge count given labels is a sum of independent Bernoullis; the
        // unconditional mean density is sum pi pi H = rho. Var of the
        // density over pairs is at most rho(1-rho)/m + label variance.
        let params = two_block();
        let n = 2000;
        let m = (n * (n - 1) / 2) as f64;
        let densities: Vec<f64> = (0..50)
            .map(|s| sample_graph(&params, n, derive_seed(1, s)).unwrap().1.density())
            .collect();
        let mean = densities.iter().sum::<f64>() / 50.0;
        // Label-driven variance: density = rho * sum_ab p_a p_b S_ab with
        // p the empirical class proportions; with p_1 = 1/2 + d,
        // density = rho (1 + 4 * 0.6 d^2 ...) so its variance is O(1/n^2).
        let bernoulli_var = 0.05 * 0.95 / m;
        let se = (bernoulli_var / 50.0).sqrt();
        assert!((mean - 0.05).abs() < 4.0 * se + 1e-5, "mean density {mean}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let params = two_block();
        let a = sample_graph(&params, 300, 77).unwrap();
        let b = sample_graph(&params, 300, 77).unwrap();
        assert_eq!(a, b);
        let c = sample_graph(&params, 300, 78).unwrap();
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn logits_of_uniform_are_zero() {
        let lp = to_logits(&[0.5, 0.5], &DMatrix::from_element(2, 2, 0.5)).unwrap();
        assert_eq!(lp.varpi, vec![0.0]);
        assert!(lp.nu.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn varpi_definition() {
        let e = std::f64::consts::E;
        let pi = [e / (1.0 + e), 1.0 / (1.0 + e)];
        let lp = to_logits(&pi, &DMatrix::from_element(2, 2, 0.3)).unwrap();
        assert!((lp.varpi[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn logits_reject_boundary() {
        assert!(matches!(
            to_logits(&[0.5, 0.5], &DMatrix::from_element(2, 2, 1.0)),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            to_logits(&[1.0, 0.0], &DMatrix::from_element(2, 2, 0.3)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn split_rho_examples() {
        let h = DMatrix::from_row_slice(2, 2, &[0.08, 0.02, 0.02, 0.08]);
        let (rho, s) = split_rho(&[0.5, 0.5], &h).unwrap();
        assert!((rho - 0.05).abs() < 1e-15);
        let expected = DMatrix::from_row_slice(2, 2, &[1.6, 0.4, 0.4, 1.6]);
        assert!((s - expected).amax() < 1e-14);

        let (rho, s) = split_rho(&[1.0], &DMatrix::from_element(1, 1, 0.3)).unwrap();
        assert_eq!(rho, 0.3);
        assert_eq!(s[(0, 0)], 1.0);

        assert!(split_rho(&[0.5, 0.5], &DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn stats_hand_example() {
        let g = Graph::from_edges(4, &[(0, 1), (0, 2)]).unwrap();
        let z = Labels::from_one_based(&[1, 1, 2, 2]).unwrap();
        let st = sufficient_stats(&g, &z, 2).unwrap();
        assert_eq!(st.n_a(), &[2, 2]);
        assert_eq!((st.n_ab(0, 0), st.n_ab(0, 1), st.n_ab(1, 0), st.n_ab(1, 1)), (2, 4, 4, 2));
        assert_eq!((st.o(0, 0), st.o(0, 1), st.o(1, 0), st.o(1, 1)), (2, 1, 1, 0));
        assert_eq!(st.total_edges(), g.ordered_edge_count());
    }

    #[test]
    fn stats_empty_and_complete() {
        let z = Labels::new(vec![0, 1, 2, 1, 0, 0]);
        let st = sufficient_stats(&Graph::empty(6), &z, 3).unwrap();
        assert_eq!(st.total_edges(), 0);
        let st = sufficient_stats(&Graph::complete(6), &z, 3).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                assert_eq!(st.o(a, b), st.n_ab(a, b));
            }
        }
    }

    #[test]
    fn stats_reject_out_of_range_labels() {
        let z = Labels::new(vec![0, 3]);
        assert!(sufficient_stats(&Graph::empty(2), &z, 2).is_err());
        assert!(sufficient_stats(&Graph::empty(3), &Labels::new(vec![0, 1]), 2).is_err());
    }

    #[test]
    fn graph_rejects_malformed_edges() {
        assert!(Graph::from_edges(3, &[(0, 0)]).is_err());
        assert!(Graph::from_edges(3, &[(0, 3)]).is_err());
        assert!(Graph::from_edges(3, &[(0, 1), (1, 0)]).is_err());
    }

    fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.05f64..1.0, k).prop_map(|w| {
            let t: f64 = w.iter().sum();
            w.into_iter().map(|x| x / t).collect()
        })
    }

    fn sym_matrix(k: usize, lo: f64, hi: f64) -> impl Strategy<Value = DMatrix<f64>> {
        prop::collection::vec(lo..hi, k * k).prop_map(move |v| {
            let mut m = DMatrix::from_row_slice(k, k, &v);
            for a in 0..k {
                for b in 0..a {
                    m[(a, b)] = m[(b, a)];
                }
            }
            m
        })
    }

    proptest! {
        #[test]
        fn logit_round_trip(pi in simplex(3), h in sym_matrix(3, 0.001, 0.999)) {
            let lp = to_logits(&pi, &h).unwrap();
            let (pi2, h2) = from_logits(&lp);
            for a in 0..3 {
                prop_assert!((pi[a] - pi2[a]).abs() < 1e-10);
            }
            prop_assert!((h - h2).amax() < 1e-10);
            let v = lp.to_vector();
            prop_assert_eq!(LogitParams::from_vector(3, &v), lp);
        }

        #[test]
        fn split_then_recombine(pi in simplex(3), h in sym_matrix(3, 0.0, 1.0)) {
            let (rho, s) = split_rho(&pi, &h).unwrap();
            prop_assert!((s * rho - &h).amax() < 1e-12);
        }

        #[test]
        fn stats_permute_consistently(
            z in prop::collection::vec(0usize..3, 12),
            edges in prop::collection::btree_set((0usize..12, 0usize..12), 0..30),
            perm_idx in 0usize..6,
        ) {
            let edges: Vec<_> = edges.into_iter().filter(|(i, j)| i < j).collect();
            let g = Graph::from_edges(12, &edges).unwrap();
            let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let sigma = perms[perm_idx];
            let z = Labels::new(z);
            let st = sufficient_stats(&g, &z, 3).unwrap();
            let st_perm = sufficient_stats(&g, &z.relabel(&sigma), 3).unwrap();
            prop_assert_eq!(st.permuted(&sigma), st_perm);
            prop_assert_eq!(st.total_edges(), g.ordered_edge_count());
            for a in 0..3 {
                for b in 0..3 {
                    prop_assert_eq!(st.o(a, b), st.o(b, a));
                    prop_assert!(st.o(a, b) <= st.n_ab(a, b));
                }
            }
        }
    }
}
