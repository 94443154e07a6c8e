//! Label switching: exhaustive alignment over the `K!` class permutations.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{Labels, ModelParams};

pub const MAX_ALIGN_K: usize = 8;

/// All permutations of `0..k` in lexicographic order.
pub fn permutations(k: usize) -> Result<Vec<Vec<usize>>> {
    if k > MAX_ALIGN_K {
        return Err(Error::TooManyClasses(k));
    }
    let mut out = Vec::new();
    let mut perm: Vec<usize> = (0..k).collect();
    loop {
        out.push(perm.clone());
        // next lexicographic permutation
        let Some(i) = (1..k).rev().find(|&i| perm[i - 1] < perm[i]) else {
            break;
        };
        let j = (i..k).rev().find(|&j| perm[j] > perm[i - 1]).unwrap();
        perm.swap(i - 1, j);
        perm[i..].reverse();
    }
    Ok(out)
}

pub fn inverse_permutation(sigma: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; sigma.len()];
    for (a, &b) in sigma.iter().enumerate() {
        inv[b] = a;
    }
    inv
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelAlignment {
    pub permutation: Vec<usize>,
    pub aligned: Labels,
    pub hamming: usize,
}

/// Finds `sigma` minimizing the number of nodes with
/// `sigma(candidate_i) != reference_i`; ties go to the lexicographically
/// smallest `sigma`.
pub fn align_labels(candidate: &Labels, reference: &Labels, k: usize) -> Result<LabelAlignment> {
    if candidate.len() != reference.len() {
        return Err(Error::InvalidInput(format!(
            "label vectors differ in length ({} vs {})",
            candidate.len(),
            reference.len()
        )));
    }
    candidate.check(k)?;
    reference.check(k)?;
    let mut overlap = vec![0usize; k * k];
    for (&c, &r) in candidate.as_slice().iter().zip(reference.as_slice()) {
        overlap[c * k + r] += 1;
    }
    let n = candidate.len();
    let mut best: Option<(usize, Vec<usize>)> = None;
    for sigma in permutations(k)? {
        let agree: usize = (0..k).map(|a| overlap[a * k + sigma[a]]).sum();
        let hamming = n - agree;
        if best.as_ref().is_none_or(|(h, _)| hamming < *h) {
            best = Some((hamming, sigma));
        }
    }
    let (hamming, permutation) = best.expect("at least one permutation");
    Ok(LabelAlignment {
        aligned: candidate.relabel(&permutation),
        permutation,
        hamming,
    })
}

/// `||P H_c P^T - H_r||_F + ||P pi_c - pi_r||_2` for the relabeling `sigma`.
pub fn permuted_distance(
    sigma: &[usize],
    pi_c: &[f64],
    h_c: &DMatrix<f64>,
    pi_r: &[f64],
    h_r: &DMatrix<f64>,
) -> f64 {
    let k = pi_c.len();
    let mut hsq = 0.0;
    let mut psq = 0.0;
    for a in 0..k {
        psq += (pi_c[a] - pi_r[sigma[a]]).powi(2);
        for b in 0..k {
            hsq += (h_c[(a, b)] - h_r[(sigma[a], sigma[b])]).powi(2);
        }
    }
    hsq.sqrt() + psq.sqrt()
}

/// Best relabeling of raw `(pi, H)` onto a reference, returned with its distance.
pub fn align_pi_h(
    pi_c: &[f64],
    h_c: &DMatrix<f64>,
    pi_r: &[f64],
    h_r: &DMatrix<f64>,
) -> Result<(Vec<usize>, f64)> {
    let k = pi_c.len();
    if pi_r.len() != k {
        return Err(Error::InvalidInput("cannot align models with different K".into()));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for sigma in permutations(k)? {
        let d = permuted_distance(&sigma, pi_c, h_c, pi_r, h_r);
        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((d, sigma));
        }
    }
    let (d, sigma) = best.expect("at least one permutation");
    Ok((sigma, d))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamAlignment {
    pub permutation: Vec<usize>,
    pub aligned: ModelParams,
    /// Distance between the aligned candidate and the reference.
    pub distance: f64,
}

pub fn align_params(candidate: &ModelParams, reference: &ModelParams) -> Result<ParamAlignment> {
    let (sigma, distance) = align_pi_h(candidate.pi(), candidate.h(), reference.pi(), reference.h())?;
    Ok(ParamAlignment {
        aligned: candidate.permuted(&sigma),
        permutation: sigma,
        distance,
    })
}

/// Distance between two parameter sets after optimal alignment.
pub fn aligned_distance(candidate: &ModelParams, reference: &ModelParams) -> Result<f64> {
    Ok(align_params(candidate, reference)?.distance)
}
