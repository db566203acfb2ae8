//! Fisher Vector encoding of local descriptors against a diagonal GMM.
//!
//! Layout: for each component `k`, the `D` first-moment dimensions
//! `Psi_mu_k` followed by the `D` second-moment dimensions `Psi_sigma_k`.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::fv::gmm::{gmm_posterior, GmmModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Moment {
    Mean,
    Sigma,
}

/// `delta(i, Psi_{moment,k})`: FV dimension fed by descriptor dimension `i`.
pub fn fv_index(component: usize, moment: Moment, i: usize, dim: usize) -> usize {
    let base = 2 * component * dim;
    match moment {
        Moment::Mean => base + i,
        Moment::Sigma => base + dim + i,
    }
}

/// Inverse of [`fv_index`].
pub fn fv_position(d: usize, dim: usize) -> (usize, Moment, usize) {
    let component = d / (2 * dim);
    let r = d % (2 * dim);
    if r < dim {
        (component, Moment::Mean, r)
    } else {
        (component, Moment::Sigma, r - dim)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FisherVector {
    pub components: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl FisherVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, component: usize, moment: Moment, i: usize) -> f64 {
        self.values[fv_index(component, moment, i, self.dim)]
    }
}

/// `Psi_lambda(l)`: the FV mapping of a single descriptor, length `2KD`.
pub fn descriptor_mapping(g: &GmmModel, l: &[f64]) -> Result<Vec<f64>> {
    let gamma = gmm_posterior(g, l)?;
    let d = g.dim();
    let mut out = vec![0.0; 2 * g.k() * d];
    for k in 0..g.k() {
        let prior = g.priors[k];
        let mu_scale = gamma[k] / prior.sqrt();
        let sigma_scale = gamma[k] / (2.0 * prior).sqrt();
        for i in 0..d {
            let var = g.variances[k][i];
            let diff = l[i] - g.means[k][i];
            out[fv_index(k, Moment::Mean, i, d)] = mu_scale * diff / var.sqrt();
            out[fv_index(k, Moment::Sigma, i, d)] = sigma_scale * (diff * diff / var - 1.0);
        }
    }
    Ok(out)
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

/// Descriptor indices in a canonical order, so pooled sums do not depend on
/// the order descriptors arrive in.
pub fn canonical_order(descriptors: &[Vec<f64>]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..descriptors.len()).collect();
    idx.sort_by(|&a, &b| lexicographic(&descriptors[a], &descriptors[b]).then(a.cmp(&b)));
    idx
}

/// Sum-pools the per-descriptor mappings (unnormalized FV).
pub fn encode_fv(g: &GmmModel, descriptors: &[Vec<f64>]) -> Result<FisherVector> {
    let mappings = descriptors.iter().map(|l| descriptor_mapping(g, l)).collect::<Result<Vec<_>>>()?;
    pool_mappings(g, descriptors, &mappings)
}

pub(crate) fn pool_mappings(g: &GmmModel, descriptors: &[Vec<f64>], mappings: &[Vec<f64>]) -> Result<FisherVector> {
    if descriptors.is_empty() {
        return Err(Error::InsufficientData("cannot encode an empty descriptor set".into()));
    }
    let mut values = vec![0.0; 2 * g.k() * g.dim()];
    for idx in canonical_order(descriptors) {
        for (v, m) in values.iter_mut().zip(&mappings[idx]) {
            *v += m;
        }
    }
    Ok(FisherVector { components: g.k(), dim: g.dim(), values })
}

/// Signed square root per dimension, then global L2 normalization.
pub fn normalize_fv(fv: &FisherVector) -> FisherVector {
    let mut values: Vec<f64> = fv.values.iter().map(|&v| v.signum() * v.abs().sqrt()).collect();
    // signum(0.0) is 1.0 but sqrt(0) keeps the entry at zero
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        values.iter_mut().for_each(|v| *v /= norm);
    }
    FisherVector { components: fv.components, dim: fv.dim, values }
}
