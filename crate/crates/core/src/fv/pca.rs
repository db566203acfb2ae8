use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Mean-centred linear projection onto the leading principal axes.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `output_dim` rows of length `input_dim`, orthonormal.
    pub components: Vec<Vec<f64>>,
}

impl PcaModel {
    pub fn new(mean: Vec<f64>, components: Vec<Vec<f64>>) -> Result<Self> {
        if components.is_empty() || components.iter().any(|c| c.len() != mean.len()) {
            return Err(Error::Shape(format!(
                "PCA components must be nonempty rows of length {}",
                mean.len()
            )));
        }
        Ok(PcaModel { mean, components })
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.len()
    }

    /// `components . (d - mean)`.
    pub fn project(&self, d: &[f64]) -> Result<Vec<f64>> {
        if d.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "PCA expects {} dimensions, got {}",
                self.input_dim(),
                d.len()
            )));
        }
        Ok(self
            .components
            .iter()
            .map(|row| row.iter().zip(d).zip(&self.mean).map(|((c, x), m)| c * (x - m)).sum())
            .collect())
    }

    pub fn reconstruct(&self, p: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (row, &coef) in self.components.iter().zip(p) {
            for (o, c) in out.iter_mut().zip(row) {
                *o += coef * c;
            }
        }
        out
    }
}

/// Fits the top `target_dim` eigenvectors of the sample covariance.
///
/// Eigenvectors are sign-normalized so their largest-magnitude entry is
/// positive, which keeps repeated fits identical.
pub fn fit_pca(samples: &[Vec<f64>], target_dim: usize) -> Result<PcaModel> {
    let dim = samples.first().map(Vec::len).ok_or_else(|| Error::InsufficientData("no samples for PCA".into()))?;
    if samples.iter().any(|s| s.len() != dim) {
        return Err(Error::Shape("PCA samples have differing dimensions".into()));
    }
    if target_dim == 0 || target_dim > dim {
        return Err(Error::Config(format!("PCA target dimension {target_dim} invalid for input dimension {dim}")));
    }
    let n = samples.len() as f64;
    let mut mean = vec![0.0; dim];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);

    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    let mut centred = vec![0.0; dim];
    for s in samples {
        for (c, (v, m)) in centred.iter_mut().zip(s.iter().zip(&mean)) {
            *c = v - m;
        }
        for a in 0..dim {
            let ca = centred[a];
            if ca == 0.0 {
                continue;
            }
            for b in a..dim {
                cov[(a, b)] += ca * centred[b];
            }
        }
    }
    for a in 0..dim {
        for b in a..dim {
            let v = cov[(a, b)] / n;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]];
    let rank = order.iter().filter(|&&k| eig.eigenvalues[k] > top.max(0.0) * 1e-10 && eig.eigenvalues[k] > 0.0).count();
    if rank < target_dim {
        return Err(Error::RankDeficient { achieved: rank, target: target_dim });
    }

    let components = order[..target_dim]
        .iter()
        .map(|&k| {
            let mut row: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            let lead = row.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            if lead < 0.0 {
                row.iter_mut().for_each(|v| *v = -*v);
            }
            row
        })
        .collect();
    PcaModel::new(mean, components)
}
