//! Diagonal-covariance Gaussian mixture fitted by EM from a seeded k-means
//! initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub priors: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Diagonal variances `sigma_k^2`.
    pub variances: Vec<Vec<f64>>,
}

impl GmmModel {
    pub fn new(priors: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        let k = priors.len();
        if k == 0 || means.len() != k || variances.len() != k {
            return Err(Error::Shape(format!(
                "GMM with {k} priors, {} means and {} variance vectors",
                means.len(),
                variances.len()
            )));
        }
        let d = means[0].len();
        if d == 0 || means.iter().chain(&variances).any(|v| v.len() != d) {
            return Err(Error::Shape("GMM means and variances must share one nonzero dimension".into()));
        }
        if priors.iter().any(|&p| !(p > 0.0)) || (priors.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Validation("GMM priors must be positive and sum to 1".into()));
        }
        if variances.iter().flatten().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Validation("GMM variances must be positive and finite".into()));
        }
        Ok(GmmModel { priors, means, variances })
    }

    pub fn k(&self) -> usize {
        self.priors.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// `log(pi_k) + log N(x | mu_k, diag(sigma_k^2))` for every component.
    pub fn log_weighted_densities(&self, x: &[f64]) -> Vec<f64> {
        (0..self.k())
            .map(|k| {
                let quad: f64 = x
                    .iter()
                    .zip(&self.means[k])
                    .zip(&self.variances[k])
                    .map(|((xi, m), v)| (xi - m) * (xi - m) / v + v.ln() + LN_2PI)
                    .sum();
                self.priors[k].ln() - 0.5 * quad
            })
            .collect()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|a| (a - m).exp()).sum::<f64>().ln()
}

/// Soft assignment `gamma_k(x)`, computed in the log domain.
pub fn gmm_posterior(g: &GmmModel, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != g.dim() {
        return Err(Error::Shape(format!("GMM expects {} dimensions, got {}", g.dim(), x.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite descriptor".into()));
    }
    let logs = g.log_weighted_densities(x);
    let norm = log_sum_exp(&logs);
    Ok(logs.iter().map(|l| (l - norm).exp()).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmOptions {
    pub max_iterations: usize,
    /// Stop once the relative log-likelihood improvement drops below this.
    pub tolerance: f64,
    /// Variance floor as a fraction of the mean per-dimension data variance.
    pub variance_floor_ratio: f64,
    pub kmeans_iterations: usize,
}

impl Default for GmmOptions {
    fn default() -> Self {
        GmmOptions { max_iterations: 200, tolerance: 1e-6, variance_floor_ratio: 1e-4, kmeans_iterations: 50 }
    }
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Total log-likelihood before each M-step; the last entry belongs to `model`.
    pub log_likelihoods: Vec<f64>,
}

pub fn fit_gmm(samples: &[Vec<f64>], k: usize, seed: u64) -> Result<GmmModel> {
    Ok(fit_gmm_with(samples, k, seed, &GmmOptions::default())?.model)
}

pub fn fit_gmm_with(samples: &[Vec<f64>], k: usize, seed: u64, opts: &GmmOptions) -> Result<GmmFit> {
    if k == 0 {
        return Err(Error::Config("GMM needs at least one component".into()));
    }
    if samples.len() < 10 * k {
        return Err(Error::InsufficientData(format!(
            "{} samples for {k} components (need at least {})",
            samples.len(),
            10 * k
        )));
    }
    let d = samples[0].len();
    if d == 0 || samples.iter().any(|s| s.len() != d) {
        return Err(Error::Shape("GMM samples must share one nonzero dimension".into()));
    }
    let n = samples.len();
    let data_mean: Vec<f64> = (0..d).map(|i| samples.iter().map(|s| s[i]).sum::<f64>() / n as f64).collect();
    let mean_var = (0..d)
        .map(|i| samples.iter().map(|s| (s[i] - data_mean[i]).powi(2)).sum::<f64>() / n as f64)
        .sum::<f64>()
        / d as f64;
    let floor = (opts.variance_floor_ratio * mean_var).max(f64::MIN_POSITIVE);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let assign = kmeans(samples, k, &mut rng, opts.kmeans_iterations)?;

    // initial responsibilities are the hard k-means assignment
    let mut resp = vec![0.0; n * k];
    for (s, &c) in assign.iter().enumerate() {
        resp[s * k + c] = 1.0;
    }
    let mut model = m_step(samples, &resp, k, floor, None);
    let mut lls = Vec::new();
    loop {
        let ll = e_step(samples, &model, &mut resp);
        let converged = lls
            .last()
            .is_some_and(|&prev: &f64| (ll - prev) <= opts.tolerance * prev.abs().max(f64::MIN_POSITIVE));
        lls.push(ll);
        if converged || lls.len() >= opts.max_iterations {
            break;
        }
        model = m_step(samples, &resp, k, floor, Some(&model));
    }
    Ok(GmmFit { model, log_likelihoods: lls })
}

fn e_step(samples: &[Vec<f64>], model: &GmmModel, resp: &mut [f64]) -> f64 {
    let k = model.k();
    let mut total = 0.0;
    for (s, x) in samples.iter().enumerate() {
        let logs = model.log_weighted_densities(x);
        let norm = log_sum_exp(&logs);
        total += norm;
        for (c, l) in logs.iter().enumerate() {
            resp[s * k + c] = (l - norm).exp();
        }
    }
    total
}

fn m_step(samples: &[Vec<f64>], resp: &[f64], k: usize, floor: f64, prev: Option<&GmmModel>) -> GmmModel {
    let n = samples.len();
    let d = samples[0].len();
    let mut priors = vec![0.0; k];
    let mut means = vec![vec![0.0; d]; k];
    let mut variances = vec![vec![0.0; d]; k];
    for c in 0..k {
        let nk: f64 = (0..n).map(|s| resp[s * k + c]).sum();
        if nk < 1e-10 {
            // starved component keeps its parameters with a negligible weight
            priors[c] = 1e-12;
            if let Some(p) = prev {
                means[c] = p.means[c].clone();
                variances[c] = p.variances[c].clone();
            } else {
                variances[c] = vec![floor; d];
            }
            continue;
        }
        priors[c] = nk / n as f64;
        for (s, x) in samples.iter().enumerate() {
            let r = resp[s * k + c];
            for (m, v) in means[c].iter_mut().zip(x) {
                *m += r * v;
            }
        }
        means[c].iter_mut().for_each(|m| *m /= nk);
        for (s, x) in samples.iter().enumerate() {
            let r = resp[s * k + c];
            for ((var, v), m) in variances[c].iter_mut().zip(x).zip(&means[c]) {
                *var += r * (v - m) * (v - m);
            }
        }
        variances[c].iter_mut().for_each(|v| *v = (*v / nk).max(floor));
    }
    let total: f64 = priors.iter().sum();
    priors.iter_mut().for_each(|p| *p /= total);
    GmmModel { priors, means, variances }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding plus Lloyd iterations; returns hard assignments.
fn kmeans(samples: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng, iterations: usize) -> Result<Vec<usize>> {
    let n = samples.len();
    let mut centroids = vec![samples[rng.random_range(0..n)].clone()];
    let mut nearest: Vec<f64> = samples.iter().map(|s| sq_dist(s, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in nearest.iter().enumerate() {
                if target < w {
                    idx = i;
                    break;
                }
                target -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centroids.push(samples[pick].clone());
        for (s, best) in samples.iter().zip(nearest.iter_mut()) {
            *best = best.min(sq_dist(s, &centroids[centroids.len() - 1]));
        }
    }

    let mut assign = vec![0usize; n];
    let mut reseeds = 0;
    let mut iter = 0;
    loop {
        let mut changed = iter == 0;
        for (s, x) in samples.iter().enumerate() {
            let best = (0..k)
                .map(|c| (c, sq_dist(x, &centroids[c])))
                .fold((0, f64::INFINITY), |acc, (c, dist)| if dist < acc.1 { (c, dist) } else { acc });
            if assign[s] != best.0 {
                changed = true;
                assign[s] = best.0;
            }
        }
        let mut counts = vec![0usize; k];
        assign.iter().for_each(|&c| counts[c] += 1);
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            if reseeds == 3 {
                return Err(Error::InsufficientData(format!(
                    "component {empty} stays empty after 3 reseeds"
                )));
            }
            reseeds += 1;
            let far = (0..n)
                .max_by(|&a, &b| {
                    sq_dist(&samples[a], &centroids[assign[a]])
                        .total_cmp(&sq_dist(&samples[b], &centroids[assign[b]]))
                        .then(b.cmp(&a))
                })
                .expect("nonempty samples");
            log::debug!("k-means: reseeding empty component {empty} from sample {far}");
            centroids[empty] = samples[far].clone();
            continue;
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            centroid.iter_mut().for_each(|v| *v = 0.0);
            for (x, _) in samples.iter().zip(&assign).filter(|(_, &a)| a == c) {
                for (m, v) in centroid.iter_mut().zip(x) {
                    *m += v;
                }
            }
            centroid.iter_mut().for_each(|v| *v /= counts[c] as f64);
        }
        iter += 1;
        if !changed || iter >= iterations {
            break;
        }
    }
    Ok(assign)
}
