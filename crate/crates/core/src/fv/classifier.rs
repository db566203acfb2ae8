//! One-vs-rest linear classifiers trained on the L2-regularized hinge loss
//! by seeded stochastic subgradient descent.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    /// One weight vector per class.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

impl LinearClassifier {
    pub fn new(weights: Vec<Vec<f64>>, biases: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::Shape(format!(
                "{} weight vectors for {} biases",
                weights.len(),
                biases.len()
            )));
        }
        let d = weights[0].len();
        if weights.iter().any(|w| w.len() != d) {
            return Err(Error::Shape("classifier weight vectors differ in length".into()));
        }
        Ok(LinearClassifier { weights, biases })
    }

    pub fn n_classes(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.weights[0].len()
    }

    /// `w_c . fv + b_c`.
    pub fn predict(&self, class: usize, fv: &[f64]) -> Result<f64> {
        let w = self.weights.get(class).ok_or_else(|| {
            Error::Config(format!("class {class} out of range for {} classes", self.n_classes()))
        })?;
        if fv.len() != w.len() {
            return Err(Error::Shape(format!("classifier expects {} dimensions, got {}", w.len(), fv.len())));
        }
        Ok(dot(w, fv) + self.biases[class])
    }

    pub fn scores(&self, fv: &[f64]) -> Result<Vec<f64>> {
        (0..self.n_classes()).map(|c| self.predict(c, fv)).collect()
    }

    /// Highest-scoring class, ties to the lowest index.
    pub fn classify(&self, fv: &[f64]) -> Result<usize> {
        let scores = self.scores(fv)?;
        Ok(scores
            .iter()
            .enumerate()
            .fold(0, |best, (c, &s)| if s > scores[best] { c } else { best }))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmOptions {
    pub regularization: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmOptions {
    fn default() -> Self {
        SvmOptions { regularization: 1e-4, epochs: 200, seed: 0 }
    }
}

/// Trains one binary hinge-loss model per class (class vs rest).
pub fn train_classifier(fvs: &[Vec<f64>], labels: &[usize], opts: &SvmOptions) -> Result<LinearClassifier> {
    if fvs.len() != labels.len() {
        return Err(Error::Shape(format!("{} vectors but {} labels", fvs.len(), labels.len())));
    }
    if !(opts.regularization > 0.0) {
        return Err(Error::Config("regularization must be positive".into()));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut present = vec![false; n_classes];
    labels.iter().for_each(|&l| present[l] = true);
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::InsufficientData("training data must contain at least two classes".into()));
    }
    let dim = fvs[0].len();
    if fvs.iter().any(|f| f.len() != dim) {
        return Err(Error::Shape("training vectors differ in length".into()));
    }

    let mut weights = Vec::with_capacity(n_classes);
    let mut biases = Vec::with_capacity(n_classes);
    for class in 0..n_classes {
        let targets: Vec<f64> = labels.iter().map(|&l| if l == class { 1.0 } else { -1.0 }).collect();
        let seed = opts.seed.wrapping_add(class as u64);
        let (w, b) = train_binary(fvs, &targets, opts.regularization, opts.epochs, seed);
        weights.push(w);
        biases.push(b);
    }
    LinearClassifier::new(weights, biases)
}

fn train_binary(xs: &[Vec<f64>], ys: &[f64], lambda: f64, epochs: usize, seed: u64) -> (Vec<f64>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = vec![0.0; xs[0].len()];
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut t = 0usize;
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &s in &order {
            let eta = 1.0 / (1.0 + lambda * t as f64);
            t += 1;
            let margin = ys[s] * (dot(&w, &xs[s]) + b);
            let decay = 1.0 - eta * lambda;
            w.iter_mut().for_each(|v| *v *= decay);
            if margin < 1.0 {
                for (v, x) in w.iter_mut().zip(&xs[s]) {
                    *v += eta * ys[s] * x;
                }
                b += eta * ys[s];
            }
        }
    }
    (w, b)
}
