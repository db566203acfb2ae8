//! Local redistribution rules.
//!
//! Each rule maps upper-layer relevance `R_j` onto lower-layer units `i`
//! given the forward contributions `z_ij` of one mapping. Contributions are
//! stored sparsely per output column, so the same functions serve dense
//! layers, convolutions and pooling.

use crate::error::{Error, Result};

/// Forward contributions of one mapping: for each output `j`, the pairs `(i, z_ij)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Contributions {
    n_inputs: usize,
    columns: Vec<Vec<(usize, f64)>>,
}

impl Contributions {
    pub fn new(n_inputs: usize, columns: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        if let Some(&(i, _)) = columns.iter().flatten().find(|&&(i, _)| i >= n_inputs) {
            return Err(Error::Shape(format!("contribution from input {i} but only {n_inputs} inputs")));
        }
        Ok(Contributions { n_inputs, columns })
    }

    /// Dense `z[i][j]` matrix (rows are inputs).
    pub fn from_matrix(z: &[Vec<f64>]) -> Result<Self> {
        let n_out = z.first().map_or(0, Vec::len);
        if z.iter().any(|row| row.len() != n_out) {
            return Err(Error::Shape("ragged contribution matrix".into()));
        }
        let columns = (0..n_out).map(|j| z.iter().enumerate().map(|(i, row)| (i, row[j])).collect()).collect();
        Contributions::new(z.len(), columns)
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn n_outputs(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Vec<(usize, f64)>] {
        &self.columns
    }

    /// `z_j = sum_i z_ij + b_j`, summed in column order.
    pub fn totals(&self, bias: Option<&[f64]>) -> Vec<f64> {
        self.columns
            .iter()
            .enumerate()
            .map(|(j, col)| col.iter().map(|&(_, z)| z).sum::<f64>() + bias.map_or(0.0, |b| b[j]))
            .collect()
    }

    /// `(z_j^+, z_j^-)`: sums of the positive and negative parts, bias included.
    pub fn signed_totals(&self, bias: Option<&[f64]>) -> (Vec<f64>, Vec<f64>) {
        self.columns
            .iter()
            .enumerate()
            .map(|(j, col)| {
                let b = bias.map_or(0.0, |b| b[j]);
                let pos = col.iter().map(|&(_, z)| z.max(0.0)).sum::<f64>() + b.max(0.0);
                let neg = col.iter().map(|&(_, z)| z.min(0.0)).sum::<f64>() + b.min(0.0);
                (pos, neg)
            })
            .unzip()
    }
}

fn check_lengths(contribs: &Contributions, totals: &[f64], upper: &[f64]) -> Result<()> {
    let n = contribs.n_outputs();
    if totals.len() != n || upper.len() != n {
        return Err(Error::Shape(format!(
            "{n} outputs but {} totals and {} relevances",
            totals.len(),
            upper.len()
        )));
    }
    Ok(())
}

/// `num / den` with `0/0 := 0`; a zero denominator under a nonzero numerator is an error.
#[inline]
fn ratio(num: f64, den: f64, output: usize) -> Result<f64> {
    if den == 0.0 {
        if num == 0.0 {
            Ok(0.0)
        } else {
            Err(Error::ZeroDenominator { output })
        }
    } else {
        Ok(num / den)
    }
}

/// `sign(z)` with `sign(0) = +1`.
#[inline]
pub fn stabilizer_sign(z: f64) -> f64 {
    if z < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// `R_i = sum_j (z_ij / z_j) R_j`.
pub fn propagate_basic(contribs: &Contributions, totals: &[f64], upper: &[f64]) -> Result<Vec<f64>> {
    check_lengths(contribs, totals, upper)?;
    let mut lower = vec![0.0; contribs.n_inputs()];
    for (j, col) in contribs.columns().iter().enumerate() {
        if upper[j] == 0.0 {
            continue;
        }
        for &(i, z) in col {
            lower[i] += ratio(z, totals[j], j)? * upper[j];
        }
    }
    Ok(lower)
}

/// `R_i = sum_j z_ij / (z_j + eps * sign(z_j)) R_j`.
///
/// With `epsilon == 0` this performs exactly the same floating point
/// operations as [`propagate_basic`].
pub fn propagate_epsilon(
    contribs: &Contributions,
    totals: &[f64],
    upper: &[f64],
    epsilon: f64,
) -> Result<Vec<f64>> {
    if !(epsilon >= 0.0) {
        return Err(Error::Config(format!("epsilon must be nonnegative, got {epsilon}")));
    }
    check_lengths(contribs, totals, upper)?;
    let mut lower = vec![0.0; contribs.n_inputs()];
    for (j, col) in contribs.columns().iter().enumerate() {
        if upper[j] == 0.0 {
            continue;
        }
        let den = totals[j] + epsilon * stabilizer_sign(totals[j]);
        for &(i, z) in col {
            lower[i] += ratio(z, den, j)? * upper[j];
        }
    }
    Ok(lower)
}

/// Magnitude of relevance held back by the stabilizer:
/// `sum_j |R_j| eps / (|z_j| + eps)`.
pub fn epsilon_absorbed(totals: &[f64], upper: &[f64], epsilon: f64) -> f64 {
    totals
        .iter()
        .zip(upper)
        .filter(|&(_, &r)| r != 0.0 && epsilon > 0.0)
        .fold(0.0, |acc, (&z, &r)| acc + r.abs() * epsilon / (z.abs() + epsilon))
}

pub fn check_alpha_beta(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha >= 0.0 && beta >= 0.0) || (alpha - beta - 1.0).abs() > 1e-12 {
        return Err(Error::Config(format!(
            "alpha/beta rule needs nonnegative alpha - beta = 1, got alpha {alpha}, beta {beta}"
        )));
    }
    Ok(())
}

/// `R_i = sum_j (alpha z_ij^+ / z_j^+ - beta z_ij^- / z_j^-) R_j`.
pub fn propagate_alphabeta(
    contribs: &Contributions,
    totals_pos: &[f64],
    totals_neg: &[f64],
    upper: &[f64],
    alpha: f64,
    beta: f64,
) -> Result<Vec<f64>> {
    check_alpha_beta(alpha, beta)?;
    check_lengths(contribs, totals_pos, upper)?;
    check_lengths(contribs, totals_neg, upper)?;
    let mut lower = vec![0.0; contribs.n_inputs()];
    for (j, col) in contribs.columns().iter().enumerate() {
        if upper[j] == 0.0 {
            continue;
        }
        for &(i, z) in col {
            let pos = ratio(z.max(0.0), totals_pos[j], j)?;
            let neg = ratio(z.min(0.0), totals_neg[j], j)?;
            lower[i] += (alpha * pos - beta * neg) * upper[j];
        }
    }
    Ok(lower)
}

/// Uniform redistribution of each `R_j` over the inputs in its receptive field.
pub fn propagate_flat(fields: &[Vec<usize>], n_inputs: usize, upper: &[f64]) -> Result<Vec<f64>> {
    if fields.len() != upper.len() {
        return Err(Error::Shape(format!("{} fields but {} relevances", fields.len(), upper.len())));
    }
    let mut lower = vec![0.0; n_inputs];
    for (j, field) in fields.iter().enumerate() {
        if field.is_empty() {
            return Err(Error::EmptyField { output: j });
        }
        let share = upper[j] / field.len() as f64;
        for &i in field {
            if i >= n_inputs {
                return Err(Error::Shape(format!("field of output {j} references input {i} of {n_inputs}")));
            }
            lower[i] += share;
        }
    }
    Ok(lower)
}

/// `R_i = sum_j (w_ij^2 / sum_i' w_i'j^2) R_j`, independent of activations.
pub fn propagate_w2(weights: &Contributions, upper: &[f64]) -> Result<Vec<f64>> {
    if upper.len() != weights.n_outputs() {
        return Err(Error::Shape(format!(
            "{} outputs but {} relevances",
            weights.n_outputs(),
            upper.len()
        )));
    }
    let mut lower = vec![0.0; weights.n_inputs()];
    for (j, col) in weights.columns().iter().enumerate() {
        if upper[j] == 0.0 {
            continue;
        }
        let norm: f64 = col.iter().map(|&(_, w)| w * w).sum();
        if norm == 0.0 {
            return Err(Error::ZeroWeightColumn { output: j });
        }
        for &(i, w) in col {
            lower[i] += w * w / norm * upper[j];
        }
    }
    Ok(lower)
}

/// Max-pooling: all of `R_j` goes to the first maximal input of its field.
pub fn propagate_winner(fields: &[Vec<usize>], inputs: &[f64], upper: &[f64]) -> Result<Vec<f64>> {
    if fields.len() != upper.len() {
        return Err(Error::Shape(format!("{} fields but {} relevances", fields.len(), upper.len())));
    }
    let mut lower = vec![0.0; inputs.len()];
    for (j, field) in fields.iter().enumerate() {
        let mut best = *field.first().ok_or(Error::EmptyField { output: j })?;
        for &i in &field[1..] {
            if inputs[i] > inputs[best] || (inputs[i] == inputs[best] && i < best) {
                best = i;
            }
        }
        lower[best] += upper[j];
    }
    Ok(lower)
}
