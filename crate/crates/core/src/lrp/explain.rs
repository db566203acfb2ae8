//! Layer-by-layer backward pass over a traced network.

use crate::error::{Error, Result};
use crate::lrp::rules::{
    check_alpha_beta, propagate_alphabeta, propagate_basic, propagate_epsilon, propagate_flat,
    propagate_w2, propagate_winner, Contributions,
};
use crate::model::{ActivationTrace, Layer, Model};
use crate::tensor::Tensor;

/// Redistribution rule applied to the mappings of a network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rule {
    Basic,
    Epsilon(f64),
    AlphaBeta { alpha: f64, beta: f64 },
    Flat,
    WSquared,
}

impl Rule {
    pub fn epsilon(epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::Config(format!("epsilon must be finite and nonnegative, got {epsilon}")));
        }
        Ok(Rule::Epsilon(epsilon))
    }

    pub fn alpha_beta(alpha: f64, beta: f64) -> Result<Self> {
        check_alpha_beta(alpha, beta)?;
        Ok(Rule::AlphaBeta { alpha, beta })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Rule::Basic => "basic",
            Rule::Epsilon(_) => "epsilon",
            Rule::AlphaBeta { .. } => "alphabeta",
            Rule::Flat => "flat",
            Rule::WSquared => "w2",
        }
    }
}

impl Default for Rule {
    /// alpha = 2, beta = 1.
    fn default() -> Self {
        Rule::AlphaBeta { alpha: 2.0, beta: 1.0 }
    }
}

/// Mapping influence cut-off point.
///
/// Layers with index `<= cutoff_layer` ignore their forward mapping and
/// spread relevance flatly over receptive fields.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CutoffConfig {
    pub cutoff_layer: Option<usize>,
}

impl CutoffConfig {
    pub fn none() -> Self {
        CutoffConfig { cutoff_layer: None }
    }

    pub fn at(layer: usize) -> Self {
        CutoffConfig { cutoff_layer: Some(layer) }
    }

    /// Cut-off at the bottom-most convolution, falling back to layer 0.
    pub fn receptive_field(model: &Model) -> Self {
        let l = model.layers().iter().position(|l| matches!(l, Layer::Conv2d { .. })).unwrap_or(0);
        CutoffConfig::at(l)
    }

    pub fn is_flat(&self, layer: usize) -> bool {
        self.cutoff_layer.is_some_and(|c| layer <= c)
    }
}

/// Relevance at every layer boundary of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceMap {
    /// `layers[l]` matches the activation entering layer `l`; the last entry
    /// is the output relevance.
    pub layers: Vec<Tensor>,
    /// Input relevance summed over channels, `height x width`.
    pub pixel_map: Tensor,
}

impl RelevanceMap {
    pub fn input_relevance(&self) -> &Tensor {
        &self.layers[0]
    }

    pub fn layer_sums(&self) -> Vec<f64> {
        self.layers.iter().map(Tensor::sum).collect()
    }
}

/// Contributions `z_ij = x_i w_ij` of a weighted layer, or `z_ij = x_i` for sum pooling.
pub fn layer_contributions(layer: &Layer, input: &Tensor) -> Result<Contributions> {
    let x = input.data();
    let fields = layer.receptive_fields(input.shape())?;
    let columns = match layer {
        Layer::Dense { weights, .. } => {
            let n_out = weights.shape()[1];
            let w = weights.data();
            (0..n_out).map(|j| x.iter().enumerate().map(|(i, &xi)| (i, xi * w[i * n_out + j])).collect()).collect()
        }
        Layer::Conv2d { weights, .. } => {
            let w = weights.data();
            let kernel = w.len() / weights.shape()[0];
            let per_channel = fields.len() / weights.shape()[0];
            fields
                .into_iter()
                .enumerate()
                .map(|(j, f)| {
                    let o = j / per_channel;
                    f.into_iter().map(|(i, k)| (i, x[i] * w[o * kernel + k])).collect()
                })
                .collect()
        }
        _ => fields.into_iter().map(|f| f.into_iter().map(|(i, _)| (i, x[i])).collect()).collect(),
    };
    Contributions::new(input.len(), columns)
}

/// Weights `w_ij` per output column; sum pooling has unit weights.
pub fn layer_weights(layer: &Layer, input_shape: &[usize]) -> Result<Contributions> {
    let n: usize = input_shape.iter().product();
    let fields = layer.receptive_fields(input_shape)?;
    let columns = match layer {
        Layer::Dense { weights, .. } => {
            let n_out = weights.shape()[1];
            let w = weights.data();
            (0..n_out).map(|j| (0..n).map(|i| (i, w[i * n_out + j])).collect()).collect()
        }
        Layer::Conv2d { weights, .. } => {
            let w = weights.data();
            let kernel = w.len() / weights.shape()[0];
            let per_channel = fields.len() / weights.shape()[0];
            fields
                .into_iter()
                .enumerate()
                .map(|(j, f)| f.into_iter().map(|(i, k)| (i, w[(j / per_channel) * kernel + k])).collect())
                .collect()
        }
        _ => fields.into_iter().map(|f| f.into_iter().map(|(i, _)| (i, 1.0)).collect()).collect(),
    };
    Contributions::new(n, columns)
}

/// Bias per output unit; convolution biases repeat over each channel's positions.
fn column_bias(layer: &Layer, n_outputs: usize) -> Option<Vec<f64>> {
    let bias = layer.bias()?.data();
    let per_channel = n_outputs / bias.len().max(1);
    Some(bias.iter().flat_map(|&b| std::iter::repeat_n(b, per_channel)).collect())
}

fn field_indices(layer: &Layer, input_shape: &[usize]) -> Result<Vec<Vec<usize>>> {
    Ok(layer
        .receptive_fields(input_shape)?
        .into_iter()
        .map(|f| f.into_iter().map(|(i, _)| i).collect())
        .collect())
}

/// Propagates relevance through a single layer.
pub fn propagate_layer(
    layer: &Layer,
    input: &Tensor,
    upper: &[f64],
    rule: Rule,
    flat: bool,
) -> Result<Vec<f64>> {
    if flat {
        return propagate_flat(&field_indices(layer, input.shape())?, input.len(), upper);
    }
    match layer {
        Layer::ReLU => Ok(upper.to_vec()),
        Layer::MaxPool2d { .. } => {
            // winner-take-all under every rule except flat
            match rule {
                Rule::Flat => propagate_flat(&field_indices(layer, input.shape())?, input.len(), upper),
                _ => propagate_winner(&field_indices(layer, input.shape())?, input.data(), upper),
            }
        }
        Layer::Dense { .. } | Layer::Conv2d { .. } | Layer::SumPool2d { .. } => {
            let bias = column_bias(layer, upper.len());
            let bias = bias.as_deref();
            match rule {
                Rule::Flat => propagate_flat(&field_indices(layer, input.shape())?, input.len(), upper),
                Rule::WSquared => propagate_w2(&layer_weights(layer, input.shape())?, upper),
                Rule::Basic => {
                    let z = layer_contributions(layer, input)?;
                    propagate_basic(&z, &z.totals(bias), upper)
                }
                // sum pooling has no weights to split into signed parts
                Rule::AlphaBeta { .. } if !layer.has_weights() => {
                    let z = layer_contributions(layer, input)?;
                    propagate_basic(&z, &z.totals(bias), upper)
                }
                Rule::Epsilon(eps) => {
                    let z = layer_contributions(layer, input)?;
                    propagate_epsilon(&z, &z.totals(bias), upper, eps)
                }
                Rule::AlphaBeta { alpha, beta } => {
                    let z = layer_contributions(layer, input)?;
                    let (pos, neg) = z.signed_totals(bias);
                    propagate_alphabeta(&z, &pos, &neg, upper, alpha, beta)
                }
            }
        }
    }
}

/// Explains `trace`'s score for `target_class` down to the input pixels.
pub fn explain_nn(
    model: &Model,
    trace: &ActivationTrace,
    target_class: usize,
    rule: Rule,
    cutoff: CutoffConfig,
) -> Result<RelevanceMap> {
    let n_layers = model.layers().len();
    if trace.layers.len() != n_layers {
        return Err(Error::Validation(format!(
            "trace has {} layers, model has {n_layers}",
            trace.layers.len()
        )));
    }
    if let Some(c) = cutoff.cutoff_layer {
        if c >= n_layers {
            return Err(Error::Config(format!("cutoff layer {c} out of range for {n_layers} layers")));
        }
    }
    let output = &trace.layers[n_layers - 1].output;
    if target_class >= output.len() {
        return Err(Error::Config(format!(
            "class {target_class} out of range for {} outputs",
            output.len()
        )));
    }

    let mut top = vec![0.0; output.len()];
    top[target_class] = output.data()[target_class];
    let mut layers = vec![Tensor::new(output.shape().to_vec(), top)?];

    for (l, layer) in model.layers().iter().enumerate().rev() {
        let step = &trace.layers[l];
        let upper = layers.last().expect("nonempty").data();
        let lower = propagate_layer(layer, &step.input, upper, rule, cutoff.is_flat(l))
            .map_err(|e| e.at_layer(l))?;
        layers.push(Tensor::new(step.input.shape().to_vec(), lower)?);
    }
    layers.reverse();

    let input = &layers[0];
    let [c, h, w] = match *input.shape() {
        [c, h, w] => [c, h, w],
        ref s => return Err(Error::Shape(format!("input relevance shape {s:?} is not CxHxW"))),
    };
    let mut pixels = vec![0.0; h * w];
    for ch in 0..c {
        for (p, v) in pixels.iter_mut().zip(&input.data()[ch * h * w..(ch + 1) * h * w]) {
            *p += v;
        }
    }
    Ok(RelevanceMap { layers, pixel_map: Tensor::new(vec![h, w], pixels)? })
}
