//! Sequential network definition and a forward pass that keeps every
//! intermediate quantity relevance propagation needs.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One mapping step of a sequential network.
///
/// Dense weights are laid out `[inputs, outputs]` so that `weights[i, j]` is
/// the connection from input `i` to output `j`. Convolution weights are
/// `[out_channels, in_channels, kernel_h, kernel_w]`.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense { weights: Tensor, bias: Tensor },
    Conv2d { weights: Tensor, bias: Tensor, stride: usize, padding: usize },
    SumPool2d { window: usize, stride: usize },
    MaxPool2d { window: usize, stride: usize },
    ReLU,
}

impl Layer {
    pub fn dense(weights: Tensor, bias: Tensor) -> Result<Self> {
        if weights.ndim() != 2 || bias.shape() != [weights.shape()[1]] {
            return Err(Error::Shape(format!(
                "dense weights {:?} and bias {:?} are inconsistent",
                weights.shape(),
                bias.shape()
            )));
        }
        Ok(Layer::Dense { weights, bias })
    }

    pub fn conv2d(weights: Tensor, bias: Tensor, stride: usize, padding: usize) -> Result<Self> {
        if weights.ndim() != 4 || bias.shape() != [weights.shape()[0]] {
            return Err(Error::Shape(format!(
                "conv2d weights {:?} and bias {:?} are inconsistent",
                weights.shape(),
                bias.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::Validation("conv2d stride must be at least 1".into()));
        }
        Ok(Layer::Conv2d { weights, bias, stride, padding })
    }

    pub fn sum_pool(window: usize, stride: usize) -> Result<Self> {
        check_window(window, stride)?;
        Ok(Layer::SumPool2d { window, stride })
    }

    pub fn max_pool(window: usize, stride: usize) -> Result<Self> {
        check_window(window, stride)?;
        Ok(Layer::MaxPool2d { window, stride })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv2d { .. } => "conv2d",
            Layer::SumPool2d { .. } => "sumpool2d",
            Layer::MaxPool2d { .. } => "maxpool2d",
            Layer::ReLU => "relu",
        }
    }

    /// Whether this layer carries learned weights (`w_ij`, `b_j`).
    pub fn has_weights(&self) -> bool {
        matches!(self, Layer::Dense { .. } | Layer::Conv2d { .. })
    }

    pub fn bias(&self) -> Option<&Tensor> {
        match self {
            Layer::Dense { bias, .. } | Layer::Conv2d { bias, .. } => Some(bias),
            _ => None,
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Dense { weights, .. } => {
                let n: usize = input.iter().product();
                if n != weights.shape()[0] {
                    return Err(Error::Shape(format!(
                        "dense layer expects {} inputs, got shape {input:?}",
                        weights.shape()[0]
                    )));
                }
                Ok(vec![weights.shape()[1]])
            }
            Layer::Conv2d { weights, stride, padding, .. } => {
                let [c, h, w] = chw(input)?;
                let ws = weights.shape();
                if c != ws[1] {
                    return Err(Error::Shape(format!(
                        "conv2d expects {} input channels, got {c}",
                        ws[1]
                    )));
                }
                let oh = slide_len(h + 2 * padding, ws[2], *stride)?;
                let ow = slide_len(w + 2 * padding, ws[3], *stride)?;
                Ok(vec![ws[0], oh, ow])
            }
            Layer::SumPool2d { window, stride } | Layer::MaxPool2d { window, stride } => {
                let [c, h, w] = chw(input)?;
                Ok(vec![c, slide_len(h, *window, *stride)?, slide_len(w, *window, *stride)?])
            }
            Layer::ReLU => Ok(input.to_vec()),
        }
    }

    /// Applies the layer to `input`, whose shape must already be validated.
    pub fn apply(&self, input: &Tensor) -> Result<Tensor> {
        let out_shape = self.output_shape(input.shape())?;
        let x = input.data();
        let data = match self {
            Layer::Dense { weights, bias } => {
                let n_out = weights.shape()[1];
                let w = weights.data();
                (0..n_out)
                    .map(|j| {
                        let z: f64 = x.iter().enumerate().map(|(i, &xi)| xi * w[i * n_out + j]).sum();
                        z + bias.data()[j]
                    })
                    .collect()
            }
            Layer::Conv2d { weights, bias, .. } => {
                let fields = self.receptive_fields(input.shape())?;
                let per_channel = out_shape[1] * out_shape[2];
                let kernel = weights.shape()[1] * weights.shape()[2] * weights.shape()[3];
                fields
                    .iter()
                    .enumerate()
                    .map(|(j, field)| {
                        let o = j / per_channel;
                        let z: f64 = field
                            .iter()
                            .map(|&(i, k)| x[i] * weights.data()[o * kernel + k])
                            .sum();
                        z + bias.data()[o]
                    })
                    .collect()
            }
            Layer::SumPool2d { .. } => self
                .receptive_fields(input.shape())?
                .iter()
                .map(|field| field.iter().map(|&(i, _)| x[i]).sum())
                .collect(),
            Layer::MaxPool2d { .. } => self
                .receptive_fields(input.shape())?
                .iter()
                .map(|field| field.iter().map(|&(i, _)| x[i]).fold(f64::NEG_INFINITY, f64::max))
                .collect(),
            Layer::ReLU => x.iter().map(|&v| v.max(0.0)).collect(),
        };
        Tensor::new(out_shape, data)
    }

    /// For every output unit (flat, row-major), the input units feeding it.
    ///
    /// Each entry is `(input_index, weight_index)`; the weight index addresses
    /// the kernel slice `[in_c, kh, kw]` for convolutions and the input
    /// position within the window for pools. Zero-padding positions are
    /// omitted since they contribute nothing.
    pub fn receptive_fields(&self, input: &[usize]) -> Result<Vec<Vec<(usize, usize)>>> {
        let out = self.output_shape(input)?;
        match self {
            Layer::Dense { .. } => {
                let n: usize = input.iter().product();
                Ok((0..out[0]).map(|_| (0..n).map(|i| (i, i)).collect()).collect())
            }
            Layer::ReLU => Ok((0..out.iter().product()).map(|i| vec![(i, 0)]).collect()),
            Layer::Conv2d { weights, stride, padding, .. } => {
                let [c, h, w] = chw(input)?;
                let (kh, kw) = (weights.shape()[2], weights.shape()[3]);
                let mut fields = Vec::with_capacity(out.iter().product());
                for _o in 0..out[0] {
                    for oy in 0..out[1] {
                        for ox in 0..out[2] {
                            let mut field = Vec::with_capacity(c * kh * kw);
                            for ci in 0..c {
                                for ky in 0..kh {
                                    let iy = (oy * stride + ky) as isize - *padding as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..kw {
                                        let ix = (ox * stride + kx) as isize - *padding as isize;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        let i = (ci * h + iy as usize) * w + ix as usize;
                                        field.push((i, (ci * kh + ky) * kw + kx));
                                    }
                                }
                            }
                            fields.push(field);
                        }
                    }
                }
                Ok(fields)
            }
            Layer::SumPool2d { window, stride } | Layer::MaxPool2d { window, stride } => {
                let [_, h, w] = chw(input)?;
                let mut fields = Vec::with_capacity(out.iter().product());
                for ci in 0..out[0] {
                    for oy in 0..out[1] {
                        for ox in 0..out[2] {
                            let mut field = Vec::with_capacity(window * window);
                            for ky in 0..*window {
                                for kx in 0..*window {
                                    let i = (ci * h + oy * stride + ky) * w + ox * stride + kx;
                                    field.push((i, ky * window + kx));
                                }
                            }
                            fields.push(field);
                        }
                    }
                }
                Ok(fields)
            }
        }
    }
}

fn check_window(window: usize, stride: usize) -> Result<()> {
    if window == 0 || stride == 0 {
        return Err(Error::Validation("pool window and stride must be at least 1".into()));
    }
    Ok(())
}

fn chw(shape: &[usize]) -> Result<[usize; 3]> {
    match shape {
        &[c, h, w] => Ok([c, h, w]),
        _ => Err(Error::Shape(format!("expected channels x height x width, got {shape:?}"))),
    }
}

fn slide_len(extent: usize, window: usize, stride: usize) -> Result<usize> {
    if extent < window {
        return Err(Error::Shape(format!("window {window} larger than extent {extent}")));
    }
    Ok((extent - window) / stride + 1)
}

/// A sequential network over `channels x height x width` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    shapes: Vec<Vec<usize>>,
}

impl Model {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        chw(&input_shape)?;
        if input_shape.contains(&0) {
            return Err(Error::Shape(format!("zero-sized input shape {input_shape:?}")));
        }
        if layers.is_empty() {
            return Err(Error::Validation("model has no layers".into()));
        }
        let mut shapes = vec![input_shape.clone()];
        for (l, layer) in layers.iter().enumerate() {
            let next = layer.output_shape(&shapes[l]).map_err(|e| e.at_layer(l))?;
            shapes.push(next);
        }
        Ok(Model { input_shape, layers, shapes })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Activation shape entering layer `l`; index `layers().len()` is the score shape.
    pub fn activation_shape(&self, l: usize) -> &[usize] {
        &self.shapes[l]
    }

    pub fn num_classes(&self) -> usize {
        self.shapes.last().map(|s| s.iter().product()).unwrap_or(0)
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, ActivationTrace)> {
        if input.shape() != self.input_shape.as_slice() {
            return Err(Error::Shape(format!(
                "input shape {:?} does not match model input {:?}",
                input.shape(),
                self.input_shape
            ))
            .at_layer(0));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut current = input.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let output = layer.apply(&current).map_err(|e| e.at_layer(l))?;
            let pre_activation = layer.has_weights().then(|| output.clone());
            let fields = match layer {
                Layer::SumPool2d { .. } | Layer::MaxPool2d { .. } => Some(
                    layer
                        .receptive_fields(current.shape())
                        .map_err(|e| e.at_layer(l))?
                        .into_iter()
                        .map(|f| f.into_iter().map(|(i, _)| i).collect())
                        .collect(),
                ),
                _ => None,
            };
            layers.push(LayerTrace { input: current, output: output.clone(), pre_activation, fields });
            current = output;
        }
        let n = current.len();
        let scores = current.reshape(vec![n])?;
        Ok((scores, ActivationTrace { layers }))
    }
}

/// Quantities recorded for one layer during the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub input: Tensor,
    pub output: Tensor,
    /// `z_j` for weighted layers.
    pub pre_activation: Option<Tensor>,
    /// Input indices feeding each output, for pooling layers.
    pub fields: Option<Vec<Vec<usize>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    pub layers: Vec<LayerTrace>,
}
