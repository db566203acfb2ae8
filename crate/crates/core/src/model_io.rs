//! `RELPROP-MODEL v1` persistence for sequential networks.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Layer, Model};
use crate::textfmt::{write_atomic, TextReader, TextWriter};

pub const MODEL_HEADER: &str = "RELPROP-MODEL v1";

pub fn model_to_string(model: &Model) -> String {
    let mut w = TextWriter::new(MODEL_HEADER);
    let s = model.input_shape();
    w.line(&[&"input", &s[0], &s[1], &s[2]]);
    w.line(&[&"layers", &model.layers().len()]);
    for (l, layer) in model.layers().iter().enumerate() {
        w.line(&[&"layer", &l, &layer.kind()]);
        match layer {
            Layer::Dense { weights, bias } => {
                w.tensor("weights", weights);
                w.tensor("bias", bias);
            }
            Layer::Conv2d { weights, bias, stride, padding } => {
                w.line(&[&"stride", stride]);
                w.line(&[&"padding", padding]);
                w.tensor("weights", weights);
                w.tensor("bias", bias);
            }
            Layer::SumPool2d { window, stride } | Layer::MaxPool2d { window, stride } => {
                w.line(&[&"window", window]);
                w.line(&[&"stride", stride]);
            }
            Layer::ReLU => {}
        }
    }
    w.finish()
}

pub fn model_from_str(src: &str) -> Result<Model> {
    let mut r = TextReader::new(src, MODEL_HEADER)?;
    let input = r.expect("input")?;
    let input_shape: Vec<usize> = input.parse_args_from(0)?;
    if input_shape.len() != 3 {
        return Err(Error::parse(input.offset, "input must declare channels, height and width"));
    }
    let count_line = r.expect("layers")?;
    let count: usize = count_line.parse_arg(0)?;
    let mut layers = Vec::with_capacity(count);
    for l in 0..count {
        let head = r.expect("layer")?;
        let index: usize = head.parse_arg(0)?;
        if index != l {
            return Err(Error::parse(head.offset, format!("expected layer {l}, found {index}")));
        }
        let at = head.offset;
        let layer = match head.arg(1)? {
            "dense" => {
                let weights = r.tensor("weights")?;
                let bias = r.tensor("bias")?;
                Layer::dense(weights, bias)
            }
            "conv2d" => {
                let stride = r.expect("stride")?.parse_arg(0)?;
                let padding = r.expect("padding")?.parse_arg(0)?;
                let weights = r.tensor("weights")?;
                let bias = r.tensor("bias")?;
                Layer::conv2d(weights, bias, stride, padding)
            }
            kind @ ("sumpool2d" | "maxpool2d") => {
                let window = r.expect("window")?.parse_arg(0)?;
                let stride = r.expect("stride")?.parse_arg(0)?;
                if kind == "sumpool2d" {
                    Layer::sum_pool(window, stride)
                } else {
                    Layer::max_pool(window, stride)
                }
            }
            "relu" => Ok(Layer::ReLU),
            other => return Err(Error::parse(at, format!("unknown layer kind '{other}'"))),
        }
        .map_err(|e| Error::Validation(format!("layer {l} at byte {at}: {e}")))?;
        layers.push(layer);
    }
    r.finish()?;
    Model::new(input_shape, layers).map_err(|e| Error::Validation(e.to_string()))
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), model_to_string(model).as_bytes())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let bytes = std::fs::read(path)?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| Error::parse(e.valid_up_to(), "model file is not valid UTF-8"))?;
    model_from_str(text)
}
