//! Layer-wise relevance propagation for small sequential networks and for a
//! Fisher Vector image classification pipeline, with a configurable mapping
//! influence cut-off point and heatmap rendering.

pub mod cli;
pub mod error;
pub mod fv;
pub mod fv_lrp;
pub mod heatmap;
pub mod image;
pub mod lrp;
pub mod model;
pub mod model_io;
pub mod synth;
pub mod tensor;
pub mod textfmt;

pub use error::{Error, Result};
pub use fv_lrp::{explain_fv, FvDiagnostics, Mode, PixelRelevance};
pub use heatmap::{overlay_alpha, render, ColorMap};
pub use image::{GrayImage, RgbImage, RgbaImage};
pub use lrp::{explain_nn, CutoffConfig, RelevanceMap, Rule};
pub use model::{ActivationTrace, Layer, LayerTrace, Model};
pub use model_io::{load_model, save_model};
pub use tensor::Tensor;
