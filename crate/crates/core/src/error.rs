use std::fmt;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Pixel coordinate `(x, y)` used when reporting non-finite map entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Coord {
    pub x: usize,
    pub y: usize,
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("layer {layer}: {source}")]
    Layer {
        layer: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("unsupported format: {0}")]
    Unsupported(String),

    #[error(
        "numerical instability at output {output}: zero denominator with nonzero contribution \
         (use the epsilon rule)"
    )]
    ZeroDenominator { output: usize },

    #[error("numerical instability at output {output}: all-zero weight column with nonzero relevance")]
    ZeroWeightColumn { output: usize },

    #[error("output {output} has an empty receptive field")]
    EmptyField { output: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("rank deficient data: achieved rank {achieved}, need {target}")]
    RankDeficient { achieved: usize, target: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("non-finite relevance at {}", format_coords(.0))]
    NonFinite(Vec<Coord>),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

fn format_coords(coords: &[Coord]) -> String {
    const SHOWN: usize = 16;
    let mut s = coords
        .iter()
        .take(SHOWN)
        .map(Coord::to_string)
        .collect::<Vec<_>>()
        .join(", ");
    if coords.len() > SHOWN {
        s.push_str(&format!(" and {} more", coords.len() - SHOWN));
    }
    s
}

impl Error {
    pub(crate) fn at_layer(self, layer: usize) -> Error {
        Error::Layer { layer, source: Box::new(self) }
    }

    pub(crate) fn parse(offset: usize, message: impl Into<String>) -> Error {
        Error::Parse { offset, message: message.into() }
    }
}
