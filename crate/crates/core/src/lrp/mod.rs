//! Layer-wise relevance propagation for sequential networks.

mod explain;
pub mod rules;

pub use explain::{
    explain_nn, layer_contributions, layer_weights, propagate_layer, CutoffConfig, RelevanceMap, Rule,
};
pub use rules::{
    epsilon_absorbed, propagate_alphabeta, propagate_basic, propagate_epsilon, propagate_flat, propagate_w2, propagate_winner,
    Contributions,
};
