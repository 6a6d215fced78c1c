//! Stacked character-level LSTM with a logistic scoring head.
//!
//! Layout conventions used throughout:
//!
//! - Gate-stacked weights are `4H x D` with gate blocks in the order
//!   input, forget, candidate, output.
//! - Per-timestep activations for a batch of `B` rows over `T` steps are
//!   stored as `(T * B) x K` matrices, row `t * B + b`.

mod model;
mod params;

use ndarray::NdFloat;
use num_traits::FromPrimitive;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use model::{ForwardCache, Model, Phase};
pub use params::ModelParams;

/// Floating-point element type of a model (`f32` for training runs, `f64` for checks).
pub trait Real: NdFloat + FromPrimitive + Default {
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("representable constant")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Shape and regularization of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub num_layers: usize,
    pub hidden_units: usize,
    pub dropout_rate: f64,
    /// `None` feeds one-hot characters straight into the first layer.
    pub embedding_dim: Option<usize>,
}

impl ModelConfig {
    /// Four layers of 256 units with 30% dropout and no embedding.
    pub fn reference(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            num_layers: 4,
            hidden_units: 256,
            dropout_rate: 0.3,
            embedding_dim: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.vocab_size < 3 {
            return bad("vocab_size must cover PAD, UNK and at least one character");
        }
        if self.num_layers == 0 {
            return bad("num_layers must be >= 1");
        }
        if self.hidden_units == 0 {
            return bad("hidden_units must be >= 1");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if self.embedding_dim == Some(0) {
            return bad("embedding dimension must be >= 1");
        }
        Ok(())
    }

    /// Width of the first layer's input.
    pub fn input_dim(&self) -> usize {
        self.embedding_dim.unwrap_or(self.vocab_size)
    }

    pub fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim()
        } else {
            self.hidden_units
        }
    }
}
