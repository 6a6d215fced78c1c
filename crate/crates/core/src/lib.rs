//! Character-level LSTM lead scoring.
//!
//! Raw form-field strings are encoded character by character, grouped into
//! variable- or fixed-width mini-batches, and scored by a stacked LSTM with a
//! logistic head. Training switches from Adam to Nesterov SGD partway
//! through; models are judged by Pearson correlation with outcomes, and their
//! scores can be exported as an extra feature for a downstream model.

pub mod batching;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod registry;
pub mod rng;
pub mod synth;
pub mod vocab;

pub use error::{Error, ErrorClass, Result};
