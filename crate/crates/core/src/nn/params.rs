use ndarray::{Array1, Array2};
use rand::Rng;

use super::{ModelConfig, Real};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Learnable tensors of one LSTM layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer<T> {
    /// `4H x D`
    pub w_input: Array2<T>,
    /// `4H x H`
    pub w_recurrent: Array2<T>,
    /// `4H`
    pub bias: Array1<T>,
}

/// All learnable tensors of the network. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub layers: Vec<LstmLayer<T>>,
    pub head_weight: Array1<T>,
    /// Single element.
    pub head_bias: Array1<T>,
    /// `vocab_size x d`
    pub embedding: Option<Array2<T>>,
}

fn uniform<T: Real>(rng: &mut StreamRng, shape: (usize, usize), bound: f64) -> Array2<T> {
    Array2::from_shape_simple_fn(shape, || T::of(rng.random_range(-bound..=bound)))
}

impl<T: Real> ModelParams<T> {
    pub fn zeros(config: &ModelConfig) -> Self {
        let h = config.hidden_units;
        let layers = (0..config.num_layers)
            .map(|l| LstmLayer {
                w_input: Array2::zeros((4 * h, config.layer_input_dim(l))),
                w_recurrent: Array2::zeros((4 * h, h)),
                bias: Array1::zeros(4 * h),
            })
            .collect();
        Self {
            layers,
            head_weight: Array1::zeros(h),
            head_bias: Array1::zeros(1),
            embedding: config.embedding_dim.map(|d| Array2::zeros((config.vocab_size, d))),
        }
    }

    /// Uniform `±1/sqrt(fan_in)` weights, zero biases with the forget block at
    /// one, and a `±0.05` embedding. The embedding is drawn last so that
    /// toggling it leaves every other tensor unchanged for a given stream.
    pub fn init(config: &ModelConfig, rng: &mut StreamRng) -> Self {
        let h = config.hidden_units;
        let mut layers = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let d = config.layer_input_dim(l);
            let w_input = uniform(rng, (4 * h, d), 1.0 / (d as f64).sqrt());
            let w_recurrent = uniform(rng, (4 * h, h), 1.0 / (h as f64).sqrt());
            let mut bias = Array1::zeros(4 * h);
            bias.slice_mut(ndarray::s![h..2 * h]).fill(T::one());
            layers.push(LstmLayer {
                w_input,
                w_recurrent,
                bias,
            });
        }
        let head_weight = uniform::<T>(rng, (1, h), 1.0 / (h as f64).sqrt())
            .into_shape_with_order(h)
            .expect("1 x h reshapes to h");
        let embedding = config
            .embedding_dim
            .map(|d| uniform(rng, (config.vocab_size, d), 0.05));
        Self {
            layers,
            head_weight,
            head_bias: Array1::zeros(1),
            embedding,
        }
    }

    /// Checks every tensor shape against `config`.
    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let reference = Self::zeros(config);
        let mine = self.named_shapes();
        let want = reference.named_shapes();
        if mine != want {
            return Err(Error::ShapeMismatch(format!(
                "parameters {mine:?} do not match config {want:?}"
            )));
        }
        Ok(())
    }

    pub fn named_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.named_tensors()
            .into_iter()
            .map(|(name, shape, _)| (name, shape))
            .collect()
    }

    /// `(name, shape, data)` for every tensor, in a fixed canonical order.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[T])> {
        let mut out = Vec::with_capacity(3 * self.layers.len() + 3);
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("lstm.{l}.w_input"), layer.w_input.shape().to_vec(), slice2(&layer.w_input)));
            out.push((
                format!("lstm.{l}.w_recurrent"),
                layer.w_recurrent.shape().to_vec(),
                slice2(&layer.w_recurrent),
            ));
            out.push((format!("lstm.{l}.bias"), layer.bias.shape().to_vec(), slice1(&layer.bias)));
        }
        out.push(("head.weight".into(), self.head_weight.shape().to_vec(), slice1(&self.head_weight)));
        out.push(("head.bias".into(), vec![1], slice1(&self.head_bias)));
        if let Some(e) = &self.embedding {
            out.push(("embedding".into(), e.shape().to_vec(), slice2(e)));
        }
        out
    }

    /// Mutable views in the same order as [`named_tensors`](Self::named_tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::with_capacity(3 * self.layers.len() + 3);
        for layer in &mut self.layers {
            out.push(layer.w_input.as_slice_mut().expect("standard layout"));
            out.push(layer.w_recurrent.as_slice_mut().expect("standard layout"));
            out.push(layer.bias.as_slice_mut().expect("standard layout"));
        }
        out.push(self.head_weight.as_slice_mut().expect("standard layout"));
        out.push(self.head_bias.as_slice_mut().expect("standard layout"));
        if let Some(e) = &mut self.embedding {
            out.push(e.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn tensors(&self) -> Vec<&[T]> {
        self.named_tensors().into_iter().map(|(_, _, d)| d).collect()
    }

    /// Index of the embedding tensor in the canonical order, if present.
    pub fn embedding_slot(&self) -> Option<usize> {
        self.embedding.as_ref().map(|_| 3 * self.layers.len() + 2)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn ensure_finite(&self) -> Result<()> {
        for (name, _, data) in self.named_tensors() {
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteParams(name));
            }
        }
        Ok(())
    }

    /// Element-type conversion (e.g. `f32` checkpoint to `f64` model).
    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let conv1 = |a: &Array1<T>| a.mapv(|v| U::of(v.to_f64().expect("finite")));
        let conv2 = |a: &Array2<T>| a.mapv(|v| U::of(v.to_f64().expect("finite")));
        ModelParams {
            layers: self
                .layers
                .iter()
                .map(|l| LstmLayer {
                    w_input: conv2(&l.w_input),
                    w_recurrent: conv2(&l.w_recurrent),
                    bias: conv1(&l.bias),
                })
                .collect(),
            head_weight: conv1(&self.head_weight),
            head_bias: conv1(&self.head_bias),
            embedding: self.embedding.as_ref().map(conv2),
        }
    }
}

fn slice1<T>(a: &Array1<T>) -> &[T] {
    a.as_slice().expect("standard layout")
}

fn slice2<T>(a: &Array2<T>) -> &[T] {
    a.as_slice().expect("standard layout")
}
