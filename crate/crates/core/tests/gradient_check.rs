//! Backpropagation through time checked against central finite differences.

use charlead::batching::PaddedBatch;
use charlead::nn::{Model, ModelConfig, ModelParams, Phase};
use charlead::rng::stream;
use charlead::vocab::EncodedSequence;

const STEP: f64 = 1e-4;
// Default init leaves some recurrent gradients near 1e-9, below the
// finite-difference round-off floor; wider weights lift them clear of it.
const WEIGHT_SCALE: f64 = 3.0;

fn bce(scores: &[f64], labels: &[f64]) -> f64 {
    scores
        .iter()
        .zip(labels)
        .map(|(s, y)| -(y * s.ln() + (1.0 - y) * (1.0 - s).ln()))
        .sum::<f64>()
        / scores.len() as f64
}

/// Loss with a fixed dropout stream, so masks repeat across evaluations.
fn loss_at(config: &ModelConfig, params: ModelParams<f64>, batch: &PaddedBatch, labels: &[f64]) -> f64 {
    let model = Model::new(config.clone(), params).unwrap();
    let (scores, _) = model.forward(batch, Phase::Train, &mut stream(99, "dropout")).unwrap();
    bce(&scores, labels)
}

fn worst_relative_error(config: ModelConfig, seed: u64) -> (f64, usize) {
    let mut model = Model::<f64>::init(config.clone(), &mut stream(seed, "init")).unwrap();
    for tensor in model.params_mut().tensors_mut() {
        tensor.iter_mut().for_each(|v| *v *= WEIGHT_SCALE);
    }
    let data: Vec<EncodedSequence> = [vec![2, 5, 11], vec![3, 3, 7, 10], vec![9, 4, 2, 6, 8]]
        .into_iter()
        .map(|v| EncodedSequence::new(v).unwrap())
        .collect();
    let batch = PaddedBatch::pack(&data, &[0, 1, 2], None).unwrap();
    let labels = [1.0, 0.0, 1.0];
    let (_, cache) = model.forward(&batch, Phase::Train, &mut stream(99, "dropout")).unwrap();
    let (grads, _) = model.backward(&cache.unwrap(), &batch, &labels).unwrap();

    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (ti, tensor) in analytic.iter().enumerate() {
        for (k, &a) in tensor.iter().enumerate() {
            let mut plus = model.params().clone();
            plus.tensors_mut()[ti][k] += STEP;
            let mut minus = model.params().clone();
            minus.tensors_mut()[ti][k] -= STEP;
            let numeric = (loss_at(&config, plus, &batch, &labels) - loss_at(&config, minus, &batch, &labels)) / (2.0 * STEP);
            let scale = a.abs().max(numeric.abs());
            let rel = if scale == 0.0 { 0.0 } else { (a - numeric).abs() / scale };
            worst = worst.max(rel);
            checked += 1;
        }
    }
    (worst, checked)
}

#[test]
fn two_layer_one_hot() {
    let config = ModelConfig {
        vocab_size: 12,
        num_layers: 2,
        hidden_units: 8,
        dropout_rate: 0.3,
        embedding_dim: None,
    };
    let (worst, n) = worst_relative_error(config, 1);
    println!("one-hot: {n} coordinates, worst relative error {worst:.3e}");
    assert!(worst <= 1e-4);
}

#[test]
fn two_layer_embedded() {
    let config = ModelConfig {
        vocab_size: 12,
        num_layers: 2,
        hidden_units: 8,
        dropout_rate: 0.3,
        embedding_dim: Some(5),
    };
    let (worst, n) = worst_relative_error(config, 2);
    println!("embedded: {n} coordinates, worst relative error {worst:.3e}");
    assert!(worst <= 1e-4);
}
