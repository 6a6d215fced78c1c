use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;

use super::{ModelConfig, ModelParams, Real};
use crate::batching::PaddedBatch;
use crate::error::{Error, Result};
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Dropout active; a cache for backpropagation is returned.
    Train,
    /// Deterministic scoring.
    Eval,
}

/// Everything the backward pass needs from a training-phase forward.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    rows: usize,
    width: usize,
    lengths: Vec<usize>,
    layers: Vec<LayerCache<T>>,
    /// `B x H` top-layer outputs fed to the head.
    features: Array2<T>,
    logits: Array1<T>,
}

#[derive(Debug, Clone)]
struct LayerCache<T> {
    /// Dense layer input, `(T*B) x D`. Absent for one-hot input.
    input: Option<Array2<T>>,
    /// Activated gates `(T*B) x 4H`; rows at padded steps are zero.
    gates: Array2<T>,
    /// Cell and hidden states, `((T+1)*B) x H`, the first block being the zero initial state.
    cells: Array2<T>,
    hidden: Array2<T>,
    /// Inverted-dropout multipliers on the layer output, `(T*B) x H`.
    dropout: Option<Array2<T>>,
}

impl<T: Real> ForwardCache<T> {
    pub fn logits(&self) -> &Array1<T> {
        &self.logits
    }

    /// Activated gates of `layer`, rows `t * B + b`.
    pub fn gates(&self, layer: usize) -> &Array2<T> {
        &self.layers[layer].gates
    }

    /// Cell states of `layer`; row block 0 is the initial state.
    pub fn cells(&self, layer: usize) -> &Array2<T> {
        &self.layers[layer].cells
    }

    pub fn dropout_mask(&self, layer: usize) -> Option<&Array2<T>> {
        self.layers[layer].dropout.as_ref()
    }
}

/// A configured network and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    params: ModelParams<T>,
}

fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig, params: ModelParams<T>) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        Ok(Self { config, params })
    }

    pub fn init(config: ModelConfig, rng: &mut StreamRng) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config, rng);
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ModelParams<T> {
        self.params
    }

    /// Eval-phase probabilities for every row of `batch`.
    pub fn score(&self, batch: &PaddedBatch) -> Result<Vec<T>> {
        let mut unused = crate::rng::stream(0, "eval");
        self.forward(batch, Phase::Eval, &mut unused).map(|(s, _)| s)
    }

    /// Runs the stack over `batch` and returns one probability per row.
    ///
    /// Padded steps carry `h` and `c` over unchanged, so a row's score does
    /// not depend on how wide its batch is. The head reads the top layer's
    /// output at each row's last real character.
    pub fn forward(
        &self,
        batch: &PaddedBatch,
        phase: Phase,
        rng: &mut StreamRng,
    ) -> Result<(Vec<T>, Option<ForwardCache<T>>)> {
        let vocab = self.config.vocab_size;
        if let Some(&bad) = batch.indices().iter().find(|&&i| i >= vocab) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                vocab_size: vocab,
            });
        }
        self.params.ensure_finite()?;

        let rows = batch.rows();
        let width = batch.width();
        let h = self.config.hidden_units;
        let train = phase == Phase::Train;
        let drop_rate = self.config.dropout_rate;
        let keep_scale = T::of(1.0 / (1.0 - drop_rate));

        // Dense input to the current layer; None means one-hot characters.
        let mut input: Option<Array2<T>> = self.params.embedding.as_ref().map(|table| {
            let mut x = Array2::zeros((width * rows, table.ncols()));
            for t in 0..width {
                for r in 0..rows {
                    x.row_mut(t * rows + r).assign(&table.row(batch.index(r, t)));
                }
            }
            x
        });

        let mut layer_caches = Vec::with_capacity(if train { self.config.num_layers } else { 0 });
        for layer in &self.params.layers {
            let mut pre = Array2::<T>::zeros((width * rows, 4 * h));
            match &input {
                None => {
                    for t in 0..width {
                        for r in 0..rows {
                            pre.row_mut(t * rows + r)
                                .assign(&layer.w_input.column(batch.index(r, t)));
                        }
                    }
                }
                Some(x) => general_mat_mul(T::one(), x, &layer.w_input.t(), T::zero(), &mut pre),
            }
            pre += &layer.bias;

            let mut gates = Array2::<T>::zeros((width * rows, 4 * h));
            let mut cells = Array2::<T>::zeros(((width + 1) * rows, h));
            let mut hidden = Array2::<T>::zeros(((width + 1) * rows, h));
            let mut z = Array2::<T>::zeros((rows, 4 * h));
            for t in 0..width {
                z.assign(&pre.slice(s![t * rows..(t + 1) * rows, ..]));
                general_mat_mul(
                    T::one(),
                    &hidden.slice(s![t * rows..(t + 1) * rows, ..]),
                    &layer.w_recurrent.t(),
                    T::one(),
                    &mut z,
                );
                let zs = z.as_slice().expect("standard layout");
                let gs = gates.as_slice_mut().expect("standard layout");
                let (c_before, c_after) = cells
                    .as_slice_mut()
                    .expect("standard layout")
                    .split_at_mut((t + 1) * rows * h);
                let (h_before, h_after) = hidden
                    .as_slice_mut()
                    .expect("standard layout")
                    .split_at_mut((t + 1) * rows * h);
                let c_prev = &c_before[t * rows * h..];
                let h_prev = &h_before[t * rows * h..];
                for r in 0..rows {
                    let state = r * h..(r + 1) * h;
                    if !batch.is_valid(r, t) {
                        c_after[state.clone()].copy_from_slice(&c_prev[state.clone()]);
                        h_after[state.clone()].copy_from_slice(&h_prev[state]);
                        continue;
                    }
                    let zr = &zs[r * 4 * h..(r + 1) * 4 * h];
                    let gr = &mut gs[(t * rows + r) * 4 * h..(t * rows + r + 1) * 4 * h];
                    for j in 0..h {
                        let i = sigmoid(zr[j]);
                        let f = sigmoid(zr[h + j]);
                        let g = zr[2 * h + j].tanh();
                        let o = sigmoid(zr[3 * h + j]);
                        gr[j] = i;
                        gr[h + j] = f;
                        gr[2 * h + j] = g;
                        gr[3 * h + j] = o;
                        let c = f * c_prev[r * h + j] + i * g;
                        c_after[r * h + j] = c;
                        h_after[r * h + j] = o * c.tanh();
                    }
                }
            }

            let mut output = hidden.slice(s![rows.., ..]).to_owned();
            let dropout = if train && drop_rate > 0.0 {
                let mask = Array2::from_shape_simple_fn((width * rows, h), || {
                    if rng.random::<f64>() < drop_rate {
                        T::zero()
                    } else {
                        keep_scale
                    }
                });
                output *= &mask;
                Some(mask)
            } else {
                None
            };

            let layer_input = input.replace(output);
            if train {
                layer_caches.push(LayerCache {
                    input: layer_input,
                    gates,
                    cells,
                    hidden,
                    dropout,
                });
            }
        }

        let top = input.expect("at least one layer");
        let mut features = Array2::<T>::zeros((rows, h));
        for (r, &len) in batch.lengths().iter().enumerate() {
            features.row_mut(r).assign(&top.row((len - 1) * rows + r));
        }
        let bias = self.params.head_bias[0];
        let logits: Array1<T> = features.dot(&self.params.head_weight).mapv(|v| v + bias);
        let scores = logits.iter().map(|&l| sigmoid(l)).collect();
        let cache = train.then(|| ForwardCache {
            rows,
            width,
            lengths: batch.lengths().to_vec(),
            layers: layer_caches,
            features,
            logits,
        });
        Ok((scores, cache))
    }

    /// Mean binary cross-entropy of `labels` against the cached logits and its
    /// exact gradient by backpropagation through time.
    ///
    /// Padded steps contribute nothing; the cached dropout masks are reused.
    pub fn backward(&self, cache: &ForwardCache<T>, batch: &PaddedBatch, labels: &[T]) -> Result<(ModelParams<T>, f64)> {
        if cache.rows != batch.rows() || cache.width != batch.width() || cache.lengths != batch.lengths() {
            return Err(Error::CacheMismatch(format!(
                "cache is {}x{}, batch is {}x{}",
                cache.rows,
                cache.width,
                batch.rows(),
                batch.width()
            )));
        }
        if labels.len() != batch.rows() {
            return Err(Error::CacheMismatch(format!(
                "{} labels for {} rows",
                labels.len(),
                batch.rows()
            )));
        }
        if cache.layers.len() != self.config.num_layers {
            return Err(Error::CacheMismatch("layer count differs from model".into()));
        }

        let rows = batch.rows();
        let width = batch.width();
        let h = self.config.hidden_units;
        let inv_rows = T::one() / T::of(rows as f64);
        let mut grads = ModelParams::<T>::zeros(&self.config);

        let mut loss = 0.0;
        let mut dlogits = Vec::with_capacity(rows);
        for (&l, &y) in cache.logits.iter().zip(labels) {
            let softplus = l.max(T::zero()) + (-l.abs()).exp().ln_1p();
            loss += (softplus - l * y).to_f64().unwrap_or(f64::NAN);
            dlogits.push((sigmoid(l) - y) * inv_rows);
        }
        loss /= rows as f64;

        for (r, &d) in dlogits.iter().enumerate() {
            grads.head_bias[0] += d;
            grads
                .head_weight
                .scaled_add(d, &cache.features.row(r));
        }

        let mut d_out = Array2::<T>::zeros((width * rows, h));
        for (r, (&d, &len)) in dlogits.iter().zip(batch.lengths()).enumerate() {
            d_out
                .row_mut((len - 1) * rows + r)
                .scaled_add(d, &self.params.head_weight);
        }

        for (l, (layer, lc)) in self.params.layers.iter().zip(&cache.layers).enumerate().rev() {
            if let Some(mask) = &lc.dropout {
                d_out *= mask;
            }
            let mut dz_all = Array2::<T>::zeros((width * rows, 4 * h));
            let mut dh_next = Array2::<T>::zeros((rows, h));
            let mut dc_next = Array2::<T>::zeros((rows, h));
            let mut dh_rec = Array2::<T>::zeros((rows, h));
            let gates = lc.gates.as_slice().expect("standard layout");
            let cells = lc.cells.as_slice().expect("standard layout");
            for t in (0..width).rev() {
                {
                    let dout = d_out.as_slice().expect("standard layout");
                    let dz = dz_all.as_slice_mut().expect("standard layout");
                    let dhn = dh_next.as_slice_mut().expect("standard layout");
                    let dcn = dc_next.as_slice_mut().expect("standard layout");
                    for r in 0..rows {
                        let row = t * rows + r;
                        let valid = batch.is_valid(r, t);
                        for j in 0..h {
                            let dh = dhn[r * h + j] + dout[row * h + j];
                            if !valid {
                                dhn[r * h + j] = dh;
                                continue;
                            }
                            let g4 = &gates[row * 4 * h..(row + 1) * 4 * h];
                            let (i, f, g, o) = (g4[j], g4[h + j], g4[2 * h + j], g4[3 * h + j]);
                            let c = cells[(row + rows) * h + j];
                            let c_prev = cells[row * h + j];
                            let tc = c.tanh();
                            let dc = dcn[r * h + j] + dh * o * (T::one() - tc * tc);
                            let dzr = &mut dz[row * 4 * h..(row + 1) * 4 * h];
                            dzr[j] = dc * g * i * (T::one() - i);
                            dzr[h + j] = dc * c_prev * f * (T::one() - f);
                            dzr[2 * h + j] = dc * i * (T::one() - g * g);
                            dzr[3 * h + j] = dh * tc * o * (T::one() - o);
                            dcn[r * h + j] = dc * f;
                        }
                    }
                }
                general_mat_mul(
                    T::one(),
                    &dz_all.slice(s![t * rows..(t + 1) * rows, ..]),
                    &layer.w_recurrent,
                    T::zero(),
                    &mut dh_rec,
                );
                for r in 0..rows {
                    if batch.is_valid(r, t) {
                        dh_next.row_mut(r).assign(&dh_rec.row(r));
                    }
                }
            }

            let grad = &mut grads.layers[l];
            general_mat_mul(
                T::one(),
                &dz_all.t(),
                &lc.hidden.slice(s![..width * rows, ..]),
                T::zero(),
                &mut grad.w_recurrent,
            );
            grad.bias = dz_all.sum_axis(Axis(0));

            match (&lc.input, l) {
                (None, _) => {
                    // One-hot input: each real character adds its gate
                    // gradient to one weight column.
                    let dz = dz_all.as_slice().expect("standard layout");
                    let vocab = self.config.vocab_size;
                    let dw = grad.w_input.as_slice_mut().expect("standard layout");
                    for t in 0..width {
                        for r in 0..rows {
                            if !batch.is_valid(r, t) {
                                continue;
                            }
                            let row = t * rows + r;
                            let col = batch.index(r, t);
                            for (j, &d) in dz[row * 4 * h..(row + 1) * 4 * h].iter().enumerate() {
                                dw[j * vocab + col] += d;
                            }
                        }
                    }
                }
                (Some(x), 0) => {
                    // Embedded input: accumulate row by row in the same order as
                    // the one-hot path, skipping exact zeros, so an identity
                    // table reproduces it bit for bit.
                    let dz = dz_all.as_slice().expect("standard layout");
                    let d = x.ncols();
                    let xs = x.as_slice().expect("standard layout");
                    let dw = grad.w_input.as_slice_mut().expect("standard layout");
                    for t in 0..width {
                        for r in 0..rows {
                            if !batch.is_valid(r, t) {
                                continue;
                            }
                            let row = t * rows + r;
                            for (k, &xk) in xs[row * d..(row + 1) * d].iter().enumerate() {
                                if xk == T::zero() {
                                    continue;
                                }
                                for (j, &dzj) in dz[row * 4 * h..(row + 1) * 4 * h].iter().enumerate() {
                                    dw[j * d + k] += dzj * xk;
                                }
                            }
                        }
                    }
                    let dx = dz_all.dot(&layer.w_input);
                    let de = grads.embedding.as_mut().expect("embedding gradient");
                    for t in 0..width {
                        for r in 0..rows {
                            if batch.is_valid(r, t) {
                                let mut target = de.row_mut(batch.index(r, t));
                                target += &dx.row(t * rows + r);
                            }
                        }
                    }
                }
                (Some(x), _) => {
                    general_mat_mul(T::one(), &dz_all.t(), x, T::zero(), &mut grad.w_input);
                    d_out = dz_all.dot(&layer.w_input);
                }
            }
        }
        Ok((grads, loss))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::LstmLayer;
    use crate::rng::stream;
    use crate::vocab::EncodedSequence;

    fn seqs(raw: &[&[usize]]) -> Vec<EncodedSequence> {
        raw.iter().map(|r| EncodedSequence::new(r.to_vec()).unwrap()).collect()
    }

    fn small_config(embedding_dim: Option<usize>, dropout_rate: f64) -> ModelConfig {
        ModelConfig {
            vocab_size: 7,
            num_layers: 2,
            hidden_units: 3,
            dropout_rate,
            embedding_dim,
        }
    }

    #[test]
    fn zero_params_score_one_half() {
        let config = small_config(None, 0.3);
        let model = Model::new(config.clone(), ModelParams::<f64>::zeros(&config)).unwrap();
        let data = seqs(&[&[2, 3], &[4, 5, 6, 2]]);
        let batch = PaddedBatch::pack(&data, &[0, 1], None).unwrap();
        assert_eq!(model.score(&batch).unwrap(), vec![0.5, 0.5]);
        let (scores, cache) = model.forward(&batch, Phase::Train, &mut stream(0, "d")).unwrap();
        assert_eq!(scores, vec![0.5, 0.5]);
        let (grads, loss) = model.backward(&cache.unwrap(), &batch, &[1.0, 0.0]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        // mean(s - y) = mean(0.5 - 1, 0.5 - 0)
        assert_eq!(grads.head_bias[0], 0.0);
        let (grads, _) = model
            .backward(
                &model.forward(&batch, Phase::Train, &mut stream(0, "d")).unwrap().1.unwrap(),
                &batch,
                &[1.0, 1.0],
            )
            .unwrap();
        assert_eq!(grads.head_bias[0], -0.5);
    }

    #[test]
    fn labels_at_scores_give_zero_gradient() {
        let config = small_config(None, 0.0);
        let model = Model::new(config.clone(), ModelParams::<f64>::zeros(&config)).unwrap();
        let data = seqs(&[&[2, 3, 4]]);
        let batch = PaddedBatch::pack(&data, &[0], None).unwrap();
        let (_, cache) = model.forward(&batch, Phase::Train, &mut stream(0, "d")).unwrap();
        let (grads, _) = model.backward(&cache.unwrap(), &batch, &[0.5]).unwrap();
        for t in grads.tensors() {
            assert!(t.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn scalar_cell_by_hand() {
        // One layer, one unit, vocabulary {PAD, UNK, a, b}.
        let config = ModelConfig {
            vocab_size: 4,
            num_layers: 1,
            hidden_units: 1,
            dropout_rate: 0.0,
            embedding_dim: None,
        };
        let mut w = Array2::<f64>::zeros((4, 4));
        w.column_mut(2).assign(&ndarray::arr1(&[0.5, -0.3, 0.8, 0.2]));
        w.column_mut(3).assign(&ndarray::arr1(&[-0.6, 0.4, 0.1, -0.9]));
        let params = ModelParams {
            layers: vec![LstmLayer {
                w_input: w,
                w_recurrent: ndarray::arr2(&[[0.3], [-0.4], [0.6], [0.7]]),
                bias: ndarray::arr1(&[0.1, 1.0, -0.2, 0.05]),
            }],
            head_weight: ndarray::arr1(&[1.5]),
            head_bias: ndarray::arr1(&[-0.25]),
            embedding: None,
        };
        let model = Model::new(config, params).unwrap();
        let data = seqs(&[&[2], &[2, 3]]);
        let batch = PaddedBatch::pack(&data, &[0, 1], None).unwrap();
        let scores = model.score(&batch).unwrap();
        // Evaluated independently of this crate, step by step from the cell equations.
        assert!((scores[0] - 0.5078043795854923).abs() < 1e-15);
        assert!((scores[1] - 0.47093135417486937).abs() < 1e-15);
    }

    #[test]
    fn index_out_of_range_and_nan_rejected() {
        let config = small_config(None, 0.0);
        let model = Model::<f64>::init(config.clone(), &mut stream(1, "init")).unwrap();
        let data = seqs(&[&[2, 9]]);
        let batch = PaddedBatch::pack(&data, &[0], None).unwrap();
        assert!(matches!(model.score(&batch), Err(Error::IndexOutOfRange { index: 9, .. })));

        let mut params = ModelParams::<f64>::zeros(&config);
        params.head_weight[0] = f64::NAN;
        let model = Model::new(config, params).unwrap();
        let data = seqs(&[&[2]]);
        let batch = PaddedBatch::pack(&data, &[0], None).unwrap();
        assert!(matches!(model.score(&batch), Err(Error::NonFiniteParams(_))));
    }

    #[test]
    fn cache_mismatch_rejected() {
        let config = small_config(None, 0.0);
        let model = Model::<f64>::init(config, &mut stream(1, "init")).unwrap();
        let data = seqs(&[&[2, 3], &[4]]);
        let a = PaddedBatch::pack(&data, &[0], None).unwrap();
        let b = PaddedBatch::pack(&data, &[1], None).unwrap();
        let (_, cache) = model.forward(&a, Phase::Train, &mut stream(0, "d")).unwrap();
        assert!(matches!(
            model.backward(&cache.unwrap(), &b, &[1.0]),
            Err(Error::CacheMismatch(_))
        ));
    }

    #[test]
    fn eval_is_deterministic_and_padding_invariant() {
        let config = small_config(None, 0.5);
        let model = Model::<f64>::init(config, &mut stream(4, "init")).unwrap();
        let data = seqs(&[&[2, 3, 4, 5, 6], &[3], &[6, 6, 2]]);
        let together = PaddedBatch::pack(&data, &[0, 1, 2], None).unwrap();
        let a = model.score(&together).unwrap();
        let b = model.score(&together).unwrap();
        assert_eq!(a, b);
        for i in 0..3 {
            let alone = model.score(&PaddedBatch::pack(&data, &[i], None).unwrap()).unwrap();
            assert!((alone[0] - a[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn gates_bounded_in_cache() {
        let config = small_config(None, 0.2);
        let model = Model::<f64>::init(config, &mut stream(4, "init")).unwrap();
        let data = seqs(&[&[2, 3, 4, 5, 6], &[3]]);
        let batch = PaddedBatch::pack(&data, &[0, 1], None).unwrap();
        let (_, cache) = model.forward(&batch, Phase::Train, &mut stream(2, "d")).unwrap();
        let cache = cache.unwrap();
        for l in 0..2 {
            let g = cache.gates(l);
            for row in 0..g.nrows() {
                let (t, r) = (row / 2, row % 2);
                if batch.is_valid(r, t) {
                    assert!(g.row(row).iter().all(|v| v.abs() < 1.0));
                    for j in [0, 1, 3] {
                        for k in 0..3 {
                            assert!(g[[row, j * 3 + k]] > 0.0);
                        }
                    }
                }
            }
            assert!(cache.cells(l).iter().all(|c| c.tanh().abs() <= 1.0));
        }
    }

    #[test]
    fn identity_embedding_matches_one_hot() {
        let plain_cfg = small_config(None, 0.3);
        let plain = Model::<f64>::init(plain_cfg, &mut stream(9, "init")).unwrap();
        let emb_cfg = small_config(Some(7), 0.3);
        let mut params = plain.params().clone();
        params.embedding = Some(Array2::eye(7));
        let embedded = Model::new(emb_cfg, params).unwrap();
        let data = seqs(&[&[2, 3, 4, 5, 6], &[3], &[6, 1, 2]]);
        let batch = PaddedBatch::pack(&data, &[0, 1, 2], None).unwrap();
        let (s1, c1) = plain.forward(&batch, Phase::Train, &mut stream(1, "d")).unwrap();
        let (s2, c2) = embedded.forward(&batch, Phase::Train, &mut stream(1, "d")).unwrap();
        assert_eq!(s1, s2);
        let labels = [1.0, 0.0, 1.0];
        let (g1, l1) = plain.backward(&c1.unwrap(), &batch, &labels).unwrap();
        let (g2, l2) = embedded.backward(&c2.unwrap(), &batch, &labels).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(g1.layers, g2.layers);
        assert_eq!(g1.head_weight, g2.head_weight);
    }
}
