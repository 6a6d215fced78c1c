//! The training loop.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::batching::{computed_cells, BatchSettings};
use crate::dataset::LeadRecord;
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::nn::{Model, ModelConfig, Phase};
use crate::optim::{self, clip_gradients, Optimizer, OptimizerSettings, Schedule};
use crate::rng::stream;
use crate::vocab::CharVocab;

use super::checkpoint::{Checkpoint, Provenance};
use super::{encode_records, score_sequences};

/// Network shape plus where its embedding comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub num_layers: usize,
    pub hidden_units: usize,
    pub dropout_rate: f64,
    pub embedding_dim: Option<usize>,
    /// Pre-trained table; its width overrides `embedding_dim`.
    pub embedding_file: Option<PathBuf>,
    /// Keep a loaded embedding fixed during training.
    pub freeze_embedding: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelSpec,
    pub schedule: Schedule,
    pub batching: BatchSettings,
    pub optimizer: OptimizerSettings,
    pub clip_norm: f64,
    pub patience: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub optimizer: String,
    pub lr: f64,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub valid_r: Option<f64>,
    pub computed_cells: usize,
    /// Not reproducible: left out of serialized logs and of
    /// [`RunLog::same_trajectory`].
    #[serde(skip)]
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch with the lowest validation loss (0 when nothing was trained).
    pub best_epoch: usize,
    /// Best epoch at the point `patience` further epochs failed to improve on it.
    pub converged_epoch: Option<usize>,
}

impl RunLog {
    pub fn min_valid_loss(&self) -> Option<f64> {
        self.epochs.iter().map(|e| e.valid_loss).reduce(f64::min)
    }

    /// Converged epoch, or the best epoch if patience never ran out.
    pub fn epochs_to_convergence(&self) -> usize {
        self.converged_epoch.unwrap_or(self.best_epoch)
    }

    pub fn computed_cells(&self) -> usize {
        self.epochs.iter().map(|e| e.computed_cells).sum()
    }

    pub fn wall_seconds(&self) -> f64 {
        self.epochs.iter().map(|e| e.wall_seconds).sum()
    }

    /// Bitwise comparison of everything except timings.
    pub fn same_trajectory(&self, other: &RunLog) -> bool {
        let strip = |log: &RunLog| {
            log.epochs
                .iter()
                .map(|e| {
                    (
                        e.epoch,
                        e.optimizer.clone(),
                        e.lr.to_bits(),
                        e.train_loss.to_bits(),
                        e.valid_loss.to_bits(),
                        e.valid_r.map(f64::to_bits),
                        e.computed_cells,
                    )
                })
                .collect::<Vec<_>>()
        };
        strip(self) == strip(other) && self.best_epoch == other.best_epoch && self.converged_epoch == other.converged_epoch
    }
}

/// Reads a pre-trained embedding: one line per vocabulary index (PAD and UNK
/// first), whitespace-separated numbers, every line the same width.
pub fn load_embedding(path: &Path, vocab_size: usize) -> Result<Array2<f32>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: String| Error::MalformedEmbedding(format!("{}: {msg}", path.display()));
    let mut rows: Vec<Vec<f32>> = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row = line
            .split_whitespace()
            .map(|tok| tok.parse::<f32>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad(format!("line {}: not a list of finite numbers", i + 1)))?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(bad(format!("line {}: {} columns, expected {}", i + 1, row.len(), first.len())));
            }
        }
        rows.push(row);
    }
    if rows.len() != vocab_size {
        return Err(bad(format!("{} rows, vocabulary has {vocab_size}", rows.len())));
    }
    let dim = rows[0].len();
    Array2::from_shape_vec((vocab_size, dim), rows.concat()).map_err(|e| bad(e.to_string()))
}

/// Writes an embedding in the format read by [`load_embedding`].
pub fn save_embedding(path: &Path, table: &Array2<f32>) -> Result<()> {
    let mut out = String::new();
    for row in table.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Trains on `train`, selects parameters by validation loss on `valid`.
///
/// The vocabulary comes from the training texts only. Each epoch reshuffles
/// the batches; the optimizer follows the schedule, and its state is
/// discarded when the schedule switches rule.
pub fn train(config: &TrainConfig, train: &[LeadRecord], valid: &[LeadRecord]) -> Result<(Checkpoint, RunLog)> {
    if train.is_empty() || valid.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if config.patience == 0 || !(config.clip_norm > 0.0) {
        return Err(Error::InvalidConfig("patience and clip_norm must be positive".into()));
    }
    config.schedule.validate()?;
    let strategy = config.batching.build()?;

    let vocab = CharVocab::build(train.iter().map(|r| r.text.as_str()))?;
    let pretrained = match &config.model.embedding_file {
        Some(path) => Some(load_embedding(path, vocab.size())?),
        None => None,
    };
    let embedding_dim = match (&pretrained, config.model.embedding_dim) {
        (Some(table), Some(d)) if d != table.ncols() => {
            return Err(Error::InvalidConfig(format!(
                "embedding_dim {d} does not match the {}-wide embedding file",
                table.ncols()
            )))
        }
        (Some(table), _) => Some(table.ncols()),
        (None, d) => d,
    };
    let model_config = ModelConfig {
        vocab_size: vocab.size(),
        num_layers: config.model.num_layers,
        hidden_units: config.model.hidden_units,
        dropout_rate: config.model.dropout_rate,
        embedding_dim,
    };
    let mut model = Model::<f32>::init(model_config.clone(), &mut stream(config.seed, "init"))?;
    let frozen_slot = match pretrained {
        Some(table) => {
            model.params_mut().embedding = Some(table);
            if config.model.freeze_embedding {
                model.params().embedding_slot()
            } else {
                None
            }
        }
        None => None,
    };

    let train_seqs = encode_records(&vocab, train)?;
    let valid_seqs = encode_records(&vocab, valid)?;
    let valid_labels = crate::dataset::labels(valid);

    let trainable: Vec<usize> = (0..model.params().tensors().len()).filter(|&i| Some(i) != frozen_slot).collect();
    let shapes: Vec<usize> = {
        let all = model.params().tensors();
        trainable.iter().map(|&i| all[i].len()).collect()
    };
    let optimizers = optim::registry::<f32>();

    let mut batch_rng = stream(config.seed, "batches");
    let mut dropout_rng = stream(config.seed, "dropout");
    let mut best = (f64::INFINITY, 0usize, model.params().clone());
    let mut log = RunLog {
        epochs: Vec::new(),
        best_epoch: 0,
        converged_epoch: None,
    };
    let mut active: Option<Box<dyn Optimizer<f32>>> = None;

    for epoch in 1..=config.schedule.total_epochs() {
        let started = Instant::now();
        let choice = config.schedule.optimizer_for_epoch(epoch)?;
        if active.as_ref().map(|o| o.name()) != Some(choice.optimizer) {
            active = Some((optimizers.get(choice.optimizer)?)(&config.optimizer, &shapes)?);
        }
        let opt = active.as_mut().expect("optimizer selected");

        let batches = strategy.make_batches(&train_seqs, &mut batch_rng)?;
        let mut loss_sum = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let labels: Vec<f32> = batch.sample_ids().iter().map(|&id| f32::from(train[id].label)).collect();
            let (_, cache) = model.forward(batch, Phase::Train, &mut dropout_rng)?;
            let cache = cache.expect("train phase keeps a cache");
            let (mut grads, loss) = model.backward(&cache, batch, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            loss_sum += loss * batch.rows() as f64;

            let mut all_grads = grads.tensors_mut();
            let mut g: Vec<&mut [f32]> = Vec::with_capacity(trainable.len());
            for (i, t) in all_grads.drain(..).enumerate() {
                if Some(i) != frozen_slot {
                    g.push(t);
                }
            }
            clip_gradients(&mut g, config.clip_norm)?;
            let g: Vec<&[f32]> = g.into_iter().map(|t| &*t).collect();
            let mut p: Vec<&mut [f32]> = model
                .params_mut()
                .tensors_mut()
                .into_iter()
                .enumerate()
                .filter(|(i, _)| Some(*i) != frozen_slot)
                .map(|(_, t)| t)
                .collect();
            opt.step(&mut p, &g, choice.lr)?;
        }
        model.params().ensure_finite()?;

        let scores = score_sequences(&model, &valid_seqs)?;
        let report = EvalReport::from_scores(&scores, &valid_labels)?;
        if !report.mean_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: batches.len() });
        }
        if report.mean_loss < best.0 {
            best = (report.mean_loss, epoch, model.params().clone());
        }
        if log.converged_epoch.is_none() && epoch - best.1 >= config.patience {
            log.converged_epoch = Some(best.1);
        }
        log.epochs.push(EpochLog {
            epoch,
            optimizer: choice.optimizer.to_string(),
            lr: choice.lr,
            train_loss: loss_sum / train.len() as f64,
            valid_loss: report.mean_loss,
            valid_r: report.r,
            computed_cells: computed_cells(&batches),
            wall_seconds: started.elapsed().as_secs_f64(),
        });
    }
    log.best_epoch = best.1;

    let checkpoint = Checkpoint {
        config: model_config,
        vocab,
        params: best.2,
        provenance: Provenance {
            config_hash: config.hash(),
            epoch: best.1,
            seed: config.seed,
            batch_stream_pos: batch_rng.get_word_pos().to_string(),
            dropout_stream_pos: dropout_rng.get_word_pos().to_string(),
        },
    };
    Ok((checkpoint, log))
}
