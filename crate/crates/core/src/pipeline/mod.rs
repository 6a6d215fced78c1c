//! End-to-end runs: training, evaluation, score export, the downstream
//! model and the comparison harnesses.

pub mod checkpoint;
pub mod config;
pub mod downstream;
pub mod evaluate;
pub mod harness;
pub mod train;

use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::batching::scoring_batches;
use crate::dataset::{read_jsonl, LeadRecord};
use crate::error::Result;
use crate::nn::Model;
use crate::vocab::{CharVocab, EncodedSequence};

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use downstream::{train_downstream, LogisticModel};
pub use evaluate::{evaluate, export_scores, score_records, Evaluation};
pub use train::{train, EpochLog, ModelSpec, RunLog, TrainConfig};

/// Rows per batch whenever a model is only scoring.
pub const SCORING_BATCH_SIZE: usize = 64;

/// Worker count from `CHARLEAD_THREADS` (default 1).
pub fn worker_threads() -> usize {
    std::env::var("CHARLEAD_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

fn pool() -> Option<&'static rayon::ThreadPool> {
    static POOL: OnceLock<Option<rayon::ThreadPool>> = OnceLock::new();
    POOL.get_or_init(|| {
        let n = worker_threads();
        (n > 1).then(|| rayon::ThreadPoolBuilder::new().num_threads(n).build().expect("thread pool"))
    })
    .as_ref()
}

/// Runs `f` over `items`, in parallel when more than one worker is configured.
/// Results keep the input order either way.
pub fn map_items<I: Sync, O: Send>(items: &[I], f: impl Fn(&I) -> O + Sync + Send) -> Vec<O> {
    match pool() {
        Some(p) => p.install(|| items.par_iter().map(&f).collect()),
        None => items.iter().map(f).collect(),
    }
}

pub fn encode_records(vocab: &CharVocab, records: &[LeadRecord]) -> Result<Vec<EncodedSequence>> {
    records.iter().map(|r| vocab.encode(&r.text)).collect()
}

/// Eval-phase scores in input order. Batching is length-sorted and fixed, so
/// the result does not depend on the thread count.
pub fn score_sequences(model: &Model<f32>, seqs: &[EncodedSequence]) -> Result<Vec<f64>> {
    let batches = scoring_batches(seqs, SCORING_BATCH_SIZE)?;
    let scored = map_items(&batches, |b| model.score(b));
    let mut out = vec![0.0; seqs.len()];
    for (batch, scores) in batches.iter().zip(scored) {
        for (&id, s) in batch.sample_ids().iter().zip(scores?) {
            out[id] = f64::from(s);
        }
    }
    Ok(out)
}

/// Train / validation / test records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<LeadRecord>,
    pub valid: Vec<LeadRecord>,
    pub test: Vec<LeadRecord>,
}

impl Splits {
    pub fn load(train: &Path, valid: &Path, test: &Path) -> Result<Self> {
        Ok(Self {
            train: read_jsonl(train)?,
            valid: read_jsonl(valid)?,
            test: read_jsonl(test)?,
        })
    }

    pub fn from_config(config: &RunConfig) -> Result<Self> {
        let [train, valid, test] = config.split_paths()?;
        Self::load(&train, &valid, &test)
    }

    /// Generates the three splits described by `config`.
    pub fn generate(config: &RunConfig) -> Result<Self> {
        let sizes = [config.n_train, config.n_valid, config.n_test];
        let mut parts = crate::synth::generate_splits(&config.generator_config(), &sizes)?
            .into_iter()
            .map(|part| part.iter().map(LeadRecord::from).collect::<Vec<_>>());
        Ok(Self {
            train: parts.next().expect("three splits"),
            valid: parts.next().expect("three splits"),
            test: parts.next().expect("three splits"),
        })
    }
}
