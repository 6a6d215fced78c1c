//! Mini-batch assembly.
//!
//! Two strategies are registered by name:
//!
//! - `variable`: each batch is padded only to its own longest row. Samples
//!   are shuffled, sorted by length inside windows of `sort_window`
//!   batches, chunked, and the batch order is shuffled again.
//! - `fixed`: every batch is `max_len` wide; longer strings keep their
//!   first `max_len` characters.

use std::fmt::Debug;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::rng::StreamRng;
use crate::vocab::{EncodedSequence, PAD_INDEX};

/// Rectangular index matrix with per-row lengths and a validity mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaddedBatch {
    rows: usize,
    width: usize,
    /// Row-major `rows x width`.
    indices: Vec<usize>,
    lengths: Vec<usize>,
    mask: Vec<bool>,
    /// Position of each row's sample in the source dataset.
    sample_ids: Vec<usize>,
}

impl PaddedBatch {
    /// Packs the given samples. `width = None` pads to the longest row;
    /// `Some(w)` truncates longer rows to their first `w` indices.
    pub fn pack(dataset: &[EncodedSequence], sample_ids: &[usize], width: Option<usize>) -> Result<Self> {
        if sample_ids.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let lengths: Vec<usize> = sample_ids
            .iter()
            .map(|&id| {
                let len = dataset[id].len();
                width.map_or(len, |w| len.min(w))
            })
            .collect();
        let width = width.unwrap_or_else(|| lengths.iter().copied().max().unwrap_or(0));
        if width == 0 {
            return Err(Error::InvalidConfig("batch width must be at least 1".into()));
        }
        let rows = sample_ids.len();
        let mut indices = vec![PAD_INDEX; rows * width];
        let mut mask = vec![false; rows * width];
        for (r, (&id, &len)) in sample_ids.iter().zip(&lengths).enumerate() {
            let row = r * width;
            indices[row..row + len].copy_from_slice(&dataset[id].indices()[..len]);
            mask[row..row + len].iter_mut().for_each(|m| *m = true);
        }
        Ok(Self {
            rows,
            width,
            indices,
            lengths,
            mask,
            sample_ids: sample_ids.to_vec(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn index(&self, row: usize, t: usize) -> usize {
        self.indices[row * self.width + t]
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn is_valid(&self, row: usize, t: usize) -> bool {
        self.mask[row * self.width + t]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn sample_ids(&self) -> &[usize] {
        &self.sample_ids
    }

    pub fn cells(&self) -> usize {
        self.rows * self.width
    }

    pub fn padded_cells(&self) -> usize {
        self.mask.iter().filter(|m| !**m).count()
    }
}

/// Interchangeable batch assembly policy.
pub trait BatchStrategy: Debug + Send + Sync {
    fn name(&self) -> &'static str;

    fn batch_size(&self) -> usize;

    /// Partitions the whole dataset into batches; every sample appears once.
    fn make_batches(&self, dataset: &[EncodedSequence], rng: &mut StreamRng) -> Result<Vec<PaddedBatch>>;
}

/// Flat batching knobs as they appear in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSettings {
    pub batching: String,
    pub batch_size: usize,
    pub sort_window: usize,
    pub max_len: usize,
}

impl Default for BatchSettings {
    fn default() -> Self {
        Self {
            batching: "variable".into(),
            batch_size: 64,
            sort_window: 16,
            max_len: 128,
        }
    }
}

impl BatchSettings {
    pub fn build(&self) -> Result<Box<dyn BatchStrategy>> {
        (registry().get(&self.batching)?)(self)
    }
}

pub type BatchFactory = fn(&BatchSettings) -> Result<Box<dyn BatchStrategy>>;

pub fn registry() -> &'static Registry<BatchFactory> {
    static REGISTRY: OnceLock<Registry<BatchFactory>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut reg: Registry<BatchFactory> = Registry::new("batching mode");
        reg.register("variable", |s| {
            Ok(Box::new(VariableBatching::new(s.batch_size, s.sort_window)?))
        })
        .register("fixed", |s| Ok(Box::new(FixedBatching::new(s.batch_size, s.max_len)?)));
        reg
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariableBatching {
    batch_size: usize,
    sort_window: usize,
}

impl VariableBatching {
    pub fn new(batch_size: usize, sort_window: usize) -> Result<Self> {
        if batch_size == 0 || sort_window == 0 {
            return Err(Error::InvalidConfig(
                "variable batching needs batch_size >= 1 and sort_window >= 1".into(),
            ));
        }
        Ok(Self {
            batch_size,
            sort_window,
        })
    }
}

impl BatchStrategy for VariableBatching {
    fn name(&self) -> &'static str {
        "variable"
    }

    fn batch_size(&self) -> usize {
        self.batch_size
    }

    fn make_batches(&self, dataset: &[EncodedSequence], rng: &mut StreamRng) -> Result<Vec<PaddedBatch>> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(rng);
        let mut batches = Vec::with_capacity(dataset.len().div_ceil(self.batch_size));
        for window in order.chunks_mut(self.sort_window * self.batch_size) {
            window.sort_by_key(|&id| dataset[id].len());
            for chunk in window.chunks(self.batch_size) {
                batches.push(PaddedBatch::pack(dataset, chunk, None)?);
            }
        }
        batches.shuffle(rng);
        Ok(batches)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedBatching {
    batch_size: usize,
    max_len: usize,
}

impl FixedBatching {
    pub fn new(batch_size: usize, max_len: usize) -> Result<Self> {
        if batch_size == 0 || max_len == 0 {
            return Err(Error::InvalidConfig(
                "fixed batching needs batch_size >= 1 and max_len >= 1".into(),
            ));
        }
        Ok(Self { batch_size, max_len })
    }
}

impl BatchStrategy for FixedBatching {
    fn name(&self) -> &'static str {
        "fixed"
    }

    fn batch_size(&self) -> usize {
        self.batch_size
    }

    fn make_batches(&self, dataset: &[EncodedSequence], rng: &mut StreamRng) -> Result<Vec<PaddedBatch>> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(rng);
        order
            .chunks(self.batch_size)
            .map(|chunk| PaddedBatch::pack(dataset, chunk, Some(self.max_len)))
            .collect()
    }
}

/// Deterministic batches for scoring: samples sorted by length, no shuffling,
/// each batch padded to its own longest row.
pub fn scoring_batches(dataset: &[EncodedSequence], batch_size: usize) -> Result<Vec<PaddedBatch>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.sort_by_key(|&id| dataset[id].len());
    order
        .chunks(batch_size.max(1))
        .map(|chunk| PaddedBatch::pack(dataset, chunk, None))
        .collect()
}

/// Fraction of all cells across `batches` that are padding.
pub fn padding_waste(batches: &[PaddedBatch]) -> f64 {
    let total = computed_cells(batches);
    if total == 0 {
        return 0.0;
    }
    let padded: usize = batches.iter().map(PaddedBatch::padded_cells).sum();
    padded as f64 / total as f64
}

/// Total `rows x width` cells the network has to step through.
pub fn computed_cells(batches: &[PaddedBatch]) -> usize {
    batches.iter().map(PaddedBatch::cells).sum()
}
