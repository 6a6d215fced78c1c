//! Scoring trained checkpoints.

use serde::{Deserialize, Serialize};

use crate::dataset::{labels, LeadRecord};
use crate::error::Result;
use crate::metrics::{bucket_report, BucketReport, EvalReport, DEFAULT_BOUNDARIES};

use super::checkpoint::Checkpoint;
use super::{encode_records, score_sequences};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: EvalReport,
    pub buckets: BucketReport,
}

/// Eval-phase probabilities for `records`, in input order.
pub fn score_records(checkpoint: &Checkpoint, records: &[LeadRecord]) -> Result<Vec<f64>> {
    let seqs = encode_records(&checkpoint.vocab, records)?;
    score_sequences(&checkpoint.model()?, &seqs)
}

/// Correlation, loss and the score-bucket table for a labelled split.
pub fn evaluate(checkpoint: &Checkpoint, records: &[LeadRecord]) -> Result<Evaluation> {
    let scores = score_records(checkpoint, records)?;
    let outcomes = labels(records);
    Ok(Evaluation {
        report: EvalReport::from_scores(&scores, &outcomes)?,
        buckets: bucket_report(&scores, &outcomes, &DEFAULT_BOUNDARIES)?,
    })
}

/// Copies `records` with `rnn_score` filled in.
pub fn export_scores(checkpoint: &Checkpoint, records: &[LeadRecord]) -> Result<Vec<LeadRecord>> {
    let scores = score_records(checkpoint, records)?;
    Ok(records
        .iter()
        .zip(scores)
        .map(|(r, s)| LeadRecord {
            rnn_score: Some(s),
            ..r.clone()
        })
        .collect())
}
