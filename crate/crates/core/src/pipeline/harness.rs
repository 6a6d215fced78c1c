//! Comparison runs: embedding ablation, batching modes, and tabular vs
//! tabular-plus-score downstream models.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{format_p, format_r, EvalReport};
use crate::rng::stream;

use super::downstream::train_downstream;
use super::evaluate::{export_scores, score_records};
use super::train::{train, TrainConfig};
use super::{map_items, Splits};

/// Left-aligns the first column and right-aligns the rest.
pub fn render_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(headers.to_vec());
    for row in rows {
        out += &line(row.iter().map(String::as_str).collect());
    }
    out
}

/// One trained-and-tested configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub label: String,
    pub test: EvalReport,
    pub best_epoch: usize,
    pub epochs_to_convergence: usize,
    pub computed_cells: usize,
    pub padding_waste: f64,
    pub wall_seconds: f64,
    /// Test-split scores in input order.
    #[serde(skip)]
    pub test_scores: Vec<f64>,
}

fn run_arm(label: &str, config: &TrainConfig, splits: &Splits) -> Result<ArmResult> {
    let (checkpoint, log) = train(config, &splits.train, &splits.valid)?;
    let test_scores = score_records(&checkpoint, &splits.test)?;
    let test = EvalReport::from_scores(&test_scores, &crate::dataset::labels(&splits.test))?;
    let cells = log.computed_cells();
    let waste = if cells == 0 {
        0.0
    } else {
        let real: usize = splits.train.iter().map(|r| r.text.chars().count().min(truncation(config))).sum();
        1.0 - (real * log.epochs.len()) as f64 / cells as f64
    };
    Ok(ArmResult {
        label: label.to_string(),
        test,
        best_epoch: log.best_epoch,
        epochs_to_convergence: log.epochs_to_convergence(),
        computed_cells: cells,
        padding_waste: waste,
        wall_seconds: log.wall_seconds(),
        test_scores,
    })
}

fn truncation(config: &TrainConfig) -> usize {
    if config.batching.batching == "fixed" {
        config.batching.max_len
    } else {
        usize::MAX
    }
}

fn run_arms(arms: Vec<(String, TrainConfig)>, splits: &Splits) -> Result<Vec<ArmResult>> {
    map_items(&arms, |(label, config)| run_arm(label, config, splits))
        .into_iter()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub arms: Vec<ArmResult>,
}

pub const ARM_NONE: &str = "None";
pub const ARM_UNTRAINED: &str = "Present, untrained";
pub const ARM_PRETRAINED: &str = "Present, pre-trained";

impl AblationReport {
    pub fn arm(&self, label: &str) -> Option<&ArmResult> {
        self.arms.iter().find(|a| a.label == label)
    }

    pub fn to_table(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .arms
            .iter()
            .map(|a| vec![a.label.clone(), format_r(a.test.r), format_p(a.test.p_value)])
            .collect();
        render_table(&["Embedding layer", "Pearson's R", "P-value"], &rows)
    }
}

/// Trains the no-embedding arm, a randomly initialized embedding of width
/// `untrained_dim`, and (when `pretrained` is given) an embedding loaded from
/// file. All arms share the seed, so their non-embedding tensors start equal.
pub fn run_embedding_ablation(
    base: &TrainConfig,
    splits: &Splits,
    untrained_dim: usize,
    pretrained: Option<&Path>,
) -> Result<AblationReport> {
    if let Some(path) = pretrained {
        if !path.is_file() {
            return Err(Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "embedding file not found"),
            ));
        }
    }
    let arm = |dim: Option<usize>, file: Option<PathBuf>| {
        let mut c = base.clone();
        c.model.embedding_dim = dim;
        c.model.embedding_file = file;
        c
    };
    let mut arms = vec![
        (ARM_NONE.to_string(), arm(None, None)),
        (ARM_UNTRAINED.to_string(), arm(Some(untrained_dim), None)),
    ];
    if let Some(path) = pretrained {
        arms.push((ARM_PRETRAINED.to_string(), arm(None, Some(path.to_path_buf()))));
    }
    Ok(AblationReport {
        arms: run_arms(arms, splits)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchingReport {
    pub arms: Vec<ArmResult>,
}

impl BatchingReport {
    pub fn to_table(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .arms
            .iter()
            .map(|a| {
                vec![
                    a.label.clone(),
                    format_r(a.test.r),
                    format_p(a.test.p_value),
                    a.epochs_to_convergence.to_string(),
                    a.computed_cells.to_string(),
                    format!("{:.1}%", 100.0 * a.padding_waste),
                    format!("{:.1}", a.wall_seconds),
                ]
            })
            .collect();
        render_table(
            &[
                "Batch size",
                "Pearson's R",
                "P-value",
                "Epochs to Convergence",
                "Computed cells",
                "Padding",
                "Wall time (s)",
            ],
            &rows,
        )
    }
}

/// Trains the same model with fixed-width and variable-width batches.
pub fn run_batching_comparison(base: &TrainConfig, splits: &Splits) -> Result<BatchingReport> {
    let mode = |name: &str| {
        let mut c = base.clone();
        c.batching.batching = name.to_string();
        c
    };
    let arms = vec![
        (format!("Fixed ({})", base.batching.max_len), mode("fixed")),
        ("Variable".to_string(), mode("variable")),
    ];
    Ok(BatchingReport {
        arms: run_arms(arms, splits)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionRun {
    pub seed: u64,
    pub benchmark: EvalReport,
    pub fused: EvalReport,
}

impl FusionRun {
    pub fn fused_wins(&self) -> bool {
        match (self.benchmark.r, self.fused.r) {
            (Some(b), Some(f)) => f > b,
            (None, Some(_)) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionReport {
    pub runs: Vec<FusionRun>,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    v.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

impl FusionReport {
    pub fn wins(&self) -> usize {
        self.runs.iter().filter(|r| r.fused_wins()).count()
    }

    pub fn to_table(&self) -> String {
        let summary = vec![
            vec![
                "Benchmark".to_string(),
                format_r(mean(self.runs.iter().map(|r| r.benchmark.r))),
            ],
            vec![
                "Includes RNN's Output".to_string(),
                format_r(mean(self.runs.iter().map(|r| r.fused.r))),
            ],
        ];
        let per_seed: Vec<Vec<String>> = self
            .runs
            .iter()
            .map(|r| {
                vec![
                    r.seed.to_string(),
                    format_r(r.benchmark.r),
                    format_r(r.fused.r),
                    format!("{:.4}", r.benchmark.mean_loss),
                    format!("{:.4}", r.fused.mean_loss),
                ]
            })
            .collect();
        format!(
            "{}\n{}\nfused model ahead in {} of {} seeds\n",
            render_table(&["Model", "Mean Pearson's R"], &summary),
            render_table(
                &["Seed", "Benchmark R", "Fused R", "Benchmark loss", "Fused loss"],
                &per_seed
            ),
            self.wins(),
            self.runs.len()
        )
    }
}

/// For each seed, splits the scored pool in half and fits the downstream
/// model with and without the score column.
pub fn fusion_from_scored(pool: &[crate::dataset::LeadRecord], seeds: &[u64], l2: f64) -> Result<FusionReport> {
    if pool.len() < 8 {
        return Err(Error::TooFewSamples {
            needed: 8,
            got: pool.len(),
        });
    }
    let runs = map_items(seeds, |&seed| {
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut stream(seed, "fusion.split"));
        let (a, b) = order.split_at(pool.len() / 2);
        let pick = |ids: &[usize]| ids.iter().map(|&i| pool[i].clone()).collect::<Vec<_>>();
        let (fit, held_out) = (pick(a), pick(b));
        Ok(FusionRun {
            seed,
            benchmark: train_downstream(&fit, &held_out, false, l2)?.1,
            fused: train_downstream(&fit, &held_out, true, l2)?.1,
        })
    });
    Ok(FusionReport {
        runs: runs.into_iter().collect::<Result<_>>()?,
    })
}

/// Trains the LSTM on the training split, scores the validation and test
/// records, and runs [`fusion_from_scored`] on that pool.
pub fn run_fusion_comparison(config: &TrainConfig, splits: &Splits, seeds: &[u64], l2: f64) -> Result<FusionReport> {
    let (checkpoint, _) = train(config, &splits.train, &splits.valid)?;
    let mut pool = export_scores(&checkpoint, &splits.valid)?;
    pool.extend(export_scores(&checkpoint, &splits.test)?);
    fusion_from_scored(&pool, seeds, l2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_alignment() {
        let t = render_table(&["A", "Long header"], &[vec!["row".into(), "1".into()]]);
        assert_eq!(t, "A    Long header\nrow            1\n");
    }
}
