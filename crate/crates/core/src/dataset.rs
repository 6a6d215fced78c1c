//! Lead records and the JSON-lines dataset file format.
//!
//! One record per line: `{"text": ..., "label": 0|1, "features": [...], "rnn_score": ...}`.
//! `features` is optional; `rnn_score` appears only after score export.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadRecord {
    pub text: String,
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rnn_score: Option<f64>,
}

impl LeadRecord {
    pub fn new(text: impl Into<String>, label: u8) -> Self {
        Self {
            text: text.into(),
            label,
            features: None,
            rnn_score: None,
        }
    }

    fn validate(&self, line: usize) -> Result<()> {
        if self.text.is_empty() {
            return Err(Error::Data(format!("line {line}: empty text")));
        }
        if self.label > 1 {
            return Err(Error::Data(format!("line {line}: label must be 0 or 1, got {}", self.label)));
        }
        if let Some(f) = &self.features {
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("line {line}: non-finite feature")));
            }
        }
        Ok(())
    }
}

pub fn labels(records: &[LeadRecord]) -> Vec<f64> {
    records.iter().map(|r| f64::from(r.label)).collect()
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<LeadRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: LeadRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        record.validate(i + 1)?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(Error::Data(format!("{}: no records", path.display())));
    }
    Ok(records)
}

pub fn write_jsonl(path: impl AsRef<Path>, records: &[LeadRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record).map_err(|e| Error::Data(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_optional_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let mut a = LeadRecord::new("hi!!!", 1);
        a.features = Some(vec![0.5, -1.25]);
        let mut b = LeadRecord::new("ünïcode", 0);
        b.rnn_score = Some(0.125);
        write_jsonl(&path, &[a.clone(), b.clone()]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(r#"{"text":"hi!!!","label":1,"features":[0.5,-1.25]}"#));
        assert!(!text.lines().next().unwrap().contains("rnn_score"));
        assert_eq!(read_jsonl(&path).unwrap(), vec![a, b]);
    }

    #[test]
    fn bad_records_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(&path, "{\"text\":\"a\",\"label\":2}\n").unwrap();
        assert!(matches!(read_jsonl(&path), Err(Error::Data(_))));
        std::fs::write(&path, "{\"text\":\"\",\"label\":0}\n").unwrap();
        assert!(read_jsonl(&path).is_err());
        std::fs::write(&path, "not json\n").unwrap();
        assert!(read_jsonl(&path).is_err());
        std::fs::write(&path, "\n").unwrap();
        assert!(read_jsonl(&path).is_err());
        assert!(matches!(read_jsonl(dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
