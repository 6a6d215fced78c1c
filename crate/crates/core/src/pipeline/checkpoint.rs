//! Trained model persistence.
//!
//! A checkpoint is a directory with two files: `manifest.json` (format
//! version, model config, vocabulary, tensor table, provenance) and
//! `tensors.bin` (magic `CLRS` followed by little-endian `f32` data at the
//! offsets listed in the manifest).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Model, ModelConfig, ModelParams};
use crate::vocab::CharVocab;

pub const FORMAT_VERSION: u32 = 1;
pub const MAGIC: &[u8; 4] = b"CLRS";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TENSORS_FILE: &str = "tensors.bin";

/// Where a checkpoint came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the serialized training config.
    pub config_hash: String,
    /// Epoch whose parameters were kept (0 = untrained).
    pub epoch: usize,
    pub seed: u64,
    /// Word positions of the batch and dropout streams after the last epoch.
    pub batch_stream_pos: String,
    pub dropout_stream_pos: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: CharVocab,
    pub params: ModelParams<f32>,
    pub provenance: Provenance,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into `tensors.bin`.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config: ModelConfig,
    vocab: Vec<String>,
    tensors: Vec<TensorEntry>,
    provenance: Provenance,
}

impl Checkpoint {
    pub fn model(&self) -> Result<Model<f32>> {
        Model::new(self.config.clone(), self.params.clone())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut blob = MAGIC.to_vec();
        let mut tensors = Vec::new();
        for (name, shape, data) in self.params.named_tensors() {
            tensors.push(TensorEntry {
                name,
                shape,
                offset: blob.len(),
            });
            for v in data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            vocab: self.vocab.chars().iter().map(|c| c.to_string()).collect(),
            tensors,
            provenance: self.provenance.clone(),
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        let blob_path = dir.join(TENSORS_FILE);
        fs::write(&blob_path, blob).map_err(|e| Error::io(&blob_path, e))?;
        let manifest_path = dir.join(MANIFEST_FILE);
        fs::write(&manifest_path, json + "\n").map_err(|e| Error::io(&manifest_path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let raw: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::CorruptCheckpoint(format!("manifest: {e}")))?;
        let version = raw
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::CorruptCheckpoint("manifest has no format_version".into()))?;
        if version != u64::from(FORMAT_VERSION) {
            return Err(Error::UnsupportedVersion {
                found: version as u32,
                expected: FORMAT_VERSION,
            });
        }
        let manifest: Manifest =
            serde_json::from_value(raw).map_err(|e| Error::CorruptCheckpoint(format!("manifest: {e}")))?;
        manifest.config.validate()?;

        let chars = manifest
            .vocab
            .iter()
            .map(|s| {
                let mut it = s.chars();
                match (it.next(), it.next()) {
                    (Some(c), None) => Ok(c),
                    _ => Err(Error::CorruptCheckpoint(format!("vocab entry {s:?} is not one character"))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let vocab = CharVocab::from_chars(chars)?;
        if vocab.size() != manifest.config.vocab_size {
            return Err(Error::VocabMismatch(format!(
                "vocabulary has {} entries, model expects {}",
                vocab.size(),
                manifest.config.vocab_size
            )));
        }

        let blob_path = dir.join(TENSORS_FILE);
        let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        if blob.len() < MAGIC.len() || &blob[..MAGIC.len()] != MAGIC {
            return Err(Error::BadMagic);
        }

        let mut params = ModelParams::<f32>::zeros(&manifest.config);
        let expected = params.named_shapes();
        if expected.len() != manifest.tensors.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "{} tensors listed, model needs {}",
                manifest.tensors.len(),
                expected.len()
            )));
        }
        let mut end = MAGIC.len();
        for ((entry, (name, shape)), slot) in manifest.tensors.iter().zip(&expected).zip(params.tensors_mut()) {
            if &entry.name != name || &entry.shape != shape {
                return Err(Error::CorruptCheckpoint(format!(
                    "tensor {} {:?} does not match expected {name} {shape:?}",
                    entry.name, entry.shape
                )));
            }
            let bytes = blob
                .get(entry.offset..entry.offset + 4 * slot.len())
                .ok_or_else(|| Error::CorruptCheckpoint(format!("tensor {name} runs past end of data")))?;
            for (dst, chunk) in slot.iter_mut().zip(bytes.chunks_exact(4)) {
                *dst = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            }
            end = end.max(entry.offset + bytes.len());
        }
        if end != blob.len() {
            return Err(Error::CorruptCheckpoint("trailing bytes in tensor data".into()));
        }
        params.ensure_finite()?;
        Ok(Self {
            config: manifest.config,
            vocab,
            params,
            provenance: manifest.provenance,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn sample() -> Checkpoint {
        let vocab = CharVocab::build(["hello, world!"]).unwrap();
        let config = ModelConfig {
            vocab_size: vocab.size(),
            num_layers: 2,
            hidden_units: 3,
            dropout_rate: 0.3,
            embedding_dim: Some(4),
        };
        let params = ModelParams::init(&config, &mut stream(1, "init"));
        Checkpoint {
            config,
            vocab,
            params,
            provenance: Provenance {
                config_hash: "abc".into(),
                epoch: 3,
                seed: 1,
                batch_stream_pos: "10".into(),
                dropout_stream_pos: "20".into(),
            },
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ck = sample();
        ck.save(dir.path()).unwrap();
        assert_eq!(Checkpoint::load(dir.path()).unwrap(), ck);
    }

    #[test]
    fn corruption_is_reported_distinctly() {
        let dir = tempfile::tempdir().unwrap();
        sample().save(dir.path()).unwrap();
        let blob_path = dir.path().join(TENSORS_FILE);
        let blob = fs::read(&blob_path).unwrap();

        fs::write(&blob_path, &blob[..blob.len() - 3]).unwrap();
        assert!(matches!(Checkpoint::load(dir.path()), Err(Error::CorruptCheckpoint(_))));

        let mut bad = blob.clone();
        bad[0] = b'X';
        fs::write(&blob_path, &bad).unwrap();
        assert!(matches!(Checkpoint::load(dir.path()), Err(Error::BadMagic)));
        fs::write(&blob_path, &blob).unwrap();

        let manifest_path = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path).unwrap();
        fs::write(&manifest_path, text.replace("\"format_version\": 1", "\"format_version\": 9")).unwrap();
        assert!(matches!(
            Checkpoint::load(dir.path()),
            Err(Error::UnsupportedVersion { found: 9, expected: 1 })
        ));
        fs::write(&manifest_path, "{ not json").unwrap();
        assert!(matches!(Checkpoint::load(dir.path()), Err(Error::CorruptCheckpoint(_))));
    }
}
