//! Self-describing JSON archive: model configuration, vocabulary and every
//! parameter tensor with its name and shape. Values round-trip bit-exactly.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{Vocabulary, PAD_ID, PAD_TOKEN, UNK_ID, UNK_TOKEN};
use crate::error::{ManError, Result};
use crate::model::{ManConfig, ManParams};

pub const FORMAT: &str = "man-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct StoredTensor {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Archive {
    format: String,
    version: u32,
    config: ManConfig,
    vocabulary: Vec<String>,
    params: Vec<StoredTensor>,
}

/// A trained model together with everything needed to run it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ManConfig,
    pub vocab: Vocabulary,
    pub model: ManParams,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let ps = &self.model.params;
        let archive = Archive {
            format: FORMAT.into(),
            version: VERSION,
            config: self.config.clone(),
            vocabulary: self.vocab.tokens().to_vec(),
            params: ps
                .ids()
                .map(|id| StoredTensor {
                    name: ps.name(id).to_owned(),
                    shape: ps.get(id).shape().to_vec(),
                    values: ps.get(id).values().to_vec(),
                })
                .collect(),
        };
        serde_json::to_string(&archive)
            .map_err(|e| ManError::Contract(format!("cannot serialize checkpoint: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let archive: Archive = serde_json::from_str(text).map_err(|e| ManError::Parse {
            line: e.line(),
            msg: format!("checkpoint: {e}"),
        })?;
        if archive.format != FORMAT || archive.version != VERSION {
            return Err(ManError::Validation(format!(
                "unsupported checkpoint {} v{}",
                archive.format, archive.version
            )));
        }
        if archive.vocabulary.get(PAD_ID).map(String::as_str) != Some(PAD_TOKEN)
            || archive.vocabulary.get(UNK_ID).map(String::as_str) != Some(UNK_TOKEN)
        {
            return Err(ManError::Validation(
                "checkpoint vocabulary must start with the padding and unknown tokens".into(),
            ));
        }
        let vocab = Vocabulary::from_tokens(archive.vocabulary);
        // Structure comes from the config; every value is then overwritten.
        let mut model = ManParams::init(&archive.config, vocab.len(), &mut ChaCha8Rng::seed_from_u64(0))?;
        if archive.params.len() != model.params.len() {
            return Err(ManError::Validation(format!(
                "checkpoint holds {} tensors, the configured model has {}",
                archive.params.len(),
                model.params.len()
            )));
        }
        for stored in archive.params {
            let id = model.params.find(&stored.name).ok_or_else(|| {
                ManError::Validation(format!("checkpoint tensor {:?} is not part of the model", stored.name))
            })?;
            let t = model.params.get_mut(id);
            if t.shape() != stored.shape.as_slice() || stored.values.len() != t.len() {
                return Err(ManError::Validation(format!(
                    "checkpoint tensor {:?} has shape {:?}, expected {:?}",
                    stored.name,
                    stored.shape,
                    t.shape()
                )));
            }
            t.values_mut().copy_from_slice(&stored.values);
        }
        Ok(Checkpoint {
            config: archive.config,
            vocab,
            model,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| ManError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| ManError::io(path, e))?;
        Self::from_json(&text)
    }
}
