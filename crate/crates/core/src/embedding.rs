//! Vocabulary and word/position embedding tables.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamSet, Tape, Var};
use crate::error::{ManError, Result};
use crate::tensor::Tensor;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Half-width of the uniform initializer for unseen words and positions.
pub const INIT_RANGE: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Ids ordered by descending frequency, ties broken lexicographically.
    /// Tokens seen fewer than `min_count` times are left out.
    pub fn build<S: AsRef<str>>(corpus: &[Vec<S>], min_count: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for seq in corpus {
            for t in seq {
                *counts.entry(t.as_ref()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count.max(1))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let tokens = [PAD_TOKEN, UNK_TOKEN]
            .into_iter()
            .chain(kept.into_iter().map(|(t, _)| t))
            .map(str::to_owned)
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, index }
    }

    /// Rebuilds the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }
}

/// Word table `V×d` and position table `L_max×d`, both living in a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmbeddingTables {
    pub word: ParamId,
    pub position: ParamId,
    pub dim: usize,
    pub max_len: usize,
}

impl EmbeddingTables {
    /// Random tables drawn from U(-0.25, 0.25); the padding row is zero and frozen.
    pub fn init<R: Rng>(
        params: &mut ParamSet,
        vocab_size: usize,
        dim: usize,
        max_len: usize,
        rng: &mut R,
    ) -> Self {
        let mut word = uniform(vocab_size, dim, INIT_RANGE, rng);
        let position = uniform(max_len, dim, INIT_RANGE, rng);
        word.values_mut()[PAD_ID * dim..(PAD_ID + 1) * dim].fill(0.0);
        let word = params.add("embedding.word", word);
        let position = params.add("embedding.position", position);
        params.freeze_row(word, PAD_ID);
        EmbeddingTables {
            word,
            position,
            dim,
            max_len,
        }
    }

    /// Like [`EmbeddingTables::init`], then copies every row found in a
    /// whitespace-separated text file (`token v1 .. vd` per line).
    pub fn load_pretrained<R: Rng>(
        path: impl AsRef<Path>,
        vocab: &Vocabulary,
        params: &mut ParamSet,
        dim: usize,
        max_len: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| ManError::io(path, e))?;
        let tables = Self::init(params, vocab.len(), dim, max_len, rng);
        let word = params.get_mut(tables.word);
        let mut row = Vec::with_capacity(dim);
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| ManError::io(path, e))?;
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else { continue };
            row.clear();
            for f in fields {
                let v: f64 = f.parse().map_err(|_| ManError::Parse {
                    line: lineno + 1,
                    msg: format!("not a number: {f:?}"),
                })?;
                row.push(v);
            }
            if row.len() != dim {
                return Err(ManError::Config(format!(
                    "embedding file line {} has width {}, expected {dim}",
                    lineno + 1,
                    row.len()
                )));
            }
            if let Some(id) = vocab.get(token) {
                if id != PAD_ID {
                    word.values_mut()[id * dim..(id + 1) * dim].copy_from_slice(&row);
                }
            }
        }
        Ok(tables)
    }

    pub fn word_row<'a>(&self, params: &'a ParamSet, id: usize) -> &'a [f64] {
        params.get(self.word).row(id)
    }
}

fn uniform<R: Rng>(rows: usize, cols: usize, range: f64, rng: &mut R) -> Tensor {
    let vals = (0..rows * cols)
        .map(|_| rng.gen_range(-range..=range))
        .collect();
    Tensor::matrix(rows, cols, vals).expect("shape matches")
}

/// Row `t` of the result is `word[tokens[t]] ‖ position[t]`, shape `T×2d`.
pub fn embed_sequence(tape: &mut Tape, tables: &EmbeddingTables, tokens: &[usize]) -> Result<Var> {
    if tokens.len() > tables.max_len {
        return Err(ManError::Length {
            len: tokens.len(),
            max: tables.max_len,
        });
    }
    if tokens.is_empty() {
        return Err(ManError::shape("cannot embed an empty sequence"));
    }
    let positions: Vec<usize> = (0..tokens.len()).collect();
    let words = tape.lookup(tables.word, tokens)?;
    let pos = tape.lookup(tables.position, &positions)?;
    tape.concat(&[words, pos], 1)
}
