//! Review ingestion, preprocessing, splitting and batching.

mod batch;
mod ingest;
mod preprocess;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use batch::{pad_example, Batch, BatchIter};
pub use ingest::{ingest, parse_record};
pub use preprocess::{preprocess, PreprocessRules, MIN_TOKENS, STOPWORDS_EN};

use crate::embedding::Vocabulary;
use crate::error::{ManError, Result};

pub const RESTAURANT_ASPECTS: [&str; 4] = ["Food", "Service", "Value", "Atmosphere"];
pub const HOTEL_ASPECTS: [&str; 4] = ["Room", "Location", "Value", "Cleanliness"];

/// Aspect list for a named domain.
pub fn domain_aspects(domain: &str) -> Option<Vec<String>> {
    match domain {
        "restaurant" => Some(RESTAURANT_ASPECTS.map(String::from).to_vec()),
        "hotel" => Some(HOTEL_ASPECTS.map(String::from).to_vec()),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawReview {
    pub text: String,
    pub overall_rating: u8,
    /// One entry per configured aspect, `None` when unrated.
    pub aspect_ratings: Vec<Option<u8>>,
    pub domain: String,
}

/// Preprocessed review with binary labels, before vocabulary lookup.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedReview {
    pub tokens: Vec<String>,
    pub overall: u8,
    pub aspects: Vec<Option<u8>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessedExample {
    pub tokens: Vec<usize>,
    pub positions: Vec<usize>,
    /// True at real tokens, false at padding.
    pub mask: Vec<bool>,
    pub overall: u8,
    pub aspects: Vec<Option<u8>>,
}

impl ProcessedExample {
    pub fn encode(review: &TokenizedReview, vocab: &Vocabulary) -> Self {
        let tokens = vocab.encode(&review.tokens);
        let n = tokens.len();
        ProcessedExample {
            tokens,
            positions: (0..n).collect(),
            mask: vec![true; n],
            overall: review.overall,
            aspects: review.aspects.clone(),
        }
    }

    /// Number of unmasked tokens.
    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn decode<'v>(&self, vocab: &'v Vocabulary) -> Vec<&'v str> {
        self.tokens
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|(&t, _)| vocab.token(t))
            .collect()
    }
}

/// 1..3 stars are negative (0), 4..5 positive (1).
pub fn binarize(rating: u8) -> Result<u8> {
    match rating {
        1..=3 => Ok(0),
        4 | 5 => Ok(1),
        r => Err(ManError::Validation(format!("rating {r} is outside 1..5"))),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
    pub seed: u64,
}

impl<T> DatasetSplit<T> {
    pub fn map<U>(self, mut f: impl FnMut(T) -> U) -> DatasetSplit<U> {
        DatasetSplit {
            train: self.train.into_iter().map(&mut f).collect(),
            validation: self.validation.into_iter().map(&mut f).collect(),
            test: self.test.into_iter().map(&mut f).collect(),
            seed: self.seed,
        }
    }
}

/// Seeded shuffle followed by a contiguous 60/20/20 cut.
pub fn split<T>(mut examples: Vec<T>, seed: u64) -> Result<DatasetSplit<T>> {
    let n = examples.len();
    if n < 5 {
        return Err(ManError::Config(format!(
            "need at least 5 examples to split, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    examples.shuffle(&mut rng);
    let n_train = (n as f64 * 0.6).round() as usize;
    let n_val = (n as f64 * 0.2).round() as usize;
    let test = examples.split_off(n_train + n_val);
    let validation = examples.split_off(n_train);
    Ok(DatasetSplit {
        train: examples,
        validation,
        test,
        seed,
    })
}

/// Split plus a vocabulary built from the training part only.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub split: DatasetSplit<ProcessedExample>,
    pub vocab: Vocabulary,
    /// Reviews dropped for having too few tokens.
    pub dropped: usize,
}

pub fn prepare(
    reviews: &[RawReview],
    rules: &PreprocessRules,
    seed: u64,
    min_count: usize,
) -> Result<PreparedData> {
    let mut kept = Vec::with_capacity(reviews.len());
    for r in reviews {
        if let Some(t) = preprocess(r, rules)? {
            kept.push(t);
        }
    }
    let dropped = reviews.len() - kept.len();
    let mut prepared = prepare_tokenized(kept, seed, min_count)?;
    prepared.dropped = dropped;
    Ok(prepared)
}

/// Splits already preprocessed reviews and encodes them against a vocabulary
/// built from the training part.
pub fn prepare_tokenized(
    reviews: Vec<TokenizedReview>,
    seed: u64,
    min_count: usize,
) -> Result<PreparedData> {
    let parts = split(reviews, seed)?;
    let train_tokens: Vec<Vec<String>> = parts.train.iter().map(|r| r.tokens.clone()).collect();
    let vocab = Vocabulary::build(&train_tokens, min_count);
    let split = parts.map(|r| ProcessedExample::encode(&r, &vocab));
    Ok(PreparedData {
        split,
        vocab,
        dropped: 0,
    })
}

/// Preprocesses and encodes reviews against an existing vocabulary, keeping
/// the index of each surviving review.
pub fn encode_all(
    reviews: &[RawReview],
    rules: &PreprocessRules,
    vocab: &Vocabulary,
) -> Result<Vec<(usize, TokenizedReview, ProcessedExample)>> {
    let mut out = Vec::new();
    for (i, r) in reviews.iter().enumerate() {
        if let Some(t) = preprocess(r, rules)? {
            let e = ProcessedExample::encode(&t, vocab);
            out.push((i, t, e));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binarize_all_ratings() {
        let got: Vec<u8> = (1..=5).map(|r| binarize(r).unwrap()).collect();
        assert_eq!(got, vec![0, 0, 0, 1, 1]);
        assert!(binarize(0).is_err());
        assert!(binarize(6).is_err());
    }

    #[test]
    fn split_sizes() {
        let s = split((0..10).collect::<Vec<_>>(), 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (6, 2, 2));
        for n in [5usize, 9, 10, 101, 1000, 1003] {
            let s = split((0..n).collect::<Vec<_>>(), 3).unwrap();
            for (got, frac) in [(s.train.len(), 0.6), (s.validation.len(), 0.2), (s.test.len(), 0.2)] {
                assert!((got as f64 - frac * n as f64).abs() <= 1.0, "n={n}");
            }
            let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
        assert!(matches!(split(vec![1, 2, 3, 4], 0), Err(ManError::Config(_))));
    }

    #[test]
    fn split_seeding() {
        let data: Vec<usize> = (0..100).collect();
        assert_eq!(split(data.clone(), 5).unwrap(), split(data.clone(), 5).unwrap());
        assert_ne!(split(data.clone(), 5).unwrap().train, split(data, 6).unwrap().train);
    }

    fn raw(text: &str, overall: u8) -> RawReview {
        RawReview {
            text: text.into(),
            overall_rating: overall,
            aspect_ratings: vec![Some(overall), None],
            domain: String::new(),
        }
    }

    #[test]
    fn vocabulary_sees_only_training_tokens() {
        let reviews: Vec<RawReview> = (0..20)
            .map(|i| raw(&format!("uniqueword{i} tasty noodles broth"), 1 + (i % 5) as u8))
            .collect();
        let rules = PreprocessRules::new(32);
        let prepared = prepare(&reviews, &rules, 9, 1).unwrap();
        let v = &prepared.vocab;
        let rules_tok = |r: &RawReview| rules.tokenize(&r.text);
        let train_words: std::collections::HashSet<String> = prepared
            .split
            .train
            .iter()
            .flat_map(|e| e.decode(v).into_iter().map(str::to_owned))
            .collect();
        for e in prepared.split.validation.iter().chain(&prepared.split.test) {
            // Each held-out review's unique word is unknown to the vocabulary.
            assert_eq!(e.tokens[0], crate::embedding::UNK_ID);
        }
        assert!(train_words.iter().all(|w| v.get(w).is_some()));
        // Train examples decode back to their preprocessed tokens.
        for e in &prepared.split.train {
            let words = e.decode(v);
            let src = reviews
                .iter()
                .map(rules_tok)
                .find(|t| t[0] == words[0])
                .unwrap();
            assert_eq!(words, src);
        }
    }
}
