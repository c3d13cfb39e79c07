use std::collections::HashSet;

use rust_stemmers::{Algorithm, Stemmer};

use super::{binarize, RawReview, TokenizedReview};
use crate::error::Result;

/// Shipped English stop-word list, one word per line, `#` comments.
pub const STOPWORDS_EN: &str = include_str!("../../data/stopwords_en.txt");

/// Reviews keeping fewer tokens than this after filtering are dropped.
pub const MIN_TOKENS: usize = 3;

pub struct PreprocessRules {
    stopwords: HashSet<String>,
    stemmer: Stemmer,
    pub min_tokens: usize,
    pub max_len: usize,
}

impl PreprocessRules {
    pub fn new(max_len: usize) -> Self {
        let stopwords = STOPWORDS_EN
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_owned)
            .collect();
        PreprocessRules {
            stopwords,
            stemmer: Stemmer::create(Algorithm::English),
            min_tokens: MIN_TOKENS,
            max_len,
        }
    }

    pub fn is_stopword(&self, w: &str) -> bool {
        self.stopwords.contains(w)
    }

    /// Lowercase, split on non-alphanumeric runs, drop stop words, stem.
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        text.to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty() && !self.is_stopword(w))
            .map(|w| self.stemmer.stem(w).into_owned())
            .collect()
    }
}

/// Tokenizes and binarizes one review. Returns `Ok(None)` when too few
/// tokens survive.
pub fn preprocess(review: &RawReview, rules: &PreprocessRules) -> Result<Option<TokenizedReview>> {
    let mut tokens = rules.tokenize(&review.text);
    if tokens.len() < rules.min_tokens {
        return Ok(None);
    }
    tokens.truncate(rules.max_len);
    let aspects = review
        .aspect_ratings
        .iter()
        .map(|r| r.map(binarize).transpose())
        .collect::<Result<_>>()?;
    Ok(Some(TokenizedReview {
        tokens,
        overall: binarize(review.overall_rating)?,
        aspects,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn review(text: &str) -> RawReview {
        RawReview {
            text: text.into(),
            overall_rating: 4,
            aspect_ratings: vec![Some(2), None],
            domain: "restaurant".into(),
        }
    }

    #[test]
    fn short_review_dropped() {
        let rules = PreprocessRules::new(256);
        assert!(rules.is_stopword("the") && rules.is_stopword("was"));
        assert_eq!(rules.tokenize("The food was GREAT!!"), vec!["food", "great"]);
        assert!(preprocess(&review("The food was GREAT!!"), &rules).unwrap().is_none());
    }

    #[test]
    fn content_tokens_survive() {
        let rules = PreprocessRules::new(256);
        let r = preprocess(&review("Great pizza, terrible service, long wait"), &rules)
            .unwrap()
            .unwrap();
        assert_eq!(r.tokens, vec!["great", "pizza", "terribl", "servic", "long", "wait"]);
        assert_eq!(r.overall, 1);
        assert_eq!(r.aspects, vec![Some(0), None]);
    }

    #[test]
    fn deterministic_and_truncated() {
        let rules = PreprocessRules::new(3);
        let text = "amazing crispy dumplings served quickly friendly staff";
        let a = preprocess(&review(text), &rules).unwrap().unwrap();
        let b = preprocess(&review(text), &rules).unwrap().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.tokens.len(), 3);
    }
}
