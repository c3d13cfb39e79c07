//! Seeded toy review corpora whose labels follow known rules. Used by the
//! test suites, the benchmark and the README walkthrough.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{PreprocessRules, RawReview, TokenizedReview, RESTAURANT_ASPECTS};

/// `(positive, negative)` cue words per restaurant aspect.
pub const CUES: [(&[&str], &[&str]); 4] = [
    (
        &["delicious", "tasty", "flavorful", "fresh"],
        &["bland", "stale", "soggy", "greasy"],
    ),
    (
        &["friendly", "attentive", "prompt", "helpful"],
        &["rude", "careless", "dismissive", "unhelpful"],
    ),
    (
        &["cheap", "affordable", "bargain", "generous"],
        &["overpriced", "pricey", "costly", "stingy"],
    ),
    (
        &["cozy", "charming", "quiet", "lively"],
        &["noisy", "cramped", "dingy", "gloomy"],
    ),
];

/// Words that carry no label information.
pub const FILLER: [&str; 16] = [
    "restaurant", "dinner", "table", "visited", "friday", "ordered", "menu", "evening", "plate",
    "kitchen", "night", "friends", "downtown", "booked", "arrived", "corner",
];

fn review<R: Rng>(rng: &mut R, labels: &[u8], cues_per_aspect: usize, filler: usize) -> Vec<String> {
    let mut words: Vec<&str> = Vec::new();
    for (k, &l) in labels.iter().enumerate() {
        let (pos, neg) = CUES[k];
        let pool = if l == 1 { pos } else { neg };
        for _ in 0..cues_per_aspect {
            words.push(pool.choose(rng).expect("non-empty"));
        }
    }
    for _ in 0..filler {
        words.push(FILLER.choose(rng).expect("non-empty"));
    }
    words.shuffle(rng);
    words.into_iter().map(String::from).collect()
}

/// Two-aspect corpus (food, service) with one cue word per aspect and four
/// filler words. The overall label is positive only when both aspects are.
pub fn overfit_corpus(n: usize, seed: u64) -> Vec<TokenizedReview> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            // Cycle through all label combinations so every class is present.
            let labels = [(i % 2) as u8, ((i / 2) % 2) as u8];
            TokenizedReview {
                tokens: review(&mut rng, &labels, 1, 4),
                overall: labels[0] & labels[1],
                aspects: labels.iter().map(|&l| Some(l)).collect(),
            }
        })
        .collect()
}

/// Four-aspect corpus where the overall label is the aspect majority, with
/// food breaking two-two ties, flipped with probability `noise`.
/// Aspect labels therefore carry most of the information the overall head
/// needs.
pub fn aspect_driven_corpus(n: usize, noise: f64, seed: u64) -> Vec<TokenizedReview> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let labels: Vec<u8> = (0..4).map(|_| u8::from(rng.gen_bool(0.5))).collect();
            let positives: u8 = labels.iter().sum();
            let mut overall = u8::from(positives >= 3 || (positives == 2 && labels[0] == 1));
            let tokens = review(&mut rng, &labels, 1, 6);
            if rng.gen_bool(noise) {
                overall = 1 - overall;
            }
            TokenizedReview {
                tokens,
                overall,
                aspects: labels.into_iter().map(Some).collect(),
            }
        })
        .collect()
}

/// Two-aspect corpus (food, service) in which the overall label always
/// follows service. Tokens are run through the standard preprocessing so
/// free text such as "the food was good but the service was terrible" maps
/// onto the same vocabulary.
pub fn service_led_corpus(n: usize, seed: u64) -> Vec<TokenizedReview> {
    const FOOD: (&[&str], &[&str]) = (&["good", "tasty", "delicious", "fresh"], &["bland", "stale", "soggy", "greasy"]);
    const SERVICE: (&[&str], &[&str]) =
        (&["friendly", "attentive", "quick", "helpful"], &["terrible", "rude", "slow", "careless"]);
    const NEUTRAL: [&str; 10] =
        ["food", "service", "wait", "long", "time", "table", "dinner", "night", "ordered", "menu"];
    let rules = PreprocessRules::new(64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let (food, service) = ((i % 2) as u8, ((i / 2) % 2) as u8);
            let pick = |rng: &mut ChaCha8Rng, (pos, neg): (&[&'static str], &[&'static str]), l: u8| {
                *(if l == 1 { pos } else { neg }).choose(rng).expect("non-empty")
            };
            let mut words = vec![pick(&mut rng, FOOD, food), pick(&mut rng, SERVICE, service)];
            for _ in 0..rng.gen_range(3..7) {
                words.push(NEUTRAL.choose(&mut rng).expect("non-empty"));
            }
            words.shuffle(&mut rng);
            TokenizedReview {
                tokens: rules.tokenize(&words.join(" ")),
                overall: service,
                aspects: vec![Some(food), Some(service)],
            }
        })
        .collect()
}

/// Aspect names matching the cue table for the first `k` aspects.
pub fn aspect_names(k: usize) -> Vec<String> {
    RESTAURANT_ASPECTS[..k].iter().map(|s| s.to_string()).collect()
}

/// Turns a synthetic review into an ingestible record: text is the tokens
/// joined by spaces, positive labels become 5 stars and negative ones 2.
pub fn to_raw(review: &TokenizedReview) -> RawReview {
    let stars = |l: u8| if l == 1 { 5 } else { 2 };
    RawReview {
        text: review.tokens.join(" "),
        overall_rating: stars(review.overall),
        aspect_ratings: review.aspects.iter().map(|a| a.map(stars)).collect(),
        domain: "restaurant".into(),
    }
}

/// One JSON record per line in the ingestion format.
pub fn to_jsonl(reviews: &[RawReview], aspects: &[String]) -> String {
    let mut out = String::new();
    for r in reviews {
        let ratings: serde_json::Map<String, serde_json::Value> = aspects
            .iter()
            .zip(&r.aspect_ratings)
            .map(|(a, v)| (a.clone(), v.map_or(serde_json::Value::Null, Into::into)))
            .collect();
        let rec = serde_json::json!({
            "text": r.text,
            "overall": r.overall_rating,
            "aspects": ratings,
            "domain": r.domain,
        });
        out.push_str(&rec.to_string());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{parse_record, preprocess};

    #[test]
    fn overfit_corpus_rules() {
        let c = overfit_corpus(64, 1);
        assert_eq!(c.len(), 64);
        for r in &c {
            assert_eq!(r.tokens.len(), 6);
            let a = [r.aspects[0].unwrap(), r.aspects[1].unwrap()];
            assert_eq!(r.overall, a[0] & a[1]);
            let food_cue = if a[0] == 1 { CUES[0].0 } else { CUES[0].1 };
            assert!(r.tokens.iter().any(|t| food_cue.contains(&t.as_str())));
        }
        assert_eq!(c, overfit_corpus(64, 1));
    }

    #[test]
    fn cue_words_survive_preprocessing() {
        let rules = PreprocessRules::new(64);
        let all: Vec<&str> = CUES
            .iter()
            .flat_map(|(p, n)| p.iter().chain(n.iter()))
            .chain(FILLER.iter())
            .copied()
            .collect();
        for w in &all {
            assert_eq!(rules.tokenize(w).len(), 1, "{w}");
        }
        let stems: std::collections::HashSet<String> =
            CUES.iter().flat_map(|(p, n)| p.iter().chain(n.iter())).map(|w| rules.tokenize(w).remove(0)).collect();
        assert_eq!(stems.len(), 32, "cue stems must stay distinct");
    }

    #[test]
    fn service_led_overall_follows_service() {
        let c = service_led_corpus(40, 3);
        for r in &c {
            assert_eq!(Some(r.overall), r.aspects[1]);
            assert!(r.tokens.len() >= 5);
        }
        assert!(c.iter().any(|r| r.aspects[0] != r.aspects[1]));
    }

    #[test]
    fn jsonl_round_trip() {
        let aspects = aspect_names(2);
        let raws: Vec<RawReview> = overfit_corpus(5, 2).iter().map(to_raw).collect();
        let text = to_jsonl(&raws, &aspects);
        let rules = PreprocessRules::new(64);
        for (i, line) in text.lines().enumerate() {
            let parsed = parse_record(line, i + 1, &aspects).unwrap();
            assert_eq!(parsed, raws[i]);
            assert!(preprocess(&parsed, &rules).unwrap().is_some());
        }
    }
}
