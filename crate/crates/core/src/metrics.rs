//! Binary classification metrics. Any ratio with a zero denominator is 0.

use serde::{Deserialize, Serialize};

/// Counts indexed as `[label][prediction]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: [[u64; 2]; 2],
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Confusion {
    pub fn from_pairs(predictions: &[u8], labels: &[u8]) -> Self {
        assert_eq!(predictions.len(), labels.len(), "prediction/label length mismatch");
        let mut c = Confusion::default();
        for (&p, &l) in predictions.iter().zip(labels) {
            c.add(p, l);
        }
        c
    }

    pub fn add(&mut self, prediction: u8, label: u8) {
        self.counts[label as usize][prediction as usize] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        self.counts[0][0] + self.counts[1][1]
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.correct(), self.total())
    }

    pub fn precision(&self, class: usize) -> f64 {
        ratio(self.counts[class][class], self.counts[0][class] + self.counts[1][class])
    }

    pub fn recall(&self, class: usize) -> f64 {
        ratio(self.counts[class][class], self.counts[class][0] + self.counts[class][1])
    }

    pub fn f1(&self, class: usize) -> f64 {
        let p = self.precision(class);
        let r = self.recall(class);
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    /// Unweighted mean of both per-class F1 scores.
    pub fn macro_f1(&self) -> f64 {
        (self.f1(0) + self.f1(1)) / 2.0
    }

    pub fn summary(&self) -> Metrics {
        Metrics {
            accuracy: self.accuracy(),
            macro_f1: self.macro_f1(),
            precision: [self.precision(0), self.precision(1)],
            recall: [self.recall(0), self.recall(1)],
            f1: [self.f1(0), self.f1(1)],
            support: self.total(),
            confusion: *self,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub precision: [f64; 2],
    pub recall: [f64; 2],
    pub f1: [f64; 2],
    pub support: u64,
    pub confusion: Confusion,
}

pub fn metrics(predictions: &[u8], labels: &[u8]) -> Metrics {
    Confusion::from_pairs(predictions, labels).summary()
}

/// Metrics over the entries whose label is present.
pub fn masked_metrics(predictions: &[u8], labels: &[Option<u8>]) -> Metrics {
    assert_eq!(predictions.len(), labels.len(), "prediction/label length mismatch");
    let mut c = Confusion::default();
    for (&p, l) in predictions.iter().zip(labels) {
        if let Some(l) = *l {
            c.add(p, l);
        }
    }
    c.summary()
}
