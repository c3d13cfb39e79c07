//! Model variants with components switched off, trained under identical
//! seeds and data for side-by-side comparison.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetSplit, ProcessedExample};
use crate::embedding::Vocabulary;
use crate::error::Result;
use crate::model::{Ablation, ManConfig, ManParams};
use crate::train::{repeated_runs, RunResult, Spread, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Variant {
    pub name: &'static str,
    pub ablation: Ablation,
}

/// The full model and the five reduced variants.
pub fn standard_variants() -> Vec<Variant> {
    let none = Ablation::default();
    vec![
        Variant { name: "full", ablation: none },
        Variant {
            name: "w/o Pos-Attention",
            ablation: Ablation { disable_position_attention: true, ..none },
        },
        Variant {
            name: "w/o alpha-orth",
            ablation: Ablation { disable_alpha_orth: true, ..none },
        },
        Variant {
            name: "w/o beta-orth",
            ablation: Ablation { disable_beta_orth: true, ..none },
        },
        Variant {
            name: "w/o both orth",
            ablation: Ablation { disable_alpha_orth: true, disable_beta_orth: true, ..none },
        },
        Variant {
            name: "w/o L2",
            ablation: Ablation { disable_l2: true, ..none },
        },
    ]
}

impl Variant {
    pub fn apply(&self, base: &ManConfig) -> ManConfig {
        ManConfig {
            ablation: self.ablation,
            ..base.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub param_count: usize,
    pub runs: Vec<RunResult>,
    pub val_macro_f1: Spread,
    pub test_accuracy: Spread,
    pub test_macro_f1: Spread,
}

/// Trains every variant with the same seeds, data and vocabulary.
pub fn run_ablation(
    base: &ManConfig,
    settings: &TrainConfig,
    vocab: &Vocabulary,
    pretrained: Option<&Path>,
    data: &DatasetSplit<ProcessedExample>,
    variants: &[Variant],
) -> Result<Vec<AblationRow>> {
    variants
        .iter()
        .map(|v| {
            let config = v.apply(base);
            let census = ManParams::init(&config, vocab.len(), &mut ChaCha8Rng::seed_from_u64(0))?;
            let runs = repeated_runs(&config, settings, vocab, pretrained, data)?;
            let pick = |f: fn(&RunResult) -> f64| Spread::of(&runs.iter().map(f).collect::<Vec<_>>());
            Ok(AblationRow {
                variant: v.name.to_owned(),
                param_count: census.scalar_count(),
                val_macro_f1: pick(|r| r.validation.overall.macro_f1),
                test_accuracy: pick(|r| r.test.overall.accuracy),
                test_macro_f1: pick(|r| r.test.overall.macro_f1),
                runs,
            })
        })
        .collect()
}
