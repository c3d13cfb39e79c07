//! Mini-batch training, evaluation, early stopping and repeated runs.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Grads, ParamSet, Tape};
use crate::data::{BatchIter, DatasetSplit, ProcessedExample};
use crate::embedding::{EmbeddingTables, Vocabulary};
use crate::error::{ManError, Result};
use crate::exec::Execution;
use crate::metrics::{masked_metrics, metrics, Metrics};
use crate::model::{data_loss, forward, l2_penalty, predict, ForwardOutput, LossTerms, ManConfig, ManParams};
use crate::optim::{AdamConfig, Optimizer, OptimizerKind};

/// Offset mixed into the seed for the batch-order generator so it does not
/// replay the initialization stream.
const SHUFFLE_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    /// Independent runs with derived seeds when reporting spread.
    pub repeats: usize,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            adam: AdamConfig::default(),
            epochs: 30,
            batch_size: 32,
            seed: 42,
            patience: 5,
            repeats: 1,
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        if !(a.learning_rate > 0.0 && a.learning_rate.is_finite()) {
            return Err(ManError::Config(format!(
                "learning_rate must be positive, got {}",
                a.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return Err(ManError::Config("beta1 and beta2 must lie in [0, 1)".into()));
        }
        if a.eps.is_nan() || a.eps <= 0.0 {
            return Err(ManError::Config("eps must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.repeats == 0 {
            return Err(ManError::Config(
                "epochs, batch_size and repeats must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Seed of the `r`-th repeated run.
    pub fn run_seed(&self, r: usize) -> u64 {
        self.seed.wrapping_add(r as u64)
    }
}

/// Fresh parameters seeded by `seed`, optionally starting from pretrained
/// word vectors.
pub fn init_model(
    config: &ManConfig,
    vocab: &Vocabulary,
    pretrained: Option<&Path>,
    seed: u64,
) -> Result<ManParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match pretrained {
        None => ManParams::init(config, vocab.len(), &mut rng),
        Some(path) => {
            config.validate()?;
            let mut params = ParamSet::new();
            let tables = EmbeddingTables::load_pretrained(
                path,
                vocab,
                &mut params,
                config.embed_dim,
                config.max_len,
                &mut rng,
            )?;
            ManParams::init_rest(config, params, tables, &mut rng)
        }
    }
}

/// Summed gradient of the data loss over `examples` and the per-example
/// loss terms, in input order.
pub fn batch_gradients(
    model: &ManParams,
    config: &ManConfig,
    examples: &[ProcessedExample],
    execution: Execution,
) -> Result<(Grads, Vec<LossTerms>)> {
    let results = execution.map(examples, |_, ex| -> Result<(Grads, LossTerms)> {
        let mut tape = Tape::new(&model.params);
        let out = forward(&mut tape, ex, model, config)?;
        let (loss, terms) = data_loss(&mut tape, &out, ex, config)?;
        if !terms.total.is_finite() {
            return Ok((Grads::new(), terms));
        }
        Ok((tape.backward(loss)?, terms))
    });
    let mut total = Grads::new();
    let mut terms = Vec::with_capacity(results.len());
    for r in results {
        let (g, t) = r?;
        total.merge(&g);
        terms.push(t);
    }
    Ok((total, terms))
}

/// Gradient and value of `λ₄‖θ‖²`.
pub fn weight_penalty_gradient(params: &ParamSet, lambda4: f64) -> Result<(Grads, f64)> {
    let mut tape = Tape::new(params);
    let l2 = l2_penalty(&mut tape)?;
    let weighted = tape.scale(l2, lambda4);
    let value = tape.scalar(weighted);
    Ok((tape.backward(weighted)?, value))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub batches: usize,
    /// Sum of the batch objectives divided by the number of examples.
    pub train_loss: f64,
}

/// Owns the optimizer state and batch order of one training run.
///
/// Each step minimizes the batch objective: the per-example data losses
/// summed over the batch, plus `λ₄‖θ‖²` counted once.
pub struct Trainer<'a> {
    config: &'a ManConfig,
    settings: &'a TrainConfig,
    batches: BatchIter<'a>,
    optimizer: Optimizer,
    epochs_done: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(
        model: &ManParams,
        config: &'a ManConfig,
        settings: &'a TrainConfig,
        train: &'a [ProcessedExample],
        seed: u64,
    ) -> Result<Self> {
        settings.validate()?;
        if train.is_empty() {
            return Err(ManError::Config("training set is empty".into()));
        }
        Ok(Trainer {
            config,
            settings,
            batches: BatchIter::new(train, settings.batch_size, seed ^ SHUFFLE_STREAM),
            optimizer: Optimizer::new(settings.optimizer, settings.adam, &model.params),
            epochs_done: 0,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn run_epoch(&mut self, model: &mut ManParams) -> Result<EpochStats> {
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let batches = self.batches.epoch();
        for (b, batch) in batches.iter().enumerate() {
            let n = batch.examples.len();
            let (mut grads, terms) =
                batch_gradients(model, self.config, &batch.examples, self.settings.execution)?;
            let data: f64 = terms.iter().map(|t| t.total).sum();
            if !data.is_finite() {
                return Err(ManError::NonFinite(format!(
                    "loss is {data} at epoch {} batch {b}",
                    self.epochs_done + 1
                )));
            }
            let mut batch_loss = data;
            if !self.config.ablation.disable_l2 && self.config.lambda4 > 0.0 {
                let (g, v) = weight_penalty_gradient(&model.params, self.config.lambda4)?;
                grads.merge(&g);
                batch_loss += v;
            }
            model.params.zero_grads();
            model.params.accumulate(&grads);
            self.optimizer.step(&mut model.params).map_err(|e| match e {
                ManError::NonFinite(m) => ManError::NonFinite(format!(
                    "{m} at epoch {} batch {b}",
                    self.epochs_done + 1
                )),
                other => other,
            })?;
            loss_sum += batch_loss;
            seen += n;
        }
        self.epochs_done += 1;
        Ok(EpochStats {
            epoch: self.epochs_done,
            batches: batches.len(),
            train_loss: loss_sum / seen as f64,
        })
    }
}

/// Forward pass for every example, in input order.
pub fn predict_all(
    model: &ManParams,
    config: &ManConfig,
    examples: &[ProcessedExample],
    execution: Execution,
) -> Result<Vec<ForwardOutput>> {
    execution
        .map(examples, |_, ex| {
            let mut tape = Tape::new(&model.params);
            let out = forward(&mut tape, ex, model, config)?;
            Ok(out.output(&tape))
        })
        .into_iter()
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub overall: Metrics,
    /// One entry per aspect, over examples where that aspect is rated.
    pub aspects: Vec<Metrics>,
}

impl Evaluation {
    /// True when every head classifies every labelled example correctly.
    pub fn is_perfect(&self) -> bool {
        self.overall.accuracy == 1.0
            && self
                .aspects
                .iter()
                .all(|m| m.support == 0 || m.accuracy == 1.0)
    }
}

pub fn evaluate(
    model: &ManParams,
    config: &ManConfig,
    examples: &[ProcessedExample],
    execution: Execution,
) -> Result<Evaluation> {
    let outputs = predict_all(model, config, examples, execution)?;
    let labels: Vec<u8> = examples.iter().map(|e| e.overall).collect();
    let preds: Vec<u8> = outputs.iter().map(|o| predict(o.y_overall)).collect();
    let aspects = (0..config.num_aspects())
        .map(|k| {
            let p: Vec<u8> = outputs.iter().map(|o| predict(o.y_aspect[k])).collect();
            let l: Vec<Option<u8>> = examples.iter().map(|e| e.aspects[k]).collect();
            masked_metrics(&p, &l)
        })
        .collect();
    Ok(Evaluation {
        overall: metrics(&preds, &labels),
        aspects,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_macro_f1: f64,
    pub improved: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_macro_f1: f64,
    pub stopped_early: bool,
}

/// Trains on `data.train`, selecting the epoch with the best validation
/// macro-F1. `model` holds the selected parameters on return.
pub fn train(
    model: &mut ManParams,
    config: &ManConfig,
    settings: &TrainConfig,
    data: &DatasetSplit<ProcessedExample>,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainReport> {
    let mut trainer = Trainer::new(model, config, settings, &data.train, seed)?;
    let mut best = model.params.clone();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut log = Vec::with_capacity(settings.epochs);
    let mut stale = 0;
    let mut stopped_early = false;
    for _ in 0..settings.epochs {
        let stats = trainer.run_epoch(model)?;
        let val = evaluate(model, config, &data.validation, settings.execution)?;
        let improved = val.overall.macro_f1 > best_f1;
        if improved {
            best_f1 = val.overall.macro_f1;
            best_epoch = stats.epoch;
            best.copy_values_from(&model.params)?;
            stale = 0;
        } else {
            stale += 1;
        }
        let entry = EpochLog {
            epoch: stats.epoch,
            train_loss: stats.train_loss,
            val_accuracy: val.overall.accuracy,
            val_macro_f1: val.overall.macro_f1,
            improved,
        };
        on_epoch(&entry);
        log.push(entry);
        if settings.patience > 0 && stale >= settings.patience {
            stopped_early = true;
            break;
        }
    }
    model.params.copy_values_from(&best)?;
    Ok(TrainReport {
        log,
        best_epoch,
        best_val_macro_f1: best_f1,
        stopped_early,
    })
}

/// Mean, sample standard deviation and sample variance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
    pub var: f64,
    pub n: usize,
}

impl Spread {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Spread::default();
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Spread {
            mean,
            std: var.sqrt(),
            var,
            n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub report: TrainReport,
    pub validation: Evaluation,
    pub test: Evaluation,
}

/// `settings.repeats` independent runs from seeds `seed, seed+1, ...`.
pub fn repeated_runs(
    config: &ManConfig,
    settings: &TrainConfig,
    vocab: &Vocabulary,
    pretrained: Option<&Path>,
    data: &DatasetSplit<ProcessedExample>,
) -> Result<Vec<RunResult>> {
    (0..settings.repeats)
        .map(|r| {
            let seed = settings.run_seed(r);
            let mut model = init_model(config, vocab, pretrained, seed)?;
            let report = train(&mut model, config, settings, data, seed, |_| {})?;
            Ok(RunResult {
                seed,
                report,
                validation: evaluate(&model, config, &data.validation, settings.execution)?,
                test: evaluate(&model, config, &data.test, settings.execution)?,
            })
        })
        .collect()
}
