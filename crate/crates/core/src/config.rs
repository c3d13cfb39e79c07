//! Flat `key = value` run configuration. Blank lines and `#` comments are
//! ignored; unknown keys are errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::domain_aspects;
use crate::error::{ManError, Result};
use crate::exec::Execution;
use crate::model::ManConfig;
use crate::train::TrainConfig;

/// Everything a command needs besides its file arguments.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ManConfig,
    pub train: TrainConfig,
    /// Minimum training-set frequency for a token to enter the vocabulary.
    pub min_count: usize,
    /// Optional whitespace-separated word-vector file.
    pub pretrained: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ManConfig::default(),
            train: TrainConfig::default(),
            min_count: 1,
            pretrained: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "domain",
    "aspects",
    "embed_dim",
    "hidden_size",
    "max_len",
    "bidirectional",
    "delta",
    "lambda1",
    "lambda2",
    "lambda3",
    "lambda4",
    "disable_position_attention",
    "disable_alpha_orth",
    "disable_beta_orth",
    "disable_l2",
    "optimizer",
    "learning_rate",
    "beta1",
    "beta2",
    "eps",
    "epochs",
    "batch_size",
    "seed",
    "patience",
    "repeats",
    "parallel",
    "min_count",
    "pretrained",
];

fn err(line: usize, msg: impl std::fmt::Display) -> ManError {
    ManError::Config(format!("config line {line}: {msg}"))
}

fn num<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| err(line, format!("{key} = {v:?} is not a valid value")))
}

fn flag(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(err(line, format!("{key} expects true or false, got {v:?}"))),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut delta_set = false;
        let mut seen: Vec<&str> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(line, format!("expected `key = value`, got {content:?}")))?;
            let (key, v) = (key.trim(), value.trim());
            let known = KEYS
                .iter()
                .find(|k| **k == key)
                .ok_or_else(|| err(line, format!("unknown key {key:?}")))?;
            if seen.contains(known) {
                return Err(err(line, format!("duplicate key {key:?}")));
            }
            seen.push(known);
            let m = &mut cfg.model;
            let t = &mut cfg.train;
            match key {
                "domain" => {
                    m.aspects = domain_aspects(v)
                        .ok_or_else(|| err(line, format!("unknown domain {v:?} (restaurant or hotel)")))?
                }
                "aspects" => {
                    m.aspects = v.split(',').map(|a| a.trim().to_owned()).filter(|a| !a.is_empty()).collect()
                }
                "embed_dim" => m.embed_dim = num(line, key, v)?,
                "hidden_size" => m.hidden_size = num(line, key, v)?,
                "max_len" => m.max_len = num(line, key, v)?,
                "bidirectional" => m.bidirectional = flag(line, key, v)?,
                "delta" => {
                    m.delta = num(line, key, v)?;
                    delta_set = true;
                }
                "lambda1" => m.lambda1 = num(line, key, v)?,
                "lambda2" => m.lambda2 = num(line, key, v)?,
                "lambda3" => m.lambda3 = num(line, key, v)?,
                "lambda4" => m.lambda4 = num(line, key, v)?,
                "disable_position_attention" => m.ablation.disable_position_attention = flag(line, key, v)?,
                "disable_alpha_orth" => m.ablation.disable_alpha_orth = flag(line, key, v)?,
                "disable_beta_orth" => m.ablation.disable_beta_orth = flag(line, key, v)?,
                "disable_l2" => m.ablation.disable_l2 = flag(line, key, v)?,
                "optimizer" => t.optimizer = v.parse().map_err(|e| err(line, e))?,
                "learning_rate" => t.adam.learning_rate = num(line, key, v)?,
                "beta1" => t.adam.beta1 = num(line, key, v)?,
                "beta2" => t.adam.beta2 = num(line, key, v)?,
                "eps" => t.adam.eps = num(line, key, v)?,
                "epochs" => t.epochs = num(line, key, v)?,
                "batch_size" => t.batch_size = num(line, key, v)?,
                "seed" => t.seed = num(line, key, v)?,
                "patience" => t.patience = num(line, key, v)?,
                "repeats" => t.repeats = num(line, key, v)?,
                "parallel" => {
                    t.execution = if flag(line, key, v)? {
                        Execution::Parallel
                    } else {
                        Execution::Sequential
                    }
                }
                "min_count" => cfg.min_count = num(line, key, v)?,
                "pretrained" => cfg.pretrained = Some(PathBuf::from(v)),
                _ => unreachable!("key list and match arms agree"),
            }
        }
        if !delta_set {
            cfg.model.delta = cfg.model.delta.min(cfg.model.num_aspects());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ManError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    /// Canonical text form; parsing it yields `self` again.
    pub fn render(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("aspects", &m.aspects.join(", "));
        kv("embed_dim", &m.embed_dim);
        kv("hidden_size", &m.hidden_size);
        kv("max_len", &m.max_len);
        kv("bidirectional", &m.bidirectional);
        kv("delta", &m.delta);
        kv("lambda1", &m.lambda1);
        kv("lambda2", &m.lambda2);
        kv("lambda3", &m.lambda3);
        kv("lambda4", &m.lambda4);
        kv("disable_position_attention", &m.ablation.disable_position_attention);
        kv("disable_alpha_orth", &m.ablation.disable_alpha_orth);
        kv("disable_beta_orth", &m.ablation.disable_beta_orth);
        kv("disable_l2", &m.ablation.disable_l2);
        kv("optimizer", &format!("{:?}", t.optimizer).to_lowercase());
        kv("learning_rate", &t.adam.learning_rate);
        kv("beta1", &t.adam.beta1);
        kv("beta2", &t.adam.beta2);
        kv("eps", &t.adam.eps);
        kv("epochs", &t.epochs);
        kv("batch_size", &t.batch_size);
        kv("seed", &t.seed);
        kv("patience", &t.patience);
        kv("repeats", &t.repeats);
        kv("parallel", &(t.execution == Execution::Parallel));
        kv("min_count", &self.min_count);
        if let Some(p) = &self.pretrained {
            kv("pretrained", &p.display());
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::OptimizerKind;

    #[test]
    fn empty_text_gives_defaults() {
        let c = RunConfig::parse("# nothing here\n\n").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.model.delta, 4);
        assert_eq!(c.train.adam.learning_rate, 0.005);
        assert_eq!(c.train.optimizer, OptimizerKind::Adam);
    }

    #[test]
    fn values_are_applied() {
        let c = RunConfig::parse(
            "domain = hotel\nembed_dim=8 # small\nlambda4 = 0\ndisable_beta_orth = true\noptimizer = sgd\nparallel = false\npretrained = vec.txt\n",
        )
        .unwrap();
        assert_eq!(c.model.aspects, vec!["Room", "Location", "Value", "Cleanliness"]);
        assert_eq!(c.model.embed_dim, 8);
        assert_eq!(c.model.lambda4, 0.0);
        assert!(c.model.ablation.disable_beta_orth);
        assert_eq!(c.train.optimizer, OptimizerKind::Sgd);
        assert_eq!(c.train.execution, Execution::Sequential);
        assert_eq!(c.pretrained.as_deref(), Some(Path::new("vec.txt")));
    }

    #[test]
    fn delta_follows_aspect_count_unless_given() {
        let c = RunConfig::parse("aspects = Food, Service").unwrap();
        assert_eq!(c.model.delta, 2);
        let c = RunConfig::parse("aspects = Food, Service\ndelta = 0").unwrap();
        assert_eq!(c.model.delta, 0);
        assert!(RunConfig::parse("aspects = Food\ndelta = 3").is_err());
    }

    #[test]
    fn errors_name_the_line() {
        for (text, needle) in [
            ("epochs = 3\nfoo = 1", "line 2"),
            ("epochs = three", "line 1"),
            ("epochs", "line 1"),
            ("seed = 1\nseed = 2", "duplicate"),
            ("bidirectional = maybe", "true or false"),
            ("domain = airline", "unknown domain"),
        ] {
            let e = RunConfig::parse(text).unwrap_err();
            assert!(e.is_validation());
            assert!(e.to_string().contains(needle), "{text:?}: {e}");
        }
        assert!(RunConfig::parse("learning_rate = 0").is_err());
        assert!(RunConfig::parse("epochs = 0").is_err());
    }

    #[test]
    fn render_round_trips() {
        let c = RunConfig::parse("aspects = A, B, C\nlambda2 = 0.1\nseed = 9\nrepeats = 3\npretrained = /x/y.txt").unwrap();
        assert_eq!(RunConfig::parse(&c.render()).unwrap(), c);
        assert_eq!(RunConfig::parse(&RunConfig::default().render()).unwrap(), RunConfig::default());
    }

    #[test]
    fn every_key_is_accepted() {
        let c = RunConfig::default().render();
        let keys: Vec<&str> = c.lines().map(|l| l.split(" = ").next().unwrap()).collect();
        for k in KEYS {
            assert!(keys.contains(k) || ["domain", "pretrained"].contains(k), "{k}");
        }
    }
}
