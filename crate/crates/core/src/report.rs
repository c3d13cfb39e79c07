//! Text outputs: the `key=value` metrics file, a readable summary and the
//! tab-separated ablation table. Floats use Rust's shortest round-trip
//! formatting so identical values always print identically.

use std::fmt::Write as _;

use crate::ablation::AblationRow;
use crate::metrics::Metrics;
use crate::train::{Evaluation, RunResult, Spread};

pub type Pairs = Vec<(String, String)>;

fn push(out: &mut Pairs, key: String, value: impl ToString) {
    out.push((key, value.to_string()));
}

pub fn metric_pairs(out: &mut Pairs, prefix: &str, m: &Metrics) {
    push(out, format!("{prefix}.accuracy"), m.accuracy);
    push(out, format!("{prefix}.macro_f1"), m.macro_f1);
    for (c, name) in ["negative", "positive"].iter().enumerate() {
        push(out, format!("{prefix}.{name}.precision"), m.precision[c]);
        push(out, format!("{prefix}.{name}.recall"), m.recall[c]);
        push(out, format!("{prefix}.{name}.f1"), m.f1[c]);
    }
    let c = &m.confusion.counts;
    push(out, format!("{prefix}.support"), m.support);
    push(out, format!("{prefix}.confusion.tn"), c[0][0]);
    push(out, format!("{prefix}.confusion.fp"), c[0][1]);
    push(out, format!("{prefix}.confusion.fn"), c[1][0]);
    push(out, format!("{prefix}.confusion.tp"), c[1][1]);
}

pub fn evaluation_pairs(out: &mut Pairs, prefix: &str, e: &Evaluation, aspects: &[String]) {
    metric_pairs(out, &format!("{prefix}.overall"), &e.overall);
    for (name, m) in aspects.iter().zip(&e.aspects) {
        metric_pairs(out, &format!("{prefix}.aspect.{name}"), m);
    }
}

fn spread_pairs(out: &mut Pairs, prefix: &str, s: &Spread) {
    push(out, format!("{prefix}.mean"), s.mean);
    push(out, format!("{prefix}.std"), s.std);
    push(out, format!("{prefix}.var"), s.var);
}

pub fn render_pairs(pairs: &Pairs) -> String {
    let mut s = String::new();
    for (k, v) in pairs {
        let _ = writeln!(s, "{k}={v}");
    }
    s
}

/// Parses a file written by [`render_pairs`].
pub fn parse_pairs(text: &str) -> Pairs {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_owned(), v.to_owned()))
        .collect()
}

/// Metrics for one or more training runs, plus mean/std/var across runs.
pub fn train_metrics(runs: &[RunResult], aspects: &[String]) -> String {
    let mut p = Pairs::new();
    push(&mut p, "runs".into(), runs.len());
    for (i, r) in runs.iter().enumerate() {
        let pre = format!("run.{i}");
        push(&mut p, format!("{pre}.seed"), r.seed);
        push(&mut p, format!("{pre}.best_epoch"), r.report.best_epoch);
        push(&mut p, format!("{pre}.epochs_run"), r.report.log.len());
        push(&mut p, format!("{pre}.final_train_loss"), r.report.log.last().map_or(f64::NAN, |e| e.train_loss));
        evaluation_pairs(&mut p, &format!("{pre}.validation"), &r.validation, aspects);
        evaluation_pairs(&mut p, &format!("{pre}.test"), &r.test, aspects);
    }
    for (part, get) in [
        ("validation", (|r: &RunResult| &r.validation) as fn(&RunResult) -> &Evaluation),
        ("test", |r: &RunResult| &r.test),
    ] {
        for (metric, f) in [
            ("accuracy", (|m: &Metrics| m.accuracy) as fn(&Metrics) -> f64),
            ("macro_f1", |m: &Metrics| m.macro_f1),
        ] {
            let xs: Vec<f64> = runs.iter().map(|r| f(&get(r).overall)).collect();
            spread_pairs(&mut p, &format!("summary.{part}.overall.{metric}"), &Spread::of(&xs));
        }
    }
    render_pairs(&p)
}

/// Metrics of a single evaluation (the `eval` command).
pub fn eval_metrics(e: &Evaluation, aspects: &[String], dropped: usize) -> String {
    let mut p = Pairs::new();
    push(&mut p, "examples".into(), e.overall.support);
    push(&mut p, "dropped".into(), dropped);
    evaluation_pairs(&mut p, "eval", e, aspects);
    render_pairs(&p)
}

fn metrics_line(s: &mut String, label: &str, m: &Metrics) {
    let _ = writeln!(
        s,
        "  {label:<16} acc {:.4}  macro-F1 {:.4}  (n = {})",
        m.accuracy, m.macro_f1, m.support
    );
}

pub fn evaluation_text(title: &str, e: &Evaluation, aspects: &[String]) -> String {
    let mut s = format!("{title}\n");
    metrics_line(&mut s, "overall", &e.overall);
    for (name, m) in aspects.iter().zip(&e.aspects) {
        metrics_line(&mut s, name, m);
    }
    s
}

/// Human-readable summary of one or more training runs.
pub fn train_text(runs: &[RunResult], aspects: &[String]) -> String {
    let mut s = String::new();
    for (i, r) in runs.iter().enumerate() {
        let _ = writeln!(
            s,
            "run {i} (seed {}): best epoch {} of {}{}",
            r.seed,
            r.report.best_epoch,
            r.report.log.len(),
            if r.report.stopped_early { ", stopped early" } else { "" }
        );
        s.push_str(&evaluation_text("validation", &r.validation, aspects));
        s.push_str(&evaluation_text("test", &r.test, aspects));
        s.push('\n');
    }
    if runs.len() > 1 {
        let f1: Vec<f64> = runs.iter().map(|r| r.test.overall.macro_f1).collect();
        let acc: Vec<f64> = runs.iter().map(|r| r.test.overall.accuracy).collect();
        let (a, f) = (Spread::of(&acc), Spread::of(&f1));
        let _ = writeln!(
            s,
            "test over {} runs: acc mean {:.4} std {:.4} var {:.6}; macro-F1 mean {:.4} std {:.4} var {:.6}",
            runs.len(),
            a.mean,
            a.std,
            a.var,
            f.mean,
            f.std,
            f.var
        );
    }
    s
}

pub fn epoch_log_tsv(runs: &[RunResult]) -> String {
    let mut s = String::from("run\tepoch\ttrain_loss\tval_accuracy\tval_macro_f1\timproved\n");
    for (i, r) in runs.iter().enumerate() {
        for e in &r.report.log {
            let _ = writeln!(
                s,
                "{i}\t{}\t{}\t{}\t{}\t{}",
                e.epoch, e.train_loss, e.val_accuracy, e.val_macro_f1, e.improved
            );
        }
    }
    s
}

pub fn ablation_tsv(rows: &[AblationRow]) -> String {
    let mut s = String::from(
        "variant\tparams\truns\tval_macro_f1_mean\ttest_accuracy_mean\ttest_accuracy_std\ttest_accuracy_var\ttest_macro_f1_mean\ttest_macro_f1_std\ttest_macro_f1_var\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.variant,
            r.param_count,
            r.runs.len(),
            r.val_macro_f1.mean,
            r.test_accuracy.mean,
            r.test_accuracy.std,
            r.test_accuracy.var,
            r.test_macro_f1.mean,
            r.test_macro_f1.std,
            r.test_macro_f1.var
        );
    }
    s
}
