use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use man_core::ablation::{run_ablation, standard_variants};
use man_core::checkpoint::Checkpoint;
use man_core::config::RunConfig;
use man_core::data::{encode_all, ingest, prepare, PreparedData, PreprocessRules, RawReview};
use man_core::explain::{render_heatmap, HeatmapReport};
use man_core::model::{forward, RankingMode};
use man_core::train::{evaluate, init_model, train, RunResult};
use man_core::{autodiff::Tape, report, ManError, Result};

/// Multiple-attention sentiment models for rated reviews without aspect tags.
#[derive(Debug, Parser)]
#[command(name = "man", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write checkpoint.json, metrics.txt, report.txt and train_log.tsv.
    Train(TrainArgs),
    /// Score a checkpoint on a labelled review file.
    Eval(EvalArgs),
    /// Render one attention heatmap per review (heatmap_<index>.html).
    Explain(ExplainArgs),
    /// Train the full model and its five ablated variants; write ablation.tsv.
    Ablate(TrainArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Reviews, one JSON record per line.
    #[arg(long)]
    data: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ExplainArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// How aspects are ranked: literal attention mass or magnitude-weighted.
    #[arg(long, default_value = "magnitude", value_parser = ["literal", "magnitude"])]
    ranking_mode: String,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Explain(a) => cmd_explain(&a),
        Command::Ablate(a) => cmd_ablate(&a),
    }
}

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| ManError::io(&path, e))
}

fn out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| ManError::io(dir, e))
}

fn load_config(args: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn load_data(cfg: &RunConfig, path: &Path) -> Result<PreparedData> {
    let reviews = ingest(path, &cfg.model.aspects)?;
    let rules = PreprocessRules::new(cfg.model.max_len);
    let prepared = prepare(&reviews, &rules, cfg.train.seed, cfg.min_count)?;
    eprintln!(
        "{} reviews read, {} dropped as too short; split {}/{}/{}; vocabulary {}",
        reviews.len(),
        prepared.dropped,
        prepared.split.train.len(),
        prepared.split.validation.len(),
        prepared.split.test.len(),
        prepared.vocab.len()
    );
    Ok(prepared)
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let data = load_data(&cfg, &args.data)?;
    out_dir(&args.out)?;
    let aspects = &cfg.model.aspects;
    let mut runs: Vec<RunResult> = Vec::new();
    let mut best: Option<(f64, man_core::model::ManParams)> = None;
    for r in 0..cfg.train.repeats {
        let seed = cfg.train.run_seed(r);
        let mut model = init_model(&cfg.model, &data.vocab, cfg.pretrained.as_deref(), seed)?;
        let report = train(&mut model, &cfg.model, &cfg.train, &data.split, seed, |e| {
            eprintln!(
                "run {r} epoch {:>3}  loss {:.5}  val acc {:.4}  val macro-F1 {:.4}{}",
                e.epoch,
                e.train_loss,
                e.val_accuracy,
                e.val_macro_f1,
                if e.improved { "  *" } else { "" }
            );
        })?;
        let result = RunResult {
            seed,
            report,
            validation: evaluate(&model, &cfg.model, &data.split.validation, cfg.train.execution)?,
            test: evaluate(&model, &cfg.model, &data.split.test, cfg.train.execution)?,
        };
        let score = result.validation.overall.macro_f1;
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, model));
        }
        runs.push(result);
    }
    let (_, model) = best.expect("repeats >= 1");
    Checkpoint {
        config: cfg.model.clone(),
        vocab: data.vocab,
        model,
    }
    .save(args.out.join("checkpoint.json"))?;
    write(&args.out, "metrics.txt", report::train_metrics(&runs, aspects))?;
    let text = report::train_text(&runs, aspects);
    write(&args.out, "report.txt", &text)?;
    write(&args.out, "train_log.tsv", report::epoch_log_tsv(&runs))?;
    write(&args.out, "config.txt", cfg.render())?;
    eprint!("{text}");
    Ok(())
}

fn checkpoint_inputs(checkpoint: &Path, data: &Path) -> Result<(Checkpoint, Vec<RawReview>, PreprocessRules)> {
    let ck = Checkpoint::load(checkpoint)?;
    let reviews = ingest(data, &ck.config.aspects)?;
    let rules = PreprocessRules::new(ck.config.max_len);
    Ok((ck, reviews, rules))
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let (ck, reviews, rules) = checkpoint_inputs(&args.checkpoint, &args.data)?;
    let encoded = encode_all(&reviews, &rules, &ck.vocab)?;
    if encoded.is_empty() {
        return Err(ManError::Validation("no review survives preprocessing".into()));
    }
    let examples: Vec<_> = encoded.into_iter().map(|(_, _, e)| e).collect();
    let dropped = reviews.len() - examples.len();
    let eval = evaluate(&ck.model, &ck.config, &examples, man_core::Execution::Parallel)?;
    out_dir(&args.out)?;
    let aspects = &ck.config.aspects;
    write(&args.out, "eval_metrics.txt", report::eval_metrics(&eval, aspects, dropped))?;
    let text = report::evaluation_text("evaluation", &eval, aspects);
    write(&args.out, "eval_report.txt", &text)?;
    eprint!("{text}");
    Ok(())
}

fn cmd_explain(args: &ExplainArgs) -> Result<()> {
    let mode: RankingMode = args.ranking_mode.parse()?;
    let (ck, reviews, rules) = checkpoint_inputs(&args.checkpoint, &args.data)?;
    let encoded = encode_all(&reviews, &rules, &ck.vocab)?;
    if encoded.is_empty() {
        return Err(ManError::Validation("no review survives preprocessing".into()));
    }
    out_dir(&args.out)?;
    for (index, tokenized, example) in encoded {
        let mut tape = Tape::new(&ck.model.params);
        let out = forward(&mut tape, &example, &ck.model, &ck.config)?.output(&tape);
        let report = HeatmapReport::build(index, tokenized.tokens, &out, &ck.config.aspects, mode)?;
        let name = format!("heatmap_{index}.html");
        write(&args.out, &name, render_heatmap(&report))?;
        let top = report.top_aspect().expect("at least one aspect");
        eprintln!(
            "review {index}: top aspect {} (score {:.4}, {} mode) -> {name}",
            top.aspect, top.score, mode
        );
    }
    Ok(())
}

fn cmd_ablate(args: &TrainArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let data = load_data(&cfg, &args.data)?;
    out_dir(&args.out)?;
    let variants = standard_variants();
    let rows = run_ablation(
        &cfg.model,
        &cfg.train,
        &data.vocab,
        cfg.pretrained.as_deref(),
        &data.split,
        &variants,
    )?;
    for r in &rows {
        eprintln!(
            "{:<18} params {:>8}  test macro-F1 {:.4} (std {:.4})",
            r.variant, r.param_count, r.test_macro_f1.mean, r.test_macro_f1.std
        );
    }
    write(&args.out, "ablation.tsv", report::ablation_tsv(&rows))
}
