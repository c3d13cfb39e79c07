//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints exactly one PASS/FAIL line; the process exits nonzero if
//! any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use man_core::attention::{aspect_attention, mean_embedding, position_aware_attention, self_attention};
use man_core::autodiff::{grad_check, masked_softmax_raw, Tape};
use man_core::data::{
    binarize, prepare_tokenized, preprocess, split, PreprocessRules, ProcessedExample, RawReview, TokenizedReview,
};
use man_core::embedding::{embed_sequence, Vocabulary};
use man_core::metrics::metrics;
use man_core::model::{
    aspect_rank, combined_loss, forward, orthogonal_penalty_value, ManConfig, ManParams, RankingMode,
};
use man_core::recurrent::bilstm_forward;
use man_core::synthetic::{aspect_driven_corpus, aspect_names, overfit_corpus, service_led_corpus};
use man_core::train::{evaluate, init_model, repeated_runs, train, Spread, TrainConfig, Trainer};
use man_core::{report, Execution, Tensor};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: man_core::ManError) -> String {
    e.to_string()
}

fn encode_all(reviews: &[TokenizedReview]) -> (Vocabulary, Vec<ProcessedExample>) {
    let tokens: Vec<Vec<String>> = reviews.iter().map(|r| r.tokens.clone()).collect();
    let vocab = Vocabulary::build(&tokens, 1);
    let examples = reviews.iter().map(|r| ProcessedExample::encode(r, &vocab)).collect();
    (vocab, examples)
}

fn random_example<R: Rng>(rng: &mut R, vocab: usize, k: usize, max_steps: usize) -> ProcessedExample {
    let steps = rng.gen_range(1..=max_steps);
    let mut mask: Vec<bool> = (0..steps).map(|_| rng.gen_bool(0.7)).collect();
    let keep = rng.gen_range(0..steps);
    mask[keep] = true;
    ProcessedExample {
        tokens: mask.iter().map(|&m| if m { rng.gen_range(2..vocab) } else { 0 }).collect(),
        positions: (0..steps).collect(),
        mask,
        overall: rng.gen_range(0..2),
        aspects: (0..k).map(|_| rng.gen_bool(0.8).then(|| rng.gen_range(0..2))).collect(),
    }
}

/// Scales every attention parameter so the pre-activation scores span a
/// wide range.
fn stretch_attention(model: &mut ManParams, factor: f64) {
    for a in model.attention.clone() {
        for id in [Some(a.w_alpha), Some(a.b_alpha), a.w_beta, a.b_beta].into_iter().flatten() {
            for v in model.params.get_mut(id).values_mut() {
                *v *= factor;
            }
        }
    }
}

fn gradient_check() -> Outcome {
    let config = ManConfig {
        aspects: aspect_names(2),
        embed_dim: 4,
        hidden_size: 2,
        max_len: 8,
        bidirectional: true,
        delta: 2,
        ..ManConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let model = ManParams::init(&config, 6, &mut rng).map_err(err)?;
    ensure(config.hidden_width() == 4, || "hidden width is not 4".into())?;
    let ex = ProcessedExample {
        tokens: vec![2, 5, 3],
        positions: vec![0, 1, 2],
        mask: vec![true; 3],
        overall: 1,
        aspects: vec![Some(0), Some(1)],
    };
    let start = Instant::now();
    let worst = grad_check(&model.params, 1e-5, |tape| {
        let out = forward(tape, &ex, &model, &config)?;
        Ok(combined_loss(tape, &out, &ex, &config)?.0)
    })
    .map_err(err)?;
    let elapsed = start.elapsed();
    ensure(worst < 1e-4, || format!("max relative error {worst:.3e} >= 1e-4"))?;
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} scalars, max relative error {worst:.2e}, {:.2?}",
        model.params.scalar_count(),
        elapsed
    ))
}

fn check_distribution(w: &[f64], mask: &[bool], what: &str) -> Result<(), String> {
    let mut total = 0.0;
    for (t, (&x, &m)) in w.iter().zip(mask).enumerate() {
        if m {
            total += x;
        } else {
            ensure(x == 0.0, || format!("{what}: masked position {t} has weight {x}"))?;
        }
    }
    ensure((total - 1.0).abs() <= 1e-9, || format!("{what}: unmasked weights sum to {total}"))
}

fn attention_masking() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let config = ManConfig {
        aspects: aspect_names(2),
        embed_dim: 3,
        hidden_size: 3,
        max_len: 16,
        delta: 2,
        ..ManConfig::default()
    };
    let cases = 1000;
    for case in 0..cases {
        let mut model = ManParams::init(&config, 10, &mut rng).map_err(err)?;
        stretch_attention(&mut model, 10f64.powf(rng.gen_range(-1.0..2.0)));
        let ex = random_example(&mut rng, 10, 2, 16);
        let mut tape = Tape::new(&model.params);
        let embedded = embed_sequence(&mut tape, &model.embedding, &ex.tokens).map_err(err)?;
        let bwd = model.lstm_bwd.as_ref().expect("bidirectional");
        let h = bilstm_forward(&mut tape, embedded, &model.lstm_fwd, bwd, &ex.mask).map_err(err)?;
        let e_bar = mean_embedding(&mut tape, embedded, &ex.mask).map_err(err)?;
        let a = &model.attention[0];
        let (_, alpha, z) = self_attention(&mut tape, &h, a).map_err(err)?;
        let (_, beta, _) = position_aware_attention(
            &mut tape,
            &h,
            z,
            e_bar,
            a.w_beta.expect("full model"),
            a.b_beta.expect("full model"),
        )
        .map_err(err)?;
        check_distribution(tape.value(alpha), &ex.mask, &format!("case {case} alpha"))?;
        check_distribution(tape.value(beta), &ex.mask, &format!("case {case} beta"))?;
        let second = aspect_attention(&mut tape, &h, e_bar, &model.attention[1]).map_err(err)?;
        check_distribution(tape.value(second.alpha), &ex.mask, &format!("case {case} alpha[1]"))?;
        check_distribution(tape.value(second.beta.expect("full model")), &ex.mask, &format!("case {case} beta[1]"))?;

        // Raw logits far outside the range the model can produce.
        let logits: Vec<f64> = (0..ex.mask.len()).map(|_| rng.gen_range(-700.0..700.0)).collect();
        let w = masked_softmax_raw(&logits, &ex.mask).map_err(err)?;
        check_distribution(&w, &ex.mask, &format!("case {case} raw"))?;
    }
    Ok(format!("{cases} random cases, 5 distributions each"))
}

fn gram_penalty(rows: &[Vec<f64>]) -> f64 {
    let unit: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            r.iter().map(|x| if n > 0.0 { x / n } else { 0.0 }).collect()
        })
        .collect();
    let mut sq = 0.0;
    for i in 0..unit.len() {
        for j in 0..unit.len() {
            let dot: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            sq += (dot - target).powi(2);
        }
    }
    sq.sqrt()
}

fn orthogonality_penalty() -> Outcome {
    let ortho = Tensor::from_rows(&[&[0.6, 0.8, 0.0], &[-0.8, 0.6, 0.0], &[0.0, 0.0, 1.0]]).map_err(err)?;
    let p = orthogonal_penalty_value(&ortho).map_err(err)?;
    ensure(p.abs() <= 1e-12, || format!("orthonormal rows give {p}"))?;
    let dup = Tensor::from_rows(&[&[0.0, 1.0, 0.0], &[0.0, 1.0, 0.0]]).map_err(err)?;
    let p = orthogonal_penalty_value(&dup).map_err(err)?;
    ensure((p - 2f64.sqrt()).abs() <= 1e-9, || format!("duplicated unit rows give {p}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (k, t) = (rng.gen_range(1..6), rng.gen_range(1..9));
        let rows: Vec<Vec<f64>> = (0..k).map(|_| (0..t).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let m = Tensor::matrix(k, t, rows.concat()).map_err(err)?;
        let got = orthogonal_penalty_value(&m).map_err(err)?;
        worst = worst.max((got - gram_penalty(&rows)).abs());
    }
    ensure(worst <= 1e-10, || format!("brute-force mismatch {worst:.3e}"))?;
    Ok(format!("orthonormal 0, duplicate sqrt(2), 100 random within {worst:.1e}"))
}

fn ranking_modes() -> Outcome {
    // Literal scores over random models and inputs.
    let config = ManConfig {
        aspects: aspect_names(3),
        embed_dim: 3,
        hidden_size: 3,
        max_len: 16,
        delta: 3,
        ..ManConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let model = ManParams::init(&config, 9, &mut rng).map_err(err)?;
        let ex = random_example(&mut rng, 9, 3, 16);
        let mut tape = Tape::new(&model.params);
        let out = forward(&mut tape, &ex, &model, &config).map_err(err)?.output(&tape);
        for (_, s) in aspect_rank(&out.traces, RankingMode::Literal) {
            worst = worst.max((s - 2.0).abs());
        }
    }
    ensure(worst <= 1e-6, || format!("literal score off by {worst:.3e}"))?;

    // A review with praised food and criticised service, scored by a model
    // whose overall verdict follows service.
    let config = ManConfig {
        aspects: aspect_names(2),
        embed_dim: 8,
        hidden_size: 8,
        max_len: 32,
        delta: 2,
        ..ManConfig::default()
    };
    let settings = TrainConfig {
        epochs: 40,
        batch_size: 16,
        patience: 0,
        ..TrainConfig::default()
    };
    let seed = 1;
    let data = prepare_tokenized(service_led_corpus(400, 5), seed, 1).map_err(err)?;
    let mut model = init_model(&config, &data.vocab, None, seed).map_err(err)?;
    train(&mut model, &config, &settings, &data.split, seed, |_| {}).map_err(err)?;
    let rules = PreprocessRules::new(config.max_len);
    let tokens = rules.tokenize("The food was good but the service was terrible and the wait was a long time");
    let review = TokenizedReview {
        tokens,
        overall: 0,
        aspects: vec![Some(1), Some(0)],
    };
    let ex = ProcessedExample::encode(&review, &data.vocab);
    let mut tape = Tape::new(&model.params);
    let out = forward(&mut tape, &ex, &model, &config).map_err(err)?.output(&tape);
    let ranked = aspect_rank(&out.traces, RankingMode::Magnitude);
    let (food, service) = (
        ranked.iter().find(|r| r.0 == 0).expect("food").1,
        ranked.iter().find(|r| r.0 == 1).expect("service").1,
    );
    ensure(ranked[0].0 == 1 && service > food, || {
        format!("magnitude ranking {ranked:?} does not put Service strictly first")
    })?;
    Ok(format!(
        "literal within {worst:.1e} of 2; magnitude Service {service:.4} > Food {food:.4}"
    ))
}

fn overfit() -> Outcome {
    let reviews = overfit_corpus(64, 5);
    let (vocab, examples) = encode_all(&reviews);
    let config = ManConfig {
        aspects: aspect_names(2),
        embed_dim: 8,
        hidden_size: 8,
        max_len: 16,
        delta: 2,
        ..ManConfig::default()
    };
    let settings = TrainConfig {
        batch_size: 16,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let mut model = init_model(&config, &vocab, None, 42).map_err(err)?;
    let mut trainer = Trainer::new(&model, &config, &settings, &examples, 42).map_err(err)?;
    let limit = 300;
    while trainer.epochs_done() < limit {
        let stats = trainer.run_epoch(&mut model).map_err(err)?;
        let eval = evaluate(&model, &config, &examples, Execution::Parallel).map_err(err)?;
        if eval.is_perfect() {
            let elapsed = start.elapsed();
            ensure(elapsed < Duration::from_secs(300), || format!("took {elapsed:?}"))?;
            return Ok(format!(
                "100% on all heads after {} epochs (loss {:.4}), {:.2?}",
                stats.epoch, stats.train_loss, elapsed
            ));
        }
        if start.elapsed() >= Duration::from_secs(300) {
            break;
        }
    }
    let eval = evaluate(&model, &config, &examples, Execution::Parallel).map_err(err)?;
    Err(format!(
        "not perfect after {} epochs: overall acc {}, aspect acc {:?}",
        trainer.epochs_done(),
        eval.overall.accuracy,
        eval.aspects.iter().map(|m| m.accuracy).collect::<Vec<_>>()
    ))
}

fn preprocessing_and_split() -> Outcome {
    for (r, want) in [(1, 0), (2, 0), (3, 0), (4, 1), (5, 1)] {
        ensure(binarize(r).map_err(err)? == want, || format!("rating {r} does not map to {want}"))?;
    }
    ensure(binarize(0).is_err() && binarize(6).is_err(), || "out-of-range rating accepted".into())?;

    let rules = PreprocessRules::new(64);
    let raw = |text: &str| RawReview {
        text: text.into(),
        overall_rating: 4,
        aspect_ratings: vec![],
        domain: "restaurant".into(),
    };
    let two = preprocess(&raw("The pizza was cold, the waiter rude"), &rules).map_err(err)?;
    ensure(two.as_ref().is_some_and(|t| t.tokens.len() >= 3), || format!("{two:?}"))?;
    let short = preprocess(&raw("Pizza, cold!"), &rules).map_err(err)?;
    ensure(short.is_none(), || format!("two-token review kept: {short:?}"))?;
    let three = preprocess(&raw("pizza cold waiter"), &rules).map_err(err)?;
    ensure(three.is_some_and(|t| t.tokens.len() == 3), || "three-token review dropped".into())?;

    let mut sizes = Vec::new();
    for n in [10usize, 101, 1000] {
        let s = split((0..n).collect::<Vec<_>>(), 9).map_err(err)?;
        let got = [s.train.len(), s.validation.len(), s.test.len()];
        for (part, frac) in got.iter().zip([0.6, 0.2, 0.2]) {
            let target = n as f64 * frac;
            ensure((*part as f64 - target).abs() <= 1.0, || format!("n={n}: sizes {got:?}"))?;
        }
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        all.sort_unstable();
        ensure(all == (0..n).collect::<Vec<_>>(), || format!("n={n}: split is not a partition"))?;
        sizes.push(format!("{n}->{got:?}"));
    }
    Ok(format!("binarize 1..5, short reviews dropped, splits {}", sizes.join(" ")))
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let safe = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    for case in 0..1000 {
        let n = rng.gen_range(0..60);
        let bias = rng.gen_range(0.0..1.0);
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(bias))).collect();
        let preds: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(bias))).collect();
        let m = metrics(&preds, &labels);
        let correct = preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
        let accuracy = safe(correct as f64, n as f64);
        let mut f1 = [0.0; 2];
        for c in 0..2u8 {
            let tp = preds.iter().zip(&labels).filter(|&(&p, &l)| p == c && l == c).count() as f64;
            let predicted = preds.iter().filter(|&&p| p == c).count() as f64;
            let actual = labels.iter().filter(|&&l| l == c).count() as f64;
            let (p, r) = (safe(tp, predicted), safe(tp, actual));
            let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            let i = c as usize;
            ensure(m.precision[i] == p && m.recall[i] == r && m.f1[i] == f, || {
                format!("case {case} class {c}: got P {} R {} F {}, want {p} {r} {f}", m.precision[i], m.recall[i], m.f1[i])
            })?;
            f1[i] = f;
        }
        let macro_f1 = (f1[0] + f1[1]) / 2.0;
        ensure(m.accuracy == accuracy && m.macro_f1 == macro_f1, || {
            format!("case {case}: acc {} vs {accuracy}, macro-F1 {} vs {macro_f1}", m.accuracy, m.macro_f1)
        })?;
    }
    Ok("1000 random prediction sets match exactly".into())
}

fn ablation_census() -> Outcome {
    let config = ManConfig {
        aspects: aspect_names(4),
        embed_dim: 5,
        hidden_size: 3,
        max_len: 12,
        delta: 4,
        ..ManConfig::default()
    };
    let mut no_pos = config.clone();
    no_pos.ablation.disable_position_attention = true;
    let full = ManParams::init(&config, 11, &mut ChaCha8Rng::seed_from_u64(1)).map_err(err)?;
    let reduced = ManParams::init(&no_pos, 11, &mut ChaCha8Rng::seed_from_u64(1)).map_err(err)?;
    let (k, d, h) = (config.num_aspects(), config.embed_dim, config.hidden_width());
    let diff = full.scalar_count() - reduced.scalar_count();
    ensure(diff == k * (2 * d * h + 1), || format!("census difference {diff}, want {}", k * (2 * d * h + 1)))?;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let terms = |c: &ManConfig, ex: &ProcessedExample| {
        let mut tape = Tape::new(&full.params);
        let out = forward(&mut tape, ex, &full, c).map_err(err)?;
        combined_loss(&mut tape, &out, ex, c).map(|t| t.1).map_err(err)
    };
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let ex = random_example(&mut rng, 11, 4, 12);
        let base = terms(&config, &ex)?;
        let mut c = config.clone();
        c.ablation.disable_alpha_orth = true;
        let no_alpha = terms(&c, &ex)?;
        worst = worst.max((base.total - no_alpha.total - config.lambda2 * base.r_alpha).abs());
        let mut c = config.clone();
        c.ablation.disable_beta_orth = true;
        let no_beta = terms(&c, &ex)?;
        worst = worst.max((base.total - no_beta.total - config.lambda3 * base.r_beta).abs());
    }
    ensure(worst <= 1e-12, || format!("ablated loss differences off by {worst:.3e}"))?;
    Ok(format!("census difference {diff} = K(2dH+1); loss differences within {worst:.1e}"))
}

fn determinism() -> Outcome {
    let data = prepare_tokenized(aspect_driven_corpus(300, 0.05, 3), 3, 1).map_err(err)?;
    let config = ManConfig {
        aspects: aspect_names(4),
        embed_dim: 6,
        hidden_size: 6,
        max_len: 16,
        delta: 4,
        ..ManConfig::default()
    };
    let run = |execution: Execution| -> Result<String, String> {
        let settings = TrainConfig {
            epochs: 4,
            repeats: 2,
            seed: 21,
            execution,
            ..TrainConfig::default()
        };
        let runs = repeated_runs(&config, &settings, &data.vocab, None, &data.split).map_err(err)?;
        Ok(report::train_metrics(&runs, &config.aspects))
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    for (i, exec) in [Execution::Parallel, Execution::Parallel, Execution::Sequential].into_iter().enumerate() {
        let path = dir.path().join(format!("metrics_{i}.txt"));
        std::fs::write(&path, run(exec)?).map_err(|e| e.to_string())?;
        files.push(std::fs::read(&path).map_err(|e| e.to_string())?);
    }
    ensure(files[0] == files[1], || "two identical runs wrote different metrics files".into())?;
    ensure(files[0] == files[2], || "sequential execution changed the metrics file".into())?;
    Ok(format!("{} identical bytes across 3 runs (parallel, parallel, sequential)", files[0].len()))
}

fn multi_aspect_supervision() -> Outcome {
    let data = prepare_tokenized(aspect_driven_corpus(2000, 0.05, 11), 11, 1).map_err(err)?;
    let settings = TrainConfig {
        epochs: 30,
        batch_size: 32,
        patience: 0,
        ..TrainConfig::default()
    };
    let mean_f1 = |delta: usize| -> Result<Spread, String> {
        let config = ManConfig {
            aspects: aspect_names(4),
            embed_dim: 8,
            hidden_size: 8,
            max_len: 32,
            delta,
            ..ManConfig::default()
        };
        let scores = (100..105)
            .map(|seed| {
                let mut model = init_model(&config, &data.vocab, None, seed).map_err(err)?;
                train(&mut model, &config, &settings, &data.split, seed, |_| {}).map_err(err)?;
                let eval = evaluate(&model, &config, &data.split.test, Execution::Parallel).map_err(err)?;
                Ok(eval.overall.macro_f1)
            })
            .collect::<Result<Vec<f64>, String>>()?;
        Ok(Spread::of(&scores))
    };
    let with = mean_f1(4)?;
    let without = mean_f1(0)?;
    ensure(with.mean > without.mean, || {
        format!("delta=4 mean macro-F1 {:.4} not above delta=0 {:.4}", with.mean, without.mean)
    })?;
    Ok(format!(
        "test macro-F1 over 5 seeds: delta=4 {:.4} (std {:.4}) > delta=0 {:.4} (std {:.4})",
        with.mean, with.std, without.mean, without.std
    ))
}

fn main() -> ExitCode {
    // Under `cargo test -- --list` the harness protocol expects a listing.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let criteria: [Criterion; 10] = [
        ("full-loss gradient check", gradient_check),
        ("attention masking", attention_masking),
        ("orthogonality penalty", orthogonality_penalty),
        ("aspect ranking modes", ranking_modes),
        ("overfit a small corpus", overfit),
        ("preprocessing and split", preprocessing_and_split),
        ("metric oracle", metric_oracle),
        ("ablation census and loss terms", ablation_census),
        ("deterministic metrics files", determinism),
        ("multi-aspect supervision helps", multi_aspect_supervision),
    ];
    let silent: Box<dyn Fn(&std::panic::PanicHookInfo<'_>) + Sync + Send> = Box::new(|_| {});
    let default_hook = std::panic::take_hook();
    std::panic::set_hook(silent);
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("[PASS] {} {name}: {detail} ({secs:.1}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {} {name}: {detail} ({secs:.1}s)", i + 1);
            }
        }
    }
    std::panic::set_hook(default_hook);
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
