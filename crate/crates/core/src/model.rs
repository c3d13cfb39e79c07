//! The multiple-attention network: embeddings, recurrent encoder, one
//! attention encoder per aspect, K aspect heads and one overall head, plus
//! the training objective and the aspect-ranking explanation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    aspect_attention, mean_embedding, stack_rows, AspectAttention, AspectAttentionParams,
    AttentionTrace,
};
use crate::autodiff::{ParamId, ParamSet, Tape, Var};
use crate::data::ProcessedExample;
use crate::embedding::{embed_sequence, EmbeddingTables};
use crate::error::{ManError, Result};
use crate::recurrent::{bilstm_forward, lstm_forward, HiddenStates, LstmParams};
use crate::tensor::Tensor;

pub const NUM_CLASSES: usize = 2;
/// Probability clamp used by the cross-entropy terms.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub disable_position_attention: bool,
    pub disable_alpha_orth: bool,
    pub disable_beta_orth: bool,
    pub disable_l2: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManConfig {
    /// Aspect names in the fixed order used by heads and the overall representation.
    pub aspects: Vec<String>,
    pub embed_dim: usize,
    /// LSTM cell width; the hidden width H doubles when bidirectional.
    pub hidden_size: usize,
    pub max_len: usize,
    pub bidirectional: bool,
    pub delta: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub ablation: Ablation,
}

impl Default for ManConfig {
    fn default() -> Self {
        ManConfig {
            aspects: ["Food", "Service", "Value", "Atmosphere"]
                .map(String::from)
                .to_vec(),
            embed_dim: 300,
            hidden_size: 64,
            max_len: 256,
            bidirectional: true,
            delta: 4,
            lambda1: 0.5,
            lambda2: 0.5,
            lambda3: 0.5,
            lambda4: 0.01,
            ablation: Ablation::default(),
        }
    }
}

impl ManConfig {
    pub fn num_aspects(&self) -> usize {
        self.aspects.len()
    }

    /// Width H of the hidden states fed to attention.
    pub fn hidden_width(&self) -> usize {
        if self.bidirectional {
            2 * self.hidden_size
        } else {
            self.hidden_size
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_aspects();
        if k == 0 {
            return Err(ManError::Config("at least one aspect is required".into()));
        }
        if self.delta > k {
            return Err(ManError::Config(format!(
                "delta = {} exceeds the aspect count {k}",
                self.delta
            )));
        }
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ManError::Config(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        if self.embed_dim == 0 || self.hidden_size == 0 || self.max_len == 0 {
            return Err(ManError::Config(
                "embed_dim, hidden_size and max_len must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Classifier parameter pairs `(W: in×C, b: 1×C)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassifierHeads {
    pub aspect: Vec<(ParamId, ParamId)>,
    pub overall: (ParamId, ParamId),
}

#[derive(Clone, Debug)]
pub struct ManParams {
    pub params: ParamSet,
    pub embedding: EmbeddingTables,
    pub lstm_fwd: LstmParams,
    pub lstm_bwd: Option<LstmParams>,
    pub attention: Vec<AspectAttentionParams>,
    pub heads: ClassifierHeads,
}

impl ManParams {
    /// Randomly initialized parameters with a fresh embedding table.
    pub fn init<R: Rng>(config: &ManConfig, vocab_size: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let embedding = EmbeddingTables::init(
            &mut params,
            vocab_size,
            config.embed_dim,
            config.max_len,
            rng,
        );
        Self::init_rest(config, params, embedding, rng)
    }

    /// Builds everything downstream of an existing embedding table (for
    /// example one loaded from a pretrained file).
    pub fn init_rest<R: Rng>(
        config: &ManConfig,
        mut params: ParamSet,
        embedding: EmbeddingTables,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let input_dim = 2 * config.embed_dim;
        let cell = config.hidden_size;
        let lstm_fwd = LstmParams::init(&mut params, "lstm.fwd", input_dim, cell, rng);
        let lstm_bwd = config
            .bidirectional
            .then(|| LstmParams::init(&mut params, "lstm.bwd", input_dim, cell, rng));
        let hidden = config.hidden_width();
        let attention = (0..config.num_aspects())
            .map(|k| {
                AspectAttentionParams::init(
                    &mut params,
                    &format!("attention.{k}"),
                    hidden,
                    input_dim,
                    !config.ablation.disable_position_attention,
                    rng,
                )
            })
            .collect();
        let mut head = |name: &str, input: usize, params: &mut ParamSet| {
            let r = 1.0 / (input as f64).sqrt();
            let w = (0..input * NUM_CLASSES).map(|_| rng.gen_range(-r..=r)).collect();
            let w = params.add(
                format!("{name}.w"),
                Tensor::matrix(input, NUM_CLASSES, w).expect("shape matches"),
            );
            let b = params.add(format!("{name}.b"), Tensor::zeros(&[1, NUM_CLASSES]));
            (w, b)
        };
        let aspect_heads = (0..config.num_aspects())
            .map(|k| head(&format!("head.aspect.{k}"), hidden, &mut params))
            .collect();
        let overall = head("head.overall", hidden * config.num_aspects(), &mut params);
        Ok(ManParams {
            params,
            embedding,
            lstm_fwd,
            lstm_bwd,
            attention,
            heads: ClassifierHeads {
                aspect: aspect_heads,
                overall,
            },
        })
    }

    pub fn scalar_count(&self) -> usize {
        self.params.scalar_count()
    }
}

/// Tape handles produced by [`forward`].
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub y_aspect: Vec<Var>,
    pub y_overall: Var,
    pub attention: Vec<AspectAttention>,
    pub s_overall: Var,
    pub mask: Vec<bool>,
}

/// Plain-value result of a forward pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardOutput {
    pub y_aspect: Vec<[f64; 2]>,
    pub y_overall: [f64; 2],
    pub traces: Vec<AttentionTrace>,
    pub s_overall: Vec<f64>,
}

impl ForwardVars {
    pub fn output(&self, tape: &Tape) -> ForwardOutput {
        let pair = |v: Var| {
            let p = tape.value(v);
            [p[0], p[1]]
        };
        ForwardOutput {
            y_aspect: self.y_aspect.iter().map(|&v| pair(v)).collect(),
            y_overall: pair(self.y_overall),
            traces: self
                .attention
                .iter()
                .map(|a| a.trace(tape, &self.mask))
                .collect(),
            s_overall: tape.value(self.s_overall).to_vec(),
        }
    }
}

/// Argmax class of a probability pair; ties go to the negative class.
pub fn predict(p: [f64; 2]) -> u8 {
    u8::from(p[1] > p[0])
}

fn classify(tape: &mut Tape, s: Var, (w, b): (ParamId, ParamId)) -> Result<Var> {
    let w = tape.param(w);
    let b = tape.param(b);
    let logits = tape.matmul(s, w)?;
    let logits = tape.add(logits, b)?;
    tape.softmax(logits)
}

/// Embedding, recurrence, per-aspect attention and softmax heads.
pub fn forward(
    tape: &mut Tape,
    example: &ProcessedExample,
    model: &ManParams,
    config: &ManConfig,
) -> Result<ForwardVars> {
    let mask = &example.mask;
    if mask.len() != example.tokens.len() {
        return Err(ManError::shape("token and mask lengths differ"));
    }
    let embedded = embed_sequence(tape, &model.embedding, &example.tokens)?;
    let h: HiddenStates = match &model.lstm_bwd {
        Some(bwd) => bilstm_forward(tape, embedded, &model.lstm_fwd, bwd, mask)?,
        None => lstm_forward(tape, embedded, &model.lstm_fwd, mask)?,
    };
    let e_bar = mean_embedding(tape, embedded, mask)?;

    let k = config.num_aspects();
    let mut attention = Vec::with_capacity(k);
    let mut y_aspect = Vec::with_capacity(k);
    for a in 0..k {
        let att = aspect_attention(tape, &h, e_bar, &model.attention[a])?;
        y_aspect.push(classify(tape, att.s, model.heads.aspect[a])?);
        attention.push(att);
    }
    let contexts: Vec<Var> = attention.iter().map(|a| a.s).collect();
    let s_overall = tape.concat(&contexts, 1)?;
    let y_overall = classify(tape, s_overall, model.heads.overall)?;
    Ok(ForwardVars {
        y_aspect,
        y_overall,
        attention,
        s_overall,
        mask: mask.clone(),
    })
}

/// `-t·ln(y₁) - (1-t)·ln(1-y₁)` with `y₁` clamped to `[ε, 1-ε]`.
pub fn cross_entropy(tape: &mut Tape, y: Var, target: u8) -> Result<Var> {
    let y1 = tape.index(y, 1)?;
    let y1 = tape.clamp(y1, PROB_EPS, 1.0 - PROB_EPS);
    let p = if target == 1 { y1 } else { tape.affine(y1, -1.0, 1.0) };
    let l = tape.log(p)?;
    Ok(tape.scale(l, -1.0))
}

pub fn cross_entropy_value(y: [f64; 2], target: u8) -> f64 {
    let y1 = y[1].clamp(PROB_EPS, 1.0 - PROB_EPS);
    let t = f64::from(target);
    -t * y1.ln() - (1.0 - t) * (1.0 - y1).ln()
}

/// `‖M̂M̂ᵀ − I‖_F` where `M̂` has unit-norm rows. A zero row has no diagonal
/// target, so it contributes nothing.
pub fn orthogonal_penalty(tape: &mut Tape, m: Var) -> Result<Var> {
    let normalized = tape.row_normalize(m);
    let k = tape.shape(m).first().copied().unwrap_or(1);
    let t = tape.value(m).len() / k.max(1);
    let mut target = Tensor::zeros(&[k, k]);
    {
        let vals = tape.value(m);
        let tv = target.values_mut();
        for r in 0..k {
            if vals[r * t..(r + 1) * t].iter().any(|&x| x != 0.0) {
                tv[r * k + r] = 1.0;
            }
        }
    }
    let tr = tape.transpose(normalized)?;
    let gram = tape.matmul(normalized, tr)?;
    let target = tape.constant(target);
    let diff = tape.sub(gram, target)?;
    Ok(tape.norm(diff))
}

/// Value-only evaluation of [`orthogonal_penalty`].
pub fn orthogonal_penalty_value(m: &Tensor) -> Result<f64> {
    let ps = ParamSet::new();
    let mut tape = Tape::new(&ps);
    let v = tape.constant(m.clone());
    let p = orthogonal_penalty(&mut tape, v)?;
    Ok(tape.scalar(p))
}

/// Individual objective terms (unweighted) and the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub overall: f64,
    /// Sum of the selected aspect cross-entropies.
    pub aspect: f64,
    pub aspects_used: usize,
    pub r_alpha: f64,
    pub r_beta: f64,
    pub l2: f64,
    pub total: f64,
}

/// Indices of the aspects whose cross-entropy enters the loss: the first
/// `min(delta, rated)` rated aspects in aspect order.
pub fn selected_aspects(labels: &[Option<u8>], delta: usize) -> Vec<usize> {
    labels
        .iter()
        .enumerate()
        .filter_map(|(k, l)| l.map(|_| k))
        .take(delta)
        .collect()
}

/// `‖θ‖²` over every parameter, excluding frozen rows.
pub fn l2_penalty(tape: &mut Tape) -> Result<Var> {
    let ps = tape.params();
    let mut terms = Vec::with_capacity(ps.len());
    for id in ps.ids() {
        let v = tape.param(id);
        terms.push(tape.sum_squares(v, ps.frozen_rows(id)));
    }
    let all = tape.concat(&terms, 0)?;
    Ok(tape.sum(all))
}

/// Weighted objective without the weight penalty; the training loop adds
/// `λ₄‖θ‖²` once per batch.
pub fn data_loss(
    tape: &mut Tape,
    out: &ForwardVars,
    example: &ProcessedExample,
    config: &ManConfig,
) -> Result<(Var, LossTerms)> {
    let mut terms = LossTerms::default();
    let lo = cross_entropy(tape, out.y_overall, example.overall)?;
    terms.overall = tape.scalar(lo);

    let selected = selected_aspects(&example.aspects, config.delta);
    terms.aspects_used = selected.len();
    let mut total = lo;
    if !selected.is_empty() {
        let mut parts = Vec::with_capacity(selected.len());
        for &k in &selected {
            let label = example.aspects[k].expect("selected aspects are rated");
            parts.push(cross_entropy(tape, out.y_aspect[k], label)?);
        }
        let cat = tape.concat(&parts, 0)?;
        let sum = tape.sum(cat);
        terms.aspect = tape.scalar(sum);
        let weighted = tape.scale(sum, config.lambda1);
        total = tape.add(total, weighted)?;
    }

    let alphas: Vec<Var> = out.attention.iter().map(|a| a.alpha).collect();
    let m_alpha = stack_rows(tape, &alphas)?;
    let r_alpha = orthogonal_penalty(tape, m_alpha)?;
    terms.r_alpha = tape.scalar(r_alpha);
    if !config.ablation.disable_alpha_orth {
        let w = tape.scale(r_alpha, config.lambda2);
        total = tape.add(total, w)?;
    }

    let betas: Option<Vec<Var>> = out.attention.iter().map(|a| a.beta).collect();
    if let Some(betas) = betas {
        let m_beta = stack_rows(tape, &betas)?;
        let r_beta = orthogonal_penalty(tape, m_beta)?;
        terms.r_beta = tape.scalar(r_beta);
        if !config.ablation.disable_beta_orth {
            let w = tape.scale(r_beta, config.lambda3);
            total = tape.add(total, w)?;
        }
    }
    terms.total = tape.scalar(total);
    Ok((total, terms))
}

/// Full per-example objective
/// `L_o + λ₁ Σ_{k∈S} L_k + λ₂ R_α + λ₃ R_β + λ₄ ‖θ‖²`, with θ being every
/// parameter on the tape's [`ParamSet`].
pub fn combined_loss(
    tape: &mut Tape,
    out: &ForwardVars,
    example: &ProcessedExample,
    config: &ManConfig,
) -> Result<(Var, LossTerms)> {
    let (data, mut terms) = data_loss(tape, out, example, config)?;
    let l2 = l2_penalty(tape)?;
    terms.l2 = tape.scalar(l2);
    if config.ablation.disable_l2 {
        return Ok((data, terms));
    }
    let w = tape.scale(l2, config.lambda4);
    let total = tape.add(data, w)?;
    terms.total = tape.scalar(total);
    Ok((total, terms))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum RankingMode {
    /// Sum of both attention weight vectors.
    Literal,
    /// Literal score scaled by the norm of the aspect context vector.
    #[default]
    Magnitude,
}

impl std::str::FromStr for RankingMode {
    type Err = ManError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(RankingMode::Literal),
            "magnitude" => Ok(RankingMode::Magnitude),
            other => Err(ManError::Validation(format!(
                "unknown ranking mode {other:?} (expected literal or magnitude)"
            ))),
        }
    }
}

impl std::fmt::Display for RankingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RankingMode::Literal => "literal",
            RankingMode::Magnitude => "magnitude",
        })
    }
}

pub fn aspect_score(trace: &AttentionTrace, mode: RankingMode) -> f64 {
    let mass: f64 = trace.alpha.iter().sum::<f64>()
        + trace.beta.as_ref().map_or(0.0, |b| b.iter().sum::<f64>());
    match mode {
        RankingMode::Literal => mass,
        RankingMode::Magnitude => crate::autodiff::norm2(&trace.s) * mass,
    }
}

/// Aspects ordered by descending score; ties keep ascending aspect index.
pub fn aspect_rank(traces: &[AttentionTrace], mode: RankingMode) -> Vec<(usize, f64)> {
    let mut ranked: Vec<(usize, f64)> = traces
        .iter()
        .enumerate()
        .map(|(k, t)| (k, aspect_score(t, mode)))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}
