//! Two-stage per-aspect attention: bilinear self-attention over hidden
//! states, followed by position-aware attention keyed on the mean embedding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamSet, Reduction, Tape, Var};
use crate::error::{ManError, Result};
use crate::recurrent::HiddenStates;
use crate::tensor::Tensor;

/// One aspect's attention parameters. The position-aware pair is absent when
/// that stage is ablated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AspectAttentionParams {
    /// `H×H`
    pub w_alpha: ParamId,
    pub b_alpha: ParamId,
    /// `2d×H`
    pub w_beta: Option<ParamId>,
    pub b_beta: Option<ParamId>,
}

impl AspectAttentionParams {
    pub fn init<R: Rng>(
        params: &mut ParamSet,
        prefix: &str,
        hidden: usize,
        embed_width: usize,
        position_stage: bool,
        rng: &mut R,
    ) -> Self {
        let r = 1.0 / (hidden as f64).sqrt();
        let mut draw = |rows: usize, cols: usize| {
            let v = (0..rows * cols).map(|_| rng.gen_range(-r..=r)).collect();
            Tensor::matrix(rows, cols, v).expect("shape matches")
        };
        let w_alpha = params.add(format!("{prefix}.w_alpha"), draw(hidden, hidden));
        let b_alpha = params.add(format!("{prefix}.b_alpha"), Tensor::scalar(0.0));
        let (w_beta, b_beta) = if position_stage {
            let w = params.add(format!("{prefix}.w_beta"), draw(embed_width, hidden));
            let b = params.add(format!("{prefix}.b_beta"), Tensor::scalar(0.0));
            (Some(w), Some(b))
        } else {
            (None, None)
        };
        AspectAttentionParams {
            w_alpha,
            b_alpha,
            w_beta,
            b_beta,
        }
    }
}

/// Tape handles for one aspect's attention computation.
#[derive(Clone, Copy, Debug)]
pub struct AspectAttention {
    /// Self-attention logits `[T]`.
    pub f: Var,
    pub alpha: Var,
    /// Weighted hidden states `T×H`, row `t` is `alpha_t · h_t`.
    pub z: Var,
    pub g: Option<Var>,
    pub beta: Option<Var>,
    /// Aspect context vector `1×H`.
    pub s: Var,
}

/// Plain-value snapshot of an [`AspectAttention`], kept for explanation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub f: Vec<f64>,
    pub alpha: Vec<f64>,
    pub z: Tensor,
    pub g: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
    pub s: Vec<f64>,
    pub mask: Vec<bool>,
}

impl AspectAttention {
    pub fn trace(&self, tape: &Tape, mask: &[bool]) -> AttentionTrace {
        AttentionTrace {
            f: tape.value(self.f).to_vec(),
            alpha: tape.value(self.alpha).to_vec(),
            z: tape.tensor(self.z),
            g: self.g.map(|g| tape.value(g).to_vec()),
            beta: self.beta.map(|b| tape.value(b).to_vec()),
            s: tape.value(self.s).to_vec(),
            mask: mask.to_vec(),
        }
    }
}

/// `f_t = tanh(h_t W_α h_tᵀ + b_α)`, `α = softmax(f)` over unmasked positions,
/// `z_t = α_t h_t`. Returns `(f, α, z)`.
pub fn self_attention(
    tape: &mut Tape,
    h: &HiddenStates,
    params: &AspectAttentionParams,
) -> Result<(Var, Var, Var)> {
    if !h.mask.iter().any(|&m| m) {
        return Err(ManError::EmptyAttention);
    }
    let w = tape.param(params.w_alpha);
    let b = tape.param(params.b_alpha);
    let hw = tape.matmul(h.values, w)?;
    let bilinear = tape.mul(hw, h.values)?;
    let per_pos = tape.reduce(Reduction::Sum, bilinear, Some(1))?;
    let pre = tape.add(per_pos, b)?;
    let f = tape.tanh(pre)?;
    let alpha = tape.masked_softmax(f, &h.mask)?;
    let z = tape.scale_rows(h.values, alpha)?;
    Ok((f, alpha, z))
}

/// `g_t = tanh(ē W_β h_tᵀ + b_β)`, `β = softmax(g)` over unmasked positions,
/// `s = Σ_t β_t z_t`. Returns `(g, β, s)` with `s` shaped `1×H`.
pub fn position_aware_attention(
    tape: &mut Tape,
    h: &HiddenStates,
    z: Var,
    e_bar: Var,
    w_beta: ParamId,
    b_beta: ParamId,
) -> Result<(Var, Var, Var)> {
    if !h.mask.iter().any(|&m| m) {
        return Err(ManError::EmptyAttention);
    }
    let steps = h.mask.len();
    let w = tape.param(w_beta);
    let b = tape.param(b_beta);
    let key = tape.matmul(e_bar, w)?;
    let key = tape.transpose(key)?;
    let scores = tape.matmul(h.values, key)?;
    let scores = tape.reshape(scores, &[steps])?;
    let pre = tape.add(scores, b)?;
    let g = tape.tanh(pre)?;
    let beta = tape.masked_softmax(g, &h.mask)?;
    let beta_row = tape.reshape(beta, &[1, steps])?;
    let s = tape.matmul(beta_row, z)?;
    Ok((g, beta, s))
}

/// Mean of the unmasked rows of `embedded` (`T×2d`), shaped `1×2d`.
pub fn mean_embedding(tape: &mut Tape, embedded: Var, mask: &[bool]) -> Result<Var> {
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Err(ManError::EmptyAttention);
    }
    let weights = mask
        .iter()
        .map(|&m| if m { 1.0 / n as f64 } else { 0.0 })
        .collect();
    let w = tape.constant(Tensor::matrix(1, mask.len(), weights)?);
    tape.matmul(w, embedded)
}

/// Runs both stages for one aspect. With `params.w_beta` absent the context
/// vector is `Σ_t z_t`.
pub fn aspect_attention(
    tape: &mut Tape,
    h: &HiddenStates,
    e_bar: Var,
    params: &AspectAttentionParams,
) -> Result<AspectAttention> {
    let (f, alpha, z) = self_attention(tape, h, params)?;
    match (params.w_beta, params.b_beta) {
        (Some(w), Some(b)) => {
            let (g, beta, s) = position_aware_attention(tape, h, z, e_bar, w, b)?;
            Ok(AspectAttention {
                f,
                alpha,
                z,
                g: Some(g),
                beta: Some(beta),
                s,
            })
        }
        _ => {
            let pooled = tape.reduce(Reduction::Sum, z, Some(0))?;
            let s = tape.reshape(pooled, &[1, h.width])?;
            Ok(AspectAttention {
                f,
                alpha,
                z,
                g: None,
                beta: None,
                s,
            })
        }
    }
}

/// Stacks per-aspect weight vectors (each `[T]`) into a `K×T` matrix on the tape.
pub fn stack_rows(tape: &mut Tape, rows: &[Var]) -> Result<Var> {
    let len = rows
        .first()
        .map(|r| tape.value(*r).len())
        .ok_or_else(|| ManError::shape("no rows to stack"))?;
    let mut reshaped = Vec::with_capacity(rows.len());
    for &r in rows {
        let n = tape.value(r).len();
        if n != len {
            return Err(ManError::shape(format!(
                "ragged attention rows: {n} vs {len}"
            )));
        }
        reshaped.push(tape.reshape(r, &[1, len])?);
    }
    tape.concat(&reshaped, 0)
}

/// `(M_α, M_β)` from completed traces, each `K×T`. `M_β` is `None` when the
/// traces carry no position-aware weights.
pub fn stack_attention_matrices(traces: &[AttentionTrace]) -> Result<(Tensor, Option<Tensor>)> {
    let first = traces
        .first()
        .ok_or_else(|| ManError::shape("no traces to stack"))?;
    let t = first.alpha.len();
    if traces.iter().any(|tr| tr.alpha.len() != t) {
        return Err(ManError::shape("traces have different lengths"));
    }
    let alpha = Tensor::matrix(
        traces.len(),
        t,
        traces.iter().flat_map(|tr| tr.alpha.iter().copied()).collect(),
    )?;
    let beta = if traces.iter().all(|tr| tr.beta.is_some()) {
        let vals: Vec<f64> = traces
            .iter()
            .flat_map(|tr| tr.beta.as_ref().expect("checked").iter().copied())
            .collect();
        if vals.len() != traces.len() * t {
            return Err(ManError::shape("traces have different lengths"));
        }
        Some(Tensor::matrix(traces.len(), t, vals)?)
    } else {
        None
    };
    Ok((alpha, beta))
}
