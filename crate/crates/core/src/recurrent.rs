//! LSTM and BiLSTM encoders over embedded sequences.

use rand::Rng;

use crate::autodiff::{ParamId, ParamSet, Tape, Var};
use crate::error::{ManError, Result};
use crate::tensor::Tensor;

/// Parameters of one LSTM direction. Gates are stored separately, each as an
/// input matrix `in×H`, a recurrent matrix `H×H` and a `1×H` bias row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmParams {
    pub input: [ParamId; 4],
    pub recurrent: [ParamId; 4],
    pub bias: [ParamId; 4],
    pub input_dim: usize,
    pub cell: usize,
}

const GATES: [&str; 4] = ["input", "forget", "output", "candidate"];
const FORGET: usize = 1;

impl LstmParams {
    /// Uniform U(-1/√H, 1/√H) weights; the forget-gate bias starts at 1.
    pub fn init<R: Rng>(
        params: &mut ParamSet,
        prefix: &str,
        input_dim: usize,
        cell: usize,
        rng: &mut R,
    ) -> Self {
        let r = 1.0 / (cell as f64).sqrt();
        let mut draw = |rows: usize, cols: usize| {
            let v = (0..rows * cols).map(|_| rng.gen_range(-r..=r)).collect();
            Tensor::matrix(rows, cols, v).expect("shape matches")
        };
        let mut input = [ParamId(0); 4];
        let mut recurrent = [ParamId(0); 4];
        let mut bias = [ParamId(0); 4];
        for (g, name) in GATES.iter().enumerate() {
            input[g] = params.add(format!("{prefix}.{name}.w"), draw(input_dim, cell));
            recurrent[g] = params.add(format!("{prefix}.{name}.u"), draw(cell, cell));
            let b = if g == FORGET {
                Tensor::matrix(1, cell, vec![1.0; cell]).expect("shape matches")
            } else {
                draw(1, cell)
            };
            bias[g] = params.add(format!("{prefix}.{name}.b"), b);
        }
        LstmParams {
            input,
            recurrent,
            bias,
            input_dim,
            cell,
        }
    }
}

/// Hidden states `T×H`; rows at masked positions are zero.
#[derive(Clone, Debug)]
pub struct HiddenStates {
    pub values: Var,
    pub mask: Vec<bool>,
    pub width: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Direction {
    Forward,
    Backward,
}

fn run_direction(
    tape: &mut Tape,
    inputs: Var,
    p: &LstmParams,
    mask: &[bool],
    dir: Direction,
) -> Result<Vec<Var>> {
    let shape = tape.shape(inputs).to_vec();
    if shape.len() != 2 || shape[1] != p.input_dim {
        return Err(ManError::shape(format!(
            "LSTM expects inputs of width {}, got {:?}",
            p.input_dim, shape
        )));
    }
    let steps = shape[0];
    if mask.len() != steps {
        return Err(ManError::shape(format!(
            "mask of length {} for {steps} steps",
            mask.len()
        )));
    }
    let h_cell = p.cell;

    let mut projected = [inputs; 4];
    let mut recurrent = [inputs; 4];
    let mut bias = [inputs; 4];
    for g in 0..4 {
        let w = tape.param(p.input[g]);
        projected[g] = tape.matmul(inputs, w)?;
        recurrent[g] = tape.param(p.recurrent[g]);
        bias[g] = tape.param(p.bias[g]);
    }

    let zero_row = tape.constant(Tensor::zeros(&[1, h_cell]));
    let mut h = zero_row;
    let mut c = zero_row;
    let mut rows = vec![zero_row; steps];

    let order: Box<dyn Iterator<Item = usize>> = match dir {
        Direction::Forward => Box::new(0..steps),
        Direction::Backward => Box::new((0..steps).rev()),
    };
    for t in order {
        if !mask[t] {
            // State carries over; the emitted row stays zero.
            continue;
        }
        let mut pre = [h; 4];
        for g in 0..4 {
            let x = tape.select_row(projected[g], t)?;
            let hu = tape.matmul(h, recurrent[g])?;
            let s = tape.add(x, hu)?;
            pre[g] = tape.add(s, bias[g])?;
        }
        let i = tape.sigmoid(pre[0])?;
        let f = tape.sigmoid(pre[1])?;
        let o = tape.sigmoid(pre[2])?;
        let cand = tape.tanh(pre[3])?;
        let keep = tape.mul(f, c)?;
        let write = tape.mul(i, cand)?;
        c = tape.add(keep, write)?;
        let tc = tape.tanh(c)?;
        h = tape.mul(o, tc)?;
        rows[t] = h;
    }
    Ok(rows)
}

/// Unidirectional LSTM over `inputs` (`T×in`).
pub fn lstm_forward(
    tape: &mut Tape,
    inputs: Var,
    params: &LstmParams,
    mask: &[bool],
) -> Result<HiddenStates> {
    let rows = run_direction(tape, inputs, params, mask, Direction::Forward)?;
    let values = tape.concat(&rows, 0)?;
    Ok(HiddenStates {
        values,
        mask: mask.to_vec(),
        width: params.cell,
    })
}

/// Row `t` is `forward_t ‖ backward_t`; the backward direction reads the
/// unmasked positions in reverse order.
pub fn bilstm_forward(
    tape: &mut Tape,
    inputs: Var,
    fwd: &LstmParams,
    bwd: &LstmParams,
    mask: &[bool],
) -> Result<HiddenStates> {
    let f = run_direction(tape, inputs, fwd, mask, Direction::Forward)?;
    let b = run_direction(tape, inputs, bwd, mask, Direction::Backward)?;
    let f = tape.concat(&f, 0)?;
    let b = tape.concat(&b, 0)?;
    let values = tape.concat(&[f, b], 1)?;
    Ok(HiddenStates {
        values,
        mask: mask.to_vec(),
        width: fwd.cell + bwd.cell,
    })
}
