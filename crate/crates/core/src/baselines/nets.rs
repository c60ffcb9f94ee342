//! Small LSTM runners shared by the two neural baselines.

use crate::tensor::{ParamId, ParamSet, Tape, Tensor, Var};

#[derive(Clone, Copy)]
pub(crate) struct LstmIds {
    pub w: ParamId,
    pub b: ParamId,
}

pub(crate) fn alloc_lstm(
    params: &mut ParamSet,
    prefix: &str,
    input: usize,
    hidden: usize,
    rng: &mut impl rand::Rng,
) -> LstmIds {
    let (w, b) = params.lstm(prefix, input, hidden, rng);
    LstmIds { w, b }
}

/// Runs one direction over `inputs` from a zero state; returns per-position
/// hidden states and the final (h, c).
pub(crate) fn run_lstm(
    tape: &mut Tape,
    params: &ParamSet,
    ids: LstmIds,
    inputs: &[Var],
    hidden: usize,
    reverse: bool,
) -> (Vec<Var>, (Var, Var)) {
    let w = tape.param(params, ids.w);
    let b = tape.param(params, ids.b);
    let zero = tape.constant(Tensor::zeros(&[hidden]));
    let (mut h, mut c) = (zero, zero);
    let mut states = vec![zero; inputs.len()];
    let order: Vec<usize> = if reverse {
        (0..inputs.len()).rev().collect()
    } else {
        (0..inputs.len()).collect()
    };
    for i in order {
        let (h2, c2) = tape.lstm_cell(w, b, inputs[i], h, c);
        states[i] = h2;
        h = h2;
        c = c2;
    }
    (states, (h, c))
}

/// Bidirectional run: concatenated per-position states plus the two final
/// (h, c) pairs, each `hidden/2` wide.
pub(crate) fn run_bilstm(
    tape: &mut Tape,
    params: &ParamSet,
    fwd: LstmIds,
    bwd: LstmIds,
    inputs: &[Var],
    half: usize,
) -> (Vec<Var>, (Var, Var), (Var, Var)) {
    let (f_states, f_final) = run_lstm(tape, params, fwd, inputs, half, false);
    let (b_states, b_final) = run_lstm(tape, params, bwd, inputs, half, true);
    let states = f_states.iter().zip(&b_states).map(|(f, b)| tape.concat(&[*f, *b])).collect();
    (states, f_final, b_final)
}
