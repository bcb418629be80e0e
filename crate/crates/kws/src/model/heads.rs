//! The three keyword-spotting heads over encoder hidden states.

use super::encoder::{feedforward, residual_ln};
use super::{Bound, CrossAttnDecoderConfig, EncoderConfig};
use crate::autodiff::{Tape, Var};
use crate::tensor::Tensor;

/// Cross-attention decoder.
///
/// A trainable query sequence (no positional encoding: the queries are fixed
/// at inference and carry no order semantics) goes through `P` decoder
/// blocks: self-attention over the queries, cross-attention against the
/// encoder hidden states, and a position-wise feedforward, each followed by
/// residual + layernorm. The block output is reshaped to one
/// `query_len · d_query` row and mapped linearly to 2 phrase logits. No
/// masking, no recurrence: the decoder is non-autoregressive and its output
/// size is independent of the utterance length.
pub fn cross_attn_head(
    tape: &Tape,
    b: &Bound,
    enc_cfg: &EncoderConfig,
    cfg: &CrossAttnDecoderConfig,
    hidden: Var,
) -> Var {
    assert!(tape.shape(hidden)[0] >= 1);
    let mut q = b.var("head.xattn.query");
    for p in 0..cfg.n_blocks {
        let prefix = format!("head.xattn.block{p}");
        let self_attn = super::multi_head_attention(
            tape,
            &b.mha_vars(&format!("{prefix}.self_attn")),
            enc_cfg.n_heads,
            q,
            q,
            q,
        );
        q = residual_ln(b, &format!("{prefix}.ln1"), q, self_attn);
        let cross = super::multi_head_attention(
            tape,
            &b.mha_vars(&format!("{prefix}.cross_attn")),
            enc_cfg.n_heads,
            q,
            hidden,
            hidden,
        );
        q = residual_ln(b, &format!("{prefix}.ln2"), q, cross);
        let ff = feedforward(b, &format!("{prefix}.ff"), q);
        q = residual_ln(b, &format!("{prefix}.ln3"), q, ff);
    }
    let flat = tape.reshape(q, vec![1, cfg.reshape_width()]);
    let logits = tape.add_rowvec(
        tape.matmul(flat, b.var("head.xattn.out.w")),
        b.var("head.xattn.out.b"),
    );
    tape.reshape(logits, vec![cfg.n_phrase_logits])
}

/// Conventional split-branch head: a second linear layer off the encoder
/// hidden states producing per-frame (positive, negative, blank) logits for
/// the phrase-level CTC loss.
pub fn split_branch_head(tape: &Tape, b: &Bound, hidden: Var) -> Var {
    tape.add_rowvec(
        tape.matmul(hidden, b.var("head.split.w")),
        b.var("head.split.b"),
    )
}

/// One step of an LSTM cell with gate order (input, forget, cell, output).
fn lstm_step(
    tape: &Tape,
    wx: Var,
    wh: Var,
    bias: Var,
    x_t: Var,
    h: Var,
    c: Var,
    units: usize,
) -> (Var, Var) {
    let gates = tape.add_rowvec(
        tape.add(tape.matmul(x_t, wx), tape.matmul(h, wh)),
        bias,
    );
    let gate = |idx: usize| tape.slice(gates, 0, 1, idx * units, (idx + 1) * units);
    let i = tape.sigmoid(gate(0));
    let f = tape.sigmoid(gate(1));
    let g = tape.tanh(gate(2));
    let o = tape.sigmoid(gate(3));
    let c_next = tape.add(tape.mul(f, c), tape.mul(i, g));
    let h_next = tape.mul(o, tape.tanh(c_next));
    (h_next, c_next)
}

/// Run one LSTM direction over `hidden`, returning the final hidden state.
fn lstm_direction(
    tape: &Tape,
    b: &Bound,
    prefix: &str,
    hidden: Var,
    units: usize,
    reverse: bool,
) -> Var {
    let t_len = tape.shape(hidden)[0];
    let d = tape.shape(hidden)[1];
    let wx = b.var(&format!("{prefix}.wx"));
    let wh = b.var(&format!("{prefix}.wh"));
    let bias = b.var(&format!("{prefix}.b"));
    let mut h = tape.leaf(Tensor::zeros(vec![1, units]));
    let mut c = tape.leaf(Tensor::zeros(vec![1, units]));
    let order: Vec<usize> = if reverse {
        (0..t_len).rev().collect()
    } else {
        (0..t_len).collect()
    };
    for t in order {
        let x_t = tape.slice(hidden, t, t + 1, 0, d);
        let (h_next, c_next) = lstm_step(tape, wx, wh, bias, x_t, h, c, units);
        h = h_next;
        c = c_next;
    }
    h
}

/// BLSTM decoder: one bidirectional LSTM layer over the encoder hidden
/// states; the forward output at the last frame and the backward output at
/// the first frame are concatenated and mapped linearly to 2 logits. For a
/// single-frame utterance both directions read the same (only) timestep.
pub fn blstm_head(tape: &Tape, b: &Bound, hidden: Var, units: usize) -> Var {
    assert!(tape.shape(hidden)[0] >= 1);
    let fwd_last = lstm_direction(tape, b, "head.blstm.fwd", hidden, units, false);
    let bwd_first = lstm_direction(tape, b, "head.blstm.bwd", hidden, units, true);
    let concat = tape.concat_cols(&[fwd_last, bwd_first]);
    let logits = tape.add_rowvec(
        tape.matmul(concat, b.var("head.blstm.out.w")),
        b.var("head.blstm.out.b"),
    );
    tape.reshape(logits, vec![2])
}
