//! The transformer phonetic encoder.
//!
//! Input projection → sinusoidal positional encoding → `n_blocks` of
//! [self-attention → residual + layernorm → feedforward → residual +
//! layernorm] → linear projection to phone logits. Both the final hidden
//! states and the phone logits are returned; the heads consume the hidden
//! states.

use super::{Bound, EncoderConfig};
use crate::autodiff::Var;
use crate::tensor::Tensor;

const LN_EPS: f64 = 1e-6;

/// Encoder result for one utterance.
pub struct EncoderOutput {
    /// `T'×d_model` hidden states.
    pub hidden: Var,
    /// `T'×n_phone_logits` per-frame phone logits.
    pub phone_logits: Var,
}

/// Original-transformer sinusoidal positional encoding table.
pub fn sinusoidal_pe(t_len: usize, d_model: usize) -> Tensor {
    let mut data = vec![0.0; t_len * d_model];
    for t in 0..t_len {
        for i in 0..d_model / 2 {
            let rate = 1.0 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            data[t * d_model + 2 * i] = (t as f64 * rate).sin();
            if 2 * i + 1 < d_model {
                data[t * d_model + 2 * i + 1] = (t as f64 * rate).cos();
            }
        }
    }
    Tensor::matrix(t_len, d_model, data)
}

/// One position-wise feedforward: `relu(x·w1 + b1)·w2 + b2`.
pub(super) fn feedforward(b: &Bound, prefix: &str, x: Var) -> Var {
    let tape = b.tape();
    let h = tape.relu(tape.add_rowvec(
        tape.matmul(x, b.var(&format!("{prefix}.w1"))),
        b.var(&format!("{prefix}.b1")),
    ));
    tape.add_rowvec(
        tape.matmul(h, b.var(&format!("{prefix}.w2"))),
        b.var(&format!("{prefix}.b2")),
    )
}

pub(super) fn residual_ln(b: &Bound, prefix: &str, x: Var, delta: Var) -> Var {
    let tape = b.tape();
    tape.layer_norm(
        tape.add(x, delta),
        b.var(&format!("{prefix}.gain")),
        b.var(&format!("{prefix}.bias")),
        LN_EPS,
    )
}

/// Run the encoder over a `T×input_dim` feature matrix.
pub fn encode(
    tape: &crate::autodiff::Tape,
    b: &Bound,
    cfg: &EncoderConfig,
    features: Var,
) -> EncoderOutput {
    let shape = tape.shape(features);
    assert_eq!(
        shape[1], cfg.input_dim,
        "encoder input width {} does not match configured input_dim {}",
        shape[1], cfg.input_dim
    );
    let t_len = shape[0];

    let projected = tape.add_rowvec(
        tape.matmul(features, b.var("enc.in_proj.w")),
        b.var("enc.in_proj.b"),
    );
    let mut h = tape.add(projected, tape.leaf(sinusoidal_pe(t_len, cfg.d_model)));

    for i in 0..cfg.n_blocks {
        let p = format!("enc.block{i}");
        let attn = super::multi_head_attention(
            tape,
            &b.mha_vars(&format!("{p}.attn")),
            cfg.n_heads,
            h,
            h,
            h,
        );
        h = residual_ln(b, &format!("{p}.ln1"), h, attn);
        let ff = feedforward(b, &format!("{p}.ff"), h);
        h = residual_ln(b, &format!("{p}.ln2"), h, ff);
    }

    let phone_logits = tape.add_rowvec(
        tape.matmul(h, b.var("enc.phone_out.w")),
        b.var("enc.phone_out.b"),
    );
    EncoderOutput { hidden: h, phone_logits }
}
