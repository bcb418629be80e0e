//! Scaled dot-product attention and multi-head attention.

use crate::autodiff::{Tape, Var};

/// `softmax(QKᵀ/√d)V` where `d` is the shared query/key width. Output rows
/// are convex combinations of the value rows.
pub fn attention(tape: &Tape, q: Var, k: Var, v: Var) -> Var {
    attention_with_probe(tape, q, k, v, None)
}

/// Same as [`attention`] but optionally exposes the attention weight matrix
/// (softmax output) so tests can probe row-stochasticity.
pub fn attention_with_probe(
    tape: &Tape,
    q: Var,
    k: Var,
    v: Var,
    probe: Option<&mut Vec<Var>>,
) -> Var {
    let d_q = tape.shape(q)[1];
    let d_k = tape.shape(k)[1];
    assert_eq!(
        d_q, d_k,
        "attention: query width {d_q} and key width {d_k} differ"
    );
    let (k_rows, v_rows) = (tape.shape(k)[0], tape.shape(v)[0]);
    assert_eq!(
        k_rows, v_rows,
        "attention: key rows {k_rows} and value rows {v_rows} differ"
    );
    let scores = tape.mul_scalar(
        tape.matmul(q, tape.transpose(k)),
        1.0 / (d_q as f64).sqrt(),
    );
    let weights = tape.softmax_rows(scores);
    if let Some(out) = probe {
        out.push(weights);
    }
    tape.matmul(weights, v)
}

/// Affine projection variables for one multi-head attention layer.
///
/// Queries are projected from the query-side input width, keys/values from
/// the key/value-side input width; `wo`/`bo` is the output affine applied to
/// the concatenated heads.
#[derive(Copy, Clone)]
pub struct MhaVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

/// Multi-head attention: per-head affine projections, attention per head,
/// concatenation, output affine. Heads are column slices of one projected
/// matrix, which is equivalent to per-head projection matrices.
pub fn multi_head_attention(
    tape: &Tape,
    p: &MhaVars,
    n_heads: usize,
    q_in: Var,
    k_in: Var,
    v_in: Var,
) -> Var {
    multi_head_attention_with_probe(tape, p, n_heads, q_in, k_in, v_in, None)
}

pub fn multi_head_attention_with_probe(
    tape: &Tape,
    p: &MhaVars,
    n_heads: usize,
    q_in: Var,
    k_in: Var,
    v_in: Var,
    mut probe: Option<&mut Vec<Var>>,
) -> Var {
    let d_out = tape.shape(p.wq)[1];
    assert!(n_heads > 0, "multi_head_attention: zero heads");
    assert_eq!(
        d_out % n_heads,
        0,
        "multi_head_attention: width {d_out} not divisible by {n_heads} heads"
    );
    let d_head = d_out / n_heads;

    let q = tape.add_rowvec(tape.matmul(q_in, p.wq), p.bq);
    let k = tape.add_rowvec(tape.matmul(k_in, p.wk), p.bk);
    let v = tape.add_rowvec(tape.matmul(v_in, p.wv), p.bv);

    let m = tape.shape(q)[0];
    let n = tape.shape(k)[0];
    let heads: Vec<Var> = (0..n_heads)
        .map(|h| {
            let c0 = h * d_head;
            let c1 = (h + 1) * d_head;
            let qh = tape.slice(q, 0, m, c0, c1);
            let kh = tape.slice(k, 0, n, c0, c1);
            let vh = tape.slice(v, 0, n, c0, c1);
            attention_with_probe(tape, qh, kh, vh, probe.as_deref_mut())
        })
        .collect();
    let concat = tape.concat_cols(&heads);
    tape.add_rowvec(tape.matmul(concat, p.wo), p.bo)
}
