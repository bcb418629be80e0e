//! Training losses: CTC (phonetic and phrase-level), phrase cross-entropy,
//! and the multi-task combination `L = L_phone + α · L_phrase`.
//!
//! CTC is the standard forward algorithm over the blank-augmented label
//! lattice (self-loop, blank transition, skip between distinct labels),
//! entirely in the log domain. The gradient w.r.t. per-frame log-probs is the
//! negated state-posterior sum from the alpha/beta recursions, registered on
//! the tape as a custom op behind a stable `log_softmax_rows`.

use thiserror::Error;

use crate::autodiff::{Tape, Var};
use crate::gradcheck::{max_grad_error, Check, Scope};
use crate::rng;
use crate::tensor::Tensor;

/// Utterance-level keyword class.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum PhraseLabel {
    Positive,
    Negative,
}

impl PhraseLabel {
    /// Class index into 2-logit heads and the 3-class phrase-CTC alphabet.
    pub fn class_id(self) -> usize {
        match self {
            PhraseLabel::Positive => 0,
            PhraseLabel::Negative => 1,
        }
    }
}

/// Blank id inside the 3-class phrase-CTC alphabet (positive, negative, blank).
pub const PHRASE_CTC_BLANK: usize = 2;

/// Multi-task weighting; `alpha` balances phrase loss against phonetic loss.
#[derive(Copy, Clone, Debug)]
pub struct MtlConfig {
    pub alpha: f64,
}

impl Default for MtlConfig {
    fn default() -> Self {
        MtlConfig { alpha: 10.0 }
    }
}

#[derive(Debug, Error)]
pub enum LossError {
    /// The label sequence admits no CTC alignment in the given frame count.
    /// A hard error rather than an infinite loss: a silent +inf would
    /// destroy optimizer state.
    #[error("CTC-infeasible label sequence: needs at least {need} frames, logits provide {have}")]
    CtcInfeasible { need: usize, have: usize },
    #[error("CTC label id {id} invalid for {classes} classes with blank id {blank}")]
    CtcBadLabel { id: usize, classes: usize, blank: usize },
    #[error("multi-task batch loss requires at least one constituent loss")]
    EmptyBatch,
}

// ── pure log-domain CTC machinery ───────────────────────────────────────

fn lse2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Label of augmented-lattice state `s` (even states are blanks).
fn state_label(labels: &[usize], blank: usize, s: usize) -> usize {
    if s % 2 == 0 {
        blank
    } else {
        labels[s / 2]
    }
}

/// Minimum frame count that admits an alignment: one frame per label plus a
/// forced blank between equal consecutive labels.
pub fn ctc_min_frames(labels: &[usize]) -> usize {
    let repeats = labels.windows(2).filter(|w| w[0] == w[1]).count();
    labels.len() + repeats
}

fn validate_ctc(log_probs: &Tensor, labels: &[usize], blank: usize) -> Result<(), LossError> {
    let (t_len, classes) = (log_probs.rows(), log_probs.cols());
    assert!(classes >= 2, "CTC needs at least 2 classes, got {classes}");
    assert!(blank < classes, "blank id {blank} out of range for {classes} classes");
    for &id in labels {
        if id >= classes || id == blank {
            return Err(LossError::CtcBadLabel { id, classes, blank });
        }
    }
    let need = ctc_min_frames(labels).max(1);
    if need > t_len {
        return Err(LossError::CtcInfeasible { need, have: t_len });
    }
    Ok(())
}

/// Alpha recursion (emission-inclusive); returns the full `T×S` table.
fn ctc_alpha(log_probs: &Tensor, labels: &[usize], blank: usize) -> Vec<f64> {
    let t_len = log_probs.rows();
    let s_len = 2 * labels.len() + 1;
    let lab = |s: usize| state_label(labels, blank, s);
    let mut alpha = vec![f64::NEG_INFINITY; t_len * s_len];
    alpha[0] = log_probs.at(0, blank);
    if s_len > 1 {
        alpha[1] = log_probs.at(0, lab(1));
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut acc = alpha[(t - 1) * s_len + s];
            if s >= 1 {
                acc = lse2(acc, alpha[(t - 1) * s_len + s - 1]);
            }
            if s >= 2 && lab(s) != blank && lab(s) != lab(s - 2) {
                acc = lse2(acc, alpha[(t - 1) * s_len + s - 2]);
            }
            alpha[t * s_len + s] = acc + log_probs.at(t, lab(s));
        }
    }
    alpha
}

/// Beta recursion (emissions counted from `t+1` on), mirror of alpha.
fn ctc_beta(log_probs: &Tensor, labels: &[usize], blank: usize) -> Vec<f64> {
    let t_len = log_probs.rows();
    let s_len = 2 * labels.len() + 1;
    let lab = |s: usize| state_label(labels, blank, s);
    let mut beta = vec![f64::NEG_INFINITY; t_len * s_len];
    beta[(t_len - 1) * s_len + s_len - 1] = 0.0;
    if s_len > 1 {
        beta[(t_len - 1) * s_len + s_len - 2] = 0.0;
    }
    for t in (0..t_len.saturating_sub(1)).rev() {
        for s in 0..s_len {
            let mut acc = beta[(t + 1) * s_len + s] + log_probs.at(t + 1, lab(s));
            if s + 1 < s_len {
                acc = lse2(acc, beta[(t + 1) * s_len + s + 1] + log_probs.at(t + 1, lab(s + 1)));
            }
            if s + 2 < s_len && lab(s + 2) != blank && lab(s + 2) != lab(s) {
                acc = lse2(acc, beta[(t + 1) * s_len + s + 2] + log_probs.at(t + 1, lab(s + 2)));
            }
            beta[t * s_len + s] = acc;
        }
    }
    beta
}

/// Total log-probability `log p(labels | log_probs)` under CTC.
///
/// `log_probs` must be per-frame log-probabilities; use [`ctc_loss`] for the
/// differentiable path from raw logits.
pub fn ctc_log_prob(
    log_probs: &Tensor,
    labels: &[usize],
    blank: usize,
) -> Result<f64, LossError> {
    validate_ctc(log_probs, labels, blank)?;
    let t_len = log_probs.rows();
    let s_len = 2 * labels.len() + 1;
    let alpha = ctc_alpha(log_probs, labels, blank);
    let mut log_z = alpha[(t_len - 1) * s_len + s_len - 1];
    if s_len > 1 {
        log_z = lse2(log_z, alpha[(t_len - 1) * s_len + s_len - 2]);
    }
    Ok(log_z)
}

/// Gradient of `−log p(labels)` w.r.t. every per-frame log-probability:
/// the negated CTC state posterior, via alpha-beta.
fn ctc_grad_wrt_log_probs(log_probs: &Tensor, labels: &[usize], blank: usize) -> Tensor {
    let (t_len, classes) = (log_probs.rows(), log_probs.cols());
    let s_len = 2 * labels.len() + 1;
    let lab = |s: usize| state_label(labels, blank, s);
    let alpha = ctc_alpha(log_probs, labels, blank);
    let beta = ctc_beta(log_probs, labels, blank);
    let mut log_z = alpha[(t_len - 1) * s_len + s_len - 1];
    if s_len > 1 {
        log_z = lse2(log_z, alpha[(t_len - 1) * s_len + s_len - 2]);
    }
    let mut grad = vec![0.0; t_len * classes];
    let mut acc = vec![f64::NEG_INFINITY; classes];
    for t in 0..t_len {
        acc.fill(f64::NEG_INFINITY);
        for s in 0..s_len {
            let k = lab(s);
            acc[k] = lse2(acc[k], alpha[t * s_len + s] + beta[t * s_len + s]);
        }
        for k in 0..classes {
            if acc[k] != f64::NEG_INFINITY {
                grad[t * classes + k] = -(acc[k] - log_z).exp();
            }
        }
    }
    Tensor::matrix(t_len, classes, grad)
}

/// Greedy best-path score `Σ_t max_k log_probs[t, k]`. Normalizer for the
/// phonetic-branch confidence ratio.
pub fn best_path_log_prob(log_probs: &Tensor) -> f64 {
    (0..log_probs.rows())
        .map(|t| {
            log_probs
                .row(t)
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum()
}

// ── differentiable losses ───────────────────────────────────────────────

/// CTC loss `−log p(labels | logits)`, differentiable through the tape.
///
/// `logits` is `T×C` raw scores; rows are log-softmaxed internally.
pub fn ctc_loss(
    tape: &Tape,
    logits: Var,
    labels: &[usize],
    blank: usize,
) -> Result<Var, LossError> {
    {
        let lv = tape.value(logits);
        validate_ctc(&lv, labels, blank)?;
    }
    let log_probs = tape.log_softmax_rows(logits);
    let lp_value = tape.value(log_probs);
    let log_z = ctc_log_prob(&lp_value, labels, blank).expect("validated above");
    let labels_owned: Vec<usize> = labels.to_vec();
    let loss = tape.push_custom(
        "ctc",
        Tensor::scalar(-log_z),
        &[log_probs],
        Box::new(move |g, needs| {
            vec![needs[0].then(|| {
                let mut grad = ctc_grad_wrt_log_probs(&lp_value, &labels_owned, blank);
                grad.scale(g.scalar_value());
                grad
            })]
        }),
    );
    Ok(loss)
}

/// Phrase-level cross entropy `−log softmax(logits)[label]` over a 2-logit
/// output, stable via log-sum-exp.
pub fn phrase_ce_loss(tape: &Tape, logits: Var, label: PhraseLabel) -> Var {
    let shape = tape.shape(logits);
    assert_eq!(shape, [2], "phrase CE expects 2 logits, got shape {shape:?}");
    let mut onehot = vec![0.0; 2];
    onehot[label.class_id()] = 1.0;
    let picked = tape.sum_all(tape.mul(logits, tape.leaf(Tensor::vector(onehot))));
    tape.sub(tape.log_sum_exp(logits), picked)
}

/// Phrase-level CTC over per-frame 3-class logits (positive, negative,
/// blank): the label sequence is the single phrase class.
pub fn phrase_ctc_loss(tape: &Tape, logits: Var, label: PhraseLabel) -> Result<Var, LossError> {
    let shape = tape.shape(logits);
    assert_eq!(
        shape.get(1),
        Some(&3),
        "phrase CTC expects T×3 logits, got shape {shape:?}"
    );
    ctc_loss(tape, logits, &[label.class_id()], PHRASE_CTC_BLANK)
}

/// Multi-task mini-batch objective: `mean(asr) + alpha · mean(kws)`.
/// An empty list contributes nothing; both lists empty is an error.
pub fn mtl_batch_loss(
    tape: &Tape,
    asr_losses: &[Var],
    kws_losses: &[Var],
    cfg: MtlConfig,
) -> Result<Var, LossError> {
    if asr_losses.is_empty() && kws_losses.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let phone = (!asr_losses.is_empty()).then(|| tape.mean_scalars(asr_losses));
    let phrase = (!kws_losses.is_empty())
        .then(|| tape.mul_scalar(tape.mean_scalars(kws_losses), cfg.alpha));
    Ok(match (phone, phrase) {
        (Some(p), Some(q)) => tape.add(p, q),
        (Some(p), None) => p,
        (None, Some(q)) => q,
        (None, None) => unreachable!(),
    })
}

// ── registered gradient checks ──────────────────────────────────────────

fn check_ctc_loss(seed: u64) -> f64 {
    let mut r = rng::stream(seed, "check_ctc_loss");
    let logits = Tensor::matrix(4, 3, (0..12).map(|_| rng::normal(&mut r)).collect());
    let labels = if seed % 2 == 0 { vec![0, 1] } else { vec![1] };
    max_grad_error(&[logits], &|tape, v| {
        ctc_loss(tape, v[0], &labels, 2).expect("feasible by construction")
    })
}

fn check_phrase_ce(seed: u64) -> f64 {
    let mut r = rng::stream(seed, "check_phrase_ce");
    let logits = Tensor::vector(vec![rng::normal(&mut r), rng::normal(&mut r)]);
    let label = if seed % 2 == 0 { PhraseLabel::Positive } else { PhraseLabel::Negative };
    max_grad_error(&[logits], &|tape, v| phrase_ce_loss(tape, v[0], label))
}

fn check_phrase_ctc(seed: u64) -> f64 {
    let mut r = rng::stream(seed, "check_phrase_ctc");
    let logits = Tensor::matrix(4, 3, (0..12).map(|_| rng::normal(&mut r)).collect());
    let label = if seed % 2 == 0 { PhraseLabel::Positive } else { PhraseLabel::Negative };
    max_grad_error(&[logits], &|tape, v| {
        phrase_ctc_loss(tape, v[0], label).expect("feasible by construction")
    })
}

fn check_mtl_combination(seed: u64) -> f64 {
    let mut r = rng::stream(seed, "check_mtl");
    // three scalar "losses" driven through nonlinearities so the combination
    // weights are exercised against FD
    let inputs: Vec<Tensor> = (0..3).map(|_| Tensor::scalar(rng::normal(&mut r))).collect();
    max_grad_error(&inputs, &|tape, v| {
        let a = tape.exp(v[0]);
        let b = tape.mul(v[1], v[1]);
        let c = tape.exp(v[2]);
        mtl_batch_loss(tape, &[a, b], &[c], MtlConfig { alpha: 10.0 }).unwrap()
    })
}

pub(crate) fn gradient_checks() -> Vec<Check> {
    vec![
        Check { name: "ctc_loss", scope: Scope::Losses, run: check_ctc_loss },
        Check { name: "phrase_ce_loss", scope: Scope::Losses, run: check_phrase_ce },
        Check { name: "phrase_ctc_loss", scope: Scope::Losses, run: check_phrase_ctc },
        Check { name: "mtl_batch_loss", scope: Scope::Losses, run: check_mtl_combination },
    ]
}
