//! Inference-time confidence scoring and detection-error-tradeoff evaluation.
//!
//! A DET curve sweeps a threshold over every distinct observed score (trial
//! counts are small at desk scale, so the exact curve is free) plus an
//! infinite sentinel for the reject-everything end. A trial is accepted when
//! `score ≥ threshold`, so thresholds ascend, false accepts never increase
//! and false rejects never decrease along the curve.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::autodiff::{log_sum_exp_slice, softmax_slice};
use crate::losses::{ctc_log_prob, LossError, PHRASE_CTC_BLANK};
use crate::tensor::Tensor;

/// One scored detection trial with its ground truth.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct ScoredTrial {
    /// Higher = more keyword-like.
    pub score: f64,
    pub is_positive: bool,
}

/// One operating point of a DET curve.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct DetPoint {
    pub threshold: f64,
    pub false_accepts: usize,
    pub false_rejects: usize,
    /// `false_rejects / positives`.
    pub frr: f64,
    /// `false_accepts / fa_denominator`.
    pub fa_measure: f64,
}

/// Monotone sequence of operating points, thresholds strictly increasing.
#[derive(Clone, Debug, PartialEq)]
pub struct DetCurve {
    pub points: Vec<DetPoint>,
    pub n_positives: usize,
    pub n_negatives: usize,
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("degenerate trial set: {0}")]
    DegenerateTrials(String),
    #[error("head output does not match scoring mode {0}")]
    ModeMismatch(&'static str),
    #[error("inverted or out-of-range keyword interval: start {start}, end {end}, length {len}")]
    BadInterval { start: f64, end: f64, len: f64 },
    #[error("no operating point satisfies FA target {0}")]
    NoOperatingPoint(f64),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

// ── confidence scoring ──────────────────────────────────────────────────

/// Raw output of one head for one utterance.
#[derive(Clone, Debug)]
pub enum HeadOutput {
    /// (positive, negative) logits from the cross-attention or BLSTM head.
    TwoLogits(Vec<f64>),
    /// `T×3` per-frame logits from the split-branch head.
    PhraseCtcLogits(Tensor),
    /// `T×C` per-frame phone logits from the encoder.
    PhoneLogits(Tensor),
}

/// How to turn a head output into a scalar confidence.
#[derive(Clone, Debug)]
pub enum ConfidenceMode {
    /// Softmax positive-class probability of 2 logits.
    PhraseTwoLogit,
    /// CTC log-likelihood ratio `log p([positive]) − log p([negative])`.
    PhraseCtcRatio,
    /// Forced keyword phone sequence CTC score minus the free best-path
    /// score.
    PhoneticCtcRatio { keyword: Vec<usize>, blank: usize },
}

fn log_softmax_tensor(logits: &Tensor) -> Tensor {
    let (t_len, c) = (logits.rows(), logits.cols());
    let mut data = Vec::with_capacity(t_len * c);
    for t in 0..t_len {
        let row = logits.row(t);
        let lse = log_sum_exp_slice(row);
        data.extend(row.iter().map(|&x| x - lse));
    }
    Tensor::matrix(t_len, c, data)
}

/// Keyword-filler log-likelihood ratio for the phonetic branch.
///
/// Viterbi over `[filler* keyword filler*]` minus the free best path, where
/// the keyword is the standard blank-augmented CTC lattice and the filler
/// emits the per-frame best class. Frames outside the matched keyword
/// segment cancel against the free path, so the score measures how well the
/// best-matching segment spells the keyword, independent of surrounding
/// context. Always ≤ 0; 0 means a perfect forced match.
pub fn keyword_filler_llr(
    log_probs: &Tensor,
    keyword: &[usize],
    blank: usize,
) -> Result<f64, MetricsError> {
    let (t_len, classes) = (log_probs.rows(), log_probs.cols());
    if keyword.is_empty() || keyword.iter().any(|&k| k >= classes || k == blank) {
        return Err(MetricsError::DegenerateTrials(format!(
            "keyword {keyword:?} invalid for {classes} classes with blank {blank}"
        )));
    }
    let s_len = 2 * keyword.len() + 1;
    let lab = |s: usize| if s % 2 == 0 { blank } else { keyword[s / 2] };
    let skip_ok = |s: usize| s >= 2 && lab(s) != blank && lab(s) != lab(s - 2);
    let filler = |t: usize| -> f64 {
        log_probs
            .row(t)
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    };

    let neg = f64::NEG_INFINITY;
    // pre-keyword filler, keyword lattice states, post-keyword filler
    let mut before = filler(0);
    let mut lattice = vec![neg; s_len];
    lattice[0] = log_probs.at(0, blank);
    lattice[1] = log_probs.at(0, lab(1));
    let mut after = neg;
    let mut free = filler(0);

    for t in 1..t_len {
        let f = filler(t);
        // keyword may end before frame t; exit states are the last label and
        // the trailing blank
        let exit = lattice[s_len - 1].max(lattice[s_len - 2]);
        after = after.max(exit) + f;

        let prev = lattice.clone();
        for s in (0..s_len).rev() {
            let mut best = prev[s];
            if s >= 1 {
                best = best.max(prev[s - 1]);
            }
            if skip_ok(s) {
                best = best.max(prev[s - 2]);
            }
            // keyword may start at frame t, entering from the leading filler
            if s <= 1 {
                best = best.max(before);
            }
            lattice[s] = best + log_probs.at(t, lab(s));
        }
        before += f;
        free += f;
    }
    let constrained = after.max(lattice[s_len - 1]).max(lattice[s_len - 2]);
    if constrained == neg {
        return Err(MetricsError::DegenerateTrials(format!(
            "utterance of {t_len} frames cannot contain the {}-phone keyword",
            keyword.len()
        )));
    }
    Ok(constrained - free)
}

/// Scalar keyword confidence for one utterance; higher = more keyword-like.
pub fn confidence(output: &HeadOutput, mode: &ConfidenceMode) -> Result<f64, MetricsError> {
    match (output, mode) {
        (HeadOutput::TwoLogits(logits), ConfidenceMode::PhraseTwoLogit) => {
            if logits.len() != 2 {
                return Err(MetricsError::ModeMismatch("PhraseTwoLogit needs 2 logits"));
            }
            Ok(softmax_slice(logits)[0])
        }
        (HeadOutput::PhraseCtcLogits(logits), ConfidenceMode::PhraseCtcRatio) => {
            let lp = log_softmax_tensor(logits);
            let pos = ctc_log_prob(&lp, &[0], PHRASE_CTC_BLANK)?;
            let neg = ctc_log_prob(&lp, &[1], PHRASE_CTC_BLANK)?;
            Ok(pos - neg)
        }
        (HeadOutput::PhoneLogits(logits), ConfidenceMode::PhoneticCtcRatio { keyword, blank }) => {
            keyword_filler_llr(&log_softmax_tensor(logits), keyword, *blank)
        }
        (_, ConfidenceMode::PhraseTwoLogit) => {
            Err(MetricsError::ModeMismatch("PhraseTwoLogit"))
        }
        (_, ConfidenceMode::PhraseCtcRatio) => Err(MetricsError::ModeMismatch("PhraseCtcRatio")),
        (_, ConfidenceMode::PhoneticCtcRatio { .. }) => {
            Err(MetricsError::ModeMismatch("PhoneticCtcRatio"))
        }
    }
}

// ── DET curves ──────────────────────────────────────────────────────────

/// Sweep thresholds at every distinct score (ascending) plus an infinite
/// sentinel. `fa_denominator` is hours for a rate, 1.0 for absolute counts.
pub fn det_curve(trials: &[ScoredTrial], fa_denominator: f64) -> Result<DetCurve, MetricsError> {
    let mut pos: Vec<f64> = Vec::new();
    let mut neg: Vec<f64> = Vec::new();
    for t in trials {
        if !t.score.is_finite() {
            return Err(MetricsError::DegenerateTrials(format!(
                "non-finite score {}",
                t.score
            )));
        }
        if t.is_positive {
            pos.push(t.score);
        } else {
            neg.push(t.score);
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(MetricsError::DegenerateTrials(format!(
            "need both classes, got {} positives / {} negatives",
            pos.len(),
            neg.len()
        )));
    }
    assert!(fa_denominator > 0.0, "fa_denominator must be positive");
    pos.sort_by(|a, b| a.partial_cmp(b).unwrap());
    neg.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut thresholds: Vec<f64> = trials.iter().map(|t| t.score).collect();
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();
    thresholds.push(f64::INFINITY);

    let points = thresholds
        .into_iter()
        .map(|th| {
            // accept iff score ≥ th
            let fn_count = pos.partition_point(|&s| s < th);
            let fp_count = neg.len() - neg.partition_point(|&s| s < th);
            DetPoint {
                threshold: th,
                false_accepts: fp_count,
                false_rejects: fn_count,
                frr: fn_count as f64 / pos.len() as f64,
                fa_measure: fp_count as f64 / fa_denominator,
            }
        })
        .collect();
    Ok(DetCurve { points, n_positives: pos.len(), n_negatives: neg.len() })
}

/// Smallest FRR among operating points with `fa_measure ≤ fa_target`;
/// returns `(frr, threshold)`. The curve's monotonicity puts that point at
/// the first qualifying threshold.
pub fn frr_at_fa(curve: &DetCurve, fa_target: f64) -> Result<(f64, f64), MetricsError> {
    if fa_target.is_nan() || fa_target < 0.0 {
        return Err(MetricsError::NoOperatingPoint(fa_target));
    }
    curve
        .points
        .iter()
        .find(|p| p.fa_measure <= fa_target)
        .map(|p| (p.frr, p.threshold))
        .ok_or(MetricsError::NoOperatingPoint(fa_target))
}

/// Widen a detected keyword interval for segmentation: 0.5 s of leading and
/// 0.3 s of trailing context, clamped to the utterance.
pub fn keyword_segment(
    start_s: f64,
    end_s: f64,
    utt_len_s: f64,
) -> Result<(f64, f64), MetricsError> {
    if !(0.0 <= start_s && start_s <= end_s && end_s <= utt_len_s) {
        return Err(MetricsError::BadInterval { start: start_s, end: end_s, len: utt_len_s });
    }
    Ok(((start_s - 0.5).max(0.0), (end_s + 0.3).min(utt_len_s)))
}

// ── text emission ───────────────────────────────────────────────────────

/// DET curve as tab-separated `threshold fa_measure frr` lines.
pub fn write_det_file(path: &Path, curve: &DetCurve) -> Result<(), MetricsError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# threshold\tfa_measure\tfrr")?;
    for p in &curve.points {
        writeln!(w, "{}\t{}\t{}", p.threshold, p.fa_measure, p.frr)?;
    }
    w.flush()?;
    Ok(())
}

/// Scored trials as tab-separated `score is_positive` lines, re-readable by
/// [`read_score_file`] (the `det` subcommand re-derives curves from these).
pub fn write_score_file(path: &Path, trials: &[ScoredTrial]) -> Result<(), MetricsError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# score\tis_positive")?;
    for t in trials {
        writeln!(w, "{}\t{}", t.score, if t.is_positive { 1 } else { 0 })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_score_file(path: &Path) -> Result<Vec<ScoredTrial>, MetricsError> {
    let r = BufReader::new(File::open(path)?);
    let mut trials = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let parse = || {
            MetricsError::DegenerateTrials(format!("score file line {} unparseable: '{line}'", i + 1))
        };
        let score: f64 = parts.next().ok_or_else(parse)?.parse().map_err(|_| parse())?;
        let flag: u8 = parts.next().ok_or_else(parse)?.parse().map_err(|_| parse())?;
        trials.push(ScoredTrial { score, is_positive: flag != 0 });
    }
    Ok(trials)
}

// ── dataset scoring ─────────────────────────────────────────────────────

/// Which output branch of a trained model to score.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Branch {
    /// Phone logits scored with the forced-keyword CTC ratio.
    Phonetic,
    /// The model's phrase head (2-logit softmax or phrase-CTC ratio).
    Phrase,
}

impl Branch {
    pub fn label(self) -> &'static str {
        match self {
            Branch::Phonetic => "phonetic",
            Branch::Phrase => "phrase",
        }
    }
}

/// Score every utterance of a phrase-labeled dataset through one branch of a
/// trained model.
pub fn score_dataset(
    model_cfg: &crate::model::ModelConfig,
    params: &crate::model::ModelParams,
    ds: &crate::data::Dataset,
    branch: Branch,
    keyword: &[usize],
) -> Result<Vec<ScoredTrial>, MetricsError> {
    use crate::model::HeadKind;

    let mode = match branch {
        Branch::Phonetic => ConfidenceMode::PhoneticCtcRatio {
            keyword: keyword.to_vec(),
            blank: model_cfg.encoder.n_phone_logits - 1,
        },
        Branch::Phrase => match model_cfg.head {
            HeadKind::SplitBranch => ConfidenceMode::PhraseCtcRatio,
            HeadKind::Blstm | HeadKind::CrossAttn => ConfidenceMode::PhraseTwoLogit,
            HeadKind::PhoneticOnly => {
                return Err(MetricsError::ModeMismatch(
                    "phoneme-only model has no phrase branch",
                ))
            }
        },
    };

    let mut trials = Vec::with_capacity(ds.len());
    for utt in &ds.utterances {
        let crate::data::Label::Phrase(label) = &utt.label else {
            return Err(MetricsError::DegenerateTrials(
                "scoring needs phrase-labeled utterances".into(),
            ));
        };
        let tape = crate::autodiff::Tape::new();
        let bound = crate::model::Bound::bind(&tape, params, false);
        let x = tape.leaf(utt.features.frames.clone());
        let enc_out = crate::model::encode(&tape, &bound, &model_cfg.encoder, x);
        let output = match branch {
            Branch::Phonetic => HeadOutput::PhoneLogits((*tape.value(enc_out.phone_logits)).clone()),
            Branch::Phrase => match model_cfg.head {
                HeadKind::SplitBranch => {
                    let logits = crate::model::split_branch_head(&tape, &bound, enc_out.hidden);
                    HeadOutput::PhraseCtcLogits((*tape.value(logits)).clone())
                }
                HeadKind::Blstm => {
                    let logits = crate::model::blstm_head(
                        &tape,
                        &bound,
                        enc_out.hidden,
                        model_cfg.blstm_hidden,
                    );
                    HeadOutput::TwoLogits(tape.value(logits).data().to_vec())
                }
                HeadKind::CrossAttn => {
                    let logits = crate::model::cross_attn_head(
                        &tape,
                        &bound,
                        &model_cfg.encoder,
                        &model_cfg.cross_attn,
                        enc_out.hidden,
                    );
                    HeadOutput::TwoLogits(tape.value(logits).data().to_vec())
                }
                HeadKind::PhoneticOnly => unreachable!("rejected above"),
            },
        };
        trials.push(ScoredTrial {
            score: confidence(&output, &mode)?,
            is_positive: *label == crate::losses::PhraseLabel::Positive,
        });
    }
    Ok(trials)
}

/// One row of the evaluation summary (training mode × output branch → FRR).
#[derive(Clone, Debug)]
pub struct SummaryRow {
    pub mode: String,
    pub branch: String,
    pub frr: f64,
}

/// Aligned text table of FRRs in percent.
pub fn format_summary_table(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<16} {:<10} {:>8}\n", "mode", "branch", "FRR [%]"));
    for r in rows {
        out.push_str(&format!("{:<16} {:<10} {:>8.2}\n", r.mode, r.branch, r.frr * 100.0));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trial(score: f64, is_positive: bool) -> ScoredTrial {
        ScoredTrial { score, is_positive }
    }

    #[test]
    fn two_logit_confidence_cases() {
        let same = confidence(
            &HeadOutput::TwoLogits(vec![0.7, 0.7]),
            &ConfidenceMode::PhraseTwoLogit,
        )
        .unwrap();
        assert!((same - 0.5).abs() < 1e-15);
        let sure = confidence(
            &HeadOutput::TwoLogits(vec![500.0, -500.0]),
            &ConfidenceMode::PhraseTwoLogit,
        )
        .unwrap();
        assert!((sure - 1.0).abs() < 1e-12);
    }

    #[test]
    fn keyword_filler_llr_matches_hand_cases() {
        // rows are unnormalized log-scores; the scorer only compares paths
        let lp = |rows: Vec<[f64; 3]>| {
            Tensor::matrix(rows.len(), 3, rows.into_iter().flatten().collect())
        };
        // frames spell the keyword [0, 1] exactly: perfect forced match
        let clean = lp(vec![
            [0.0, -9.0, -9.0],
            [0.0, -9.0, -9.0],
            [-9.0, 0.0, -9.0],
            [-9.0, 0.0, -9.0],
        ]);
        let llr = keyword_filler_llr(&clean, &[0, 1], 2).unwrap();
        assert_eq!(llr, 0.0);

        // surrounding context of a third class is absorbed by the filler
        let mut padded_rows = vec![[-9.0, -9.0, 1.5]; 3];
        for t in 0..4 {
            padded_rows.push([clean.at(t, 0), clean.at(t, 1), clean.at(t, 2)]);
        }
        padded_rows.extend(vec![[-9.0, -9.0, 0.7]; 2]);
        let padded = Tensor::matrix(9, 3, padded_rows.into_iter().flatten().collect());
        assert_eq!(keyword_filler_llr(&padded, &[0, 1], 2).unwrap(), 0.0);

        // substituting the second phone's frames costs the difference
        let substituted = lp(vec![
            [0.0, -9.0, -9.0],
            [0.0, -9.0, -9.0],
            [-9.0, -4.0, 0.0],
            [-9.0, -4.0, 0.0],
        ]);
        let bad = keyword_filler_llr(&substituted, &[0, 1], 2).unwrap();
        assert!(bad < -3.9, "expected a heavy substitution penalty, got {bad}");

        // an utterance shorter than the keyword cannot be forced
        let tiny = lp(vec![[0.0, -1.0, -1.0]]);
        assert!(keyword_filler_llr(&tiny, &[0, 1], 2).is_err());
    }

    #[test]
    fn mode_mismatch_is_an_error() {
        let out = HeadOutput::TwoLogits(vec![0.0, 0.0]);
        assert!(matches!(
            confidence(&out, &ConfidenceMode::PhraseCtcRatio),
            Err(MetricsError::ModeMismatch(_))
        ));
    }

    #[test]
    fn hand_enumerated_three_trial_curve() {
        let trials = [trial(0.9, true), trial(0.8, true), trial(0.85, false)];
        let curve = det_curve(&trials, 1.0).unwrap();
        // thresholds 0.8, 0.85, 0.9, ∞
        assert_eq!(curve.points.len(), 4);
        let p = &curve.points;
        assert_eq!((p[0].frr, p[0].fa_measure), (0.0, 1.0));
        assert_eq!((p[1].frr, p[1].fa_measure), (0.5, 1.0));
        assert_eq!((p[2].frr, p[2].fa_measure), (0.5, 0.0));
        assert_eq!((p[3].frr, p[3].fa_measure), (1.0, 0.0));
        // the point a 0.86 threshold would give exists on the curve
        assert!(p.iter().any(|q| q.frr == 0.5 && q.fa_measure == 0.0));
        let (frr, th) = frr_at_fa(&curve, 0.0).unwrap();
        assert_eq!(frr, 0.5);
        assert_eq!(th, 0.9);
    }

    #[test]
    fn perfect_separation_has_a_zero_zero_point() {
        let trials = [
            trial(0.9, true),
            trial(0.8, true),
            trial(0.3, false),
            trial(0.1, false),
        ];
        let curve = det_curve(&trials, 1.0).unwrap();
        assert!(curve.points.iter().any(|p| p.frr == 0.0 && p.fa_measure == 0.0));
        for target in [0.0, 1.0, f64::INFINITY] {
            assert_eq!(frr_at_fa(&curve, target).unwrap().0, 0.0);
        }
    }

    #[test]
    fn all_equal_scores_give_only_the_two_extremes() {
        let trials = [trial(0.5, true), trial(0.5, false), trial(0.5, true)];
        let curve = det_curve(&trials, 1.0).unwrap();
        assert_eq!(curve.points.len(), 2);
        assert_eq!((curve.points[0].frr, curve.points[0].false_accepts), (0.0, 1));
        assert_eq!((curve.points[1].frr, curve.points[1].false_accepts), (1.0, 0));
    }

    #[test]
    fn infinite_target_returns_minimum_frr() {
        let trials = [trial(0.9, true), trial(0.2, true), trial(0.5, false)];
        let curve = det_curve(&trials, 1.0).unwrap();
        let (frr, _) = frr_at_fa(&curve, f64::INFINITY).unwrap();
        assert_eq!(frr, 0.0);
        assert!(matches!(
            frr_at_fa(&curve, -1.0),
            Err(MetricsError::NoOperatingPoint(_))
        ));
    }

    #[test]
    fn frr_at_fa_is_non_increasing_in_the_target() {
        let trials: Vec<ScoredTrial> = (0..40)
            .map(|i| trial((i as f64 * 7.3).sin(), i % 3 == 0))
            .collect();
        let curve = det_curve(&trials, 1.0).unwrap();
        let mut last = f64::INFINITY;
        for target in [0.0, 1.0, 2.0, 5.0, 10.0, 30.0] {
            let (frr, _) = frr_at_fa(&curve, target).unwrap();
            assert!(frr <= last, "frr {frr} rose at target {target}");
            last = frr;
        }
    }

    #[test]
    fn monotone_score_transform_preserves_the_curve() {
        let trials: Vec<ScoredTrial> = (0..25)
            .map(|i| trial(((i * 37) % 11) as f64 * 0.13 - 0.5, i % 2 == 0))
            .collect();
        let base = det_curve(&trials, 2.5).unwrap();
        for transform in [|s: f64| s * s * s, |s: f64| 2.0 * s + 1.0] {
            let mapped: Vec<ScoredTrial> = trials
                .iter()
                .map(|t| trial(transform(t.score), t.is_positive))
                .collect();
            let curve = det_curve(&mapped, 2.5).unwrap();
            assert_eq!(base.points.len(), curve.points.len());
            for (a, b) in base.points.iter().zip(&curve.points) {
                assert_eq!((a.frr, a.fa_measure), (b.frr, b.fa_measure));
            }
        }
    }

    #[test]
    fn degenerate_trial_sets_are_rejected() {
        assert!(matches!(
            det_curve(&[trial(0.5, true)], 1.0),
            Err(MetricsError::DegenerateTrials(_))
        ));
        assert!(matches!(
            det_curve(&[trial(f64::NAN, true), trial(0.1, false)], 1.0),
            Err(MetricsError::DegenerateTrials(_))
        ));
    }

    #[test]
    fn keyword_segment_cases() {
        assert_eq!(keyword_segment(1.0, 2.0, 10.0).unwrap(), (0.5, 2.3));
        assert_eq!(keyword_segment(0.2, 2.0, 2.1).unwrap(), (0.0, 2.1));
        let (s, e) = keyword_segment(5.0, 5.0, 10.0).unwrap();
        assert!((e - s - 0.8).abs() < 1e-12);
        assert!(matches!(
            keyword_segment(3.0, 2.0, 10.0),
            Err(MetricsError::BadInterval { .. })
        ));
    }

    #[test]
    fn score_file_roundtrip_re_derives_the_same_curve() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.txt");
        let trials: Vec<ScoredTrial> = (0..12)
            .map(|i| trial((i as f64 * 1.7).cos(), i % 4 != 0))
            .collect();
        write_score_file(&path, &trials).unwrap();
        let back = read_score_file(&path).unwrap();
        assert_eq!(back, trials);
        assert_eq!(det_curve(&back, 1.0).unwrap(), det_curve(&trials, 1.0).unwrap());
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn det_monotonicity_holds_for_random_trial_sets(
            pos in prop::collection::vec(-50.0f64..50.0, 1..40),
            neg in prop::collection::vec(-50.0f64..50.0, 1..40),
        ) {
            let trials: Vec<ScoredTrial> = pos
                .iter()
                .map(|&s| ScoredTrial { score: s, is_positive: true })
                .chain(neg.iter().map(|&s| ScoredTrial { score: s, is_positive: false }))
                .collect();
            let curve = det_curve(&trials, 1.0).unwrap();
            for w in curve.points.windows(2) {
                prop_assert!(w[0].threshold < w[1].threshold);
                prop_assert!(w[0].false_accepts >= w[1].false_accepts);
                prop_assert!(w[0].false_rejects <= w[1].false_rejects);
            }
            prop_assert_eq!(curve.points.last().unwrap().false_accepts, 0);
            prop_assert_eq!(curve.points[0].false_rejects, 0);
        }
    }
}
