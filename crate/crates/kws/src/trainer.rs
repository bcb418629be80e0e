//! Training loop: mixed mini-batch sampling over ASR + KWS data, Adam with a
//! warmup/linear-decay/exponential-decay learning-rate schedule, and four
//! training modes (phoneme-only and the three multi-task heads).
//!
//! Batches are stratified: every batch draws exactly `round(N·kws_fraction)`
//! KWS utterances and the rest from the ASR set, so the per-term normalizers
//! of the multi-task objective are well-defined on every step. Each dataset
//! is consumed as a shuffled deck, reshuffled when exhausted, so within one
//! deck pass every utterance appears exactly once.
//!
//! Everything is single-threaded and seeded: rerunning a config reproduces
//! checkpoints and logs bit for bit. Epoch shuffles draw from a per-epoch
//! stream derived from `(seed, epoch)`, which is what makes resuming from an
//! epoch checkpoint equivalent to an uninterrupted run.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::autodiff::{Tape, Var};
use crate::data::{Dataset, Label};
use crate::losses::{ctc_loss, mtl_batch_loss, phrase_ce_loss, phrase_ctc_loss, LossError, MtlConfig};
use crate::model::{
    blstm_head, cross_attn_head, encode, init_params, split_branch_head, Bound, HeadKind,
    ModelConfig, ModelError, ModelParams,
};
use crate::rng;
use crate::tensor::Tensor;

/// Training mode: which head exists and which phrase loss is used.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum TrainMode {
    PhonemeOnly,
    ConvMtl,
    BlstmMtl,
    XattnMtl,
}

impl TrainMode {
    pub fn head_kind(self) -> HeadKind {
        match self {
            TrainMode::PhonemeOnly => HeadKind::PhoneticOnly,
            TrainMode::ConvMtl => HeadKind::SplitBranch,
            TrainMode::BlstmMtl => HeadKind::Blstm,
            TrainMode::XattnMtl => HeadKind::CrossAttn,
        }
    }

    pub fn uses_kws(self) -> bool {
        self != TrainMode::PhonemeOnly
    }

    pub fn label(self) -> &'static str {
        match self {
            TrainMode::PhonemeOnly => "phoneme_only",
            TrainMode::ConvMtl => "conv_mtl",
            TrainMode::BlstmMtl => "blstm_mtl",
            TrainMode::XattnMtl => "xattn_mtl",
        }
    }

    pub fn parse(s: &str) -> Option<TrainMode> {
        match s {
            "phoneme_only" => Some(TrainMode::PhonemeOnly),
            "conv_mtl" => Some(TrainMode::ConvMtl),
            "blstm_mtl" => Some(TrainMode::BlstmMtl),
            "xattn_mtl" => Some(TrainMode::XattnMtl),
            _ => None,
        }
    }
}

/// Optimization schedule and batch composition.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Expected KWS share of each batch (J/N).
    pub kws_fraction: f64,
    pub epochs: usize,
    pub lr_peak: f64,
    pub lr_mid: f64,
    pub warmup_epochs: f64,
    pub mid_epoch: f64,
    /// Per-epoch exponential decay applied beyond `mid_epoch`.
    pub final_decay: f64,
    pub alpha: f64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    pub mode: TrainMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            kws_fraction: 0.25,
            epochs: 28,
            lr_peak: 0.0008,
            lr_mid: 0.00056,
            warmup_epochs: 2.0,
            mid_epoch: 16.0,
            // reaches lr_mid/4 at the default last epoch (16 + 12)
            final_decay: 0.8908987181403393,
            alpha: 10.0,
            clip_norm: 5.0,
            mode: TrainMode::XattnMtl,
            seed: 2024,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::BadConfig("batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.kws_fraction) {
            return Err(TrainError::BadConfig(format!(
                "kws_fraction {} outside [0, 1]",
                self.kws_fraction
            )));
        }
        if self.lr_peak <= 0.0 || self.lr_mid <= 0.0 || self.final_decay <= 0.0 {
            return Err(TrainError::BadConfig("learning rates must be positive".into()));
        }
        if !(self.warmup_epochs < self.mid_epoch && self.mid_epoch < self.epochs as f64) {
            return Err(TrainError::BadConfig(format!(
                "schedule must satisfy warmup {} < mid {} < epochs {}",
                self.warmup_epochs, self.mid_epoch, self.epochs
            )));
        }
        if self.alpha < 0.0 {
            return Err(TrainError::BadConfig("alpha must be non-negative".into()));
        }
        Ok(())
    }

    /// KWS utterances per batch.
    pub fn kws_per_batch(&self) -> usize {
        if self.mode.uses_kws() {
            ((self.batch_size as f64) * self.kws_fraction).round() as usize
        } else {
            0
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    BadConfig(String),
    #[error("mode {0} requires a non-empty dataset that is missing")]
    MissingData(&'static str),
    #[error("numerical failure (seed {seed}, epoch {epoch}, batch {batch}): {message}")]
    Numerical { seed: u64, epoch: usize, batch: usize, message: String },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

// ── learning-rate schedule ──────────────────────────────────────────────

/// Piecewise schedule: linear 0→`lr_peak` over the warmup, linear
/// `lr_peak`→`lr_mid` until `mid_epoch`, then exponential decay. Continuous
/// at both knots.
pub fn lr_at(epoch_fraction: f64, cfg: &TrainConfig) -> f64 {
    let t = epoch_fraction;
    debug_assert!((0.0..=cfg.epochs as f64).contains(&t));
    if t <= cfg.warmup_epochs {
        if cfg.warmup_epochs == 0.0 {
            cfg.lr_peak
        } else {
            cfg.lr_peak * (t / cfg.warmup_epochs)
        }
    } else if t <= cfg.mid_epoch {
        let frac = (t - cfg.warmup_epochs) / (cfg.mid_epoch - cfg.warmup_epochs);
        cfg.lr_peak + (cfg.lr_mid - cfg.lr_peak) * frac
    } else {
        cfg.lr_mid * cfg.final_decay.powf(t - cfg.mid_epoch)
    }
}

// ── batch sampling ──────────────────────────────────────────────────────

/// A dataset consumed as a shuffled deck of indices; reshuffles on wrap.
struct Deck {
    order: Vec<usize>,
    next: usize,
}

impl Deck {
    fn new(len: usize, rng: &mut rand_chacha::ChaCha20Rng) -> Deck {
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(rng);
        Deck { order, next: 0 }
    }

    fn draw(&mut self, n: usize, rng: &mut rand_chacha::ChaCha20Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            if self.next == self.order.len() {
                self.order.shuffle(rng);
                self.next = 0;
            }
            out.push(self.order[self.next]);
            self.next += 1;
        }
        out
    }
}

/// One epoch's stratified batch indices: each batch holds
/// `N − J` ASR and `J` KWS utterance indices.
pub struct EpochBatches {
    pub batches: Vec<(Vec<usize>, Vec<usize>)>,
}

/// Build the batch plan for one epoch. A pure function of
/// `(seed, epoch, dataset sizes, cfg)`.
pub fn sample_epoch(
    n_asr: usize,
    n_kws: usize,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochBatches, TrainError> {
    let j = cfg.kws_per_batch();
    let per_batch_asr = cfg.batch_size - j;
    if per_batch_asr > 0 && n_asr == 0 {
        return Err(TrainError::MissingData("ASR"));
    }
    if j > 0 && n_kws == 0 {
        return Err(TrainError::MissingData("KWS"));
    }
    let total = n_asr + if cfg.mode.uses_kws() { n_kws } else { 0 };
    let n_batches = total.div_ceil(cfg.batch_size).max(1);

    let mut rng = rng::stream(cfg.seed, &format!("epoch-{epoch}"));
    let mut asr_deck = Deck::new(n_asr, &mut rng);
    let mut kws_deck = Deck::new(n_kws, &mut rng);
    let batches = (0..n_batches)
        .map(|_| {
            let asr = asr_deck.draw(per_batch_asr, &mut rng);
            let kws = kws_deck.draw(j, &mut rng);
            (asr, kws)
        })
        .collect();
    Ok(EpochBatches { batches })
}

// ── Adam ────────────────────────────────────────────────────────────────

/// Adam moments and step count, one pair of tensors per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> AdamState {
        let zeros = |p: &ModelParams| -> BTreeMap<String, Tensor> {
            p.iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape().to_vec())))
                .collect()
        };
        AdamState {
            m: zeros(params),
            v: zeros(params),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Textbook Adam update with bias correction. A non-finite gradient is a
/// hard error, never an update.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    lr: f64,
) -> Result<(), TrainError> {
    for (name, g) in grads {
        if !g.all_finite() {
            return Err(TrainError::BadConfig(format!(
                "non-finite gradient for parameter '{name}'"
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (name, g) in grads {
        let m = state.m.get_mut(name).expect("moment missing for parameter");
        let v = state.v.get_mut(name).expect("moment missing for parameter");
        let p = params.get_mut(name);
        for i in 0..g.numel() {
            let gi = g.data()[i];
            let mi = state.beta1 * m.data()[i] + (1.0 - state.beta1) * gi;
            let vi = state.beta2 * v.data()[i] + (1.0 - state.beta2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            p.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

// ── training loop ───────────────────────────────────────────────────────

/// One log line: per-batch losses and the learning rate used.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub epoch: usize,
    pub batch: usize,
    pub phone_loss: Option<f64>,
    pub phrase_loss: Option<f64>,
    pub lr: f64,
}

/// Result of a training run.
pub struct TrainOutcome {
    pub params: ModelParams,
    pub adam: AdamState,
    pub log: Vec<LogRecord>,
}

fn phone_blank(model_cfg: &ModelConfig) -> usize {
    model_cfg.encoder.n_phone_logits - 1
}

/// Forward one batch on a fresh tape, returning the combined loss plus the
/// per-task mean loss values for logging.
fn batch_loss(
    tape: &Tape,
    bound: &Bound,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    asr: &Dataset,
    kws: Option<&Dataset>,
    asr_idx: &[usize],
    kws_idx: &[usize],
) -> Result<(Var, Option<f64>, Option<f64>), TrainError> {
    let mut asr_losses = Vec::with_capacity(asr_idx.len());
    for &i in asr_idx {
        let utt = &asr.utterances[i];
        let Label::Phones(labels) = &utt.label else {
            return Err(TrainError::BadConfig(format!("ASR utterance {i} lacks phone labels")));
        };
        let x = tape.leaf(utt.features.frames.clone());
        let enc_out = encode(tape, bound, &model_cfg.encoder, x);
        asr_losses.push(ctc_loss(tape, enc_out.phone_logits, labels, phone_blank(model_cfg))?);
    }

    let mut kws_losses = Vec::with_capacity(kws_idx.len());
    for &i in kws_idx {
        let ds = kws.expect("KWS indices drawn without a KWS dataset");
        let utt = &ds.utterances[i];
        let Label::Phrase(label) = &utt.label else {
            return Err(TrainError::BadConfig(format!("KWS utterance {i} lacks a phrase label")));
        };
        let x = tape.leaf(utt.features.frames.clone());
        let enc_out = encode(tape, bound, &model_cfg.encoder, x);
        let loss = match cfg.mode {
            TrainMode::ConvMtl => {
                let logits = split_branch_head(tape, bound, enc_out.hidden);
                phrase_ctc_loss(tape, logits, *label)?
            }
            TrainMode::BlstmMtl => {
                let logits = blstm_head(tape, bound, enc_out.hidden, model_cfg.blstm_hidden);
                phrase_ce_loss(tape, logits, *label)
            }
            TrainMode::XattnMtl => {
                let logits = cross_attn_head(
                    tape,
                    bound,
                    &model_cfg.encoder,
                    &model_cfg.cross_attn,
                    enc_out.hidden,
                );
                phrase_ce_loss(tape, logits, *label)
            }
            TrainMode::PhonemeOnly => {
                return Err(TrainError::BadConfig("phoneme-only mode drew a KWS utterance".into()))
            }
        };
        kws_losses.push(loss);
    }

    let mean_of = |vars: &[Var]| -> Option<f64> {
        if vars.is_empty() {
            None
        } else {
            Some(vars.iter().map(|&v| tape.value(v).scalar_value()).sum::<f64>() / vars.len() as f64)
        }
    };
    let phone_mean = mean_of(&asr_losses);
    let phrase_mean = mean_of(&kws_losses);
    let total = mtl_batch_loss(tape, &asr_losses, &kws_losses, MtlConfig { alpha: cfg.alpha })?;
    Ok((total, phone_mean, phrase_mean))
}

/// Global-norm gradient clip; returns the pre-clip norm.
fn clip_gradients(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for g in grads.values() {
        for &v in g.data() {
            sq += v * v;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.values_mut() {
            g.scale(scale);
        }
    }
    norm
}

/// Run epochs `start_epoch..cfg.epochs`, mutating `params`/`adam` in place.
///
/// `on_batch` sees every log record; `on_epoch` fires after each epoch with
/// the current state (the CLI writes checkpoints there). Starting from a
/// checkpointed `(params, adam, start_epoch)` replays the exact same batch
/// schedule an uninterrupted run would have used, because every epoch's
/// shuffle derives from `(seed, epoch)` alone.
pub fn train_epochs(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    asr: &Dataset,
    kws: Option<&Dataset>,
    start_epoch: usize,
    params: &mut ModelParams,
    adam: &mut AdamState,
    mut on_batch: impl FnMut(&LogRecord),
    mut on_epoch: impl FnMut(usize, &ModelParams, &AdamState) -> Result<(), TrainError>,
) -> Result<(), TrainError> {
    cfg.validate()?;
    model_cfg.validate()?;
    if asr.is_empty() && cfg.batch_size > cfg.kws_per_batch() {
        return Err(TrainError::MissingData("ASR"));
    }
    let n_kws = kws.map_or(0, Dataset::len);
    if cfg.mode.uses_kws() && cfg.kws_per_batch() > 0 && n_kws == 0 {
        return Err(TrainError::MissingData("KWS"));
    }

    for epoch in start_epoch..cfg.epochs {
        let plan = sample_epoch(asr.len(), n_kws, cfg, epoch)?;
        let n_batches = plan.batches.len();
        for (batch_idx, (asr_idx, kws_idx)) in plan.batches.iter().enumerate() {
            let step = std::panic::catch_unwind(std::panic::AssertUnwindSafe(
                || -> Result<(BTreeMap<String, Tensor>, Option<f64>, Option<f64>), TrainError> {
                    let tape = Tape::new();
                    let bound = Bound::bind(&tape, params, true);
                    let (total, phone, phrase) =
                        batch_loss(&tape, &bound, model_cfg, cfg, asr, kws, asr_idx, kws_idx)?;
                    let grads = tape.backward(total);
                    Ok((bound.collect_grads(&grads, params), phone, phrase))
                },
            ));
            let (mut grads, phone_loss, phrase_loss) = match step {
                Ok(Ok(v)) => v,
                Ok(Err(e)) => return Err(e),
                Err(payload) => {
                    let message = payload
                        .downcast_ref::<String>()
                        .cloned()
                        .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                        .unwrap_or_else(|| "unknown panic".into());
                    return Err(TrainError::Numerical {
                        seed: cfg.seed,
                        epoch,
                        batch: batch_idx,
                        message,
                    });
                }
            };
            let norm = clip_gradients(&mut grads, cfg.clip_norm);
            if !norm.is_finite() {
                return Err(TrainError::Numerical {
                    seed: cfg.seed,
                    epoch,
                    batch: batch_idx,
                    message: format!("gradient norm {norm}"),
                });
            }
            let fraction = epoch as f64 + (batch_idx + 1) as f64 / n_batches as f64;
            let lr = lr_at(fraction.min(cfg.epochs as f64), cfg);
            adam_step(params, &grads, adam, lr).map_err(|e| TrainError::Numerical {
                seed: cfg.seed,
                epoch,
                batch: batch_idx,
                message: e.to_string(),
            })?;
            on_batch(&LogRecord { epoch, batch: batch_idx, phone_loss, phrase_loss, lr });
        }
        on_epoch(epoch, params, adam)?;
    }
    Ok(())
}

/// Fresh training run: init, train all epochs, collect the log.
pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    asr: &Dataset,
    kws: Option<&Dataset>,
) -> Result<TrainOutcome, TrainError> {
    let mut params = init_params(model_cfg, cfg.seed);
    let mut adam = AdamState::new(&params);
    let mut log = Vec::new();
    train_epochs(
        model_cfg,
        cfg,
        asr,
        kws,
        0,
        &mut params,
        &mut adam,
        |rec| log.push(rec.clone()),
        |_, _, _| Ok(()),
    )?;
    Ok(TrainOutcome { params, adam, log })
}

/// Fraction of phrase-labeled utterances the phrase branch classifies
/// correctly (two-logit heads at probability 0.5, CTC-ratio heads at 0).
pub fn phrase_accuracy(
    model_cfg: &ModelConfig,
    params: &ModelParams,
    kws: &Dataset,
    keyword: &[usize],
) -> Result<f64, crate::metrics::MetricsError> {
    use crate::metrics::{score_dataset, Branch};
    let trials = score_dataset(model_cfg, params, kws, Branch::Phrase, keyword)?;
    let threshold = match model_cfg.head {
        HeadKind::SplitBranch => 0.0,
        _ => 0.5,
    };
    let correct = trials
        .iter()
        .filter(|t| (t.score > threshold) == t.is_positive)
        .count();
    Ok(correct as f64 / trials.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_asr, synth_kws, KwsSplit, SynthConfig};
    use crate::model::{CrossAttnDecoderConfig, EncoderConfig};

    fn mini_synth(seed: u64) -> SynthConfig {
        SynthConfig {
            n_phones: 12,
            feature_dim: 10,
            keyword: vec![2, 5, 8, 1],
            n_asr_utts: 24,
            n_kws_pos: 8,
            n_kws_neg: 8,
            n_eval_pos: 6,
            n_eval_neg: 6,
            noise_std: 0.3,
            confusable_rate: 0.5,
            audio_mode: false,
            seed,
        }
    }

    fn mini_model(head: HeadKind) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                n_blocks: 1,
                d_model: 12,
                n_heads: 2,
                d_ff: 16,
                n_phone_logits: 13,
                input_dim: 10,
            },
            cross_attn: CrossAttnDecoderConfig {
                n_blocks: 1,
                d_query: 12,
                query_len: 2,
                n_phrase_logits: 2,
            },
            blstm_hidden: 8,
            head,
        }
    }

    fn mini_train(mode: TrainMode, epochs: usize) -> TrainConfig {
        TrainConfig {
            batch_size: 8,
            kws_fraction: 0.25,
            epochs,
            warmup_epochs: 0.5,
            mid_epoch: 1.0f64.max(epochs as f64 / 2.0),
            mode,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn lr_schedule_hits_the_anchor_points_exactly() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(2.0, &cfg), 0.0008);
        assert_eq!(lr_at(16.0, &cfg), 0.00056);
        assert_eq!(lr_at(0.0, &cfg), 0.0);
        assert_eq!(lr_at(1.0, &cfg), 0.0004);
        // continuity at both knots
        let eps = 1e-9;
        assert!((lr_at(2.0 - eps, &cfg) - lr_at(2.0 + eps, &cfg)).abs() < 1e-10);
        assert!((lr_at(16.0 - eps, &cfg) - lr_at(16.0 + eps, &cfg)).abs() < 1e-10);
        // default decay reaches lr_mid/4 at the final epoch
        assert!((lr_at(28.0, &cfg) - 0.00056 / 4.0).abs() < 1e-9);
    }

    #[test]
    fn stratified_batches_hold_exactly_j_kws_utterances() {
        let cfg = TrainConfig { batch_size: 32, kws_fraction: 0.25, ..TrainConfig::default() };
        assert_eq!(cfg.kws_per_batch(), 8);
        let plan = sample_epoch(100, 40, &cfg, 0).unwrap();
        for (asr, kws) in &plan.batches {
            assert_eq!(asr.len(), 24);
            assert_eq!(kws.len(), 8);
        }
        let pure = TrainConfig {
            kws_fraction: 0.0,
            mode: TrainMode::PhonemeOnly,
            ..TrainConfig::default()
        };
        let plan = sample_epoch(100, 0, &pure, 0).unwrap();
        assert!(plan.batches.iter().all(|(_, kws)| kws.is_empty()));
    }

    #[test]
    fn deck_covers_every_utterance_before_any_repeat() {
        let cfg = TrainConfig {
            batch_size: 8,
            kws_fraction: 0.25,
            ..TrainConfig::default()
        };
        // 20 ASR utterances consumed 6 per batch: wrap happens mid-epoch
        let plan = sample_epoch(20, 10, &cfg, 3).unwrap();
        let drawn: Vec<usize> = plan.batches.iter().flat_map(|(a, _)| a.iter().copied()).collect();
        let mut seen = std::collections::HashSet::new();
        for (i, &idx) in drawn.iter().enumerate() {
            if !seen.insert(idx) {
                // first repeat: every one of the 20 must already be seen
                assert_eq!(seen.len(), 20, "repeat of {idx} at draw {i} before full coverage");
                break;
            }
        }
    }

    #[test]
    fn epoch_plans_are_deterministic_and_epoch_dependent() {
        let cfg = TrainConfig::default();
        let a = sample_epoch(50, 20, &cfg, 1).unwrap();
        let b = sample_epoch(50, 20, &cfg, 1).unwrap();
        assert_eq!(a.batches, b.batches);
        let c = sample_epoch(50, 20, &cfg, 2).unwrap();
        assert_ne!(a.batches, c.batches);
    }

    #[test]
    fn adam_first_step_is_signed_learning_rate() {
        let mut params = ModelParams::default();
        params.insert("w".into(), Tensor::scalar(1.0));
        let mut adam = AdamState::new(&params);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::scalar(0.3));
        adam_step(&mut params, &grads, &mut adam, 0.01).unwrap();
        let expected = 1.0 - 0.01 * 0.3 / (0.3 + 1e-8);
        assert!((params.get("w").scalar_value() - expected).abs() < 1e-12);
    }

    #[test]
    fn adam_zero_grad_keeps_params_and_decays_moments() {
        // fresh state: zero gradient moves nothing
        let mut params = ModelParams::default();
        params.insert("w".into(), Tensor::scalar(2.0));
        let mut adam = AdamState::new(&params);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::scalar(0.0));
        adam_step(&mut params, &grads, &mut adam, 0.01).unwrap();
        assert_eq!(params.get("w").scalar_value(), 2.0);
        assert_eq!(adam.m["w"].scalar_value(), 0.0);

        // built-up moments decay by beta on a zero-gradient step
        grads.insert("w".to_string(), Tensor::scalar(0.5));
        adam_step(&mut params, &grads, &mut adam, 0.01).unwrap();
        let m_before = adam.m["w"].scalar_value();
        let v_before = adam.v["w"].scalar_value();
        grads.insert("w".to_string(), Tensor::scalar(0.0));
        adam_step(&mut params, &grads, &mut adam, 0.01).unwrap();
        assert_eq!(adam.m["w"].scalar_value(), 0.9 * m_before);
        assert_eq!(adam.v["w"].scalar_value(), 0.999 * v_before);
    }

    #[test]
    fn adam_converges_on_a_quadratic() {
        let mut params = ModelParams::default();
        params.insert("w".into(), Tensor::scalar(0.0));
        let mut adam = AdamState::new(&params);
        for _ in 0..100 {
            let w = params.get("w").scalar_value();
            let mut grads = BTreeMap::new();
            grads.insert("w".to_string(), Tensor::scalar(2.0 * (w - 3.0)));
            adam_step(&mut params, &grads, &mut adam, 0.1).unwrap();
        }
        let w = params.get("w").scalar_value();
        assert!((w - 3.0).abs() < 0.05, "w = {w}");
    }

    #[test]
    fn nan_gradient_is_a_hard_error() {
        let mut params = ModelParams::default();
        params.insert("w".into(), Tensor::scalar(1.0));
        let mut adam = AdamState::new(&params);
        let mut grads = BTreeMap::new();
        let mut bad = Tensor::scalar(0.0);
        bad.data_mut()[0] = f64::NAN;
        grads.insert("w".to_string(), bad);
        assert!(adam_step(&mut params, &grads, &mut adam, 0.01).is_err());
    }

    #[test]
    fn mixed_batch_feeds_encoder_from_both_losses() {
        // gradients on encoder block 0 must change when the phrase term is
        // enabled, i.e. the phrase loss reaches the shared encoder
        let synth = mini_synth(3);
        let asr = synth_asr(&synth).unwrap();
        let kws = synth_kws(&synth, KwsSplit::Train).unwrap();
        let model_cfg = mini_model(HeadKind::CrossAttn);
        let params = init_params(&model_cfg, 1);

        let grads_for = |alpha: f64| {
            let cfg = TrainConfig {
                alpha,
                mode: TrainMode::XattnMtl,
                batch_size: 4,
                kws_fraction: 0.5,
                ..TrainConfig::default()
            };
            let tape = Tape::new();
            let bound = Bound::bind(&tape, &params, true);
            let (total, _, _) =
                batch_loss(&tape, &bound, &model_cfg, &cfg, &asr, Some(&kws), &[0, 1], &[0, 1])
                    .unwrap();
            let grads = tape.backward(total);
            bound.collect_grads(&grads, &params)["enc.block0.attn.wq"].clone()
        };
        let without_phrase = grads_for(0.0);
        let with_phrase = grads_for(10.0);
        assert_ne!(without_phrase, with_phrase);
        assert!(with_phrase.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn training_is_bit_reproducible() {
        let synth = mini_synth(11);
        let asr = synth_asr(&synth).unwrap();
        let kws = synth_kws(&synth, KwsSplit::Train).unwrap();
        let model_cfg = mini_model(HeadKind::CrossAttn);
        let cfg = mini_train(TrainMode::XattnMtl, 2);
        let a = train(&model_cfg, &cfg, &asr, Some(&kws)).unwrap();
        let b = train(&model_cfg, &cfg, &asr, Some(&kws)).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn resume_equals_straight_run() {
        let synth = mini_synth(19);
        let asr = synth_asr(&synth).unwrap();
        let kws = synth_kws(&synth, KwsSplit::Train).unwrap();
        let model_cfg = mini_model(HeadKind::CrossAttn);
        let cfg = mini_train(TrainMode::XattnMtl, 3);

        let straight = train(&model_cfg, &cfg, &asr, Some(&kws)).unwrap();

        // interrupt after epoch 0 via the epoch callback, then resume
        let mut params = init_params(&model_cfg, cfg.seed);
        let mut adam = AdamState::new(&params);
        let mut log = Vec::new();
        let interrupted = train_epochs(
            &model_cfg, &cfg, &asr, Some(&kws), 0, &mut params, &mut adam,
            |r| log.push(r.clone()),
            |epoch, _, _| {
                if epoch == 0 {
                    Err(TrainError::MissingData("simulated interruption"))
                } else {
                    Ok(())
                }
            },
        );
        assert!(interrupted.is_err());
        train_epochs(
            &model_cfg, &cfg, &asr, Some(&kws), 1, &mut params, &mut adam,
            |r| log.push(r.clone()),
            |_, _, _| Ok(()),
        )
        .unwrap();
        assert_eq!(params, straight.params);
        assert_eq!(log, straight.log);
    }

    #[test]
    fn phoneme_only_loss_drops_on_the_mini_corpus() {
        let synth = mini_synth(23);
        let asr = synth_asr(&synth).unwrap();
        let model_cfg = mini_model(HeadKind::PhoneticOnly);
        // a few dozen steps only, so the schedule is scaled up accordingly
        let cfg = TrainConfig {
            kws_fraction: 0.0,
            mode: TrainMode::PhonemeOnly,
            lr_peak: 0.01,
            lr_mid: 0.006,
            ..mini_train(TrainMode::PhonemeOnly, 10)
        };
        let out = train(&model_cfg, &cfg, &asr, None).unwrap();
        let epoch_mean = |e: usize| {
            let losses: Vec<f64> = out
                .log
                .iter()
                .filter(|r| r.epoch == e)
                .filter_map(|r| r.phone_loss)
                .collect();
            losses.iter().sum::<f64>() / losses.len() as f64
        };
        let (first, last) = (epoch_mean(0), epoch_mean(cfg.epochs - 1));
        assert!(
            last < 0.6 * first,
            "CTC loss did not drop: epoch 0 mean {first}, final mean {last}"
        );
    }
}
