//! Synthetic corpus generation and dataset persistence.
//!
//! Every phoneme owns a prototype vector drawn once from the seed; utterances
//! render phone sequences as 4–8 frames per phone of prototype plus Gaussian
//! noise, directly in feature space. ASR utterances carry the phone id
//! sequence, KWS utterances carry a phrase label. Negatives are random
//! sequences, a configurable fraction of which are hard: the keyword with
//! 1–2 substituted phonemes, wrapped in the same random context as positives
//! so sequence length leaks nothing.
//!
//! An optional audio mode renders each phone as a tone complex and pushes the
//! waveform through the full `features` frontend instead, exercising the
//! pipeline end to end.
//!
//! Generation is a pure function of the config: every utterance draws from
//! its own `(seed, split, index)` substream, so reruns are bit-identical.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::features::{extract, FeatureConfig, FeatureSequence, Waveform};
use crate::losses::PhraseLabel;
use crate::rng;
use crate::tensor::Tensor;

/// Synthetic-corpus configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_phones: usize,
    /// Frame width; must match the model's `input_dim` (280 in audio mode).
    pub feature_dim: usize,
    /// The keyword phone sequence.
    pub keyword: Vec<usize>,
    pub n_asr_utts: usize,
    pub n_kws_pos: usize,
    pub n_kws_neg: usize,
    pub n_eval_pos: usize,
    pub n_eval_neg: usize,
    /// Per-element Gaussian noise added to prototype frames.
    pub noise_std: f64,
    /// Fraction of negatives that are near-keyword hard negatives.
    pub confusable_rate: f64,
    /// Render tone complexes through the audio frontend instead of emitting
    /// prototype frames directly.
    pub audio_mode: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_phones: 53,
            feature_dim: 40,
            keyword: vec![7, 21, 34, 3, 48, 11],
            n_asr_utts: 400,
            n_kws_pos: 120,
            n_kws_neg: 120,
            n_eval_pos: 160,
            n_eval_neg: 320,
            noise_std: 1.0,
            confusable_rate: 0.5,
            audio_mode: false,
            seed: 2024,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.n_phones < 2 {
            return Err(DataError::BadConfig("need at least 2 phone classes".into()));
        }
        if self.keyword.is_empty() {
            return Err(DataError::BadConfig("keyword must be non-empty".into()));
        }
        if let Some(&bad) = self.keyword.iter().find(|&&p| p >= self.n_phones) {
            return Err(DataError::BadConfig(format!(
                "keyword phone id {bad} out of range for {} phones",
                self.n_phones
            )));
        }
        if !(0.0..=1.0).contains(&self.confusable_rate) {
            return Err(DataError::BadConfig(format!(
                "confusable_rate {} outside [0, 1]",
                self.confusable_rate
            )));
        }
        if self.noise_std < 0.0 {
            return Err(DataError::BadConfig("noise_std must be non-negative".into()));
        }
        if self.audio_mode && self.feature_dim != FeatureConfig::default().stacked_dim() {
            return Err(DataError::BadConfig(format!(
                "audio mode produces {}-dim features, config says {}",
                FeatureConfig::default().stacked_dim(),
                self.feature_dim
            )));
        }
        if !self.audio_mode && self.feature_dim == 0 {
            return Err(DataError::BadConfig("feature_dim must be positive".into()));
        }
        Ok(())
    }
}

/// Per-utterance supervision.
#[derive(Clone, Debug, PartialEq)]
pub enum Label {
    Phones(Vec<usize>),
    Phrase(PhraseLabel),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub features: FeatureSequence,
    pub label: Label,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Asr,
    Kws,
}

/// A labeled utterance collection of one kind.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub seed: u64,
    pub utterances: Vec<Utterance>,
}

impl Dataset {
    pub fn validate(&self) -> Result<(), DataError> {
        for (i, utt) in self.utterances.iter().enumerate() {
            let ok = match (&self.kind, &utt.label) {
                (DatasetKind::Asr, Label::Phones(p)) => !p.is_empty(),
                (DatasetKind::Kws, Label::Phrase(_)) => true,
                _ => false,
            };
            if !ok {
                return Err(DataError::Inconsistent(format!(
                    "utterance {i} label does not match dataset kind {:?}",
                    self.kind
                )));
            }
            if !utt.features.frames.all_finite() {
                return Err(DataError::Inconsistent(format!(
                    "utterance {i} holds non-finite features"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.utterances.first().map_or(0, |u| u.features.dim())
    }
}

/// Which KWS split to synthesize; the splits share prototypes but draw from
/// disjoint utterance substreams.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum KwsSplit {
    Train,
    Eval,
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid synth config: {0}")]
    BadConfig(String),
    #[error("dataset file has wrong magic bytes")]
    BadMagic,
    #[error("dataset format version {found} unsupported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("dataset inconsistent: {0}")]
    Inconsistent(String),
    #[error("dataset truncated or unreadable: {0}")]
    Io(#[from] std::io::Error),
}

// ── generation ──────────────────────────────────────────────────────────

/// The per-phoneme prototype vectors, a pure function of `(seed, n_phones,
/// feature_dim)`. ASR and KWS generation share this bank, so phonetic
/// knowledge transfers between the tasks.
pub fn prototype_bank(cfg: &SynthConfig) -> Tensor {
    let mut r = rng::stream(cfg.seed, "prototypes");
    let numel = cfg.n_phones * cfg.feature_dim;
    Tensor::matrix(
        cfg.n_phones,
        cfg.feature_dim,
        (0..numel).map(|_| rng::normal(&mut r)).collect(),
    )
}

const MIN_PHONE_FRAMES: usize = 4;
const MAX_PHONE_FRAMES: usize = 8;
const MIN_SEQ_PHONES: usize = 3;
const MAX_SEQ_PHONES: usize = 12;
const MAX_CONTEXT_PHONES: usize = 5;
/// Feature-space frame shift: one subsampled frame at the default frontend
/// rate (10 ms hop × 3).
const SYNTH_FRAME_SHIFT: f64 = 0.03;

fn random_phone_seq(r: &mut ChaCha20Rng, n_phones: usize) -> Vec<usize> {
    let len = r.gen_range(MIN_SEQ_PHONES..=MAX_SEQ_PHONES);
    (0..len).map(|_| r.gen_range(0..n_phones)).collect()
}

/// Render a phone sequence as prototype frames plus noise.
fn render_frames(
    protos: &Tensor,
    seq: &[usize],
    noise_std: f64,
    r: &mut ChaCha20Rng,
) -> FeatureSequence {
    let dim = protos.cols();
    let mut frames = Vec::new();
    for &p in seq {
        let dur = r.gen_range(MIN_PHONE_FRAMES..=MAX_PHONE_FRAMES);
        for _ in 0..dur {
            let proto = protos.row(p);
            frames.extend(proto.iter().map(|&v| v + noise_std * rng::normal(r)));
        }
    }
    let t_len = frames.len() / dim;
    FeatureSequence::new(Tensor::matrix(t_len, dim, frames), SYNTH_FRAME_SHIFT)
}

/// Audio-mode rendering: each phone becomes a two-partial tone complex, the
/// waveform runs through the default frontend.
fn render_audio(cfg: &SynthConfig, seq: &[usize], r: &mut ChaCha20Rng) -> FeatureSequence {
    let sr = 16000u32;
    let feat_cfg = FeatureConfig::default();
    let frame_secs = feat_cfg.hop_ms / 1000.0 * feat_cfg.subsample_factor as f64;
    let mut samples: Vec<i16> = Vec::new();
    for &p in seq {
        let dur_frames = r.gen_range(MIN_PHONE_FRAMES..=MAX_PHONE_FRAMES);
        let n = (dur_frames as f64 * frame_secs * sr as f64) as usize;
        // phone-specific fundamental inside the mel range, plus one harmonic
        let f0 = 220.0 + (p as f64 + 1.0) * 3000.0 / cfg.n_phones as f64;
        for i in 0..n {
            let t = i as f64 / sr as f64;
            let tone = 0.22 * (std::f64::consts::TAU * f0 * t).sin()
                + 0.11 * (std::f64::consts::TAU * 2.0 * f0 * t).sin();
            let noise = cfg.noise_std * 0.01 * rng::normal(r);
            samples.push(((tone + noise).clamp(-0.99, 0.99) * 32767.0) as i16);
        }
    }
    let wave = Waveform::new(samples, sr).expect("non-empty by construction");
    extract(&wave, &feat_cfg).expect("synthesized audio is longer than one window")
}

fn render(cfg: &SynthConfig, protos: &Tensor, seq: &[usize], r: &mut ChaCha20Rng) -> FeatureSequence {
    if cfg.audio_mode {
        render_audio(cfg, seq, r)
    } else {
        render_frames(protos, seq, cfg.noise_std, r)
    }
}

/// Synthesize the phone-labeled ASR set.
pub fn synth_asr(cfg: &SynthConfig) -> Result<Dataset, DataError> {
    cfg.validate()?;
    let protos = prototype_bank(cfg);
    let utterances = (0..cfg.n_asr_utts)
        .map(|i| {
            let mut r = rng::substream(cfg.seed, "asr-utt", i as u64);
            let seq = random_phone_seq(&mut r, cfg.n_phones);
            let features = render(cfg, &protos, &seq, &mut r);
            debug_assert!(crate::losses::ctc_min_frames(&seq) <= features.len());
            Utterance { features, label: Label::Phones(seq) }
        })
        .collect();
    let ds = Dataset { kind: DatasetKind::Asr, seed: cfg.seed, utterances };
    ds.validate()?;
    Ok(ds)
}

/// Wrap a core phone sequence in 0–5 random context phones on each side.
fn with_context(core: &[usize], n_phones: usize, r: &mut ChaCha20Rng) -> Vec<usize> {
    let lead = r.gen_range(0..=MAX_CONTEXT_PHONES);
    let trail = r.gen_range(0..=MAX_CONTEXT_PHONES);
    let mut seq = Vec::with_capacity(lead + core.len() + trail);
    for _ in 0..lead {
        seq.push(r.gen_range(0..n_phones));
    }
    seq.extend_from_slice(core);
    for _ in 0..trail {
        seq.push(r.gen_range(0..n_phones));
    }
    seq
}

/// For every phone, the `k` acoustically closest other phones (by prototype
/// distance). Hard negatives substitute from these so they stay genuinely
/// near the keyword.
fn nearest_phones(protos: &Tensor, k: usize) -> Vec<Vec<usize>> {
    let n = protos.rows();
    (0..n)
        .map(|p| {
            let mut others: Vec<(f64, usize)> = (0..n)
                .filter(|&q| q != p)
                .map(|q| {
                    let d: f64 = protos
                        .row(p)
                        .iter()
                        .zip(protos.row(q))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (d, q)
                })
                .collect();
            others.sort_by(|a, b| a.partial_cmp(b).unwrap());
            others.into_iter().take(k).map(|(_, q)| q).collect()
        })
        .collect()
}

/// The keyword with 1–2 phones substituted by near neighbors: a hard
/// negative.
fn confusable_keyword(
    keyword: &[usize],
    neighbors: &[Vec<usize>],
    r: &mut ChaCha20Rng,
) -> Vec<usize> {
    let mut core = keyword.to_vec();
    let n_subs = r.gen_range(1..=2usize.min(core.len()));
    let mut positions: Vec<usize> = (0..core.len()).collect();
    for k in 0..n_subs {
        let pick = r.gen_range(k..positions.len());
        positions.swap(k, pick);
        let pos = positions[k];
        let near = &neighbors[core[pos]];
        core[pos] = near[r.gen_range(0..near.len())];
    }
    core
}

/// Synthesize a phrase-labeled KWS split. Positives contain the keyword with
/// random context; `confusable_rate` of the negatives are near-keyword
/// sequences, the rest are random.
pub fn synth_kws(cfg: &SynthConfig, split: KwsSplit) -> Result<Dataset, DataError> {
    cfg.validate()?;
    let protos = prototype_bank(cfg);
    let (n_pos, n_neg, pos_label, neg_label) = match split {
        KwsSplit::Train => (cfg.n_kws_pos, cfg.n_kws_neg, "kws-train-pos", "kws-train-neg"),
        KwsSplit::Eval => (cfg.n_eval_pos, cfg.n_eval_neg, "kws-eval-pos", "kws-eval-neg"),
    };
    let n_hard = (cfg.confusable_rate * n_neg as f64).round() as usize;
    let neighbors = nearest_phones(&protos, 3);

    let mut utterances = Vec::with_capacity(n_pos + n_neg);
    for i in 0..n_pos {
        let mut r = rng::substream(cfg.seed, pos_label, i as u64);
        let seq = with_context(&cfg.keyword, cfg.n_phones, &mut r);
        let features = render(cfg, &protos, &seq, &mut r);
        utterances.push(Utterance { features, label: Label::Phrase(PhraseLabel::Positive) });
    }
    for i in 0..n_neg {
        let mut r = rng::substream(cfg.seed, neg_label, i as u64);
        let seq = if i < n_hard {
            let core = confusable_keyword(&cfg.keyword, &neighbors, &mut r);
            with_context(&core, cfg.n_phones, &mut r)
        } else {
            random_phone_seq(&mut r, cfg.n_phones)
        };
        let features = render(cfg, &protos, &seq, &mut r);
        utterances.push(Utterance { features, label: Label::Phrase(PhraseLabel::Negative) });
    }
    let ds = Dataset { kind: DatasetKind::Kws, seed: cfg.seed, utterances };
    ds.validate()?;
    Ok(ds)
}

// ── persistence ─────────────────────────────────────────────────────────

const MAGIC: &[u8; 8] = b"KWSDATA\0";
pub const DATASET_VERSION: u32 = 1;

/// Write a dataset. Layout: magic, version, kind, utterance count, feature
/// dim, seed, then per-utterance records (label tag, T, D, frame shift,
/// label block, row-major f64 frames). Round-trips are bit-exact.
pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<(), DataError> {
    ds.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&DATASET_VERSION.to_le_bytes())?;
    w.write_all(&[match ds.kind {
        DatasetKind::Asr => 0u8,
        DatasetKind::Kws => 1u8,
    }])?;
    w.write_all(&(ds.utterances.len() as u64).to_le_bytes())?;
    w.write_all(&(ds.feature_dim() as u64).to_le_bytes())?;
    w.write_all(&ds.seed.to_le_bytes())?;
    for utt in &ds.utterances {
        let frames = &utt.features.frames;
        match &utt.label {
            Label::Phones(ids) => {
                w.write_all(&[0u8])?;
                w.write_all(&(frames.rows() as u64).to_le_bytes())?;
                w.write_all(&(frames.cols() as u64).to_le_bytes())?;
                w.write_all(&utt.features.frame_shift_seconds.to_le_bytes())?;
                w.write_all(&(ids.len() as u64).to_le_bytes())?;
                for &id in ids {
                    w.write_all(&(id as u16).to_le_bytes())?;
                }
            }
            Label::Phrase(p) => {
                w.write_all(&[1u8])?;
                w.write_all(&(frames.rows() as u64).to_le_bytes())?;
                w.write_all(&(frames.cols() as u64).to_le_bytes())?;
                w.write_all(&utt.features.frame_shift_seconds.to_le_bytes())?;
                w.write_all(&[p.class_id() as u8])?;
            }
        }
        for &v in frames.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, DataError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, DataError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8, DataError> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

/// Read a dataset written by [`write_dataset`].
pub fn read_dataset(path: &Path) -> Result<Dataset, DataError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(DataError::BadMagic);
    }
    let mut vbuf = [0u8; 4];
    r.read_exact(&mut vbuf)?;
    let version = u32::from_le_bytes(vbuf);
    if version != DATASET_VERSION {
        return Err(DataError::VersionMismatch { found: version, expected: DATASET_VERSION });
    }
    let kind = match read_u8(&mut r)? {
        0 => DatasetKind::Asr,
        1 => DatasetKind::Kws,
        other => return Err(DataError::Inconsistent(format!("unknown dataset kind {other}"))),
    };
    let count = read_u64(&mut r)? as usize;
    let dim = read_u64(&mut r)? as usize;
    let seed = read_u64(&mut r)?;

    let mut utterances = Vec::with_capacity(count);
    for i in 0..count {
        let tag = read_u8(&mut r)?;
        let t_len = read_u64(&mut r)? as usize;
        let d = read_u64(&mut r)? as usize;
        if d != dim {
            return Err(DataError::Inconsistent(format!(
                "utterance {i} width {d} does not match header dim {dim}"
            )));
        }
        let frame_shift = read_f64(&mut r)?;
        let label = match tag {
            0 => {
                let n = read_u64(&mut r)? as usize;
                let mut ids = Vec::with_capacity(n);
                for _ in 0..n {
                    let mut b = [0u8; 2];
                    r.read_exact(&mut b)?;
                    ids.push(u16::from_le_bytes(b) as usize);
                }
                Label::Phones(ids)
            }
            1 => Label::Phrase(match read_u8(&mut r)? {
                0 => PhraseLabel::Positive,
                1 => PhraseLabel::Negative,
                other => {
                    return Err(DataError::Inconsistent(format!(
                        "utterance {i} has unknown phrase class {other}"
                    )))
                }
            }),
            other => {
                return Err(DataError::Inconsistent(format!(
                    "utterance {i} has unknown label tag {other}"
                )))
            }
        };
        let mut data = vec![0.0f64; t_len * d];
        let mut buf = [0u8; 8];
        for v in data.iter_mut() {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        utterances.push(Utterance {
            features: FeatureSequence::new(Tensor::matrix(t_len, d, data), frame_shift),
            label,
        });
    }
    let ds = Dataset { kind, seed, utterances };
    ds.validate()?;
    Ok(ds)
}
