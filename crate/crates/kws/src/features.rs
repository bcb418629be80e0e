//! Audio frontend: 16-bit PCM mono WAV in, model features out.
//!
//! Per frame: pre-emphasis, Hann window, power spectrum via a radix-2 FFT
//! (window zero-padded to the next power of two), triangular mel filterbank,
//! natural log with a fixed floor. The pipeline then applies optional
//! per-utterance mean normalization, ±3-frame context stacking with edge
//! replication, and 1-in-3 frame subsampling.
//!
//! Window, hop, pre-emphasis and mel range are fixed in [`FeatureConfig`]
//! defaults (25 ms / 10 ms / 0.97 / 0–8 kHz) so downstream tests are stable.
//! All stages are pure functions: identical waveforms produce bit-identical
//! features.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;

/// 16-bit PCM mono audio.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<i16>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<i16>, sample_rate: u32) -> Result<Self, FeatureError> {
        if samples.is_empty() {
            return Err(FeatureError::EmptyWaveform);
        }
        if sample_rate == 0 {
            return Err(FeatureError::BadWav("sample rate must be positive".into()));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn samples(&self) -> &[i16] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false // constructor rejects empty buffers
    }
}

/// Frontend configuration; defaults are the values the rest of the toolkit
/// is tested against.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureConfig {
    pub n_mels: usize,
    pub win_ms: f64,
    pub hop_ms: f64,
    pub preemphasis: f64,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    /// Mel energies are floored here before the log.
    pub floor: f64,
    /// Per-utterance mean normalization of the log-mel frames, applied in
    /// [`extract`] (never inside [`log_mel`] itself).
    pub mean_normalize: bool,
    pub left_context: usize,
    pub right_context: usize,
    pub subsample_factor: usize,
    /// Which of the `subsample_factor` phases is kept (0 keeps frame 0).
    pub subsample_phase: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            n_mels: 40,
            win_ms: 25.0,
            hop_ms: 10.0,
            preemphasis: 0.97,
            fmin_hz: 0.0,
            fmax_hz: 8000.0,
            floor: 1e-10,
            mean_normalize: true,
            left_context: 3,
            right_context: 3,
            subsample_factor: 3,
            subsample_phase: 0,
        }
    }
}

impl FeatureConfig {
    /// Feature width after context stacking.
    pub fn stacked_dim(&self) -> usize {
        self.n_mels * (self.left_context + 1 + self.right_context)
    }
}

/// A `T×D` feature matrix plus its frame-rate metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub frames: Tensor,
    pub frame_shift_seconds: f64,
}

impl FeatureSequence {
    pub fn new(frames: Tensor, frame_shift_seconds: f64) -> Self {
        assert!(frames.rows() >= 1, "feature sequence must hold at least one frame");
        assert!(frames.all_finite(), "feature sequence holds non-finite values");
        FeatureSequence { frames, frame_shift_seconds }
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        false // constructor rejects empty sequences
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }
}

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("waveform holds no samples")]
    EmptyWaveform,
    #[error("audio shorter than one analysis window: {samples} samples < {window}")]
    TooShort { samples: usize, window: usize },
    #[error("not a readable PCM16 mono WAV: {0}")]
    BadWav(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

// ── WAV I/O ─────────────────────────────────────────────────────────────

/// Read a RIFF/WAVE file holding 16-bit PCM mono audio. Unknown chunks are
/// skipped; anything that is not PCM16 mono is rejected.
pub fn read_wav(path: &Path) -> Result<Waveform, FeatureError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut hdr = [0u8; 12];
    r.read_exact(&mut hdr)?;
    if &hdr[0..4] != b"RIFF" || &hdr[8..12] != b"WAVE" {
        return Err(FeatureError::BadWav("missing RIFF/WAVE header".into()));
    }
    let mut sample_rate = None;
    let mut samples = None;
    loop {
        let mut chunk_hdr = [0u8; 8];
        match r.read_exact(&mut chunk_hdr) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let id = &chunk_hdr[0..4];
        let size = u32::from_le_bytes(chunk_hdr[4..8].try_into().unwrap()) as usize;
        match id {
            b"fmt " => {
                let mut body = vec![0u8; size];
                r.read_exact(&mut body)?;
                let format = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                if format != 1 {
                    return Err(FeatureError::BadWav(format!("format tag {format}, want PCM (1)")));
                }
                if channels != 1 {
                    return Err(FeatureError::BadWav(format!("{channels} channels, want mono")));
                }
                if bits != 16 {
                    return Err(FeatureError::BadWav(format!("{bits} bits per sample, want 16")));
                }
                sample_rate = Some(rate);
            }
            b"data" => {
                let mut body = vec![0u8; size];
                r.read_exact(&mut body)?;
                let pcm: Vec<i16> = body
                    .chunks_exact(2)
                    .map(|b| i16::from_le_bytes([b[0], b[1]]))
                    .collect();
                samples = Some(pcm);
            }
            _ => {
                // skip unknown chunk (word-aligned)
                let skip = size + (size & 1);
                std::io::copy(&mut r.by_ref().take(skip as u64), &mut std::io::sink())?;
            }
        }
    }
    let rate = sample_rate.ok_or_else(|| FeatureError::BadWav("no fmt chunk".into()))?;
    let pcm = samples.ok_or_else(|| FeatureError::BadWav("no data chunk".into()))?;
    Waveform::new(pcm, rate)
}

/// Write 16-bit PCM mono WAV.
pub fn write_wav(path: &Path, wave: &Waveform) -> Result<(), FeatureError> {
    let mut w = BufWriter::new(File::create(path)?);
    let data_len = wave.samples.len() * 2;
    w.write_all(b"RIFF")?;
    w.write_all(&((36 + data_len) as u32).to_le_bytes())?;
    w.write_all(b"WAVE")?;
    w.write_all(b"fmt ")?;
    w.write_all(&16u32.to_le_bytes())?;
    w.write_all(&1u16.to_le_bytes())?; // PCM
    w.write_all(&1u16.to_le_bytes())?; // mono
    w.write_all(&wave.sample_rate.to_le_bytes())?;
    w.write_all(&(wave.sample_rate * 2).to_le_bytes())?;
    w.write_all(&2u16.to_le_bytes())?;
    w.write_all(&16u16.to_le_bytes())?;
    w.write_all(b"data")?;
    w.write_all(&(data_len as u32).to_le_bytes())?;
    for &s in &wave.samples {
        w.write_all(&s.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

// ── spectral analysis ───────────────────────────────────────────────────

/// In-place iterative radix-2 FFT (Cooley-Tukey). Length must be a power of
/// two.
fn fft_radix2(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    debug_assert!(n.is_power_of_two());
    // bit-reversal permutation
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -std::f64::consts::TAU / len as f64;
        let (wr, wi) = (ang.cos(), ang.sin());
        let mut i = 0;
        while i < n {
            let (mut cur_r, mut cur_i) = (1.0f64, 0.0f64);
            for k in 0..len / 2 {
                let (ur, ui) = (re[i + k], im[i + k]);
                let (vr, vi) = (
                    re[i + k + len / 2] * cur_r - im[i + k + len / 2] * cur_i,
                    re[i + k + len / 2] * cur_i + im[i + k + len / 2] * cur_r,
                );
                re[i + k] = ur + vr;
                im[i + k] = ui + vi;
                re[i + k + len / 2] = ur - vr;
                im[i + k + len / 2] = ui - vi;
                let next_r = cur_r * wr - cur_i * wi;
                cur_i = cur_r * wi + cur_i * wr;
                cur_r = next_r;
            }
            i += len;
        }
        len <<= 1;
    }
}

pub(crate) fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub(crate) fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters (peak 1) at mel-uniform centers, evaluated on the FFT
/// bin frequencies. Returns `n_mels × (n_fft/2 + 1)` weights row-major.
fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32, fmin: f64, fmax: f64) -> Vec<f64> {
    let n_bins = n_fft / 2 + 1;
    let mel_lo = hz_to_mel(fmin);
    let mel_hi = hz_to_mel(fmax);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut filters = vec![0.0; n_mels * n_bins];
    for m in 0..n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let freq = k as f64 * sample_rate as f64 / n_fft as f64;
            let w = if freq <= center {
                (freq - lo) / (center - lo)
            } else {
                (hi - freq) / (hi - center)
            };
            if w > 0.0 {
                filters[m * n_bins + k] = w;
            }
        }
    }
    filters
}

/// Filter center frequencies in Hz (exposed for tests that locate the mel
/// bin nearest a known tone).
pub fn mel_center_frequencies(cfg: &FeatureConfig) -> Vec<f64> {
    let mel_lo = hz_to_mel(cfg.fmin_hz);
    let mel_hi = hz_to_mel(cfg.fmax_hz);
    (1..=cfg.n_mels)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

/// Log mel-filterbank energies, one `n_mels`-wide row per frame.
///
/// `T = 1 + ⌊(len − win) / hop⌋`; audio shorter than one window is an error.
pub fn log_mel(wave: &Waveform, cfg: &FeatureConfig) -> Result<Tensor, FeatureError> {
    let sr = wave.sample_rate as f64;
    let win = (cfg.win_ms * sr / 1000.0).round() as usize;
    let hop = (cfg.hop_ms * sr / 1000.0).round() as usize;
    if wave.len() < win {
        return Err(FeatureError::TooShort { samples: wave.len(), window: win });
    }
    let n_frames = 1 + (wave.len() - win) / hop;
    let n_fft = win.next_power_of_two();
    let n_bins = n_fft / 2 + 1;
    let filters = mel_filterbank(cfg.n_mels, n_fft, wave.sample_rate, cfg.fmin_hz, cfg.fmax_hz);
    let hann: Vec<f64> = (0..win)
        .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / (win - 1) as f64).cos())
        .collect();

    let mut out = Vec::with_capacity(n_frames * cfg.n_mels);
    let mut re = vec![0.0; n_fft];
    let mut im = vec![0.0; n_fft];
    let mut power = vec![0.0; n_bins];
    for t in 0..n_frames {
        let frame = &wave.samples[t * hop..t * hop + win];
        re[..win].iter_mut().enumerate().for_each(|(i, r)| {
            let x = frame[i] as f64 / 32768.0;
            let prev = if i == 0 { x } else { frame[i - 1] as f64 / 32768.0 };
            *r = (x - cfg.preemphasis * prev) * hann[i];
        });
        re[win..].fill(0.0);
        im.fill(0.0);
        fft_radix2(&mut re, &mut im);
        for (k, p) in power.iter_mut().enumerate() {
            *p = re[k] * re[k] + im[k] * im[k];
        }
        for m in 0..cfg.n_mels {
            let energy: f64 = filters[m * n_bins..(m + 1) * n_bins]
                .iter()
                .zip(&power)
                .map(|(f, p)| f * p)
                .sum();
            out.push(energy.max(cfg.floor).ln());
        }
    }
    Ok(Tensor::matrix(n_frames, cfg.n_mels, out))
}

/// Stack ±context frames around every frame, replicating edges.
pub fn stack_context(frames: &Tensor, left: usize, right: usize) -> Tensor {
    let (t_len, dim) = (frames.rows(), frames.cols());
    let width = dim * (left + 1 + right);
    let mut out = Vec::with_capacity(t_len * width);
    for t in 0..t_len {
        for offset in -(left as isize)..=(right as isize) {
            let src = (t as isize + offset).clamp(0, t_len as isize - 1) as usize;
            out.extend_from_slice(frames.row(src));
        }
    }
    Tensor::matrix(t_len, width, out)
}

/// Keep every `factor`-th frame starting at `phase`.
pub fn subsample(frames: &Tensor, factor: usize, phase: usize) -> Tensor {
    assert!(factor >= 1 && phase < factor, "bad subsampling factor {factor} / phase {phase}");
    let (t_len, dim) = (frames.rows(), frames.cols());
    let mut out = Vec::new();
    let mut t = phase;
    while t < t_len {
        out.extend_from_slice(frames.row(t));
        t += factor;
    }
    assert!(!out.is_empty(), "subsampling phase {phase} dropped every frame of {t_len}");
    Tensor::matrix(out.len() / dim, dim, out)
}

/// Full frontend: log-mel → optional mean normalization → context stacking →
/// subsampling. The frame shift metadata is multiplied by the subsampling
/// factor.
pub fn extract(wave: &Waveform, cfg: &FeatureConfig) -> Result<FeatureSequence, FeatureError> {
    let mut mel = log_mel(wave, cfg)?;
    if cfg.mean_normalize {
        let (t_len, dim) = (mel.rows(), mel.cols());
        let mut mean = vec![0.0; dim];
        for t in 0..t_len {
            for (m, v) in mean.iter_mut().zip(mel.row(t)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= t_len as f64;
        }
        for t in 0..t_len {
            for d in 0..dim {
                mel.data_mut()[t * dim + d] -= mean[d];
            }
        }
    }
    let stacked = stack_context(&mel, cfg.left_context, cfg.right_context);
    let sub = subsample(&stacked, cfg.subsample_factor, cfg.subsample_phase);
    Ok(FeatureSequence::new(
        sub,
        cfg.hop_ms / 1000.0 * cfg.subsample_factor as f64,
    ))
}
