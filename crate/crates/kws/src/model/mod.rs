//! The transformer phonetic encoder and the three interchangeable KWS heads:
//! the cross-attention decoder, the conventional split-branch head, and the
//! BLSTM decoder.
//!
//! Parameters live in a [`ModelParams`] name→tensor map; a forward pass binds
//! them onto a tape with [`Bound::bind`] and runs one of the head functions.
//! All heads read the encoder's hidden states, so phrase-loss gradients reach
//! every encoder block during joint training.

mod attention;
mod checkpoint;
mod encoder;
mod heads;

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

pub use attention::{
    attention, attention_with_probe, multi_head_attention, multi_head_attention_with_probe,
    MhaVars,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use encoder::{encode, sinusoidal_pe, EncoderOutput};
pub use heads::{blstm_head, cross_attn_head, split_branch_head};

use crate::autodiff::{Tape, Var};
use crate::gradcheck::{max_grad_error, Check, Scope};
use crate::rng;
use crate::tensor::Tensor;

/// Phonetic encoder shape.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub n_blocks: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    /// Phone classes plus one blank.
    pub n_phone_logits: usize,
    pub input_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            n_blocks: 6,
            d_model: 256,
            n_heads: 4,
            d_ff: 1024,
            n_phone_logits: 54,
            input_dim: 280,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let all_positive = [
            self.n_blocks,
            self.d_model,
            self.n_heads,
            self.d_ff,
            self.n_phone_logits,
            self.input_dim,
        ]
        .iter()
        .all(|&v| v > 0);
        if !all_positive {
            return Err(ModelError::BadConfig("encoder dimensions must be positive".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(ModelError::BadConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

/// Cross-attention decoder shape. The query sequence is `query_len` trainable
/// vectors of width `d_query`; the decoder block output is reshaped to a
/// single `query_len · d_query` vector before the final linear layer.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossAttnDecoderConfig {
    /// Decoder block count (P).
    pub n_blocks: usize,
    pub d_query: usize,
    /// Query sequence length (M).
    pub query_len: usize,
    pub n_phrase_logits: usize,
}

impl Default for CrossAttnDecoderConfig {
    fn default() -> Self {
        CrossAttnDecoderConfig {
            n_blocks: 1,
            d_query: 256,
            query_len: 4,
            n_phrase_logits: 2,
        }
    }
}

impl CrossAttnDecoderConfig {
    pub fn reshape_width(&self) -> usize {
        self.d_query * self.query_len
    }

    pub fn validate(&self, enc: &EncoderConfig) -> Result<(), ModelError> {
        if self.n_blocks == 0 || self.query_len == 0 || self.d_query == 0 {
            return Err(ModelError::BadConfig("decoder dimensions must be positive".into()));
        }
        // cross-attention keys/values are projected from encoder hidden states
        if self.d_query % enc.n_heads != 0 {
            return Err(ModelError::BadConfig(format!(
                "d_query {} not divisible by n_heads {}",
                self.d_query, enc.n_heads
            )));
        }
        Ok(())
    }
}

/// Which phrase head (if any) a model carries.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum HeadKind {
    /// Phoneme classifier only; no phrase head.
    PhoneticOnly,
    /// Conventional multi-task split: extra per-frame 3-class linear branch.
    SplitBranch,
    /// BLSTM decoder over encoder hidden states.
    Blstm,
    /// Cross-attention decoder over a trainable query sequence.
    CrossAttn,
}

impl HeadKind {
    pub fn label(self) -> &'static str {
        match self {
            HeadKind::PhoneticOnly => "phonetic_only",
            HeadKind::SplitBranch => "split_branch",
            HeadKind::Blstm => "blstm",
            HeadKind::CrossAttn => "cross_attn",
        }
    }
}

/// Full model shape: encoder plus the selected head.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub cross_attn: CrossAttnDecoderConfig,
    /// BLSTM hidden units per direction.
    pub blstm_hidden: usize,
    pub head: HeadKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            cross_attn: CrossAttnDecoderConfig::default(),
            blstm_hidden: 256,
            head: HeadKind::CrossAttn,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.encoder.validate()?;
        if self.head == HeadKind::CrossAttn {
            self.cross_attn.validate(&self.encoder)?;
        }
        if self.head == HeadKind::Blstm && self.blstm_hidden == 0 {
            return Err(ModelError::BadConfig("blstm_hidden must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("checkpoint has wrong magic bytes")]
    BadMagic,
    #[error("checkpoint format version {found} unsupported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint shape table invalid: {0}")]
    BadShapeTable(String),
    #[error("checkpoint truncated or unreadable: {0}")]
    Io(#[from] std::io::Error),
    #[error("parameter '{0}' missing from checkpoint")]
    MissingParam(String),
}

/// All trainable tensors, addressable by stable names. BTreeMap keeps every
/// iteration (updates, serialization) in one deterministic order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter '{name}'"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter '{name}'"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn insert(&mut self, name: String, tensor: Tensor) {
        assert!(
            self.tensors.insert(name.clone(), tensor).is_none(),
            "duplicate parameter name '{name}'"
        );
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn total_elements(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }
}

/// Builder drawing parameters in a fixed creation order from one stream, so
/// init is bit-reproducible for a given (config, seed).
struct ParamInit {
    rng: rand_chacha::ChaCha20Rng,
    params: ModelParams,
}

impl ParamInit {
    fn new(seed: u64) -> Self {
        ParamInit {
            rng: rng::stream(seed, "param-init"),
            params: ModelParams::default(),
        }
    }

    /// uniform(−√(1/fan_in), +√(1/fan_in))
    fn draw(&mut self, fan_in: usize, numel: usize) -> Vec<f64> {
        let bound = (1.0 / fan_in as f64).sqrt();
        (0..numel).map(|_| self.rng.gen_range(-bound..bound)).collect()
    }

    fn mat(&mut self, name: &str, rows: usize, cols: usize) {
        let data = self.draw(rows, rows * cols);
        self.params.insert(name.to_string(), Tensor::matrix(rows, cols, data));
    }

    fn bias(&mut self, name: &str, fan_in: usize, len: usize) {
        let data = self.draw(fan_in, len);
        self.params.insert(name.to_string(), Tensor::vector(data));
    }

    fn ln(&mut self, prefix: &str, d: usize) {
        self.params.insert(format!("{prefix}.gain"), Tensor::vector(vec![1.0; d]));
        self.params.insert(format!("{prefix}.bias"), Tensor::vector(vec![0.0; d]));
    }

    /// Attention projections: queries from `d_q_in`, keys/values from
    /// `d_kv_in`, all mapped to `d_out`, plus the output affine.
    fn mha(&mut self, prefix: &str, d_q_in: usize, d_kv_in: usize, d_out: usize) {
        self.mat(&format!("{prefix}.wq"), d_q_in, d_out);
        self.bias(&format!("{prefix}.bq"), d_q_in, d_out);
        self.mat(&format!("{prefix}.wk"), d_kv_in, d_out);
        self.bias(&format!("{prefix}.bk"), d_kv_in, d_out);
        self.mat(&format!("{prefix}.wv"), d_kv_in, d_out);
        self.bias(&format!("{prefix}.bv"), d_kv_in, d_out);
        self.mat(&format!("{prefix}.wo"), d_out, d_out);
        self.bias(&format!("{prefix}.bo"), d_out, d_out);
    }

    fn ff(&mut self, prefix: &str, d: usize, d_ff: usize) {
        self.mat(&format!("{prefix}.w1"), d, d_ff);
        self.bias(&format!("{prefix}.b1"), d, d_ff);
        self.mat(&format!("{prefix}.w2"), d_ff, d);
        self.bias(&format!("{prefix}.b2"), d_ff, d);
    }
}

/// Initialize all parameters for the given config. The query sequence exists
/// iff the cross-attention head is selected.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> ModelParams {
    cfg.validate().expect("invalid model config");
    let mut init = ParamInit::new(seed);
    let enc = &cfg.encoder;

    init.mat("enc.in_proj.w", enc.input_dim, enc.d_model);
    init.bias("enc.in_proj.b", enc.input_dim, enc.d_model);
    for i in 0..enc.n_blocks {
        let p = format!("enc.block{i}");
        init.mha(&format!("{p}.attn"), enc.d_model, enc.d_model, enc.d_model);
        init.ln(&format!("{p}.ln1"), enc.d_model);
        init.ff(&format!("{p}.ff"), enc.d_model, enc.d_ff);
        init.ln(&format!("{p}.ln2"), enc.d_model);
    }
    init.mat("enc.phone_out.w", enc.d_model, enc.n_phone_logits);
    init.bias("enc.phone_out.b", enc.d_model, enc.n_phone_logits);

    match cfg.head {
        HeadKind::PhoneticOnly => {}
        HeadKind::SplitBranch => {
            init.mat("head.split.w", enc.d_model, 3);
            init.bias("head.split.b", enc.d_model, 3);
        }
        HeadKind::Blstm => {
            let h = cfg.blstm_hidden;
            for dir in ["fwd", "bwd"] {
                init.mat(&format!("head.blstm.{dir}.wx"), enc.d_model, 4 * h);
                init.mat(&format!("head.blstm.{dir}.wh"), h, 4 * h);
                init.bias(&format!("head.blstm.{dir}.b"), enc.d_model, 4 * h);
            }
            init.mat("head.blstm.out.w", 2 * h, 2);
            init.bias("head.blstm.out.b", 2 * h, 2);
        }
        HeadKind::CrossAttn => {
            let x = &cfg.cross_attn;
            let dq = x.d_query;
            {
                // trainable query sequence, initialized like any other weight
                let data = init.draw(dq, x.query_len * dq);
                init.params
                    .insert("head.xattn.query".into(), Tensor::matrix(x.query_len, dq, data));
            }
            for pidx in 0..x.n_blocks {
                let p = format!("head.xattn.block{pidx}");
                init.mha(&format!("{p}.self_attn"), dq, dq, dq);
                init.ln(&format!("{p}.ln1"), dq);
                init.mha(&format!("{p}.cross_attn"), dq, enc.d_model, dq);
                init.ln(&format!("{p}.ln2"), dq);
                init.ff(&format!("{p}.ff"), dq, enc.d_ff);
                init.ln(&format!("{p}.ln3"), dq);
            }
            init.mat("head.xattn.out.w", x.reshape_width(), x.n_phrase_logits);
            init.bias("head.xattn.out.b", x.reshape_width(), x.n_phrase_logits);
        }
    }
    init.params
}

/// Model parameters bound onto a tape for one forward/backward pass.
pub struct Bound<'t> {
    tape: &'t Tape,
    vars: BTreeMap<String, Var>,
}

impl<'t> Bound<'t> {
    /// Insert every tensor as a tape leaf; `trainable` controls whether
    /// gradients flow (false for pure inference).
    pub fn bind(tape: &'t Tape, params: &ModelParams, trainable: bool) -> Bound<'t> {
        let vars = params
            .iter()
            .map(|(name, tensor)| {
                let var = if trainable {
                    tape.param(tensor.clone())
                } else {
                    tape.leaf(tensor.clone())
                };
                (name.clone(), var)
            })
            .collect();
        Bound { tape, vars }
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter '{name}' not bound"))
    }

    pub fn mha_vars(&self, prefix: &str) -> MhaVars {
        MhaVars {
            wq: self.var(&format!("{prefix}.wq")),
            bq: self.var(&format!("{prefix}.bq")),
            wk: self.var(&format!("{prefix}.wk")),
            bk: self.var(&format!("{prefix}.bk")),
            wv: self.var(&format!("{prefix}.wv")),
            bv: self.var(&format!("{prefix}.bv")),
            wo: self.var(&format!("{prefix}.wo")),
            bo: self.var(&format!("{prefix}.bo")),
        }
    }

    /// Gradients for every parameter after a backward pass, zeros where a
    /// parameter was unreachable from the root.
    pub fn collect_grads(
        &self,
        grads: &crate::autodiff::Gradients,
        params: &ModelParams,
    ) -> BTreeMap<String, Tensor> {
        params
            .iter()
            .map(|(name, tensor)| {
                let g = grads
                    .wrt(self.var(name))
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(tensor.shape().to_vec()));
                (name.clone(), g)
            })
            .collect()
    }
}

// ── registered gradient checks (model scope) ────────────────────────────

/// Tiny config so finite differences over every parameter stay cheap.
fn tiny_config(head: HeadKind) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            n_blocks: 2,
            d_model: 8,
            n_heads: 2,
            d_ff: 12,
            n_phone_logits: 5,
            input_dim: 5,
        },
        cross_attn: CrossAttnDecoderConfig {
            n_blocks: 1,
            d_query: 8,
            query_len: 2,
            n_phrase_logits: 2,
        },
        blstm_hidden: 6,
        head,
    }
}

/// FD over every parameter of an encoder+head graph ending in a real loss.
fn e2e_check(head: HeadKind, seed: u64) -> f64 {
    use crate::losses::{ctc_loss, phrase_ce_loss, phrase_ctc_loss, PhraseLabel};

    let cfg = tiny_config(head);
    let params = init_params(&cfg, seed);
    let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
    let tensors: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();

    let mut r = rng::stream(seed, "e2e-features");
    let t_len = 3;
    let features = Tensor::matrix(
        t_len,
        cfg.encoder.input_dim,
        (0..t_len * cfg.encoder.input_dim).map(|_| rng::normal(&mut r)).collect(),
    );

    max_grad_error(&tensors, &|tape, vars| {
        let bound = Bound {
            tape,
            vars: names.iter().cloned().zip(vars.iter().copied()).collect(),
        };
        let x = tape.leaf(features.clone());
        let enc_out = encode(tape, &bound, &cfg.encoder, x);
        match head {
            HeadKind::PhoneticOnly => {
                ctc_loss(tape, enc_out.phone_logits, &[0, 2], cfg.encoder.n_phone_logits - 1)
                    .expect("feasible")
            }
            HeadKind::SplitBranch => {
                let logits = split_branch_head(tape, &bound, enc_out.hidden);
                phrase_ctc_loss(tape, logits, PhraseLabel::Positive).expect("feasible")
            }
            HeadKind::Blstm => {
                let logits = blstm_head(tape, &bound, enc_out.hidden, cfg.blstm_hidden);
                phrase_ce_loss(tape, logits, PhraseLabel::Negative)
            }
            HeadKind::CrossAttn => {
                let logits = cross_attn_head(tape, &bound, &cfg.encoder, &cfg.cross_attn, enc_out.hidden);
                phrase_ce_loss(tape, logits, PhraseLabel::Positive)
            }
        }
    })
}

fn check_attention(seed: u64) -> f64 {
    let mut r = rng::stream(seed, "check_attention");
    let t = |m: usize, n: usize, r: &mut rand_chacha::ChaCha20Rng| {
        Tensor::matrix(m, n, (0..m * n).map(|_| rng::normal(r)).collect())
    };
    let q = t(2, 4, &mut r);
    let k = t(3, 4, &mut r);
    let v = t(3, 5, &mut r);
    let w = t(2, 5, &mut r);
    max_grad_error(&[q, k, v], &|tape, vars| {
        let out = attention(tape, vars[0], vars[1], vars[2]);
        tape.sum_all(tape.mul(out, tape.leaf(w.clone())))
    })
}

fn check_mha_projections(seed: u64) -> f64 {
    let mut r = rng::stream(seed, "check_mha");
    let d = 4;
    let m = 3;
    let t = |rows: usize, cols: usize, r: &mut rand_chacha::ChaCha20Rng| {
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng::normal(r)).collect())
    };
    let vvec = |n: usize, r: &mut rand_chacha::ChaCha20Rng| {
        Tensor::vector((0..n).map(|_| rng::normal(r)).collect())
    };
    let inputs = vec![
        t(d, d, &mut r), // wq
        vvec(d, &mut r), // bq
        t(d, d, &mut r), // wk
        vvec(d, &mut r), // bk
        t(d, d, &mut r), // wv
        vvec(d, &mut r), // bv
        t(d, d, &mut r), // wo
        vvec(d, &mut r), // bo
    ];
    let x = t(m, d, &mut r);
    let w = t(m, d, &mut r);
    max_grad_error(&inputs, &|tape, v| {
        let p = MhaVars {
            wq: v[0], bq: v[1], wk: v[2], bk: v[3],
            wv: v[4], bv: v[5], wo: v[6], bo: v[7],
        };
        let xin = tape.leaf(x.clone());
        let out = multi_head_attention(tape, &p, 2, xin, xin, xin);
        tape.sum_all(tape.mul(out, tape.leaf(w.clone())))
    })
}

fn check_e2e_phonetic(seed: u64) -> f64 {
    e2e_check(HeadKind::PhoneticOnly, seed)
}
fn check_e2e_split(seed: u64) -> f64 {
    e2e_check(HeadKind::SplitBranch, seed)
}
fn check_e2e_blstm(seed: u64) -> f64 {
    e2e_check(HeadKind::Blstm, seed)
}
fn check_e2e_xattn(seed: u64) -> f64 {
    e2e_check(HeadKind::CrossAttn, seed)
}

pub(crate) fn gradient_checks() -> Vec<Check> {
    vec![
        Check { name: "attention", scope: Scope::Model, run: check_attention },
        Check { name: "multi_head_attention", scope: Scope::Model, run: check_mha_projections },
        Check { name: "encoder_phone_ctc", scope: Scope::Model, run: check_e2e_phonetic },
        Check { name: "encoder_split_phrase_ctc", scope: Scope::Model, run: check_e2e_split },
        Check { name: "encoder_blstm_ce", scope: Scope::Model, run: check_e2e_blstm },
        Check { name: "encoder_xattn_ce", scope: Scope::Model, run: check_e2e_xattn },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_head_scoped() {
        let cfg = tiny_config(HeadKind::CrossAttn);
        let a = init_params(&cfg, 11);
        let b = init_params(&cfg, 11);
        assert_eq!(a, b);
        assert!(a.contains("head.xattn.query"));

        let c = init_params(&tiny_config(HeadKind::PhoneticOnly), 11);
        assert!(!c.contains("head.xattn.query"));
        assert!(init_params(&tiny_config(HeadKind::Blstm), 11).contains("head.blstm.fwd.wx"));
    }

    #[test]
    fn config_validation_catches_head_mismatch() {
        let mut cfg = tiny_config(HeadKind::CrossAttn);
        cfg.encoder.d_model = 9; // not divisible by 2 heads
        assert!(matches!(cfg.validate(), Err(ModelError::BadConfig(_))));
    }

    #[test]
    fn bound_lookup_panics_on_unknown_name() {
        let cfg = tiny_config(HeadKind::PhoneticOnly);
        let params = init_params(&cfg, 0);
        let tape = Tape::new();
        let bound = Bound::bind(&tape, &params, false);
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            bound.var("enc.block9.attn.wq")
        }));
        assert!(result.is_err());
    }
}
