//! Command implementations behind the `kws` binary.
//!
//! Every command is a plain function over paths and a [`RunConfig`] so
//! integration tests drive them directly. All outputs are deterministic for
//! a given config and seed: rerunning a command reproduces identical bytes.
//!
//! Exit-code contract (mapped in `main`): 0 success, 1 usage/config error,
//! 2 numerical failure, 3 I/O error.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::data::{read_dataset, synth_asr, synth_kws, write_dataset, DataError, Dataset, DatasetKind, KwsSplit};
use crate::gradcheck::{run_checks, sabotaged_check, Scope, GRAD_TOL};
use crate::metrics::{
    det_curve, format_summary_table, frr_at_fa, read_score_file, score_dataset, write_det_file,
    write_score_file, Branch, DetCurve, MetricsError, SummaryRow,
};
use crate::model::{
    init_params, load_checkpoint, save_checkpoint, HeadKind, ModelError, ModelParams,
};
use crate::tensor::Tensor;
use crate::trainer::{train_epochs, AdamState, TrainError, TrainMode};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::BadConfig(_) => CliError::Usage(e.to_string()),
            other => CliError::Io(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::BadConfig(_) => CliError::Usage(e.to_string()),
            other => CliError::Io(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Numerical { .. } => CliError::Numerical(e.to_string()),
            TrainError::Loss(inner) => CliError::Numerical(inner.to_string()),
            TrainError::BadConfig(_) | TrainError::MissingData(_) => CliError::Usage(e.to_string()),
            TrainError::Io(io) => CliError::Io(io.to_string()),
            TrainError::Model(m) => m.into(),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Io(io) => CliError::Io(io.to_string()),
            MetricsError::Loss(l) => CliError::Numerical(l.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

pub const ASR_FILE: &str = "asr.bin";
pub const KWS_TRAIN_FILE: &str = "kws_train.bin";
pub const KWS_EVAL_FILE: &str = "kws_eval.bin";
pub const LOG_FILE: &str = "train_log.tsv";
pub const FINAL_CKPT: &str = "final.ckpt";

// ── gen-data ────────────────────────────────────────────────────────────

/// Synthesize and write `asr.bin`, `kws_train.bin`, `kws_eval.bin`.
pub fn cmd_gen_data(cfg: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out_dir)?;
    let asr = synth_asr(&cfg.synth)?;
    let kws_train = synth_kws(&cfg.synth, KwsSplit::Train)?;
    let kws_eval = synth_kws(&cfg.synth, KwsSplit::Eval)?;
    write_dataset(&out_dir.join(ASR_FILE), &asr)?;
    write_dataset(&out_dir.join(KWS_TRAIN_FILE), &kws_train)?;
    write_dataset(&out_dir.join(KWS_EVAL_FILE), &kws_eval)?;
    println!(
        "wrote {}: {} utterances, dim {}, seed {}",
        ASR_FILE,
        asr.len(),
        asr.feature_dim(),
        asr.seed
    );
    println!(
        "wrote {}: {} utterances ({} pos / {} neg), dim {}",
        KWS_TRAIN_FILE,
        kws_train.len(),
        cfg.synth.n_kws_pos,
        cfg.synth.n_kws_neg,
        kws_train.feature_dim()
    );
    println!(
        "wrote {}: {} utterances ({} pos / {} neg), dim {}",
        KWS_EVAL_FILE,
        kws_eval.len(),
        cfg.synth.n_eval_pos,
        cfg.synth.n_eval_neg,
        kws_eval.feature_dim()
    );
    Ok(())
}

// ── train ───────────────────────────────────────────────────────────────

/// Bundle optimizer state and progress into the parameter map so one
/// checkpoint file resumes a run exactly.
fn pack_state(params: &ModelParams, adam: &AdamState, next_epoch: usize) -> ModelParams {
    let mut all = params.clone();
    for (n, t) in &adam.m {
        all.insert(format!("opt.m.{n}"), t.clone());
    }
    for (n, t) in &adam.v {
        all.insert(format!("opt.v.{n}"), t.clone());
    }
    all.insert("opt.step".into(), Tensor::scalar(adam.step as f64));
    all.insert("meta.next_epoch".into(), Tensor::scalar(next_epoch as f64));
    all
}

/// Model parameters only (drops optimizer/meta entries).
pub fn model_params_of(all: &ModelParams) -> ModelParams {
    let mut params = ModelParams::default();
    for (n, t) in all.iter() {
        if !n.starts_with("opt.") && !n.starts_with("meta.") {
            params.insert(n.clone(), t.clone());
        }
    }
    params
}

fn unpack_state(all: &ModelParams) -> Result<(ModelParams, AdamState, usize), CliError> {
    if !all.contains("meta.next_epoch") {
        return Err(CliError::Io("checkpoint carries no optimizer state to resume from".into()));
    }
    let params = model_params_of(all);
    let mut adam = AdamState::new(&params);
    for (n, _) in params.iter() {
        let m_name = format!("opt.m.{n}");
        let v_name = format!("opt.v.{n}");
        if !all.contains(&m_name) || !all.contains(&v_name) {
            return Err(CliError::Io(format!("checkpoint optimizer state missing for '{n}'")));
        }
        adam.m.insert(n.clone(), all.get(&m_name).clone());
        adam.v.insert(n.clone(), all.get(&v_name).clone());
    }
    adam.step = all.get("opt.step").scalar_value() as u64;
    let next_epoch = all.get("meta.next_epoch").scalar_value() as usize;
    Ok((params, adam, next_epoch))
}

fn epoch_ckpt_name(epoch: usize) -> String {
    format!("epoch_{epoch:03}.ckpt")
}

/// Most recent `epoch_NNN.ckpt` in a directory.
fn latest_epoch_checkpoint(dir: &Path) -> Option<(usize, PathBuf)> {
    let mut best: Option<(usize, PathBuf)> = None;
    let entries = std::fs::read_dir(dir).ok()?;
    for entry in entries.flatten() {
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(num) = name.strip_prefix("epoch_").and_then(|s| s.strip_suffix(".ckpt")) {
            if let Ok(epoch) = num.parse::<usize>() {
                if best.as_ref().map_or(true, |(b, _)| epoch > *b) {
                    best = Some((epoch, entry.path()));
                }
            }
        }
    }
    best
}

fn format_loss(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

/// Train per the configured mode; writes one checkpoint per epoch, a final
/// checkpoint, and a tab-separated training log. With `resume`, continues
/// from the latest epoch checkpoint in `out_dir` (the result is
/// bit-equivalent to an uninterrupted run).
pub fn cmd_train(cfg: &RunConfig, data_dir: &Path, out_dir: &Path, resume: bool) -> Result<(), CliError> {
    let started = Instant::now();
    std::fs::create_dir_all(out_dir)?;
    let mode = cfg.train.mode;
    let model_cfg = cfg.model_config(mode);
    let config_text = cfg.to_text();

    let asr = read_dataset(&data_dir.join(ASR_FILE))?;
    let kws = if mode.uses_kws() {
        Some(read_dataset(&data_dir.join(KWS_TRAIN_FILE))?)
    } else {
        None
    };
    for (name, ds) in std::iter::once(("ASR", &asr)).chain(kws.iter().map(|k| ("KWS", k))) {
        if ds.feature_dim() != model_cfg.encoder.input_dim {
            return Err(CliError::Usage(format!(
                "{name} dataset width {} does not match model input_dim {}",
                ds.feature_dim(),
                model_cfg.encoder.input_dim
            )));
        }
    }

    let (mut params, mut adam, start_epoch, log_file) = if resume {
        let (epoch_done, path) = latest_epoch_checkpoint(out_dir).ok_or_else(|| {
            CliError::Usage(format!("--resume set but no epoch checkpoint in {}", out_dir.display()))
        })?;
        let (all, stored_text) = load_checkpoint(&path)?;
        if stored_text != config_text {
            return Err(CliError::Usage(
                "checkpoint was trained with a different configuration; refusing to resume".into(),
            ));
        }
        let (params, adam, next_epoch) = unpack_state(&all)?;
        debug_assert_eq!(next_epoch, epoch_done + 1);
        let log = File::options().append(true).open(out_dir.join(LOG_FILE))?;
        println!("resuming from {} (epoch {})", path.display(), epoch_done);
        (params, adam, next_epoch, log)
    } else {
        let params = init_params(&model_cfg, cfg.train.seed);
        let adam = AdamState::new(&params);
        let mut log = File::create(out_dir.join(LOG_FILE))?;
        writeln!(log, "# epoch\tbatch\tphone_loss\tphrase_loss\tlr")?;
        (params, adam, 0, log)
    };

    let mut log = BufWriter::new(log_file);
    let mut last_phone = None;
    let mut last_phrase = None;
    let mut io_error: Option<std::io::Error> = None;
    train_epochs(
        &model_cfg,
        &cfg.train,
        &asr,
        kws.as_ref(),
        start_epoch,
        &mut params,
        &mut adam,
        |rec| {
            last_phone = rec.phone_loss.or(last_phone);
            last_phrase = rec.phrase_loss.or(last_phrase);
            if let Err(e) = writeln!(
                log,
                "{}\t{}\t{}\t{}\t{}",
                rec.epoch,
                rec.batch,
                format_loss(rec.phone_loss),
                format_loss(rec.phrase_loss),
                rec.lr
            ) {
                io_error.get_or_insert(e);
            }
        },
        |epoch, params, adam| {
            let packed = pack_state(params, adam, epoch + 1);
            save_checkpoint(&out_dir.join(epoch_ckpt_name(epoch)), &packed, &config_text)?;
            Ok(())
        },
    )?;
    log.flush()?;
    if let Some(e) = io_error {
        return Err(e.into());
    }

    save_checkpoint(&out_dir.join(FINAL_CKPT), &params, &config_text)?;
    println!(
        "trained mode={} epochs={} final phone_loss={} phrase_loss={} wall_time={:.1}s",
        mode.label(),
        cfg.train.epochs,
        format_loss(last_phone),
        format_loss(last_phrase),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

// ── eval ────────────────────────────────────────────────────────────────

/// FRR results for one evaluated branch.
pub struct BranchEval {
    pub branch: Branch,
    pub curve: DetCurve,
    pub frr: f64,
    pub threshold: f64,
}

/// Score an eval set through every branch the checkpointed model has, write
/// score and DET files, and report FRR at the configured FA target.
pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    eval_path: &Path,
    out_dir: &Path,
) -> Result<Vec<BranchEval>, CliError> {
    std::fs::create_dir_all(out_dir)?;
    let (all, stored_text) = load_checkpoint(checkpoint)?;
    let params = model_params_of(&all);

    // the checkpoint's embedded config is authoritative for the model shape
    let mut ckpt_cfg = RunConfig::default();
    ckpt_cfg.apply_text(&stored_text).map_err(|e| {
        CliError::Io(format!("checkpoint carries an unreadable config block: {e}"))
    })?;
    let mode = ckpt_cfg.train.mode;
    let model_cfg = ckpt_cfg.model_config(mode);

    let eval = read_dataset(eval_path)?;
    if eval.kind != DatasetKind::Kws {
        return Err(CliError::Usage("eval dataset must be phrase-labeled (kws kind)".into()));
    }
    if eval.feature_dim() != model_cfg.encoder.input_dim {
        return Err(CliError::Usage(format!(
            "eval dataset width {} does not match checkpoint input_dim {}",
            eval.feature_dim(),
            model_cfg.encoder.input_dim
        )));
    }

    let mut branches = vec![Branch::Phonetic];
    if model_cfg.head != HeadKind::PhoneticOnly {
        branches.push(Branch::Phrase);
    }

    let mut results = Vec::new();
    let mut rows = Vec::new();
    for branch in branches {
        let trials = score_dataset(&model_cfg, &params, &eval, branch, &ckpt_cfg.synth.keyword)?;
        write_score_file(&out_dir.join(format!("scores_{}.txt", branch.label())), &trials)?;
        let curve = det_curve(&trials, cfg.fa_denominator)?;
        write_det_file(&out_dir.join(format!("det_{}.txt", branch.label())), &curve)?;
        let (frr, threshold) = frr_at_fa(&curve, cfg.fa_target)?;
        println!(
            "mode={} branch={} FRR@fa<={} = {:.4} (threshold {})",
            mode.label(),
            branch.label(),
            cfg.fa_target,
            frr,
            threshold
        );
        rows.push(SummaryRow {
            mode: mode.label().to_string(),
            branch: branch.label().to_string(),
            frr,
        });
        results.push(BranchEval { branch, curve, frr, threshold });
    }
    print!("{}", format_summary_table(&rows));
    Ok(results)
}

// ── grad-check ──────────────────────────────────────────────────────────

/// Run the registered finite-difference suite; the returned count is the
/// number of failing checks (mapped to a nonzero exit).
pub fn cmd_grad_check(scope: &str, inject_fault: bool) -> Result<usize, CliError> {
    let scope_filter = match scope {
        "ops" => Some(Scope::Ops),
        "losses" => Some(Scope::Losses),
        "model" => Some(Scope::Model),
        "all" => None,
        other => {
            return Err(CliError::Usage(format!(
                "unknown grad-check scope '{other}' (expected ops, losses, model or all)"
            )))
        }
    };
    let extra = if inject_fault { vec![sabotaged_check()] } else { Vec::new() };
    let outcomes = run_checks(scope_filter, &extra);
    println!("{:<28} {:<8} {:>14}  result", "check", "scope", "max rel err");
    let mut failures = 0;
    for o in &outcomes {
        println!(
            "{:<28} {:<8} {:>14.3e}  {}",
            o.name,
            o.scope.label(),
            o.max_rel_err,
            if o.pass { "pass" } else { "FAIL" }
        );
        if !o.pass {
            failures += 1;
        }
    }
    println!(
        "{} checks, {} failures (tolerance {GRAD_TOL:.0e})",
        outcomes.len(),
        failures
    );
    Ok(failures)
}

// ── det ─────────────────────────────────────────────────────────────────

/// Re-derive a DET curve from a saved score file.
pub fn cmd_det(cfg: &RunConfig, scores: &Path, out_file: &Path) -> Result<(), CliError> {
    let trials = read_score_file(scores)?;
    let curve = det_curve(&trials, cfg.fa_denominator)?;
    write_det_file(out_file, &curve)?;
    let (frr, threshold) = frr_at_fa(&curve, cfg.fa_target)?;
    println!(
        "{} trials ({} pos / {} neg); FRR@fa<={} = {:.4} (threshold {})",
        trials.len(),
        curve.n_positives,
        curve.n_negatives,
        cfg.fa_target,
        frr,
        threshold
    );
    Ok(())
}

// ── shared helpers for eval-style summaries ─────────────────────────────

/// FRRs per branch for an in-memory model + dataset (used by the benchmark
/// inside the acceptance suite).
pub fn branch_frrs(
    cfg: &RunConfig,
    mode: TrainMode,
    params: &ModelParams,
    eval: &Dataset,
) -> Result<BTreeMap<Branch, f64>, CliError> {
    let model_cfg = cfg.model_config(mode);
    let mut out = BTreeMap::new();
    let mut branches = vec![Branch::Phonetic];
    if mode.head_kind() != HeadKind::PhoneticOnly {
        branches.push(Branch::Phrase);
    }
    for branch in branches {
        let trials = score_dataset(&model_cfg, params, eval, branch, &cfg.synth.keyword)?;
        let curve = det_curve(&trials, cfg.fa_denominator)?;
        let (frr, _) = frr_at_fa(&curve, cfg.fa_target)?;
        out.insert(branch, frr);
    }
    Ok(out)
}

impl PartialOrd for Branch {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Branch {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.label().cmp(other.label())
    }
}
