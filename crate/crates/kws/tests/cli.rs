//! End-to-end command tests: the library-level command functions plus the
//! compiled binary (exit codes, config plumbing).

use std::path::Path;
use std::process::Command;

use kws::cli::{cmd_eval, cmd_gen_data, cmd_train};
use kws::config::RunConfig;
use kws::data::read_dataset;

/// A configuration small enough that train/eval cycles take well under a
/// second.
fn tiny_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.apply_text(
        "feature_dim = 8\n\
         n_phones = 10\n\
         keyword = 1,4,7\n\
         n_asr_utts = 20\n\
         n_kws_pos = 10\n\
         n_kws_neg = 10\n\
         n_eval_pos = 8\n\
         n_eval_neg = 12\n\
         noise_std = 0.4\n\
         enc_blocks = 1\n\
         d_model = 12\n\
         n_heads = 2\n\
         d_ff = 16\n\
         d_query = 12\n\
         query_len = 2\n\
         blstm_hidden = 6\n\
         batch_size = 8\n\
         epochs = 2\n\
         warmup_epochs = 0.5\n\
         mid_epoch = 1.0\n\
         fa_target = 3\n",
    )
    .unwrap();
    cfg.validate().unwrap();
    cfg
}

fn tiny_overrides() -> Vec<String> {
    // the same settings as tiny_config, for binary invocations
    tiny_config()
        .to_text()
        .lines()
        .filter(|l| !l.trim_start().starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let (k, v) = l.split_once('=').unwrap();
            format!("{}={}", k.trim(), v.trim())
        })
        .collect()
}

fn read_bytes(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()))
}

#[test]
fn gen_data_is_idempotent_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    cmd_gen_data(&cfg, &a).unwrap();
    cmd_gen_data(&cfg, &b).unwrap();
    for name in ["asr.bin", "kws_train.bin", "kws_eval.bin"] {
        assert_eq!(read_bytes(&a.join(name)), read_bytes(&b.join(name)), "{name}");
    }
    // files re-read equal the in-memory generation
    let asr = read_dataset(&a.join("asr.bin")).unwrap();
    assert_eq!(asr, kws::data::synth_asr(&cfg.synth).unwrap());

    let mut other = cfg.clone();
    other.apply_kv("seed", "999").unwrap();
    let c = dir.path().join("c");
    cmd_gen_data(&other, &c).unwrap();
    assert_ne!(read_bytes(&a.join("asr.bin")), read_bytes(&c.join("asr.bin")));
}

#[test]
fn phoneme_only_trains_without_any_kws_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg.apply_kv("mode", "phoneme_only").unwrap();
    cfg.apply_kv("kws_fraction", "0").unwrap();
    let data = dir.path().join("data");
    cmd_gen_data(&cfg, &data).unwrap();
    std::fs::remove_file(data.join("kws_train.bin")).unwrap();
    std::fs::remove_file(data.join("kws_eval.bin")).unwrap();
    cmd_train(&cfg, &data, &dir.path().join("run"), false).unwrap();
    assert!(dir.path().join("run/final.ckpt").exists());
}

#[test]
fn train_then_eval_roundtrip_matches_library_scoring() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    cmd_gen_data(&cfg, &data).unwrap();
    cmd_train(&cfg, &data, &run, false).unwrap();

    let evals = cmd_eval(&cfg, &run.join("final.ckpt"), &data.join("kws_eval.bin"), &run.join("eval"))
        .unwrap();
    assert_eq!(evals.len(), 2); // phonetic + phrase branches

    // plumbing equality: the CLI's FRR equals the metrics API on the same
    // checkpoint and dataset
    let (all, _) = kws::model::load_checkpoint(&run.join("final.ckpt")).unwrap();
    let params = kws::cli::model_params_of(&all);
    let eval_ds = read_dataset(&data.join("kws_eval.bin")).unwrap();
    let frrs = kws::cli::branch_frrs(&cfg, cfg.train.mode, &params, &eval_ds).unwrap();
    for be in &evals {
        assert_eq!(frrs[&be.branch], be.frr, "branch {:?}", be.branch);
    }

    // DET files exist for both branches
    assert!(run.join("eval/det_phonetic.txt").exists());
    assert!(run.join("eval/det_phrase.txt").exists());
}

#[test]
fn conv_mode_emits_curves_for_both_branches() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg.apply_kv("mode", "conv_mtl").unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    cmd_gen_data(&cfg, &data).unwrap();
    cmd_train(&cfg, &data, &run, false).unwrap();
    let evals =
        cmd_eval(&cfg, &run.join("final.ckpt"), &data.join("kws_eval.bin"), &run.join("eval"))
            .unwrap();
    assert_eq!(evals.len(), 2);
    for branch in ["phonetic", "phrase"] {
        let det = std::fs::read_to_string(run.join(format!("eval/det_{branch}.txt"))).unwrap();
        assert!(det.lines().count() > 2, "{branch} DET curve is empty");
    }
}

#[test]
fn resume_after_a_crash_is_bit_equivalent_to_a_straight_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg.apply_kv("epochs", "4").unwrap();
    cfg.apply_kv("mid_epoch", "2").unwrap();
    let data = dir.path().join("data");
    cmd_gen_data(&cfg, &data).unwrap();

    let straight = dir.path().join("straight");
    cmd_train(&cfg, &data, &straight, false).unwrap();

    // same run, then fake a crash after epoch 1: later artifacts vanish,
    // the log is cut back to epochs 0..=1
    let crashed = dir.path().join("crashed");
    cmd_train(&cfg, &data, &crashed, false).unwrap();
    for stale in ["epoch_002.ckpt", "epoch_003.ckpt", "final.ckpt"] {
        std::fs::remove_file(crashed.join(stale)).unwrap();
    }
    let log = std::fs::read_to_string(crashed.join("train_log.tsv")).unwrap();
    let kept: String = log
        .lines()
        .filter(|l| {
            l.starts_with('#')
                || l.split('\t').next().and_then(|e| e.parse::<usize>().ok()).is_some_and(|e| e <= 1)
        })
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(crashed.join("train_log.tsv"), kept).unwrap();

    cmd_train(&cfg, &data, &crashed, true).unwrap();
    for artifact in ["final.ckpt", "epoch_002.ckpt", "epoch_003.ckpt", "train_log.tsv"] {
        assert_eq!(
            read_bytes(&straight.join(artifact)),
            read_bytes(&crashed.join(artifact)),
            "resume diverged on {artifact}"
        );
    }
}

#[test]
fn rerunning_train_reproduces_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let data = dir.path().join("data");
    cmd_gen_data(&cfg, &data).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    cmd_train(&cfg, &data, &a, false).unwrap();
    cmd_train(&cfg, &data, &b, false).unwrap();
    for artifact in ["final.ckpt", "train_log.tsv", "epoch_000.ckpt"] {
        assert_eq!(read_bytes(&a.join(artifact)), read_bytes(&b.join(artifact)), "{artifact}");
    }
}

// ── binary-level tests (exit codes, argument handling) ──────────────────

fn kws_binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kws"))
}

fn with_overrides(cmd: &mut Command) -> &mut Command {
    for kv in tiny_overrides() {
        cmd.arg("--set").arg(kv);
    }
    cmd
}

#[test]
fn binary_prints_full_config_and_generates_data() {
    let dir = tempfile::tempdir().unwrap();
    let out = with_overrides(&mut kws_binary())
        .args(["gen-data", "--out"])
        .arg(dir.path().join("d"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("# effective configuration"));
    assert!(stdout.contains("epochs = 2"));
    assert!(stdout.contains("wrote asr.bin"));
}

#[test]
fn unknown_config_key_exits_with_usage_code() {
    let out = kws_binary()
        .args(["--set", "bogus_key=1", "gen-data", "--out", "/tmp/unused-kws-test"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus_key"));
}

#[test]
fn missing_dataset_exits_with_io_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = with_overrides(&mut kws_binary())
        .args(["train", "--data"])
        .arg(dir.path().join("nowhere"))
        .args(["--out"])
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn multi_threading_is_rejected() {
    let out = kws_binary()
        .args(["--threads", "2", "gen-data", "--out", "/tmp/unused-kws-test2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn grad_check_ops_scope_passes_and_injected_fault_fails() {
    let ok = kws_binary()
        .args(["grad-check", "--scope", "ops"])
        .output()
        .unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stdout));
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert!(stdout.contains("softmax_rows"));
    assert!(stdout.contains("0 failures"));

    let bad = kws_binary()
        .args(["grad-check", "--scope", "ops", "--inject-fault"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("injected_fault"));

    let usage = kws_binary()
        .args(["grad-check", "--scope", "everything"])
        .output()
        .unwrap();
    assert_eq!(usage.status.code(), Some(1));
}

#[test]
fn det_subcommand_rederives_the_eval_curve() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    cmd_gen_data(&cfg, &data).unwrap();
    cmd_train(&cfg, &data, &run, false).unwrap();
    cmd_eval(&cfg, &run.join("final.ckpt"), &data.join("kws_eval.bin"), &run.join("eval")).unwrap();

    let rederived = dir.path().join("rederived.txt");
    let out = with_overrides(&mut kws_binary())
        .args(["det", "--scores"])
        .arg(run.join("eval/scores_phrase.txt"))
        .args(["--out"])
        .arg(&rederived)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        read_bytes(&run.join("eval/det_phrase.txt")),
        read_bytes(&rederived),
        "re-derived DET file differs from the eval output"
    );
}

#[test]
fn config_file_and_overrides_compose() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.cfg");
    std::fs::write(&cfg_path, tiny_config().to_text()).unwrap();
    let out = kws_binary()
        .arg("--config")
        .arg(&cfg_path)
        .args(["--set", "seed=31", "gen-data", "--out"])
        .arg(dir.path().join("d"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("seed = 31"), "override did not land:\n{stdout}");
}
