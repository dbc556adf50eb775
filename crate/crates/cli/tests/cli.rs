//! End-to-end tests driving the compiled binary: every subcommand, the
//! documented exit codes, config-file handling, and byte-level determinism
//! of outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::{tempdir, TempDir};

const ARCH_16: &str = "input 16x16x3; conv 3:4 k3 s2; conv 4:6 k3 s2; dense 96:8";

fn ddt() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ddt"))
}

fn run(args: &[&str]) -> Output {
    ddt().args(args).output().expect("binary should launch")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("stdout should be UTF-8")
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("stderr should be UTF-8")
}

fn assert_code(out: &Output, want: i32) {
    assert_eq!(
        out.status.code(),
        Some(want),
        "stdout:\n{}\nstderr:\n{}",
        stdout(out),
        stderr(out)
    );
}

fn gen_domain(dir: &Path, preset: &str, seed: u64) {
    let out = run(&[
        "gen-data",
        "--out",
        dir.to_str().unwrap(),
        "--preset",
        preset,
        "--image-size",
        "16",
        "--per-class-train",
        "6",
        "--per-class-val",
        "3",
        "--per-class-test",
        "4",
        "--seed",
        &seed.to_string(),
    ]);
    assert_code(&out, 0);
}

/// Shared fixture: two tiny domains and a short pre-training run.
struct Fixture {
    _dir: TempDir,
    domain_a: PathBuf,
    domain_b: PathBuf,
    checkpoint: PathBuf,
}

fn pretrained_fixture() -> Fixture {
    let dir = tempdir().unwrap();
    let domain_a = dir.path().join("a");
    let domain_b = dir.path().join("b");
    gen_domain(&domain_a, "A", 11);
    gen_domain(&domain_b, "B", 12);
    let checkpoint = dir.path().join("pre.ckpt");
    let out = run(&[
        "pretrain",
        "--data",
        domain_a.to_str().unwrap(),
        "--out",
        checkpoint.to_str().unwrap(),
        "--arch",
        ARCH_16,
        "--max-epochs",
        "2",
        "--batch-size",
        "4",
        "--seed",
        "5",
    ]);
    assert_code(&out, 0);
    Fixture { _dir: dir, domain_a, domain_b, checkpoint }
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    entries
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempdir().unwrap();
    let first = dir.path().join("one");
    let second = dir.path().join("two");
    gen_domain(&first, "A", 42);
    gen_domain(&second, "A", 42);
    assert_eq!(dir_bytes(&first), dir_bytes(&second));

    let shifted = dir.path().join("three");
    gen_domain(&shifted, "A", 43);
    assert_ne!(dir_bytes(&first), dir_bytes(&shifted));
}

#[test]
fn gen_data_requires_an_output_directory() {
    let out = run(&["gen-data", "--preset", "A"]);
    assert_code(&out, 2);
}

#[test]
fn pretrain_writes_checkpoint_history_and_metrics() {
    let fx = pretrained_fixture();
    let bytes = fs::read(&fx.checkpoint).unwrap();
    assert_eq!(&bytes[..4], b"DDT1");

    let history = fs::read_to_string(fx.checkpoint.with_extension("history.csv")).unwrap();
    let mut lines = history.lines();
    assert_eq!(lines.next(), Some("epoch,train_loss,val_loss,lr"));
    assert_eq!(lines.count(), 2, "two epochs requested");

    let out = run(&[
        "eval",
        "--model",
        fx.checkpoint.to_str().unwrap(),
        "--data",
        fx.domain_a.to_str().unwrap(),
        "--split",
        "val",
    ]);
    assert_code(&out, 0);
    assert!(stdout(&out).contains("accuracy"), "{}", stdout(&out));
}

#[test]
fn pretrain_without_a_val_split_is_a_config_error() {
    let dir = tempdir().unwrap();
    let data = dir.path().join("noval");
    let out = run(&[
        "gen-data",
        "--out",
        data.to_str().unwrap(),
        "--image-size",
        "16",
        "--per-class-train",
        "4",
        "--per-class-val",
        "0",
        "--per-class-test",
        "2",
    ]);
    assert_code(&out, 0);
    let out = run(&[
        "pretrain",
        "--data",
        data.to_str().unwrap(),
        "--out",
        dir.path().join("x.ckpt").to_str().unwrap(),
        "--arch",
        ARCH_16,
        "--max-epochs",
        "1",
    ]);
    assert_code(&out, 2);
}

#[test]
fn baseline_mode_is_recorded_in_the_checkpoint() {
    let dir = tempdir().unwrap();
    let data = dir.path().join("a");
    gen_domain(&data, "A", 11);
    let ckpt = dir.path().join("ce.ckpt");
    let out = run(&[
        "pretrain",
        "--data",
        data.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
        "--arch",
        "input 16x16x3; conv 3:4 k3 s2; conv 4:6 k3 s2; dense 96:2",
        "--mode",
        "ce",
        "--max-epochs",
        "1",
        "--batch-size",
        "4",
    ]);
    assert_code(&out, 0);
    let bytes = fs::read(&ckpt).unwrap();
    let text_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let mode_byte = bytes[12 + text_len + 8 + 1];
    assert_eq!(mode_byte, 1, "1 marks the cross-entropy baseline");
}

#[test]
fn missing_dataset_is_an_io_error() {
    let fx = pretrained_fixture();
    let out = run(&[
        "eval",
        "--model",
        fx.checkpoint.to_str().unwrap(),
        "--data",
        "/nonexistent/nowhere",
    ]);
    assert_code(&out, 3);
}

#[test]
fn explicit_geometry_must_match_the_checkpoint() {
    let fx = pretrained_fixture();
    let out = run(&[
        "eval",
        "--model",
        fx.checkpoint.to_str().unwrap(),
        "--data",
        fx.domain_a.to_str().unwrap(),
        "--latent-dim",
        "9",
    ]);
    assert_code(&out, 2);
    assert!(stderr(&out).contains("latent dimension"), "{}", stderr(&out));

    let out = run(&[
        "eval",
        "--model",
        fx.checkpoint.to_str().unwrap(),
        "--data",
        fx.domain_a.to_str().unwrap(),
        "--mode",
        "ce",
    ]);
    assert_code(&out, 2);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let fx = pretrained_fixture();
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[train]\nbatch_size = 4\nwarmup = 3\n").unwrap();
    let out = run(&[
        "eval",
        "--model",
        fx.checkpoint.to_str().unwrap(),
        "--data",
        fx.domain_a.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_code(&out, 2);
    assert!(stderr(&out).contains("warmup"), "{}", stderr(&out));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempdir().unwrap();
    let data = dir.path().join("a");
    gen_domain(&data, "A", 11);
    let cfg = dir.path().join("cfg.toml");
    fs::write(
        &cfg,
        format!("[train]\nmax_epochs = 1\nbatch_size = 4\nseed = 5\n\n[arch]\ntext = \"{ARCH_16}\"\n"),
    )
    .unwrap();

    let ckpt = dir.path().join("z.ckpt");
    let out = run(&[
        "pretrain",
        "--data",
        data.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--max-epochs",
        "0",
    ]);
    assert_code(&out, 0);
    assert!(
        stderr(&out).contains("max_epochs = 0"),
        "resolved config should reflect the flag:\n{}",
        stderr(&out)
    );
    let history = fs::read_to_string(ckpt.with_extension("history.csv")).unwrap();
    assert_eq!(history, "epoch,train_loss,val_loss,lr\n", "zero epochs leaves only the header");
}

#[test]
fn finetune_writes_a_loadable_checkpoint() {
    let fx = pretrained_fixture();
    let out_path = fx.checkpoint.with_file_name("tuned.ckpt");
    let out = run(&[
        "finetune",
        "--model",
        fx.checkpoint.to_str().unwrap(),
        "--target",
        fx.domain_b.to_str().unwrap(),
        "--source",
        fx.domain_a.to_str().unwrap(),
        "--shots",
        "2",
        "--out",
        out_path.to_str().unwrap(),
        "--max-epochs",
        "1",
    ]);
    assert_code(&out, 0);
    assert!(stdout(&out).contains("2-shot"), "{}", stdout(&out));
    let bytes = fs::read(&out_path).unwrap();
    assert_eq!(&bytes[..4], b"DDT1");
    assert_ne!(bytes, fs::read(&fx.checkpoint).unwrap(), "fine-tuning moves parameters");
}

#[test]
fn sweep_outputs_are_deterministic_and_job_independent() {
    let fx = pretrained_fixture();
    let csv_path = fx.checkpoint.with_file_name("sweep.csv");
    let sweep_args = |jobs: &str, path: &Path| {
        vec![
            "sweep".to_string(),
            "--model".into(),
            fx.checkpoint.to_str().unwrap().into(),
            "--target".into(),
            fx.domain_b.to_str().unwrap().into(),
            "--source".into(),
            fx.domain_a.to_str().unwrap().into(),
            "--shots".into(),
            "0,2".into(),
            "--runs".into(),
            "2".into(),
            "--jobs".into(),
            jobs.into(),
            "--max-epochs".into(),
            "1".into(),
            "--out".into(),
            path.to_str().unwrap().into(),
        ]
    };

    let out = ddt().args(sweep_args("1", &csv_path)).output().unwrap();
    assert_code(&out, 0);
    let csv = fs::read_to_string(&csv_path).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("mode,shots,seed,split,accuracy,mean_loss"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4, "2 shot counts x 2 replicates");
    assert!(rows[0].starts_with("ddt,0,0,test,"));
    assert!(rows[1].starts_with("ddt,0,1,test,"));
    let zero_metrics = |row: &str| row.splitn(5, ',').last().unwrap().to_string();
    assert_eq!(
        zero_metrics(rows[0]),
        zero_metrics(rows[1]),
        "the zero-shot evaluation runs once and is replicated"
    );

    let markdown = fs::read_to_string(csv_path.with_extension("md")).unwrap();
    assert!(markdown.starts_with("| shots | accuracy (mean ± std) | loss (mean ± std) |"));
    assert_eq!(stdout(&out), markdown, "summary table is echoed to stdout");

    let again = fx.checkpoint.with_file_name("sweep2.csv");
    let out = ddt().args(sweep_args("2", &again)).output().unwrap();
    assert_code(&out, 0);
    assert_eq!(csv, fs::read_to_string(&again).unwrap(), "job count never changes results");
}

#[test]
fn gradcheck_verdict_holds_across_seeds_and_catches_corruption() {
    for seed in ["0", "1", "2"] {
        let out = run(&["gradcheck", "--seed", seed]);
        assert_code(&out, 0);
        assert!(stdout(&out).contains("passed"), "{}", stdout(&out));
    }
    let out = run(&["gradcheck", "--corrupt"]);
    assert_code(&out, 1);
    assert!(stdout(&out).contains("FAILED"), "{}", stdout(&out));
}
