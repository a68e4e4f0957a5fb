//! End-to-end checks of the `duel` binary (exit codes, file outputs) and of
//! the experiment pipeline's resume/stage-isolation contracts.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use duel_cli::config::ExperimentConfig;
use duel_cli::experiment::run_experiment;

fn duel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_duel"))
        .args(args)
        .output()
        .expect("binary launches")
}

fn assert_exit(out: &Output, code: i32, context: &str) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "{context}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
}

fn generate_corpus(path: &Path) {
    let out = duel(&[
        "generate",
        "mini-scan",
        "--out",
        path.to_str().unwrap(),
        "--max-examples",
        "40",
        "--max-output-tokens",
        "8",
        "--seed",
        "5",
    ]);
    assert_exit(&out, 0, "generate mini-scan");
}

fn experiment_toml(data: &Path, outdir: &Path, method: &str) -> String {
    format!(
        r#"
[model]
embed_dim = 16
num_heads = 2
encoder_layers = 1
decoder_layers = 1
ffn_dim = 32
max_src_len = 16
max_tgt_len = 12
dropout = 0.0

[experiment]
method = "{method}"
outdir = "{outdir}"
seeds = [1, 2]

[training]
learning_rate = 1e-3
batch_size = 4
label_smoothing = 0.0
eval_every = 10

[duel]
t_outer = 1
t_inner = 20
t_min = 1

[prefinetune]
merged_steps = 20

[finetune]
steps = 30

[[source]]
name = "scan"
dataset = "{data}"
split = "standard"
fraction = 0.5
split_seed = 3

[target]
name = "scan"
dataset = "{data}"
split = "length"
fraction = 0.6
"#,
        method = method,
        outdir = outdir.display(),
        data = data.display(),
    )
}

#[test]
fn verbs_run_end_to_end_with_exit_code_zero() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("scan.tsv");
    generate_corpus(&data);
    assert!(data.is_file());

    let manifest = dir.path().join("split.tsv");
    let test_side = dir.path().join("scan-test.tsv");
    let out = duel(&[
        "split",
        "--dataset",
        data.to_str().unwrap(),
        "--kind",
        "mcd",
        "--fraction",
        "0.5",
        "--seed",
        "7",
        "--iterations",
        "300",
        "--restarts",
        "2",
        "--out",
        manifest.to_str().unwrap(),
        "--test-out",
        test_side.to_str().unwrap(),
    ]);
    assert_exit(&out, 0, "split mcd");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("divergence"), "split output: {stdout}");
    assert!(fs::read_to_string(&manifest).unwrap().contains("kind\tmcd"));

    let outdir = dir.path().join("run");
    let config = dir.path().join("exp.toml");
    fs::write(&config, experiment_toml(&data, &outdir, "merged")).unwrap();
    let out = duel(&["train", "--config", config.to_str().unwrap()]);
    assert_exit(&out, 0, "train");
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("merged"), "table: {table}");
    for file in [
        "report.tsv",
        "config.toml",
        "vocab.tsv",
        "model.toml",
        "target-test.tsv",
        "seed-1/prefinetune.ckpt",
        "seed-1/prefinetune-events.tsv",
        "seed-1/finetune.ckpt",
        "seed-1/predictions.tsv",
        "seed-1/eval.tsv",
        "seed-2/finetune.ckpt",
    ] {
        assert!(outdir.join(file).is_file(), "missing {file}");
    }

    // Score the persisted checkpoint on the split's test side, exercising
    // the task-tag flag against the untagged TSV.
    let out = duel(&[
        "eval",
        "--model",
        outdir.join("model.toml").to_str().unwrap(),
        "--vocab",
        outdir.join("vocab.tsv").to_str().unwrap(),
        "--checkpoint",
        outdir.join("seed-1/finetune.ckpt").to_str().unwrap(),
        "--dataset",
        test_side.to_str().unwrap(),
        "--tag",
        "scan",
    ]);
    assert_exit(&out, 0, "eval");
    assert!(String::from_utf8_lossy(&out.stdout).contains("overall"));

    let out = duel(&["report", outdir.join("report.tsv").to_str().unwrap()]);
    assert_exit(&out, 0, "report");
    assert!(String::from_utf8_lossy(&out.stdout).contains("merged"));
}

#[test]
fn bad_flags_and_bad_configs_exit_one() {
    let out = duel(&["frobnicate"]);
    assert_exit(&out, 1, "unknown verb");

    let out = duel(&["train", "--config", "/nonexistent/exp.toml"]);
    assert_exit(&out, 1, "missing config");

    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(&config, "[experiment]\nmethod = \"none\"\n[typo_section]\nx = 1\n").unwrap();
    let out = duel(&["train", "--config", config.to_str().unwrap()]);
    assert_exit(&out, 1, "unknown section");

    let data = dir.path().join("scan.tsv");
    generate_corpus(&data);
    let out = duel(&[
        "split",
        "--dataset",
        data.to_str().unwrap(),
        "--kind",
        "zigzag",
        "--out",
        dir.path().join("m.tsv").to_str().unwrap(),
    ]);
    assert_exit(&out, 1, "unknown split kind");
}

#[test]
fn runtime_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("scan.tsv");
    generate_corpus(&data);
    let outdir = dir.path().join("run");
    let config = dir.path().join("exp.toml");
    fs::write(&config, experiment_toml(&data, &outdir, "none")).unwrap();
    // A colossal learning rate sends the loss non-finite within a few
    // steps; every seed fails and the run reports a runtime failure.
    let out = duel(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--set",
        "training.learning_rate=1e8",
    ]);
    assert_exit(&out, 2, "diverging run");
    assert!(String::from_utf8_lossy(&out.stderr).contains("runtime failure"));
}

#[test]
fn checkpoints_resume_and_fine_tuning_is_isolated_from_pre_finetuning() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("scan.tsv");
    generate_corpus(&data);
    let outdir = dir.path().join("run");
    let text = experiment_toml(&data, &outdir, "duel");
    let cfg = ExperimentConfig::parse(&text).unwrap();

    let first = run_experiment(&cfg, &text).unwrap();
    let accuracy = |r: &duel_cli::experiment::RunReport| {
        r.outcomes
            .iter()
            .map(|o| o.eval.as_ref().unwrap().accuracy().to_bits())
            .collect::<Vec<_>>()
    };
    let baseline = accuracy(&first);
    assert!(first.outcomes.iter().all(|o| o.stages.iter().all(|s| !s.resumed)));

    // Re-running with everything persisted skips both stages.
    let resumed = run_experiment(&cfg, &text).unwrap();
    assert!(resumed
        .outcomes
        .iter()
        .all(|o| o.stages.iter().all(|s| s.resumed)));
    assert_eq!(accuracy(&resumed), baseline);

    // Deleting only the fine-tune outputs re-runs fine-tuning from the
    // persisted pre-finetune checkpoint and lands on identical metrics.
    for seed in [1, 2] {
        fs::remove_file(outdir.join(format!("seed-{seed}/finetune.ckpt"))).unwrap();
    }
    let replay = run_experiment(&cfg, &text).unwrap();
    for outcome in &replay.outcomes {
        assert!(outcome.stages[0].resumed, "pre-finetune should resume");
        assert!(!outcome.stages[1].resumed, "fine-tune should re-run");
    }
    assert_eq!(accuracy(&replay), baseline);
}
