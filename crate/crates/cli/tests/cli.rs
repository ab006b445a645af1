//! End-to-end checks of the command-line surface: exit codes, manifests,
//! determinism, and the anonymize I/O contract on a tiny trained model.

use std::path::Path;
use std::process::Command;

fn styleveil() -> Command {
    Command::new(env!("CARGO_BIN_EXE_styleveil"))
}

/// Tiny-model flags shared by the pipeline steps.
fn tiny_flags(cmd: &mut Command) -> &mut Command {
    for kv in [
        "vocab_size=260",
        "d_emb=32",
        "max_len=16",
        "d_model=32",
        "heads=2",
        "ffn=64",
        "blocks=4",
        "critic_channels=16",
        "critic_blocks=2",
        "fluency_hidden=16",
        "total_updates=4",
        "checkpoint_every=2",
        "batch_size=4",
        "pretrain_epochs=2",
        "pretrain_target_accuracy=0.999",
        "verify_epochs=1",
        "attacker_epochs=2",
        "lm_epochs=2",
        "embedding_epochs=2",
    ] {
        cmd.arg("--set").arg(kv);
    }
    cmd
}

#[test]
fn unknown_flag_exits_one() {
    let out = styleveil().arg("--definitely-not-a-flag").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_arguments_exit_one() {
    let out = styleveil().args(["evaluate", "--mode", "open"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn synth_corpus_is_deterministic_and_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let status = styleveil()
            .args(["synth-corpus", "--authors", "3", "--sentences", "20", "--seed", "7"])
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
        assert!(out.join("manifest.kv").is_file());
    }
    let doc = Path::new("author00/doc000.txt");
    let a = std::fs::read(out_a.join(doc)).unwrap();
    let b = std::fs::read(out_b.join(doc)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn open_mode_with_overlapping_authors_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let data = dir.path().join("data");
    assert!(styleveil()
        .args(["synth-corpus", "--authors", "3", "--sentences", "30", "--seed", "5"])
        .arg("--out")
        .arg(&corpus)
        .status()
        .unwrap()
        .success());
    // closed preparation shares authors across splits
    assert!(styleveil()
        .args(["prepare-data", "--seed", "5"])
        .arg("--corpus")
        .arg(&corpus)
        .arg("--out")
        .arg(&data)
        .status()
        .unwrap()
        .success());
    let out = styleveil()
        .args(["evaluate", "--mode", "open", "--seed", "5"])
        .arg("--model")
        .arg(dir.path().join("nonexistent-model"))
        .arg("--data")
        .arg(&data)
        .arg("--vocab")
        .arg(dir.path().join("nonexistent-vocab"))
        .arg("--report")
        .arg(dir.path().join("report.tsv"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("disjoint"), "stderr: {stderr}");
}

#[test]
fn full_tiny_pipeline_and_anonymize_io_contract() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let data = dir.path().join("data");
    let vocab = dir.path().join("vocab");
    let model = dir.path().join("model");

    assert!(styleveil()
        .args(["synth-corpus", "--authors", "3", "--sentences", "30", "--seed", "11"])
        .arg("--out")
        .arg(&corpus)
        .status()
        .unwrap()
        .success());
    assert!(tiny_flags(styleveil().args(["prepare-data", "--seed", "11"]))
        .arg("--corpus")
        .arg(&corpus)
        .arg("--out")
        .arg(&data)
        .status()
        .unwrap()
        .success());
    assert!(tiny_flags(styleveil().args(["build-vocab", "--seed", "11"]))
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&vocab)
        .status()
        .unwrap()
        .success());
    assert!(tiny_flags(styleveil().args(["train", "--seed", "11"]))
        .arg("--data")
        .arg(&data)
        .arg("--vocab")
        .arg(&vocab)
        .arg("--out")
        .arg(&model)
        .status()
        .unwrap()
        .success());

    // one anonymized sentence per input line
    let input = dir.path().join("in.txt");
    std::fs::write(&input, "well , the quiet market moves the river today .\nfolks , this garden truly keeps the simple signal .\n").unwrap();
    let output = dir.path().join("out.txt");
    assert!(tiny_flags(styleveil().args(["anonymize", "--seed", "11"]))
        .arg("--model")
        .arg(&model)
        .arg("--vocab")
        .arg(&vocab)
        .arg("--in")
        .arg(&input)
        .arg("--out")
        .arg(&output)
        .status()
        .unwrap()
        .success());
    let text = std::fs::read_to_string(&output).unwrap();
    assert_eq!(text.lines().count(), 2);

    // inputs were not mutated
    let back = std::fs::read_to_string(&input).unwrap();
    assert!(back.starts_with("well , the quiet market"));

    // ttur violation is rejected with exit code 1
    let out = tiny_flags(styleveil().args(["train", "--seed", "11"]))
        .args(["--set", "lr_gen=0.01", "--set", "lr_disc=0.001"])
        .arg("--data")
        .arg(&data)
        .arg("--vocab")
        .arg(&vocab)
        .arg("--out")
        .arg(dir.path().join("model2"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
