//! CLI behavior: exit codes, error categories, preset configs, and the
//! generate -> train -> rescore -> evaluate pipeline contract.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_convlm")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn convlm")
}

fn assert_code(out: &Output, code: i32, what: &str) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "{what}: expected exit {code}, got {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn preset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("presets").join(name)
}

#[test]
fn env_var_supplies_default_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("env.json");
    std::fs::write(&config, r#"{"corpus": {"synth": {"n_conversations": 24, "extra_round_prob": 0.0, "thanks_prob": 0.0, "greeting_templates": ["hello"], "intent_templates": ["hi i want {category} today"], "domains": []}}}"#).unwrap();
    // an invalid config (no domains) must be rejected, proving it was read
    let out = Command::new(bin())
        .env("CONVLM_CONFIG", &config)
        .args(["generate", "--out-dir", dir.path().join("g").to_str().unwrap()])
        .output()
        .expect("spawn");
    assert_code(&out, 1, "env config with zero domains");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("at least 2"), "{stderr}");
}

#[test]
fn usage_errors_exit_one() {
    let out = run(&["no-such-command"]);
    assert_code(&out, 1, "unknown subcommand");
    let out = run(&["train"]);
    assert_code(&out, 1, "missing required args");
}

#[test]
fn data_errors_exit_two_with_category() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let out = run(&[
        "evaluate",
        "--refs",
        missing.to_str().unwrap(),
        "--hyp",
        missing.to_str().unwrap(),
    ]);
    assert_code(&out, 2, "missing input file");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error[data]"), "{stderr}");
}

#[test]
fn generate_refuses_nonempty_dir_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("g");
    let a = run(&["generate", "--out-dir", out_dir.to_str().unwrap(), "--conversations", "20"]);
    assert_code(&a, 0, "first generate");
    let b = run(&["generate", "--out-dir", out_dir.to_str().unwrap(), "--conversations", "20"]);
    assert_code(&b, 1, "second generate without --force");
    let c = run(&[
        "generate", "--out-dir", out_dir.to_str().unwrap(), "--conversations", "20", "--force",
    ]);
    assert_code(&c, 0, "generate with --force");
}

#[test]
fn fusion_without_provider_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    assert_code(
        &run(&["generate", "--out-dir", corpus.to_str().unwrap(), "--conversations", "30"]),
        0,
        "generate",
    );
    let out = run(&[
        "train",
        "--corpus-dir",
        corpus.to_str().unwrap(),
        "--out-dir",
        dir.path().join("m").to_str().unwrap(),
        "--fusion",
        "--steps",
        "2",
    ]);
    assert_code(&out, 1, "fusion without embeddings");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--pseudo-embeddings"), "{stderr}");
}

#[test]
fn presets_load_and_row1_is_the_noncontextual_lstm() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    assert_code(
        &run(&["generate", "--out-dir", corpus.to_str().unwrap(), "--conversations", "40"]),
        0,
        "generate",
    );
    let model_dir = dir.path().join("row1");
    let out = run(&[
        "train",
        "--config",
        preset("row1_lstm_noncontextual.json").to_str().unwrap(),
        "--corpus-dir",
        corpus.to_str().unwrap(),
        "--out-dir",
        model_dir.to_str().unwrap(),
        "--steps",
        "3",
        "--seed",
        "1",
    ]);
    assert_code(&out, 0, "train row1");
    let echoed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(model_dir.join("effective_config.json")).unwrap())
            .unwrap();
    assert_eq!(echoed["model"]["arch"], "lstm_baseline");
    assert_eq!(echoed["model"]["contextual"], false);

    // row8 carries every flag
    let row8: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(preset("row8_txl_sd_da_fusion.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(row8["corpus"]["da_enabled"], true);
    assert_eq!(row8["model"]["slot_head"]["mode"], "on");
    assert_eq!(row8["model"]["fusion"]["mode"], "on");
}

#[test]
fn rescore_rejects_out_of_order_turns() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    assert_code(
        &run(&["generate", "--out-dir", corpus.to_str().unwrap(), "--conversations", "30"]),
        0,
        "generate",
    );
    let model_dir = dir.path().join("m");
    assert_code(
        &run(&[
            "train", "--corpus-dir", corpus.to_str().unwrap(),
            "--out-dir", model_dir.to_str().unwrap(), "--steps", "3",
        ]),
        0,
        "train",
    );
    // swap two records of one conversation
    let nbest = std::fs::read_to_string(corpus.join("test.nbest.jsonl")).unwrap();
    let mut lines: Vec<&str> = nbest.lines().collect();
    lines.swap(0, 1);
    let shuffled = dir.path().join("shuffled.jsonl");
    std::fs::write(&shuffled, lines.join("\n")).unwrap();
    let out = run(&[
        "rescore",
        "--checkpoint",
        model_dir.join("best.ckpt").to_str().unwrap(),
        "--nbest",
        shuffled.to_str().unwrap(),
        "--out",
        dir.path().join("r.jsonl").to_str().unwrap(),
    ]);
    assert_code(&out, 2, "out-of-order turns");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("-t0"), "error names the utterance: {stderr}");
}

#[test]
fn evaluate_reports_id_mismatches() {
    let dir = tempfile::tempdir().unwrap();
    let refs = dir.path().join("refs.jsonl");
    let hyp = dir.path().join("hyp.jsonl");
    std::fs::write(
        &refs,
        "{\"utterance_id\":\"u1\",\"text\":\"a b\"}\n{\"utterance_id\":\"u2\",\"text\":\"c\"}\n",
    )
    .unwrap();
    std::fs::write(&hyp, "{\"utterance_id\":\"u1\",\"text\":\"a b\"}\n").unwrap();
    let out = run(&["evaluate", "--refs", refs.to_str().unwrap(), "--hyp", hyp.to_str().unwrap()]);
    assert_code(&out, 2, "id mismatch");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("u2"), "{stderr}");
}

#[test]
fn evaluate_compare_of_identical_systems_is_degenerate() {
    let dir = tempfile::tempdir().unwrap();
    let refs = dir.path().join("refs.jsonl");
    let hyp = dir.path().join("hyp.jsonl");
    std::fs::write(
        &refs,
        "{\"utterance_id\":\"u1\",\"text\":\"add tide pods\"}\n{\"utterance_id\":\"u2\",\"text\":\"track my order\"}\n",
    )
    .unwrap();
    std::fs::write(
        &hyp,
        "{\"utterance_id\":\"u1\",\"text\":\"add tide pause\"}\n{\"utterance_id\":\"u2\",\"text\":\"track my order\"}\n",
    )
    .unwrap();
    let out = run(&[
        "evaluate",
        "--refs", refs.to_str().unwrap(),
        "--hyp", hyp.to_str().unwrap(),
        "--hyp2", hyp.to_str().unwrap(),
        "--compare",
    ]);
    assert_code(&out, 0, "self comparison");
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let cmp = &report["comparison"];
    assert_eq!(cmp["cwer_reduction"], 0.0);
    assert_eq!(cmp["mpsswe_cwer"]["p_value"], 1.0);
    assert_eq!(cmp["mpsswe_cwer"]["degenerate"], true);
}

#[test]
fn end_to_end_pipeline_emits_consistent_top1_wer() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    assert_code(
        &run(&["generate", "--out-dir", corpus.to_str().unwrap(), "--conversations", "60", "--seed", "2"]),
        0,
        "generate",
    );
    let model_dir = dir.path().join("m");
    assert_code(
        &run(&[
            "train", "--corpus-dir", corpus.to_str().unwrap(),
            "--out-dir", model_dir.to_str().unwrap(), "--steps", "60", "--seed", "2",
        ]),
        0,
        "train",
    );
    let rescored = dir.path().join("rescored.jsonl");
    assert_code(
        &run(&[
            "rescore",
            "--checkpoint", model_dir.join("best.ckpt").to_str().unwrap(),
            "--nbest", corpus.join("test.nbest.jsonl").to_str().unwrap(),
            "--out", rescored.to_str().unwrap(),
        ]),
        0,
        "rescore",
    );
    // lm_scale 0 must reproduce first-pass ranks
    let baseline = dir.path().join("baseline.jsonl");
    assert_code(
        &run(&[
            "rescore",
            "--checkpoint", model_dir.join("best.ckpt").to_str().unwrap(),
            "--nbest", corpus.join("test.nbest.jsonl").to_str().unwrap(),
            "--out", baseline.to_str().unwrap(),
            "--lm-scale", "0",
        ]),
        0,
        "first-pass rescore",
    );
    for line in std::fs::read_to_string(&baseline).unwrap().lines() {
        let rec: serde_json::Value = serde_json::from_str(line).unwrap();
        for (i, h) in rec["hypotheses"].as_array().unwrap().iter().enumerate() {
            assert_eq!(h["new_rank"], i as u64, "lm_scale 0 changed ranks");
        }
    }
    let out = run(&[
        "evaluate",
        "--refs", corpus.join("test.refs.jsonl").to_str().unwrap(),
        "--hyp", rescored.to_str().unwrap(),
    ]);
    assert_code(&out, 0, "evaluate");
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["wer"].as_f64().unwrap() >= 0.0);
    assert!(report["stopword_list_hash"].is_string());
}

#[test]
fn evaluate_perplexity_mode_works_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    assert_code(
        &run(&["generate", "--out-dir", corpus.to_str().unwrap(), "--conversations", "40"]),
        0,
        "generate",
    );
    let model_dir = dir.path().join("m");
    assert_code(
        &run(&[
            "train", "--corpus-dir", corpus.to_str().unwrap(),
            "--out-dir", model_dir.to_str().unwrap(), "--steps", "30",
        ]),
        0,
        "train",
    );
    let out = run(&[
        "evaluate",
        "--checkpoint", model_dir.join("best.ckpt").to_str().unwrap(),
        "--corpus", corpus.join("test.jsonl").to_str().unwrap(),
    ]);
    assert_code(&out, 0, "ppl mode");
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let carry = report["ppl"].as_f64().unwrap();
    assert!(carry > 1.0);

    let out = run(&[
        "evaluate",
        "--checkpoint", model_dir.join("best.ckpt").to_str().unwrap(),
        "--corpus", corpus.join("test.jsonl").to_str().unwrap(),
        "--context-policy", "reset",
    ]);
    assert_code(&out, 0, "ppl reset mode");
    let reset: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(reset["ppl"].as_f64().unwrap() > 1.0);
}
