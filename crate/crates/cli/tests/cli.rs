use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use oed_core::corpus::{compute_stats, load_dataset, Partition, SplitSpec};
use oed_core::featurize::{parse_feature_expr, EncoderSpec, ProviderRegistry};
use oed_core::models::{ModelConfig, RnnConfig};
use oed_core::trainer::{load_results, run_trial, TrialConfig, TrialData, TrialEnv, TrialResult};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixture(name: &str) -> PathBuf {
    root().join("fixtures").join(name)
}

fn oed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oed"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("OED_CACHE_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn stats_matches_library() {
    let path = fixture("sample.jsonl");
    let out = oed(&["stats", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let expected = compute_stats(&load_dataset(&path, Partition::Trainval).unwrap());
    assert_eq!(stdout(&out), expected.to_string());

    let out = oed(&["stats", "--json", path.to_str().unwrap()]);
    let parsed: oed_core::corpus::DatasetStats = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(parsed, expected);
}

#[test]
fn exit_codes() {
    assert_eq!(oed(&["stats", "/no/such/file.jsonl"]).status.code(), Some(2));
    assert_eq!(oed(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(oed(&["stats", "--bogus-flag", "x"]).status.code(), Some(2));
    let bad = oed(&["featurize", fixture("sample.jsonl").to_str().unwrap(), "--features", "all-{Q}"]);
    assert_eq!(bad.status.code(), Some(2));
    let parser_msg = parse_feature_expr("all-{Q}").unwrap_err().to_string();
    assert!(stderr(&bad).contains(&parser_msg), "{}", stderr(&bad));
    assert_eq!(oed(&["--help"]).status.code(), Some(0));
    assert_eq!(oed(&["report", "/no/such/dir"]).status.code(), Some(2));
}

#[test]
fn featurize_fills_cache_from_env() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_oed"))
        .args(["featurize", fixture("sample.jsonl").to_str().unwrap(), "--features", "{B,S}"])
        .env("OED_CACHE_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("40 sentences"));
    let provider_dirs: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(provider_dirs.len(), 1);
    let blobs = std::fs::read_dir(provider_dirs[0].as_ref().unwrap().path()).unwrap().count();
    assert_eq!(blobs, 40);
}

#[test]
fn train_equals_direct_trial() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture("manifest.txt");
    let out = oed(&[
        "train",
        "--data",
        manifest.to_str().unwrap(),
        "--features",
        "all-{B}",
        "--arch",
        "15",
        "--seed",
        "1",
        "--patience",
        "2",
        "--max-epochs",
        "4",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let written = load_results(dir.path()).unwrap();
    assert_eq!(written.len(), 1);

    let (trainval, test) = oed_core::corpus::load_manifest(&manifest).unwrap().load().unwrap();
    let data = TrialData::from_split(&trainval, test, &SplitSpec::new(1, 0.2)).unwrap();
    let mut cfg = TrialConfig::new(
        "rnn",
        ModelConfig::Rnn(RnnConfig::new(parse_feature_expr("all-{B}").unwrap()).with_hidden(vec![15])),
        1,
    );
    cfg.patience = 2;
    cfg.max_epochs = 4;
    let env = TrialEnv {
        providers: ProviderRegistry::with_encoder(EncoderSpec::default().build()),
        ..TrialEnv::default()
    };
    let direct: TrialResult = run_trial(&cfg, &data, &env).unwrap();
    assert_eq!(written[0], direct);
}

#[test]
fn experiment_report_has_one_row_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    let config = root().join("configs/ablation.toml");
    let out_dir = dir.path().join("run");
    let run = oed(&[
        "experiment",
        "run",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--seeds",
        "1..2",
        "--max-epochs",
        "2",
    ]);
    assert!(run.status.success(), "{}", stderr(&run));
    let variants = std::fs::read_to_string(&config).unwrap().matches("[[variants]]").count();
    assert_eq!(variants, 7);
    assert_eq!(load_results(&out_dir).unwrap().len(), variants * 2);

    let report = oed(&["report", out_dir.to_str().unwrap(), "--split", "test", "--against-best"]);
    assert!(report.status.success(), "{}", stderr(&report));
    let csv = stdout(&report);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "variant,split,mean_sens,mean_spec,mean_f1,f1_ci_halfwidth,p_value");
    assert_eq!(lines.len() - 1, variants);
    assert_eq!(csv.matches(",---").count(), 1);
    assert!(out_dir.join("report.csv").exists());

    let resumed = oed(&["experiment", "resume", out_dir.to_str().unwrap()]);
    assert!(resumed.status.success(), "{}", stderr(&resumed));
    assert!(stdout(&resumed).starts_with("0 trials executed"));

    // Changing the configuration under an existing run is a usage error.
    let clash = oed(&[
        "experiment",
        "run",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--seeds",
        "1..2",
        "--max-epochs",
        "3",
    ]);
    assert_eq!(clash.status.code(), Some(2));
}

#[test]
fn svm_verb_writes_one_result_per_kernel() {
    let dir = tempfile::tempdir().unwrap();
    let out = oed(&[
        "svm",
        "--data",
        fixture("manifest.txt").to_str().unwrap(),
        "--kernel",
        "rbf",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let results = load_results(dir.path()).unwrap();
    assert_eq!(results.len(), 1);
    assert_eq!(results[0].variant, "svm-rbf");
    assert_eq!(results[0].best_epoch, 0);
    assert_eq!(oed(&["svm", "--data", fixture("manifest.txt").to_str().unwrap(), "--kernel", "cubic"]).status.code(), Some(2));
}
