use std::path::PathBuf;

use oed_core::trainer::{load_results, resume_experiment, run_experiment, ExperimentConfig, TrainerError};

const CONFIG: &str = r#"
name = "edit-check"
seeds = "1..2"

[data]
manifest = "fixtures/manifest.txt"

[[variants]]
id = "svm-linear"
model = "svm"
kernel = "linear"
"#;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

#[test]
fn edited_config_is_refused_on_resume() {
    let out = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_toml(CONFIG, &root()).unwrap();
    let first = run_experiment(&cfg, out.path()).unwrap();
    assert_eq!(first.executed, 2);
    assert_eq!(load_results(out.path()).unwrap().len(), 2);

    // Unchanged config resumes with nothing left to run.
    let again = resume_experiment(out.path(), Some(&cfg)).unwrap();
    assert_eq!(again.executed, 0);

    let edited = ExperimentConfig::from_toml(&CONFIG.replace("linear\"", "rbf\""), &root()).unwrap();
    assert_ne!(edited.hash(), cfg.hash());
    for err in [
        resume_experiment(out.path(), Some(&edited)).unwrap_err(),
        run_experiment(&edited, out.path()).unwrap_err(),
    ] {
        match err {
            TrainerError::HashMismatch { expected, found } => {
                assert_eq!(expected, cfg.hash());
                assert_eq!(found, edited.hash());
            }
            other => panic!("expected a hash mismatch, got {other}"),
        }
    }

    // Moving the checkout does not change the hash.
    let moved = ExperimentConfig::from_toml(CONFIG, &root().join("elsewhere")).unwrap();
    assert_eq!(moved.hash(), cfg.hash());
}
