use std::collections::BTreeMap;
use std::path::PathBuf;

use oed_core::corpus::{load_dataset, SplitSpec};
use oed_core::featurize::{parse_feature_expr, Featurizer, ProviderRegistry};
use oed_core::models::{predict_sentence, CnnConfig, Kernel, SvmConfig, SvmModel};
use oed_core::trainer::{evaluate, fit_trial, TrialConfig, TrialData, TrialEnv};
use oed_core::{Dataset, ModelConfig, Partition, TokenClassifier};

fn fixture(name: &str, partition: Partition) -> Dataset {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name);
    load_dataset(path, partition).unwrap()
}

#[test]
fn every_svm_kernel_fits_the_fixture() {
    let train = fixture("sample.jsonl", Partition::Trainval);
    let test = fixture("sample-test.jsonl", Partition::Test);
    let f = Featurizer::fit(&train, parse_feature_expr("{W}").unwrap(), ProviderRegistry::default());
    let train_x = f.featurize_all(&train.sentences).unwrap();
    let test_x = f.featurize_all(&test.sentences).unwrap();

    for kernel in Kernel::ALL {
        let mut svm = SvmModel::build(SvmConfig::new(kernel), &f.vocabs, None).unwrap();
        assert!(!svm.is_fitted());
        svm.fit(&train_x).unwrap();

        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        let mut by_word: BTreeMap<&str, f64> = BTreeMap::new();
        for (s, x) in test.sentences.iter().zip(&test_x) {
            let probs = svm.predict_proba(x).unwrap();
            assert_eq!(probs.len(), s.len());
            for (t, &p) in s.tokens.iter().zip(&probs) {
                assert!(p == 0.0 || p == 1.0, "{kernel:?} gave {p}");
                // Input is the word alone, so a word always gets one answer.
                assert_eq!(*by_word.entry(&t.text).or_insert(p), p, "{kernel:?} {}", t.text);
                match (p == 1.0, t.label.is_trigger()) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, false) => tn += 1,
                    (false, true) => fn_ += 1,
                }
            }
        }
        let c = evaluate(&svm, &test_x).unwrap();
        assert_eq!((c.tp, c.fp, c.tn, c.fn_), (tp, fp, tn, fn_), "{kernel:?}");
    }
}

#[test]
fn predict_sentence_thresholds_probabilities() {
    let trainval = fixture("sample.jsonl", Partition::Trainval);
    let test = fixture("sample-test.jsonl", Partition::Test);
    let data = TrialData::from_split(&trainval, test, &SplitSpec::new(1, 0.2)).unwrap();
    let mut cfg = TrialConfig::new("cnn", ModelConfig::Cnn(CnnConfig::new(5)), 1);
    cfg.max_epochs = 4;
    let fitted = fit_trial(&cfg, &data, &TrialEnv::default()).unwrap();

    for s in &data.test.sentences {
        let x = fitted.featurizer.featurize(s).unwrap();
        let probs = fitted.model.predict_proba(&x).unwrap();
        for threshold in [0.0, 0.3, 0.5, 0.7, 1.0] {
            let mut expected = Vec::new();
            for &p in &probs {
                expected.push(if p >= threshold { 1u8 } else { 0 });
            }
            assert_eq!(predict_sentence(&fitted.model, &x, threshold).unwrap(), expected);
        }
    }
}
