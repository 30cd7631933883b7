use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Arc;

use oed_core::corpus::load_dataset;
use oed_core::featurize::{
    concat_dim, parse_feature_expr, sentence_embedding, ContextualEncoderProvider, FeatureValue, Featurizer,
    HashedContextEncoder, ProviderRegistry,
};
use oed_core::models::{windows_for_len, RnnConfig};
use oed_core::trainer::{fit_trial, TrialConfig, TrialData, TrialEnv};
use oed_core::{Dataset, FeatureKind, FeatureSet, ModelConfig, Partition};
use proptest::prelude::*;

fn sample() -> Dataset {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/sample.jsonl");
    load_dataset(path, Partition::Trainval).unwrap()
}

fn registry() -> ProviderRegistry {
    ProviderRegistry::with_encoder(Arc::new(HashedContextEncoder::default()))
}

fn set(kinds: &[FeatureKind]) -> FeatureSet {
    FeatureSet::new(kinds.iter().copied()).unwrap()
}

#[test]
fn concat_widths() {
    use FeatureKind::*;
    assert_eq!(concat_dim(&set(&[B, S]), 0), 1536);
    assert_eq!(concat_dim(&parse_feature_expr("all").unwrap(), 0), 300 + 4 * 10 + 96 + 768 + 768);
    assert_eq!(concat_dim(&set(&[W, Po]), 7), 307);
}

#[test]
fn encoding_twice_gives_identical_bundles() {
    let data = sample();
    let kinds = parse_feature_expr("all").unwrap();
    let a = Featurizer::fit(&data, kinds.clone(), registry());
    let b = Featurizer::fit(&data, kinds, registry());
    for s in data.sentences.iter().take(5) {
        assert_eq!(a.featurize(s).unwrap().bundles(), b.featurize(s).unwrap().bundles());
    }
}

#[test]
fn sentence_feature_is_the_sum_of_token_vectors() {
    let data = sample();
    let f = Featurizer::fit(&data, set(&[FeatureKind::B, FeatureKind::S]), registry());
    let enc = HashedContextEncoder::default();
    for s in data.sentences.iter().take(5) {
        let raw = enc.encode(&s.texts()).unwrap().token;
        let mut expected = vec![0.0; raw.ncols()];
        for i in 0..raw.nrows() {
            for j in 0..raw.ncols() {
                expected[j] += raw[[i, j]];
            }
        }
        let via_lib = sentence_embedding(raw.view()).unwrap();
        for (x, y) in via_lib.iter().zip(&expected) {
            assert!((x - y).abs() < 1e-12);
        }
        for bundle in f.featurize(s).unwrap().bundles() {
            let Some(FeatureValue::Vector(v)) = bundle.get(FeatureKind::S) else {
                panic!("S missing");
            };
            for (x, y) in v.iter().zip(&expected) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn contextual_features_stay_frozen_through_training() {
    let data = sample();
    let test = Dataset::new(data.sentences[..4].to_vec(), Partition::Test);
    let mut trainval = data.clone();
    trainval.sentences.drain(..4);
    let kinds = set(&[FeatureKind::Sp, FeatureKind::B, FeatureKind::S]);
    assert!(kinds.iter().all(FeatureKind::frozen));

    let env = TrialEnv {
        providers: registry(),
        ..Default::default()
    };
    let before = Featurizer::fit(&trainval, kinds.clone(), registry());
    let mut cfg = TrialConfig::new("frozen", ModelConfig::Rnn(RnnConfig::new(kinds)), 1);
    cfg.max_epochs = 3;
    let data = TrialData::from_split(&trainval, test, &oed_core::corpus::SplitSpec::new(1, 0.2)).unwrap();
    let fitted = fit_trial(&cfg, &data, &env).unwrap();
    for s in &data.test.sentences {
        assert_eq!(before.featurize(s).unwrap().dense, fitted.featurizer.featurize(s).unwrap().dense);
    }
}

#[test]
fn length_forty_window_eleven_padding() {
    let w = windows_for_len(40, 11).unwrap();
    let pads: Vec<usize> = w.iter().map(|x| x.padding_count()).collect();
    assert_eq!(&pads[..6], &[5, 4, 3, 2, 1, 0]);
    assert_eq!(&pads[34..], &[0, 1, 2, 3, 4, 5]);
    assert_eq!(pads.iter().sum::<usize>(), 30);
}

fn subset_strategy() -> impl Strategy<Value = BTreeSet<FeatureKind>> {
    prop::sample::subsequence(FeatureKind::ALL.to_vec(), 0..=8).prop_map(|v| v.into_iter().collect())
}

fn braced(kinds: &BTreeSet<FeatureKind>) -> String {
    let names: Vec<_> = kinds.iter().map(|k| k.symbol()).collect();
    format!("{{{}}}", names.join(","))
}

proptest! {
    #[test]
    fn window_padding_matches_brute_force(len in 1usize..60, half in 0usize..15) {
        let window = 2 * half + 1;
        for inst in windows_for_len(len, window).unwrap() {
            let c = inst.center as i64;
            let mut pad = 0;
            for j in c - half as i64..=c + half as i64 {
                pad += (j < 0 || j >= len as i64) as usize;
            }
            prop_assert_eq!(inst.padding_count(), pad);
            prop_assert_eq!(inst.slots[half], Some(inst.center));
        }
    }

    #[test]
    fn expression_algebra(removed in subset_strategy(), kept in subset_strategy()) {
        let all: BTreeSet<FeatureKind> = FeatureKind::ALL.into_iter().collect();
        let minus = parse_feature_expr(&format!("all-{}", braced(&removed)));
        let rest: BTreeSet<FeatureKind> = all.difference(&removed).copied().collect();
        if rest.is_empty() {
            prop_assert!(minus.is_err());
        } else {
            let minus = minus.unwrap();
            prop_assert_eq!(minus.kinds(), &rest);
            prop_assert_eq!(parse_feature_expr(&minus.to_string()).unwrap(), minus);
        }
        if !kept.is_empty() {
            let k = parse_feature_expr(&braced(&kept)).unwrap();
            prop_assert_eq!(k.kinds(), &kept);
        }
        let disjoint: BTreeSet<FeatureKind> = kept.difference(&removed).copied().collect();
        if !disjoint.is_empty() && !removed.is_empty() {
            let union = FeatureSet::new(disjoint.iter().chain(&removed).copied()).unwrap();
            let a = FeatureSet::new(disjoint.iter().copied()).unwrap();
            let b = FeatureSet::new(removed.iter().copied()).unwrap();
            prop_assert_eq!(concat_dim(&union, 0), concat_dim(&a, 0) + concat_dim(&b, 0));
        }
    }
}
