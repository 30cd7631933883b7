use std::sync::Arc;

use oed_core::annotate::{AnnotationSession, LabelSubmission, NextTask, RetrainMode, SessionConfig, Suggester, TrialRetrainer};
use oed_core::corpus::{compute_stats, parse_dataset, Partition};
use oed_core::featurize::{parse_feature_expr, HashedContextEncoder, ProviderRegistry};
use oed_core::models::RnnConfig;
use oed_core::synth::MarkerCorpus;
use oed_core::trainer::TrialEnv;

fn rnn_retrainer() -> TrialRetrainer {
    let env = TrialEnv {
        providers: ProviderRegistry::with_encoder(Arc::new(HashedContextEncoder::default())),
        ..Default::default()
    };
    TrialRetrainer::rnn(RnnConfig::new(parse_feature_expr("{B,S}").unwrap()), env)
}

#[test]
fn planted_rule_is_recovered_from_the_pool() {
    let corpus = MarkerCorpus::default();
    let pool = corpus.dataset(250, 11, "pool", Partition::Trainval);
    let held_out = corpus.dataset(60, 12, "queue", Partition::Trainval);
    let suggester = rnn_retrainer().fit(&pool, 1).unwrap();

    // Oracle: triggers are exactly the ambiguous word with a distant marker.
    let (mut planted, mut found) = (0, 0);
    for s in &held_out.sentences {
        let probs = suggester.suggest(s).unwrap();
        assert_eq!(probs.len(), s.len());
        for (t, p) in s.tokens.iter().zip(&probs) {
            if t.label.is_trigger() {
                planted += 1;
                found += (*p >= 0.5) as usize;
            }
        }
    }
    assert!(planted > 10);
    let recall = found as f64 / planted as f64;
    assert!(recall >= 0.9, "recall {recall:.3} ({found}/{planted})");
}

#[test]
fn retrain_is_deterministic() {
    let pool = MarkerCorpus::default().dataset(20, 5, "p", Partition::Trainval);
    let mut r = rnn_retrainer();
    r.max_epochs = 5;
    let a = serde_json::to_vec(&r.fit(&pool, 3).unwrap().model).unwrap();
    let b = serde_json::to_vec(&r.fit(&pool, 3).unwrap().model).unwrap();
    assert_eq!(a, b);
}

#[test]
fn export_recounts_submitted_triggers() {
    let queue = MarkerCorpus::default().dataset(7, 8, "q", Partition::Trainval);
    let cfg = SessionConfig {
        retrain_mode: RetrainMode::Inline,
        retrain_every: 3,
        ..SessionConfig::default()
    };
    let mut s = AnnotationSession::new("e", queue.sentences.clone(), cfg, Arc::new(oed_core::annotate::StubRetrainer::default())).unwrap();
    let mut submitted = 0usize;
    let mut i = 0usize;
    while let NextTask::Task(t) = s.next_task().unwrap() {
        let labels: Vec<u8> = (0..t.tokens.len()).map(|j| ((i + j) % 5 == 0) as u8).collect();
        submitted += labels.iter().map(|&b| b as usize).sum::<usize>();
        s.submit(&LabelSubmission {
            token: t.token,
            labels,
            reviewer: "r".into(),
        })
        .unwrap();
        i += 1;
    }
    let bytes = s.export_jsonl().unwrap();
    let back = parse_dataset(bytes.as_slice(), Partition::Trainval).unwrap();
    assert_eq!(back.len(), 7);
    assert_eq!(compute_stats(&back).event_count, submitted);
    let ids: Vec<_> = back.sentences.iter().map(|x| x.id.clone()).collect();
    let want: Vec<_> = queue.sentences.iter().map(|x| x.id.clone()).collect();
    assert_eq!(ids, want);
}
