//! Active-learning annotation sessions: sentences are served one at a
//! time, optionally with model suggestions, committed once enough reviewers
//! agree, and the suggestion model is retrained on the whole labeled pool
//! after every `retrain_every` commits.

mod retrain;

pub use retrain::{ModelSuggester, StubRetrainer, TrialRetrainer};

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::thread;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{write_dataset, Dataset, Label, Partition, Sentence};

pub const DEFAULT_RETRAIN_EVERY: usize = 50;

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("unknown task token")]
    UnknownToken,
    #[error("task token was already used or has expired")]
    TokenSpent,
    #[error("expected {expected} labels, got {found}")]
    LabelLength { expected: usize, found: usize },
    #[error("labels must be 0 or 1, got {0}")]
    InvalidLabel(u8),
    #[error("reviewer {0:?} already submitted labels for this sentence")]
    DuplicateReviewer(String),
    #[error("reviewer id must not be empty")]
    EmptyReviewer,
    #[error("no committed sentences to export")]
    NothingToExport,
    #[error("invalid session configuration: {0}")]
    Config(String),
    #[error("suggestion failed: {0}")]
    Suggest(String),
    #[error("retrain failed: {0}")]
    Retrain(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl AnnotateError {
    /// Stable machine-readable code for wire responses.
    pub fn code(&self) -> &'static str {
        match self {
            AnnotateError::UnknownToken => "unknown_token",
            AnnotateError::TokenSpent => "token_replay",
            AnnotateError::LabelLength { .. } => "label_length",
            AnnotateError::InvalidLabel(_) => "invalid_label",
            AnnotateError::DuplicateReviewer(_) => "duplicate_reviewer",
            AnnotateError::EmptyReviewer => "empty_reviewer",
            AnnotateError::NothingToExport => "nothing_to_export",
            AnnotateError::Config(_) => "invalid_config",
            AnnotateError::Suggest(_) => "suggest_failed",
            AnnotateError::Retrain(_) => "retrain_failed",
            AnnotateError::Io(_) => "io",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Assisted,
    Blind,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Assisted => "assisted",
            Mode::Blind => "blind",
        })
    }
}

impl FromStr for Mode {
    type Err = AnnotateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "assisted" => Ok(Mode::Assisted),
            "blind" => Ok(Mode::Blind),
            other => Err(AnnotateError::Config(format!("unknown mode {other:?} (expected assisted or blind)"))),
        }
    }
}

/// Whether retraining blocks the submission that triggered it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrainMode {
    #[default]
    Background,
    Inline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub mode: Mode,
    pub reviewers_required: usize,
    pub retrain_every: usize,
    /// Shuffles the queue with this seed; dataset order otherwise.
    pub shuffle: Option<u64>,
    /// Seed handed to every retrain.
    pub seed: u64,
    pub retrain_mode: RetrainMode,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            mode: Mode::Assisted,
            reviewers_required: 1,
            retrain_every: DEFAULT_RETRAIN_EVERY,
            shuffle: None,
            seed: 1,
            retrain_mode: RetrainMode::Background,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), AnnotateError> {
        if self.reviewers_required == 0 {
            return Err(AnnotateError::Config("reviewers_required must be at least 1".into()));
        }
        if self.retrain_every == 0 {
            return Err(AnnotateError::Config("retrain_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-token trigger probabilities for a sentence.
pub trait Suggester: Send + Sync {
    fn suggest(&self, s: &Sentence) -> Result<Vec<f64>, AnnotateError>;
}

/// Produces a suggester from the labeled pool.
pub trait Retrainer: Send + Sync {
    fn retrain(&self, pool: &Dataset, seed: u64) -> Result<Arc<dyn Suggester>, AnnotateError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceTask {
    pub token: String,
    pub sentence_id: String,
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suggestions: Option<Vec<f64>>,
    /// Set when an earlier round of reviews disagreed.
    pub re_review: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSubmission {
    pub token: String,
    pub labels: Vec<u8>,
    pub reviewer: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NextTask {
    Task(SentenceTask),
    Complete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubmitOutcome {
    /// Recorded; more identical submissions are needed.
    AwaitingConsensus,
    Committed,
    /// Committed, and the commit scheduled a retrain.
    RetrainStarted,
    /// Disagreed with an earlier submission; the sentence is queued again.
    Requeued,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub id: String,
    pub mode: Mode,
    pub reviewers_required: usize,
    pub retrain_every: usize,
    pub queue_remaining: usize,
    pub in_review: usize,
    pub labeled: usize,
    pub since_last_retrain: usize,
    pub until_next_retrain: usize,
    pub retrains_started: usize,
    pub retrains_completed: usize,
    pub retrains_failed: usize,
    pub retrain_in_progress: bool,
    pub has_model: bool,
    pub complete: bool,
}

#[derive(Debug, Clone)]
struct QueueItem {
    sentence: Sentence,
    re_review: bool,
}

struct Review {
    id: u64,
    item: QueueItem,
    issued: usize,
    tokens: Vec<String>,
    submissions: Vec<(String, Vec<u8>)>,
}

struct Snapshot {
    generation: u64,
    suggester: Arc<dyn Suggester>,
}

#[derive(Debug, Default, Clone, Copy)]
struct RetrainCounters {
    started: usize,
    completed: usize,
    failed: usize,
    running: usize,
}

#[derive(Default)]
struct Shared {
    snapshot: RwLock<Option<Snapshot>>,
    counters: Mutex<RetrainCounters>,
    idle: Condvar,
}

impl Shared {
    fn current(&self) -> Option<Arc<dyn Suggester>> {
        self.snapshot
            .read()
            .expect("snapshot lock")
            .as_ref()
            .map(|s| Arc::clone(&s.suggester))
    }

    /// Installs `suggester` unless a newer generation is already serving.
    fn publish(&self, generation: u64, suggester: Arc<dyn Suggester>) {
        let mut slot = self.snapshot.write().expect("snapshot lock");
        if slot.as_ref().is_none_or(|s| s.generation < generation) {
            *slot = Some(Snapshot { generation, suggester });
        }
    }

    fn run(&self, retrainer: &dyn Retrainer, pool: &Dataset, seed: u64, generation: u64) {
        let outcome = retrainer.retrain(pool, seed);
        let ok = match outcome {
            Ok(s) => {
                self.publish(generation, s);
                true
            }
            Err(e) => {
                log::error!("retrain {generation} on {} sentences failed, keeping previous snapshot: {e}", pool.len());
                false
            }
        };
        let mut c = self.counters.lock().expect("counter lock");
        c.running -= 1;
        if ok {
            c.completed += 1;
        } else {
            c.failed += 1;
        }
        self.idle.notify_all();
    }
}

/// One annotation session. Mutating calls must be serialized by the caller;
/// the suggestion snapshot is shared with background retrains.
pub struct AnnotationSession {
    id: String,
    config: SessionConfig,
    queue: VecDeque<QueueItem>,
    reviews: Vec<Review>,
    next_review: u64,
    pool: Vec<Sentence>,
    since_last_retrain: usize,
    open_tokens: HashMap<String, u64>,
    spent_tokens: HashSet<String>,
    token_rng: ChaCha8Rng,
    retrainer: Arc<dyn Retrainer>,
    shared: Arc<Shared>,
    generation: u64,
}

impl fmt::Debug for AnnotationSession {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AnnotationSession")
            .field("id", &self.id)
            .field("config", &self.config)
            .field("queue", &self.queue.len())
            .field("pool", &self.pool.len())
            .finish_non_exhaustive()
    }
}

impl AnnotationSession {
    pub fn new(
        id: impl Into<String>,
        sentences: Vec<Sentence>,
        config: SessionConfig,
        retrainer: Arc<dyn Retrainer>,
    ) -> Result<Self, AnnotateError> {
        config.validate()?;
        let mut sentences = sentences;
        if let Some(seed) = config.shuffle {
            sentences.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        let queue = sentences
            .into_iter()
            .map(|sentence| QueueItem {
                sentence,
                re_review: false,
            })
            .collect();
        Ok(AnnotationSession {
            id: id.into(),
            config,
            queue,
            reviews: Vec::new(),
            next_review: 0,
            pool: Vec::new(),
            since_last_retrain: 0,
            open_tokens: HashMap::new(),
            spent_tokens: HashSet::new(),
            token_rng: ChaCha8Rng::from_os_rng(),
            retrainer,
            shared: Arc::new(Shared::default()),
            generation: 0,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    /// Committed sentences in commit order, labels applied.
    pub fn pool(&self) -> &[Sentence] {
        &self.pool
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    /// Ids of queued sentences with their re-review flag, front first.
    pub fn queued(&self) -> Vec<(String, bool)> {
        self.queue.iter().map(|q| (q.sentence.id.clone(), q.re_review)).collect()
    }

    pub fn has_model(&self) -> bool {
        self.shared.current().is_some()
    }

    /// Serves a sentence still short of reviewers, else the next queued
    /// one, else re-issues the oldest open review so abandoned tasks cannot
    /// stall the session.
    pub fn next_task(&mut self) -> Result<NextTask, AnnotateError> {
        let n = self.config.reviewers_required;
        let idx = match self.reviews.iter().position(|r| r.issued < n) {
            Some(i) => i,
            None => match self.queue.pop_front() {
                Some(item) => {
                    self.reviews.push(Review {
                        id: self.next_review,
                        item,
                        issued: 0,
                        tokens: Vec::new(),
                        submissions: Vec::new(),
                    });
                    self.next_review += 1;
                    self.reviews.len() - 1
                }
                None if !self.reviews.is_empty() => 0,
                None => return Ok(NextTask::Complete),
            },
        };
        let token = self.fresh_token();
        let review = &mut self.reviews[idx];
        review.issued += 1;
        review.tokens.push(token.clone());
        self.open_tokens.insert(token.clone(), review.id);
        let sentence = &review.item.sentence;
        let suggestions = match (self.config.mode, self.shared.current()) {
            (Mode::Assisted, Some(model)) => match model.suggest(sentence) {
                Ok(p) if p.len() == sentence.len() => Some(p),
                Ok(p) => {
                    log::warn!("suggester returned {} values for {} tokens; omitting", p.len(), sentence.len());
                    None
                }
                Err(e) => {
                    log::warn!("suggestions unavailable for {}: {e}", sentence.id);
                    None
                }
            },
            _ => None,
        };
        Ok(NextTask::Task(SentenceTask {
            token,
            sentence_id: sentence.id.clone(),
            tokens: sentence.texts().into_iter().map(String::from).collect(),
            suggestions,
            re_review: review.item.re_review,
        }))
    }

    pub fn submit(&mut self, sub: &LabelSubmission) -> Result<SubmitOutcome, AnnotateError> {
        let Some(&review_id) = self.open_tokens.get(&sub.token) else {
            return Err(if self.spent_tokens.contains(&sub.token) {
                AnnotateError::TokenSpent
            } else {
                AnnotateError::UnknownToken
            });
        };
        let idx = self
            .reviews
            .iter()
            .position(|r| r.id == review_id)
            .expect("open token belongs to an open review");
        let review = &self.reviews[idx];
        let expected = review.item.sentence.len();
        if sub.labels.len() != expected {
            return Err(AnnotateError::LabelLength {
                expected,
                found: sub.labels.len(),
            });
        }
        if let Some(&bad) = sub.labels.iter().find(|&&b| b > 1) {
            return Err(AnnotateError::InvalidLabel(bad));
        }
        if sub.reviewer.trim().is_empty() {
            return Err(AnnotateError::EmptyReviewer);
        }
        if review.submissions.iter().any(|(r, _)| r == &sub.reviewer) {
            return Err(AnnotateError::DuplicateReviewer(sub.reviewer.clone()));
        }
        self.open_tokens.remove(&sub.token);
        self.spent_tokens.insert(sub.token.clone());

        if self.reviews[idx].submissions.iter().any(|(_, l)| l != &sub.labels) {
            let review = self.close_review(idx);
            self.queue.push_front(QueueItem {
                sentence: review.item.sentence,
                re_review: true,
            });
            return Ok(SubmitOutcome::Requeued);
        }
        let review = &mut self.reviews[idx];
        review.submissions.push((sub.reviewer.clone(), sub.labels.clone()));
        if review.submissions.len() < self.config.reviewers_required {
            return Ok(SubmitOutcome::AwaitingConsensus);
        }
        let mut sentence = self.close_review(idx).item.sentence;
        for (tok, &bit) in sentence.tokens.iter_mut().zip(&sub.labels) {
            tok.label = Label::from_bit(bit).expect("validated label");
        }
        self.pool.push(sentence);
        self.since_last_retrain += 1;
        if self.since_last_retrain == self.config.retrain_every {
            self.since_last_retrain = 0;
            self.schedule_retrain();
            return Ok(SubmitOutcome::RetrainStarted);
        }
        Ok(SubmitOutcome::Committed)
    }

    fn close_review(&mut self, idx: usize) -> Review {
        let review = self.reviews.remove(idx);
        for t in &review.tokens {
            if self.open_tokens.remove(t).is_some() {
                self.spent_tokens.insert(t.clone());
            }
        }
        review
    }

    fn fresh_token(&mut self) -> String {
        loop {
            let t = hex::encode(self.token_rng.random::<[u8; 16]>());
            if !self.open_tokens.contains_key(&t) && !self.spent_tokens.contains(&t) {
                return t;
            }
        }
    }

    fn schedule_retrain(&mut self) {
        self.generation += 1;
        let generation = self.generation;
        let pool = Dataset::new(self.pool.clone(), Partition::Trainval);
        let seed = self.config.seed;
        {
            let mut c = self.shared.counters.lock().expect("counter lock");
            c.started += 1;
            c.running += 1;
        }
        log::info!("session {}: retrain {generation} on {} sentences", self.id, pool.len());
        match self.config.retrain_mode {
            RetrainMode::Inline => self.shared.run(self.retrainer.as_ref(), &pool, seed, generation),
            RetrainMode::Background => {
                let shared = Arc::clone(&self.shared);
                let retrainer = Arc::clone(&self.retrainer);
                thread::spawn(move || shared.run(retrainer.as_ref(), &pool, seed, generation));
            }
        }
    }

    /// Blocks until no retrain is running.
    pub fn wait_for_retrains(&self) {
        let mut c = self.shared.counters.lock().expect("counter lock");
        while c.running > 0 {
            c = self.shared.idle.wait(c).expect("counter lock");
        }
    }

    pub fn status(&self) -> SessionStatus {
        let c = *self.shared.counters.lock().expect("counter lock");
        SessionStatus {
            id: self.id.clone(),
            mode: self.config.mode,
            reviewers_required: self.config.reviewers_required,
            retrain_every: self.config.retrain_every,
            queue_remaining: self.queue.len(),
            in_review: self.reviews.len(),
            labeled: self.pool.len(),
            since_last_retrain: self.since_last_retrain,
            until_next_retrain: self.config.retrain_every - self.since_last_retrain,
            retrains_started: c.started,
            retrains_completed: c.completed,
            retrains_failed: c.failed,
            retrain_in_progress: c.running > 0,
            has_model: self.has_model(),
            complete: self.queue.is_empty() && self.reviews.is_empty(),
        }
    }

    /// Committed sentences as a trainval dataset.
    pub fn export_dataset(&self) -> Result<Dataset, AnnotateError> {
        if self.pool.is_empty() {
            return Err(AnnotateError::NothingToExport);
        }
        Ok(Dataset::new(self.pool.clone(), Partition::Trainval))
    }

    /// Committed sentences in the corpus JSONL format.
    pub fn export_jsonl(&self) -> Result<Vec<u8>, AnnotateError> {
        let mut out = Vec::new();
        write_dataset(&mut out, &self.export_dataset()?)?;
        Ok(out)
    }
}
