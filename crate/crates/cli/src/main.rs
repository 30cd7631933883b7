//! `oed`: dataset statistics, featurization, single trials, experiment
//! grids, reports and the annotation server.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage or
//! configuration errors.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use oed_core::annotate::{RetrainMode, Retrainer, StubRetrainer, TrialRetrainer};
use oed_core::corpus::{compute_stats, load_dataset, Dataset, Partition, SplitSpec};
use oed_core::evalstats::{render_report, F1Choice, ReportOptions, TTestKind};
use oed_core::featurize::{concat_dim, parse_feature_expr, EncoderSpec, FeatureCache, Featurizer, ProviderRegistry};
use oed_core::models::{Kernel, RnnConfig};
use oed_core::trainer::{
    load_results, resume_experiment, run_experiment, variant_order, write_trial_result, Arch, DataPaths, EvalSplit,
    ExperimentConfig, ExperimentOutcome, Family, Seeds, TrialData, TrialEnv, Variant,
};

/// Marks an error as caused by the invocation rather than by the run.
#[derive(Debug)]
struct Usage;

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("invalid input")
    }
}

fn usage<E: Into<anyhow::Error>>(e: E) -> anyhow::Error {
    e.into().context(Usage)
}

#[derive(Debug, Parser)]
#[command(name = "oed", version, about = "Ongoing event detection lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print descriptive statistics of a JSONL dataset.
    Stats {
        dataset: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Compute contextual features for a dataset and fill the cache.
    Featurize(FeaturizeArgs),
    /// Train and evaluate a single model.
    Train(TrainArgs),
    /// Run or resume an experiment grid.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
    /// Aggregate trial results into a comparison report.
    Report(ReportArgs),
    /// Train the per-token SVM baseline for one or all kernels.
    Svm(SvmArgs),
    /// Serve the annotation API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct FeaturizeArgs {
    dataset: PathBuf,
    #[arg(long, default_value = "all")]
    features: String,
    #[arg(long, env = "OED_CACHE_DIR")]
    cache: Option<PathBuf>,
    #[command(flatten)]
    encoder: EncoderArgs,
}

#[derive(Debug, Args)]
struct EncoderArgs {
    /// Context radius of the reference encoder.
    #[arg(long, default_value_t = 2)]
    encoder_radius: usize,
    #[arg(long, default_value_t = 1)]
    encoder_spacy_radius: usize,
    #[arg(long, default_value_t = 0)]
    encoder_seed: u64,
}

impl EncoderArgs {
    fn spec(&self) -> EncoderSpec {
        EncoderSpec::Hashed {
            radius: self.encoder_radius,
            spacy_radius: self.encoder_spacy_radius,
            seed: self.encoder_seed,
        }
    }
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Partition manifest listing `trainval:` and `test:` files.
    #[arg(long, conflicts_with_all = ["trainval", "test"])]
    data: Option<PathBuf>,
    #[arg(long, requires = "test")]
    trainval: Option<PathBuf>,
    #[arg(long, requires = "trainval")]
    test: Option<PathBuf>,
}

impl DataArgs {
    fn paths(&self) -> Option<DataPaths> {
        if self.data.is_none() && self.trainval.is_none() {
            return None;
        }
        Some(DataPaths {
            manifest: self.data.clone(),
            trainval: self.trainval.clone(),
            test: self.test.clone(),
        })
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Experiment config to take data paths and defaults from.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Variant of `--config` to start from; defaults to the first.
    #[arg(long, requires = "config")]
    variant: Option<String>,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_parser = ["rnn", "cnn", "svm"])]
    model: Option<String>,
    #[arg(long)]
    features: Option<String>,
    /// Hidden units per LSTM layer, e.g. `15` or `<100,15,5>`.
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    validation_fraction: Option<f64>,
    /// Record result id; defaults to the variant id or the model family.
    #[arg(long)]
    id: Option<String>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Save the best model under `<out>/checkpoints/`.
    #[arg(long)]
    checkpoint: bool,
    #[command(flatten)]
    encoder: EncoderArgs,
}

#[derive(Debug, Subcommand)]
enum ExperimentCommand {
    /// Run every trial of a config not yet recorded in the output directory.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: ExperimentOverrides,
    },
    /// Continue a partial run from its stored configuration.
    Resume {
        dir: PathBuf,
        /// Require this config to match the stored one.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct ExperimentOverrides {
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    fixed_split: bool,
}

#[derive(Debug, Args)]
struct ReportArgs {
    dir: PathBuf,
    #[arg(long, default_value = "test")]
    split: EvalSplit,
    /// Test every variant against the best one (the only comparison mode).
    #[arg(long)]
    against_best: bool,
    #[arg(long, default_value = "std")]
    f1: F1Choice,
    /// Pooled-variance t-test instead of Welch's.
    #[arg(long)]
    student: bool,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Print a fixed-width table instead of CSV.
    #[arg(long)]
    table: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SvmArgs {
    #[command(flatten)]
    data: DataArgs,
    /// linear, poly, rbf, sigmoid or all.
    #[arg(long, default_value = "all")]
    kernel: String,
    #[arg(long, default_value = "1")]
    seeds: String,
    #[arg(long, default_value_t = 0.2)]
    validation_fraction: f64,
    #[arg(long, default_value = "runs/svm")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    #[arg(long, default_value_t = 50)]
    retrain_every: usize,
    /// Retrain inside the submission that triggers it.
    #[arg(long)]
    inline_retrain: bool,
    /// Suggest from words already labeled as triggers instead of an RNN.
    #[arg(long)]
    stub_model: bool,
    #[arg(long, default_value = "all")]
    features: String,
    #[arg(long, default_value = "15")]
    arch: String,
    #[arg(long, default_value_t = 100)]
    patience: usize,
    #[arg(long, default_value_t = 500)]
    max_epochs: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    encoder: EncoderArgs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = if e.downcast_ref::<Usage>().is_some() { 2 } else { 1 };
            eprintln!("error: {}", render_chain(&e));
            ExitCode::from(code)
        }
    }
}

/// Joins the cause chain, skipping the usage marker and causes whose text
/// the previous message already includes.
fn render_chain(e: &anyhow::Error) -> String {
    let marker = Usage.to_string();
    let mut parts: Vec<String> = Vec::new();
    for c in e.chain().map(ToString::to_string).filter(|c| *c != marker) {
        if parts.last().is_none_or(|prev| !prev.contains(&c)) {
            parts.push(c);
        }
    }
    parts.join(": ")
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Stats { dataset, json } => stats(&dataset, json),
        Command::Featurize(a) => featurize(&a),
        Command::Train(a) => train(&a),
        Command::Experiment(ExperimentCommand::Run { config, out, overrides }) => {
            experiment_run(&config, out.as_deref(), &overrides)
        }
        Command::Experiment(ExperimentCommand::Resume { dir, config }) => experiment_resume(&dir, config.as_deref()),
        Command::Report(a) => report(&a),
        Command::Svm(a) => svm(&a),
        Command::Serve(a) => serve(&a),
    }
}

fn load(path: &Path) -> Result<Dataset> {
    load_dataset(path, Partition::Trainval).map_err(usage)
}

fn stats(path: &Path, json: bool) -> Result<()> {
    let s = compute_stats(&load(path)?);
    if json {
        println!("{}", serde_json::to_string_pretty(&s)?);
    } else {
        print!("{s}");
    }
    Ok(())
}

fn featurize(a: &FeaturizeArgs) -> Result<()> {
    let kinds = parse_feature_expr(&a.features).map_err(usage)?;
    let dataset = load(&a.dataset)?;
    let mut providers = ProviderRegistry::with_encoder(a.encoder.spec().build());
    if let Some(dir) = &a.cache {
        providers = providers.cached(FeatureCache::new(dir));
    }
    let featurizer = Featurizer::fit(&dataset, kinds.clone(), providers);
    let out = featurizer.featurize_all(&dataset.sentences)?;
    let tokens: usize = out.iter().map(|s| s.len()).sum();
    println!(
        "featurized {} sentences ({tokens} tokens) with {kinds}; per-token width {} (+ position)",
        out.len(),
        concat_dim(&kinds, 0)
    );
    if let Some(dir) = &a.cache {
        println!("cache: {}", dir.display());
    }
    Ok(())
}

fn parse_family(s: &str) -> Family {
    match s {
        "cnn" => Family::Cnn,
        "svm" => Family::Svm,
        _ => Family::Rnn,
    }
}

/// Builds the single-trial configuration: a config file (when given)
/// supplies defaults, flags override it.
fn train_config(a: &TrainArgs) -> Result<(ExperimentConfig, Variant, u64)> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p).map_err(usage)?,
        None => {
            let data = a
                .data
                .paths()
                .ok_or_else(|| usage(anyhow::anyhow!("--data or --trainval/--test is required without --config")))?;
            ExperimentConfig {
                name: "train".into(),
                seeds: Seeds(vec![1]),
                patience: oed_core::trainer::DEFAULT_PATIENCE,
                max_epochs: oed_core::trainer::DEFAULT_MAX_EPOCHS,
                validation_fraction: oed_core::trainer::DEFAULT_VALIDATION_FRACTION,
                fixed_split: false,
                monitor: F1Choice::Standard,
                deterministic: true,
                data,
                embeddings: None,
                encoder: a.encoder.spec(),
                cache_dir: std::env::var_os("OED_CACHE_DIR").map(PathBuf::from),
                checkpoints: false,
                variants: vec![Variant::new("rnn", Family::Rnn)],
                base_dir: PathBuf::from("."),
            }
        }
    };
    if let Some(d) = a.data.paths() {
        cfg.data = d;
        cfg.base_dir = PathBuf::from(".");
    }
    let mut variant = match &a.variant {
        Some(id) => cfg
            .variants
            .iter()
            .find(|v| &v.id == id)
            .cloned()
            .ok_or_else(|| usage(anyhow::anyhow!("config has no variant {id:?}")))?,
        None => cfg.variants[0].clone(),
    };
    if let Some(m) = &a.model {
        variant.model = parse_family(m);
        if a.id.is_none() && a.variant.is_none() {
            variant.id = m.clone();
        }
    }
    if let Some(f) = &a.features {
        parse_feature_expr(f).map_err(usage)?;
        variant.features = Some(f.clone());
    }
    if let Some(arch) = &a.arch {
        variant.arch = Some(arch.parse::<Arch>().map_err(|e| usage(anyhow::anyhow!("--arch: {e}")))?);
    }
    if let Some(w) = a.window {
        variant.window = Some(w);
    }
    if let Some(k) = &a.kernel {
        variant.kernel = Some(k.clone());
    }
    if let Some(id) = &a.id {
        variant.id = id.clone();
    }
    if let Some(p) = a.patience {
        cfg.patience = p;
    }
    if let Some(m) = a.max_epochs {
        cfg.max_epochs = m;
    }
    if let Some(f) = a.validation_fraction {
        cfg.validation_fraction = f;
    }
    cfg.checkpoints |= a.checkpoint;
    variant.model_config().map_err(usage)?;
    let seed = a.seed.unwrap_or(1);
    Ok((cfg, variant, seed))
}

fn trial_env(cfg: &ExperimentConfig, out: &Path) -> Result<TrialEnv> {
    let mut providers = ProviderRegistry::with_encoder(cfg.encoder.build());
    if let Some(dir) = &cfg.cache_dir {
        providers = providers.cached(FeatureCache::new(cfg.resolve(dir)));
    }
    let embeddings = match &cfg.embeddings {
        Some(p) => Some(Arc::new(
            oed_core::featurize::StaticEmbeddings::load(cfg.resolve(p), oed_core::featurize::WORD_DIM).map_err(usage)?,
        )),
        None => None,
    };
    Ok(TrialEnv {
        providers,
        embeddings,
        checkpoint_root: cfg.checkpoints.then(|| out.join("checkpoints")),
    })
}

fn train(a: &TrainArgs) -> Result<()> {
    let (cfg, variant, seed) = train_config(a)?;
    let (trainval, test) = cfg.load_data().map_err(usage)?;
    let tc = cfg.trial_config(&variant, seed).map_err(usage)?;
    tc.validate().map_err(usage)?;
    let split_seed = if cfg.fixed_split { 0 } else { seed };
    let data = TrialData::from_split(&trainval, test, &SplitSpec::new(split_seed, cfg.validation_fraction)).map_err(usage)?;
    let env = trial_env(&cfg, &a.out)?;
    let result = oed_core::trainer::run_trial(&tc, &data, &env)?;
    let path = write_trial_result(&a.out, &result)?;
    let m = result.test.metrics();
    println!(
        "{} seed {}: best epoch {} of {}, test sens {:.3} spec {:.3} F1 {:.3}",
        result.variant, result.seed, result.best_epoch, result.epochs_run, m.sensitivity, m.specificity, m.f1_std
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn summarize(outcome: &ExperimentOutcome, out: &Path) -> Result<()> {
    println!(
        "{} trials executed, {} recorded, {} failed",
        outcome.executed,
        outcome.results.len(),
        outcome.failures.len()
    );
    for f in &outcome.failures {
        eprintln!("failed: {} seed {}: {}", f.variant, f.seed, f.error);
    }
    if !outcome.results.is_empty() {
        let opts = ReportOptions {
            variant_order: variant_order(out),
            ..ReportOptions::default()
        };
        let rep = render_report(&outcome.results, &opts)?;
        fs::write(out.join("report.csv"), rep.to_csv()).with_context(|| format!("writing report in {}", out.display()))?;
        print!("{}", rep.to_table());
    }
    if !outcome.failures.is_empty() {
        bail!("{} trial(s) failed; rerun `oed experiment resume {}`", outcome.failures.len(), out.display());
    }
    Ok(())
}

fn experiment_run(config: &Path, out: Option<&Path>, o: &ExperimentOverrides) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config).map_err(usage)?;
    if let Some(s) = &o.seeds {
        cfg.seeds = s.parse().map_err(|e| usage(anyhow::anyhow!("--seeds: {e}")))?;
    }
    if let Some(p) = o.patience {
        cfg.patience = p;
    }
    if let Some(m) = o.max_epochs {
        cfg.max_epochs = m;
    }
    cfg.fixed_split |= o.fixed_split;
    cfg.validate().map_err(usage)?;
    cfg.load_data().map_err(usage)?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("out").join(&cfg.name));
    let outcome = run_experiment(&cfg, &out).map_err(|e| match e {
        oed_core::trainer::TrainerError::HashMismatch { .. } => usage(e),
        other => other.into(),
    })?;
    summarize(&outcome, &out)
}

fn experiment_resume(dir: &Path, config: Option<&Path>) -> Result<()> {
    let cfg = config.map(ExperimentConfig::load).transpose().map_err(usage)?;
    let outcome = resume_experiment(dir, cfg.as_ref()).map_err(|e| match e {
        oed_core::trainer::TrainerError::HashMismatch { .. } | oed_core::trainer::TrainerError::Io { .. } => usage(e),
        other => other.into(),
    })?;
    summarize(&outcome, dir)
}

fn report(a: &ReportArgs) -> Result<()> {
    let results = load_results(&a.dir).map_err(usage)?;
    if results.is_empty() {
        return Err(usage(anyhow::anyhow!("no trial results in {}", a.dir.display())));
    }
    let opts = ReportOptions {
        split: a.split,
        f1: a.f1,
        test: if a.student { TTestKind::Student } else { TTestKind::Welch },
        level: a.level,
        variant_order: variant_order(&a.dir),
    };
    let rep = render_report(&results, &opts).map_err(usage)?;
    let text = if a.table { rep.to_table() } else { rep.to_csv() };
    match &a.out {
        Some(p) => fs::write(p, &text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    if !a.table {
        for n in &rep.notes {
            eprintln!("note: {n}");
        }
    }
    Ok(())
}

fn svm(a: &SvmArgs) -> Result<()> {
    let data = a
        .data
        .paths()
        .ok_or_else(|| usage(anyhow::anyhow!("--data or --trainval/--test is required")))?;
    let kernels: Vec<Kernel> = if a.kernel == "all" {
        Kernel::ALL.to_vec()
    } else {
        vec![a.kernel.parse().map_err(usage)?]
    };
    let variants = kernels
        .iter()
        .map(|k| Variant {
            kernel: Some(k.to_string()),
            ..Variant::new(format!("svm-{k}"), Family::Svm)
        })
        .collect();
    let cfg = ExperimentConfig {
        name: "svm".into(),
        seeds: a.seeds.parse().map_err(|e| usage(anyhow::anyhow!("--seeds: {e}")))?,
        patience: 1,
        max_epochs: 1,
        validation_fraction: a.validation_fraction,
        fixed_split: false,
        monitor: F1Choice::Standard,
        deterministic: true,
        data,
        embeddings: None,
        encoder: EncoderSpec::default(),
        cache_dir: None,
        checkpoints: false,
        variants,
        base_dir: PathBuf::from("."),
    };
    cfg.validate().map_err(usage)?;
    cfg.load_data().map_err(usage)?;
    let outcome = run_experiment(&cfg, &a.out).map_err(|e| match e {
        oed_core::trainer::TrainerError::HashMismatch { .. } => usage(e),
        other => other.into(),
    })?;
    summarize(&outcome, &a.out)
}

fn serve(a: &ServeArgs) -> Result<()> {
    let retrainer: Arc<dyn Retrainer> = if a.stub_model {
        Arc::new(StubRetrainer::default())
    } else {
        let features = parse_feature_expr(&a.features).map_err(usage)?;
        let arch: Arch = a.arch.parse().map_err(|e| usage(anyhow::anyhow!("--arch: {e}")))?;
        let env = TrialEnv {
            providers: ProviderRegistry::with_encoder(a.encoder.spec().build()),
            ..TrialEnv::default()
        };
        let mut r = TrialRetrainer::rnn(RnnConfig::new(features).with_hidden(arch.0), env);
        r.patience = a.patience;
        r.max_epochs = a.max_epochs;
        r.model.validate().map_err(usage)?;
        Arc::new(r)
    };
    if a.retrain_every == 0 {
        return Err(usage(anyhow::anyhow!("--retrain-every must be at least 1")));
    }
    let mut config = oed_server::ServerConfig::new(retrainer);
    config.retrain_every = a.retrain_every;
    config.default_seed = a.seed;
    config.retrain_mode = if a.inline_retrain { RetrainMode::Inline } else { RetrainMode::Background };
    let runtime = tokio::runtime::Runtime::new().context("starting the async runtime")?;
    runtime
        .block_on(oed_server::serve(a.addr, oed_server::AppState::new(config)))
        .with_context(|| format!("serving on {}", a.addr))
}
