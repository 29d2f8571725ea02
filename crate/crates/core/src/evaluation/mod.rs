//! Episodic evaluation: per-episode query accuracy, multi-trial reports with
//! confidence intervals, and paired comparisons across pipeline settings.

pub mod stats;

use std::fmt::Write as _;
use std::sync::Arc;

use ndarray::Array4;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::Architecture;
use crate::classifier::{predict_rows, HeadKind, SvmConfig};
use crate::data::preprocess::{preprocess_eval, stack_batch, PreprocessConfig};
use crate::data::{sample_episode, ClassSection, Episode, EpisodeSpec, Image, Labeled};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::training::{finetune, BnFinetuneMode, FinetuneConfig, OptimizerConfig, OptimizerKind, UpdateRegime};
use crate::util::mix_seed;

pub use stats::{mean_ci, paired_difference, MeanCi};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
/// Reports with a larger failed fraction are flagged invalid.
pub const MAX_FAILED_FRACTION: f64 = 0.05;
/// Environment variable capping episode parallelism.
pub const WORKERS_ENV: &str = "FSF_NUM_WORKERS";

/// Seed of episode `index` under `master`.
pub fn episode_seed(master: u64, index: usize) -> u64 {
    mix_seed(master, &[index as u64])
}

/// Number of worker threads for episode-level parallelism.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Runs `f(i)` for `i in 0..n` on a pool of [`worker_count`] threads and
/// returns the results in index order.
pub fn par_map_indexed<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let workers = worker_count();
    if workers <= 1 {
        return Ok((0..n).map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| (0..n).into_par_iter().map(f).collect()))
}

/// An episode with its eval-preprocessed support and query batches.
#[derive(Debug, Clone)]
pub struct PreparedEpisode {
    pub episode: Episode<Arc<Image>>,
    pub support_batch: Array4<f64>,
    pub query_batch: Array4<f64>,
}

impl PreparedEpisode {
    pub fn new(episode: Episode<Arc<Image>>, preprocess: &PreprocessConfig) -> Result<Self> {
        let support_batch = eval_batch(&episode.support, preprocess)?;
        let query_batch = eval_batch(&episode.query, preprocess)?;
        Ok(PreparedEpisode {
            episode,
            support_batch,
            query_batch,
        })
    }

    pub fn sample(
        section: &ClassSection<Arc<Image>>,
        spec: &EpisodeSpec,
        preprocess: &PreprocessConfig,
    ) -> Result<Self> {
        Self::new(sample_episode(section, spec)?, preprocess)
    }

    /// Forks `pretrained` and re-initializes its head from the support
    /// features (imprinting or SVM, depending on the head kind).
    pub fn init_model(&self, pretrained: &Model, svm: &SvmConfig) -> Result<Model> {
        let mut model = pretrained.clone();
        model.clear_cache();
        let feats = model.features(&self.support_batch)?;
        model.reset_head_for_novel(&feats, &self.episode.support_labels(), &self.episode.classes, svm)?;
        Ok(model)
    }

    pub fn query_accuracy(&self, model: &Model) -> Result<f64> {
        check_classes(model, &self.episode)?;
        batch_accuracy(model, &self.query_batch, &self.episode.query_labels())
    }
}

fn eval_batch(items: &[Labeled<Arc<Image>>], preprocess: &PreprocessConfig) -> Result<Array4<f64>> {
    let tensors = items
        .iter()
        .map(|l| preprocess_eval(&l.item, preprocess))
        .collect::<Result<Vec<_>>>()?;
    stack_batch(&tensors)
}

fn check_classes<T>(model: &Model, episode: &Episode<T>) -> Result<()> {
    if model.head.class_ids() != episode.classes.as_slice() {
        return Err(Error::HeadMismatch(format!(
            "head classes {:?} differ from episode classes {:?}",
            model.head.class_ids(),
            episode.classes
        )));
    }
    Ok(())
}

fn batch_accuracy(model: &Model, batch: &Array4<f64>, labels: &[usize]) -> Result<f64> {
    let preds = predict_rows(model.logits(batch)?.view());
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Query accuracy of `model` on `episode` with eval-mode preprocessing and
/// inference.
pub fn evaluate_episode(model: &Model, episode: &Episode<Arc<Image>>, preprocess: &PreprocessConfig) -> Result<f64> {
    check_classes(model, episode)?;
    let batch = eval_batch(&episode.query, preprocess)?;
    batch_accuracy(model, &batch, &episode.query_labels())
}

/// Everything applied to a pretrained model inside one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub label: String,
    pub regime: UpdateRegime,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub bn_mode: BnFinetuneMode,
    pub train_scale: bool,
    pub svm: SvmConfig,
}

impl PipelineConfig {
    pub fn new(regime: UpdateRegime, optimizer: OptimizerConfig, epochs: usize) -> Self {
        PipelineConfig {
            label: format!("{regime}/{}", optimizer.name),
            regime,
            optimizer,
            epochs,
            bn_mode: BnFinetuneMode::Train,
            train_scale: true,
            svm: SvmConfig::default(),
        }
    }

    /// Imprint (or SVM-initialize) and evaluate, no gradient steps.
    pub fn without_finetuning() -> Self {
        let mut p = Self::new(UpdateRegime::None, OptimizerConfig::new(OptimizerKind::Adam, 0.001), 0);
        p.label = "w/o FT".into();
        p
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Whether this setting is equivalent to no fine-tuning.
    pub fn is_dagger(&self) -> bool {
        self.regime == UpdateRegime::None || self.epochs == 0
    }

    fn finetune_config(&self, seed: u64) -> FinetuneConfig {
        FinetuneConfig {
            regime: self.regime,
            optimizer: self.optimizer.clone(),
            epochs: self.epochs,
            bn_mode: self.bn_mode,
            train_scale: self.train_scale,
            seed,
        }
    }

    /// Runs the full pipeline on one prepared episode and returns the query
    /// accuracy.
    pub fn run_episode(
        &self,
        pretrained: &Model,
        prepared: &PreparedEpisode,
        preprocess: &PreprocessConfig,
        seed: u64,
    ) -> Result<f64> {
        let mut model = prepared.init_model(pretrained, &self.svm)?;
        finetune(
            &mut model,
            &prepared.episode.support,
            &self.finetune_config(mix_seed(seed, &[1])),
            preprocess,
        )?;
        prepared.query_accuracy(&model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub label: String,
    pub regime: UpdateRegime,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub backbone: Architecture,
    pub head: HeadKind,
    pub n_way: usize,
    pub k_shot: usize,
    pub q_query: usize,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub seed: u64,
    /// `None` when the episode failed.
    pub accuracy: Option<f64>,
    pub epochs_used: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub metadata: ReportMetadata,
    pub trials: usize,
    pub episodes: Vec<EpisodeRecord>,
    /// Over successful episodes only; `None` if every episode failed.
    pub mean_accuracy: Option<f64>,
    pub ci95_halfwidth: Option<f64>,
    pub failed_episodes: usize,
    pub valid: bool,
    pub dagger: bool,
}

impl EvalReport {
    /// Aggregates records (sorted by episode index first).
    pub fn from_records(metadata: ReportMetadata, mut episodes: Vec<EpisodeRecord>, dagger: bool) -> Self {
        episodes.sort_by_key(|r| r.episode);
        let accs: Vec<f64> = episodes.iter().filter_map(|r| r.accuracy).collect();
        let summary = mean_ci(&accs);
        let trials = episodes.len();
        let failed = trials - accs.len();
        EvalReport {
            schema_version: REPORT_SCHEMA_VERSION,
            metadata,
            trials,
            episodes,
            mean_accuracy: summary.map(|s| s.mean),
            ci95_halfwidth: summary.map(|s| s.ci95),
            failed_episodes: failed,
            valid: trials > 0 && (failed as f64) <= MAX_FAILED_FRACTION * trials as f64,
            dagger,
        }
    }

    pub fn per_episode_accuracy(&self) -> Vec<f64> {
        self.episodes.iter().filter_map(|r| r.accuracy).collect()
    }

    pub fn accuracy_by_episode(&self) -> Vec<Option<f64>> {
        self.episodes.iter().map(|r| r.accuracy).collect()
    }

    pub fn summary(&self) -> Option<MeanCi> {
        mean_ci(&self.per_episode_accuracy())
    }

    /// `episode,seed,accuracy,epochs_used`; failed episodes have an empty
    /// accuracy field.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["episode", "seed", "accuracy", "epochs_used"])?;
        for r in &self.episodes {
            w.write_record([
                r.episode.to_string(),
                r.seed.to_string(),
                r.accuracy.map(|a| a.to_string()).unwrap_or_default(),
                r.epochs_used.to_string(),
            ])?;
        }
        csv_string(w)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub(crate) fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Evaluates `pipeline` on `trials` episodes sampled from `novel`, using
/// `spec.seed` as the master seed. Episodes run in parallel on independent
/// model forks; failures are recorded, not propagated. Sampling problems and
/// inapplicable regimes are reported as errors before any episode runs.
pub fn run_benchmark(
    pretrained: &Model,
    pipeline: &PipelineConfig,
    novel: &ClassSection<Arc<Image>>,
    spec: &EpisodeSpec,
    trials: usize,
    preprocess: &PreprocessConfig,
) -> Result<EvalReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    if !pipeline.is_dagger() {
        pipeline.optimizer.validate()?;
        crate::training::select_trainable(pretrained, pipeline.regime, pipeline.train_scale)?;
    }
    sample_episode(novel, &spec.with_seed(episode_seed(spec.seed, 0)))?;
    let epochs_used = if pipeline.is_dagger() { 0 } else { pipeline.epochs };
    let records = par_map_indexed(trials, |i| {
        let seed = episode_seed(spec.seed, i);
        let outcome = PreparedEpisode::sample(novel, &spec.with_seed(seed), preprocess)
            .and_then(|prep| pipeline.run_episode(pretrained, &prep, preprocess, seed));
        if let Err(e) = &outcome {
            log::warn!("episode {i} ({}) failed: {e}", pipeline.label);
        }
        EpisodeRecord {
            episode: i,
            seed,
            accuracy: outcome.as_ref().ok().copied(),
            epochs_used,
            error: outcome.err().map(|e| e.to_string()),
        }
    })?;
    let metadata = ReportMetadata {
        label: pipeline.label.clone(),
        regime: pipeline.regime,
        optimizer: pipeline.optimizer.name,
        learning_rate: pipeline.optimizer.learning_rate,
        epochs: pipeline.epochs,
        backbone: pretrained.backbone.spec().architecture,
        head: pretrained.head.kind(),
        n_way: spec.n_way,
        k_shot: spec.k_shot,
        q_query: spec.q_query,
        master_seed: spec.seed,
    };
    Ok(EvalReport::from_records(metadata, records, pipeline.is_dagger()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub reports: Vec<EvalReport>,
}

impl Comparison {
    /// `label,regime,optimizer,learning_rate,epochs,mean_accuracy,ci95_halfwidth,failed_episodes,trials,dagger,valid`
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "label",
            "regime",
            "optimizer",
            "learning_rate",
            "epochs",
            "mean_accuracy",
            "ci95_halfwidth",
            "failed_episodes",
            "trials",
            "dagger",
            "valid",
        ])?;
        for r in &self.reports {
            let m = &r.metadata;
            w.write_record([
                m.label.clone(),
                m.regime.to_string(),
                m.optimizer.to_string(),
                m.learning_rate.to_string(),
                m.epochs.to_string(),
                r.mean_accuracy.map(|v| v.to_string()).unwrap_or_default(),
                r.ci95_halfwidth.map(|v| v.to_string()).unwrap_or_default(),
                r.failed_episodes.to_string(),
                r.trials.to_string(),
                r.dagger.to_string(),
                r.valid.to_string(),
            ])?;
        }
        csv_string(w)
    }

    /// Markdown table, accuracies in percent as `mean ± ci`. A dagger marks
    /// rows equivalent to no fine-tuning; `*` marks invalid rows.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Condition | Accuracy (%) | Failed |\n|---|---|---|\n");
        for r in &self.reports {
            let acc = match (r.mean_accuracy, r.ci95_halfwidth) {
                (Some(m), Some(c)) => format!("{:.2} ± {:.2}", 100.0 * m, 100.0 * c),
                _ => "n/a".to_string(),
            };
            let marks = format!(
                "{}{}",
                if r.dagger { " †" } else { "" },
                if r.valid { "" } else { " *" }
            );
            let _ = writeln!(
                out,
                "| {} | {acc}{marks} | {}/{} |",
                r.metadata.label, r.failed_episodes, r.trials
            );
        }
        out
    }

    /// Paired difference `reports[a] - reports[b]` over common successes.
    pub fn paired(&self, a: usize, b: usize) -> Option<MeanCi> {
        paired_difference(
            &self.reports[a].accuracy_by_episode(),
            &self.reports[b].accuracy_by_episode(),
        )
    }
}

/// Benchmarks every pipeline in `grid` on the same episode realizations.
pub fn compare_conditions(
    pretrained: &Model,
    grid: &[PipelineConfig],
    novel: &ClassSection<Arc<Image>>,
    spec: &EpisodeSpec,
    trials: usize,
    preprocess: &PreprocessConfig,
) -> Result<Comparison> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("comparison grid is empty".into()));
    }
    let reports = grid
        .iter()
        .map(|p| run_benchmark(pretrained, p, novel, spec, trials, preprocess))
        .collect::<Result<Vec<_>>>()?;
    Ok(Comparison { reports })
}
