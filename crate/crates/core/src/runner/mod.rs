//! Experiment orchestration behind the `fsf` command line: dataset
//! resolution, pretraining, tuning, benchmarking and comparisons, with every
//! artifact written under `<output_dir>/<name>/`.

pub mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::data::manifest::Split;
use crate::data::synthetic::write_dataset;
use crate::data::{load_split_manifest, make_synthetic_dataset, ClassSection, Image, SyntheticSpec};
use crate::error::{Error, Result};
use crate::evaluation::{compare_conditions, run_benchmark, Comparison, EvalReport, PipelineConfig};
use crate::model::Model;
use crate::training::{pretrain, tune_hyperparams, OptimizerKind, UpdateRegime};
use crate::util::{content_hash, mix_seed};

pub use config::{DomainPreset, ExperimentConfig, GridKind, Preset, Resolution};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_TRAINING: i32 = 4;

/// Process exit code for an error: 2 configuration, 3 data, 4 training.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::UnknownArchitecture(_)
        | Error::UnknownOptimizer(_)
        | Error::UnknownRegime(_)
        | Error::InvalidOptimizer(_)
        | Error::InvalidEpisodeSpec(_)
        | Error::InvalidPreprocess(_)
        | Error::InvalidArgument(_)
        | Error::RegimeInapplicable { .. } => EXIT_CONFIG,
        Error::Io { .. }
        | Error::Manifest { .. }
        | Error::OverlappingSplits { .. }
        | Error::EmptyClass(_)
        | Error::InsufficientClasses { .. }
        | Error::InsufficientExamples { .. }
        | Error::ChannelCount(_)
        | Error::Image { .. }
        | Error::Checkpoint(_)
        | Error::Csv(_) => EXIT_DATA,
        Error::NonFiniteLoss { .. }
        | Error::SvmNonConvergence { .. }
        | Error::DegenerateFeature { .. }
        | Error::DegenerateClassMean { .. } => EXIT_TRAINING,
        _ => EXIT_OTHER,
    }
}

/// Command-line overrides applied on top of the file and preset.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub name: Option<String>,
    /// Replaces the evaluation master seed.
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub regime: Option<UpdateRegime>,
    pub optimizer: Option<OptimizerKind>,
    pub grid: Option<GridKind>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(name) = &self.name {
            cfg.name = name.clone();
        }
        if let Some(seed) = self.seed {
            cfg.eval.master_seed = seed;
        }
        if let Some(trials) = self.trials {
            cfg.eval.trials = trials;
        }
        if let Some(regime) = self.regime {
            cfg.finetune.regime = regime;
        }
        if let Some(opt) = self.optimizer {
            cfg.finetune.optimizer = opt;
        }
        if let Some(grid) = self.grid {
            cfg.compare.grid = grid;
        }
    }
}

/// Resolves the configuration: preset (or defaults), then file, then flags.
pub fn resolve_config(file: Option<&Path>, preset: Option<Preset>, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = match file {
        Some(path) => ExperimentConfig::load(path, preset)?,
        None => preset.map(ExperimentConfig::preset).unwrap_or_default(),
    };
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

/// The three class splits of an experiment plus a hash identifying them.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub base: ClassSection<Arc<Image>>,
    pub validation: ClassSection<Arc<Image>>,
    pub novel: ClassSection<Arc<Image>>,
    pub input_hash: String,
}

fn synthetic_specs(cfg: &ExperimentConfig) -> [SyntheticSpec; 3] {
    let s = &cfg.dataset.synthetic;
    let size = cfg.synthetic_image_size();
    let eval_style = match cfg.dataset.domain {
        DomainPreset::Single => s.source_style.clone(),
        DomainPreset::Cross => s.target_style.clone(),
    };
    let make = |n, per, offset, style, idx| SyntheticSpec {
        n_classes: n,
        examples_per_class: per,
        image_size: size,
        class_offset: offset,
        geometry: s.geometry.clone(),
        domain: style,
        seed: mix_seed(s.seed, &[idx]),
    };
    [
        make(s.base_classes, s.base_examples, 0, s.source_style.clone(), 0),
        make(
            s.validation_classes,
            s.eval_examples,
            s.base_classes,
            eval_style.clone(),
            1,
        ),
        make(
            s.novel_classes,
            s.eval_examples,
            s.base_classes + s.validation_classes,
            eval_style,
            2,
        ),
    ]
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.dataset.manifest {
        Some(path) => {
            let manifest = load_split_manifest(path)?;
            let mut hashes = vec![content_hash(&fs::read(path).map_err(|e| Error::io(path, e))?)];
            for files in manifest.records.values() {
                for f in files {
                    hashes.push(content_hash(&fs::read(f).map_err(|e| Error::io(f, e))?));
                }
            }
            Ok(Dataset {
                base: manifest.load_section(Split::Base)?,
                validation: manifest.load_section(Split::Val)?,
                novel: manifest.load_section(Split::Novel)?,
                input_hash: content_hash(hashes.join("\n").as_bytes()),
            })
        }
        None => {
            let specs = synthetic_specs(cfg);
            let [base, validation, novel] = [&specs[0], &specs[1], &specs[2]].map(make_synthetic_dataset);
            Ok(Dataset {
                base: base?,
                validation: validation?,
                novel: novel?,
                input_hash: content_hash(&serde_json::to_vec(&specs)?),
            })
        }
    }
}

/// Resolved configuration and input hashes attached to every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
}

impl Provenance {
    fn new(cfg: &ExperimentConfig, inputs: &[(&str, &str)]) -> Result<Self> {
        Ok(Provenance {
            tool: format!("fsf {}", env!("CARGO_PKG_VERSION")),
            config: cfg.clone(),
            config_hash: content_hash(cfg.to_toml()?.as_bytes()),
            inputs: inputs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        })
    }

    fn json(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes a CSV body plus a `<file>.meta.json` sidecar carrying provenance.
fn write_csv(path: &Path, body: &str, prov: &Provenance) -> Result<()> {
    write(path, body)?;
    let mut meta = prov.json()?;
    meta["body_hash"] = content_hash(body.as_bytes()).into();
    let mut side = path.as_os_str().to_owned();
    side.push(".meta.json");
    write(Path::new(&side), serde_json::to_string_pretty(&meta)?)
}

fn write_json<T: Serialize>(path: &Path, payload: &T, prov: &Provenance) -> Result<()> {
    let doc = serde_json::json!({ "provenance": prov, "result": payload });
    write(path, serde_json::to_string_pretty(&doc)?)
}

/// Artifact locations of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Layout {
            root: cfg.experiment_dir(),
        }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("checkpoint.fsf")
    }

    pub fn logs(&self) -> PathBuf {
        self.root.join("logs")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn pretrain_log(&self) -> PathBuf {
        self.logs().join("pretrain.csv")
    }

    pub fn tuning_curves(&self) -> PathBuf {
        self.logs().join("tuning_curves.csv")
    }

    pub fn tuned(&self) -> PathBuf {
        self.reports().join("tuned.json")
    }

    pub fn benchmark_report(&self) -> PathBuf {
        self.reports().join("benchmark.json")
    }

    pub fn benchmark_episodes(&self) -> PathBuf {
        self.reports().join("benchmark_episodes.csv")
    }

    pub fn compare_csv(&self) -> PathBuf {
        self.reports().join("compare.csv")
    }

    pub fn compare_markdown(&self) -> PathBuf {
        self.reports().join("compare.md")
    }

    pub fn compare_json(&self) -> PathBuf {
        self.reports().join("compare.json")
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }
}

fn echo_config(cfg: &ExperimentConfig, layout: &Layout) -> Result<()> {
    write(&layout.config(), cfg.to_toml()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainOutcome {
    pub final_loss: Option<f64>,
    pub final_accuracy: Option<f64>,
    pub warning: Option<String>,
    pub checkpoint: PathBuf,
}

pub fn cmd_pretrain(cfg: &ExperimentConfig) -> Result<PretrainOutcome> {
    let layout = Layout::new(cfg);
    echo_config(cfg, &layout)?;
    let data = load_dataset(cfg)?;
    let class_ids: Vec<String> = data.base.keys().cloned().collect();
    let mut model = Model::new(&cfg.backbone_spec(), cfg.head.kind, class_ids, cfg.backbone.seed)?;
    let log = pretrain(&mut model, &data.base, &cfg.preprocess(), &cfg.pretrain_config())?;
    if let Some(w) = &log.warning {
        log::warn!("pretraining: {w}");
    }
    let prov = Provenance::new(cfg, &[("dataset", &data.input_hash)])?;
    let mut meta = prov.json()?;
    meta["warning"] = serde_json::to_value(&log.warning)?;
    checkpoint::save(&model, &layout.checkpoint(), meta)?;
    write_csv(&layout.pretrain_log(), &log.to_csv()?, &prov)?;
    Ok(PretrainOutcome {
        final_loss: log.epochs.last().map(|e| e.loss),
        final_accuracy: log.final_accuracy(),
        warning: log.warning,
        checkpoint: layout.checkpoint(),
    })
}

fn load_checkpoint(path: &Path) -> Result<(Model, String)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (model, _) = checkpoint::from_bytes(&bytes)?;
    Ok((model, content_hash(&bytes)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TunedParams {
    pub regime: UpdateRegime,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub epochs: usize,
    pub validation_accuracy: f64,
    pub baseline_accuracy: f64,
}

pub fn cmd_tune(cfg: &ExperimentConfig, checkpoint_path: Option<&Path>) -> Result<TunedParams> {
    let layout = Layout::new(cfg);
    echo_config(cfg, &layout)?;
    let ckpt = checkpoint_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| layout.checkpoint());
    let (model, ckpt_hash) = load_checkpoint(&ckpt)?;
    let data = load_dataset(cfg)?;
    let result = tune_hyperparams(
        &model,
        &data.validation,
        &cfg.episode_spec(cfg.eval.tuning_seed)?,
        &cfg.tune_config(),
        &cfg.preprocess(),
    )?;
    let tuned = TunedParams {
        regime: cfg.finetune.regime,
        optimizer: cfg.finetune.optimizer,
        lr: result.best_lr,
        epochs: result.best_epochs,
        validation_accuracy: result.best_accuracy,
        baseline_accuracy: result.baseline_accuracy,
    };
    let prov = Provenance::new(cfg, &[("dataset", &data.input_hash), ("checkpoint", &ckpt_hash)])?;
    write_csv(&layout.tuning_curves(), &result.curves_csv()?, &prov)?;
    write_json(&layout.tuned(), &tuned, &prov)?;
    Ok(tuned)
}

/// Reads a tuned-parameters file written by [`cmd_tune`].
pub fn read_tuned(path: &Path) -> Result<TunedParams> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: serde_json::Value = serde_json::from_str(&text)?;
    Ok(serde_json::from_value(doc["result"].clone())?)
}

/// Fine-tuning steps for benchmarking: the tuned file when present and
/// matching the configured optimizer, otherwise the configured values.
fn step_settings(cfg: &ExperimentConfig, tuned: Option<&Path>, layout: &Layout) -> Result<(f64, usize)> {
    let path = tuned.map(Path::to_path_buf).unwrap_or_else(|| layout.tuned());
    if tuned.is_some() || path.exists() {
        let t = read_tuned(&path)?;
        if t.optimizer == cfg.finetune.optimizer {
            return Ok((t.lr, t.epochs));
        }
        log::warn!(
            "tuned file is for {}, configured optimizer is {}; using configured lr/epochs",
            t.optimizer,
            cfg.finetune.optimizer
        );
    }
    Ok((cfg.finetune.lr, cfg.finetune.epochs))
}

pub fn cmd_benchmark(
    cfg: &ExperimentConfig,
    checkpoint_path: Option<&Path>,
    tuned: Option<&Path>,
) -> Result<EvalReport> {
    let layout = Layout::new(cfg);
    echo_config(cfg, &layout)?;
    let ckpt = checkpoint_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| layout.checkpoint());
    let (model, ckpt_hash) = load_checkpoint(&ckpt)?;
    let data = load_dataset(cfg)?;
    let (lr, epochs) = step_settings(cfg, tuned, &layout)?;
    let pipeline = cfg.pipeline(cfg.finetune.regime, cfg.finetune.optimizer, lr, epochs);
    let report = run_benchmark(
        &model,
        &pipeline,
        &data.novel,
        &cfg.episode_spec(cfg.eval.master_seed)?,
        cfg.eval.trials,
        &cfg.preprocess(),
    )?;
    let prov = Provenance::new(cfg, &[("dataset", &data.input_hash), ("checkpoint", &ckpt_hash)])?;
    write_csv(&layout.benchmark_episodes(), &report.to_csv()?, &prov)?;
    write_json(&layout.benchmark_report(), &report, &prov)?;
    Ok(report)
}

/// The pipelines of the configured comparison grid.
pub fn comparison_grid(cfg: &ExperimentConfig, lr: f64, epochs: usize) -> Result<Vec<PipelineConfig>> {
    let keep = |name: &str| cfg.compare.only.is_empty() || cfg.compare.only.iter().any(|o| o == name);
    let grid: Vec<PipelineConfig> = match cfg.compare.grid {
        GridKind::Regimes => UpdateRegime::ALL
            .into_iter()
            .filter(|r| keep(r.as_str()))
            .map(|r| {
                let p = cfg.pipeline(r, cfg.finetune.optimizer, lr, epochs);
                p.with_label(r.label())
            })
            .collect(),
        GridKind::Optimizers => OptimizerKind::ALL
            .into_iter()
            .filter(|o| keep(o.as_str()))
            .map(|o| cfg.pipeline(cfg.finetune.regime, o, lr, epochs).with_label(o.as_str()))
            .collect(),
    };
    if grid.is_empty() {
        return Err(Error::Config(format!(
            "compare.only {:?} selects nothing",
            cfg.compare.only
        )));
    }
    Ok(grid)
}

pub fn cmd_compare(cfg: &ExperimentConfig, checkpoint_path: Option<&Path>, tuned: Option<&Path>) -> Result<Comparison> {
    let layout = Layout::new(cfg);
    echo_config(cfg, &layout)?;
    let ckpt = checkpoint_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| layout.checkpoint());
    let (model, ckpt_hash) = load_checkpoint(&ckpt)?;
    let data = load_dataset(cfg)?;
    let (lr, epochs) = step_settings(cfg, tuned, &layout)?;
    let mut grid = comparison_grid(cfg, lr, epochs)?;
    // Architectures without BN cannot run the BN-only regime; that row is
    // dropped rather than aborting the table.
    grid.retain(
        |p| match crate::training::select_trainable(&model, p.regime, p.train_scale) {
            Err(e @ Error::RegimeInapplicable { .. }) => {
                log::warn!("skipping {}: {e}", p.label);
                false
            }
            _ => true,
        },
    );
    if grid.is_empty() {
        return Err(Error::Config("no applicable condition in the comparison grid".into()));
    }
    let cmp = compare_conditions(
        &model,
        &grid,
        &data.novel,
        &cfg.episode_spec(cfg.eval.master_seed)?,
        cfg.eval.trials,
        &cfg.preprocess(),
    )?;
    let prov = Provenance::new(cfg, &[("dataset", &data.input_hash), ("checkpoint", &ckpt_hash)])?;
    write_csv(&layout.compare_csv(), &cmp.to_csv()?, &prov)?;
    let md = format!(
        "{}\n<!-- config_hash: {} dataset: {} checkpoint: {} -->\n",
        cmp.to_markdown(),
        prov.config_hash,
        data.input_hash,
        ckpt_hash
    );
    write(&layout.compare_markdown(), md)?;
    write_json(&layout.compare_json(), &cmp, &prov)?;
    for (i, r) in cmp.reports.iter().enumerate() {
        let name = format!("compare_{i}_episodes.csv");
        write_csv(&layout.reports().join(name), &r.to_csv()?, &prov)?;
    }
    Ok(cmp)
}

/// Writes the configured synthetic dataset as PNG files plus a split
/// manifest and returns the manifest path.
pub fn cmd_synth_data(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<PathBuf> {
    if cfg.dataset.manifest.is_some() {
        return Err(Error::Config(
            "synth-data needs a synthetic dataset block, not a manifest".into(),
        ));
    }
    let layout = Layout::new(cfg);
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| layout.data());
    let data = load_dataset(cfg)?;
    write_dataset(
        &dir,
        &[
            (Split::Base, &data.base),
            (Split::Val, &data.validation),
            (Split::Novel, &data.novel),
        ],
    )?;
    let prov = Provenance::new(cfg, &[("dataset", &data.input_hash)])?;
    write(&dir.join("provenance.json"), serde_json::to_string_pretty(&prov)?)?;
    Ok(dir.join("manifest.csv"))
}
