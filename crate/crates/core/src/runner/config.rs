use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbone::{Architecture, BackboneSpec};
use crate::classifier::{HeadKind, SvmConfig};
use crate::data::preprocess::PreprocessConfig;
use crate::data::{ClassGeometry, DomainStyle, EpisodeSpec, DEFAULT_QUERY};
use crate::error::{Error, Result};
use crate::evaluation::PipelineConfig;
use crate::training::{
    BnFinetuneMode, Hyperparameters, OptimizerConfig, OptimizerKind, PretrainConfig, TuneConfig, UpdateRegime,
};

/// Named bundles of overrides applied on top of the defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// 84-pixel crops, full 600-trial evaluation.
    Low,
    /// 224-pixel crops, 600 pretraining epochs, full evaluation.
    High,
    /// Desk-scale cross-domain benchmark on 36-pixel synthetic images.
    CrossToy,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(Preset::Low),
            "high" => Ok(Preset::High),
            "cross-toy" | "cross_toy" => Ok(Preset::CrossToy),
            other => Err(Error::Config(format!(
                "unknown preset {other:?}; expected low, high or cross-toy"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    Toy,
    Low,
    High,
}

impl Resolution {
    pub fn preprocess(self) -> PreprocessConfig {
        match self {
            Resolution::Toy => PreprocessConfig::toy(),
            Resolution::Low => PreprocessConfig::low_resolution(),
            Resolution::High => PreprocessConfig::high_resolution(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainPreset {
    /// Every split drawn from the source style.
    Single,
    /// Base classes from the source style, validation and novel classes
    /// from the target style.
    Cross,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticBlock {
    pub base_classes: usize,
    pub validation_classes: usize,
    pub novel_classes: usize,
    pub base_examples: usize,
    pub eval_examples: usize,
    pub seed: u64,
    pub geometry: ClassGeometry,
    pub source_style: DomainStyle,
    pub target_style: DomainStyle,
}

impl Default for SyntheticBlock {
    fn default() -> Self {
        SyntheticBlock {
            base_classes: 16,
            validation_classes: 8,
            novel_classes: 10,
            base_examples: 30,
            eval_examples: 20,
            seed: 1,
            geometry: ClassGeometry::default(),
            source_style: DomainStyle::source(),
            target_style: DomainStyle::target(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetBlock {
    /// Split manifest CSV; when absent a synthetic dataset is generated.
    pub manifest: Option<PathBuf>,
    pub resolution: Resolution,
    pub domain: DomainPreset,
    pub synthetic: SyntheticBlock,
}

impl Default for DatasetBlock {
    fn default() -> Self {
        DatasetBlock {
            manifest: None,
            resolution: Resolution::Toy,
            domain: DomainPreset::Cross,
            synthetic: SyntheticBlock::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneBlock {
    pub architecture: Architecture,
    pub seed: u64,
}

impl Default for BackboneBlock {
    fn default() -> Self {
        BackboneBlock {
            architecture: Architecture::ReferenceConvnet,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadBlock {
    pub kind: HeadKind,
    pub svm: SvmConfig,
}

impl Default for HeadBlock {
    fn default() -> Self {
        HeadBlock {
            kind: HeadKind::Normalized,
            svm: SvmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainBlock {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub train_scale: bool,
    pub seed: u64,
}

impl Default for PretrainBlock {
    fn default() -> Self {
        PretrainBlock {
            optimizer: OptimizerKind::Adam,
            lr: 0.001,
            epochs: 30,
            batch_size: 64,
            train_scale: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneBlock {
    pub regime: UpdateRegime,
    pub optimizer: OptimizerKind,
    pub hyper: Hyperparameters,
    pub lr_candidates: Vec<f64>,
    pub max_epochs: usize,
    pub tuning_trials: usize,
    pub bn_mode: BnFinetuneMode,
    pub train_scale: bool,
    /// Used by `benchmark`/`compare` when no tuned file exists.
    pub lr: f64,
    pub epochs: usize,
}

impl Default for FinetuneBlock {
    fn default() -> Self {
        FinetuneBlock {
            regime: UpdateRegime::All,
            optimizer: OptimizerKind::Adam,
            hyper: Hyperparameters::default(),
            lr_candidates: crate::training::tune::DEFAULT_LR_CANDIDATES.to_vec(),
            max_epochs: 100,
            tuning_trials: 20,
            bn_mode: BnFinetuneMode::Train,
            train_scale: true,
            lr: 0.001,
            epochs: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalBlock {
    pub n_way: usize,
    pub k_shot: usize,
    pub q_query: usize,
    pub trials: usize,
    pub master_seed: u64,
    /// Master seed of validation episodes used for tuning.
    pub tuning_seed: u64,
}

impl Default for EvalBlock {
    fn default() -> Self {
        EvalBlock {
            n_way: 5,
            k_shot: 5,
            q_query: DEFAULT_QUERY,
            trials: 600,
            master_seed: 0,
            tuning_seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    /// all, bn_fc, fc, none with the configured optimizer.
    Regimes,
    /// The seven optimizers under the configured regime.
    Optimizers,
}

impl FromStr for GridKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regimes" => Ok(GridKind::Regimes),
            "optimizers" => Ok(GridKind::Optimizers),
            other => Err(Error::Config(format!(
                "unknown grid {other:?}; expected regimes or optimizers"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareBlock {
    pub grid: GridKind,
    /// Restricts the grid to these entries (regime or optimizer names).
    pub only: Vec<String>,
}

impl Default for CompareBlock {
    fn default() -> Self {
        CompareBlock {
            grid: GridKind::Regimes,
            only: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub output_dir: PathBuf,
    pub dataset: DatasetBlock,
    pub backbone: BackboneBlock,
    pub head: HeadBlock,
    pub pretrain: PretrainBlock,
    pub finetune: FinetuneBlock,
    pub eval: EvalBlock,
    pub compare: CompareBlock,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            output_dir: PathBuf::from("runs"),
            dataset: DatasetBlock::default(),
            backbone: BackboneBlock::default(),
            head: HeadBlock::default(),
            pretrain: PretrainBlock::default(),
            finetune: FinetuneBlock::default(),
            eval: EvalBlock::default(),
            compare: CompareBlock::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let mut c = Self::default();
        match preset {
            Preset::Low => {
                c.name = "low".into();
                c.dataset.resolution = Resolution::Low;
            }
            Preset::High => {
                c.name = "high".into();
                c.dataset.resolution = Resolution::High;
                c.pretrain.epochs = PretrainConfig::full_scale().epochs;
            }
            Preset::CrossToy => {
                c.name = "cross-toy".into();
                c.dataset.resolution = Resolution::Toy;
                c.dataset.domain = DomainPreset::Cross;
                c.pretrain.epochs = 15;
                c.finetune.max_epochs = 20;
                c.finetune.tuning_trials = 8;
                c.eval.trials = 100;
            }
        }
        c
    }

    /// Parses TOML on top of the defaults (or of `base` when given).
    pub fn from_toml(text: &str, base: Option<Preset>) -> Result<Self> {
        let value: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let start = base.map(Self::preset).unwrap_or_default();
        let mut merged = toml::Value::try_from(&start).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, value);
        let cfg: ExperimentConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path, base: Option<Preset>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, base)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(format!("invalid experiment name {:?}", self.name)));
        }
        self.preprocess().validate()?;
        self.episode_spec(self.eval.master_seed)?;
        OptimizerConfig::new(self.pretrain.optimizer, self.pretrain.lr).validate()?;
        OptimizerConfig::new(self.finetune.optimizer, self.finetune.lr).validate()?;
        for &lr in &self.finetune.lr_candidates {
            OptimizerConfig::new(self.finetune.optimizer, lr).validate()?;
        }
        if self.finetune.lr_candidates.is_empty() {
            return Err(Error::Config("finetune.lr_candidates is empty".into()));
        }
        if self.eval.trials == 0 || self.finetune.tuning_trials == 0 {
            return Err(Error::Config("trial counts must be positive".into()));
        }
        if self.pretrain.batch_size == 0 {
            return Err(Error::Config("pretrain.batch_size must be positive".into()));
        }
        Ok(())
    }

    pub fn preprocess(&self) -> PreprocessConfig {
        self.dataset.resolution.preprocess()
    }

    pub fn backbone_spec(&self) -> BackboneSpec {
        BackboneSpec::new(self.backbone.architecture, self.preprocess().train_crop_size)
    }

    /// Side length of generated synthetic images.
    pub fn synthetic_image_size(&self) -> usize {
        self.preprocess().eval_resize
    }

    pub fn episode_spec(&self, seed: u64) -> Result<EpisodeSpec> {
        EpisodeSpec::new(self.eval.n_way, self.eval.k_shot, self.eval.q_query, seed)
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            optimizer: OptimizerConfig::new(self.pretrain.optimizer, self.pretrain.lr),
            epochs: self.pretrain.epochs,
            batch_size: self.pretrain.batch_size,
            train_scale: self.pretrain.train_scale,
            seed: self.pretrain.seed,
        }
    }

    pub fn tune_config(&self) -> TuneConfig {
        TuneConfig {
            lr_candidates: self.finetune.lr_candidates.clone(),
            max_epochs: self.finetune.max_epochs,
            trials: self.finetune.tuning_trials,
            regime: self.finetune.regime,
            optimizer: self.finetune.optimizer,
            hyper: self.finetune.hyper.clone(),
            bn_mode: self.finetune.bn_mode,
            train_scale: self.finetune.train_scale,
            svm: self.head.svm.clone(),
        }
    }

    /// Pipeline for `regime` and `optimizer` with the given step settings.
    pub fn pipeline(&self, regime: UpdateRegime, optimizer: OptimizerKind, lr: f64, epochs: usize) -> PipelineConfig {
        PipelineConfig {
            label: format!("{} / {}", regime.label(), optimizer),
            regime,
            optimizer: OptimizerConfig {
                name: optimizer,
                learning_rate: lr,
                hyper: self.finetune.hyper.clone(),
            },
            epochs: if regime == UpdateRegime::None { 0 } else { epochs },
            bn_mode: self.finetune.bn_mode,
            train_scale: self.finetune.train_scale,
            svm: self.head.svm.clone(),
        }
    }

    pub fn experiment_dir(&self) -> PathBuf {
        self.output_dir.join(&self.name)
    }
}

fn merge(into: &mut toml::Value, from: toml::Value) {
    match (into, from) {
        (toml::Value::Table(a), toml::Value::Table(b)) => {
            for (k, v) in b {
                match a.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        a.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
