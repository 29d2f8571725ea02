//! Pretraining on base classes, fine-tuning on support sets under an update
//! regime, and validation-driven selection of learning rate and epochs.

pub mod optim;
pub mod tune;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::Array4;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::preprocess::{preprocess_train, stack_batch, PreprocessConfig};
use crate::data::{ClassSection, Image, Labeled};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{BnMode, ParamGroup};

pub use optim::{build_optimizer, Hyperparameters, Optimizer, OptimizerConfig, OptimizerKind};
pub use tune::{tune_hyperparams, CurvePoint, TuneConfig, TuneResult};

/// Which parameter groups fine-tuning may change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRegime {
    All,
    BnAndFc,
    FcOnly,
    None,
}

impl UpdateRegime {
    pub const ALL: [UpdateRegime; 4] = [
        UpdateRegime::All,
        UpdateRegime::BnAndFc,
        UpdateRegime::FcOnly,
        UpdateRegime::None,
    ];

    pub fn groups(self) -> &'static [ParamGroup] {
        match self {
            UpdateRegime::All => &[ParamGroup::ConvWeight, ParamGroup::BnAffine, ParamGroup::Classifier],
            UpdateRegime::BnAndFc => &[ParamGroup::BnAffine, ParamGroup::Classifier],
            UpdateRegime::FcOnly => &[ParamGroup::Classifier],
            UpdateRegime::None => &[],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            UpdateRegime::All => "all",
            UpdateRegime::BnAndFc => "bn_fc",
            UpdateRegime::FcOnly => "fc",
            UpdateRegime::None => "none",
        }
    }

    /// Column label used in comparison tables.
    pub fn label(self) -> &'static str {
        match self {
            UpdateRegime::All => "All",
            UpdateRegime::BnAndFc => "BN & FC",
            UpdateRegime::FcOnly => "FC",
            UpdateRegime::None => "w/o FT",
        }
    }
}

impl fmt::Display for UpdateRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UpdateRegime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(UpdateRegime::All),
            "bn_fc" | "bn_and_fc" => Ok(UpdateRegime::BnAndFc),
            "fc" | "fc_only" => Ok(UpdateRegime::FcOnly),
            "none" => Ok(UpdateRegime::None),
            other => Err(Error::UnknownRegime(other.to_string())),
        }
    }
}

/// BN behavior during fine-tuning steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnFinetuneMode {
    /// Batch statistics; running estimates keep updating.
    Train,
    /// Stored running statistics; nothing about BN state changes.
    Frozen,
}

impl BnFinetuneMode {
    /// Batch statistics apply only when the regime updates BN layers; with a
    /// classifier-only regime the backbone stays exactly as pretrained.
    fn bn_mode(self, regime: UpdateRegime) -> BnMode {
        match self {
            BnFinetuneMode::Train if regime.groups().contains(&ParamGroup::BnAffine) => BnMode::Batch,
            _ => BnMode::Running,
        }
    }
}

/// Layer paths of the parameters a regime may update. The head's scale is
/// included only when `train_scale` is set.
pub fn select_trainable(model: &Model, regime: UpdateRegime, train_scale: bool) -> Result<BTreeSet<String>> {
    // A BN-only variant is meaningless without BN layers; `all` simply
    // covers whatever groups the architecture has.
    if regime == UpdateRegime::BnAndFc && !model.has_group(ParamGroup::BnAffine) {
        return Err(Error::RegimeInapplicable {
            regime: regime.to_string(),
            group: ParamGroup::BnAffine.to_string(),
        });
    }
    Ok(model
        .params()
        .into_iter()
        .filter(|p| regime.groups().contains(&p.tag.group))
        .filter(|p| train_scale || p.tag.layer_path != "head.scale")
        .map(|p| p.tag.layer_path.clone())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub regime: UpdateRegime,
    pub optimizer: OptimizerConfig,
    /// One epoch is one full-support step.
    pub epochs: usize,
    pub bn_mode: BnFinetuneMode,
    pub train_scale: bool,
    pub seed: u64,
}

impl FinetuneConfig {
    pub fn new(regime: UpdateRegime, optimizer: OptimizerConfig, epochs: usize, seed: u64) -> Self {
        FinetuneConfig {
            regime,
            optimizer,
            epochs,
            bn_mode: BnFinetuneMode::Train,
            train_scale: true,
            seed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FinetuneLog {
    /// Support loss of each step, measured before that step's update.
    pub losses: Vec<f64>,
    pub batch_sizes: Vec<usize>,
}

fn augmented_batch(items: &[&Image], preprocess: &PreprocessConfig, rng: &mut ChaCha8Rng) -> Result<Array4<f64>> {
    let tensors = items
        .iter()
        .map(|img| preprocess_train(img, preprocess, rng))
        .collect::<Result<Vec<_>>>()?;
    stack_batch(&tensors)
}

/// Fine-tunes on the full support set, calling `after_epoch(epoch, model,
/// loss)` after every step (epochs are 1-based). Regime `none` or zero
/// epochs leave the model untouched and never build an optimizer.
pub fn finetune_with<F>(
    model: &mut Model,
    support: &[Labeled<Arc<Image>>],
    config: &FinetuneConfig,
    preprocess: &PreprocessConfig,
    mut after_epoch: F,
) -> Result<FinetuneLog>
where
    F: FnMut(usize, &Model, f64) -> Result<()>,
{
    let mut log = FinetuneLog::default();
    if config.regime == UpdateRegime::None || config.epochs == 0 {
        return Ok(log);
    }
    if support.is_empty() {
        return Err(Error::InvalidArgument("empty support set".into()));
    }
    let trainable = select_trainable(model, config.regime, config.train_scale)?;
    let mut optimizer = build_optimizer(&config.optimizer, &trainable)?;
    let backbone_grad = model
        .backbone
        .params()
        .iter()
        .any(|p| trainable.contains(&p.tag.layer_path));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let images: Vec<&Image> = support.iter().map(|l| l.item.as_ref()).collect();
    let labels: Vec<usize> = support.iter().map(|l| l.label).collect();
    let mut last_finite = None;
    for epoch in 1..=config.epochs {
        let batch = augmented_batch(&images, preprocess, &mut rng)?;
        model.zero_grad();
        let stats = model.loss_and_grad(batch, &labels, config.bn_mode.bn_mode(config.regime), backbone_grad)?;
        let grads_finite = model.params().iter().all(|p| p.grad.iter().all(|g| g.is_finite()));
        if !stats.loss.is_finite() || !grads_finite {
            model.clear_cache();
            return Err(Error::NonFiniteLoss { epoch, last_finite });
        }
        last_finite = Some(stats.loss);
        optimizer.step(model.params_mut());
        model.head.project()?;
        log.losses.push(stats.loss);
        log.batch_sizes.push(stats.batch_size);
        after_epoch(epoch, model, stats.loss)?;
    }
    model.zero_grad();
    Ok(log)
}

pub fn finetune(
    model: &mut Model,
    support: &[Labeled<Arc<Image>>],
    config: &FinetuneConfig,
    preprocess: &PreprocessConfig,
) -> Result<FinetuneLog> {
    finetune_with(model, support, config, preprocess, |_, _, _| Ok(()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub train_scale: bool,
    pub seed: u64,
}

impl Default for PretrainConfig {
    /// Adam at 0.001; the full 600-epoch schedule is [`PretrainConfig::full_scale`].
    fn default() -> Self {
        PretrainConfig {
            optimizer: OptimizerConfig::new(OptimizerKind::Adam, 0.001),
            epochs: 30,
            batch_size: 64,
            train_scale: true,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn full_scale() -> Self {
        PretrainConfig {
            epochs: 600,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainLog {
    pub epochs: Vec<EpochStats>,
    /// Set when the loss never improved on its first epoch.
    pub warning: Option<String>,
}

impl PretrainLog {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.accuracy)
    }

    /// `epoch,loss,accuracy` CSV.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["epoch", "loss", "accuracy"])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                format!("{:.10}", e.loss),
                format!("{:.10}", e.accuracy),
            ])?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Config(e.to_string()))?).expect("csv is utf-8"))
    }
}

/// Cross-entropy training of backbone and head over `base` with augmented
/// minibatches. Labels follow the sorted class order of `base`, which must
/// match the head's class list.
pub fn pretrain(
    model: &mut Model,
    base: &ClassSection<Arc<Image>>,
    preprocess: &PreprocessConfig,
    config: &PretrainConfig,
) -> Result<PretrainLog> {
    if base.is_empty() || base.values().all(Vec::is_empty) {
        return Err(Error::InvalidArgument("empty base section".into()));
    }
    let classes: Vec<String> = base.keys().cloned().collect();
    if model.head.class_ids() != classes.as_slice() {
        return Err(Error::HeadMismatch(format!(
            "head has {} classes, base section has {}",
            model.head.num_classes(),
            classes.len()
        )));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    let mut log = PretrainLog::default();
    if config.epochs == 0 {
        return Ok(log);
    }
    let trainable = select_trainable(model, UpdateRegime::All, config.train_scale)?;
    let mut optimizer = build_optimizer(&config.optimizer, &trainable)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut items: Vec<(&Image, usize)> = base
        .values()
        .enumerate()
        .flat_map(|(label, imgs)| imgs.iter().map(move |img| (img.as_ref(), label)))
        .collect();
    for epoch in 1..=config.epochs {
        items.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0, 0);
        for chunk in items.chunks(config.batch_size) {
            let imgs: Vec<&Image> = chunk.iter().map(|(i, _)| *i).collect();
            let labels: Vec<usize> = chunk.iter().map(|(_, l)| *l).collect();
            let batch = augmented_batch(&imgs, preprocess, &mut rng)?;
            model.zero_grad();
            let stats = model.loss_and_grad(batch, &labels, BnMode::Batch, true)?;
            if !stats.loss.is_finite() {
                model.clear_cache();
                return Err(Error::NonFiniteLoss {
                    epoch,
                    last_finite: log.epochs.last().map(|e| e.loss),
                });
            }
            optimizer.step(model.params_mut());
            model.head.project()?;
            loss_sum += stats.loss * stats.batch_size as f64;
            correct += stats.correct;
            seen += stats.batch_size;
        }
        let stats = EpochStats {
            epoch,
            loss: loss_sum / seen as f64,
            accuracy: correct as f64 / seen as f64,
        };
        log::debug!(
            "pretrain epoch {epoch}: loss {:.4} acc {:.3}",
            stats.loss,
            stats.accuracy
        );
        log.epochs.push(stats);
    }
    model.zero_grad();
    let first = log.epochs[0].loss;
    let best = log.epochs.iter().map(|e| e.loss).fold(f64::INFINITY, f64::min);
    if log.epochs.len() > 1 && best >= first {
        log.warning = Some(format!("loss did not decrease: first epoch {first:.6}, best {best:.6}"));
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{Architecture, BackboneSpec};
    use crate::classifier::HeadKind;
    use crate::data::{make_synthetic_dataset, sample_episode, EpisodeSpec, SyntheticSpec};

    fn ref_model(head: HeadKind, classes: usize) -> Model {
        let ids = (0..classes).map(|i| format!("c{i}")).collect();
        Model::new(&BackboneSpec::new(Architecture::ReferenceConvnet, 32), head, ids, 1).unwrap()
    }

    fn snapshot(model: &Model) -> Vec<(String, ndarray::ArrayD<f64>)> {
        model
            .params()
            .into_iter()
            .map(|p| (p.tag.layer_path.clone(), p.value.clone()))
            .collect()
    }

    fn support_episode(seed: u64) -> Vec<Labeled<Arc<Image>>> {
        let data = make_synthetic_dataset(&SyntheticSpec::new(6, 8, 32, seed)).unwrap();
        sample_episode(&data, &EpisodeSpec::new(5, 5, 1, seed).unwrap())
            .unwrap()
            .support
    }

    #[test]
    fn regime_selection() {
        let m = ref_model(HeadKind::Normalized, 5);
        let fc = select_trainable(&m, UpdateRegime::FcOnly, true).unwrap();
        assert_eq!(fc, ["head.scale".to_string(), "head.weight".to_string()].into());
        let fc_fixed_s = select_trainable(&m, UpdateRegime::FcOnly, false).unwrap();
        assert_eq!(fc_fixed_s, ["head.weight".to_string()].into());
        let all = select_trainable(&m, UpdateRegime::All, true).unwrap();
        assert_eq!(all.len(), m.params().len());
        assert!(select_trainable(&m, UpdateRegime::None, true).unwrap().is_empty());
        let bn = select_trainable(&m, UpdateRegime::BnAndFc, true).unwrap();
        assert!(bn
            .iter()
            .all(|p| p.starts_with("head.") || p.ends_with("gamma") || p.ends_with("beta")));
    }

    #[test]
    fn bn_regime_inapplicable_without_bn() {
        let m = Model::new(
            &BackboneSpec::new(Architecture::Vgg16Gap, 32),
            HeadKind::Normalized,
            vec!["a".into(), "b".into()],
            0,
        )
        .unwrap();
        let err = select_trainable(&m, UpdateRegime::BnAndFc, true).unwrap_err();
        assert!(err.to_string().contains("regime inapplicable"));
        assert!(select_trainable(&m, UpdateRegime::All, true).is_ok());
    }

    #[test]
    fn regime_parsing() {
        for r in UpdateRegime::ALL {
            assert_eq!(r.as_str().parse::<UpdateRegime>().unwrap(), r);
        }
        assert!("some".parse::<UpdateRegime>().is_err());
    }

    #[test]
    fn regime_none_is_a_no_op() {
        let mut m = ref_model(HeadKind::Normalized, 5);
        let before = snapshot(&m);
        let cfg = FinetuneConfig::new(UpdateRegime::None, OptimizerConfig::new(OptimizerKind::Adam, 0.1), 5, 0);
        let log = finetune(&mut m, &support_episode(1), &cfg, &PreprocessConfig::toy()).unwrap();
        assert!(log.losses.is_empty());
        assert_eq!(snapshot(&m), before);
    }

    #[test]
    fn fc_only_freezes_backbone_and_uses_full_support() {
        let mut m = ref_model(HeadKind::Normalized, 5);
        let before = snapshot(&m);
        let cfg = FinetuneConfig::new(
            UpdateRegime::FcOnly,
            OptimizerConfig::new(OptimizerKind::Adam, 0.01),
            5,
            0,
        );
        let log = finetune(&mut m, &support_episode(2), &cfg, &PreprocessConfig::toy()).unwrap();
        assert_eq!(log.batch_sizes, vec![25; 5]);
        for ((path, old), p) in before.iter().zip(m.params()) {
            if path.starts_with("backbone.") {
                assert_eq!(old, &p.value, "{path} changed");
            }
        }
        assert_ne!(before.last().unwrap().1, m.params().last().unwrap().value);
        if let crate::classifier::Head::Normalized(h) = &m.head {
            for c in h.weight_matrix().columns() {
                assert!((c.dot(&c).sqrt() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pretrain_zero_epochs_is_identity() {
        let data = make_synthetic_dataset(&SyntheticSpec::new(3, 4, 32, 0)).unwrap();
        let ids: Vec<String> = data.keys().cloned().collect();
        let mut m = Model::new(
            &BackboneSpec::new(Architecture::ReferenceConvnet, 32),
            HeadKind::Normalized,
            ids,
            0,
        )
        .unwrap();
        let before = snapshot(&m);
        let cfg = PretrainConfig {
            epochs: 0,
            ..PretrainConfig::default()
        };
        let log = pretrain(&mut m, &data, &PreprocessConfig::toy(), &cfg).unwrap();
        assert!(log.epochs.is_empty());
        assert_eq!(snapshot(&m), before);
    }

    #[test]
    fn pretrain_checks_head_classes() {
        let data = make_synthetic_dataset(&SyntheticSpec::new(3, 4, 32, 0)).unwrap();
        let mut m = ref_model(HeadKind::Normalized, 3);
        let err = pretrain(&mut m, &data, &PreprocessConfig::toy(), &PretrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::HeadMismatch(_)));
    }

    #[test]
    fn huge_learning_rate_surfaces_non_finite_loss() {
        let mut m = ref_model(HeadKind::Simple, 5);
        let cfg = FinetuneConfig::new(
            UpdateRegime::All,
            OptimizerConfig::new(OptimizerKind::MomentumSgd, 1e200),
            4,
            0,
        );
        let err = finetune(&mut m, &support_episode(3), &cfg, &PreprocessConfig::toy()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { .. }), "{err}");
    }
}
