//! Learning-rate and epoch selection on validation episodes.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    finetune_with, BnFinetuneMode, FinetuneConfig, Hyperparameters, OptimizerConfig, OptimizerKind, UpdateRegime,
};
use crate::classifier::{softmax_cross_entropy, SvmConfig};
use crate::data::preprocess::PreprocessConfig;
use crate::data::{ClassSection, EpisodeSpec, Image};
use crate::error::{Error, Result};
use crate::evaluation::{csv_string, episode_seed, par_map_indexed, PreparedEpisode};
use crate::model::Model;
use crate::util::mix_seed;

pub const DEFAULT_LR_CANDIDATES: [f64; 3] = [0.01, 0.001, 0.0001];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneConfig {
    pub lr_candidates: Vec<f64>,
    pub max_epochs: usize,
    pub trials: usize,
    pub regime: UpdateRegime,
    pub optimizer: OptimizerKind,
    pub hyper: Hyperparameters,
    pub bn_mode: BnFinetuneMode,
    pub train_scale: bool,
    pub svm: SvmConfig,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            lr_candidates: DEFAULT_LR_CANDIDATES.to_vec(),
            max_epochs: 100,
            trials: 20,
            regime: UpdateRegime::All,
            optimizer: OptimizerKind::Adam,
            hyper: Hyperparameters::default(),
            bn_mode: BnFinetuneMode::Train,
            train_scale: true,
            svm: SvmConfig::default(),
        }
    }
}

/// One row of the validation curves. Epoch 0 is the imprinted (or
/// SVM-initialized) head before any step and is repeated for every lr.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub lr: f64,
    pub episode: usize,
    pub epoch: usize,
    /// Eval-mode cross-entropy on the support set.
    pub loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best_lr: f64,
    /// Zero when no (lr, epoch) beat the untuned baseline.
    pub best_epochs: usize,
    pub best_accuracy: f64,
    pub baseline_accuracy: f64,
    /// Sorted by lr, episode, epoch.
    pub curves: Vec<CurvePoint>,
}

impl TuneResult {
    /// Mean validation accuracy over episodes for each `(lr, epoch)`.
    pub fn mean_curve(&self, lr: f64) -> Vec<f64> {
        mean_curve(&self.curves, lr)
    }

    /// `lr,episode,epoch,loss,val_accuracy`
    pub fn curves_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["lr", "episode", "epoch", "loss", "val_accuracy"])?;
        for p in &self.curves {
            w.write_record([
                p.lr.to_string(),
                p.episode.to_string(),
                p.epoch.to_string(),
                p.loss.to_string(),
                p.val_accuracy.to_string(),
            ])?;
        }
        csv_string(w)
    }
}

fn mean_curve(curves: &[CurvePoint], lr: f64) -> Vec<f64> {
    let pts: Vec<&CurvePoint> = curves.iter().filter(|p| p.lr == lr).collect();
    let epochs = pts.iter().map(|p| p.epoch).max().map_or(0, |m| m + 1);
    let mut sums = vec![0.0; epochs];
    let mut counts = vec![0usize; epochs];
    for p in pts {
        sums[p.epoch] += p.val_accuracy;
        counts[p.epoch] += 1;
    }
    sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect()
}

fn support_loss_and_accuracy(model: &Model, prep: &PreparedEpisode) -> Result<(f64, f64)> {
    let logits = model.logits(&prep.support_batch)?;
    let (loss, _) = softmax_cross_entropy(&logits, &prep.episode.support_labels());
    Ok((loss, prep.query_accuracy(model)?))
}

/// Runs `trials` validation episodes per learning rate, tracking query
/// accuracy after every epoch, and picks the `(lr, epochs)` pair with the
/// highest mean. Ties go to the smaller lr, then fewer epochs. When nothing
/// beats the epoch-0 mean the result is 0 epochs at the smallest lr.
/// `spec.seed` is the master seed; every lr sees the same episodes.
pub fn tune_hyperparams(
    pretrained: &Model,
    validation: &ClassSection<Arc<Image>>,
    spec: &EpisodeSpec,
    config: &TuneConfig,
    preprocess: &PreprocessConfig,
) -> Result<TuneResult> {
    if config.lr_candidates.is_empty() {
        return Err(Error::InvalidArgument("lr_candidates is empty".into()));
    }
    if config.trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    let mut lrs = config.lr_candidates.clone();
    for &lr in &lrs {
        OptimizerConfig::new(config.optimizer, lr).validate()?;
    }
    lrs.sort_by(f64::total_cmp);
    lrs.dedup();
    let steps = if config.regime == UpdateRegime::None {
        0
    } else {
        config.max_epochs
    };
    if steps > 0 {
        super::select_trainable(pretrained, config.regime, config.train_scale)?;
    }

    let per_episode = par_map_indexed(config.trials, |i| -> Result<Vec<CurvePoint>> {
        let seed = episode_seed(spec.seed, i);
        let prep = PreparedEpisode::sample(validation, &spec.with_seed(seed), preprocess)?;
        let start = prep.init_model(pretrained, &config.svm)?;
        let (loss0, acc0) = support_loss_and_accuracy(&start, &prep)?;
        let mut points = Vec::with_capacity(lrs.len() * (steps + 1));
        for &lr in &lrs {
            points.push(CurvePoint {
                lr,
                episode: i,
                epoch: 0,
                loss: loss0,
                val_accuracy: acc0,
            });
            if steps == 0 {
                continue;
            }
            let mut model = start.clone();
            let ft = FinetuneConfig {
                regime: config.regime,
                optimizer: OptimizerConfig {
                    name: config.optimizer,
                    learning_rate: lr,
                    hyper: config.hyper.clone(),
                },
                epochs: steps,
                bn_mode: config.bn_mode,
                train_scale: config.train_scale,
                seed: mix_seed(seed, &[1]),
            };
            finetune_with(&mut model, &prep.episode.support, &ft, preprocess, |epoch, m, _| {
                let (loss, val_accuracy) = support_loss_and_accuracy(m, &prep)?;
                points.push(CurvePoint {
                    lr,
                    episode: i,
                    epoch,
                    loss,
                    val_accuracy,
                });
                Ok(())
            })?;
        }
        Ok(points)
    })?;

    let mut curves = Vec::new();
    for pts in per_episode {
        curves.extend(pts?);
    }
    curves.sort_by(|a, b| {
        a.lr.total_cmp(&b.lr)
            .then(a.episode.cmp(&b.episode))
            .then(a.epoch.cmp(&b.epoch))
    });

    let baseline = mean_curve(&curves, lrs[0])[0];
    let (mut best_lr, mut best_epochs, mut best_acc) = (lrs[0], 0, baseline);
    for &lr in &lrs {
        for (epoch, &acc) in mean_curve(&curves, lr).iter().enumerate().skip(1) {
            if acc > best_acc {
                (best_lr, best_epochs, best_acc) = (lr, epoch, acc);
            }
        }
    }
    Ok(TuneResult {
        best_lr,
        best_epochs,
        best_accuracy: best_acc,
        baseline_accuracy: baseline,
        curves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{Architecture, BackboneSpec};
    use crate::classifier::HeadKind;
    use crate::data::{make_synthetic_dataset, SyntheticSpec};

    fn setup() -> (Model, ClassSection<Arc<Image>>) {
        let data = make_synthetic_dataset(&SyntheticSpec::new(5, 6, 32, 9)).unwrap();
        let m = Model::new(
            &BackboneSpec::new(Architecture::ReferenceConvnet, 32),
            HeadKind::Normalized,
            vec!["a".into(), "b".into()],
            2,
        )
        .unwrap();
        (m, data)
    }

    #[test]
    fn zero_epochs_selects_baseline() {
        let (m, data) = setup();
        let cfg = TuneConfig {
            lr_candidates: vec![0.01],
            max_epochs: 0,
            trials: 2,
            ..TuneConfig::default()
        };
        let spec = EpisodeSpec::new(5, 1, 2, 4).unwrap();
        let r = tune_hyperparams(&m, &data, &spec, &cfg, &PreprocessConfig::toy()).unwrap();
        assert_eq!(r.best_epochs, 0);
        assert_eq!(r.curves.len(), 2);
        assert_eq!(r.best_accuracy, r.baseline_accuracy);
    }

    #[test]
    fn curves_cover_every_lr_episode_epoch() {
        let (m, data) = setup();
        let cfg = TuneConfig {
            lr_candidates: vec![0.001, 0.01],
            max_epochs: 2,
            trials: 2,
            regime: UpdateRegime::FcOnly,
            ..TuneConfig::default()
        };
        let spec = EpisodeSpec::new(5, 1, 2, 4).unwrap();
        let r = tune_hyperparams(&m, &data, &spec, &cfg, &PreprocessConfig::toy()).unwrap();
        assert_eq!(r.curves.len(), 2 * 2 * 3);
        assert!(r.best_accuracy >= r.baseline_accuracy);
        let csv = r.curves_csv().unwrap();
        assert!(csv.starts_with("lr,episode,epoch,loss,val_accuracy\n"));
        assert_eq!(csv.lines().count(), 13);
        assert_eq!(r.mean_curve(0.01).len(), 3);
    }
}
