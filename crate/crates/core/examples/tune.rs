//! Selects the fine-tuning learning rate and epoch count on validation
//! episodes and prints the mean validation curve per candidate.

use fsf::backbone::{Architecture, BackboneSpec};
use fsf::classifier::HeadKind;
use fsf::data::preprocess::PreprocessConfig;
use fsf::data::{make_synthetic_dataset, DomainStyle, EpisodeSpec, SyntheticSpec};
use fsf::model::Model;
use fsf::training::{pretrain, tune_hyperparams, PretrainConfig, TuneConfig};

fn main() -> fsf::Result<()> {
    let pre = PreprocessConfig::toy();
    let base = make_synthetic_dataset(&SyntheticSpec::new(8, 10, 36, 0))?;
    let mut val_spec = SyntheticSpec::new(6, 8, 36, 1);
    val_spec.class_offset = 8;
    val_spec.domain = DomainStyle::target();
    let validation = make_synthetic_dataset(&val_spec)?;

    let mut model = Model::new(
        &BackboneSpec::new(Architecture::ReferenceConvnet, 32),
        HeadKind::Normalized,
        base.keys().cloned().collect(),
        0,
    )?;
    pretrain(
        &mut model,
        &base,
        &pre,
        &PretrainConfig {
            epochs: 4,
            batch_size: 32,
            ..Default::default()
        },
    )?;

    let cfg = TuneConfig {
        max_epochs: 4,
        trials: 3,
        ..TuneConfig::default()
    };
    let result = tune_hyperparams(&model, &validation, &EpisodeSpec::new(5, 1, 3, 5)?, &cfg, &pre)?;
    for lr in &cfg.lr_candidates {
        let curve: Vec<String> = result.mean_curve(*lr).iter().map(|a| format!("{a:.3}")).collect();
        println!("lr {lr:<7} mean accuracy by epoch: {}", curve.join(" "));
    }
    println!(
        "selected lr {} with {} epochs: {:.3} (epoch-0 baseline {:.3})",
        result.best_lr, result.best_epochs, result.best_accuracy, result.baseline_accuracy
    );
    Ok(())
}
