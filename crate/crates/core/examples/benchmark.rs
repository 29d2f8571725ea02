//! Episodic benchmark of two pipelines on novel classes: the imprinted head
//! without fine-tuning and head-only fine-tuning. Prints the summary and
//! the per-episode CSV.

use fsf::backbone::{Architecture, BackboneSpec};
use fsf::classifier::HeadKind;
use fsf::data::preprocess::PreprocessConfig;
use fsf::data::{make_synthetic_dataset, DomainStyle, EpisodeSpec, SyntheticSpec};
use fsf::evaluation::{run_benchmark, PipelineConfig};
use fsf::model::Model;
use fsf::training::{pretrain, OptimizerConfig, OptimizerKind, PretrainConfig, UpdateRegime};

fn main() -> fsf::Result<()> {
    let trials = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(10);
    let pre = PreprocessConfig::toy();
    let base = make_synthetic_dataset(&SyntheticSpec::new(8, 10, 36, 0))?;
    let mut novel_spec = SyntheticSpec::new(6, 10, 36, 2);
    novel_spec.class_offset = 20;
    novel_spec.domain = DomainStyle::target();
    let novel = make_synthetic_dataset(&novel_spec)?;

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
            epochs: 5,
            batch_size: 32,
            ..Default::default()
        },
    )?;

    let spec = EpisodeSpec::new(5, 5, 5, 2024)?;
    let pipelines = [
        PipelineConfig::without_finetuning(),
        PipelineConfig::new(
            UpdateRegime::FcOnly,
            OptimizerConfig::new(OptimizerKind::Adam, 0.01),
            10,
        )
        .with_label("FC / adam"),
    ];
    for p in &pipelines {
        let report = run_benchmark(&model, p, &novel, &spec, trials, &pre)?;
        println!(
            "{}: {:.2} +- {:.2} % over {} episodes ({} failed)",
            report.metadata.label,
            100.0 * report.mean_accuracy.unwrap_or(f64::NAN),
            100.0 * report.ci95_halfwidth.unwrap_or(f64::NAN),
            report.trials,
            report.failed_episodes
        );
        print!("{}", report.to_csv()?);
    }
    Ok(())
}
