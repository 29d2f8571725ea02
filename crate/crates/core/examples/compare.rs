//! Compares all update regimes on shared, paired episodes and prints the
//! results table plus the paired difference of each regime against the
//! no-fine-tuning baseline.

use fsf::backbone::{Architecture, BackboneSpec};
use fsf::classifier::HeadKind;
use fsf::data::preprocess::PreprocessConfig;
use fsf::data::{make_synthetic_dataset, DomainStyle, EpisodeSpec, SyntheticSpec};
use fsf::evaluation::{compare_conditions, PipelineConfig};
use fsf::model::Model;
use fsf::training::{pretrain, OptimizerConfig, OptimizerKind, PretrainConfig, UpdateRegime};

fn main() -> fsf::Result<()> {
    let trials = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(8);
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

    let grid: Vec<PipelineConfig> = UpdateRegime::ALL
        .into_iter()
        .map(|r| {
            let epochs = if r == UpdateRegime::None { 0 } else { 8 };
            PipelineConfig::new(r, OptimizerConfig::new(OptimizerKind::Adam, 1e-3), epochs).with_label(r.label())
        })
        .collect();
    let cmp = compare_conditions(&model, &grid, &novel, &EpisodeSpec::new(5, 5, 5, 7)?, trials, &pre)?;
    print!("{}", cmp.to_markdown());
    let baseline = grid.len() - 1;
    for (i, p) in grid.iter().enumerate().take(baseline) {
        if let Some(d) = cmp.paired(i, baseline) {
            println!(
                "{} minus w/o FT: {:+.2} +- {:.2} pp",
                p.label,
                100.0 * d.mean,
                100.0 * d.ci95
            );
        }
    }
    Ok(())
}
