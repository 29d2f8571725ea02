//! Fine-tunes one 5-way 5-shot episode under each update regime and shows
//! which parameter groups moved and how query accuracy changed.

use fsf::backbone::{Architecture, BackboneSpec};
use fsf::classifier::{HeadKind, SvmConfig};
use fsf::data::preprocess::PreprocessConfig;
use fsf::data::{make_synthetic_dataset, EpisodeSpec, SyntheticSpec};
use fsf::evaluation::PreparedEpisode;
use fsf::model::Model;
use fsf::nn::ParamGroup;
use fsf::training::{finetune, FinetuneConfig, OptimizerConfig, OptimizerKind, UpdateRegime};

fn main() -> fsf::Result<()> {
    let pre = PreprocessConfig::toy();
    let novel = make_synthetic_dataset(&SyntheticSpec::new(6, 12, 36, 5))?;
    let prep = PreparedEpisode::sample(&novel, &EpisodeSpec::new(5, 5, 5, 9)?, &pre)?;
    let backbone = BackboneSpec::new(Architecture::ReferenceConvnet, 32);

    for head in [HeadKind::Normalized, HeadKind::Simple] {
        let pretrained = Model::new(&backbone, head, vec!["a".into(), "b".into()], 0)?;
        let start = prep.init_model(&pretrained, &SvmConfig::default())?;
        println!(
            "{head:?} head, initial query accuracy {:.3}",
            prep.query_accuracy(&start)?
        );
        for regime in UpdateRegime::ALL {
            let mut model = start.clone();
            let cfg = FinetuneConfig::new(regime, OptimizerConfig::new(OptimizerKind::Adam, 0.001), 5, 1);
            let log = finetune(&mut model, &prep.episode.support, &cfg, &pre)?;
            let moved: Vec<&str> = ParamGroup::ALL
                .into_iter()
                .filter(|g| {
                    start
                        .params()
                        .iter()
                        .zip(model.params())
                        .any(|(a, b)| a.tag.group == *g && a.value != b.value)
                })
                .map(|g| g.as_str())
                .collect();
            println!(
                "  {:<7} losses {:?} moved {:?} accuracy {:.3}",
                regime.label(),
                log.losses.iter().map(|l| format!("{l:.3}")).collect::<Vec<_>>(),
                moved,
                prep.query_accuracy(&model)?
            );
        }
    }
    Ok(())
}
