//! Runs every supported optimizer on the same episode under regime `all`
//! and prints the support-loss trajectory.

use fsf::backbone::{Architecture, BackboneSpec};
use fsf::classifier::{HeadKind, SvmConfig};
use fsf::data::preprocess::PreprocessConfig;
use fsf::data::{make_synthetic_dataset, EpisodeSpec, SyntheticSpec};
use fsf::evaluation::PreparedEpisode;
use fsf::model::Model;
use fsf::training::{finetune, FinetuneConfig, OptimizerConfig, OptimizerKind, UpdateRegime};

fn main() -> fsf::Result<()> {
    let pre = PreprocessConfig::toy();
    let novel = make_synthetic_dataset(&SyntheticSpec::new(5, 10, 36, 3))?;
    let prep = PreparedEpisode::sample(&novel, &EpisodeSpec::new(5, 5, 5, 4)?, &pre)?;
    let backbone = BackboneSpec::new(Architecture::ReferenceConvnet, 32);
    let pretrained = Model::new(&backbone, HeadKind::Normalized, vec!["x".into()], 0)?;
    let start = prep.init_model(&pretrained, &SvmConfig::default())?;

    println!("{:<12} {:>8}  loss per epoch", "optimizer", "adaptive");
    for kind in OptimizerKind::ALL {
        let lr = if kind.is_adaptive() { 1e-3 } else { 1e-2 };
        let mut model = start.clone();
        let cfg = FinetuneConfig::new(UpdateRegime::All, OptimizerConfig::new(kind, lr), 6, 0);
        let log = finetune(&mut model, &prep.episode.support, &cfg, &pre)?;
        let losses: Vec<String> = log.losses.iter().map(|l| format!("{l:.3}")).collect();
        println!(
            "{:<12} {:>8}  {}  (query acc {:.3})",
            kind.as_str(),
            if kind.is_adaptive() { "yes" } else { "no" },
            losses.join(" "),
            prep.query_accuracy(&model)?
        );
    }
    Ok(())
}
