//! Pretrains the reference convnet with a normalized head on synthetic base
//! classes, then saves and reloads the checkpoint.

use fsf::backbone::{Architecture, BackboneSpec};
use fsf::checkpoint;
use fsf::classifier::HeadKind;
use fsf::data::preprocess::PreprocessConfig;
use fsf::data::{make_synthetic_dataset, SyntheticSpec};
use fsf::model::Model;
use fsf::training::{pretrain, PretrainConfig};

fn main() -> fsf::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(8);
    let base = make_synthetic_dataset(&SyntheticSpec::new(8, 12, 36, 0))?;
    let ids = base.keys().cloned().collect();
    let mut model = Model::new(
        &BackboneSpec::new(Architecture::ReferenceConvnet, 32),
        HeadKind::Normalized,
        ids,
        0,
    )?;
    let cfg = PretrainConfig {
        epochs,
        batch_size: 32,
        ..PretrainConfig::default()
    };
    let log = pretrain(&mut model, &base, &PreprocessConfig::toy(), &cfg)?;
    print!("{}", log.to_csv()?);
    if let Some(w) = &log.warning {
        println!("warning: {w}");
    }

    let path = std::env::temp_dir().join("fsf_pretrain_example.fsf");
    checkpoint::save(&model, &path, serde_json::json!({"epochs": epochs}))?;
    let (restored, header) = checkpoint::load(&path)?;
    println!(
        "checkpoint {} ({} tensors, head over {} classes, metadata {})",
        path.display(),
        header.tensors.len(),
        restored.head.num_classes(),
        header.metadata
    );
    Ok(())
}
