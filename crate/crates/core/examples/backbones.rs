//! Lists the supported backbone architectures with their parameter counts
//! per group, and runs the reference convnet on a random batch.

use fsf::backbone::{build_backbone, Architecture, BackboneSpec};
use fsf::nn::ParamGroup;
use ndarray::Array4;

fn main() -> fsf::Result<()> {
    for arch in Architecture::ALL {
        let backbone = build_backbone(&BackboneSpec::new(arch, 224), 0)?;
        let count = |g: ParamGroup| -> usize {
            backbone
                .params()
                .iter()
                .filter(|p| p.tag.group == g)
                .map(|p| p.len())
                .sum()
        };
        println!(
            "{:<18} features {:>4}  conv {:>10}  bn {:>7}  bn layers {:>3}",
            arch.id(),
            arch.feature_dim(),
            count(ParamGroup::ConvWeight),
            count(ParamGroup::BnAffine),
            backbone.batch_norms().len()
        );
    }

    let backbone = build_backbone(&BackboneSpec::new(Architecture::ReferenceConvnet, 32), 0)?;
    let batch = Array4::from_elem((4, 3, 32, 32), 0.5);
    let feats = backbone.extract_features(&batch)?;
    println!("reference convnet on 4x3x32x32 -> features {:?}", feats.dim());
    Ok(())
}
