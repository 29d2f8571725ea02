//! Serializes a model to bytes, restores it, and checks that eval-mode
//! logits are bitwise identical. Also shows that corrupt files are refused.

use fsf::backbone::{Architecture, BackboneSpec};
use fsf::checkpoint::{from_bytes, to_bytes};
use fsf::classifier::HeadKind;
use fsf::model::Model;
use ndarray::Array4;

fn main() -> fsf::Result<()> {
    let ids: Vec<String> = (0..4).map(|i| format!("class{i}")).collect();
    let model = Model::new(
        &BackboneSpec::new(Architecture::ReferenceConvnet, 32),
        HeadKind::Simple,
        ids,
        7,
    )?;
    let bytes = to_bytes(&model, serde_json::json!({"note": "example"}))?;
    let (restored, header) = from_bytes(&bytes)?;
    println!(
        "{} bytes, {} tensors, backbone {}",
        bytes.len(),
        header.tensors.len(),
        header.backbone.architecture
    );

    let x = Array4::from_shape_fn((2, 3, 32, 32), |(n, c, h, w)| ((n + c + h * w) % 7) as f64 / 7.0);
    let same = model.logits(&x)? == restored.logits(&x)?;
    println!("restored logits identical: {same}");

    let mut corrupt = bytes.clone();
    corrupt.truncate(bytes.len() - 3);
    println!(
        "truncated file: {}",
        from_bytes(&corrupt).err().map(|e| e.to_string()).unwrap_or_default()
    );
    Ok(())
}
